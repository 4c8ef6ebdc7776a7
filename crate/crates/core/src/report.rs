//! JSON report of a cross-validated search.
//!
//! Every float is rounded to six decimals and maps are key-ordered, so
//! identical inputs give byte-identical reports. Timing lives elsewhere.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;
use crate::evalkit::EvalReport;
use crate::hypersearch::{
    event_grid, frame_grid, BackwardStage2, CrossValidation, SearchSpace, Strategy, TurnResult,
};
use crate::types::ClassLabel;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridSize {
    pub frame: usize,
    pub event: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchReport<'a> {
    pub schema: &'static str,
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub strategy: Strategy,
    pub match_threshold: f64,
    pub backward_stage2: BackwardStage2,
    pub grid_sizes: BTreeMap<ClassLabel, GridSize>,
    pub turns: &'a [TurnResult],
    #[serde(rename = "final")]
    pub final_report: &'a EvalReport,
}

impl<'a> SearchReport<'a> {
    pub fn new(
        cv: &'a CrossValidation,
        space: &SearchSpace,
        match_threshold: f64,
        backward_stage2: BackwardStage2,
        seed: Option<u64>,
    ) -> Result<Self> {
        let grid_sizes = space
            .classes()?
            .into_iter()
            .map(|c| {
                let size = GridSize {
                    frame: frame_grid(&space.frame[&c]).len(),
                    event: event_grid(&space.event[&c]).len(),
                };
                (c, size)
            })
            .collect();
        Ok(SearchReport {
            schema: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            strategy: cv.strategy,
            match_threshold,
            backward_stage2,
            grid_sizes,
            turns: &cv.turns,
            final_report: &cv.final_report,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }
}

/// Rounds every float in `v` to six decimals.
pub fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or_default();
            let r = (x * 1e6).round() / 1e6;
            // -0.0 would print as "-0.0"
            let r = if r == 0.0 { 0.0 } else { r };
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with floats rounded to six decimals and a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rounding_is_applied_recursively() {
        let mut v = json!({"a": 0.123456789, "b": [1.0000004, -0.0000001], "c": 3});
        round_floats(&mut v);
        assert_eq!(v, json!({"a": 0.123457, "b": [1.0, 0.0], "c": 3}));
    }

    #[test]
    fn canonical_json_ends_with_newline() {
        let s = to_canonical_json(&json!({"z": 1, "a": 2})).unwrap();
        assert!(s.ends_with("}\n"));
        assert!(s.find("\"a\"").unwrap() < s.find("\"z\"").unwrap());
    }
}
