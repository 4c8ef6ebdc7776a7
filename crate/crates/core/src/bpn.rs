//! Forward-only toy model of a boundary-proposal gating network.
//!
//! ```text
//! feature maps (C,T,F) x H
//!   -> projection_head -> mean over F -> stack (H,C,T)
//!   -> proposal_network (H,R,C_roi,T)
//!   -> bilstm_forward per (h,r) -> scores (H,R,T)
//!   -> weighted_mask (T) -> gate(posteriors)
//! ```
//!
//! Batch-norm runs in inference mode, spatial dropout is the identity.
//! Weights come from a seed or a JSON manifest; there is no training.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use ndarray::{stack, Array, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, Dimension, IxDyn, RemoveAxis, ShapeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassLabel, FrameTrace};

/// Dilations of the residual depthwise block.
pub const BLOCK_DILATIONS: [usize; 3] = [2, 4, 8];

const BN_EPS: f64 = 1e-5;

/// Gaussian-CDF GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Inference-mode batch normalisation, affine per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub eps: f64,
}

impl BatchNorm {
    /// Exact no-op.
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            mean: Array1::zeros(channels),
            var: Array1::ones(channels),
            eps: 0.0,
        }
    }

    fn random(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let small = Normal::new(0.0, 0.1).expect("valid sd");
        BatchNorm {
            gamma: Array1::from_shape_fn(channels, |_| rng.random_range(0.5..1.5)),
            beta: Array1::from_shape_fn(channels, |_| small.sample(rng)),
            mean: Array1::from_shape_fn(channels, |_| small.sample(rng)),
            var: Array1::from_shape_fn(channels, |_| rng.random_range(0.5..1.5)),
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalises `x` along channel axis `axis`.
    pub fn apply<D: RemoveAxis>(&self, x: &mut Array<f64, D>, axis: usize) {
        for (c, mut lane) in x.axis_iter_mut(Axis(axis)).enumerate() {
            let scale = self.gamma[c] / (self.var[c] + self.eps).sqrt();
            let (m, b) = (self.mean[c], self.beta[c]);
            lane.mapv_inplace(|v| (v - m) * scale + b);
        }
    }
}

fn normal_array<D: Dimension, Sh: ShapeBuilder<Dim = D>>(shape: Sh, sd: f64, rng: &mut ChaCha8Rng) -> Array<f64, D> {
    let dist = Normal::new(0.0, sd).expect("valid sd");
    Array::from_shape_simple_fn(shape, || dist.sample(rng))
}

/// One depthwise layer: per-channel kernel of odd width.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseLayer {
    /// `(C, k)`
    pub kernel: Array2<f64>,
    pub bias: Array1<f64>,
    pub norm: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DilatedBlockWeights {
    pub layers: Vec<DepthwiseLayer>,
}

impl DilatedBlockWeights {
    pub fn zeros(channels: usize, kernel: usize) -> Self {
        let layer = DepthwiseLayer {
            kernel: Array2::zeros((channels, kernel)),
            bias: Array1::zeros(channels),
            norm: BatchNorm::identity(channels),
        };
        DilatedBlockWeights {
            layers: vec![layer; BLOCK_DILATIONS.len()],
        }
    }

    pub fn random(channels: usize, kernel: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = 1.0 / (kernel as f64).sqrt();
        DilatedBlockWeights {
            layers: BLOCK_DILATIONS
                .iter()
                .map(|_| DepthwiseLayer {
                    kernel: normal_array((channels, kernel), sd, &mut rng),
                    bias: normal_array(channels, 0.1, &mut rng),
                    norm: BatchNorm::random(channels, &mut rng),
                })
                .collect(),
        }
    }
}

/// Receptive field of the dilated block for kernel width `k`.
pub fn receptive_field(kernel: usize) -> usize {
    1 + (kernel - 1) * BLOCK_DILATIONS.iter().sum::<usize>()
}

/// Three residual depthwise layers with dilations 2, 4, 8 and zero
/// same-padding: `h <- h + BN(GELU(conv(h)))`.
pub fn dilated_depthwise_block(x: ArrayView2<f64>, w: &DilatedBlockWeights) -> Result<Array2<f64>> {
    const STAGE: &str = "dilated_block";
    let (channels, n) = x.dim();
    if w.layers.len() != BLOCK_DILATIONS.len() {
        return Err(Error::shape(STAGE, format!("expected 3 layers, got {}", w.layers.len())));
    }
    let mut h = x.to_owned();
    for (layer, &dil) in w.layers.iter().zip(&BLOCK_DILATIONS) {
        let (kc, k) = layer.kernel.dim();
        if kc != channels || layer.bias.len() != channels || layer.norm.channels() != channels {
            return Err(Error::shape(STAGE, format!("layer has {kc} channels, input has {channels}")));
        }
        if k % 2 == 0 {
            return Err(Error::shape(STAGE, format!("kernel width {k} must be odd")));
        }
        let half = (k / 2) as isize;
        let mut y = Array2::zeros((channels, n));
        for c in 0..channels {
            let src = h.row(c);
            for t in 0..n {
                let mut acc = layer.bias[c];
                for j in 0..k {
                    let pos = t as isize + (j as isize - half) * dil as isize;
                    if (0..n as isize).contains(&pos) {
                        acc += layer.kernel[[c, j]] * src[pos as usize];
                    }
                }
                y[[c, t]] = gelu(acc);
            }
        }
        layer.norm.apply(&mut y, 0);
        h += &y;
    }
    Ok(h)
}

/// 1x1 convolution, batch-norm and GELU of one projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    /// `(C_out, C_in)`
    pub conv: Array2<f64>,
    pub bias: Array1<f64>,
    pub norm: BatchNorm,
}

/// conv 1x1 -> batch-norm -> GELU -> max-pool `(pool, 1)` over time with
/// replicate padding. Shape `(C,T,F)` is preserved.
pub fn projection_head(fmap: ArrayView3<f64>, w: &ProjectionWeights, pool: usize) -> Result<Array3<f64>> {
    const STAGE: &str = "projection_head";
    let (c_in, n, f) = fmap.dim();
    let (c_out, w_in) = w.conv.dim();
    if w_in != c_in {
        return Err(Error::shape(STAGE, format!("expected {w_in} input channels, got {c_in}")));
    }
    if w.bias.len() != c_out || w.norm.channels() != c_out {
        return Err(Error::shape(STAGE, "bias or norm length differs from output channels"));
    }
    let x = fmap.as_standard_layout();
    let flat = x
        .view()
        .into_shape_with_order((c_in, n * f))
        .map_err(|e| Error::shape(STAGE, e.to_string()))?;
    let mut y = w.conv.dot(&flat);
    y += &w.bias.view().insert_axis(Axis(1));
    let mut y = y
        .into_shape_with_order((c_out, n, f))
        .map_err(|e| Error::shape(STAGE, e.to_string()))?;
    w.norm.apply(&mut y, 0);
    y.mapv_inplace(gelu);

    let half = pool / 2;
    let mut out = Array3::zeros((c_out, n, f));
    for c in 0..c_out {
        for t in 0..n {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(n - 1);
            for k in 0..f {
                out[[c, t, k]] = (lo..=hi).map(|s| y[[c, s, k]]).fold(f64::NEG_INFINITY, f64::max);
            }
        }
    }
    Ok(out)
}

/// Averages a `(C,T,F)` map over frequency.
pub fn collapse_frequency(x: &Array3<f64>) -> Array2<f64> {
    x.mean_axis(Axis(2)).expect("frequency axis is non-empty")
}

/// Transpose convolution over the ROI axis, stride 1, no padding.
#[derive(Debug, Clone, PartialEq)]
pub struct TransposeLayer {
    /// `(C_in, C_out, k)`
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
    pub norm: BatchNorm,
}

/// `(R_in, C_in, T) -> (R_in + k - 1, C_out, T)`, then GELU and batch-norm.
fn transpose_roi(x: &Array3<f64>, layer: &TransposeLayer) -> Result<Array3<f64>> {
    const STAGE: &str = "proposal_network";
    let (r_in, c_in, n) = x.dim();
    let (w_in, c_out, k) = layer.weight.dim();
    if w_in != c_in {
        return Err(Error::shape(STAGE, format!("expected {w_in} channels, got {c_in}")));
    }
    if layer.bias.len() != c_out || layer.norm.channels() != c_out {
        return Err(Error::shape(STAGE, "bias or norm length differs from output channels"));
    }
    let mut out = Array3::zeros((r_in + k - 1, c_out, n));
    for j in 0..k {
        let wj = layer.weight.index_axis(Axis(2), j).reversed_axes();
        for r in 0..r_in {
            let contrib = wj.dot(&x.index_axis(Axis(0), r));
            let mut dst = out.index_axis_mut(Axis(0), r + j);
            dst += &contrib;
        }
    }
    out += &layer.bias.view().insert_axis(Axis(1));
    out.mapv_inplace(gelu);
    layer.norm.apply(&mut out, 1);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalWeights {
    pub layers: Vec<TransposeLayer>,
}

/// Grows a unit ROI axis per head: `(H,C,T) -> (H,R,C_roi,T)`.
pub fn proposal_network(stacked: ArrayView3<f64>, w: &ProposalWeights) -> Result<Array4<f64>> {
    let mut heads = Vec::with_capacity(stacked.len_of(Axis(0)));
    for head in stacked.axis_iter(Axis(0)) {
        let mut x = head.insert_axis(Axis(0)).to_owned();
        for layer in &w.layers {
            x = transpose_roi(&x, layer)?;
        }
        heads.push(x);
    }
    let views: Vec<_> = heads.iter().map(|h| h.view()).collect();
    stack(Axis(0), &views).map_err(|e| Error::shape("proposal_network", e.to_string()))
}

/// Gate order: input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// `(4h, in)`
    pub w_ih: Array2<f64>,
    /// `(4h, h)`
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LstmWeights {
    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    fn zeros(input: usize, hidden: usize) -> Self {
        LstmWeights {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    fn random(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        LstmWeights {
            w_ih: normal_array((4 * hidden, input), 1.0 / (input as f64).sqrt(), rng),
            w_hh: normal_array((4 * hidden, hidden), 1.0 / (hidden as f64).sqrt(), rng),
            bias: normal_array(4 * hidden, 0.1, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmWeights {
    pub forward: LstmWeights,
    pub backward: LstmWeights,
    /// `2h` output projection, forward half first.
    pub proj: Array1<f64>,
    pub proj_bias: f64,
}

impl BiLstmWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiLstmWeights {
            forward: LstmWeights::zeros(input, hidden),
            backward: LstmWeights::zeros(input, hidden),
            proj: Array1::zeros(2 * hidden),
            proj_bias: 0.0,
        }
    }

    pub fn random(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        BiLstmWeights {
            forward: LstmWeights::random(input, hidden, rng),
            backward: LstmWeights::random(input, hidden, rng),
            proj: normal_array(2 * hidden, 1.0 / (2.0 * hidden as f64).sqrt(), rng),
            proj_bias: 0.0,
        }
    }
}

fn lstm_pass(x: ArrayView2<f64>, w: &LstmWeights, reverse: bool) -> Array2<f64> {
    let hidden = w.hidden();
    let n = x.ncols();
    let pre = w.w_ih.dot(&x) + w.bias.view().insert_axis(Axis(1));
    let mut h = Array1::<f64>::zeros(hidden);
    let mut c = Array1::<f64>::zeros(hidden);
    let mut out = Array2::zeros((hidden, n));
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for t in order {
        let g = &pre.column(t) + &w.w_hh.dot(&h);
        for u in 0..hidden {
            let i = sigmoid(g[u]);
            let f = sigmoid(g[hidden + u]);
            let cell = g[2 * hidden + u].tanh();
            let o = sigmoid(g[3 * hidden + u]);
            c[u] = f * c[u] + i * cell;
            h[u] = o * c[u].tanh();
        }
        out.column_mut(t).assign(&h);
    }
    out
}

/// Bidirectional LSTM over `(C,T)`; returns one sigmoid score per step.
pub fn bilstm_forward(roi_seq: ArrayView2<f64>, w: &BiLstmWeights) -> Result<Vec<f64>> {
    const STAGE: &str = "bilstm";
    let input = roi_seq.nrows();
    let hidden = w.forward.hidden();
    for dir in [&w.forward, &w.backward] {
        if dir.w_ih.dim() != (4 * hidden, input)
            || dir.w_hh.dim() != (4 * hidden, hidden)
            || dir.bias.len() != 4 * hidden
        {
            return Err(Error::shape(STAGE, format!("weights do not fit input {input}, hidden {hidden}")));
        }
    }
    if w.proj.len() != 2 * hidden {
        return Err(Error::shape(STAGE, format!("projection length {} != {}", w.proj.len(), 2 * hidden)));
    }
    let hf = lstm_pass(roi_seq, &w.forward, false);
    let hb = lstm_pass(roi_seq, &w.backward, true);
    let pf = w.proj.slice(ndarray::s![..hidden]);
    let pb = w.proj.slice(ndarray::s![hidden..]);
    Ok((0..roi_seq.ncols())
        .map(|t| sigmoid(pf.dot(&hf.column(t)) + pb.dot(&hb.column(t)) + w.proj_bias))
        .collect())
}

/// How ROI scores are pooled into the mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPooling {
    /// One softmax over all `H*R` weights.
    #[default]
    Joint,
    /// Softmax over the `R` weights of each head, then a plain mean over heads.
    PerHead,
}

/// Convex combination of ROI scores `(H,R,T)` with softmax-normalised
/// `logits` of length `H*R` (head-major).
pub fn weighted_mask(scores: ArrayView3<f64>, logits: &[f64], pooling: MaskPooling) -> Result<Vec<f64>> {
    let (heads, rois, n) = scores.dim();
    if logits.len() != heads * rois {
        return Err(Error::shape(
            "weighted_mask",
            format!("{} weights for {heads}x{rois} scores", logits.len()),
        ));
    }
    let weights = match pooling {
        MaskPooling::Joint => softmax(logits),
        MaskPooling::PerHead => logits
            .chunks(rois)
            .flat_map(|c| softmax(c).into_iter().map(|w| w / heads as f64))
            .collect(),
    };
    let mut mask = vec![0.0; n];
    for (i, w) in weights.iter().enumerate() {
        let row = scores.slice(ndarray::s![i / rois, i % rois, ..]);
        for (m, s) in mask.iter_mut().zip(row) {
            *m += w * s;
        }
    }
    Ok(mask)
}

fn check_mask(mask: &[f64], n: usize) -> Result<()> {
    if mask.len() != n {
        return Err(Error::shape("gate", format!("mask length {} != {n} frames", mask.len())));
    }
    if mask.iter().any(|m| !(0.0..=1.0).contains(m)) {
        return Err(Error::Domain("mask values must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Multiplies every class row by the mask.
pub fn gate(posteriors: &FrameTrace, mask: &[f64]) -> Result<FrameTrace> {
    check_mask(mask, posteriors.n_frames())?;
    posteriors.with_rows(
        posteriors
            .rows()
            .iter()
            .map(|row| row.iter().zip(mask).map(|(p, m)| p * m).collect())
            .collect(),
    )
}

/// One mask per class, in trace class order.
pub fn gate_per_class(posteriors: &FrameTrace, masks: &[Vec<f64>]) -> Result<FrameTrace> {
    if masks.len() != posteriors.classes().len() {
        return Err(Error::shape(
            "gate",
            format!("{} masks for {} classes", masks.len(), posteriors.classes().len()),
        ));
    }
    let mut rows = Vec::with_capacity(masks.len());
    for (row, mask) in posteriors.rows().iter().zip(masks) {
        check_mask(mask, posteriors.n_frames())?;
        rows.push(row.iter().zip(mask).map(|(p, m)| p * m).collect());
    }
    posteriors.with_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpnConfig {
    pub n_heads: usize,
    pub in_channels: usize,
    pub roi_channels: usize,
    /// Transpose-conv kernels along the ROI axis.
    pub roi_kernels: [usize; 2],
    pub pool_kernel: usize,
    pub lstm_hidden: usize,
    #[serde(default)]
    pub mask_pooling: MaskPooling,
}

impl Default for BpnConfig {
    fn default() -> Self {
        BpnConfig {
            n_heads: 3,
            in_channels: 128,
            roi_channels: 64,
            roi_kernels: [4, 5],
            pool_kernel: 3,
            lstm_hidden: 16,
            mask_pooling: MaskPooling::Joint,
        }
    }
}

impl BpnConfig {
    /// Single-ROI variant.
    pub fn single(n_heads: usize) -> Self {
        BpnConfig {
            n_heads,
            roi_kernels: [1, 1],
            ..Self::default()
        }
    }

    pub fn n_rois(&self) -> usize {
        1 + self.roi_kernels.iter().map(|k| k - 1).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.n_heads, self.in_channels, self.roi_channels, self.lstm_hidden];
        if sizes.contains(&0) || self.roi_kernels.contains(&0) {
            return Err(Error::param("BPN sizes and kernels must be positive"));
        }
        if self.pool_kernel.is_multiple_of(2) {
            return Err(Error::param(format!("pool kernel {} must be odd", self.pool_kernel)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpnWeights {
    pub heads: Vec<ProjectionWeights>,
    pub proposal: ProposalWeights,
    pub lstm: BiLstmWeights,
    /// Head-major `H*R` mask logits.
    pub mask_logits: Vec<f64>,
}

impl BpnWeights {
    pub fn random(cfg: &BpnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.in_channels;
        let heads = (0..cfg.n_heads)
            .map(|_| ProjectionWeights {
                conv: normal_array((c, c), 1.0 / (c as f64).sqrt(), &mut rng),
                bias: normal_array(c, 0.1, &mut rng),
                norm: BatchNorm::random(c, &mut rng),
            })
            .collect();
        let dims = [(c, c, cfg.roi_kernels[0]), (c, cfg.roi_channels, cfg.roi_kernels[1])];
        let proposal = ProposalWeights {
            layers: dims
                .iter()
                .map(|&(i, o, k)| TransposeLayer {
                    weight: normal_array((i, o, k), 1.0 / ((i * k) as f64).sqrt(), &mut rng),
                    bias: normal_array(o, 0.1, &mut rng),
                    norm: BatchNorm::random(o, &mut rng),
                })
                .collect(),
        };
        let lstm = BiLstmWeights::random(cfg.roi_channels, cfg.lstm_hidden, &mut rng);
        let mask_logits = (0..cfg.n_heads * cfg.n_rois())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Ok(BpnWeights {
            heads,
            proposal,
            lstm,
            mask_logits,
        })
    }

    /// Checks every tensor against the shapes implied by `cfg`.
    pub fn validate(&self, cfg: &BpnConfig) -> Result<()> {
        WeightManifest::from_weights(self).expect_shapes(cfg)
    }
}

/// Output of [`bpn_forward`] with the intermediate mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BpnOutput {
    pub gated: FrameTrace,
    pub mask: Vec<f64>,
    /// `(H,R,T)`
    pub roi_scores: Array3<f64>,
}

/// Full forward pass. `fmaps` holds one `(C,T,F)` map per head.
pub fn bpn_forward(
    fmaps: &[Array3<f64>],
    posteriors: &FrameTrace,
    cfg: &BpnConfig,
    weights: &BpnWeights,
) -> Result<BpnOutput> {
    cfg.validate()?;
    weights.validate(cfg)?;
    let n = posteriors.n_frames();
    if fmaps.len() != cfg.n_heads {
        return Err(Error::shape("input", format!("{} feature maps for {} heads", fmaps.len(), cfg.n_heads)));
    }
    if let Some(m) = fmaps.iter().find(|m| m.len_of(Axis(1)) != n || m.len_of(Axis(2)) == 0) {
        return Err(Error::shape(
            "input",
            format!("feature map shape {:?} does not match {n} frames", m.dim()),
        ));
    }

    let projected = fmaps
        .iter()
        .zip(&weights.heads)
        .map(|(m, w)| projection_head(m.view(), w, cfg.pool_kernel).map(|p| collapse_frequency(&p)))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = projected.iter().map(|p| p.view()).collect();
    let stacked = stack(Axis(0), &views).map_err(|e| Error::shape("stack", e.to_string()))?;
    let proposals = proposal_network(stacked.view(), &weights.proposal)?;

    let (h, r) = (proposals.len_of(Axis(0)), proposals.len_of(Axis(1)));
    let mut roi_scores = Array3::zeros((h, r, n));
    for hi in 0..h {
        for ri in 0..r {
            let seq = proposals.slice(ndarray::s![hi, ri, .., ..]);
            let scores = bilstm_forward(seq, &weights.lstm)?;
            roi_scores
                .slice_mut(ndarray::s![hi, ri, ..])
                .assign(&Array1::from(scores));
        }
    }
    let mask = weighted_mask(roi_scores.view(), &weights.mask_logits, cfg.mask_pooling)?;
    let gated = gate(posteriors, &mask)?;
    Ok(BpnOutput {
        gated,
        mask,
        roi_scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::param(format!("need alpha in (0, 1] and gamma >= 0, got {self:?}")));
        }
        Ok(())
    }
}

pub const FOCAL_EPS: f64 = 1e-7;

/// Focal loss `-alpha (1 - p_t)^gamma ln p_t` and its derivative in `p`.
/// `p` is clamped to `[1e-7, 1 - 1e-7]`.
pub fn focal_loss(p: f64, y: bool, params: FocalParams) -> Result<(f64, f64)> {
    params.validate()?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
    let FocalParams { alpha, gamma } = params;
    // q is the probability of the wrong class
    let (pt, q) = if y { (p, 1.0 - p) } else { (1.0 - p, p) };
    let loss = -alpha * q.powf(gamma) * pt.ln();
    let mut dpt = -q.powf(gamma) / pt;
    if gamma != 0.0 {
        dpt += gamma * q.powf(gamma - 1.0) * pt.ln();
    }
    let grad = if y { alpha * dpt } else { -alpha * dpt };
    Ok((loss.max(0.0), grad))
}

/// Named tensor in a weight manifest; `data` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightManifest {
    pub tensors: Vec<NamedTensor>,
}

struct Reader<'a> {
    by_name: BTreeMap<&'a str, &'a NamedTensor>,
}

impl<'a> Reader<'a> {
    fn new(m: &'a WeightManifest) -> Result<Self> {
        let mut by_name = BTreeMap::new();
        for t in &m.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::shape(
                    "weights",
                    format!("tensor '{}' has {} values for shape {:?}", t.name, t.data.len(), t.shape),
                ));
            }
            if by_name.insert(t.name.as_str(), t).is_some() {
                return Err(Error::Config(format!("duplicate tensor '{}'", t.name)));
            }
        }
        Ok(Reader { by_name })
    }

    fn take<D: Dimension>(&mut self, name: &str, shape: &[usize]) -> Result<Array<f64, D>> {
        let t = self
            .by_name
            .remove(name)
            .ok_or_else(|| Error::Config(format!("missing tensor '{name}'")))?;
        if t.shape != shape {
            return Err(Error::shape(
                "weights",
                format!("tensor '{name}' has shape {:?}, expected {shape:?}", t.shape),
            ));
        }
        Array::from_shape_vec(IxDyn(shape), t.data.clone())
            .and_then(|a| a.into_dimensionality::<D>())
            .map_err(|e| Error::shape("weights", format!("tensor '{name}': {e}")))
    }

    fn norm(&mut self, prefix: &str, c: usize) -> Result<BatchNorm> {
        Ok(BatchNorm {
            gamma: self.take(&format!("{prefix}.gamma"), &[c])?,
            beta: self.take(&format!("{prefix}.beta"), &[c])?,
            mean: self.take(&format!("{prefix}.mean"), &[c])?,
            var: self.take(&format!("{prefix}.var"), &[c])?,
            eps: self.take::<ndarray::Ix1>(&format!("{prefix}.eps"), &[1])?[0],
        })
    }

    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize) -> Result<LstmWeights> {
        Ok(LstmWeights {
            w_ih: self.take(&format!("{prefix}.w_ih"), &[4 * hidden, input])?,
            w_hh: self.take(&format!("{prefix}.w_hh"), &[4 * hidden, hidden])?,
            bias: self.take(&format!("{prefix}.bias"), &[4 * hidden])?,
        })
    }

    fn finish(self) -> Result<()> {
        match self.by_name.keys().next() {
            Some(name) => Err(Error::Config(format!("unexpected tensor '{name}'"))),
            None => Ok(()),
        }
    }
}

struct Writer(Vec<NamedTensor>);

impl Writer {
    fn put<D: Dimension>(&mut self, name: String, a: &Array<f64, D>) {
        self.0.push(NamedTensor {
            name,
            shape: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        });
    }

    fn norm(&mut self, prefix: &str, n: &BatchNorm) {
        self.put(format!("{prefix}.gamma"), &n.gamma);
        self.put(format!("{prefix}.beta"), &n.beta);
        self.put(format!("{prefix}.mean"), &n.mean);
        self.put(format!("{prefix}.var"), &n.var);
        self.put(format!("{prefix}.eps"), &Array1::from(vec![n.eps]));
    }

    fn lstm(&mut self, prefix: &str, w: &LstmWeights) {
        self.put(format!("{prefix}.w_ih"), &w.w_ih);
        self.put(format!("{prefix}.w_hh"), &w.w_hh);
        self.put(format!("{prefix}.bias"), &w.bias);
    }
}

impl WeightManifest {
    pub fn from_weights(w: &BpnWeights) -> Self {
        let mut out = Writer(Vec::new());
        for (h, head) in w.heads.iter().enumerate() {
            out.put(format!("head.{h}.conv.weight"), &head.conv);
            out.put(format!("head.{h}.conv.bias"), &head.bias);
            out.norm(&format!("head.{h}.bn"), &head.norm);
        }
        for (i, layer) in w.proposal.layers.iter().enumerate() {
            out.put(format!("proposal.{i}.weight"), &layer.weight);
            out.put(format!("proposal.{i}.bias"), &layer.bias);
            out.norm(&format!("proposal.{i}.bn"), &layer.norm);
        }
        out.lstm("lstm.forward", &w.lstm.forward);
        out.lstm("lstm.backward", &w.lstm.backward);
        out.put("lstm.proj.weight".into(), &w.lstm.proj);
        out.put("lstm.proj.bias".into(), &Array1::from(vec![w.lstm.proj_bias]));
        out.put("mask.logits".into(), &Array1::from(w.mask_logits.clone()));
        WeightManifest { tensors: out.0 }
    }

    /// Builds weights, validating every shape against `cfg`.
    pub fn to_weights(&self, cfg: &BpnConfig) -> Result<BpnWeights> {
        cfg.validate()?;
        let mut r = Reader::new(self)?;
        let c = cfg.in_channels;
        let heads = (0..cfg.n_heads)
            .map(|h| {
                Ok(ProjectionWeights {
                    conv: r.take(&format!("head.{h}.conv.weight"), &[c, c])?,
                    bias: r.take(&format!("head.{h}.conv.bias"), &[c])?,
                    norm: r.norm(&format!("head.{h}.bn"), c)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dims = [(c, c, cfg.roi_kernels[0]), (c, cfg.roi_channels, cfg.roi_kernels[1])];
        let layers = dims
            .iter()
            .enumerate()
            .map(|(i, &(ci, co, k))| {
                Ok(TransposeLayer {
                    weight: r.take(&format!("proposal.{i}.weight"), &[ci, co, k])?,
                    bias: r.take(&format!("proposal.{i}.bias"), &[co])?,
                    norm: r.norm(&format!("proposal.{i}.bn"), co)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let hidden = cfg.lstm_hidden;
        let lstm = BiLstmWeights {
            forward: r.lstm("lstm.forward", cfg.roi_channels, hidden)?,
            backward: r.lstm("lstm.backward", cfg.roi_channels, hidden)?,
            proj: r.take("lstm.proj.weight", &[2 * hidden])?,
            proj_bias: r.take::<ndarray::Ix1>("lstm.proj.bias", &[1])?[0],
        };
        let mask_logits = r
            .take::<ndarray::Ix1>("mask.logits", &[cfg.n_heads * cfg.n_rois()])?
            .to_vec();
        r.finish()?;
        Ok(BpnWeights {
            heads,
            proposal: ProposalWeights { layers },
            lstm,
            mask_logits,
        })
    }

    fn expect_shapes(&self, cfg: &BpnConfig) -> Result<()> {
        self.to_weights(cfg).map(|_| ())
    }
}

/// Stand-in for backbone feature maps: seeded standard-normal noise of
/// shape `(C,T,F)` per head.
pub fn fixture_feature_maps(cfg: &BpnConfig, n_frames: usize, n_freq: usize, seed: u64) -> Vec<Array3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.n_heads)
        .map(|_| normal_array((cfg.in_channels, n_frames, n_freq), 1.0, &mut rng))
        .collect()
}

/// Stand-in for backbone posteriors: uniform probabilities for the three
/// default classes at 10 fps.
pub fn fixture_posteriors(n_frames: usize, seed: u64) -> Result<FrameTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = ClassLabel::defaults();
    let rows = classes
        .iter()
        .map(|_| (0..n_frames).map(|_| rng.random::<f64>()).collect())
        .collect();
    FrameTrace::new(10.0, 0.0, classes, rows)
}
