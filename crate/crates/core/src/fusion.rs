//! Forward-only kernels for injecting the temporal token into the detector:
//! attentive pooling of the cached clip features, FiLM modulation of FPN
//! maps, and residual context fusion of ROI features.
//!
//! Tensors store `f32`; reductions accumulate in `f64` and round once on
//! output.

use std::collections::BTreeMap;

use crate::error::{Result, VistaError};

/// Dense row-major `f32` array.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| VistaError::Tensor(format!("shape {shape:?} overflows")))?;
        if expected != data.len() {
            return Err(VistaError::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VistaError::Tensor(format!("non-finite value at flat index {i}")));
        }
        Ok(FeatureTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        FeatureTensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(VistaError::Dimension(format!(
                "{what}: expected rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

/// Row-major matrix view used by the kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: FeatureTensor,
    pub bias: Option<FeatureTensor>,
}

impl Linear {
    pub fn new(weight: FeatureTensor, bias: Option<FeatureTensor>) -> Result<Self> {
        weight.expect_rank(2, "linear weight")?;
        if let Some(b) = &bias {
            if b.shape() != [weight.shape()[1]] {
                return Err(VistaError::Dimension(format!(
                    "bias shape {:?} does not match weight columns {}",
                    b.shape(),
                    weight.shape()[1]
                )));
            }
        }
        Ok(Linear { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        affine(&self.weight, self.bias.as_ref(), x)
    }

    fn check_input(&self, len: usize, what: &str) -> Result<()> {
        if len != self.in_dim() {
            return Err(VistaError::Dimension(format!(
                "{what}: input length {len} does not match weight rows {}",
                self.in_dim()
            )));
        }
        Ok(())
    }
}

/// `x · W (+ b)` in f64.
fn affine(weight: &FeatureTensor, bias: Option<&FeatureTensor>, x: &[f64]) -> Vec<f64> {
    let cols = weight.shape()[1];
    debug_assert_eq!(x.len(), weight.shape()[0]);
    let mut out: Vec<f64> = match bias {
        Some(b) => b.data().iter().map(|&v| v as f64).collect(),
        None => vec![0.0; cols],
    };
    for (row, &xi) in weight.data().chunks_exact(cols.max(1)).zip(x) {
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij as f64;
        }
    }
    out
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn check_finite(v: &[f32], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(VistaError::Tensor(format!("{what}: non-finite input")))
    }
}

/// Single-query, single-head attention pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    /// `D_in × D_att`
    pub key_proj: FeatureTensor,
    /// `D_in × D_out`
    pub value_proj: FeatureTensor,
    /// `D_att`
    pub query: FeatureTensor,
}

impl ProbeParams {
    pub fn new(key_proj: FeatureTensor, value_proj: FeatureTensor, query: FeatureTensor) -> Result<Self> {
        key_proj.expect_rank(2, "probe key_proj")?;
        value_proj.expect_rank(2, "probe value_proj")?;
        query.expect_rank(1, "probe query")?;
        if key_proj.shape()[0] != value_proj.shape()[0] {
            return Err(VistaError::Dimension(format!(
                "probe: key_proj rows {} != value_proj rows {}",
                key_proj.shape()[0],
                value_proj.shape()[0]
            )));
        }
        if key_proj.shape()[1] != query.shape()[0] {
            return Err(VistaError::Dimension(format!(
                "probe: key_proj columns {} != query length {}",
                key_proj.shape()[1],
                query.shape()[0]
            )));
        }
        Ok(ProbeParams {
            key_proj,
            value_proj,
            query,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.key_proj.shape()[0]
    }

    pub fn att_dim(&self) -> usize {
        self.key_proj.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.value_proj.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutput {
    pub token: Vec<f32>,
    pub weights: Vec<f32>,
}

/// Pools a `T × D_in` sequence into one `D_out` token.
///
/// `weights = softmax_t((seq[t]·K)·q / sqrt(D_att))`,
/// `token = Σ_t weights[t] · (seq[t]·V)`. No positional term, so the result
/// does not depend on row order.
pub fn attentive_probe(seq: &FeatureTensor, params: &ProbeParams) -> Result<ProbeOutput> {
    seq.expect_rank(2, "probe sequence")?;
    let (t_len, d_in) = (seq.shape()[0], seq.shape()[1]);
    if t_len == 0 {
        return Err(VistaError::Dimension("probe sequence must have at least one row".into()));
    }
    if d_in != params.in_dim() {
        return Err(VistaError::Dimension(format!(
            "probe: sequence width {d_in} != key_proj rows {}",
            params.in_dim()
        )));
    }
    check_finite(seq.data(), "probe sequence")?;

    let query = widen(params.query.data());
    let scale = 1.0 / (params.att_dim() as f64).sqrt();

    let mut logits = Vec::with_capacity(t_len);
    let mut values = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let x = widen(seq.row(t));
        let k = affine(&params.key_proj, None, &x);
        logits.push(k.iter().zip(&query).map(|(a, b)| a * b).sum::<f64>() * scale);
        values.push(affine(&params.value_proj, None, &x));
    }
    let weights = softmax_f64(&logits);
    let mut token = vec![0.0f64; params.out_dim()];
    for (w, v) in weights.iter().zip(&values) {
        for (o, x) in token.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(ProbeOutput {
        token: token.into_iter().map(|v| v as f32).collect(),
        weights: weights.into_iter().map(|v| v as f32).collect(),
    })
}

pub(crate) fn softmax_f64(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Token-conditioned per-channel scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmParams {
    /// `D_token × C` plus `C` bias.
    pub gamma: Linear,
    /// `D_token × C` plus `C` bias.
    pub beta: Linear,
}

impl FilmParams {
    pub fn new(gamma: Linear, beta: Linear) -> Result<Self> {
        if gamma.weight.shape() != beta.weight.shape() {
            return Err(VistaError::Dimension(format!(
                "film: gamma projection {:?} != beta projection {:?}",
                gamma.weight.shape(),
                beta.weight.shape()
            )));
        }
        Ok(FilmParams { gamma, beta })
    }

    /// Parameters with gamma ≡ 1 and beta ≡ 0 regardless of the token.
    pub fn identity(token_dim: usize, channels: usize) -> Self {
        let ones = FeatureTensor::new(vec![channels], vec![1.0; channels]).expect("shape");
        FilmParams {
            gamma: Linear {
                weight: FeatureTensor::zeros(vec![token_dim, channels]),
                bias: Some(ones),
            },
            beta: Linear {
                weight: FeatureTensor::zeros(vec![token_dim, channels]),
                bias: Some(FeatureTensor::zeros(vec![channels])),
            },
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.out_dim()
    }

    pub fn token_dim(&self) -> usize {
        self.gamma.in_dim()
    }

    /// Per-channel `(gamma, beta)` for a token.
    pub fn scale_shift(&self, token: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        self.gamma.check_input(token.len(), "film token")?;
        check_finite(token, "film token")?;
        let t = widen(token);
        let narrow = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
        Ok((narrow(self.gamma.apply(&t)), narrow(self.beta.apply(&t))))
    }
}

/// `out[c,h,w] = gamma[c] · x[c,h,w] + beta[c]`.
pub fn film_modulate(x: &FeatureTensor, token: &[f32], params: &FilmParams) -> Result<FeatureTensor> {
    x.expect_rank(3, "film input")?;
    let channels = x.shape()[0];
    if channels != params.channels() {
        return Err(VistaError::Dimension(format!(
            "film: input has {channels} channels, parameters have {}",
            params.channels()
        )));
    }
    check_finite(x.data(), "film input")?;
    let (gamma, beta) = params.scale_shift(token)?;
    let plane = x.shape()[1] * x.shape()[2];
    let mut data = Vec::with_capacity(x.len());
    for c in 0..channels {
        let (g, b) = (gamma[c] as f64, beta[c] as f64);
        data.extend(
            x.data()[c * plane..(c + 1) * plane]
                .iter()
                .map(|&v| (g * v as f64 + b) as f32),
        );
    }
    Ok(FeatureTensor {
        shape: x.shape().to_vec(),
        data,
    })
}

/// Two-layer ReLU MLP over `[roi, project(token)]`, added back onto the ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMlpParams {
    /// `D_token × D_proj` plus bias.
    pub token_proj: Linear,
    /// `(D_roi + D_proj) × H` plus bias.
    pub layer1: Linear,
    /// `H × D_roi` plus bias.
    pub layer2: Linear,
}

impl ContextMlpParams {
    pub fn new(token_proj: Linear, layer1: Linear, layer2: Linear) -> Result<Self> {
        let roi_dim = layer2.out_dim();
        if layer1.in_dim() != roi_dim + token_proj.out_dim() {
            return Err(VistaError::Dimension(format!(
                "context mlp: layer1 rows {} != roi {} + projected token {}",
                layer1.in_dim(),
                roi_dim,
                token_proj.out_dim()
            )));
        }
        if layer2.in_dim() != layer1.out_dim() || layer1.out_dim() == 0 {
            return Err(VistaError::Dimension(format!(
                "context mlp: hidden width mismatch ({} vs {})",
                layer1.out_dim(),
                layer2.in_dim()
            )));
        }
        Ok(ContextMlpParams {
            token_proj,
            layer1,
            layer2,
        })
    }

    pub fn roi_dim(&self) -> usize {
        self.layer2.out_dim()
    }

    pub fn token_dim(&self) -> usize {
        self.token_proj.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layer1.out_dim()
    }

    /// The residual added to `roi`.
    pub fn residual(&self, roi: &[f32], token: &[f32]) -> Result<Vec<f64>> {
        if roi.len() != self.roi_dim() {
            return Err(VistaError::Dimension(format!(
                "context mlp: roi length {} != {}",
                roi.len(),
                self.roi_dim()
            )));
        }
        self.token_proj.check_input(token.len(), "context token")?;
        check_finite(roi, "roi feature")?;
        check_finite(token, "context token")?;
        let projected = self.token_proj.apply(&widen(token));
        let mut joined = widen(roi);
        joined.extend(projected);
        let hidden: Vec<f64> = self.layer1.apply(&joined).into_iter().map(|h| h.max(0.0)).collect();
        Ok(self.layer2.apply(&hidden))
    }
}

/// `roi + layer2(relu(layer1([roi, token·P + p])))`.
pub fn roi_context_fuse(roi: &[f32], token: &[f32], params: &ContextMlpParams) -> Result<Vec<f32>> {
    let residual = params.residual(roi, token)?;
    Ok(roi.iter().zip(residual).map(|(&r, d)| r + d as f32).collect())
}

// Names used for parameter bundles inside a tensor container.
pub const PROBE_KEY: &str = "probe.key_proj";
pub const PROBE_VALUE: &str = "probe.value_proj";
pub const PROBE_QUERY: &str = "probe.query";
pub const FILM_GAMMA: &str = "film.gamma_proj";
pub const FILM_GAMMA_BIAS: &str = "film.gamma_bias";
pub const FILM_BETA: &str = "film.beta_proj";
pub const FILM_BETA_BIAS: &str = "film.beta_bias";
pub const CTX_TOKEN: &str = "context.token_proj";
pub const CTX_TOKEN_BIAS: &str = "context.token_bias";
pub const CTX_LAYER1: &str = "context.layer1";
pub const CTX_LAYER1_BIAS: &str = "context.layer1_bias";
pub const CTX_LAYER2: &str = "context.layer2";
pub const CTX_LAYER2_BIAS: &str = "context.layer2_bias";

/// Looks up every name in `names`, reporting all missing ones at once.
pub(crate) fn take_named<'a>(
    map: &'a BTreeMap<String, FeatureTensor>,
    names: &[&str],
    context: &str,
) -> Result<Vec<&'a FeatureTensor>> {
    let missing: Vec<String> = names
        .iter()
        .filter(|n| !map.contains_key(**n))
        .map(|n| format!("missing tensor {n:?}"))
        .collect();
    if !missing.is_empty() {
        return Err(VistaError::Validation {
            context: context.to_string(),
            problems: missing,
        });
    }
    Ok(names.iter().map(|n| &map[*n]).collect())
}

impl ProbeParams {
    pub fn from_bundle(map: &BTreeMap<String, FeatureTensor>) -> Result<Self> {
        let t = take_named(map, &[PROBE_KEY, PROBE_VALUE, PROBE_QUERY], "probe parameters")?;
        ProbeParams::new(t[0].clone(), t[1].clone(), t[2].clone())
    }

    pub fn into_bundle(self, map: &mut BTreeMap<String, FeatureTensor>) {
        map.insert(PROBE_KEY.into(), self.key_proj);
        map.insert(PROBE_VALUE.into(), self.value_proj);
        map.insert(PROBE_QUERY.into(), self.query);
    }
}

impl FilmParams {
    pub fn from_bundle(map: &BTreeMap<String, FeatureTensor>) -> Result<Self> {
        let t = take_named(
            map,
            &[FILM_GAMMA, FILM_GAMMA_BIAS, FILM_BETA, FILM_BETA_BIAS],
            "film parameters",
        )?;
        FilmParams::new(
            Linear::new(t[0].clone(), Some(t[1].clone()))?,
            Linear::new(t[2].clone(), Some(t[3].clone()))?,
        )
    }

    pub fn into_bundle(self, map: &mut BTreeMap<String, FeatureTensor>) {
        map.insert(FILM_GAMMA.into(), self.gamma.weight);
        map.insert(FILM_BETA.into(), self.beta.weight);
        let channels = map[FILM_GAMMA].shape()[1];
        map.insert(
            FILM_GAMMA_BIAS.into(),
            self.gamma.bias.unwrap_or_else(|| FeatureTensor::zeros(vec![channels])),
        );
        map.insert(
            FILM_BETA_BIAS.into(),
            self.beta.bias.unwrap_or_else(|| FeatureTensor::zeros(vec![channels])),
        );
    }
}

impl ContextMlpParams {
    pub fn from_bundle(map: &BTreeMap<String, FeatureTensor>) -> Result<Self> {
        let t = take_named(
            map,
            &[
                CTX_TOKEN,
                CTX_TOKEN_BIAS,
                CTX_LAYER1,
                CTX_LAYER1_BIAS,
                CTX_LAYER2,
                CTX_LAYER2_BIAS,
            ],
            "context mlp parameters",
        )?;
        ContextMlpParams::new(
            Linear::new(t[0].clone(), Some(t[1].clone()))?,
            Linear::new(t[2].clone(), Some(t[3].clone()))?,
            Linear::new(t[4].clone(), Some(t[5].clone()))?,
        )
    }

    pub fn into_bundle(self, map: &mut BTreeMap<String, FeatureTensor>) {
        for (name, bias_name, lin) in [
            (CTX_TOKEN, CTX_TOKEN_BIAS, self.token_proj),
            (CTX_LAYER1, CTX_LAYER1_BIAS, self.layer1),
            (CTX_LAYER2, CTX_LAYER2_BIAS, self.layer2),
        ] {
            let cols = lin.out_dim();
            map.insert(name.into(), lin.weight);
            map.insert(bias_name.into(), lin.bias.unwrap_or_else(|| FeatureTensor::zeros(vec![cols])));
        }
    }
}
