//! From per-proposal head outputs to ranked, NMS-filtered, export-ready
//! hypotheses.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Problems, Result, VistaError};
use crate::fusion::{take_named, FeatureTensor};
use crate::types::{clip_box, iou, sort_canonical, Box2D, StaHypothesis, Taxonomy};

/// Largest log-scale applied to a proposal side, `ln(1000 / 16)`.
pub fn max_log_scale() -> f64 {
    (1000.0f64 / 16.0).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub max_proposals: usize,
    pub k_noun: usize,
    pub k_verb: usize,
    pub nms_iou: f64,
    pub max_exports: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            max_proposals: 300,
            k_noun: 3,
            k_verb: 3,
            nms_iou: 0.5,
            max_exports: 100,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Problems::default();
        for (name, v) in [
            ("max_proposals", self.max_proposals),
            ("k_noun", self.k_noun),
            ("k_verb", self.k_verb),
            ("max_exports", self.max_exports),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be >= 1"));
            }
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            problems.push(format!("nms_iou must be in (0, 1], got {}", self.nms_iou));
        }
        problems.into_result("inference config")
    }
}

/// Raw head outputs for one proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalRecord {
    pub proposal_box: Box2D,
    pub objectness: f64,
    pub noun_logits: Vec<f64>,
    pub verb_logits: Vec<f64>,
    /// One `(dx, dy, dw, dh)` per noun class.
    pub box_deltas: Vec<[f64; 4]>,
    pub ttc_raw: f64,
    pub quality: f64,
}

impl ProposalRecord {
    fn check(&self, taxonomy: &Taxonomy, ctx: &str, problems: &mut Problems) {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.objectness) {
            problems.push(format!("{ctx}: objectness {} outside (0, 1]", self.objectness));
        }
        if !unit(self.quality) {
            problems.push(format!("{ctx}: quality {} outside (0, 1]", self.quality));
        }
        if self.noun_logits.len() != taxonomy.n_nouns() {
            problems.push(format!(
                "{ctx}: {} noun logits for {} nouns",
                self.noun_logits.len(),
                taxonomy.n_nouns()
            ));
        }
        if self.verb_logits.len() != taxonomy.n_verbs() {
            problems.push(format!(
                "{ctx}: {} verb logits for {} verbs",
                self.verb_logits.len(),
                taxonomy.n_verbs()
            ));
        }
        if self.box_deltas.len() != taxonomy.n_nouns() {
            problems.push(format!(
                "{ctx}: {} box delta rows for {} nouns",
                self.box_deltas.len(),
                taxonomy.n_nouns()
            ));
        }
        let all_finite = self
            .noun_logits
            .iter()
            .chain(&self.verb_logits)
            .chain(self.box_deltas.iter().flatten())
            .chain(std::iter::once(&self.ttc_raw))
            .all(|v| v.is_finite());
        if !all_finite {
            problems.push(format!("{ctx}: non-finite head output"));
        }
    }
}

/// Order used to cap proposals: objectness descending, then a content key so
/// the cap does not depend on input order.
fn proposal_cmp(a: &ProposalRecord, b: &ProposalRecord) -> Ordering {
    let slices = |p: &ProposalRecord| {
        p.proposal_box
            .corners()
            .into_iter()
            .chain([p.ttc_raw])
            .chain(p.noun_logits.iter().copied())
            .chain(p.verb_logits.iter().copied())
            .chain(p.box_deltas.iter().flatten().copied())
            .collect::<Vec<f64>>()
    };
    b.objectness
        .total_cmp(&a.objectness)
        .then_with(|| b.quality.total_cmp(&a.quality))
        .then_with(|| {
            let (sa, sb) = (slices(a), slices(b));
            sa.iter()
                .zip(&sb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or_else(|| sa.len().cmp(&sb.len()))
        })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(VistaError::invalid("softmax", "empty logit vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(VistaError::invalid("softmax", "non-finite logit"));
    }
    Ok(crate::fusion::softmax_f64(logits))
}

/// Softplus, `ln(1 + e^raw)`, without overflow for large `|raw|`.
pub fn ttc_from_raw(raw: f64) -> Result<f64> {
    if !raw.is_finite() {
        return Err(VistaError::invalid("ttc_from_raw", format!("non-finite input {raw}")));
    }
    Ok(if raw > 0.0 {
        raw + (-raw).exp().ln_1p()
    } else {
        raw.exp().ln_1p()
    })
}

/// Center-offset / log-size refinement of a proposal.
pub fn apply_box_deltas(proposal: &Box2D, deltas: [f64; 4]) -> Result<Box2D> {
    let (w, h) = (proposal.width(), proposal.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(VistaError::invalid(
            "apply_box_deltas",
            format!("proposal {:?} has zero size", proposal.corners()),
        ));
    }
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(VistaError::invalid("apply_box_deltas", "non-finite delta"));
    }
    let [dx, dy, dw, dh] = deltas;
    let clamp = max_log_scale();
    let cx = proposal.x1() + 0.5 * w + dx * w;
    let cy = proposal.y1() + 0.5 * h + dy * h;
    let nw = w * dw.min(clamp).exp();
    let nh = h * dh.min(clamp).exp();
    Box2D::from_corners(cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh)
}

/// Indices of the `k` largest probabilities, ties to the lower index.
fn top_k(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k.min(probs.len()));
    idx
}

/// Expands each proposal into its top noun × top verb hypotheses.
///
/// Score is `objectness × quality × p_noun × p_verb`. When `image_size` is
/// given, refined boxes are clipped to it and ones left with zero area are
/// dropped, as are hypotheses whose score underflows to zero.
pub fn expand_hypotheses(
    proposals: &[ProposalRecord],
    taxonomy: &Taxonomy,
    cfg: &InferenceConfig,
    image_size: Option<(f64, f64)>,
) -> Result<Vec<StaHypothesis>> {
    cfg.validate()?;
    let mut problems = Problems::default();
    for (i, p) in proposals.iter().enumerate() {
        p.check(taxonomy, &format!("proposal {i}"), &mut problems);
    }
    problems.into_result("head outputs")?;

    let mut retained: Vec<&ProposalRecord> = proposals.iter().collect();
    if retained.len() > cfg.max_proposals {
        retained.sort_by(|a, b| proposal_cmp(a, b));
        retained.truncate(cfg.max_proposals);
    }

    let mut out = Vec::with_capacity(retained.len() * cfg.k_noun * cfg.k_verb);
    for p in retained {
        let noun_p = softmax(&p.noun_logits)?;
        let verb_p = softmax(&p.verb_logits)?;
        let ttc = ttc_from_raw(p.ttc_raw)?;
        let verbs = top_k(&verb_p, cfg.k_verb);
        for n in top_k(&noun_p, cfg.k_noun) {
            let mut bbox = apply_box_deltas(&p.proposal_box, p.box_deltas[n])?;
            if let Some((w, h)) = image_size {
                let clipped = clip_box(&bbox, w, h)?;
                if clipped.degenerate {
                    continue;
                }
                bbox = clipped.bbox;
            }
            for &v in &verbs {
                let score = p.objectness * p.quality * noun_p[n] * verb_p[v];
                if score > 0.0 {
                    out.push(StaHypothesis {
                        bbox,
                        noun_id: n as u32,
                        verb_id: v as u32,
                        ttc,
                        score,
                        source_id: None,
                    });
                }
            }
        }
    }
    sort_canonical(&mut out);
    Ok(out)
}

/// Greedy suppression within each noun class. Output keeps canonical order.
pub fn class_aware_nms(hyps: &[StaHypothesis], nms_iou: f64) -> Vec<StaHypothesis> {
    let mut sorted = hyps.to_vec();
    sort_canonical(&mut sorted);
    let mut kept_by_noun: HashMap<u32, Vec<Box2D>> = HashMap::new();
    let mut kept = Vec::with_capacity(sorted.len());
    for h in sorted {
        let boxes = kept_by_noun.entry(h.noun_id).or_default();
        if boxes.iter().all(|b| iou(b, &h.bbox) <= nms_iou) {
            boxes.push(h.bbox);
            kept.push(h);
        }
    }
    kept
}

/// Canonical order, truncated to `max_exports`.
pub fn finalize_submission(hyps: &[StaHypothesis], max_exports: usize) -> Vec<StaHypothesis> {
    let mut out = hyps.to_vec();
    sort_canonical(&mut out);
    out.truncate(max_exports);
    out
}

/// expand → class-aware NMS → export cap.
pub fn run_inference(
    proposals: &[ProposalRecord],
    taxonomy: &Taxonomy,
    cfg: &InferenceConfig,
    image_size: Option<(f64, f64)>,
) -> Result<Vec<StaHypothesis>> {
    let expanded = expand_hypotheses(proposals, taxonomy, cfg, image_size)?;
    let kept = class_aware_nms(&expanded, cfg.nms_iou);
    Ok(finalize_submission(&kept, cfg.max_exports))
}

pub const T_OBJECTNESS: &str = "objectness";
pub const T_NOUN_LOGITS: &str = "noun_logits";
pub const T_VERB_LOGITS: &str = "verb_logits";
pub const T_BOX_DELTAS: &str = "box_deltas";
pub const T_TTC_RAW: &str = "ttc_raw";
pub const T_QUALITY: &str = "quality";
pub const T_PROPOSAL_BOXES: &str = "proposal_boxes";
/// Optional `[width, height]`; enables clipping of refined boxes.
pub const T_IMAGE_SIZE: &str = "image_size";

pub const HEAD_TENSORS: [&str; 7] = [
    T_OBJECTNESS,
    T_NOUN_LOGITS,
    T_VERB_LOGITS,
    T_BOX_DELTAS,
    T_TTC_RAW,
    T_QUALITY,
    T_PROPOSAL_BOXES,
];

/// Head outputs for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleHeads {
    pub proposals: Vec<ProposalRecord>,
    pub image_size: Option<(f64, f64)>,
}

/// Splits a tensor container into per-example head outputs.
///
/// Tensor names are either bare (`objectness`, ...) for a single example
/// stored under `default_uid`, or prefixed `<uid>/objectness` for several.
pub fn heads_from_tensors(
    map: &BTreeMap<String, FeatureTensor>,
    taxonomy: &Taxonomy,
    default_uid: &str,
) -> Result<BTreeMap<String, ExampleHeads>> {
    let mut grouped: BTreeMap<String, BTreeMap<String, FeatureTensor>> = BTreeMap::new();
    for (name, tensor) in map {
        let (uid, field) = match name.rsplit_once('/') {
            Some((uid, field)) => (uid.to_string(), field),
            None => (default_uid.to_string(), name.as_str()),
        };
        grouped.entry(uid).or_default().insert(field.to_string(), tensor.clone());
    }
    let mut problems = Problems::default();
    let mut out = BTreeMap::new();
    for (uid, fields) in &grouped {
        match example_heads(fields, taxonomy) {
            Ok(heads) => {
                out.insert(uid.clone(), heads);
            }
            Err(VistaError::Validation { problems: list, .. }) => {
                for p in list {
                    problems.push(format!("{uid}: {p}"));
                }
            }
            Err(other) => problems.push(format!("{uid}: {other}")),
        }
    }
    problems.into_result("head outputs")?;
    Ok(out)
}

fn example_heads(fields: &BTreeMap<String, FeatureTensor>, taxonomy: &Taxonomy) -> Result<ExampleHeads> {
    let t = take_named(fields, &HEAD_TENSORS, "head outputs")?;
    let (obj, nl, vl, deltas, ttc, quality, boxes) = (t[0], t[1], t[2], t[3], t[4], t[5], t[6]);
    let n = obj.len();
    let (nn, nv) = (taxonomy.n_nouns(), taxonomy.n_verbs());

    let mut problems = Problems::default();
    let mut expect = |name: &str, tensor: &FeatureTensor, shapes: &[Vec<usize>]| {
        if !shapes.iter().any(|s| s.as_slice() == tensor.shape()) {
            problems.push(format!("{name}: shape {:?}, expected one of {shapes:?}", tensor.shape()));
        }
    };
    expect(T_OBJECTNESS, obj, &[vec![n]]);
    expect(T_NOUN_LOGITS, nl, &[vec![n, nn]]);
    expect(T_VERB_LOGITS, vl, &[vec![n, nv]]);
    expect(T_BOX_DELTAS, deltas, &[vec![n, nn, 4], vec![n, nn * 4]]);
    expect(T_TTC_RAW, ttc, &[vec![n]]);
    expect(T_QUALITY, quality, &[vec![n]]);
    expect(T_PROPOSAL_BOXES, boxes, &[vec![n, 4]]);
    let image_size = match fields.get(T_IMAGE_SIZE) {
        Some(s) if s.shape() == [2] => Some((s.data()[0] as f64, s.data()[1] as f64)),
        Some(s) => {
            expect(T_IMAGE_SIZE, s, &[vec![2]]);
            None
        }
        None => None,
    };
    problems.into_result("head outputs")?;

    let wide = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let mut proposals = Vec::with_capacity(n);
    let mut problems = Problems::default();
    for i in 0..n {
        let b = &boxes.data()[i * 4..i * 4 + 4];
        let proposal_box = match Box2D::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64) {
            Ok(b) => b,
            Err(e) => {
                problems.push(format!("proposal {i}: {e}"));
                continue;
            }
        };
        let d = &deltas.data()[i * nn * 4..(i + 1) * nn * 4];
        proposals.push(ProposalRecord {
            proposal_box,
            objectness: obj.data()[i] as f64,
            noun_logits: wide(&nl.data()[i * nn..(i + 1) * nn]),
            verb_logits: wide(&vl.data()[i * nv..(i + 1) * nv]),
            box_deltas: d
                .chunks_exact(4)
                .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64])
                .collect(),
            ttc_raw: ttc.data()[i] as f64,
            quality: quality.data()[i] as f64,
        });
    }
    problems.into_result("head outputs")?;
    Ok(ExampleHeads { proposals, image_size })
}

/// Packs proposals back into the named-tensor layout read by
/// [`heads_from_tensors`]. `prefix` is prepended to every name.
pub fn heads_to_tensors(
    heads: &ExampleHeads,
    taxonomy: &Taxonomy,
    prefix: &str,
    map: &mut BTreeMap<String, FeatureTensor>,
) -> Result<()> {
    let p = &heads.proposals;
    let n = p.len();
    let (nn, nv) = (taxonomy.n_nouns(), taxonomy.n_verbs());
    let narrow = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v as f32).collect::<Vec<f32>>();
    let mut put = |name: &str, shape: Vec<usize>, data: Vec<f32>| -> Result<()> {
        map.insert(format!("{prefix}{name}"), FeatureTensor::new(shape, data)?);
        Ok(())
    };
    put(T_OBJECTNESS, vec![n], narrow(&mut p.iter().map(|r| r.objectness)))?;
    put(T_QUALITY, vec![n], narrow(&mut p.iter().map(|r| r.quality)))?;
    put(T_TTC_RAW, vec![n], narrow(&mut p.iter().map(|r| r.ttc_raw)))?;
    put(
        T_NOUN_LOGITS,
        vec![n, nn],
        narrow(&mut p.iter().flat_map(|r| r.noun_logits.iter().copied())),
    )?;
    put(
        T_VERB_LOGITS,
        vec![n, nv],
        narrow(&mut p.iter().flat_map(|r| r.verb_logits.iter().copied())),
    )?;
    put(
        T_BOX_DELTAS,
        vec![n, nn, 4],
        narrow(&mut p.iter().flat_map(|r| r.box_deltas.iter().flatten().copied())),
    )?;
    put(
        T_PROPOSAL_BOXES,
        vec![n, 4],
        narrow(&mut p.iter().flat_map(|r| r.proposal_box.corners())),
    )?;
    if let Some((w, h)) = heads.image_size {
        put(T_IMAGE_SIZE, vec![2], vec![w as f32, h as f32])?;
    }
    Ok(())
}
