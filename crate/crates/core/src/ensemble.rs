//! Merging prediction sets from several heads or checkpoints.
//!
//! Hypotheses are pooled per example, grouped greedily around the
//! highest-scored remaining hypothesis, and each group is collapsed into one
//! score-weighted hypothesis whose confidence is scaled by how many distinct
//! sources contributed to it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Problems, Result, VistaError};
use crate::types::{iou, sort_canonical, Box2D, PredictionSet, StaHypothesis, Taxonomy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub box_iou_min: f64,
    pub ttc_tolerance: f64,
    /// Weight `α` of the cross-source agreement factor.
    pub agreement_weight: f64,
    /// Number of sources the agreement count is normalised by. Defaults to
    /// the number of input prediction sets.
    pub n_sources: Option<usize>,
    pub max_exports: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            box_iou_min: 0.5,
            ttc_tolerance: 0.25,
            agreement_weight: 0.5,
            n_sources: None,
            max_exports: 100,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Problems::default();
        if !(self.box_iou_min > 0.0 && self.box_iou_min <= 1.0) {
            problems.push(format!("box_iou_min must be in (0, 1], got {}", self.box_iou_min));
        }
        if !(self.ttc_tolerance > 0.0 && self.ttc_tolerance.is_finite()) {
            problems.push(format!("ttc_tolerance must be positive, got {}", self.ttc_tolerance));
        }
        if !(0.0..=1.0).contains(&self.agreement_weight) {
            problems.push(format!("agreement_weight must be in [0, 1], got {}", self.agreement_weight));
        }
        if self.n_sources == Some(0) {
            problems.push("n_sources must be >= 1");
        }
        if self.max_exports == 0 {
            problems.push("max_exports must be >= 1");
        }
        problems.into_result("ensemble config")
    }
}

/// Same noun, same verb, enough box overlap and close enough in time.
pub fn compatible(a: &StaHypothesis, b: &StaHypothesis, cfg: &EnsembleConfig) -> bool {
    a.noun_id == b.noun_id
        && a.verb_id == b.verb_id
        && (a.ttc - b.ttc).abs() <= cfg.ttc_tolerance
        && iou(&a.bbox, &b.bbox) >= cfg.box_iou_min
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisGroup {
    /// Canonical order; every member is compatible with the seed.
    pub members: Vec<StaHypothesis>,
    pub seed_index: usize,
}

impl HypothesisGroup {
    pub fn seed(&self) -> &StaHypothesis {
        &self.members[self.seed_index]
    }

    /// Distinct producers; hypotheses without a source id count as one.
    pub fn distinct_sources(&self) -> usize {
        self.members
            .iter()
            .map(|m| m.source_id)
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Seed-anchored greedy grouping. Compatibility is tested against the seed
/// only, never transitively.
pub fn group_hypotheses(all: &[StaHypothesis], cfg: &EnsembleConfig) -> Vec<HypothesisGroup> {
    let mut pool = all.to_vec();
    sort_canonical(&mut pool);
    let mut taken = vec![false; pool.len()];
    let mut groups = Vec::new();
    for seed in 0..pool.len() {
        if taken[seed] {
            continue;
        }
        taken[seed] = true;
        let mut members = vec![pool[seed].clone()];
        for j in seed + 1..pool.len() {
            if !taken[j] && compatible(&pool[seed], &pool[j], cfg) {
                taken[j] = true;
                members.push(pool[j].clone());
            }
        }
        groups.push(HypothesisGroup {
            members,
            seed_index: 0,
        });
    }
    groups
}

/// Collapses a group into one hypothesis.
///
/// Box corners and ttc are score-weighted means of the members; noun and
/// verb come from the seed. The score is the mean member score times
/// `(1 - α) + α · u / n_sources`, with `u` the number of distinct sources.
pub fn merge_group(group: &HypothesisGroup, cfg: &EnsembleConfig, n_sources: usize) -> Result<StaHypothesis> {
    let members = &group.members;
    if members.is_empty() {
        return Err(VistaError::invalid("merge_group", "empty group"));
    }
    let distinct = group.distinct_sources();
    if n_sources < distinct {
        return Err(VistaError::invalid(
            "merge_group",
            format!("n_sources {n_sources} smaller than the {distinct} distinct sources in the group"),
        ));
    }
    let total: f64 = members.iter().map(|m| m.score).sum();
    let mut corners = [0.0f64; 4];
    let mut ttc = 0.0;
    for m in members {
        let w = m.score / total;
        for (acc, c) in corners.iter_mut().zip(m.bbox.corners()) {
            *acc += w * c;
        }
        ttc += w * m.ttc;
    }
    // Rounding can push a weighted mean one ulp past the member range.
    for (k, acc) in corners.iter_mut().enumerate() {
        let (lo, hi) = members
            .iter()
            .map(|m| m.bbox.corners()[k])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        *acc = acc.clamp(lo, hi);
    }
    let (lo, hi) = members
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m.ttc), hi.max(m.ttc)));
    let ttc = ttc.clamp(lo, hi);

    let alpha = cfg.agreement_weight;
    let agreement = (1.0 - alpha) + alpha * distinct as f64 / n_sources as f64;
    let score = total / members.len() as f64 * agreement;

    let seed = group.seed();
    let source_id = if distinct == 1 { seed.source_id } else { None };
    Ok(StaHypothesis {
        bbox: Box2D::from_corners(corners[0], corners[1], corners[2], corners[3])?,
        noun_id: seed.noun_id,
        verb_id: seed.verb_id,
        ttc,
        score,
        source_id,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EnsembleStats {
    pub n_sources: usize,
    pub input_hypotheses: usize,
    /// Groups formed per example, before the export cap.
    pub groups_per_example: BTreeMap<String, usize>,
}

impl EnsembleStats {
    pub fn total_groups(&self) -> usize {
        self.groups_per_example.values().sum()
    }
}

/// Fails when any two sources that declare a taxonomy disagree.
pub fn check_taxonomies(taxonomies: &[Option<&Taxonomy>]) -> Result<()> {
    let declared: Vec<(usize, &Taxonomy)> = taxonomies
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.map(|t| (i, t)))
        .collect();
    let mut problems = Problems::default();
    if let Some((first_idx, first)) = declared.first() {
        for (i, t) in &declared[1..] {
            if t != first {
                problems.push(format!("source {i} taxonomy differs from source {first_idx}"));
            }
        }
    }
    problems.into_result("ensemble sources")
}

/// Pools, groups, merges and re-ranks every example across `sources`.
///
/// Each input hypothesis is tagged with its source index for the agreement
/// count; the merged output carries no source id.
pub fn ensemble_predictions(sources: &[PredictionSet], cfg: &EnsembleConfig) -> Result<(PredictionSet, EnsembleStats)> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(VistaError::invalid("ensemble", "at least one source is required"));
    }
    let n_sources = cfg.n_sources.unwrap_or(sources.len());
    if n_sources < sources.len() {
        return Err(VistaError::invalid(
            "ensemble",
            format!("n_sources {n_sources} is smaller than the {} inputs", sources.len()),
        ));
    }

    let mut pooled: BTreeMap<&str, Vec<StaHypothesis>> = BTreeMap::new();
    for (s, set) in sources.iter().enumerate() {
        for (uid, hyps) in set.iter() {
            pooled.entry(uid).or_default().extend(hyps.iter().cloned().map(|mut h| {
                h.source_id = Some(s as u32);
                h
            }));
        }
    }

    let mut stats = EnsembleStats {
        n_sources,
        ..Default::default()
    };
    let mut out = PredictionSet::new();
    for (uid, hyps) in pooled {
        stats.input_hypotheses += hyps.len();
        let groups = group_hypotheses(&hyps, cfg);
        stats.groups_per_example.insert(uid.to_string(), groups.len());
        let mut merged = groups
            .iter()
            .map(|g| {
                merge_group(g, cfg, n_sources).map(|mut h| {
                    h.source_id = None;
                    h
                })
            })
            .collect::<Result<Vec<_>>>()?;
        sort_canonical(&mut merged);
        merged.truncate(cfg.max_exports);
        out.insert(uid, merged);
    }
    Ok((out, stats))
}
