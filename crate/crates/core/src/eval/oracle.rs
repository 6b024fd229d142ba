//! Exhaustive reference evaluation for tiny instances.
//!
//! Shares only the ordering contract (`canonical_cmp`) with [`evaluate`].
//! Overlap, the match criteria and the precision/recall curve are all
//! recomputed here from first principles: a full prediction × ground-truth
//! validity table, a literal replay of greedy assignment over it, and AP
//! read off the curve as the mean over recall levels `j / n_gt` of the best
//! precision reached at or beyond that recall.
//!
//! [`evaluate`]: super::evaluate

use std::collections::BTreeSet;

use super::{pooled_cmp, truncated, EvalConfig, EvalReport, MatchVariant, Pooled};
use crate::error::{Result, VistaError};
use crate::types::{GroundTruthInstance, PredictionSet, Taxonomy};

/// Upper bound on surviving predictions per noun class.
pub const MAX_PREDICTIONS_PER_CLASS: usize = 8;

fn overlap(a: [f64; 4], b: [f64; 4]) -> f64 {
    let area = |c: [f64; 4]| (c[2] - c[0]) * (c[3] - c[1]);
    if area(a) <= 0.0 || area(b) <= 0.0 {
        return 0.0;
    }
    let w = a[2].min(b[2]) - a[0].max(b[0]);
    let h = a[3].min(b[3]) - a[1].max(b[1]);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (area(a) + area(b) - inter)
}

pub fn brute_force_evaluate(
    preds: &PredictionSet,
    gts: &[GroundTruthInstance],
    taxonomy: &Taxonomy,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    super::validate_ground_truth(gts, taxonomy)?;
    preds.validate(Some(taxonomy))?;

    let kept = truncated(preds, cfg.top_k);
    let classes: BTreeSet<u32> = gts.iter().map(|g| g.noun_id).collect();
    let n_predictions = kept.iter().map(|(_, v)| v.len()).sum();
    let mut report = EvalReport::empty(cfg, gts.len(), n_predictions);

    for variant in MatchVariant::ALL {
        let mut ap_total = 0.0;
        let mut counts = super::MatchCounts::default();
        for &noun in &classes {
            let mut ranked: Vec<Pooled> = Vec::new();
            for (uid, hyps) in &kept {
                for h in hyps.iter().filter(|h| h.noun_id == noun) {
                    ranked.push(Pooled { uid, hyp: h });
                }
            }
            if ranked.len() > MAX_PREDICTIONS_PER_CLASS {
                return Err(VistaError::TooLarge(format!(
                    "noun {noun} has {} predictions, limit {MAX_PREDICTIONS_PER_CLASS}",
                    ranked.len()
                )));
            }
            ranked.sort_by(pooled_cmp);
            let class_gts: Vec<&GroundTruthInstance> = gts.iter().filter(|g| g.noun_id == noun).collect();

            // valid[p][g]: could prediction p be credited with ground truth g?
            let valid: Vec<Vec<Option<f64>>> = ranked
                .iter()
                .map(|p| {
                    class_gts
                        .iter()
                        .map(|g| {
                            let o = overlap(p.hyp.bbox.corners(), g.bbox.corners());
                            let ok = p.uid == g.example_uid
                                && o > cfg.iou_min
                                && (!variant.needs_verb() || p.hyp.verb_id == g.verb_id)
                                && (!variant.needs_ttc() || (p.hyp.ttc - g.ttc).abs() < cfg.ttc_max_error);
                            ok.then_some(o)
                        })
                        .collect()
                })
                .collect();

            let mut taken = vec![false; class_gts.len()];
            let mut hits = Vec::with_capacity(ranked.len());
            for row in &valid {
                let mut pick: Option<(usize, f64)> = None;
                for (g, cell) in row.iter().enumerate() {
                    if let (Some(o), false) = (cell, taken[g]) {
                        if pick.is_none_or(|(_, best)| *o > best) {
                            pick = Some((g, *o));
                        }
                    }
                }
                if let Some((g, _)) = pick {
                    taken[g] = true;
                }
                hits.push(pick.is_some());
            }

            let n_gt = class_gts.len();
            let curve: Vec<(usize, f64)> = (1..=hits.len())
                .map(|r| {
                    let tp = hits[..r].iter().filter(|h| **h).count();
                    (tp, tp as f64 / r as f64)
                })
                .collect();
            let mut ap = 0.0;
            for level in 1..=n_gt {
                let best = curve
                    .iter()
                    .filter(|(tp, _)| *tp >= level)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                ap += best;
            }
            let ap = 100.0 * ap / n_gt as f64;
            report.per_noun_ap.entry(noun).or_default().set(variant, ap);
            ap_total += ap;

            let tp = hits.iter().filter(|h| **h).count();
            counts.true_positives += tp;
            counts.false_positives += hits.len() - tp;
            counts.unmatched_ground_truth += n_gt - tp;
        }
        let map = if classes.is_empty() {
            0.0
        } else {
            ap_total / classes.len() as f64
        };
        report.set(variant, map);
        report.counts.insert(variant, counts);
    }
    Ok(report)
}
