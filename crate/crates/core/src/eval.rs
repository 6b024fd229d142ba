//! Top-5 mAP under the four matching variants.
//!
//! Every variant requires `IoU > iou_min` and an equal noun; `NounVerb` adds
//! verb equality, `NounTtc` adds `|Δttc| < ttc_max_error`, and `Overall`
//! requires all of them. Each example contributes at most `top_k`
//! hypotheses, after which AP is computed per noun class over the pooled
//! survivors and averaged over classes that have ground truth.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Problems, Result};
use crate::types::{canonical_cmp, iou, GroundTruthInstance, PredictionSet, StaHypothesis, Taxonomy};

pub mod oracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchVariant {
    Noun,
    NounVerb,
    NounTtc,
    Overall,
}

impl MatchVariant {
    pub const ALL: [MatchVariant; 4] = [
        MatchVariant::Noun,
        MatchVariant::NounVerb,
        MatchVariant::NounTtc,
        MatchVariant::Overall,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MatchVariant::Noun => "Noun",
            MatchVariant::NounVerb => "Noun+Verb",
            MatchVariant::NounTtc => "Noun+TTC",
            MatchVariant::Overall => "Overall",
        }
    }

    pub fn needs_verb(self) -> bool {
        matches!(self, MatchVariant::NounVerb | MatchVariant::Overall)
    }

    pub fn needs_ttc(self) -> bool {
        matches!(self, MatchVariant::NounTtc | MatchVariant::Overall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Boxes must overlap strictly more than this.
    pub iou_min: f64,
    /// Contact-time error must be strictly below this, in seconds.
    pub ttc_max_error: f64,
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_min: 0.5,
            ttc_max_error: 0.25,
            top_k: 5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Problems::default();
        if !(0.0..1.0).contains(&self.iou_min) {
            problems.push(format!("iou_min must be in [0, 1), got {}", self.iou_min));
        }
        if !(self.ttc_max_error > 0.0 && self.ttc_max_error.is_finite()) {
            problems.push(format!("ttc_max_error must be positive, got {}", self.ttc_max_error));
        }
        if self.top_k == 0 {
            problems.push("top_k must be >= 1");
        }
        problems.into_result("eval config")
    }
}

pub fn matches(pred: &StaHypothesis, gt: &GroundTruthInstance, variant: MatchVariant, cfg: &EvalConfig) -> bool {
    pred.noun_id == gt.noun_id
        && (!variant.needs_verb() || pred.verb_id == gt.verb_id)
        && (!variant.needs_ttc() || (pred.ttc - gt.ttc).abs() < cfg.ttc_max_error)
        && iou(&pred.bbox, &gt.bbox) > cfg.iou_min
}

/// The `k` best hypotheses of one example in canonical order.
pub fn top_k_filter(preds: &[StaHypothesis], k: usize) -> Vec<StaHypothesis> {
    let mut v = preds.to_vec();
    v.sort_by(canonical_cmp);
    v.truncate(k);
    v
}

/// All-point interpolated AP from ranked true/false-positive flags.
///
/// Returns `None` when the class has no ground truth, so callers can leave
/// it out of the mean.
pub fn average_precision(ranked_tp: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(ranked_tp.len());
    let mut tp = 0usize;
    for (rank, &hit) in ranked_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let total: f64 = ranked_tp
        .iter()
        .zip(&precision)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| p)
        .sum();
    Some(total / n_gt as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub unmatched_ground_truth: usize,
}

/// AP per variant for one noun class, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VariantAps {
    pub noun: f64,
    pub noun_verb: f64,
    pub noun_ttc: f64,
    pub overall: f64,
}

impl VariantAps {
    pub fn get(&self, v: MatchVariant) -> f64 {
        match v {
            MatchVariant::Noun => self.noun,
            MatchVariant::NounVerb => self.noun_verb,
            MatchVariant::NounTtc => self.noun_ttc,
            MatchVariant::Overall => self.overall,
        }
    }

    fn set(&mut self, v: MatchVariant, value: f64) {
        match v {
            MatchVariant::Noun => self.noun = value,
            MatchVariant::NounVerb => self.noun_verb = value,
            MatchVariant::NounTtc => self.noun_ttc = value,
            MatchVariant::Overall => self.overall = value,
        }
    }
}

pub const AGGREGATION_NOTE: &str = "Top-k mAP: each example keeps its k highest-scored hypotheses, \
then AP is computed per noun class over the pooled survivors and averaged over classes with ground truth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_overall: f64,
    pub map_noun: f64,
    pub map_noun_verb: f64,
    pub map_noun_ttc: f64,
    pub per_noun_ap: BTreeMap<u32, VariantAps>,
    pub counts: BTreeMap<MatchVariant, MatchCounts>,
    pub n_ground_truth: usize,
    pub n_predictions: usize,
    pub config: EvalConfig,
    pub aggregation: String,
}

impl EvalReport {
    pub fn get(&self, v: MatchVariant) -> f64 {
        match v {
            MatchVariant::Noun => self.map_noun,
            MatchVariant::NounVerb => self.map_noun_verb,
            MatchVariant::NounTtc => self.map_noun_ttc,
            MatchVariant::Overall => self.map_overall,
        }
    }

    fn set(&mut self, v: MatchVariant, value: f64) {
        match v {
            MatchVariant::Noun => self.map_noun = value,
            MatchVariant::NounVerb => self.map_noun_verb = value,
            MatchVariant::NounTtc => self.map_noun_ttc = value,
            MatchVariant::Overall => self.map_overall = value,
        }
    }

    pub(crate) fn empty(cfg: &EvalConfig, n_ground_truth: usize, n_predictions: usize) -> Self {
        EvalReport {
            map_overall: 0.0,
            map_noun: 0.0,
            map_noun_verb: 0.0,
            map_noun_ttc: 0.0,
            per_noun_ap: BTreeMap::new(),
            counts: BTreeMap::new(),
            n_ground_truth,
            n_predictions,
            config: cfg.clone(),
            aggregation: AGGREGATION_NOTE.replace("Top-k", &format!("Top-{}", cfg.top_k)),
        }
    }

    /// Aligned text table with the Overall / Noun / Noun+Verb / Noun+TTC
    /// columns.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.aggregation);
        let _ = writeln!(
            s,
            "# iou > {}, |ttc error| < {} s, {} ground truths, {} predictions",
            self.config.iou_min, self.config.ttc_max_error, self.n_ground_truth, self.n_predictions
        );
        let _ = writeln!(s, "{:>10} {:>10} {:>10} {:>10}", "Overall", "Noun", "Noun+Verb", "Noun+TTC");
        let _ = writeln!(
            s,
            "{:>10.2} {:>10.2} {:>10.2} {:>10.2}",
            self.map_overall, self.map_noun, self.map_noun_verb, self.map_noun_ttc
        );
        s
    }
}

/// Checks ids against the taxonomy and rejects repeated annotations.
pub fn validate_ground_truth(gts: &[GroundTruthInstance], taxonomy: &Taxonomy) -> Result<()> {
    let mut problems = Problems::default();
    let mut seen = HashSet::new();
    for (i, g) in gts.iter().enumerate() {
        g.check(taxonomy, &format!("annotation {i} ({})", g.example_uid), &mut problems);
        let key = (
            g.example_uid.as_str(),
            g.bbox.corners().map(f64::to_bits),
            g.noun_id,
            g.verb_id,
            g.ttc.to_bits(),
        );
        if !seen.insert(key) {
            problems.push(format!("annotation {i} ({}): duplicate of an earlier annotation", g.example_uid));
        }
    }
    problems.into_result("ground truth")
}

/// A surviving prediction tagged with its example.
#[derive(Clone, Copy)]
pub(crate) struct Pooled<'a> {
    pub uid: &'a str,
    pub hyp: &'a StaHypothesis,
}

/// Score-descending order across examples, canonical within ties.
pub(crate) fn pooled_cmp(a: &Pooled, b: &Pooled) -> std::cmp::Ordering {
    canonical_cmp(a.hyp, b.hyp).then_with(|| a.uid.cmp(b.uid))
}

pub(crate) fn truncated(preds: &PredictionSet, k: usize) -> Vec<(String, Vec<StaHypothesis>)> {
    preds
        .iter()
        .map(|(uid, hyps)| (uid.to_string(), top_k_filter(hyps, k)))
        .collect()
}

pub fn evaluate(
    preds: &PredictionSet,
    gts: &[GroundTruthInstance],
    taxonomy: &Taxonomy,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    validate_ground_truth(gts, taxonomy)?;
    preds.validate(Some(taxonomy))?;

    let mut gt_index: HashMap<(&str, u32), Vec<usize>> = HashMap::new();
    let mut gt_per_noun: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        gt_index.entry((g.example_uid.as_str(), g.noun_id)).or_default().push(i);
        *gt_per_noun.entry(g.noun_id).or_default() += 1;
    }

    let kept = truncated(preds, cfg.top_k);
    let mut by_noun: BTreeMap<u32, Vec<Pooled>> = BTreeMap::new();
    for (uid, hyps) in &kept {
        for h in hyps {
            if gt_per_noun.contains_key(&h.noun_id) {
                by_noun.entry(h.noun_id).or_default().push(Pooled { uid, hyp: h });
            }
        }
    }
    for list in by_noun.values_mut() {
        list.sort_by(pooled_cmp);
    }

    let n_predictions = kept.iter().map(|(_, v)| v.len()).sum();
    let mut report = EvalReport::empty(cfg, gts.len(), n_predictions);
    for variant in MatchVariant::ALL {
        let mut counts = MatchCounts::default();
        let mut ap_sum = 0.0;
        for (&noun, &n_gt) in &gt_per_noun {
            let ranked = by_noun.get(&noun).map(Vec::as_slice).unwrap_or(&[]);
            let mut used: HashSet<usize> = HashSet::new();
            let flags: Vec<bool> = ranked
                .iter()
                .map(|p| {
                    let best = gt_index
                        .get(&(p.uid, noun))
                        .into_iter()
                        .flatten()
                        .filter(|&&g| !used.contains(&g) && matches(p.hyp, &gts[g], variant, cfg))
                        .map(|&g| (g, iou(&p.hyp.bbox, &gts[g].bbox)))
                        .fold(None, |best: Option<(usize, f64)>, (g, v)| match best {
                            Some((_, bv)) if bv >= v => best,
                            _ => Some((g, v)),
                        });
                    match best {
                        Some((g, _)) => {
                            used.insert(g);
                            true
                        }
                        None => false,
                    }
                })
                .collect();
            let tp = flags.iter().filter(|f| **f).count();
            counts.true_positives += tp;
            counts.false_positives += flags.len() - tp;
            counts.unmatched_ground_truth += n_gt - tp;
            let ap = average_precision(&flags, n_gt).unwrap_or(0.0) * 100.0;
            report.per_noun_ap.entry(noun).or_default().set(variant, ap);
            ap_sum += ap;
        }
        let map = if gt_per_noun.is_empty() {
            0.0
        } else {
            ap_sum / gt_per_noun.len() as f64
        };
        report.set(variant, map);
        report.counts.insert(variant, counts);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::VistaError;
    use crate::types::Box2D;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> Box2D {
        Box2D::new(x1, y1, x2, y2).unwrap()
    }

    fn gt(uid: &str, b: Box2D, noun: u32, verb: u32, ttc: f64) -> GroundTruthInstance {
        GroundTruthInstance {
            example_uid: uid.into(),
            bbox: b,
            noun_id: noun,
            verb_id: verb,
            ttc,
        }
    }

    fn pred_of(g: &GroundTruthInstance, score: f64) -> StaHypothesis {
        StaHypothesis {
            bbox: g.bbox,
            noun_id: g.noun_id,
            verb_id: g.verb_id,
            ttc: g.ttc,
            score,
            source_id: None,
        }
    }

    #[test]
    fn exact_copy_matches_everything() {
        let cfg = EvalConfig::default();
        let g = gt("a", bx(0., 0., 10., 10.), 1, 2, 1.0);
        for v in MatchVariant::ALL {
            assert!(matches(&pred_of(&g, 0.5), &g, v, &cfg));
        }
    }

    #[test]
    fn iou_of_exactly_half_does_not_match() {
        let cfg = EvalConfig::default();
        let g = gt("a", bx(0., 0., 10., 10.), 0, 0, 1.0);
        let mut p = pred_of(&g, 0.5);
        p.bbox = bx(0., 0., 5., 10.);
        assert_eq!(iou(&p.bbox, &g.bbox), 0.5);
        for v in MatchVariant::ALL {
            assert!(!matches(&p, &g, v, &cfg));
        }
    }

    #[test]
    fn ttc_error_beyond_tolerance() {
        let cfg = EvalConfig::default();
        let g = gt("a", bx(0., 0., 10., 10.), 0, 0, 1.0);
        let mut p = pred_of(&g, 0.5);
        p.ttc = 1.3;
        assert!(matches(&p, &g, MatchVariant::Noun, &cfg));
        assert!(matches(&p, &g, MatchVariant::NounVerb, &cfg));
        assert!(!matches(&p, &g, MatchVariant::NounTtc, &cfg));
        assert!(!matches(&p, &g, MatchVariant::Overall, &cfg));
    }

    #[test]
    fn top_k_examples() {
        let g = gt("a", bx(0., 0., 1., 1.), 0, 0, 1.0);
        let preds: Vec<_> = (0..7).map(|i| pred_of(&g, 0.1 * (i + 1) as f64)).collect();
        let top = top_k_filter(&preds, 5);
        assert_eq!(top.len(), 5);
        assert!((top[4].score - 0.3).abs() < 1e-12);
        assert_eq!(top_k_filter(&preds[..3], 5).len(), 3);

        let mut tied: Vec<_> = (0..7)
            .map(|i| {
                let mut p = pred_of(&g, 0.5);
                p.verb_id = i;
                p
            })
            .collect();
        let expect = top_k_filter(&tied, 5);
        tied.reverse();
        assert_eq!(top_k_filter(&tied, 5), expect);
        assert_eq!(expect.iter().map(|p| p.verb_id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true], 1), Some(1.0));
        assert_eq!(average_precision(&[false], 1), Some(0.0));
        let ap = average_precision(&[true, false, true], 2).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&[true], 0), None);
        // a later, higher precision lifts the earlier point
        let ap = average_precision(&[false, true, true], 2).unwrap();
        assert!((ap - 2.0 / 3.0).abs() < 1e-12);
    }

    fn taxonomy() -> Taxonomy {
        Taxonomy::synthetic(3, 3).unwrap()
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gts = vec![
            gt("a", bx(0., 0., 10., 10.), 0, 1, 0.5),
            gt("a", bx(20., 20., 40., 30.), 2, 0, 1.5),
            gt("b", bx(5., 5., 15., 25.), 0, 2, 2.0),
        ];
        let mut preds = PredictionSet::new();
        for g in &gts {
            preds.push(&g.example_uid, pred_of(g, 0.9));
        }
        let r = evaluate(&preds, &gts, &taxonomy(), &EvalConfig::default()).unwrap();
        for v in MatchVariant::ALL {
            assert_eq!(r.get(v), 100.0);
        }
        let r = evaluate(&PredictionSet::new(), &gts, &taxonomy(), &EvalConfig::default()).unwrap();
        for v in MatchVariant::ALL {
            assert_eq!(r.get(v), 0.0);
        }
        assert_eq!(r.counts[&MatchVariant::Noun].unmatched_ground_truth, 3);
    }

    #[test]
    fn below_cut_prediction_changes_nothing() {
        let gts = vec![gt("a", bx(0., 0., 10., 10.), 0, 0, 1.0)];
        let mut preds = PredictionSet::new();
        for i in 0..5 {
            let mut p = pred_of(&gts[0], 0.5 + 0.01 * i as f64);
            p.bbox = bx(50. + i as f64, 50., 60., 60.);
            preds.push("a", p);
        }
        let cfg = EvalConfig::default();
        let before = evaluate(&preds, &gts, &taxonomy(), &cfg).unwrap();
        preds.push("a", pred_of(&gts[0], 0.1));
        let after = evaluate(&preds, &gts, &taxonomy(), &cfg).unwrap();
        assert_eq!(before, after);
        assert_eq!(after.map_noun, 0.0);
    }

    #[test]
    fn greedy_picks_highest_iou_gt() {
        let gts = vec![
            gt("a", bx(0., 0., 10., 10.), 0, 0, 1.0),
            gt("a", bx(4., 0., 14., 10.), 0, 0, 1.0),
        ];
        let mut preds = PredictionSet::new();
        // overlaps both, but gts[1] more; taking gts[0] would starve the second prediction
        let mut p = pred_of(&gts[1], 0.9);
        p.bbox = bx(3., 0., 13., 10.);
        preds.push("a", p);
        preds.push("a", pred_of(&gts[0], 0.8));
        let r = evaluate(&preds, &gts, &taxonomy(), &EvalConfig::default()).unwrap();
        assert_eq!(r.map_noun, 100.0);
    }

    #[test]
    fn rejects_unknown_ids_and_duplicates() {
        let g = gt("a", bx(0., 0., 10., 10.), 7, 0, 1.0);
        assert!(evaluate(&PredictionSet::new(), &[g], &taxonomy(), &EvalConfig::default()).is_err());
        let g = gt("a", bx(0., 0., 10., 10.), 0, 0, 1.0);
        let err = evaluate(&PredictionSet::new(), &[g.clone(), g], &taxonomy(), &EvalConfig::default()).unwrap_err();
        assert!(matches!(err, VistaError::Validation { .. }));
    }

    #[test]
    fn table_has_four_columns() {
        let gts = vec![gt("a", bx(0., 0., 10., 10.), 0, 0, 1.0)];
        let mut preds = PredictionSet::new();
        preds.push("a", pred_of(&gts[0], 1.0));
        let table = evaluate(&preds, &gts, &taxonomy(), &EvalConfig::default()).unwrap().to_table();
        assert!(table.contains("Overall       Noun  Noun+Verb   Noun+TTC"));
        assert!(table.contains("    100.00     100.00     100.00     100.00"));
    }
}
