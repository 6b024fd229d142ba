//! Shared domain types and box geometry.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Problems, Result, VistaError};

/// Axis-aligned box in continuous pixel corner coordinates.
///
/// Construction goes through [`Box2D::new`], so every value in circulation
/// satisfies `x1 <= x2`, `y1 <= y2` with finite coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2D {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if let Some(problem) = Self::check(x1, y1, x2, y2) {
            return Err(VistaError::invalid("box", problem));
        }
        Ok(Box2D { x1, y1, x2, y2 })
    }

    pub(crate) fn check(x1: f64, y1: f64, x2: f64, y2: f64) -> Option<String> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            Some(format!("non-finite coordinate in [{x1}, {y1}, {x2}, {y2}]"))
        } else if x1 > x2 || y1 > y2 {
            Some(format!("inverted corners in [{x1}, {y1}, {x2}, {y2}]"))
        } else {
            None
        }
    }

    /// Builds a box from two arbitrary corners, ordering each axis.
    pub fn from_corners(xa: f64, ya: f64, xb: f64, yb: f64) -> Result<Self> {
        Self::new(xa.min(xb), ya.min(yb), xa.max(xb), ya.max(yb))
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() <= 0.0
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

impl TryFrom<[f64; 4]> for Box2D {
    type Error = VistaError;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Box2D::new(c[0], c[1], c[2], c[3])
    }
}

impl From<Box2D> for [f64; 4] {
    fn from(b: Box2D) -> Self {
        b.corners()
    }
}

/// Intersection over union. Zero-area boxes overlap nothing.
pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    let area_a = a.area();
    let area_b = b.area();
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (area_a + area_b - inter)).clamp(0.0, 1.0)
}

/// Result of clamping a box into the image frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clipped {
    pub bbox: Box2D,
    /// Set when nothing of positive area is left inside the frame.
    pub degenerate: bool,
}

pub fn clip_box(b: &Box2D, width: f64, height: f64) -> Result<Clipped> {
    if !(width > 0.0 && width.is_finite() && height > 0.0 && height.is_finite()) {
        return Err(VistaError::invalid(
            "clip_box",
            format!("image size must be positive and finite, got {width}x{height}"),
        ));
    }
    let bbox = Box2D {
        x1: b.x1.clamp(0.0, width),
        y1: b.y1.clamp(0.0, height),
        x2: b.x2.clamp(0.0, width),
        y2: b.y2.clamp(0.0, height),
    };
    Ok(Clipped {
        bbox,
        degenerate: bbox.is_degenerate(),
    })
}

/// Noun and verb vocabularies. Category ids index into these lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    nouns: Vec<String>,
    verbs: Vec<String>,
}

impl Taxonomy {
    pub fn new(nouns: Vec<String>, verbs: Vec<String>) -> Result<Self> {
        let mut problems = Problems::default();
        for (kind, list) in [("noun", &nouns), ("verb", &verbs)] {
            if list.is_empty() {
                problems.push(format!("{kind} list is empty"));
            }
            let mut seen = HashSet::new();
            for name in list {
                if !seen.insert(name.as_str()) {
                    problems.push(format!("duplicate {kind} label {name:?}"));
                }
            }
        }
        problems.into_result("taxonomy")?;
        Ok(Taxonomy { nouns, verbs })
    }

    /// Taxonomy with generated labels `noun_000`, `verb_000`, ...
    pub fn synthetic(n_nouns: usize, n_verbs: usize) -> Result<Self> {
        Self::new(
            (0..n_nouns).map(|i| format!("noun_{i:03}")).collect(),
            (0..n_verbs).map(|i| format!("verb_{i:03}")).collect(),
        )
    }

    pub fn nouns(&self) -> &[String] {
        &self.nouns
    }

    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }

    pub fn n_nouns(&self) -> usize {
        self.nouns.len()
    }

    pub fn n_verbs(&self) -> usize {
        self.verbs.len()
    }
}

/// One anticipated interaction: where, what, how, when, and how sure.
#[derive(Debug, Clone, PartialEq)]
pub struct StaHypothesis {
    pub bbox: Box2D,
    pub noun_id: u32,
    pub verb_id: u32,
    /// Seconds until contact.
    pub ttc: f64,
    pub score: f64,
    /// Producing head or checkpoint, when known.
    pub source_id: Option<u32>,
}

impl StaHypothesis {
    /// Appends every violated invariant to `problems`, prefixed by `ctx`.
    pub(crate) fn check(&self, taxonomy: Option<&Taxonomy>, ctx: &str, problems: &mut Problems) {
        if !(self.ttc.is_finite() && self.ttc >= 0.0) {
            problems.push(format!("{ctx}: ttc must be finite and >= 0, got {}", self.ttc));
        }
        if !(self.score.is_finite() && self.score > 0.0) {
            problems.push(format!("{ctx}: score must be finite and > 0, got {}", self.score));
        }
        if let Some(t) = taxonomy {
            check_ids(self.noun_id, self.verb_id, t, ctx, problems);
        }
    }

    pub fn validate(&self, taxonomy: Option<&Taxonomy>) -> Result<()> {
        let mut problems = Problems::default();
        self.check(taxonomy, "hypothesis", &mut problems);
        problems.into_result("hypothesis")
    }
}

pub(crate) fn check_ids(noun: u32, verb: u32, t: &Taxonomy, ctx: &str, problems: &mut Problems) {
    if noun as usize >= t.n_nouns() {
        problems.push(format!(
            "{ctx}: noun_category_id {noun} out of range (vocabulary size {})",
            t.n_nouns()
        ));
    }
    if verb as usize >= t.n_verbs() {
        problems.push(format!(
            "{ctx}: verb_category_id {verb} out of range (vocabulary size {})",
            t.n_verbs()
        ));
    }
}

/// Canonical total order: score descending, then noun, verb, box corners and
/// ttc ascending, then source id. Used wherever output order must be
/// reproducible.
pub fn canonical_cmp(a: &StaHypothesis, b: &StaHypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.noun_id.cmp(&b.noun_id))
        .then_with(|| a.verb_id.cmp(&b.verb_id))
        .then_with(|| a.bbox.x1.total_cmp(&b.bbox.x1))
        .then_with(|| a.bbox.y1.total_cmp(&b.bbox.y1))
        .then_with(|| a.bbox.x2.total_cmp(&b.bbox.x2))
        .then_with(|| a.bbox.y2.total_cmp(&b.bbox.y2))
        .then_with(|| a.ttc.total_cmp(&b.ttc))
        .then_with(|| a.source_id.cmp(&b.source_id))
}

pub fn sort_canonical(hyps: &mut [StaHypothesis]) {
    hyps.sort_by(canonical_cmp);
}

/// One annotated future interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub example_uid: String,
    pub bbox: Box2D,
    pub noun_id: u32,
    pub verb_id: u32,
    pub ttc: f64,
}

impl GroundTruthInstance {
    pub(crate) fn check(&self, taxonomy: &Taxonomy, ctx: &str, problems: &mut Problems) {
        if self.example_uid.is_empty() {
            problems.push(format!("{ctx}: empty example_uid"));
        }
        if !(self.ttc.is_finite() && self.ttc >= 0.0) {
            problems.push(format!("{ctx}: ttc must be finite and >= 0, got {}", self.ttc));
        }
        check_ids(self.noun_id, self.verb_id, taxonomy, ctx, problems);
    }
}

/// Per-example hypothesis lists, kept in canonical order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    results: BTreeMap<String, Vec<StaHypothesis>>,
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a list for `uid`, replacing any previous one, and sorts it.
    pub fn insert(&mut self, uid: impl Into<String>, mut hyps: Vec<StaHypothesis>) {
        sort_canonical(&mut hyps);
        self.results.insert(uid.into(), hyps);
    }

    pub fn push(&mut self, uid: &str, hyp: StaHypothesis) {
        let list = self.results.entry(uid.to_string()).or_default();
        let pos = list.partition_point(|h| canonical_cmp(h, &hyp) != Ordering::Greater);
        list.insert(pos, hyp);
    }

    pub fn get(&self, uid: &str) -> Option<&[StaHypothesis]> {
        self.results.get(uid).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[StaHypothesis])> {
        self.results.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn uids(&self) -> impl Iterator<Item = &str> {
        self.results.keys().map(String::as_str)
    }

    pub fn n_examples(&self) -> usize {
        self.results.len()
    }

    pub fn n_hypotheses(&self) -> usize {
        self.results.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    pub fn validate(&self, taxonomy: Option<&Taxonomy>) -> Result<()> {
        let mut problems = Problems::default();
        for (uid, list) in &self.results {
            for (i, h) in list.iter().enumerate() {
                h.check(taxonomy, &format!("{uid}[{i}]"), &mut problems);
            }
        }
        problems.into_result("predictions")
    }
}

impl FromIterator<(String, Vec<StaHypothesis>)> for PredictionSet {
    fn from_iter<I: IntoIterator<Item = (String, Vec<StaHypothesis>)>>(iter: I) -> Self {
        let mut set = PredictionSet::new();
        for (uid, hyps) in iter {
            set.insert(uid, hyps);
        }
        set
    }
}
