//! JSON documents (taxonomy, ground truth, submissions) and the binary
//! tensor container.
//!
//! Loaders validate everything they read and report every problem found;
//! they never hand back a partially valid value. Unknown JSON fields are
//! ignored with a warning.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Problems, Result, VistaError};
use crate::fusion::FeatureTensor;
use crate::types::{check_ids, Box2D, GroundTruthInstance, PredictionSet, StaHypothesis, Taxonomy};

pub const SUBMISSION_VERSION: &str = "1.0";
pub const CHALLENGE: &str = "ego4d_sta";

pub const TENSOR_MAGIC: &[u8; 4] = b"VSTF";
pub const TENSOR_VERSION: u32 = 1;

/// A loaded value plus non-fatal diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Loaded<T> {
    fn new(value: T, warnings: Vec<String>) -> Self {
        for w in &warnings {
            log::warn!("{w}");
        }
        Loaded { value, warnings }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| VistaError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| VistaError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| VistaError::io(path, e))
}

fn to_json_text<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents serialize");
    s.push('\n');
    s
}

fn warn_extra(extra: &BTreeMap<String, Value>, ctx: &str, warnings: &mut Vec<String>) {
    for key in extra.keys() {
        warnings.push(format!("{ctx}: ignoring unknown field {key:?}"));
    }
}

fn parse_json<'a, T: Deserialize<'a>>(text: &'a str, context: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| VistaError::from_json(context, &e))
}

// ---------------------------------------------------------------- taxonomy

#[derive(Deserialize)]
struct RawTaxonomy {
    nouns: Vec<String>,
    verbs: Vec<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

impl RawTaxonomy {
    fn into_taxonomy(self, ctx: &str, warnings: &mut Vec<String>) -> Result<Taxonomy> {
        warn_extra(&self.extra, ctx, warnings);
        Taxonomy::new(self.nouns, self.verbs)
    }
}

pub fn parse_taxonomy(text: &str, context: &str) -> Result<Loaded<Taxonomy>> {
    let raw: RawTaxonomy = parse_json(text, context)?;
    let mut warnings = Vec::new();
    let t = raw.into_taxonomy(context, &mut warnings)?;
    Ok(Loaded::new(t, warnings))
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    Ok(parse_taxonomy(&read_text(path)?, &path.display().to_string())?.value)
}

pub fn write_taxonomy(taxonomy: &Taxonomy, path: &Path) -> Result<()> {
    write_bytes(path, to_json_text(taxonomy).as_bytes())
}

// ------------------------------------------------------------ ground truth

#[derive(Deserialize)]
struct RawAnnotation {
    example_uid: String,
    #[serde(rename = "box")]
    bbox: Vec<f64>,
    noun_category_id: i64,
    verb_category_id: i64,
    time_to_contact: f64,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
struct RawGroundTruth {
    #[serde(default)]
    taxonomy: Option<RawTaxonomy>,
    #[serde(default)]
    taxonomy_path: Option<String>,
    annotations: Vec<RawAnnotation>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Serialize)]
struct AnnotationOut<'a> {
    example_uid: &'a str,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    noun_category_id: u32,
    verb_category_id: u32,
    time_to_contact: f64,
}

#[derive(Serialize)]
struct GroundTruthOut<'a> {
    taxonomy: &'a Taxonomy,
    annotations: Vec<AnnotationOut<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    pub taxonomy: Taxonomy,
    pub annotations: Vec<GroundTruthInstance>,
}

fn checked_box(c: &[f64], ctx: &str, problems: &mut Problems) -> Option<Box2D> {
    if c.len() != 4 {
        problems.push(format!("{ctx}: box needs 4 coordinates, got {}", c.len()));
        return None;
    }
    match Box2D::check(c[0], c[1], c[2], c[3]) {
        Some(p) => {
            problems.push(format!("{ctx}: {p}"));
            None
        }
        None => Box2D::new(c[0], c[1], c[2], c[3]).ok(),
    }
}

fn checked_id(v: i64, what: &str, ctx: &str, problems: &mut Problems) -> Option<u32> {
    match u32::try_from(v) {
        Ok(id) => Some(id),
        Err(_) => {
            problems.push(format!("{ctx}: {what} {v} is not a valid category id"));
            None
        }
    }
}

/// Parses a ground-truth document. A `taxonomy_path` is resolved against
/// `base_dir`.
pub fn parse_ground_truth(text: &str, base_dir: Option<&Path>, context: &str) -> Result<Loaded<GroundTruthSet>> {
    let raw: RawGroundTruth = parse_json(text, context)?;
    let mut warnings = Vec::new();
    warn_extra(&raw.extra, context, &mut warnings);

    let taxonomy = match (raw.taxonomy, raw.taxonomy_path) {
        (Some(t), None) => t.into_taxonomy(&format!("{context}: taxonomy"), &mut warnings)?,
        (None, Some(p)) => {
            let path = base_dir.map(|d| d.join(&p)).unwrap_or_else(|| p.clone().into());
            load_taxonomy(&path)?
        }
        (Some(_), Some(_)) => {
            return Err(VistaError::invalid(context, "both taxonomy and taxonomy_path given"));
        }
        (None, None) => return Err(VistaError::invalid(context, "missing taxonomy or taxonomy_path")),
    };

    let mut problems = Problems::default();
    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for (i, a) in raw.annotations.into_iter().enumerate() {
        let ctx = format!("annotation {i} ({})", a.example_uid);
        warn_extra(&a.extra, &ctx, &mut warnings);
        let bbox = checked_box(&a.bbox, &ctx, &mut problems);
        let noun = checked_id(a.noun_category_id, "noun_category_id", &ctx, &mut problems);
        let verb = checked_id(a.verb_category_id, "verb_category_id", &ctx, &mut problems);
        if let (Some(bbox), Some(noun_id), Some(verb_id)) = (bbox, noun, verb) {
            let g = GroundTruthInstance {
                example_uid: a.example_uid,
                bbox,
                noun_id,
                verb_id,
                ttc: a.time_to_contact,
            };
            g.check(&taxonomy, &ctx, &mut problems);
            annotations.push(g);
        }
    }
    problems.into_result(context)?;
    crate::eval::validate_ground_truth(&annotations, &taxonomy)?;
    Ok(Loaded::new(GroundTruthSet { taxonomy, annotations }, warnings))
}

pub fn load_ground_truth(path: &Path) -> Result<Loaded<GroundTruthSet>> {
    parse_ground_truth(&read_text(path)?, path.parent(), &path.display().to_string())
}

pub fn ground_truth_to_string(set: &GroundTruthSet) -> String {
    to_json_text(&GroundTruthOut {
        taxonomy: &set.taxonomy,
        annotations: set
            .annotations
            .iter()
            .map(|g| AnnotationOut {
                example_uid: &g.example_uid,
                bbox: g.bbox.corners(),
                noun_category_id: g.noun_id,
                verb_category_id: g.verb_id,
                time_to_contact: g.ttc,
            })
            .collect(),
    })
}

pub fn write_ground_truth(set: &GroundTruthSet, path: &Path) -> Result<()> {
    write_bytes(path, ground_truth_to_string(set).as_bytes())
}

// ------------------------------------------------------------- submissions

#[derive(Deserialize)]
struct RawEntry {
    #[serde(rename = "box")]
    bbox: Vec<f64>,
    noun_category_id: i64,
    verb_category_id: i64,
    time_to_contact: f64,
    score: f64,
    #[serde(default)]
    source_id: Option<i64>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
struct RawSubmission {
    version: String,
    challenge: String,
    #[serde(default)]
    taxonomy: Option<RawTaxonomy>,
    #[serde(default)]
    provenance: Option<Value>,
    results: BTreeMap<String, Vec<RawEntry>>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Serialize)]
struct EntryOut {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    noun_category_id: u32,
    verb_category_id: u32,
    time_to_contact: f64,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_id: Option<u32>,
}

#[derive(Serialize)]
struct SubmissionOut<'a> {
    version: &'a str,
    challenge: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    taxonomy: Option<&'a Taxonomy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<&'a Value>,
    results: BTreeMap<&'a str, Vec<EntryOut>>,
}

/// A submission document: predictions plus optional taxonomy and
/// provenance record.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub version: String,
    pub taxonomy: Option<Taxonomy>,
    pub provenance: Option<Value>,
    pub predictions: PredictionSet,
}

impl Submission {
    pub fn new(predictions: PredictionSet) -> Self {
        Submission {
            version: SUBMISSION_VERSION.to_string(),
            taxonomy: None,
            provenance: None,
            predictions,
        }
    }

    pub fn with_taxonomy(mut self, taxonomy: Taxonomy) -> Self {
        self.taxonomy = Some(taxonomy);
        self
    }

    pub fn with_provenance(mut self, provenance: Value) -> Self {
        self.provenance = Some(provenance);
        self
    }

    /// Checks ids against `taxonomy` (or the embedded one) and the per-example
    /// export cap.
    pub fn validate(&self, taxonomy: Option<&Taxonomy>, max_exports: usize) -> Result<()> {
        let mut problems = Problems::default();
        let taxonomy = taxonomy.or(self.taxonomy.as_ref());
        for (uid, hyps) in self.predictions.iter() {
            if hyps.len() > max_exports {
                problems.push(format!("{uid}: {} hypotheses exceed the cap of {max_exports}", hyps.len()));
            }
            for (i, h) in hyps.iter().enumerate() {
                h.check(taxonomy, &format!("{uid}[{i}]"), &mut problems);
            }
        }
        problems.into_result("submission")
    }
}

pub fn parse_submission(text: &str, context: &str) -> Result<Loaded<Submission>> {
    let raw: RawSubmission = parse_json(text, context)?;
    let mut warnings = Vec::new();
    warn_extra(&raw.extra, context, &mut warnings);
    let mut problems = Problems::default();
    if raw.challenge != CHALLENGE {
        problems.push(format!("challenge must be {CHALLENGE:?}, got {:?}", raw.challenge));
    }
    let taxonomy = match raw.taxonomy {
        Some(t) => Some(t.into_taxonomy(&format!("{context}: taxonomy"), &mut warnings)?),
        None => None,
    };

    let mut predictions = PredictionSet::new();
    for (uid, entries) in raw.results {
        if uid.is_empty() {
            problems.push("empty example uid");
        }
        let mut hyps = Vec::with_capacity(entries.len());
        for (i, e) in entries.into_iter().enumerate() {
            let ctx = format!("{uid}[{i}]");
            warn_extra(&e.extra, &ctx, &mut warnings);
            let bbox = checked_box(&e.bbox, &ctx, &mut problems);
            let noun = checked_id(e.noun_category_id, "noun_category_id", &ctx, &mut problems);
            let verb = checked_id(e.verb_category_id, "verb_category_id", &ctx, &mut problems);
            let source_id = match e.source_id {
                Some(s) => match u32::try_from(s) {
                    Ok(s) => Some(s),
                    Err(_) => {
                        problems.push(format!("{ctx}: source_id {s} out of range"));
                        None
                    }
                },
                None => None,
            };
            if let (Some(bbox), Some(noun_id), Some(verb_id)) = (bbox, noun, verb) {
                let h = StaHypothesis {
                    bbox,
                    noun_id,
                    verb_id,
                    ttc: e.time_to_contact,
                    score: e.score,
                    source_id,
                };
                h.check(None, &ctx, &mut problems);
                if let Some(t) = &taxonomy {
                    check_ids(noun_id, verb_id, t, &ctx, &mut problems);
                }
                hyps.push(h);
            }
        }
        predictions.insert(uid, hyps);
    }
    problems.into_result(context)?;
    Ok(Loaded::new(
        Submission {
            version: raw.version,
            taxonomy,
            provenance: raw.provenance,
            predictions,
        },
        warnings,
    ))
}

pub fn load_predictions(path: &Path) -> Result<Loaded<Submission>> {
    parse_submission(&read_text(path)?, &path.display().to_string())
}

pub fn submission_to_string(sub: &Submission) -> String {
    to_json_text(&SubmissionOut {
        version: &sub.version,
        challenge: CHALLENGE,
        taxonomy: sub.taxonomy.as_ref(),
        provenance: sub.provenance.as_ref(),
        results: sub
            .predictions
            .iter()
            .map(|(uid, hyps)| {
                (
                    uid,
                    hyps.iter()
                        .map(|h| EntryOut {
                            bbox: h.bbox.corners(),
                            noun_category_id: h.noun_id,
                            verb_category_id: h.verb_id,
                            time_to_contact: h.ttc,
                            score: h.score,
                            source_id: h.source_id,
                        })
                        .collect(),
                )
            })
            .collect(),
    })
}

pub fn write_submission(sub: &Submission, path: &Path) -> Result<()> {
    write_bytes(path, submission_to_string(sub).as_bytes())
}

// -------------------------------------------------------- tensor container
//
// "VSTF" | version u32 | count u32 | count × entry
// entry: name_len u32 | name (UTF-8) | rank u32 | rank × dim u64 | data f32
// All integers and floats little-endian; entries sorted by name.

pub fn encode_tensors(map: &BTreeMap<String, FeatureTensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(map.len() as u32).to_le_bytes());
    for (name, t) in map {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                VistaError::Tensor(format!(
                    "truncated: need {n} bytes for {what} at offset {}, {} available",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<BTreeMap<String, FeatureTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != TENSOR_MAGIC {
        return Err(VistaError::Tensor("bad magic, expected \"VSTF\"".into()));
    }
    let version = r.u32("version")?;
    if version != TENSOR_VERSION {
        return Err(VistaError::Tensor(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut map = BTreeMap::new();
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| VistaError::Tensor(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            shape.push(usize::try_from(d).map_err(|_| VistaError::Tensor(format!("{name}: dimension {d} too large")))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| VistaError::Tensor(format!("{name}: shape {shape:?} overflows")))?;
        let raw = r.take(n, &format!("data of {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = FeatureTensor::new(shape, data).map_err(|e| VistaError::Tensor(format!("{name}: {e}")))?;
        if map.insert(name.clone(), tensor).is_some() {
            return Err(VistaError::Tensor(format!("duplicate tensor name {name:?}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(VistaError::Tensor(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(map)
}

pub fn read_tensor_file(path: &Path) -> Result<BTreeMap<String, FeatureTensor>> {
    let bytes = fs::read(path).map_err(|e| VistaError::io(path, e))?;
    decode_tensors(&bytes)
}

pub fn write_tensor_file(map: &BTreeMap<String, FeatureTensor>, path: &Path) -> Result<()> {
    write_bytes(path, &encode_tensors(map))
}
