//! Seeded synthetic ground truth and noisy multi-source predictions.
//!
//! All randomness comes from [`CounterRng`], a stateless generator indexed by
//! `(seed, stream, counter)`. Each example owns a stream, each prediction
//! source owns a stream, and each draw sits at a fixed counter, so outputs
//! are reproducible bit-for-bit from any language and the same draws are
//! reused when only a noise magnitude changes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Problems, Result, VistaError};
use crate::fusion::{self, FeatureTensor};
use crate::types::{Box2D, GroundTruthInstance, PredictionSet, StaHypothesis, Taxonomy};

pub const CANVAS_WIDTH: f64 = 1920.0;
pub const CANVAS_HEIGHT: f64 = 1080.0;
pub const MIN_BOX_SIDE: f64 = 32.0;
pub const MAX_BOX_SIDE: f64 = 480.0;
pub const TTC_RANGE: (f64, f64) = (0.1, 3.0);

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SOURCE_STREAM_BASE: u64 = 1 << 40;
const SCENARIO_DRAWS: u64 = 8;
const PERTURB_DRAWS: u64 = 16;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateless generator over `(seed, stream, counter)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
    stream: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        CounterRng { seed, stream }
    }

    pub fn bits(&self, counter: u64) -> u64 {
        splitmix64(self.seed ^ self.stream.wrapping_mul(GOLDEN) ^ counter)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.bits(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal from the uniforms at `counter` and `counter + 1`.
    pub fn normal(&self, counter: u64) -> f64 {
        let u1 = self.uniform(counter);
        let u2 = self.uniform(counter + 1);
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Integer in `0..n`; `n` must be positive.
    pub fn below(&self, counter: u64, n: usize) -> usize {
        ((self.uniform(counter) * n as f64) as usize).min(n - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub box_jitter_sigma: f64,
    pub label_flip_prob: f64,
    pub verb_flip_prob: f64,
    pub ttc_noise_sigma: f64,
    pub drop_prob: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            box_jitter_sigma: 0.0,
            label_flip_prob: 0.0,
            verb_flip_prob: 0.0,
            ttc_noise_sigma: 0.0,
            drop_prob: 0.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Problems::default();
        for (name, v) in [("box_jitter_sigma", self.box_jitter_sigma), ("ttc_noise_sigma", self.ttc_noise_sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("label_flip_prob", self.label_flip_prob),
            ("verb_flip_prob", self.verb_flip_prob),
            ("drop_prob", self.drop_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        problems.into_result("noise config")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_examples: usize,
    pub n_nouns: usize,
    pub n_verbs: usize,
    pub gts_per_example: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_examples: 20,
            n_nouns: 8,
            n_verbs: 5,
            gts_per_example: 3,
            seed: 0,
        }
    }
}

pub fn example_uid(index: usize) -> String {
    format!("ex_{index:05}")
}

pub fn generate_scenario(
    n_examples: usize,
    n_nouns: usize,
    n_verbs: usize,
    gts_per_example: usize,
    seed: u64,
) -> Result<(Taxonomy, Vec<GroundTruthInstance>)> {
    if n_examples == 0 || n_nouns == 0 || n_verbs == 0 || gts_per_example == 0 {
        return Err(VistaError::invalid("scenario", "all counts must be at least 1"));
    }
    let taxonomy = Taxonomy::synthetic(n_nouns, n_verbs)?;
    let mut gts = Vec::with_capacity(n_examples * gts_per_example);
    for e in 0..n_examples {
        let rng = CounterRng::new(seed, e as u64);
        let uid = example_uid(e);
        for g in 0..gts_per_example as u64 {
            let c = g * SCENARIO_DRAWS;
            let span = MAX_BOX_SIDE - MIN_BOX_SIDE;
            let w = MIN_BOX_SIDE + rng.uniform(c) * span;
            let h = MIN_BOX_SIDE + rng.uniform(c + 1) * span;
            let x1 = rng.uniform(c + 2) * (CANVAS_WIDTH - w);
            let y1 = rng.uniform(c + 3) * (CANVAS_HEIGHT - h);
            gts.push(GroundTruthInstance {
                example_uid: uid.clone(),
                bbox: Box2D::new(x1, y1, x1 + w, y1 + h)?,
                noun_id: rng.below(c + 4, n_nouns) as u32,
                verb_id: rng.below(c + 5, n_verbs) as u32,
                ttc: TTC_RANGE.0 + rng.uniform(c + 6) * (TTC_RANGE.1 - TTC_RANGE.0),
            });
        }
    }
    Ok((taxonomy, gts))
}

fn flip(rng: &CounterRng, c: u64, prob: f64, id: u32, n: usize) -> (u32, bool) {
    if n < 2 || rng.uniform(c) >= prob {
        return (id, false);
    }
    let offset = 1 + rng.below(c + 1, n - 1);
    (((id as usize + offset) % n) as u32, true)
}

/// One noisy copy of `gts` per source.
///
/// Score is `exp(-rms_corner_shift / 100)`, halved on a noun flip and scaled
/// by 0.75 on a verb flip, so an unperturbed copy scores 1. The ttc shift does
/// not enter the score, which keeps rankings fixed under ttc noise.
pub fn perturb_to_predictions(
    gts: &[GroundTruthInstance],
    taxonomy: &Taxonomy,
    noise: &NoiseConfig,
    n_sources: usize,
) -> Result<Vec<PredictionSet>> {
    noise.validate()?;
    let mut out = Vec::with_capacity(n_sources);
    for s in 0..n_sources {
        let rng = CounterRng::new(noise.seed, SOURCE_STREAM_BASE + s as u64);
        let mut set = PredictionSet::new();
        for (i, g) in gts.iter().enumerate() {
            let c = i as u64 * PERTURB_DRAWS;
            if rng.uniform(c + 14) < noise.drop_prob {
                continue;
            }
            let gc = g.bbox.corners();
            let mut pc = [0.0; 4];
            for k in 0..4 {
                pc[k] = gc[k] + noise.box_jitter_sigma * rng.normal(c + 2 * k as u64);
            }
            let pc = [
                pc[0].min(pc[2]).clamp(0.0, CANVAS_WIDTH),
                pc[1].min(pc[3]).clamp(0.0, CANVAS_HEIGHT),
                pc[0].max(pc[2]).clamp(0.0, CANVAS_WIDTH),
                pc[1].max(pc[3]).clamp(0.0, CANVAS_HEIGHT),
            ];
            let bbox = Box2D::new(pc[0], pc[1], pc[2], pc[3])?;
            if bbox.is_degenerate() {
                continue;
            }
            let ttc = (g.ttc + noise.ttc_noise_sigma * rng.normal(c + 8)).max(0.0);
            let (noun_id, noun_flipped) = flip(&rng, c + 10, noise.label_flip_prob, g.noun_id, taxonomy.n_nouns());
            let (verb_id, verb_flipped) = flip(&rng, c + 12, noise.verb_flip_prob, g.verb_id, taxonomy.n_verbs());

            let rms = (pc.iter().zip(gc).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / 4.0).sqrt();
            let mut score = (-rms / 100.0).exp();
            if noun_flipped {
                score *= 0.5;
            }
            if verb_flipped {
                score *= 0.75;
            }
            set.push(
                &g.example_uid,
                StaHypothesis {
                    bbox,
                    noun_id,
                    verb_id,
                    ttc,
                    score: score.max(f64::MIN_POSITIVE),
                    source_id: None,
                },
            );
        }
        out.push(set);
    }
    Ok(out)
}

/// Names of the non-parameter tensors in a fusion demo bundle.
pub const DEMO_SEQUENCE: &str = "sequence";
pub const DEMO_FEATURE_MAP: &str = "feature_map";
pub const DEMO_ROIS: &str = "rois";

const DEMO_STREAM: u64 = 1 << 41;

/// A random but seeded bundle for the fusion kernels: an 8 × 16 clip
/// sequence, a 6 × 4 × 4 feature map, five 10-dim ROI features, and probe,
/// FiLM and context-MLP parameters sized to fit them.
pub fn fusion_demo_bundle(seed: u64) -> BTreeMap<String, FeatureTensor> {
    let rng = CounterRng::new(seed, DEMO_STREAM);
    let mut counter = 0u64;
    let mut tensor = |shape: Vec<usize>, scale: f64| {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                counter += 2;
                (scale * rng.normal(counter)) as f32
            })
            .collect();
        FeatureTensor::new(shape, data).expect("finite draws")
    };
    let (t, d_in, d_att, d_tok, channels, roi, proj, hidden) = (8, 16, 8, 12, 6, 10, 4, 16);
    let mut map = BTreeMap::new();
    map.insert(DEMO_SEQUENCE.to_string(), tensor(vec![t, d_in], 1.0));
    map.insert(DEMO_FEATURE_MAP.to_string(), tensor(vec![channels, 4, 4], 1.0));
    map.insert(DEMO_ROIS.to_string(), tensor(vec![5, roi], 1.0));
    map.insert(fusion::PROBE_KEY.to_string(), tensor(vec![d_in, d_att], 0.3));
    map.insert(fusion::PROBE_VALUE.to_string(), tensor(vec![d_in, d_tok], 0.3));
    map.insert(fusion::PROBE_QUERY.to_string(), tensor(vec![d_att], 1.0));
    map.insert(fusion::FILM_GAMMA.to_string(), tensor(vec![d_tok, channels], 0.1));
    map.insert(fusion::FILM_GAMMA_BIAS.to_string(), tensor(vec![channels], 0.1));
    map.insert(fusion::FILM_BETA.to_string(), tensor(vec![d_tok, channels], 0.1));
    map.insert(fusion::FILM_BETA_BIAS.to_string(), tensor(vec![channels], 0.1));
    map.insert(fusion::CTX_TOKEN.to_string(), tensor(vec![d_tok, proj], 0.3));
    map.insert(fusion::CTX_TOKEN_BIAS.to_string(), tensor(vec![proj], 0.1));
    map.insert(fusion::CTX_LAYER1.to_string(), tensor(vec![roi + proj, hidden], 0.3));
    map.insert(fusion::CTX_LAYER1_BIAS.to_string(), tensor(vec![hidden], 0.1));
    map.insert(fusion::CTX_LAYER2.to_string(), tensor(vec![hidden, roi], 0.3));
    map.insert(fusion::CTX_LAYER2_BIAS.to_string(), tensor(vec![roi], 0.1));
    map
}
