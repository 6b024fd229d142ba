#![allow(dead_code)]

use vista_core::postprocess::ProposalRecord;
use vista_core::synth::CounterRng;
use vista_core::{Box2D, PredictionSet, StaHypothesis, Taxonomy};

/// Sequential view over a counter generator.
pub struct Draws {
    rng: CounterRng,
    counter: u64,
}

impl Draws {
    pub fn new(seed: u64) -> Self {
        Draws {
            rng: CounterRng::new(seed, 0xACCE),
            counter: 0,
        }
    }

    pub fn uniform(&mut self) -> f64 {
        self.counter += 1;
        self.rng.uniform(self.counter)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.uniform() * (hi - lo)
    }

    pub fn normal(&mut self) -> f64 {
        self.counter += 2;
        self.rng.normal(self.counter)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.counter += 1;
        self.rng.below(self.counter, n)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.below(i + 1);
            v.swap(i, j);
        }
    }

    pub fn box_in(&mut self, w: f64, h: f64, min_side: f64, max_side: f64) -> Box2D {
        let bw = self.range(min_side, max_side);
        let bh = self.range(min_side, max_side);
        let x1 = self.range(0.0, w - bw);
        let y1 = self.range(0.0, h - bh);
        Box2D::new(x1, y1, x1 + bw, y1 + bh).unwrap()
    }
}

pub fn random_proposal(d: &mut Draws, taxonomy: &Taxonomy) -> ProposalRecord {
    ProposalRecord {
        proposal_box: d.box_in(640.0, 480.0, 16.0, 200.0),
        objectness: d.range(0.05, 1.0),
        noun_logits: (0..taxonomy.n_nouns()).map(|_| 2.0 * d.normal()).collect(),
        verb_logits: (0..taxonomy.n_verbs()).map(|_| 2.0 * d.normal()).collect(),
        box_deltas: (0..taxonomy.n_nouns())
            .map(|_| [0.1 * d.normal(), 0.1 * d.normal(), 0.2 * d.normal(), 0.2 * d.normal()])
            .collect(),
        ttc_raw: d.normal(),
        quality: d.range(0.1, 1.0),
    }
}

pub fn random_hypothesis(d: &mut Draws, n_nouns: usize, n_verbs: usize) -> StaHypothesis {
    StaHypothesis {
        bbox: d.box_in(200.0, 200.0, 5.0, 80.0),
        noun_id: d.below(n_nouns) as u32,
        verb_id: d.below(n_verbs) as u32,
        ttc: d.range(0.0, 3.0),
        score: d.range(0.01, 1.0),
        source_id: None,
    }
}

pub fn random_prediction_set(d: &mut Draws, n_examples: usize, per_example: usize, taxonomy: &Taxonomy) -> PredictionSet {
    let mut set = PredictionSet::new();
    for e in 0..n_examples {
        let n = d.below(per_example + 1);
        let hyps = (0..n)
            .map(|_| random_hypothesis(d, taxonomy.n_nouns(), taxonomy.n_verbs()))
            .collect();
        set.insert(format!("clip_{e:03}"), hyps);
    }
    set
}
