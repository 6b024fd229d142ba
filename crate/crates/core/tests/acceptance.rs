//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fail.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{random_prediction_set, random_proposal, Draws};
use vista_core::ensemble::{ensemble_predictions, group_hypotheses, merge_group, EnsembleConfig};
use vista_core::eval::oracle::brute_force_evaluate;
use vista_core::eval::{evaluate, EvalConfig, EvalReport, MatchVariant};
use vista_core::fusion::{
    attentive_probe, film_modulate, roi_context_fuse, ContextMlpParams, FeatureTensor, FilmParams, Linear, ProbeParams,
};
use vista_core::io::{self, GroundTruthSet, Submission};
use vista_core::postprocess::{class_aware_nms, expand_hypotheses, run_inference, ttc_from_raw, InferenceConfig};
use vista_core::synth::{generate_scenario, perturb_to_predictions, NoiseConfig};
use vista_core::types::canonical_cmp;
use vista_core::{Box2D, GroundTruthInstance, PredictionSet, StaHypothesis, Taxonomy, VistaError};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ------------------------------------------------------------------ 1

fn tiny_instance(seed: u64) -> (Taxonomy, Vec<GroundTruthInstance>, PredictionSet) {
    let mut d = Draws::new(seed);
    let n_examples = 1 + d.below(5);
    let n_nouns = 1 + d.below(4);
    let n_verbs = 1 + d.below(3);
    let taxonomy = Taxonomy::synthetic(n_nouns, n_verbs).unwrap();
    let ttcs = [0.5, 0.75, 1.0, 1.25];
    let grid_box = |d: &mut Draws| {
        let (x, y) = (d.below(8) as f64, d.below(8) as f64);
        let (w, h) = (1 + d.below(4), 1 + d.below(4));
        Box2D::new(x, y, x + w as f64, y + h as f64).unwrap()
    };

    let mut gts: Vec<GroundTruthInstance> = Vec::new();
    for e in 0..n_examples {
        for _ in 0..1 + d.below(3) {
            let g = GroundTruthInstance {
                example_uid: format!("ex_{e}"),
                bbox: grid_box(&mut d),
                noun_id: d.below(n_nouns) as u32,
                verb_id: d.below(n_verbs) as u32,
                ttc: ttcs[d.below(4)],
            };
            if !gts.contains(&g) {
                gts.push(g);
            }
        }
    }

    let mut per_class = vec![0usize; n_nouns];
    let mut preds = PredictionSet::new();
    for e in 0..n_examples {
        let uid = format!("ex_{e}");
        let mine: Vec<&GroundTruthInstance> = gts.iter().filter(|g| g.example_uid == uid).collect();
        for _ in 0..d.below(7) {
            let h = if d.chance(0.65) {
                let g = mine[d.below(mine.len())];
                let shift = [-1.0, 0.0, 0.0, 1.0][d.below(4)];
                let [x1, y1, x2, y2] = g.bbox.corners();
                StaHypothesis {
                    bbox: Box2D::new(x1 + shift, y1, x2, y2 + [0.0, 1.0][d.below(2)]).unwrap_or(g.bbox),
                    noun_id: if d.chance(0.85) { g.noun_id } else { d.below(n_nouns) as u32 },
                    verb_id: if d.chance(0.7) { g.verb_id } else { d.below(n_verbs) as u32 },
                    ttc: g.ttc + [0.0, 0.1, -0.2, 0.25, 0.3][d.below(5)],
                    score: [0.2, 0.4, 0.6, 0.8, 1.0][d.below(5)],
                    source_id: None,
                }
            } else {
                StaHypothesis {
                    bbox: grid_box(&mut d),
                    noun_id: d.below(n_nouns) as u32,
                    verb_id: d.below(n_verbs) as u32,
                    ttc: ttcs[d.below(4)],
                    score: [0.2, 0.4, 0.6, 0.8, 1.0][d.below(5)],
                    source_id: None,
                }
            };
            if per_class[h.noun_id as usize] < 6 {
                per_class[h.noun_id as usize] += 1;
                preds.push(&uid, h);
            }
        }
    }
    (taxonomy, gts, preds)
}

fn reports_agree(a: &EvalReport, b: &EvalReport, tol: f64) -> std::result::Result<(), String> {
    for v in MatchVariant::ALL {
        ensure!((a.get(v) - b.get(v)).abs() <= tol, "{}: {} vs {}", v.label(), a.get(v), b.get(v));
    }
    ensure!(
        a.per_noun_ap.keys().eq(b.per_noun_ap.keys()),
        "class sets differ"
    );
    for (noun, aps) in &a.per_noun_ap {
        for v in MatchVariant::ALL {
            let (x, y) = (aps.get(v), b.per_noun_ap[noun].get(v));
            ensure!((x - y).abs() <= tol, "noun {noun} {}: {x} vs {y}", v.label());
        }
    }
    ensure!(a.counts == b.counts, "match counts differ");
    Ok(())
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = EvalConfig::default();
    let (mut nontrivial, n) = (0, 400u64);
    for seed in 0..n {
        let (t, gts, preds) = tiny_instance(seed);
        let fast = evaluate(&preds, &gts, &t, &cfg).map_err(|e| e.to_string())?;
        let slow = brute_force_evaluate(&preds, &gts, &t, &cfg).map_err(|e| e.to_string())?;
        reports_agree(&fast, &slow, 1e-9).map_err(|e| format!("seed {seed}: {e}"))?;
        if fast.map_noun > 0.0 && fast.map_noun < 100.0 {
            nontrivial += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(nontrivial >= n / 4, "only {nontrivial} instances had a non-trivial mAP");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{n} instances ({nontrivial} with 0 < mAP < 100), {elapsed:.2?}"))
}

// ------------------------------------------------------------------ 2

fn single(uid: &str, b: Box2D, noun: u32, verb: u32, ttc: f64) -> (PredictionSet, Vec<GroundTruthInstance>) {
    let gt = GroundTruthInstance {
        example_uid: uid.into(),
        bbox: Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap(),
        noun_id: noun,
        verb_id: verb,
        ttc: 1.0,
    };
    let mut preds = PredictionSet::new();
    preds.insert(
        uid,
        vec![StaHypothesis {
            bbox: b,
            noun_id: noun,
            verb_id: verb,
            ttc,
            score: 0.9,
            source_id: None,
        }],
    );
    (preds, vec![gt])
}

fn protocol_fidelity() -> Outcome {
    let t = Taxonomy::synthetic(2, 2).unwrap();
    let cfg = EvalConfig::default();
    let maps = |r: &EvalReport| MatchVariant::ALL.map(|v| r.get(v));

    let half = Box2D::new(0.0, 0.0, 10.0, 5.0).unwrap();
    ensure!(vista_core::iou(&half, &Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap()) == 0.5, "fixture iou");
    let (p, g) = single("a", half, 1, 0, 1.0);
    let r = evaluate(&p, &g, &t, &cfg).map_err(|e| e.to_string())?;
    ensure!(maps(&r) == [0.0; 4], "iou = 0.5 matched: {:?}", maps(&r));

    let (p, g) = single("a", Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap(), 1, 0, 1.30);
    let r = evaluate(&p, &g, &t, &cfg).map_err(|e| e.to_string())?;
    ensure!(
        r.map_noun == 100.0 && r.map_noun_verb == 100.0 && r.map_noun_ttc == 0.0 && r.map_overall == 0.0,
        "ttc error 0.30 gave {:?}",
        maps(&r)
    );

    let (t2, gts) = generate_scenario(12, 6, 4, 3, 5).unwrap();
    let mut copies = PredictionSet::new();
    for g in &gts {
        copies.push(
            &g.example_uid,
            StaHypothesis {
                bbox: g.bbox,
                noun_id: g.noun_id,
                verb_id: g.verb_id,
                ttc: g.ttc,
                score: 1.0,
                source_id: None,
            },
        );
    }
    let r = evaluate(&copies, &gts, &t2, &cfg).map_err(|e| e.to_string())?;
    ensure!(maps(&r) == [100.0; 4], "perfect copies gave {:?}", maps(&r));
    let table = r.to_table();
    ensure!(table.matches("100.00").count() == 4, "table: {table}");
    Ok("iou = 0.5 rejected; ttc error 0.30 splits variants; copies give 100.00".into())
}

// ------------------------------------------------------------------ 3

fn noise_grid() -> Vec<NoiseConfig> {
    let mut out = Vec::new();
    for &(j, l, v, t, d) in &[
        (0.0, 0.0, 0.0, 0.0, 0.0),
        (5.0, 0.05, 0.1, 0.1, 0.0),
        (15.0, 0.1, 0.2, 0.2, 0.1),
        (30.0, 0.2, 0.3, 0.3, 0.2),
        (60.0, 0.3, 0.5, 0.6, 0.3),
    ] {
        out.push(NoiseConfig {
            box_jitter_sigma: j,
            label_flip_prob: l,
            verb_flip_prob: v,
            ttc_noise_sigma: t,
            drop_prob: d,
            seed: 0,
        });
    }
    out
}

fn metric_nesting() -> Outcome {
    let cfg = EvalConfig::default();
    let mut checked = 0;
    let mut violations = Vec::new();
    for seed in 1..=40u64 {
        let (t, gts) = generate_scenario(15, 6, 4, 3, seed).map_err(|e| e.to_string())?;
        for noise in noise_grid() {
            let noise = NoiseConfig { seed, ..noise };
            let sources = perturb_to_predictions(&gts, &t, &noise, 2).map_err(|e| e.to_string())?;
            let (merged, _) = ensemble_predictions(&sources, &EnsembleConfig::default()).map_err(|e| e.to_string())?;
            for preds in sources.iter().chain([&merged]) {
                let r = evaluate(preds, &gts, &t, &cfg).map_err(|e| e.to_string())?;
                let mid = r.map_noun_verb.min(r.map_noun_ttc);
                if !(r.map_overall <= mid + 1e-9 && mid <= r.map_noun + 1e-9) {
                    violations.push(format!(
                        "seed {seed} jitter {}: overall {} nv {} nt {} noun {}",
                        noise.box_jitter_sigma, r.map_overall, r.map_noun_verb, r.map_noun_ttc, r.map_noun
                    ));
                }
                checked += 1;
            }
        }
    }
    ensure!(violations.is_empty(), "{} of {checked} violate: {}", violations.len(), violations[0]);
    Ok(format!("{checked} generated instances nest"))
}

// ------------------------------------------------------------------ 4

fn noise_monotonicity() -> Outcome {
    let cfg = EvalConfig::default();
    let levels = [0.0, 10.0, 40.0, 120.0];
    let mut monotone = 0;
    let mut offenders = Vec::new();
    for seed in 1..=20u64 {
        let (t, gts) = generate_scenario(30, 8, 5, 3, seed).map_err(|e| e.to_string())?;
        let mut series = Vec::new();
        for &sigma in &levels {
            let noise = NoiseConfig { box_jitter_sigma: sigma, seed, ..NoiseConfig::default() };
            let preds = &perturb_to_predictions(&gts, &t, &noise, 1).map_err(|e| e.to_string())?[0];
            let r = evaluate(preds, &gts, &t, &cfg).map_err(|e| e.to_string())?;
            if sigma == 0.0 {
                let all = MatchVariant::ALL.map(|v| r.get(v));
                ensure!(all == [100.0; 4], "seed {seed}: zero noise gave {all:?}");
            }
            series.push(r.map_overall);
        }
        if series.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        } else {
            offenders.push(format!("seed {seed}: {series:.2?}"));
        }
    }
    ensure!(monotone >= 19, "only {monotone}/20 monotone: {offenders:?}");
    Ok(format!("{monotone}/20 seeds non-increasing; zero noise = 100.00 everywhere"))
}

// ------------------------------------------------------------------ 5

fn postprocess_chain() -> Outcome {
    let mut d = Draws::new(5);
    for trial in 0..1000 {
        let n = d.below(40);
        let hyps: Vec<StaHypothesis> = (0..n).map(|_| common::random_hypothesis(&mut d, 4, 3)).collect();
        let thr = d.range(0.2, 0.8);
        let once = class_aware_nms(&hyps, thr);
        let twice = class_aware_nms(&once, thr);
        ensure!(once == twice, "trial {trial}: nms not idempotent");
    }

    let taxonomy = Taxonomy::synthetic(6, 4).unwrap();
    let cfg = InferenceConfig::default();
    for trial in 0..30 {
        let mut proposals: Vec<_> = (0..1 + d.below(120)).map(|_| random_proposal(&mut d, &taxonomy)).collect();
        let export = |p: &[vista_core::postprocess::ProposalRecord]| {
            let mut set = PredictionSet::new();
            set.insert("clip", run_inference(p, &taxonomy, &cfg, Some((640.0, 480.0))).unwrap());
            io::submission_to_string(&Submission::new(set))
        };
        let reference = export(&proposals);
        d.shuffle(&mut proposals);
        ensure!(export(&proposals) == reference, "trial {trial}: permuted export differs");
    }

    // 400 disjoint proposals: the cap keeps 300 refined boxes, exports stop at 100.
    let mut proposals = Vec::new();
    for i in 0..400 {
        let (x, y) = ((i % 20) as f64 * 60.0, (i / 20) as f64 * 60.0);
        let mut p = random_proposal(&mut d, &taxonomy);
        p.proposal_box = Box2D::new(x, y, x + 40.0, y + 40.0).unwrap();
        p.box_deltas = vec![[0.0; 4]; taxonomy.n_nouns()];
        proposals.push(p);
    }
    let expanded = expand_hypotheses(&proposals, &taxonomy, &cfg, None).map_err(|e| e.to_string())?;
    let distinct: BTreeSet<[u64; 4]> = expanded.iter().map(|h| h.bbox.corners().map(f64::to_bits)).collect();
    ensure!(distinct.len() == 300, "{} proposals survived the cap", distinct.len());
    let out = run_inference(&proposals, &taxonomy, &cfg, None).map_err(|e| e.to_string())?;
    ensure!(out.len() == 100, "{} exported", out.len());
    ensure!(
        out.windows(2).all(|w| canonical_cmp(&w[0], &w[1]).is_le()),
        "export not sorted"
    );
    Ok("nms idempotent on 1000 sets; permuted inputs export byte-identically; caps 300/100 hold".into())
}

// ------------------------------------------------------------------ 6

fn tensor(d: &mut Draws, shape: Vec<usize>, scale: f64) -> FeatureTensor {
    let n = shape.iter().product();
    FeatureTensor::new(shape, (0..n).map(|_| (scale * d.normal()) as f32).collect()).unwrap()
}

fn dense(x: &[f64], w: &FeatureTensor, b: Option<&FeatureTensor>) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let mut y = vec![0.0; cols];
    for j in 0..cols {
        let mut acc = b.map_or(0.0, |b| b.data()[j] as f64);
        for i in 0..rows {
            acc += x[i] * w.data()[i * cols + j] as f64;
        }
        y[j] = acc;
    }
    y
}

fn probe_oracle(seq: &FeatureTensor, k: &FeatureTensor, v: &FeatureTensor, q: &FeatureTensor) -> (Vec<f64>, Vec<f64>) {
    let rows = seq.shape()[0];
    let scale = (k.shape()[1] as f64).sqrt();
    let qv: Vec<f64> = q.data().iter().map(|&x| x as f64).collect();
    let mut logits = Vec::new();
    let mut values = Vec::new();
    for t in 0..rows {
        let x: Vec<f64> = seq.row(t).iter().map(|&x| x as f64).collect();
        let key = dense(&x, k, None);
        let mut dot = 0.0;
        for (a, b) in key.iter().zip(&qv) {
            dot += a * b;
        }
        logits.push(dot / scale);
        values.push(dense(&x, v, None));
    }
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let w: Vec<f64> = e.iter().map(|x| x / z).collect();
    let mut token = vec![0.0; v.shape()[1]];
    for t in 0..rows {
        for j in 0..token.len() {
            token[j] += w[t] * values[t][j];
        }
    }
    (w, token)
}

fn fusion_kernels() -> Outcome {
    let mut d = Draws::new(6);
    for case in 0..100 {
        let (t, d_in, d_att, d_tok) = (1 + d.below(12), 1 + d.below(10), 1 + d.below(8), 1 + d.below(8));
        let seq = tensor(&mut d, vec![t, d_in], 1.0);
        let (k, v, q) = (
            tensor(&mut d, vec![d_in, d_att], 0.5),
            tensor(&mut d, vec![d_in, d_tok], 0.5),
            tensor(&mut d, vec![d_att], 1.0),
        );
        let params = ProbeParams::new(k.clone(), v.clone(), q.clone()).map_err(|e| e.to_string())?;
        let out = attentive_probe(&seq, &params).map_err(|e| e.to_string())?;
        let (w_ref, tok_ref) = probe_oracle(&seq, &k, &v, &q);
        let sum: f64 = out.weights.iter().map(|&w| w as f64).sum();
        ensure!((sum - 1.0).abs() <= 1e-6, "case {case}: weights sum {sum}");
        for (a, b) in out.weights.iter().zip(&w_ref) {
            ensure!((*a as f64 - b).abs() <= 1e-6, "case {case}: weight {a} vs {b}");
        }
        for (a, b) in out.token.iter().zip(&tok_ref) {
            ensure!((*a as f64 - b).abs() <= 1e-6 * (1.0 + b.abs()), "case {case}: token {a} vs {b}");
        }
        let mut order: Vec<usize> = (0..t).collect();
        d.shuffle(&mut order);
        let permuted = FeatureTensor::new(
            vec![t, d_in],
            order.iter().flat_map(|&r| seq.row(r).to_vec()).collect(),
        )
        .unwrap();
        let out_p = attentive_probe(&permuted, &params).map_err(|e| e.to_string())?;
        for (a, b) in out.token.iter().zip(&out_p.token) {
            ensure!((a - b).abs() <= 1e-6, "case {case}: permuted token {a} vs {b}");
        }

        let (c, h, w) = (1 + d.below(6), 1 + d.below(5), 1 + d.below(5));
        let x = tensor(&mut d, vec![c, h, w], 3.0);
        let same = film_modulate(&x, &out.token, &FilmParams::identity(d_tok, c)).map_err(|e| e.to_string())?;
        ensure!(
            same.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "case {case}: identity FiLM changed bits"
        );
        let (gw, gb, bw, bb) = (
            tensor(&mut d, vec![d_tok, c], 0.3),
            tensor(&mut d, vec![c], 1.0),
            tensor(&mut d, vec![d_tok, c], 0.3),
            tensor(&mut d, vec![c], 1.0),
        );
        let film = FilmParams::new(
            Linear::new(gw.clone(), Some(gb.clone())).unwrap(),
            Linear::new(bw.clone(), Some(bb.clone())).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let modulated = film_modulate(&x, &out.token, &film).map_err(|e| e.to_string())?;
        let tok: Vec<f64> = out.token.iter().map(|&v| v as f64).collect();
        let (gamma, beta) = (dense(&tok, &gw, Some(&gb)), dense(&tok, &bw, Some(&bb)));
        for ch in 0..c {
            for i in 0..h * w {
                let idx = ch * h * w + i;
                let expect = (gamma[ch] as f32) as f64 * x.data()[idx] as f64 + (beta[ch] as f32) as f64;
                let got = modulated.data()[idx] as f64;
                ensure!((got - expect).abs() <= 1e-6 * (1.0 + expect.abs()), "case {case}: film {got} vs {expect}");
            }
        }

        let (roi_dim, proj, hidden) = (1 + d.below(8), 1 + d.below(5), 1 + d.below(8));
        let roi = tensor(&mut d, vec![roi_dim], 2.0);
        let tp = tensor(&mut d, vec![d_tok, proj], 0.5);
        let tpb = tensor(&mut d, vec![proj], 0.5);
        let l1 = tensor(&mut d, vec![roi_dim + proj, hidden], 0.5);
        let l1b = tensor(&mut d, vec![hidden], 0.5);
        let zero = ContextMlpParams::new(
            Linear::new(tp.clone(), Some(tpb.clone())).unwrap(),
            Linear::new(l1.clone(), Some(l1b.clone())).unwrap(),
            Linear::new(FeatureTensor::zeros(vec![hidden, roi_dim]), Some(FeatureTensor::zeros(vec![roi_dim]))).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let fused = roi_context_fuse(roi.data(), &out.token, &zero).map_err(|e| e.to_string())?;
        ensure!(
            fused.iter().zip(roi.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "case {case}: zero-residual MLP is not an identity"
        );
        let l2 = tensor(&mut d, vec![hidden, roi_dim], 0.5);
        let l2b = tensor(&mut d, vec![roi_dim], 0.5);
        let mlp = ContextMlpParams::new(
            Linear::new(tp.clone(), Some(tpb.clone())).unwrap(),
            Linear::new(l1.clone(), Some(l1b.clone())).unwrap(),
            Linear::new(l2.clone(), Some(l2b.clone())).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let fused = roi_context_fuse(roi.data(), &out.token, &mlp).map_err(|e| e.to_string())?;
        let mut joined: Vec<f64> = roi.data().iter().map(|&v| v as f64).collect();
        joined.extend(dense(&tok, &tp, Some(&tpb)));
        let hid: Vec<f64> = dense(&joined, &l1, Some(&l1b)).into_iter().map(|v| v.max(0.0)).collect();
        let res = dense(&hid, &l2, Some(&l2b));
        for i in 0..roi_dim {
            let expect = roi.data()[i] as f64 + res[i];
            let got = fused[i] as f64;
            ensure!((got - expect).abs() <= 1e-5 * (1.0 + expect.abs()), "case {case}: mlp {got} vs {expect}");
        }
    }
    Ok("100 random shapes: FiLM identity bit-equal, zero MLP exact, probe within 1e-6 of loop oracle".into())
}

// ------------------------------------------------------------------ 7

fn ensemble_sanity() -> Outcome {
    let mut d = Draws::new(7);
    let taxonomy = Taxonomy::synthetic(5, 3).unwrap();
    let cfg = EnsembleConfig::default();
    let key = |h: &StaHypothesis| (h.bbox.corners().map(f64::to_bits), h.noun_id, h.verb_id, h.ttc.to_bits());
    for trial in 0..40 {
        let mut single = PredictionSet::new();
        for e in 0..3 {
            let proposals: Vec<_> = (0..d.below(40)).map(|_| random_proposal(&mut d, &taxonomy)).collect();
            let hyps = run_inference(&proposals, &taxonomy, &InferenceConfig::default(), None).unwrap();
            single.insert(format!("clip_{e}"), hyps);
        }
        for n in 1..=4 {
            let sources = vec![single.clone(); n];
            let (merged, _) = ensemble_predictions(&sources, &cfg).map_err(|e| e.to_string())?;
            for (uid, hyps) in single.iter() {
                let got: Vec<_> = merged.get(uid).unwrap_or(&[]).iter().map(key).collect();
                let want: Vec<_> = hyps.iter().map(key).collect();
                ensure!(got == want, "trial {trial}, {n} copies: ranking of {uid} changed");
            }
        }
    }

    let (t, gts) = generate_scenario(20, 4, 3, 4, 3).unwrap();
    let noise = NoiseConfig { box_jitter_sigma: 12.0, ttc_noise_sigma: 0.1, seed: 3, ..NoiseConfig::default() };
    let sources = perturb_to_predictions(&gts, &t, &noise, 4).unwrap();
    let mut groups_checked = 0;
    for uid in sources[0].uids() {
        let pooled: Vec<StaHypothesis> = sources
            .iter()
            .enumerate()
            .flat_map(|(s, set)| {
                set.get(uid).unwrap_or(&[]).iter().cloned().map(move |mut h| {
                    h.source_id = Some(s as u32);
                    h
                })
            })
            .collect();
        for g in group_hypotheses(&pooled, &cfg) {
            let m = merge_group(&g, &cfg, 4).map_err(|e| e.to_string())?;
            for k in 0..4 {
                let lo = g.members.iter().map(|h| h.bbox.corners()[k]).fold(f64::INFINITY, f64::min);
                let hi = g.members.iter().map(|h| h.bbox.corners()[k]).fold(f64::NEG_INFINITY, f64::max);
                let c = m.bbox.corners()[k];
                ensure!(lo <= c && c <= hi, "{uid}: corner {k} = {c} outside [{lo}, {hi}]");
            }
            let lo = g.members.iter().map(|h| h.ttc).fold(f64::INFINITY, f64::min);
            let hi = g.members.iter().map(|h| h.ttc).fold(f64::NEG_INFINITY, f64::max);
            ensure!(lo <= m.ttc && m.ttc <= hi, "{uid}: ttc {} outside [{lo}, {hi}]", m.ttc);
            groups_checked += 1;
        }
    }

    let hyp = |x: f64, score: f64| StaHypothesis {
        bbox: Box2D::new(x, 0.0, x + 10.0, 10.0).unwrap(),
        noun_id: 0,
        verb_id: 0,
        ttc: 1.0,
        score,
        source_id: None,
    };
    let (a, b, c) = (hyp(0.0, 0.9), hyp(2.0, 0.8), hyp(4.0, 0.7));
    let groups = group_hypotheses(&[c.clone(), a.clone(), b.clone()], &cfg);
    ensure!(groups.len() == 2, "{} groups in the chain trace", groups.len());
    ensure!(groups[0].members == vec![a, b], "first group wrong");
    ensure!(groups[1].members == vec![c], "second group wrong");
    Ok(format!(
        "identical copies keep rankings; {groups_checked} merged groups inside hull; chain trace gives {{A,B}}, {{C}}"
    ))
}

// ------------------------------------------------------------------ 8

fn softplus_ttc() -> Outcome {
    let at_zero = ttc_from_raw(0.0).map_err(|e| e.to_string())?;
    ensure!((at_zero - std::f64::consts::LN_2).abs() <= 1e-12, "ttc(0) = {at_zero}");
    for raw in [750.0, -750.0] {
        let v = ttc_from_raw(raw).map_err(|e| e.to_string())?;
        ensure!(v.is_finite() && v >= 0.0, "ttc({raw}) = {v}");
    }
    ensure!(ttc_from_raw(750.0).unwrap() == 750.0, "ttc(750) should be 750");
    let mut raw = -800.0;
    while raw <= 800.0 {
        let v = ttc_from_raw(raw).map_err(|e| e.to_string())?;
        ensure!(v.is_finite() && v >= 0.0, "ttc({raw}) = {v}");
        raw += 0.173;
    }
    Ok(format!("ttc(0) = {at_zero:.15}; finite and >= 0 over [-800, 800]"))
}

// ------------------------------------------------------------------ 9

fn random_ground_truth(d: &mut Draws) -> GroundTruthSet {
    let taxonomy = Taxonomy::synthetic(1 + d.below(6), 1 + d.below(4)).unwrap();
    let mut annotations: Vec<GroundTruthInstance> = Vec::new();
    for e in 0..1 + d.below(6) {
        for _ in 0..1 + d.below(4) {
            annotations.push(GroundTruthInstance {
                example_uid: format!("video_{e}_{}", d.below(1000)),
                bbox: d.box_in(1920.0, 1080.0, 1.0, 700.0),
                noun_id: d.below(taxonomy.n_nouns()) as u32,
                verb_id: d.below(taxonomy.n_verbs()) as u32,
                ttc: d.range(0.0, 5.0),
            });
        }
    }
    GroundTruthSet { taxonomy, annotations }
}

fn random_tensors(d: &mut Draws) -> BTreeMap<String, FeatureTensor> {
    let mut map = BTreeMap::new();
    for i in 0..d.below(6) {
        let rank = d.below(4);
        let shape: Vec<usize> = (0..rank).map(|_| d.below(5)).collect();
        map.insert(format!("t{i}/{}", d.below(100)), tensor(d, shape, 10.0));
    }
    map
}

fn io_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut d = Draws::new(9);
    for i in 0..50 {
        let taxonomy = Taxonomy::synthetic(1 + d.below(5), 1 + d.below(5)).unwrap();
        let n_examples = 1 + d.below(5);
        let mut sub = Submission::new(random_prediction_set(&mut d, n_examples, 8, &taxonomy));
        if d.chance(0.5) {
            sub = sub.with_taxonomy(taxonomy).with_provenance(serde_json::json!({"trial": i, "x": d.uniform()}));
        }
        let p = dir.path().join(format!("sub_{i}.json"));
        io::write_submission(&sub, &p).map_err(|e| e.to_string())?;
        let first = std::fs::read(&p).unwrap();
        let back = io::load_predictions(&p).map_err(|e| e.to_string())?.value;
        ensure!(back == sub, "submission {i} changed on reload");
        io::write_submission(&back, &p).unwrap();
        ensure!(std::fs::read(&p).unwrap() == first, "submission {i} bytes differ");

        let gt = random_ground_truth(&mut d);
        let p = dir.path().join(format!("gt_{i}.json"));
        io::write_ground_truth(&gt, &p).map_err(|e| e.to_string())?;
        let first = std::fs::read(&p).unwrap();
        let back = io::load_ground_truth(&p).map_err(|e| e.to_string())?.value;
        ensure!(back == gt, "ground truth {i} changed on reload");
        io::write_ground_truth(&back, &p).unwrap();
        ensure!(std::fs::read(&p).unwrap() == first, "ground truth {i} bytes differ");

        let tensors = random_tensors(&mut d);
        let p = dir.path().join(format!("t_{i}.vstf"));
        io::write_tensor_file(&tensors, &p).map_err(|e| e.to_string())?;
        let first = std::fs::read(&p).unwrap();
        let back = io::read_tensor_file(&p).map_err(|e| e.to_string())?;
        ensure!(back == tensors, "tensors {i} changed on reload");
        io::write_tensor_file(&back, &p).unwrap();
        ensure!(std::fs::read(&p).unwrap() == first, "tensors {i} bytes differ");
    }

    let good = r#"{"version": "1.0", "challenge": "ego4d_sta", "results": {"a": [
        {"box": [0, 0, 10, 10], "noun_category_id": 0, "verb_category_id": 0, "time_to_contact": 1.0, "score": 0.5}]}}"#;
    ensure!(io::parse_submission(good, "good").is_ok(), "baseline fixture rejected");
    let malformed: [(&str, String); 7] = [
        ("truncated", good[..good.len() - 3].to_string()),
        ("wrong type", good.replace("\"score\": 0.5", "\"score\": \"high\"")),
        ("missing field", good.replace(", \"score\": 0.5", "")),
        ("inverted box", good.replace("[0, 0, 10, 10]", "[10, 0, 0, 10]")),
        ("short box", good.replace("[0, 0, 10, 10]", "[0, 0, 10]")),
        ("negative ttc", good.replace("1.0, \"score\"", "-1.0, \"score\"")),
        ("negative id", good.replace("\"noun_category_id\": 0", "\"noun_category_id\": -3")),
    ];
    for (what, text) in &malformed {
        match io::parse_submission(text, what) {
            Err(VistaError::Parse { line, .. }) => ensure!(line >= 1, "{what}: no line"),
            Err(VistaError::Validation { problems, .. }) => ensure!(!problems.is_empty(), "{what}: empty problems"),
            Err(other) => return Err(format!("{what}: unexpected error kind {other}")),
            Ok(_) => return Err(format!("{what}: accepted")),
        }
    }
    let gt_bad = r#"{"taxonomy": {"nouns": ["a"], "verbs": ["b"]}, "annotations": [
        {"example_uid": "x", "box": [0, 0, 1, 1], "noun_category_id": 4, "verb_category_id": 0, "time_to_contact": 1},
        {"example_uid": "x", "box": [0, 0, 1, 1], "noun_category_id": 0, "verb_category_id": 7, "time_to_contact": -1}]}"#;
    match io::parse_ground_truth(gt_bad, None, "gt") {
        Err(VistaError::Validation { problems, .. }) => {
            ensure!(problems.len() >= 3, "ground truth reported {} problems", problems.len())
        }
        other => return Err(format!("bad ground truth gave {other:?}")),
    }
    let bytes = io::encode_tensors(&random_tensors(&mut Draws::new(99)));
    for cut in 0..bytes.len() {
        ensure!(
            matches!(io::decode_tensors(&bytes[..cut]), Err(VistaError::Tensor(_))),
            "tensor prefix {cut} accepted"
        );
    }
    Ok(format!(
        "50 fixtures x 3 formats byte-identical; {} malformed inputs rejected with structured errors",
        malformed.len() + 1 + bytes.len()
    ))
}

// ------------------------------------------------------------------ 10

fn performance_floor() -> Outcome {
    let (taxonomy, gts) = generate_scenario(200, 200, 10, 5, 10).map_err(|e| e.to_string())?;
    let noise = NoiseConfig { box_jitter_sigma: 15.0, label_flip_prob: 0.2, ttc_noise_sigma: 0.2, seed: 10, ..NoiseConfig::default() };
    let sources = perturb_to_predictions(&gts, &taxonomy, &noise, 10).map_err(|e| e.to_string())?;
    let mut preds = PredictionSet::new();
    for (s, set) in sources.iter().enumerate() {
        for (uid, hyps) in set.iter() {
            for h in hyps {
                let mut h = h.clone();
                h.score *= 1.0 - 0.01 * s as f64;
                preds.push(uid, h);
            }
        }
    }
    ensure!(gts.len() == 1000, "{} ground truths", gts.len());
    ensure!(preds.n_hypotheses() >= 9_900, "{} predictions", preds.n_hypotheses());
    let mut worst = Duration::ZERO;
    for top_k in [5, 10_000] {
        let cfg = EvalConfig { top_k, ..EvalConfig::default() };
        let start = Instant::now();
        evaluate(&preds, &gts, &taxonomy, &cfg).map_err(|e| e.to_string())?;
        let took = start.elapsed();
        ensure!(took < Duration::from_secs(1), "top_k {top_k}: {took:?}");
        worst = worst.max(took);
    }
    Ok(format!(
        "{} predictions vs {} ground truths over 200 nouns: slowest run {worst:.2?}",
        preds.n_hypotheses(),
        gts.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("protocol fidelity", protocol_fidelity),
        ("metric nesting", metric_nesting),
        ("noise monotonicity", noise_monotonicity),
        ("post-processing chain", postprocess_chain),
        ("fusion kernels", fusion_kernels),
        ("ensemble sanity", ensemble_sanity),
        ("softplus ttc", softplus_ttc),
        ("i/o round trips", io_round_trips),
        ("performance floor", performance_floor),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("acceptance {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.2?}",
        criteria.len() - failed,
        start.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
