//! `vista` command-line entry point.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or configuration
//! (including usage errors), 3 internal error or size limit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use vista_core::config::RunConfig;
use vista_core::ensemble::ensemble_predictions;
use vista_core::eval::evaluate;
use vista_core::fusion::{self, FilmParams};
use vista_core::io::{self, GroundTruthSet, Submission};
use vista_core::postprocess::{heads_from_tensors, run_inference};
use vista_core::sampling::{plan_frames, DEFAULT_FRAME_COUNT, DEFAULT_SAMPLE_RATE};
use vista_core::synth;
use vista_core::{PredictionSet, Result, VistaError};

const OUT_DIR_ENV: &str = "VISTA_OUT_DIR";

#[derive(Parser)]
#[command(name = "vista", version, about = "Short-term interaction anticipation toolkit")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (default: $VISTA_OUT_DIR, then the current directory).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    k_noun: Option<usize>,
    #[arg(long)]
    k_verb: Option<usize>,
    /// Box overlap threshold (evaluation, or grouping for `ensemble`).
    #[arg(long)]
    iou_min: Option<f64>,
    /// TTC tolerance in seconds (evaluation, or grouping for `ensemble`).
    #[arg(long)]
    ttc_tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Score a submission against ground truth; prints the mAP table.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        gt: PathBuf,
        #[arg(long, value_name = "PATH")]
        pred: PathBuf,
        #[command(flatten)]
        o: Overrides,
    },
    /// Turn a head-output tensor container into a submission.
    Postprocess {
        #[arg(long, value_name = "PATH")]
        heads: PathBuf,
        #[arg(long, value_name = "PATH")]
        taxonomy: PathBuf,
        #[command(flatten)]
        o: Overrides,
    },
    /// Merge several submissions; prints a one-line summary.
    Ensemble {
        #[arg(required = true, value_name = "PRED")]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Write a synthetic ground truth and noisy prediction sources.
    Synth {
        #[command(flatten)]
        o: Overrides,
    },
    /// Print the clip frame timestamps for a query time, one per line.
    Plan {
        #[arg(long, value_name = "SECONDS")]
        time: f64,
        #[arg(long, default_value_t = DEFAULT_FRAME_COUNT)]
        frames: usize,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE)]
        rate: f64,
    },
    /// Run the fusion kernels on a parameter bundle and print diagnostics.
    FuseDemo {
        /// Tensor container; a seeded demo bundle is used when omitted.
        #[arg(long, value_name = "PATH")]
        tensors: Option<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Check a document without writing anything.
    Validate {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Auto)]
        kind: Kind,
        /// Taxonomy to check submission ids against.
        #[arg(long, value_name = "PATH")]
        taxonomy: Option<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Kind {
    Auto,
    Submission,
    GroundTruth,
    Taxonomy,
    Tensors,
}

#[derive(Clone, Copy, PartialEq)]
enum Scope {
    Eval,
    Ensemble,
}

fn resolve_config(o: &Overrides, scope: Scope) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.scenario.seed = s;
        cfg.noise.seed = s;
    }
    if let Some(k) = o.top_k {
        cfg.eval.top_k = k;
    }
    if let Some(v) = o.nms_iou {
        cfg.inference.nms_iou = v;
    }
    if let Some(k) = o.k_noun {
        cfg.inference.k_noun = k;
    }
    if let Some(k) = o.k_verb {
        cfg.inference.k_verb = k;
    }
    match scope {
        Scope::Eval => {
            if let Some(v) = o.iou_min {
                cfg.eval.iou_min = v;
            }
            if let Some(v) = o.ttc_tol {
                cfg.eval.ttc_max_error = v;
            }
        }
        Scope::Ensemble => {
            if let Some(v) = o.iou_min {
                cfg.ensemble.box_iou_min = v;
            }
            if let Some(v) = o.ttc_tol {
                cfg.ensemble.ttc_tolerance = v;
            }
        }
    }
    cfg.validate()?;
    log::info!("effective config: {}", cfg.to_value());
    Ok(cfg)
}

fn out_dir(o: &Overrides) -> PathBuf {
    o.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| VistaError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| VistaError::io(path, e))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

fn cmd_evaluate(gt: &Path, pred: &Path, o: &Overrides) -> Result<()> {
    let cfg = resolve_config(o, Scope::Eval)?;
    let gt_set = io::load_ground_truth(gt)?.value;
    let sub = io::load_predictions(pred)?.value;
    let report = evaluate(&sub.predictions, &gt_set.annotations, &gt_set.taxonomy, &cfg.eval)?;
    let dir = out_dir(o);
    let doc = json!({
        "report": report,
        "inputs": {"ground_truth": gt.display().to_string(), "predictions": pred.display().to_string()},
        "run_config": cfg.to_value(),
    });
    write_text(&dir.join("report.json"), &pretty(&doc))?;
    let table = report.to_table();
    write_text(&dir.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_postprocess(heads: &Path, taxonomy: &Path, o: &Overrides) -> Result<()> {
    let cfg = resolve_config(o, Scope::Eval)?;
    let taxonomy = io::load_taxonomy(taxonomy)?;
    let tensors = io::read_tensor_file(heads)?;
    let default_uid = heads.file_stem().and_then(|s| s.to_str()).unwrap_or("example");
    let per_example = heads_from_tensors(&tensors, &taxonomy, default_uid)?;
    let mut set = PredictionSet::new();
    for (uid, h) in &per_example {
        let hyps = run_inference(&h.proposals, &taxonomy, &cfg.inference, h.image_size)?;
        log::info!("{uid}: {} proposals -> {} hypotheses", h.proposals.len(), hyps.len());
        if !hyps.is_empty() {
            set.insert(uid.clone(), hyps);
        }
    }
    let sub = Submission::new(set).with_taxonomy(taxonomy).with_provenance(json!({
        "command": "postprocess",
        "inputs": [heads.display().to_string()],
        "run_config": cfg.to_value(),
    }));
    io::write_submission(&sub, &out_dir(o).join("submission.json"))
}

fn cmd_ensemble(inputs: &[PathBuf], o: &Overrides) -> Result<()> {
    let cfg = resolve_config(o, Scope::Ensemble)?;
    let mut sources = Vec::with_capacity(inputs.len());
    let mut taxonomies = Vec::with_capacity(inputs.len());
    for p in inputs {
        let sub = io::load_predictions(p)?.value;
        taxonomies.push(sub.taxonomy);
        sources.push(sub.predictions);
    }
    let refs: Vec<_> = taxonomies.iter().map(Option::as_ref).collect();
    vista_core::ensemble::check_taxonomies(&refs)?;
    let (merged, stats) = ensemble_predictions(&sources, &cfg.ensemble)?;
    println!(
        "examples {} groups {} hypotheses {}",
        merged.n_examples(),
        stats.total_groups(),
        merged.n_hypotheses()
    );
    let mut sub = Submission::new(merged).with_provenance(json!({
        "command": "ensemble",
        "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "run_config": cfg.to_value(),
        "stats": stats,
    }));
    sub.taxonomy = taxonomies.into_iter().flatten().next();
    io::write_submission(&sub, &out_dir(o).join("ensemble.json"))
}

fn cmd_synth(o: &Overrides) -> Result<()> {
    let cfg = resolve_config(o, Scope::Eval)?;
    let sc = cfg.scenario;
    let (taxonomy, gts) = synth::generate_scenario(sc.n_examples, sc.n_nouns, sc.n_verbs, sc.gts_per_example, sc.seed)?;
    let sources = synth::perturb_to_predictions(&gts, &taxonomy, &cfg.noise, cfg.synth_sources)?;
    let dir = out_dir(o);
    let gt_set = GroundTruthSet { taxonomy: taxonomy.clone(), annotations: gts };
    io::write_ground_truth(&gt_set, &dir.join("ground_truth.json"))?;
    for (k, set) in sources.into_iter().enumerate() {
        let sub = Submission::new(set).with_taxonomy(taxonomy.clone()).with_provenance(json!({
            "command": "synth",
            "source": k,
            "run_config": cfg.to_value(),
        }));
        io::write_submission(&sub, &dir.join(format!("predictions_{k:02}.json")))?;
    }
    log::info!("wrote {} examples to {}", sc.n_examples, dir.display());
    Ok(())
}

fn cmd_plan(time: f64, frames: usize, rate: f64) -> Result<()> {
    let plan = plan_frames(time, frames, rate)?;
    for t in &plan.frame_times {
        println!("{t}");
    }
    Ok(())
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

fn cmd_fuse_demo(tensors: Option<&Path>, o: &Overrides) -> Result<()> {
    let bundle: BTreeMap<_, _> = match tensors {
        Some(p) => io::read_tensor_file(p)?,
        None => synth::fusion_demo_bundle(resolve_config(o, Scope::Eval)?.scenario.seed),
    };
    let seq = bundle
        .get(synth::DEMO_SEQUENCE)
        .ok_or_else(|| VistaError::invalid("fuse-demo", format!("missing tensor {:?}", synth::DEMO_SEQUENCE)))?;
    let probe = fusion::ProbeParams::from_bundle(&bundle)?;
    let out = fusion::attentive_probe(seq, &probe)?;
    let weights: Vec<String> = out.weights.iter().map(|w| format!("{w:.6}")).collect();
    println!("probe weights: {}", weights.join(" "));
    println!("probe weight sum: {:.6}", out.weights.iter().map(|&w| w as f64).sum::<f64>());
    println!("token norm: {:.6}", l2(&out.token));

    if let Some(map) = bundle.get(synth::DEMO_FEATURE_MAP) {
        let identity = FilmParams::identity(out.token.len(), map.shape().first().copied().unwrap_or(0));
        let same = fusion::film_modulate(map, &out.token, &identity)?;
        let bit_equal = same.data().iter().zip(map.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        println!("film identity bit-equal: {bit_equal}");
        if let Ok(film) = FilmParams::from_bundle(&bundle) {
            let modulated = fusion::film_modulate(map, &out.token, &film)?;
            println!("film output norm: {:.6} (input {:.6})", l2(modulated.data()), l2(map.data()));
        }
    }
    if let (Some(rois), Ok(ctx)) = (bundle.get(synth::DEMO_ROIS), fusion::ContextMlpParams::from_bundle(&bundle)) {
        let n = rois.shape().first().copied().unwrap_or(0);
        for i in 0..n {
            let fused = fusion::roi_context_fuse(rois.row(i), &out.token, &ctx)?;
            println!("roi {i}: norm {:.6} -> {:.6}", l2(rois.row(i)), l2(&fused));
        }
    }
    Ok(())
}

fn detect_kind(path: &Path) -> Result<Kind> {
    let bytes = std::fs::read(path).map_err(|e| VistaError::io(path, e))?;
    if bytes.starts_with(io::TENSOR_MAGIC) {
        return Ok(Kind::Tensors);
    }
    let text = String::from_utf8_lossy(&bytes);
    let value: Value = serde_json::from_str(&text).map_err(|e| VistaError::Parse {
        context: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let has = |k: &str| value.get(k).is_some();
    if has("results") {
        Ok(Kind::Submission)
    } else if has("annotations") {
        Ok(Kind::GroundTruth)
    } else if has("nouns") {
        Ok(Kind::Taxonomy)
    } else {
        Err(VistaError::invalid(path.display().to_string(), "cannot tell what kind of document this is"))
    }
}

fn cmd_validate(path: &Path, kind: Kind, taxonomy: Option<&Path>, o: &Overrides) -> Result<()> {
    let cfg = resolve_config(o, Scope::Eval)?;
    let kind = if kind == Kind::Auto { detect_kind(path)? } else { kind };
    let summary = match kind {
        Kind::Submission => {
            let loaded = io::load_predictions(path)?;
            let tax = taxonomy.map(io::load_taxonomy).transpose()?;
            loaded.value.validate(tax.as_ref(), cfg.inference.max_exports)?;
            format!(
                "submission: {} examples, {} hypotheses, {} warnings",
                loaded.value.predictions.n_examples(),
                loaded.value.predictions.n_hypotheses(),
                loaded.warnings.len()
            )
        }
        Kind::GroundTruth => {
            let loaded = io::load_ground_truth(path)?;
            format!(
                "ground truth: {} annotations, {} nouns, {} verbs, {} warnings",
                loaded.value.annotations.len(),
                loaded.value.taxonomy.n_nouns(),
                loaded.value.taxonomy.n_verbs(),
                loaded.warnings.len()
            )
        }
        Kind::Taxonomy => {
            let t = io::load_taxonomy(path)?;
            format!("taxonomy: {} nouns, {} verbs", t.n_nouns(), t.n_verbs())
        }
        Kind::Tensors => {
            let map = io::read_tensor_file(path)?;
            format!("tensors: {} entries", map.len())
        }
        Kind::Auto => unreachable!("resolved above"),
    };
    println!("ok {summary}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Evaluate { gt, pred, o } => cmd_evaluate(&gt, &pred, &o),
        Command::Postprocess { heads, taxonomy, o } => cmd_postprocess(&heads, &taxonomy, &o),
        Command::Ensemble { inputs, o } => cmd_ensemble(&inputs, &o),
        Command::Synth { o } => cmd_synth(&o),
        Command::Plan { time, frames, rate } => cmd_plan(time, frames, rate),
        Command::FuseDemo { tensors, o } => cmd_fuse_demo(tensors.as_deref(), &o),
        Command::Validate { path, kind, taxonomy, o } => cmd_validate(&path, kind, taxonomy.as_deref(), &o),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
