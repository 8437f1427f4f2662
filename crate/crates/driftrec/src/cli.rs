//! Command-line pipelines over the library: generate data, fit drift models,
//! detect change points, recommend, and evaluate.
//!
//! Stages hand artifacts to each other through files: `synth` writes a
//! labeled interaction file, `fit-hmm` turns interactions into a model file,
//! `detect` turns a model plus interactions into a change-point table,
//! `recommend` writes ranked lists, and `evaluate` reports metrics. Every
//! subcommand is a pure function of its flags and input files — rerunning
//! with identical flags produces byte-identical artifacts — and every table
//! artifact records its resolved configuration in a leading `# config:`
//! comment that the loaders ignore.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, malformed data, vocabulary
//! mismatch), 2 usage error (bad flags, unknown method or detector names).
//! Every flag can also be set through a `DRIFTREC_*` environment variable.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use ndarray::Array1;

use crate::changepoint::{
    cusum_detect, hmcd_detect, random_partition, sliding_window_detect, ChangePointSet,
    DetectionConfig, ItemFactors, ScoreMode,
};
use crate::data::{
    load_any, load_interactions, planted_hmm_pool, synth_concat, write_labeled,
    InteractionSequence, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{
    nmf_pipeline, run_experiment, smf_pipeline, DetectorKind, ExperimentConfig, FactorPipeline,
    MethodName,
};
use crate::factorization::{build_segmented_matrix, nmf_fit};
use crate::hmm::{baum_welch_fit_with_history, FitConfig, HmmParams};
use crate::recommenders::{
    bpr_fit, bpr_recommend, factor_recommend, mc_fit, mc_recommend, poprank_fit,
    poprank_recommend, BprConfig, Recommendation,
};
use crate::rng;

#[derive(Parser)]
#[command(
    name = "driftrec",
    version,
    about = "Change-point detection over interaction sequences and segment-aware recommendation",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus by splicing pool sequences.
    Synth(SynthArgs),
    /// Fit a hidden-state drift model to an interaction file.
    FitHmm(FitHmmArgs),
    /// Detect change points in every sequence of an interaction file.
    Detect(DetectArgs),
    /// Produce ranked item lists for every user in an interaction file.
    Recommend(RecommendArgs),
    /// Run the evaluation harness over an interaction file.
    Evaluate(EvaluateArgs),
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(&args),
        Command::FitHmm(args) => cmd_fit_hmm(&args),
        Command::Detect(args) => cmd_detect(&args),
        Command::Recommend(args) => cmd_recommend(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => 2,
        _ => 1,
    }
}

// ----------------------------------------------------------------------
// synth
// ----------------------------------------------------------------------

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["pool", "planted"])))]
struct SynthArgs {
    /// Plain interaction file providing the pool of source sequences.
    #[arg(long, env = "DRIFTREC_POOL", value_name = "FILE")]
    pool: Option<PathBuf>,
    /// Generate the pool internally from a block-structured hidden-state
    /// model. Accepts key=value settings: h=<states>, m=<items>,
    /// len=<len1;len2;...> (one length per pool sequence).
    /// Defaults: h=2 m=100 len=100;100.
    #[arg(long, env = "DRIFTREC_PLANTED", num_args = 0.., value_name = "KEY=VALUE")]
    planted: Option<Vec<String>>,
    /// Number of labeled sequences to generate.
    #[arg(long, env = "DRIFTREC_COUNT")]
    count: usize,
    /// Smallest window taken from each source sequence.
    #[arg(long, env = "DRIFTREC_MIN_WINDOW", default_value_t = 20)]
    min_window: usize,
    /// Largest window taken from each source sequence.
    #[arg(long, env = "DRIFTREC_MAX_WINDOW", default_value_t = 80)]
    max_window: usize,
    #[arg(long, env = "DRIFTREC_SEED", default_value_t = 0)]
    seed: u64,
    /// Labeled interaction file to write.
    #[arg(long, env = "DRIFTREC_OUT", value_name = "FILE")]
    out: PathBuf,
}

fn parse_planted(pairs: &[String]) -> Result<(usize, usize, Vec<usize>)> {
    let mut states = 2usize;
    let mut items = 100usize;
    let mut lengths = vec![100usize, 100];
    for pair in pairs {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
        match key {
            "h" => {
                states = value
                    .parse()
                    .map_err(|_| Error::Config(format!("h is not an integer: {value}")))?
            }
            "m" => {
                items = value
                    .parse()
                    .map_err(|_| Error::Config(format!("m is not an integer: {value}")))?
            }
            "len" => {
                lengths = value
                    .split(';')
                    .map(|v| {
                        v.parse()
                            .map_err(|_| Error::Config(format!("bad length `{v}` in len list")))
                    })
                    .collect::<Result<_>>()?
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown planted setting `{other}` (expected h, m, or len)"
                )))
            }
        }
    }
    Ok((states, items, lengths))
}

fn fmt_usize_list(values: &[usize], sep: char) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(&sep.to_string())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let (vocab, pool, source_label) = match (&args.pool, &args.planted) {
        (Some(path), None) => {
            let (vocab, pool) = load_interactions(path)?;
            (vocab, pool, format!("pool={}", path.display()))
        }
        (None, Some(pairs)) => {
            let (states, items, lengths) = parse_planted(pairs)?;
            let pool = planted_hmm_pool(states, items, &lengths, rng::sub_seed(args.seed, 0))?;
            let vocab = Vocabulary::synthetic(items);
            let label = format!(
                "planted h={states} m={items} len={}",
                fmt_usize_list(&lengths, ';')
            );
            (vocab, pool, label)
        }
        // clap's argument group guarantees exactly one source.
        _ => unreachable!("argument group enforces one source"),
    };

    let labeled = synth_concat(
        &pool,
        args.count,
        rng::sub_seed(args.seed, 1),
        args.min_window,
        args.max_window,
    )?;

    let mut out: Vec<u8> = Vec::new();
    writeln!(
        out,
        "# config: synth {source_label} count={} min-window={} max-window={} seed={}",
        args.count, args.min_window, args.max_window, args.seed
    )?;
    write_labeled(&mut out, &vocab, &labeled)?;
    std::fs::write(&args.out, out)?;
    println!(
        "synth: {} sequences over {} items -> {}",
        labeled.len(),
        vocab.len(),
        args.out.display()
    );
    Ok(())
}

// ----------------------------------------------------------------------
// fit-hmm
// ----------------------------------------------------------------------

#[derive(Args)]
struct FitHmmArgs {
    /// Interaction file (plain or labeled) to fit on.
    #[arg(long, env = "DRIFTREC_INPUT", value_name = "FILE")]
    input: PathBuf,
    /// Number of hidden states.
    #[arg(long, env = "DRIFTREC_STATES", default_value_t = 2)]
    states: usize,
    #[arg(long, env = "DRIFTREC_MAX_ITERS", default_value_t = 100)]
    max_iters: usize,
    /// Relative log-likelihood improvement below which fitting stops early;
    /// negative disables early stopping.
    #[arg(long, env = "DRIFTREC_TOL", default_value_t = 1e-5, allow_hyphen_values = true)]
    tol: f64,
    /// Pseudo-count added to transition and emission statistics.
    #[arg(long, env = "DRIFTREC_SMOOTHING", default_value_t = 1e-6)]
    smoothing: f64,
    #[arg(long, env = "DRIFTREC_SEED", default_value_t = 0)]
    seed: u64,
    /// Model file to write.
    #[arg(long, env = "DRIFTREC_OUT", value_name = "FILE")]
    out: PathBuf,
}

fn cmd_fit_hmm(args: &FitHmmArgs) -> Result<()> {
    let (vocab, seqs, _) = load_any(&args.input)?;
    let config = FitConfig {
        max_iters: args.max_iters,
        ll_tolerance: args.tol,
        smoothing: args.smoothing,
        seed: args.seed,
    };
    let (model, history) = baum_welch_fit_with_history(&seqs, args.states, vocab.len(), &config)?;
    model.save(&args.out)?;
    println!(
        "fit-hmm: input={} states={} max-iters={} tol={} smoothing={} seed={}",
        args.input.display(),
        args.states,
        args.max_iters,
        args.tol,
        args.smoothing,
        args.seed
    );
    println!("fit-hmm: {} sequences over {} items", seqs.len(), vocab.len());
    println!(
        "fit-hmm: iterations={} final-log-likelihood={}",
        history.len(),
        history.last().copied().unwrap_or(f64::NAN)
    );
    println!("fit-hmm: model -> {}", args.out.display());
    Ok(())
}

// ----------------------------------------------------------------------
// detect
// ----------------------------------------------------------------------

#[derive(Args)]
struct DetectArgs {
    /// Interaction file (plain or labeled) to scan.
    #[arg(long, env = "DRIFTREC_INPUT", value_name = "FILE")]
    input: PathBuf,
    /// One of: hmcd, cusum, sw, rp.
    #[arg(long, env = "DRIFTREC_DETECTOR", default_value = "hmcd")]
    detector: String,
    /// Fitted model file (required by hmcd).
    #[arg(long, env = "DRIFTREC_MODEL", value_name = "FILE")]
    model: Option<PathBuf>,
    /// Detection threshold. Defaults: 0.93 for hmcd; for cusum, the mean
    /// cumulative path distance of the corpus.
    #[arg(long, env = "DRIFTREC_TAU", allow_hyphen_values = true)]
    tau: Option<f64>,
    /// Score handling for hmcd: raw or candidate-max.
    #[arg(long, env = "DRIFTREC_MODE")]
    mode: Option<String>,
    /// Keep at most this many change points per sequence (hmcd only).
    #[arg(long, env = "DRIFTREC_MAX_CHANGES")]
    max_changes: Option<usize>,
    /// Item-factor rank fitted for the distance-based detectors.
    #[arg(long, env = "DRIFTREC_RANK", default_value_t = 10)]
    rank: usize,
    /// Factorization iterations for the detector item factors.
    #[arg(long, env = "DRIFTREC_NMF_ITERS", default_value_t = 200)]
    nmf_iters: usize,
    /// Drives the detector-factor fit and the random partition draws.
    #[arg(long, env = "DRIFTREC_SEED", default_value_t = 0)]
    seed: u64,
    /// Change-point table to write (user_id,index,score).
    #[arg(long, env = "DRIFTREC_OUT", value_name = "FILE")]
    out: PathBuf,
}

fn require_absent<T>(flag: &Option<T>, name: &str, detector: DetectorKind) -> Result<()> {
    if flag.is_some() {
        return Err(Error::Config(format!(
            "--{name} does not apply to the {detector} detector"
        )));
    }
    Ok(())
}

/// Fits item factors over the full corpus for the distance-based detectors.
fn detector_factors(
    seqs: &[InteractionSequence],
    num_items: usize,
    rank: usize,
    iters: usize,
    seed: u64,
) -> Result<ItemFactors> {
    let rows: Vec<Vec<InteractionSequence>> = seqs.iter().map(|s| vec![s.clone()]).collect();
    let matrix = build_segmented_matrix(&rows, num_items)?;
    let model = nmf_fit(&matrix, rank, iters, seed)?;
    ItemFactors::new(model.q().to_owned())
}

fn mean_path_distance(factors: &ItemFactors, seqs: &[&InteractionSequence]) -> f64 {
    if seqs.is_empty() {
        return 0.0;
    }
    let total: f64 = seqs
        .iter()
        .map(|s| {
            s.items
                .windows(2)
                .map(|w| factors.distance(w[0], w[1]))
                .sum::<f64>()
        })
        .sum();
    total / seqs.len() as f64
}

fn cmd_detect(args: &DetectArgs) -> Result<()> {
    let detector: DetectorKind = args.detector.parse()?;
    let (vocab, seqs, _) = load_any(&args.input)?;

    // Detectors other than hmcd need at least two items per sequence.
    let usable: Vec<&InteractionSequence> = seqs.iter().filter(|s| s.len() >= 2).collect();
    let skipped = seqs.len() - usable.len();

    let mut results: Vec<(String, ChangePointSet)> = Vec::new();
    let config_line: String;
    match detector {
        DetectorKind::Hmcd => {
            let model_path = args.model.as_ref().ok_or_else(|| {
                Error::Config("--model is required for the hmcd detector".into())
            })?;
            let model = HmmParams::load(model_path)?;
            check_model_items(model.num_items(), &vocab, model_path)?;
            let mode: ScoreMode = match &args.mode {
                Some(text) => text.parse()?,
                None => ScoreMode::CandidateMax,
            };
            let tau = args.tau.unwrap_or(0.93);
            let detection = DetectionConfig {
                tau,
                score_mode: mode,
                max_changes: args.max_changes,
            };
            for seq in &seqs {
                results.push((seq.user_id.clone(), hmcd_detect(&model, seq, &detection)?));
            }
            config_line = format!(
                "# config: detect detector=hmcd input={} model={} tau={tau} mode={mode} max-changes={} seed={}",
                args.input.display(),
                model_path.display(),
                args.max_changes.map(|c| c.to_string()).unwrap_or_else(|| "none".into()),
                args.seed
            );
        }
        DetectorKind::Cusum => {
            require_absent(&args.model, "model", detector)?;
            require_absent(&args.mode, "mode", detector)?;
            require_absent(&args.max_changes, "max-changes", detector)?;
            let factors =
                detector_factors(&seqs, vocab.len(), args.rank, args.nmf_iters, args.seed)?;
            let tau = args.tau.unwrap_or_else(|| mean_path_distance(&factors, &usable));
            for seq in &usable {
                results.push((seq.user_id.clone(), cusum_detect(&factors, seq, tau)?));
            }
            config_line = format!(
                "# config: detect detector=cusum input={} tau={tau} rank={} nmf-iters={} seed={}",
                args.input.display(),
                args.rank,
                args.nmf_iters,
                args.seed
            );
        }
        DetectorKind::SlidingWindow => {
            require_absent(&args.model, "model", detector)?;
            require_absent(&args.tau, "tau", detector)?;
            require_absent(&args.mode, "mode", detector)?;
            require_absent(&args.max_changes, "max-changes", detector)?;
            let factors =
                detector_factors(&seqs, vocab.len(), args.rank, args.nmf_iters, args.seed)?;
            for seq in &usable {
                results.push((seq.user_id.clone(), sliding_window_detect(&factors, seq)?));
            }
            config_line = format!(
                "# config: detect detector=sw input={} rank={} nmf-iters={} seed={}",
                args.input.display(),
                args.rank,
                args.nmf_iters,
                args.seed
            );
        }
        DetectorKind::RandomPartition => {
            require_absent(&args.model, "model", detector)?;
            require_absent(&args.tau, "tau", detector)?;
            require_absent(&args.mode, "mode", detector)?;
            require_absent(&args.max_changes, "max-changes", detector)?;
            for (i, seq) in usable.iter().enumerate() {
                let seed = rng::sub_seed(args.seed, i as u64);
                results.push((seq.user_id.clone(), random_partition(seq, seed)?));
            }
            config_line = format!(
                "# config: detect detector=rp input={} seed={}",
                args.input.display(),
                args.seed
            );
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "{config_line}");
    let _ = writeln!(out, "user_id,index,score");
    let mut rows = 0usize;
    for (user_id, set) in &results {
        for (index, score) in set.iter() {
            let _ = writeln!(out, "{user_id},{index},{score}");
            rows += 1;
        }
    }
    std::fs::write(&args.out, out)?;
    if skipped > 0 {
        log::info!("skipped {skipped} sequences shorter than 2 items");
    }
    println!(
        "detect: {rows} change points across {} sequences -> {}",
        results.len(),
        args.out.display()
    );
    Ok(())
}

fn check_model_items(model_items: usize, vocab: &Vocabulary, model_path: &Path) -> Result<()> {
    if model_items != vocab.len() {
        return Err(Error::Vocabulary(format!(
            "model {} covers {model_items} items but the input vocabulary has {}; \
             fit the model on data with the same vocabulary",
            model_path.display(),
            vocab.len()
        )));
    }
    Ok(())
}

// ----------------------------------------------------------------------
// recommend
// ----------------------------------------------------------------------

#[derive(Args)]
struct RecommendArgs {
    /// Interaction file (plain or labeled) to train on.
    #[arg(long, env = "DRIFTREC_INPUT", value_name = "FILE")]
    input: PathBuf,
    /// One of: poprank, mc, bpr, nmf, smf.
    #[arg(long, env = "DRIFTREC_METHOD")]
    method: String,
    /// Ranked-list length per user.
    #[arg(short = 'l', long = "list-length", env = "DRIFTREC_LIST_LENGTH", default_value_t = 10)]
    list_length: usize,
    /// Filter each user's already-seen items out of their list.
    #[arg(long, env = "DRIFTREC_EXCLUDE_SEEN", default_value_t = false)]
    exclude_seen: bool,
    /// Fitted model file for change-point detection (required by smf).
    #[arg(long, env = "DRIFTREC_MODEL", value_name = "FILE")]
    model: Option<PathBuf>,
    /// Detection threshold for smf segmentation.
    #[arg(long, env = "DRIFTREC_TAU", default_value_t = 0.93)]
    tau: f64,
    /// Score handling for smf segmentation: raw or candidate-max.
    #[arg(long, env = "DRIFTREC_MODE", default_value = "candidate-max")]
    mode: String,
    /// Keep at most this many change points per sequence (smf only).
    #[arg(long, env = "DRIFTREC_MAX_CHANGES")]
    max_changes: Option<usize>,
    /// Latent factors for bpr, nmf, and smf.
    #[arg(long, env = "DRIFTREC_RANK", default_value_t = 40)]
    rank: usize,
    /// Factorization iterations for nmf and smf.
    #[arg(long, env = "DRIFTREC_NMF_ITERS", default_value_t = 200)]
    nmf_iters: usize,
    /// Fold-in iterations for nmf and smf profiles.
    #[arg(long, env = "DRIFTREC_FOLD_IN_ITERS", default_value_t = 200)]
    fold_in_iters: usize,
    /// Training epochs for bpr.
    #[arg(long, env = "DRIFTREC_EPOCHS", default_value_t = 30)]
    epochs: usize,
    /// Learning rate for bpr.
    #[arg(long, env = "DRIFTREC_LEARNING_RATE", default_value_t = 0.01)]
    learning_rate: f64,
    /// L2 regularization for bpr.
    #[arg(long, env = "DRIFTREC_REGULARIZATION", default_value_t = 0.0)]
    regularization: f64,
    #[arg(long, env = "DRIFTREC_SEED", default_value_t = 0)]
    seed: u64,
    /// Also write the fitted factor model (nmf and smf only).
    #[arg(long, env = "DRIFTREC_SAVE_MODEL", value_name = "FILE")]
    save_model: Option<PathBuf>,
    /// Recommendation table to write (user_id,rank,item_id,score).
    #[arg(long, env = "DRIFTREC_OUT", value_name = "FILE")]
    out: PathBuf,
}

fn exclusion_for(seq: &InteractionSequence, exclude_seen: bool) -> HashSet<usize> {
    if exclude_seen {
        seq.items.iter().copied().collect()
    } else {
        HashSet::new()
    }
}

fn pipeline_recommendations(
    pipeline: &FactorPipeline,
    seqs: &[InteractionSequence],
    l: usize,
    exclude_seen: bool,
) -> Result<Vec<Recommendation>> {
    seqs.iter()
        .zip(&pipeline.profiles)
        .map(|(s, profile): (&InteractionSequence, &Array1<f64>)| {
            let exclude = exclusion_for(s, exclude_seen);
            factor_recommend(&pipeline.model, &s.user_id, profile, l, &exclude)
        })
        .collect()
}

fn cmd_recommend(args: &RecommendArgs) -> Result<()> {
    let method: MethodName = args.method.parse()?;
    let (vocab, seqs, _) = load_any(&args.input)?;
    let num_items = vocab.len();
    let l = args.list_length;
    let exclude_seen = args.exclude_seen;

    if args.save_model.is_some() && !matches!(method, MethodName::Nmf | MethodName::Smf) {
        return Err(Error::Config(format!(
            "--save-model applies only to nmf and smf, not {method}"
        )));
    }

    let mut extra_config = String::new();
    let recs: Vec<Recommendation> = match method {
        MethodName::PopRank => {
            let model = poprank_fit(&seqs, num_items)?;
            seqs.iter()
                .map(|s| poprank_recommend(&model, &s.user_id, l, &exclusion_for(s, exclude_seen)))
                .collect()
        }
        MethodName::Mc => {
            let model = mc_fit(&seqs, num_items)?;
            seqs.iter()
                .map(|s| {
                    mc_recommend(
                        &model,
                        &s.user_id,
                        s.items.last().copied(),
                        l,
                        &exclusion_for(s, exclude_seen),
                    )
                })
                .collect::<Result<_>>()?
        }
        MethodName::Bpr => {
            let config = BprConfig {
                factors: args.rank,
                epochs: args.epochs,
                learning_rate: args.learning_rate,
                regularization: args.regularization,
                seed: args.seed,
            };
            let _ = write!(
                extra_config,
                " rank={} epochs={} learning-rate={} regularization={}",
                args.rank, args.epochs, args.learning_rate, args.regularization
            );
            let model = bpr_fit(&seqs, num_items, &config)?;
            seqs.iter()
                .map(|s| bpr_recommend(&model, &s.user_id, l, &exclusion_for(s, exclude_seen)))
                .collect::<Result<_>>()?
        }
        MethodName::Nmf => {
            let pipeline = nmf_pipeline(
                &seqs,
                num_items,
                args.rank,
                args.nmf_iters,
                args.fold_in_iters,
                args.seed,
            )?;
            if let Some(path) = &args.save_model {
                pipeline.model.save(path)?;
            }
            let _ = write!(
                extra_config,
                " rank={} nmf-iters={} fold-in-iters={}",
                args.rank, args.nmf_iters, args.fold_in_iters
            );
            pipeline_recommendations(&pipeline, &seqs, l, exclude_seen)?
        }
        MethodName::Smf => {
            let model_path = args.model.as_ref().ok_or_else(|| {
                Error::Config("--model is required for the smf method".into())
            })?;
            let hmm = HmmParams::load(model_path)?;
            check_model_items(hmm.num_items(), &vocab, model_path)?;
            let mode: ScoreMode = args.mode.parse()?;
            let detection = DetectionConfig {
                tau: args.tau,
                score_mode: mode,
                max_changes: args.max_changes,
            };
            let pipeline = smf_pipeline(
                &seqs,
                num_items,
                &hmm,
                &detection,
                args.rank,
                args.nmf_iters,
                args.fold_in_iters,
                args.seed,
            )?;
            if let Some(path) = &args.save_model {
                pipeline.model.save(path)?;
            }
            let _ = write!(
                extra_config,
                " model={} tau={} mode={mode} max-changes={} rank={} nmf-iters={} fold-in-iters={}",
                model_path.display(),
                args.tau,
                args.max_changes.map(|c| c.to_string()).unwrap_or_else(|| "none".into()),
                args.rank,
                args.nmf_iters,
                args.fold_in_iters
            );
            pipeline_recommendations(&pipeline, &seqs, l, exclude_seen)?
        }
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "# config: recommend method={method} input={} list-length={l} exclude-seen={exclude_seen}{extra_config} seed={}",
        args.input.display(),
        args.seed
    );
    let _ = writeln!(out, "user_id,rank,item_id,score");
    for rec in &recs {
        for (position, (&item, &score)) in rec.items.iter().zip(&rec.scores).enumerate() {
            let _ = writeln!(out, "{},{},{},{score}", rec.user_id, position + 1, vocab.id(item));
        }
    }
    std::fs::write(&args.out, out)?;
    if let Some(path) = &args.save_model {
        println!("recommend: factor model -> {}", path.display());
    }
    println!(
        "recommend: {} users, list length {} -> {}",
        recs.len(),
        l,
        args.out.display()
    );
    Ok(())
}

// ----------------------------------------------------------------------
// evaluate
// ----------------------------------------------------------------------

#[derive(Args)]
struct EvaluateArgs {
    /// Interaction file; labeled files also get detector evaluation.
    #[arg(long, env = "DRIFTREC_INPUT", value_name = "FILE")]
    input: PathBuf,
    /// Comma-separated methods to evaluate (empty string skips all).
    #[arg(long, env = "DRIFTREC_METHOD", default_value = "poprank,mc,bpr,nmf,smf")]
    method: String,
    /// Comma-separated detectors to evaluate (empty string skips all).
    #[arg(long, env = "DRIFTREC_DETECTOR", default_value = "hmcd,cusum,sw,rp")]
    detector: String,
    /// Comma-separated precision/recall cutoffs.
    #[arg(long = "k", env = "DRIFTREC_K", default_value = "1,5,10")]
    k: String,
    /// Comma-separated nDCG cutoffs.
    #[arg(long = "ndcg-k", env = "DRIFTREC_NDCG_K", default_value = "5,10")]
    ndcg_k: String,
    /// Held-out suffix length per user.
    #[arg(long, env = "DRIFTREC_HOLDOUT_N", default_value_t = 10)]
    holdout_n: usize,
    /// Hidden states for the drift models.
    #[arg(long, env = "DRIFTREC_STATES", default_value_t = 2)]
    states: usize,
    #[arg(long, env = "DRIFTREC_HMM_ITERS", default_value_t = 100)]
    hmm_iters: usize,
    /// Detection threshold for the change-point detector.
    #[arg(long, env = "DRIFTREC_TAU", default_value_t = 0.93)]
    tau: f64,
    /// Comma-separated thresholds tried when tuning the smf segmentation.
    #[arg(long, env = "DRIFTREC_TAU_GRID", default_value = "0.5,0.7,0.9,0.93")]
    tau_grid: String,
    /// Latent factors for bpr, nmf, and smf.
    #[arg(long, env = "DRIFTREC_RANK", default_value_t = 40)]
    rank: usize,
    #[arg(long, env = "DRIFTREC_NMF_ITERS", default_value_t = 200)]
    nmf_iters: usize,
    #[arg(long, env = "DRIFTREC_FOLD_IN_ITERS", default_value_t = 200)]
    fold_in_iters: usize,
    /// Item-factor rank for the distance-based detectors.
    #[arg(long, env = "DRIFTREC_DETECTOR_RANK", default_value_t = 10)]
    detector_rank: usize,
    #[arg(long, env = "DRIFTREC_DETECTOR_NMF_ITERS", default_value_t = 200)]
    detector_nmf_iters: usize,
    /// Training epochs for bpr.
    #[arg(long, env = "DRIFTREC_EPOCHS", default_value_t = 30)]
    epochs: usize,
    #[arg(long, env = "DRIFTREC_LEARNING_RATE", default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, env = "DRIFTREC_REGULARIZATION", default_value_t = 0.0)]
    regularization: f64,
    /// Fixed CUSUM threshold; omitted, it is tuned against ground truth.
    #[arg(long, env = "DRIFTREC_CUSUM_TAU")]
    cusum_tau: Option<f64>,
    #[arg(long, env = "DRIFTREC_SEED", default_value_t = 0)]
    seed: u64,
    /// Ranking metric table to write.
    #[arg(long, env = "DRIFTREC_OUT", value_name = "FILE")]
    out: PathBuf,
    /// Change-point error table to write (stdout when omitted).
    #[arg(long, env = "DRIFTREC_DETECTOR_OUT", value_name = "FILE")]
    detector_out: Option<PathBuf>,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} value: `{tok}`")))
        })
        .collect()
}

fn parse_names<T>(text: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr<Err = Error> + PartialEq,
{
    let mut names = Vec::new();
    if text.trim().is_empty() {
        return Ok(names);
    }
    for tok in text.split(',') {
        let name: T = tok.trim().parse()?;
        if !names.contains(&name) {
            names.push(name);
        }
    }
    Ok(names)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let methods: Vec<MethodName> = parse_names(&args.method)?;
    let detectors: Vec<DetectorKind> = parse_names(&args.detector)?;
    let pr_cutoffs: Vec<usize> = parse_list(&args.k, "cutoff")?;
    let ndcg_cutoffs: Vec<usize> = parse_list(&args.ndcg_k, "cutoff")?;
    let tau_grid: Vec<f64> = parse_list(&args.tau_grid, "tau")?;

    let (vocab, seqs, truths) = load_any(&args.input)?;
    let config = ExperimentConfig {
        methods: methods.clone(),
        detectors: detectors.clone(),
        holdout_n: args.holdout_n,
        pr_cutoffs,
        ndcg_cutoffs,
        hidden_states: args.states,
        hmm_iters: args.hmm_iters,
        hmcd_tau: args.tau,
        tau_grid,
        rank: args.rank,
        nmf_iters: args.nmf_iters,
        fold_in_iters: args.fold_in_iters,
        detector_rank: args.detector_rank,
        detector_nmf_iters: args.detector_nmf_iters,
        bpr_epochs: args.epochs,
        bpr_learning_rate: args.learning_rate,
        bpr_regularization: args.regularization,
        cusum_tau: args.cusum_tau,
        seed: args.seed,
    };
    let report = run_experiment(&seqs, truths.as_deref(), vocab.len(), &config)?;

    let config_line = format!(
        "# config: evaluate input={} method={} detector={} k={} ndcg-k={} holdout-n={} states={} \
         hmm-iters={} tau={} tau-grid={} rank={} nmf-iters={} fold-in-iters={} detector-rank={} \
         detector-nmf-iters={} epochs={} learning-rate={} regularization={} cusum-tau={} seed={}",
        args.input.display(),
        args.method,
        args.detector,
        args.k,
        args.ndcg_k,
        args.holdout_n,
        args.states,
        args.hmm_iters,
        args.tau,
        args.tau_grid,
        args.rank,
        args.nmf_iters,
        args.fold_in_iters,
        args.detector_rank,
        args.detector_nmf_iters,
        args.epochs,
        args.learning_rate,
        args.regularization,
        args.cusum_tau.map(|t| t.to_string()).unwrap_or_else(|| "tuned".into()),
        args.seed
    );

    if !report.methods.is_empty() {
        let table = format!("{config_line}\n{}", report.methods_table());
        std::fs::write(&args.out, table)?;
        println!("evaluate: ranking metrics -> {}", args.out.display());
        if let Some(first) = report.methods.first() {
            println!(
                "evaluate: {} users evaluated, {} skipped as too short",
                first.evaluated, first.skipped
            );
        }
    } else {
        // Detection-only runs still record their configuration.
        std::fs::write(&args.out, format!("{config_line}\n"))?;
        println!("evaluate: no methods requested -> {}", args.out.display());
    }

    if !report.detectors.is_empty() {
        let table = format!("{config_line}\n{}", report.detectors_table());
        match &args.detector_out {
            Some(path) => {
                std::fs::write(path, table)?;
                println!("evaluate: change-point errors -> {}", path.display());
            }
            None => print!("{table}"),
        }
    } else if !detectors.is_empty() {
        log::warn!("input has no ground-truth change points; detector evaluation skipped");
    }
    Ok(())
}

// ----------------------------------------------------------------------
// Tests
// ----------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_settings_parse_with_defaults() {
        let (h, m, lens) = parse_planted(&[]).unwrap();
        assert_eq!((h, m, lens), (2, 100, vec![100, 100]));

        let pairs: Vec<String> = vec!["h=3".into(), "m=60".into(), "len=40;20;40".into()];
        let (h, m, lens) = parse_planted(&pairs).unwrap();
        assert_eq!((h, m, lens), (3, 60, vec![40, 20, 40]));
    }

    #[test]
    fn planted_settings_reject_unknown_keys_and_bad_values() {
        assert!(matches!(
            parse_planted(&["frobnicate=1".to_string()]).unwrap_err(),
            Error::Config(_)
        ));
        assert!(matches!(
            parse_planted(&["h=x".to_string()]).unwrap_err(),
            Error::Config(_)
        ));
        assert!(matches!(
            parse_planted(&["novalue".to_string()]).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn lists_parse_and_reject_garbage() {
        assert_eq!(parse_list::<usize>("1,5,10", "k").unwrap(), vec![1, 5, 10]);
        assert_eq!(
            parse_list::<f64>("0.5, 0.7", "tau").unwrap(),
            vec![0.5, 0.7]
        );
        assert!(parse_list::<usize>("", "k").unwrap().is_empty());
        assert!(parse_list::<usize>("1,x", "k").is_err());
    }

    #[test]
    fn name_lists_deduplicate_in_order() {
        let methods: Vec<MethodName> = parse_names("smf,poprank,smf").unwrap();
        assert_eq!(methods, vec![MethodName::Smf, MethodName::PopRank]);
        assert!(parse_names::<MethodName>("bogus").is_err());
        assert!(parse_names::<DetectorKind>("").unwrap().is_empty());
    }

    #[test]
    fn exit_codes_map_config_errors_to_usage() {
        assert_eq!(exit_code_for(&Error::Config("x".into())), 2);
        assert_eq!(exit_code_for(&Error::InvalidParameter("x".into())), 2);
        assert_eq!(exit_code_for(&Error::Vocabulary("x".into())), 1);
        assert_eq!(
            exit_code_for(&Error::Io(std::io::Error::other("x"))),
            1
        );
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
