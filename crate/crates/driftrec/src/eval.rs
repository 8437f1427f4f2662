//! Metrics and the end-to-end evaluation harness.
//!
//! Detection quality is measured as displacement error: the absolute gap
//! between the true change point and the detector's best-scored prediction
//! (an empty prediction costs the worst possible gap). Recommendation quality
//! uses precision, recall, and a time-aware nDCG in which earlier held-out
//! items carry higher relevance.
//!
//! [`run_experiment`] ties everything together: it splits each sequence into
//! a training prefix and a held-out suffix, fits every requested method on
//! the prefixes only, and scores ranked lists against the suffixes. When
//! ground-truth change points are available it also runs the requested
//! detectors over the full sequences and reports displacement statistics.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use ndarray::Array1;

use crate::changepoint::{
    cusum_detect, hmcd_detect, random_partition, segment, sliding_window_detect, ChangePointSet,
    DetectionConfig, ItemFactors,
};
use crate::data::{holdout_split, HoldoutUser, InteractionSequence};
use crate::error::{Error, Result};
use crate::factorization::{
    build_segmented_matrix, fold_in, incidence_vector, nmf_fit, FactorModel,
};
use crate::hmm::{baum_welch_fit, FitConfig, HmmParams};
use crate::recommenders::{
    bpr_fit, bpr_recommend, factor_recommend, mc_fit, mc_recommend, poprank_fit,
    poprank_recommend, BprConfig, Recommendation,
};
use crate::rng;

/// Cutoff used when tuning the detection threshold on held-out precision.
pub const TUNE_CUTOFF: usize = 10;

/// Multipliers of the mean cumulative path distance tried when tuning the
/// CUSUM threshold against ground truth.
const CUSUM_MULTIPLIERS: [f64; 6] = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5];

// Stage tags for deriving independent per-stage random seeds.
const STAGE_DETECT_HMM: u64 = 1;
const STAGE_DETECT_NMF: u64 = 2;
const STAGE_RP: u64 = 3;
const STAGE_REC_HMM: u64 = 4;
const STAGE_NMF: u64 = 5;
const STAGE_BPR: u64 = 6;

// ----------------------------------------------------------------------
// Detection metric
// ----------------------------------------------------------------------

/// Absolute displacement between the true change point and the predictor's
/// best-scored change point. An empty prediction is charged the largest
/// displacement any prediction could have had: `max(truth, seq_len - truth)`.
pub fn displacement_error(truth: usize, predicted: &ChangePointSet, seq_len: usize) -> f64 {
    match predicted.best() {
        Some((idx, _)) => (truth as f64 - idx as f64).abs(),
        None => truth.max(seq_len - truth) as f64,
    }
}

// ----------------------------------------------------------------------
// Ranking metrics
// ----------------------------------------------------------------------

/// Ordered distinct held-out items (first appearance wins).
fn distinct_in_order(heldout: &[usize]) -> Vec<usize> {
    let mut seen = HashSet::new();
    heldout
        .iter()
        .copied()
        .filter(|item| seen.insert(*item))
        .collect()
}

/// Fraction of the top `k` recommendations that are held-out items.
/// `None` when there is nothing held out or `k` is zero.
pub fn precision_at_k(recommended: &[usize], heldout: &[usize], k: usize) -> Option<f64> {
    if heldout.is_empty() || k == 0 {
        return None;
    }
    let targets: HashSet<usize> = heldout.iter().copied().collect();
    let hits = recommended
        .iter()
        .take(k)
        .filter(|item| targets.contains(item))
        .count();
    Some(hits as f64 / k as f64)
}

/// Fraction of distinct held-out items found in the top `k` recommendations.
/// `None` when there is nothing held out or `k` is zero.
pub fn recall_at_k(recommended: &[usize], heldout: &[usize], k: usize) -> Option<f64> {
    if heldout.is_empty() || k == 0 {
        return None;
    }
    let targets: HashSet<usize> = heldout.iter().copied().collect();
    let hits = recommended
        .iter()
        .take(k)
        .filter(|item| targets.contains(item))
        .count();
    Some(hits as f64 / targets.len() as f64)
}

/// Time-aware nDCG: the `i`-th distinct held-out item (temporal order) has
/// relevance `|H| - i`, so recommending soon-to-be-consumed items early is
/// rewarded. The ideal ranking is the held-out items in temporal order.
/// Duplicate held-out items count once, at their first appearance. `None`
/// when there is nothing held out or `k` is zero.
pub fn ndcg_at_k(recommended: &[usize], heldout: &[usize], k: usize) -> Option<f64> {
    if heldout.is_empty() || k == 0 {
        return None;
    }
    let ordered = distinct_in_order(heldout);
    let h = ordered.len();
    let relevance: HashMap<usize, f64> = ordered
        .iter()
        .enumerate()
        .map(|(pos, &item)| (item, (h - pos) as f64))
        .collect();

    let discount = |j: usize| ((j + 1) as f64).log2();
    let dcg: f64 = recommended
        .iter()
        .take(k)
        .enumerate()
        .map(|(j0, item)| relevance.get(item).copied().unwrap_or(0.0) / discount(j0 + 1))
        .sum();
    let idcg: f64 = (1..=k.min(h))
        .map(|j| (h - (j - 1)) as f64 / discount(j))
        .sum();
    Some(dcg / idcg)
}

// ----------------------------------------------------------------------
// Threshold tuning
// ----------------------------------------------------------------------

/// Evaluates `score` at each grid value (sorted ascending, deduplicated) and
/// returns the `(tau, score)` pair with the highest score; ties resolve to
/// the smallest tau.
pub fn tune_tau<F>(grid: &[f64], mut score: F) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::InvalidParameter("tau grid is empty".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter("tau grid contains a non-finite value".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut best: Option<(f64, f64)> = None;
    for &tau in &sorted {
        let value = score(tau)?;
        if best.map_or(true, |(_, s)| value > s) {
            best = Some((tau, value));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

// ----------------------------------------------------------------------
// Method pipelines
// ----------------------------------------------------------------------

/// A fitted factor model plus one folded-in profile per input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPipeline {
    pub model: FactorModel,
    pub profiles: Vec<Array1<f64>>,
}

/// Whole-history factorization: one matrix row per sequence, profiles folded
/// in from each sequence's full item set.
pub fn nmf_pipeline(
    seqs: &[InteractionSequence],
    num_items: usize,
    rank: usize,
    iters: usize,
    fold_in_iters: usize,
    seed: u64,
) -> Result<FactorPipeline> {
    let segments: Vec<Vec<InteractionSequence>> = seqs.iter().map(|s| vec![s.clone()]).collect();
    let matrix = build_segmented_matrix(&segments, num_items)?;
    let model = nmf_fit(&matrix, rank, iters, seed)?;
    let profiles = seqs
        .iter()
        .map(|s| {
            let v = incidence_vector(&s.items, num_items)?;
            fold_in(model.q(), &v, fold_in_iters)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FactorPipeline { model, profiles })
}

/// Segment-aware factorization: sequences are segmented at detected change
/// points, every segment becomes a matrix row, and each profile is folded in
/// from the items of the sequence's most recent segment only.
pub fn smf_pipeline(
    seqs: &[InteractionSequence],
    num_items: usize,
    hmm: &HmmParams,
    detection: &DetectionConfig,
    rank: usize,
    iters: usize,
    fold_in_iters: usize,
    seed: u64,
) -> Result<FactorPipeline> {
    let segments: Vec<Vec<InteractionSequence>> = seqs
        .iter()
        .map(|s| {
            let cps = hmcd_detect(hmm, s, detection)?;
            segment(s, &cps)
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = build_segmented_matrix(&segments, num_items)?;
    let model = nmf_fit(&matrix, rank, iters, seed)?;
    let profiles = segments
        .iter()
        .map(|segs| {
            let last = segs.last().expect("segmentation yields at least one segment");
            let v = incidence_vector(&last.items, num_items)?;
            fold_in(model.q(), &v, fold_in_iters)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FactorPipeline { model, profiles })
}

/// One configured recommendation method, ready to run over a corpus.
#[derive(Debug, Clone)]
pub enum RecMethod<'a> {
    PopRank,
    Mc,
    Bpr(BprConfig),
    Nmf {
        rank: usize,
        iters: usize,
        fold_in_iters: usize,
        seed: u64,
    },
    Smf {
        hmm: &'a HmmParams,
        detection: DetectionConfig,
        rank: usize,
        iters: usize,
        fold_in_iters: usize,
        seed: u64,
    },
}

/// Fits `method` on the corpus and produces one ranked list of `l` items per
/// sequence, excluding the items that sequence already contains.
pub fn recommend_all(
    method: &RecMethod,
    seqs: &[InteractionSequence],
    num_items: usize,
    l: usize,
) -> Result<Vec<Recommendation>> {
    let exclude_of = |s: &InteractionSequence| -> HashSet<usize> { s.items.iter().copied().collect() };
    match method {
        RecMethod::PopRank => {
            let model = poprank_fit(seqs, num_items)?;
            Ok(seqs
                .iter()
                .map(|s| poprank_recommend(&model, &s.user_id, l, &exclude_of(s)))
                .collect())
        }
        RecMethod::Mc => {
            let model = mc_fit(seqs, num_items)?;
            seqs.iter()
                .map(|s| mc_recommend(&model, &s.user_id, s.items.last().copied(), l, &exclude_of(s)))
                .collect()
        }
        RecMethod::Bpr(config) => {
            let model = bpr_fit(seqs, num_items, config)?;
            seqs.iter()
                .map(|s| bpr_recommend(&model, &s.user_id, l, &exclude_of(s)))
                .collect()
        }
        RecMethod::Nmf {
            rank,
            iters,
            fold_in_iters,
            seed,
        } => {
            let pipeline = nmf_pipeline(seqs, num_items, *rank, *iters, *fold_in_iters, *seed)?;
            seqs.iter()
                .zip(&pipeline.profiles)
                .map(|(s, profile)| {
                    factor_recommend(&pipeline.model, &s.user_id, profile, l, &exclude_of(s))
                })
                .collect()
        }
        RecMethod::Smf {
            hmm,
            detection,
            rank,
            iters,
            fold_in_iters,
            seed,
        } => {
            let pipeline = smf_pipeline(
                seqs,
                num_items,
                hmm,
                detection,
                *rank,
                *iters,
                *fold_in_iters,
                *seed,
            )?;
            seqs.iter()
                .zip(&pipeline.profiles)
                .map(|(s, profile)| {
                    factor_recommend(&pipeline.model, &s.user_id, profile, l, &exclude_of(s))
                })
                .collect()
        }
    }
}

// ----------------------------------------------------------------------
// Experiment configuration and reports
// ----------------------------------------------------------------------

/// Recommendation method names as used on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodName {
    PopRank,
    Mc,
    Bpr,
    Nmf,
    Smf,
}

impl MethodName {
    pub const ALL: [MethodName; 5] = [
        MethodName::PopRank,
        MethodName::Mc,
        MethodName::Bpr,
        MethodName::Nmf,
        MethodName::Smf,
    ];
}

impl std::str::FromStr for MethodName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poprank" => Ok(MethodName::PopRank),
            "mc" => Ok(MethodName::Mc),
            "bpr" => Ok(MethodName::Bpr),
            "nmf" => Ok(MethodName::Nmf),
            "smf" => Ok(MethodName::Smf),
            other => Err(Error::Config(format!("unknown method: {other}"))),
        }
    }
}

impl std::fmt::Display for MethodName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MethodName::PopRank => "poprank",
            MethodName::Mc => "mc",
            MethodName::Bpr => "bpr",
            MethodName::Nmf => "nmf",
            MethodName::Smf => "smf",
        })
    }
}

/// Detector names as used on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Hmcd,
    Cusum,
    SlidingWindow,
    RandomPartition,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::Hmcd,
        DetectorKind::Cusum,
        DetectorKind::SlidingWindow,
        DetectorKind::RandomPartition,
    ];
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hmcd" => Ok(DetectorKind::Hmcd),
            "cusum" => Ok(DetectorKind::Cusum),
            "sw" => Ok(DetectorKind::SlidingWindow),
            "rp" => Ok(DetectorKind::RandomPartition),
            other => Err(Error::Config(format!("unknown detector: {other}"))),
        }
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DetectorKind::Hmcd => "hmcd",
            DetectorKind::Cusum => "cusum",
            DetectorKind::SlidingWindow => "sw",
            DetectorKind::RandomPartition => "rp",
        })
    }
}

/// Everything [`run_experiment`] needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub methods: Vec<MethodName>,
    pub detectors: Vec<DetectorKind>,
    /// Held-out suffix length per user.
    pub holdout_n: usize,
    pub pr_cutoffs: Vec<usize>,
    pub ndcg_cutoffs: Vec<usize>,
    pub hidden_states: usize,
    pub hmm_iters: usize,
    /// Detection threshold used by the change-point detector when evaluating
    /// detection quality.
    pub hmcd_tau: f64,
    /// Candidate thresholds tried when tuning the segment-aware recommender.
    pub tau_grid: Vec<f64>,
    pub rank: usize,
    pub nmf_iters: usize,
    pub fold_in_iters: usize,
    /// Rank of the item factors fitted for the distance-based detectors.
    pub detector_rank: usize,
    pub detector_nmf_iters: usize,
    pub bpr_epochs: usize,
    pub bpr_learning_rate: f64,
    pub bpr_regularization: f64,
    /// Fixed CUSUM threshold; `None` tunes it against ground truth.
    pub cusum_tau: Option<f64>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: MethodName::ALL.to_vec(),
            detectors: DetectorKind::ALL.to_vec(),
            holdout_n: 10,
            pr_cutoffs: vec![1, 5, 10],
            ndcg_cutoffs: vec![5, 10],
            hidden_states: 2,
            hmm_iters: 100,
            hmcd_tau: 0.93,
            tau_grid: vec![0.5, 0.7, 0.9, 0.93],
            rank: 40,
            nmf_iters: 200,
            fold_in_iters: 200,
            detector_rank: 10,
            detector_nmf_iters: 200,
            bpr_epochs: 30,
            bpr_learning_rate: 0.01,
            bpr_regularization: 0.0,
            cusum_tau: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() && self.detectors.is_empty() {
            return Err(Error::InvalidParameter(
                "nothing to evaluate: no methods and no detectors".into(),
            ));
        }
        if !self.methods.is_empty() {
            if self.pr_cutoffs.is_empty() && self.ndcg_cutoffs.is_empty() {
                return Err(Error::InvalidParameter("no metric cutoffs given".into()));
            }
            if self.pr_cutoffs.iter().chain(&self.ndcg_cutoffs).any(|&k| k == 0) {
                return Err(Error::InvalidParameter("metric cutoffs must be >= 1".into()));
            }
            if self.methods.contains(&MethodName::Smf) && self.tau_grid.is_empty() {
                return Err(Error::InvalidParameter(
                    "tau grid must be non-empty to evaluate smf".into(),
                ));
            }
        }
        if self.hidden_states == 0 || self.rank == 0 || self.detector_rank == 0 {
            return Err(Error::InvalidParameter(
                "hidden states and factor ranks must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Ranked-list length: long enough for every metric cutoff, and for the
    /// tuning cutoff when the segment-aware method is being tuned.
    fn list_length(&self) -> usize {
        let mut l = self
            .pr_cutoffs
            .iter()
            .chain(&self.ndcg_cutoffs)
            .copied()
            .max()
            .unwrap_or(0);
        if self.methods.contains(&MethodName::Smf) {
            l = l.max(TUNE_CUTOFF);
        }
        l
    }
}

/// Mean ranking metrics for one method, aligned with the report's cutoffs.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: MethodName,
    /// Mean precision at each `pr_cutoffs` entry; `None` when no user could
    /// be evaluated.
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub ndcg: Vec<Option<f64>>,
    pub evaluated: usize,
    pub skipped: usize,
    /// The tuned detection threshold, for the segment-aware method only.
    pub tuned_tau: Option<f64>,
}

/// Displacement statistics for one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorReport {
    pub detector: DetectorKind,
    pub mean_error: f64,
    /// Population standard deviation of the displacement errors.
    pub std_error: f64,
    pub sequences: usize,
    /// The threshold the detector ran with, where one applies.
    pub tau: Option<f64>,
}

/// Full experiment output.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub pr_cutoffs: Vec<usize>,
    pub ndcg_cutoffs: Vec<usize>,
    pub methods: Vec<MethodReport>,
    pub detectors: Vec<DetectorReport>,
}

impl MetricReport {
    /// Ranking metrics as CSV, percentages with three decimals. Empty value
    /// cells mean the metric was undefined (no evaluable user).
    pub fn methods_table(&self) -> String {
        let mut out = String::from("method,metric,k,value,evaluated,skipped,tuned_tau\n");
        let pct = |v: &Option<f64>| v.map(|x| format!("{:.3}", x * 100.0)).unwrap_or_default();
        for report in &self.methods {
            let tau = report.tuned_tau.map(|t| t.to_string()).unwrap_or_default();
            let mut row = |metric: &str, k: usize, value: &Option<f64>| {
                let _ = writeln!(
                    out,
                    "{},{metric},{k},{},{},{},{tau}",
                    report.method,
                    pct(value),
                    report.evaluated,
                    report.skipped
                );
            };
            for (k, value) in self.pr_cutoffs.iter().zip(&report.precision) {
                row("precision", *k, value);
            }
            for (k, value) in self.pr_cutoffs.iter().zip(&report.recall) {
                row("recall", *k, value);
            }
            for (k, value) in self.ndcg_cutoffs.iter().zip(&report.ndcg) {
                row("ndcg", *k, value);
            }
        }
        out
    }

    /// Displacement statistics as CSV, three decimals.
    pub fn detectors_table(&self) -> String {
        let mut out = String::from("detector,mean_error,std_error,sequences,tau\n");
        for report in &self.detectors {
            let tau = report.tau.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.3},{:.3},{},{tau}",
                report.detector, report.mean_error, report.std_error, report.sequences
            );
        }
        out
    }
}

// ----------------------------------------------------------------------
// Experiment internals
// ----------------------------------------------------------------------

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

fn mean_option(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

struct RankingOutcome {
    precision: Vec<Option<f64>>,
    recall: Vec<Option<f64>>,
    ndcg: Vec<Option<f64>>,
}

fn score_recommendations(
    recs: &[Recommendation],
    users: &[HoldoutUser],
    pr_cutoffs: &[usize],
    ndcg_cutoffs: &[usize],
) -> RankingOutcome {
    let per_user = |f: &dyn Fn(&Recommendation, &HoldoutUser) -> Option<f64>| {
        mean_option(recs.iter().zip(users).map(|(r, u)| f(r, u)))
    };
    RankingOutcome {
        precision: pr_cutoffs
            .iter()
            .map(|&k| per_user(&|r, u| precision_at_k(&r.items, &u.heldout, k)))
            .collect(),
        recall: pr_cutoffs
            .iter()
            .map(|&k| per_user(&|r, u| recall_at_k(&r.items, &u.heldout, k)))
            .collect(),
        ndcg: ndcg_cutoffs
            .iter()
            .map(|&k| per_user(&|r, u| ndcg_at_k(&r.items, &u.heldout, k)))
            .collect(),
    }
}

fn mean_tuning_precision(recs: &[Recommendation], users: &[HoldoutUser]) -> f64 {
    mean_option(
        recs.iter()
            .zip(users)
            .map(|(r, u)| precision_at_k(&r.items, &u.heldout, TUNE_CUTOFF)),
    )
    .unwrap_or(0.0)
}

/// Total distance walked along a sequence, the basis of the CUSUM threshold
/// heuristic.
fn path_distance(factors: &ItemFactors, seq: &InteractionSequence) -> f64 {
    seq.items
        .windows(2)
        .map(|w| factors.distance(w[0], w[1]))
        .sum()
}

fn tune_cusum_tau(
    factors: &ItemFactors,
    seqs: &[&InteractionSequence],
    truths: &[usize],
) -> Result<f64> {
    let base = mean(
        &seqs
            .iter()
            .map(|s| path_distance(factors, s))
            .collect::<Vec<_>>(),
    );
    let mut best: Option<(f64, f64)> = None;
    for multiplier in CUSUM_MULTIPLIERS {
        let tau = multiplier * base;
        let mut errors = Vec::with_capacity(seqs.len());
        for (seq, &truth) in seqs.iter().zip(truths) {
            let set = cusum_detect(factors, seq, tau)?;
            errors.push(displacement_error(truth, &set, seq.len()));
        }
        let score = mean(&errors);
        if best.map_or(true, |(_, s)| score < s) {
            best = Some((tau, score));
        }
    }
    Ok(best.expect("multiplier grid is non-empty").0)
}

// ----------------------------------------------------------------------
// The experiment
// ----------------------------------------------------------------------

/// Runs the full evaluation.
///
/// Recommendation methods train on per-user prefixes (the last `holdout_n`
/// items are withheld for scoring). Detectors run over the complete
/// sequences and are scored against `truths`, which must be given in the
/// same order as `seqs`; when `truths` is `None` the detector section of the
/// report stays empty. The whole run is a deterministic function of its
/// inputs.
pub fn run_experiment(
    seqs: &[InteractionSequence],
    truths: Option<&[usize]>,
    num_items: usize,
    config: &ExperimentConfig,
) -> Result<MetricReport> {
    config.validate()?;
    if let Some(t) = truths {
        if t.len() != seqs.len() {
            return Err(Error::InvalidParameter(format!(
                "{} truth labels for {} sequences",
                t.len(),
                seqs.len()
            )));
        }
    }

    let mut report = MetricReport {
        pr_cutoffs: config.pr_cutoffs.clone(),
        ndcg_cutoffs: config.ndcg_cutoffs.clone(),
        methods: Vec::new(),
        detectors: Vec::new(),
    };

    if !config.methods.is_empty() {
        report.methods = evaluate_methods(seqs, num_items, config)?;
    }
    if !config.detectors.is_empty() {
        if let Some(truths) = truths {
            report.detectors = evaluate_detectors(seqs, truths, num_items, config)?;
        } else {
            log::info!("no ground-truth change points; skipping detector evaluation");
        }
    }
    Ok(report)
}

fn evaluate_methods(
    seqs: &[InteractionSequence],
    num_items: usize,
    config: &ExperimentConfig,
) -> Result<Vec<MethodReport>> {
    let split = holdout_split(seqs, config.holdout_n)?;
    let l = config.list_length();

    if split.users.is_empty() {
        log::warn!("every sequence is too short to hold out {} items", config.holdout_n);
        return Ok(config
            .methods
            .iter()
            .map(|&method| MethodReport {
                method,
                precision: vec![None; config.pr_cutoffs.len()],
                recall: vec![None; config.pr_cutoffs.len()],
                ndcg: vec![None; config.ndcg_cutoffs.len()],
                evaluated: 0,
                skipped: split.skipped,
                tuned_tau: None,
            })
            .collect());
    }

    let prefixes: Vec<InteractionSequence> =
        split.users.iter().map(|u| u.prefix.clone()).collect();
    let nmf_seed = rng::sub_seed(config.seed, STAGE_NMF);

    // The segment-aware method needs a drift model over the prefixes; fit it
    // once and reuse it for every candidate threshold.
    let prefix_hmm = if config.methods.contains(&MethodName::Smf) {
        Some(baum_welch_fit(
            &prefixes,
            config.hidden_states,
            num_items,
            &FitConfig {
                max_iters: config.hmm_iters,
                seed: rng::sub_seed(config.seed, STAGE_REC_HMM),
                ..FitConfig::default()
            },
        )?)
    } else {
        None
    };

    let mut reports = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let (recs, tuned_tau) = match method {
            MethodName::PopRank => (
                recommend_all(&RecMethod::PopRank, &prefixes, num_items, l)?,
                None,
            ),
            MethodName::Mc => (recommend_all(&RecMethod::Mc, &prefixes, num_items, l)?, None),
            MethodName::Bpr => {
                let bpr = BprConfig {
                    factors: config.rank,
                    epochs: config.bpr_epochs,
                    learning_rate: config.bpr_learning_rate,
                    regularization: config.bpr_regularization,
                    seed: rng::sub_seed(config.seed, STAGE_BPR),
                };
                (
                    recommend_all(&RecMethod::Bpr(bpr), &prefixes, num_items, l)?,
                    None,
                )
            }
            MethodName::Nmf => {
                let method = RecMethod::Nmf {
                    rank: config.rank,
                    iters: config.nmf_iters,
                    fold_in_iters: config.fold_in_iters,
                    seed: nmf_seed,
                };
                (recommend_all(&method, &prefixes, num_items, l)?, None)
            }
            MethodName::Smf => {
                let hmm = prefix_hmm.as_ref().expect("fitted above");
                let mut best: Option<(f64, f64, Vec<Recommendation>)> = None;
                let mut grid = config.tau_grid.clone();
                grid.sort_by(f64::total_cmp);
                grid.dedup();
                for &tau in &grid {
                    let method = RecMethod::Smf {
                        hmm,
                        detection: DetectionConfig {
                            tau,
                            ..DetectionConfig::default()
                        },
                        rank: config.rank,
                        iters: config.nmf_iters,
                        fold_in_iters: config.fold_in_iters,
                        seed: nmf_seed,
                    };
                    let recs = recommend_all(&method, &prefixes, num_items, l)?;
                    let score = mean_tuning_precision(&recs, &split.users);
                    if best.as_ref().map_or(true, |(_, s, _)| score > *s) {
                        best = Some((tau, score, recs));
                    }
                }
                let (tau, _, recs) = best.expect("tau grid validated non-empty");
                (recs, Some(tau))
            }
        };
        let outcome =
            score_recommendations(&recs, &split.users, &config.pr_cutoffs, &config.ndcg_cutoffs);
        reports.push(MethodReport {
            method,
            precision: outcome.precision,
            recall: outcome.recall,
            ndcg: outcome.ndcg,
            evaluated: split.users.len(),
            skipped: split.skipped,
            tuned_tau,
        });
    }
    Ok(reports)
}

fn evaluate_detectors(
    seqs: &[InteractionSequence],
    truths: &[usize],
    num_items: usize,
    config: &ExperimentConfig,
) -> Result<Vec<DetectorReport>> {
    // Detectors need at least two items to place a change point.
    let usable: Vec<usize> = (0..seqs.len()).filter(|&i| seqs[i].len() >= 2).collect();
    if usable.is_empty() {
        return Ok(config
            .detectors
            .iter()
            .map(|&detector| DetectorReport {
                detector,
                mean_error: 0.0,
                std_error: 0.0,
                sequences: 0,
                tau: None,
            })
            .collect());
    }
    let det_seqs: Vec<&InteractionSequence> = usable.iter().map(|&i| &seqs[i]).collect();
    let det_truths: Vec<usize> = usable.iter().map(|&i| truths[i]).collect();

    let hmm = if config.detectors.contains(&DetectorKind::Hmcd) {
        Some(baum_welch_fit(
            seqs,
            config.hidden_states,
            num_items,
            &FitConfig {
                max_iters: config.hmm_iters,
                seed: rng::sub_seed(config.seed, STAGE_DETECT_HMM),
                ..FitConfig::default()
            },
        )?)
    } else {
        None
    };
    let needs_factors = config
        .detectors
        .iter()
        .any(|d| matches!(d, DetectorKind::Cusum | DetectorKind::SlidingWindow));
    let factors = if needs_factors {
        let rows: Vec<Vec<InteractionSequence>> = seqs.iter().map(|s| vec![s.clone()]).collect();
        let matrix = build_segmented_matrix(&rows, num_items)?;
        let model = nmf_fit(
            &matrix,
            config.detector_rank,
            config.detector_nmf_iters,
            rng::sub_seed(config.seed, STAGE_DETECT_NMF),
        )?;
        Some(ItemFactors::new(model.q().to_owned())?)
    } else {
        None
    };

    let mut reports = Vec::with_capacity(config.detectors.len());
    for &detector in &config.detectors {
        let (sets, tau): (Vec<ChangePointSet>, Option<f64>) = match detector {
            DetectorKind::Hmcd => {
                let model = hmm.as_ref().expect("fitted above");
                let detection = DetectionConfig {
                    tau: config.hmcd_tau,
                    ..DetectionConfig::default()
                };
                let sets = det_seqs
                    .iter()
                    .map(|s| hmcd_detect(model, s, &detection))
                    .collect::<Result<_>>()?;
                (sets, Some(config.hmcd_tau))
            }
            DetectorKind::Cusum => {
                let factors = factors.as_ref().expect("fitted above");
                let tau = match config.cusum_tau {
                    Some(t) => t,
                    None => tune_cusum_tau(factors, &det_seqs, &det_truths)?,
                };
                let sets = det_seqs
                    .iter()
                    .map(|s| cusum_detect(factors, s, tau))
                    .collect::<Result<_>>()?;
                (sets, Some(tau))
            }
            DetectorKind::SlidingWindow => {
                let factors = factors.as_ref().expect("fitted above");
                let sets = det_seqs
                    .iter()
                    .map(|s| sliding_window_detect(factors, s))
                    .collect::<Result<_>>()?;
                (sets, None)
            }
            DetectorKind::RandomPartition => {
                let seed = rng::sub_seed(config.seed, STAGE_RP);
                let sets = det_seqs
                    .iter()
                    .enumerate()
                    .map(|(i, s)| random_partition(s, rng::sub_seed(seed, i as u64)))
                    .collect::<Result<_>>()?;
                (sets, None)
            }
        };
        let errors: Vec<f64> = sets
            .iter()
            .zip(det_seqs.iter().zip(&det_truths))
            .map(|(set, (seq, &truth))| displacement_error(truth, set, seq.len()))
            .collect();
        reports.push(DetectorReport {
            detector,
            mean_error: mean(&errors),
            std_error: population_std(&errors),
            sequences: errors.len(),
            tau,
        });
    }
    Ok(reports)
}

// ----------------------------------------------------------------------
// Tests
// ----------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{planted_hmm_pool, synth_concat, LabeledSequence};

    fn seq(user: &str, items: &[usize]) -> InteractionSequence {
        InteractionSequence::new(user, items.to_vec())
    }

    fn cps(indices: &[usize], scores: &[f64], len: usize) -> ChangePointSet {
        ChangePointSet::new(indices.to_vec(), scores.to_vec(), len).unwrap()
    }

    // -------------------------------------------------- displacement

    #[test]
    fn displacement_is_the_gap_to_the_best_prediction() {
        assert_eq!(displacement_error(50, &cps(&[53], &[1.0], 110), 110), 3.0);
        assert_eq!(displacement_error(50, &cps(&[50], &[1.0], 110), 110), 0.0);
    }

    #[test]
    fn empty_prediction_costs_the_worst_gap() {
        assert_eq!(displacement_error(50, &ChangePointSet::empty(), 110), 60.0);
        assert_eq!(displacement_error(70, &ChangePointSet::empty(), 100), 70.0);
    }

    #[test]
    fn displacement_uses_the_highest_scored_point() {
        let set = cps(&[10, 48], &[0.5, 0.9], 110);
        assert_eq!(displacement_error(50, &set, 110), 2.0);
        // Score tie: the earliest point wins.
        let tied = cps(&[40, 60], &[0.9, 0.9], 110);
        assert_eq!(displacement_error(50, &tied, 110), 10.0);
    }

    // -------------------------------------------------- precision / recall

    #[test]
    fn precision_counts_hits_over_k() {
        // Two of the top five are held out.
        let p = precision_at_k(&[1, 3, 4, 5, 6], &[1, 3, 8], 5).unwrap();
        approx::assert_relative_eq!(p, 0.4);
        // One hit in the top ten over five held-out items.
        let recs: Vec<usize> = (0..10).collect();
        let r = recall_at_k(&recs, &[0, 20, 21, 22, 23], 10).unwrap();
        approx::assert_relative_eq!(r, 0.2);
    }

    #[test]
    fn short_lists_still_divide_by_k() {
        let p = precision_at_k(&[1], &[1, 2], 5).unwrap();
        approx::assert_relative_eq!(p, 0.2);
        let r = recall_at_k(&[1], &[1, 2], 5).unwrap();
        approx::assert_relative_eq!(r, 0.5);
    }

    #[test]
    fn undefined_metrics_are_none() {
        assert_eq!(precision_at_k(&[1], &[], 5), None);
        assert_eq!(precision_at_k(&[1], &[1], 0), None);
        assert_eq!(recall_at_k(&[1], &[], 5), None);
        assert_eq!(ndcg_at_k(&[1], &[], 5), None);
        assert_eq!(ndcg_at_k(&[1], &[1], 0), None);
    }

    // -------------------------------------------------- ndcg

    #[test]
    fn swapped_pair_matches_the_hand_computed_value() {
        // Held out x then y; recommended y then x.
        let value = ndcg_at_k(&[9, 7], &[7, 9], 2).unwrap();
        // (1 + 2/log2 3) / (2 + 1/log2 3), evaluated in high precision.
        approx::assert_relative_eq!(value, 0.8597186998521972, epsilon = 1e-12);
    }

    #[test]
    fn temporal_order_scores_a_perfect_one() {
        let value = ndcg_at_k(&[7, 9, 4], &[7, 9, 4], 3).unwrap();
        approx::assert_relative_eq!(value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn disjoint_recommendations_score_zero() {
        assert_eq!(ndcg_at_k(&[1, 2], &[3, 4], 2), Some(0.0));
    }

    #[test]
    fn ndcg_truncates_at_k() {
        // Top-1 holds the *second* held-out item: DCG = 1, ideal = 2.
        let value = ndcg_at_k(&[9, 7], &[7, 9], 1).unwrap();
        approx::assert_relative_eq!(value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_heldout_items_count_once() {
        let with_dup = ndcg_at_k(&[9, 7], &[7, 7, 9], 2).unwrap();
        let without = ndcg_at_k(&[9, 7], &[7, 9], 2).unwrap();
        approx::assert_relative_eq!(with_dup, without, epsilon = 1e-12);
    }

    // -------------------------------------------------- tuning

    #[test]
    fn tuning_maximizes_with_ties_to_the_smaller_tau() {
        let (tau, score) = tune_tau(&[0.9, 0.5, 0.7], |t| {
            Ok(if t == 0.5 { 0.3 } else { 0.8 })
        })
        .unwrap();
        assert_eq!(tau, 0.7);
        assert_eq!(score, 0.8);
    }

    #[test]
    fn tuning_rejects_an_empty_grid_and_propagates_errors() {
        assert!(tune_tau(&[], |_| Ok(0.0)).is_err());
        let result = tune_tau(&[0.5], |_| -> Result<f64> {
            Err(Error::EmptyInput("boom".into()))
        });
        assert!(result.is_err());
    }

    // -------------------------------------------------- corpora for harness tests

    /// Small labeled corpus with planted drift.
    fn small_corpus() -> (Vec<InteractionSequence>, Vec<usize>, usize) {
        let pool = planted_hmm_pool(2, 12, &[40, 30], 7).unwrap();
        let labeled: Vec<LabeledSequence> = synth_concat(&pool, 14, 11, 6, 12).unwrap();
        let seqs: Vec<InteractionSequence> = labeled.iter().map(|l| l.seq.clone()).collect();
        let truths: Vec<usize> = labeled.iter().map(|l| l.change_point).collect();
        (seqs, truths, 12)
    }

    fn fast_config() -> ExperimentConfig {
        ExperimentConfig {
            holdout_n: 4,
            pr_cutoffs: vec![1, 5],
            ndcg_cutoffs: vec![5],
            hmm_iters: 15,
            tau_grid: vec![0.7, 0.93],
            rank: 6,
            nmf_iters: 40,
            fold_in_iters: 40,
            detector_rank: 4,
            detector_nmf_iters: 40,
            bpr_epochs: 5,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn experiment_is_deterministic() {
        let (seqs, truths, num_items) = small_corpus();
        let config = fast_config();
        let a = run_experiment(&seqs, Some(&truths), num_items, &config).unwrap();
        let b = run_experiment(&seqs, Some(&truths), num_items, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.methods.len(), 5);
        assert_eq!(a.detectors.len(), 4);
        for m in &a.methods {
            assert_eq!(m.evaluated, seqs.len());
            for v in m.precision.iter().chain(&m.recall).chain(&m.ndcg) {
                let v = v.expect("all users evaluable");
                assert!((0.0..=1.0).contains(&v), "metric out of range: {v}");
            }
        }
        for d in &a.detectors {
            assert_eq!(d.sequences, seqs.len());
            assert!(d.mean_error >= 0.0 && d.std_error >= 0.0);
        }
    }

    #[test]
    fn without_truth_labels_detectors_are_skipped() {
        let (seqs, _, num_items) = small_corpus();
        let report = run_experiment(&seqs, None, num_items, &fast_config()).unwrap();
        assert!(report.detectors.is_empty());
        assert_eq!(report.methods.len(), 5);
    }

    #[test]
    fn popularity_hits_a_constructed_heldout() {
        // Item 1 floods the prefixes; item 0 opens every held-out suffix and
        // is unseen in training, so the most-popular unseen item is a hit.
        let seqs = vec![
            seq("u1", &[1, 1, 1, 0, 2]),
            seq("u2", &[1, 1, 0, 3]),
        ];
        let config = ExperimentConfig {
            methods: vec![MethodName::PopRank],
            detectors: vec![],
            holdout_n: 2,
            pr_cutoffs: vec![1],
            ndcg_cutoffs: vec![],
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&seqs, None, 4, &config).unwrap();
        assert_eq!(report.methods[0].precision[0], Some(1.0));
        assert_eq!(report.methods[0].evaluated, 2);
    }

    #[test]
    fn degenerate_threshold_makes_smf_and_nmf_identical() {
        // With tau = 1 no candidate survives normalization, so segmentation
        // is a no-op and the two factorization paths coincide exactly.
        let (seqs, _, num_items) = small_corpus();
        let config = ExperimentConfig {
            methods: vec![MethodName::Nmf, MethodName::Smf],
            detectors: vec![],
            tau_grid: vec![1.0],
            ..fast_config()
        };
        let report = run_experiment(&seqs, None, num_items, &config).unwrap();
        let nmf = &report.methods[0];
        let smf = &report.methods[1];
        assert_eq!(nmf.precision, smf.precision);
        assert_eq!(nmf.recall, smf.recall);
        assert_eq!(nmf.ndcg, smf.ndcg);
        assert_eq!(smf.tuned_tau, Some(1.0));
    }

    #[test]
    fn short_sequences_are_counted_as_skipped() {
        let seqs = vec![seq("long", &[0, 1, 2, 0, 1, 2]), seq("short", &[0, 1])];
        let config = ExperimentConfig {
            methods: vec![MethodName::PopRank],
            detectors: vec![],
            holdout_n: 3,
            pr_cutoffs: vec![1],
            ndcg_cutoffs: vec![],
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&seqs, None, 3, &config).unwrap();
        assert_eq!(report.methods[0].evaluated, 1);
        assert_eq!(report.methods[0].skipped, 1);
    }

    #[test]
    fn config_validation_catches_bad_setups() {
        let (seqs, _, num_items) = small_corpus();
        let nothing = ExperimentConfig {
            methods: vec![],
            detectors: vec![],
            ..ExperimentConfig::default()
        };
        assert!(run_experiment(&seqs, None, num_items, &nothing).is_err());

        let zero_cutoff = ExperimentConfig {
            pr_cutoffs: vec![0],
            ..ExperimentConfig::default()
        };
        assert!(run_experiment(&seqs, None, num_items, &zero_cutoff).is_err());

        let bad_truths = ExperimentConfig::default();
        assert!(run_experiment(&seqs, Some(&[1]), num_items, &bad_truths).is_err());
    }

    #[test]
    fn name_parsing_round_trips() {
        for m in MethodName::ALL {
            assert_eq!(m.to_string().parse::<MethodName>().unwrap(), m);
        }
        for d in DetectorKind::ALL {
            assert_eq!(d.to_string().parse::<DetectorKind>().unwrap(), d);
        }
        assert!(matches!(
            "nope".parse::<MethodName>().unwrap_err(),
            Error::Config(_)
        ));
        assert!(matches!(
            "nope".parse::<DetectorKind>().unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn tables_have_stable_headers_and_formatting() {
        let report = MetricReport {
            pr_cutoffs: vec![1],
            ndcg_cutoffs: vec![5],
            methods: vec![MethodReport {
                method: MethodName::PopRank,
                precision: vec![Some(1.0)],
                recall: vec![Some(1.0 / 3.0)],
                ndcg: vec![None],
                evaluated: 2,
                skipped: 0,
                tuned_tau: None,
            }],
            detectors: vec![DetectorReport {
                detector: DetectorKind::Hmcd,
                mean_error: 3.125,
                std_error: 0.5,
                sequences: 10,
                tau: Some(0.93),
            }],
        };
        let methods = report.methods_table();
        assert!(methods.starts_with("method,metric,k,value,evaluated,skipped,tuned_tau\n"));
        assert!(methods.contains("poprank,precision,1,100.000,2,0,\n"));
        assert!(methods.contains("poprank,recall,1,33.333,2,0,\n"));
        assert!(methods.contains("poprank,ndcg,5,,2,0,\n"));
        let detectors = report.detectors_table();
        assert!(detectors.starts_with("detector,mean_error,std_error,sequences,tau\n"));
        assert!(detectors.contains("hmcd,3.125,0.500,10,0.93\n"));
    }

    #[test]
    fn recommend_all_matches_the_direct_path() {
        let seqs = vec![seq("a", &[0, 1]), seq("b", &[1])];
        let recs = recommend_all(&RecMethod::PopRank, &seqs, 3, 2).unwrap();
        let model = poprank_fit(&seqs, 3).unwrap();
        let direct =
            poprank_recommend(&model, "a", 2, &[0usize, 1].into_iter().collect::<HashSet<_>>());
        assert_eq!(recs[0], direct);
    }

    #[test]
    fn ranked_lists_never_contain_training_items() {
        let (seqs, _, num_items) = small_corpus();
        let methods = [
            RecMethod::PopRank,
            RecMethod::Mc,
            RecMethod::Nmf {
                rank: 4,
                iters: 20,
                fold_in_iters: 20,
                seed: 0,
            },
        ];
        for method in methods {
            let recs = recommend_all(&method, &seqs, num_items, 5).unwrap();
            for (rec, s) in recs.iter().zip(&seqs) {
                let own: HashSet<usize> = s.items.iter().copied().collect();
                assert!(rec.items.iter().all(|i| !own.contains(i)));
            }
        }
    }
}
