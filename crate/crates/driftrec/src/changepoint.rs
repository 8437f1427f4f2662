//! Change-point detection over interaction sequences.
//!
//! The primary detector scores Viterbi state switches: a timestep `t >= 1`
//! whose decoded state differs from `t - 1` is a candidate, scored by
//! `P(state_t | state_{t-1}) * P(item_t | state_t)`. In the default
//! `candidate-max` mode those scores are normalized by the largest candidate
//! score in the sequence before thresholding, so tau is comparable across
//! sequences; `raw` mode thresholds the probability product directly.
//!
//! Three baselines share the interface: a distance CUSUM, an exhaustive
//! sliding-window split, and a seeded uniform random partition. The baselines
//! return at most one change point; the Viterbi detector may return many.

use ndarray::Array2;
use rand::Rng;

use crate::data::InteractionSequence;
use crate::error::{Error, Result};
use crate::hmm::{viterbi_decode, HmmParams};
use crate::rng;

// ----------------------------------------------------------------------
// Change-point sets
// ----------------------------------------------------------------------

/// Detected change points for one sequence: strictly increasing indices in
/// `[1, T)` with a parallel list of detection scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChangePointSet {
    indices: Vec<usize>,
    scores: Vec<f64>,
}

impl ChangePointSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates indices against the owning sequence's length.
    pub fn new(indices: Vec<usize>, scores: Vec<f64>, seq_len: usize) -> Result<Self> {
        if indices.len() != scores.len() {
            return Err(Error::InvalidChangePoint(format!(
                "{} indices with {} scores",
                indices.len(),
                scores.len()
            )));
        }
        for (k, &idx) in indices.iter().enumerate() {
            if idx == 0 || idx >= seq_len {
                return Err(Error::InvalidChangePoint(format!(
                    "index {idx} outside [1, {seq_len})"
                )));
            }
            if k > 0 && indices[k - 1] >= idx {
                return Err(Error::InvalidChangePoint(format!(
                    "indices not strictly increasing at {idx}"
                )));
            }
        }
        Ok(Self { indices, scores })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.scores.iter().copied())
    }

    /// Highest-scoring change point (ties toward the lowest index).
    pub fn best(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (idx, score) in self.iter() {
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((idx, score));
            }
        }
        best
    }
}

// ----------------------------------------------------------------------
// Viterbi-switch detector
// ----------------------------------------------------------------------

/// Score handling for [`hmcd_detect`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Threshold the raw transition-times-emission product.
    Raw,
    /// Divide each candidate score by the sequence's maximum candidate score.
    CandidateMax,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ScoreMode::Raw),
            "candidate-max" => Ok(ScoreMode::CandidateMax),
            other => Err(Error::Config(format!("unknown score mode: {other}"))),
        }
    }
}

impl std::fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreMode::Raw => "raw",
            ScoreMode::CandidateMax => "candidate-max",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionConfig {
    /// Candidates with score strictly greater than `tau` are kept.
    pub tau: f64,
    pub score_mode: ScoreMode,
    /// Keep at most this many change points (the highest-scoring ones).
    pub max_changes: Option<usize>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            tau: 0.93,
            score_mode: ScoreMode::CandidateMax,
            max_changes: None,
        }
    }
}

impl DetectionConfig {
    fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "tau must be a non-negative float, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Detects change points as thresholded Viterbi state switches.
pub fn hmcd_detect(
    model: &HmmParams,
    seq: &InteractionSequence,
    config: &DetectionConfig,
) -> Result<ChangePointSet> {
    config.validate()?;
    let decoded = viterbi_decode(model, seq)?;

    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for t in 1..decoded.path.len() {
        if decoded.path[t] != decoded.path[t - 1] {
            candidates.push((t, decoded.step_scores[t]));
        }
    }
    if let ScoreMode::CandidateMax = config.score_mode {
        let max = candidates.iter().map(|&(_, s)| s).fold(0.0f64, f64::max);
        if max > 0.0 {
            for (_, score) in candidates.iter_mut() {
                *score /= max;
            }
        }
    }
    candidates.retain(|&(_, score)| score > config.tau);

    if let Some(cap) = config.max_changes {
        if candidates.len() > cap {
            // Keep the highest scores, ties toward earlier indices, then
            // restore temporal order.
            candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
            candidates.truncate(cap);
            candidates.sort_by_key(|&(idx, _)| idx);
        }
    }

    let (indices, scores) = candidates.into_iter().unzip();
    ChangePointSet::new(indices, scores, seq.len())
}

/// Splits a sequence at each change point. `k` change points produce `k + 1`
/// non-empty segments that concatenate back to the original sequence.
pub fn segment(
    seq: &InteractionSequence,
    change_points: &ChangePointSet,
) -> Result<Vec<InteractionSequence>> {
    for (k, &idx) in change_points.indices().iter().enumerate() {
        if idx == 0 || idx >= seq.len() {
            return Err(Error::InvalidChangePoint(format!(
                "user {}: index {idx} outside [1, {})",
                seq.user_id,
                seq.len()
            )));
        }
        if k > 0 && change_points.indices()[k - 1] >= idx {
            return Err(Error::InvalidChangePoint(format!(
                "user {}: indices not strictly increasing at {idx}",
                seq.user_id
            )));
        }
    }
    let mut bounds = Vec::with_capacity(change_points.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(change_points.indices());
    bounds.push(seq.len());
    Ok(bounds
        .windows(2)
        .map(|w| InteractionSequence::new(seq.user_id.clone(), seq.items[w[0]..w[1]].to_vec()))
        .collect())
}

// ----------------------------------------------------------------------
// Item factors for the distance-based baselines
// ----------------------------------------------------------------------

/// Latent item representations (one row per item) used by the CUSUM and
/// sliding-window baselines to measure distances between items.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemFactors {
    factors: Array2<f64>,
}

impl ItemFactors {
    pub fn new(factors: Array2<f64>) -> Result<Self> {
        if factors.nrows() == 0 || factors.ncols() == 0 {
            return Err(Error::InvalidParameter("empty factor matrix".into()));
        }
        if factors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "factor matrix contains a non-finite entry".into(),
            ));
        }
        Ok(Self { factors })
    }

    pub fn num_items(&self) -> usize {
        self.factors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.factors.ncols()
    }

    /// Euclidean distance between two item rows.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let ra = self.factors.row(a);
        let rb = self.factors.row(b);
        ra.iter()
            .zip(rb.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    fn check_seq(&self, seq: &InteractionSequence) -> Result<()> {
        if let Some(&bad) = seq.items.iter().find(|&&i| i >= self.num_items()) {
            return Err(Error::Vocabulary(format!(
                "user {}: item index {bad} has no factor row (have {})",
                seq.user_id,
                self.num_items()
            )));
        }
        Ok(())
    }
}

// ----------------------------------------------------------------------
// Baseline detectors
// ----------------------------------------------------------------------

fn require_two(seq: &InteractionSequence) -> Result<()> {
    if seq.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "user {}: need at least 2 items to place a change point",
            seq.user_id
        )));
    }
    Ok(())
}

/// Cumulative-sum detector: accumulates distances between adjacent items and
/// fires at the first index where the sum exceeds `tau`. At most one change
/// point; appending items after the exceedance cannot alter the result.
pub fn cusum_detect(
    factors: &ItemFactors,
    seq: &InteractionSequence,
    tau: f64,
) -> Result<ChangePointSet> {
    require_two(seq)?;
    factors.check_seq(seq)?;
    if !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("tau must be finite, got {tau}")));
    }
    let mut sum = 0.0f64;
    for j in 1..seq.len() {
        sum += factors.distance(seq.items[j - 1], seq.items[j]);
        if sum > tau {
            return ChangePointSet::new(vec![j], vec![sum], seq.len());
        }
    }
    Ok(ChangePointSet::empty())
}

/// Exhaustive split-point search: maximizes the mean inter-partition distance
/// minus the average of the two mean intra-partition distances. Ties resolve
/// to the smallest index. Always returns exactly one change point.
pub fn sliding_window_detect(
    factors: &ItemFactors,
    seq: &InteractionSequence,
) -> Result<ChangePointSet> {
    require_two(seq)?;
    factors.check_seq(seq)?;
    let t_len = seq.len();

    // Pairwise distances once, then O(T) incremental updates per split:
    // moving element e = t-1 into the left partition converts its left-facing
    // pairs from cross to intra-left and its right-facing pairs from
    // intra-right to cross.
    let mut dist = Array2::<f64>::zeros((t_len, t_len));
    for i in 0..t_len {
        for j in i + 1..t_len {
            let d = factors.distance(seq.items[i], seq.items[j]);
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    let total: f64 = (0..t_len)
        .map(|i| (i + 1..t_len).map(|j| dist[(i, j)]).sum::<f64>())
        .sum();

    let objective = |left: f64, cross: f64, right: f64, t: usize| -> f64 {
        let nl = t as f64;
        let nr = (t_len - t) as f64;
        let left_mean = if t > 1 { left / (nl * (nl - 1.0) / 2.0) } else { 0.0 };
        let right_mean = if t_len - t > 1 {
            right / (nr * (nr - 1.0) / 2.0)
        } else {
            0.0
        };
        cross / (nl * nr) - (left_mean + right_mean) / 2.0
    };

    let mut left = 0.0f64;
    let mut cross: f64 = (1..t_len).map(|j| dist[(0, j)]).sum();
    let mut right = total - cross;
    let mut best_t = 1usize;
    let mut best_objective = objective(left, cross, right, 1);

    for t in 2..t_len {
        let e = t - 1;
        let to_left: f64 = (0..e).map(|i| dist[(i, e)]).sum();
        let to_right: f64 = (e + 1..t_len).map(|j| dist[(e, j)]).sum();
        left += to_left;
        cross = cross - to_left + to_right;
        right -= to_right;
        let objective_t = objective(left, cross, right, t);
        if objective_t > best_objective {
            best_objective = objective_t;
            best_t = t;
        }
    }
    ChangePointSet::new(vec![best_t], vec![best_objective], seq.len())
}

/// Uniform random single change point in `[1, T)`, deterministic per seed.
pub fn random_partition(seq: &InteractionSequence, seed: u64) -> Result<ChangePointSet> {
    require_two(seq)?;
    let mut rng = rng::seeded(seed, 0);
    let idx = rng.gen_range(1..seq.len());
    ChangePointSet::new(vec![idx], vec![1.0], seq.len())
}

// ----------------------------------------------------------------------
// Uniform detector interface
// ----------------------------------------------------------------------

/// A configured detector, ready to run over a corpus.
#[derive(Debug, Clone)]
pub enum DetectorSpec<'a> {
    Hmcd {
        model: &'a HmmParams,
        config: DetectionConfig,
    },
    Cusum {
        factors: &'a ItemFactors,
        tau: f64,
    },
    SlidingWindow {
        factors: &'a ItemFactors,
    },
    /// Uses an independent sub-seed per sequence.
    RandomPartition {
        seed: u64,
    },
}

/// Runs one detector across a corpus, one change-point set per sequence.
pub fn detect_all(spec: &DetectorSpec, seqs: &[InteractionSequence]) -> Result<Vec<ChangePointSet>> {
    seqs.iter()
        .enumerate()
        .map(|(i, seq)| match spec {
            DetectorSpec::Hmcd { model, config } => hmcd_detect(model, seq, config),
            DetectorSpec::Cusum { factors, tau } => cusum_detect(factors, seq, *tau),
            DetectorSpec::SlidingWindow { factors } => sliding_window_detect(factors, seq),
            DetectorSpec::RandomPartition { seed } => {
                random_partition(seq, rng::sub_seed(*seed, i as u64))
            }
        })
        .collect()
}

// ----------------------------------------------------------------------
// Tests
// ----------------------------------------------------------------------
