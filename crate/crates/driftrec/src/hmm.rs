//! Discrete-observation hidden Markov models over item vocabularies.
//!
//! Provides the three operations the rest of the pipeline builds on:
//!
//! * [`forward_log_likelihood`] — scaled forward algorithm, numerically safe
//!   for sequences of arbitrary length;
//! * [`viterbi_decode`] — log-space most-likely state path with per-step
//!   transition-times-emission scores;
//! * [`baum_welch_fit`] — multi-sequence EM with pooled expected counts and
//!   additive smoothing of transition/emission counts.
//!
//! Model files are a self-describing text document:
//!
//! ```text
//! hmm-model v1
//! states 2
//! items 3
//! seed 42
//! pi 1 0
//! trans 0.9 0.1
//! trans 0 1
//! emis 0.9 0.1 0
//! emis 0 0.1 0.9
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so loading a saved
//! model and saving it again reproduces the file byte for byte.

use ndarray::{Array1, Array2};
use rand::Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::InteractionSequence;
use crate::error::{Error, Result};
use crate::rng;

/// Tolerance for validating that probability rows sum to one.
const ROW_SUM_TOLERANCE: f64 = 1e-9;

// ----------------------------------------------------------------------
// Parameters
// ----------------------------------------------------------------------

/// Parameters of a discrete HMM: initial distribution `pi` (h), transition
/// matrix `trans` (h x h), and emission matrix `emis` (h x m).
///
/// Construction validates stochasticity, so a value of this type always holds
/// non-negative rows summing to one within `1e-9`.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    num_states: usize,
    num_items: usize,
    pi: Array1<f64>,
    trans: Array2<f64>,
    emis: Array2<f64>,
    /// Seed the model was trained with (0 for hand-built models).
    seed: u64,
}

impl HmmParams {
    pub fn new(pi: Array1<f64>, trans: Array2<f64>, emis: Array2<f64>, seed: u64) -> Result<Self> {
        let num_states = pi.len();
        if num_states == 0 {
            return Err(Error::InvalidParameter("model needs at least one state".into()));
        }
        let num_items = emis.ncols();
        if num_items == 0 {
            return Err(Error::InvalidParameter("model needs at least one item".into()));
        }
        if trans.nrows() != num_states || trans.ncols() != num_states || emis.nrows() != num_states
        {
            return Err(Error::InvalidParameter(format!(
                "shape mismatch: pi {}, trans {}x{}, emis {}x{}",
                num_states,
                trans.nrows(),
                trans.ncols(),
                emis.nrows(),
                emis.ncols()
            )));
        }
        check_distribution(pi.as_slice().expect("contiguous"), "pi")?;
        for (i, row) in trans.rows().into_iter().enumerate() {
            check_distribution(row.as_slice().expect("contiguous"), &format!("trans[{i}]"))?;
        }
        for (i, row) in emis.rows().into_iter().enumerate() {
            check_distribution(row.as_slice().expect("contiguous"), &format!("emis[{i}]"))?;
        }
        Ok(Self {
            num_states,
            num_items,
            pi,
            trans,
            emis,
            seed,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn pi(&self) -> &Array1<f64> {
        &self.pi
    }

    pub fn trans(&self) -> &Array2<f64> {
        &self.trans
    }

    pub fn emis(&self) -> &Array2<f64> {
        &self.emis
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Renders the canonical model document described in the module docs.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("hmm-model v1\n");
        let _ = writeln!(out, "states {}", self.num_states);
        let _ = writeln!(out, "items {}", self.num_items);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "pi {}", fmt_row(self.pi.as_slice().expect("contiguous")));
        for row in self.trans.rows() {
            let _ = writeln!(out, "trans {}", fmt_row(row.as_slice().expect("contiguous")));
        }
        for row in self.emis.rows() {
            let _ = writeln!(out, "emis {}", fmt_row(row.as_slice().expect("contiguous")));
        }
        out
    }

    /// Parses [`HmmParams::to_text`] output; validates like [`HmmParams::new`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let magic = lines.next().unwrap_or_default();
        if magic != "hmm-model v1" {
            return Err(Error::ModelFormat(format!(
                "expected `hmm-model v1` header, found `{magic}`"
            )));
        }
        let num_states = parse_keyword_int(lines.next(), "states")?;
        let num_items = parse_keyword_int(lines.next(), "items")?;
        let seed = parse_keyword_int(lines.next(), "seed")? as u64;
        let pi = parse_keyword_row(lines.next(), "pi", num_states)?;
        let mut trans = Vec::with_capacity(num_states * num_states);
        for _ in 0..num_states {
            trans.extend(parse_keyword_row(lines.next(), "trans", num_states)?);
        }
        let mut emis = Vec::with_capacity(num_states * num_items);
        for _ in 0..num_states {
            emis.extend(parse_keyword_row(lines.next(), "emis", num_items)?);
        }
        if let Some(extra) = lines.next() {
            return Err(Error::ModelFormat(format!("unexpected trailing line `{extra}`")));
        }
        Self::new(
            Array1::from_vec(pi),
            Array2::from_shape_vec((num_states, num_states), trans).expect("sized above"),
            Array2::from_shape_vec((num_states, num_items), emis).expect("sized above"),
            seed,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "{what} contains a negative or non-finite entry"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

pub(crate) fn fmt_row(row: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out
}

pub(crate) fn parse_keyword_int(line: Option<&str>, keyword: &str) -> Result<usize> {
    let line = line.ok_or_else(|| Error::ModelFormat(format!("missing `{keyword}` line")))?;
    let value = line
        .strip_prefix(keyword)
        .map(str::trim)
        .ok_or_else(|| Error::ModelFormat(format!("expected `{keyword} ...`, found `{line}`")))?;
    value
        .parse()
        .map_err(|_| Error::ModelFormat(format!("`{keyword}` value is not an integer: {value}")))
}

pub(crate) fn parse_keyword_row(line: Option<&str>, keyword: &str, len: usize) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| Error::ModelFormat(format!("missing `{keyword}` row")))?;
    let rest = line
        .strip_prefix(keyword)
        .ok_or_else(|| Error::ModelFormat(format!("expected `{keyword} ...`, found `{line}`")))?;
    let values: Vec<f64> = rest
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::ModelFormat(format!("bad float `{tok}` in `{keyword}` row")))
        })
        .collect::<Result<_>>()?;
    if values.len() != len {
        return Err(Error::ModelFormat(format!(
            "`{keyword}` row has {} entries, expected {len}",
            values.len()
        )));
    }
    Ok(values)
}

// ----------------------------------------------------------------------
// Forward likelihood
// ----------------------------------------------------------------------

/// Log-likelihood of `seq` under `model` via the scaled forward algorithm.
///
/// Empty sequences have likelihood one (log zero); a sequence impossible
/// under the model returns negative infinity.
pub fn forward_log_likelihood(model: &HmmParams, seq: &InteractionSequence) -> Result<f64> {
    check_items(model, seq)?;
    let h = model.num_states;
    let mut alpha = vec![0.0f64; h];
    let mut next = vec![0.0f64; h];
    let mut log_likelihood = 0.0f64;

    for (t, &item) in seq.items.iter().enumerate() {
        if t == 0 {
            for i in 0..h {
                next[i] = model.pi[i] * model.emis[(i, item)];
            }
        } else {
            for (j, slot) in next.iter_mut().enumerate() {
                let mut incoming = 0.0;
                for (i, &a) in alpha.iter().enumerate() {
                    incoming += a * model.trans[(i, j)];
                }
                *slot = incoming * model.emis[(j, item)];
            }
        }
        let scale: f64 = next.iter().sum();
        if scale <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        for (a, &n) in alpha.iter_mut().zip(next.iter()) {
            *a = n / scale;
        }
        log_likelihood += scale.ln();
    }
    Ok(log_likelihood)
}

fn check_items(model: &HmmParams, seq: &InteractionSequence) -> Result<()> {
    if let Some(&bad) = seq.items.iter().find(|&&i| i >= model.num_items) {
        return Err(Error::Vocabulary(format!(
            "user {}: item index {bad} outside model vocabulary of size {}",
            seq.user_id, model.num_items
        )));
    }
    Ok(())
}

// ----------------------------------------------------------------------
// Viterbi
// ----------------------------------------------------------------------

/// Most-likely state path plus per-step scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiResult {
    /// One state per timestep.
    pub path: Vec<usize>,
    /// Log-probability of `path`; the sum of `ln(step_scores)`.
    pub log_prob: f64,
    /// `step_scores[t] = P(state_t | state_{t-1}) * P(item_t | state_t)`,
    /// with `pi` standing in for the transition factor at `t = 0`.
    pub step_scores: Vec<f64>,
}

/// Log-space Viterbi decoding. Ties are broken toward the lowest state index,
/// so a model where every path is impossible still yields the
/// lexicographically smallest path (with `-inf` log-probability).
pub fn viterbi_decode(model: &HmmParams, seq: &InteractionSequence) -> Result<ViterbiResult> {
    if seq.is_empty() {
        return Err(Error::EmptyInput(format!(
            "user {}: cannot decode an empty sequence",
            seq.user_id
        )));
    }
    check_items(model, seq)?;
    let h = model.num_states;
    let t_len = seq.len();

    let mut delta = Array2::<f64>::zeros((t_len, h));
    let mut back = Array2::<usize>::zeros((t_len, h));
    for i in 0..h {
        delta[(0, i)] = model.pi[i].ln() + model.emis[(i, seq.items[0])].ln();
    }
    for t in 1..t_len {
        for j in 0..h {
            let mut best_val = f64::NEG_INFINITY;
            let mut best_prev = 0usize;
            for i in 0..h {
                let v = delta[(t - 1, i)] + model.trans[(i, j)].ln();
                if v > best_val {
                    best_val = v;
                    best_prev = i;
                }
            }
            delta[(t, j)] = best_val + model.emis[(j, seq.items[t])].ln();
            back[(t, j)] = best_prev;
        }
    }

    let mut last = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..h {
        if delta[(t_len - 1, i)] > best_val {
            best_val = delta[(t_len - 1, i)];
            last = i;
        }
    }
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[(t, path[t])];
    }

    // Recompute scores along the chosen path so the declared identity
    // log_prob == sum(ln(step_scores)) holds exactly.
    let mut step_scores = Vec::with_capacity(t_len);
    let mut log_prob = 0.0f64;
    for (t, &item) in seq.items.iter().enumerate() {
        let state_prob = if t == 0 {
            model.pi[path[0]]
        } else {
            model.trans[(path[t - 1], path[t])]
        };
        let score = state_prob * model.emis[(path[t], item)];
        log_prob += score.ln();
        step_scores.push(score);
    }
    Ok(ViterbiResult {
        path,
        log_prob,
        step_scores,
    })
}

// ----------------------------------------------------------------------
// Baum-Welch
// ----------------------------------------------------------------------

/// Training knobs for [`baum_welch_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Stop once the relative log-likelihood improvement drops below this.
    /// A negative value disables early stopping (always run `max_iters`).
    pub ll_tolerance: f64,
    /// Added to every transition and emission count before normalizing.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            ll_tolerance: 1e-5,
            smoothing: 1e-6,
            seed: 0,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !self.smoothing.is_finite() || self.smoothing < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "smoothing must be a non-negative float, got {}",
                self.smoothing
            )));
        }
        if self.ll_tolerance.is_nan() {
            return Err(Error::InvalidParameter("ll_tolerance must not be NaN".into()));
        }
        Ok(())
    }
}

/// Fits an HMM to a corpus by expectation-maximization.
///
/// Per-sequence E-steps are pooled into shared expected counts; initial
/// parameters are seeded uniform-positive draws, row-normalized. The result
/// is a deterministic function of `(seqs, num_states, num_items, config)`.
pub fn baum_welch_fit(
    seqs: &[InteractionSequence],
    num_states: usize,
    num_items: usize,
    config: &FitConfig,
) -> Result<HmmParams> {
    baum_welch_fit_with_history(seqs, num_states, num_items, config).map(|(model, _)| model)
}

/// [`baum_welch_fit`], also returning the corpus log-likelihood recorded at
/// the start of each iteration (the likelihood of the parameters produced by
/// the previous iteration).
pub fn baum_welch_fit_with_history(
    seqs: &[InteractionSequence],
    num_states: usize,
    num_items: usize,
    config: &FitConfig,
) -> Result<(HmmParams, Vec<f64>)> {
    config.validate()?;
    if num_states == 0 || num_items == 0 {
        return Err(Error::InvalidParameter(
            "state and item counts must be >= 1".into(),
        ));
    }
    if seqs.iter().all(InteractionSequence::is_empty) {
        return Err(Error::EmptyInput(
            "Baum-Welch needs at least one non-empty sequence".into(),
        ));
    }
    for seq in seqs {
        if let Some(&bad) = seq.items.iter().find(|&&i| i >= num_items) {
            return Err(Error::Vocabulary(format!(
                "user {}: item index {bad} outside vocabulary of size {num_items}",
                seq.user_id
            )));
        }
    }

    let mut model = random_init(num_states, num_items, config.seed);
    let mut history = Vec::with_capacity(config.max_iters);

    for iter in 0..config.max_iters {
        let (counts, log_likelihood) = expected_counts(&model, seqs);
        history.push(log_likelihood);
        if iter > 0 {
            let prev = history[iter - 1];
            let relative = (log_likelihood - prev) / prev.abs().max(1e-12);
            if relative < config.ll_tolerance {
                break;
            }
        }
        model = maximize(counts, config.smoothing, config.seed);
    }
    Ok((model, history))
}

fn random_init(num_states: usize, num_items: usize, seed: u64) -> HmmParams {
    let mut rng = rng::seeded(seed, 0);
    // Dirichlet-like rows: uniform positive draws, normalized. The draw order
    // (pi, transition rows, emission rows) is part of the determinism contract.
    let mut draw_row = |len: usize| -> Vec<f64> {
        let mut row: Vec<f64> = (0..len).map(|_| rng.gen_range(0.1..1.0)).collect();
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= sum);
        row
    };
    let pi = Array1::from_vec(draw_row(num_states));
    let mut trans = Vec::with_capacity(num_states * num_states);
    for _ in 0..num_states {
        trans.extend(draw_row(num_states));
    }
    let mut emis = Vec::with_capacity(num_states * num_items);
    for _ in 0..num_states {
        emis.extend(draw_row(num_items));
    }
    HmmParams::new(
        pi,
        Array2::from_shape_vec((num_states, num_states), trans).expect("sized above"),
        Array2::from_shape_vec((num_states, num_items), emis).expect("sized above"),
        seed,
    )
    .expect("random init rows are normalized")
}

struct Counts {
    pi: Vec<f64>,
    trans: Array2<f64>,
    emis: Array2<f64>,
    nonempty: usize,
    num_states: usize,
    num_items: usize,
}

/// One pooled E-step over the whole corpus; returns expected counts and the
/// corpus log-likelihood under the current parameters.
fn expected_counts(model: &HmmParams, seqs: &[InteractionSequence]) -> (Counts, f64) {
    let h = model.num_states;
    let mut counts = Counts {
        pi: vec![0.0; h],
        trans: Array2::zeros((h, h)),
        emis: Array2::zeros((h, model.num_items)),
        nonempty: 0,
        num_states: h,
        num_items: model.num_items,
    };
    let mut total_ll = 0.0f64;

    for seq in seqs {
        let t_len = seq.len();
        if t_len == 0 {
            continue;
        }
        counts.nonempty += 1;

        // Scaled forward pass.
        let mut alpha = Array2::<f64>::zeros((t_len, h));
        let mut scales = vec![0.0f64; t_len];
        for (t, &item) in seq.items.iter().enumerate() {
            for j in 0..h {
                let incoming = if t == 0 {
                    model.pi[j]
                } else {
                    (0..h).map(|i| alpha[(t - 1, i)] * model.trans[(i, j)]).sum()
                };
                alpha[(t, j)] = incoming * model.emis[(j, item)];
            }
            let scale: f64 = (0..h).map(|j| alpha[(t, j)]).sum();
            scales[t] = scale;
            // Positive initialization plus smoothing keeps every emission
            // probability positive during training, so scales stay positive.
            for j in 0..h {
                alpha[(t, j)] /= scale;
            }
            total_ll += scale.ln();
        }

        // Scaled backward pass, sharing the forward scales.
        let mut beta = Array2::<f64>::zeros((t_len, h));
        for i in 0..h {
            beta[(t_len - 1, i)] = 1.0;
        }
        for t in (0..t_len - 1).rev() {
            let item = seq.items[t + 1];
            for i in 0..h {
                let mut sum = 0.0;
                for j in 0..h {
                    sum += model.trans[(i, j)] * model.emis[(j, item)] * beta[(t + 1, j)];
                }
                beta[(t, i)] = sum / scales[t + 1];
            }
        }

        // Accumulate gamma and xi.
        for i in 0..h {
            counts.pi[i] += alpha[(0, i)] * beta[(0, i)];
        }
        for (t, &item) in seq.items.iter().enumerate() {
            for i in 0..h {
                counts.emis[(i, item)] += alpha[(t, i)] * beta[(t, i)];
            }
        }
        for t in 0..t_len - 1 {
            let item = seq.items[t + 1];
            for i in 0..h {
                for j in 0..h {
                    counts.trans[(i, j)] += alpha[(t, i)] * model.trans[(i, j)]
                        * model.emis[(j, item)]
                        * beta[(t + 1, j)]
                        / scales[t + 1];
                }
            }
        }
    }
    (counts, total_ll)
}

/// M-step: normalize pooled counts, adding `smoothing` to every transition
/// and emission count first. Rows with zero mass (and zero smoothing) fall
/// back to uniform.
fn maximize(counts: Counts, smoothing: f64, seed: u64) -> HmmParams {
    let h = counts.num_states;
    let m = counts.num_items;

    let pi: Vec<f64> = counts
        .pi
        .iter()
        .map(|&c| c / counts.nonempty as f64)
        .collect();

    let normalize = |row: &mut [f64]| {
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        } else {
            let uniform = 1.0 / row.len() as f64;
            row.iter_mut().for_each(|v| *v = uniform);
        }
    };

    let mut trans = counts.trans;
    for mut row in trans.rows_mut() {
        row.iter_mut().for_each(|v| *v += smoothing);
        normalize(row.as_slice_mut().expect("contiguous"));
    }
    let mut emis = counts.emis;
    for mut row in emis.rows_mut() {
        row.iter_mut().for_each(|v| *v += smoothing);
        normalize(row.as_slice_mut().expect("contiguous"));
    }

    HmmParams {
        num_states: h,
        num_items: m,
        pi: Array1::from_vec(pi),
        trans,
        emis,
        seed,
    }
}

// ----------------------------------------------------------------------
// Tests
// ----------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    /// The worked two-state model used across the changepoint docs: state 0
    /// emits item a, state 1 emits item c, with a one-way 0 -> 1 drift.
    fn theta_star() -> HmmParams {
        HmmParams::new(
            ndarray::arr1(&[1.0, 0.0]),
            ndarray::arr2(&[[0.9, 0.1], [0.0, 1.0]]),
            ndarray::arr2(&[[0.9, 0.1, 0.0], [0.0, 0.1, 0.9]]),
            0,
        )
        .unwrap()
    }

    fn seq(items: &[usize]) -> InteractionSequence {
        InteractionSequence::new("u", items.to_vec())
    }

    /// Samples a sequence from a model; test-only helper for EM corpora.
    fn sample(model: &HmmParams, len: usize, rng: &mut impl Rng) -> InteractionSequence {
        let pick = |dist: &[f64], rng: &mut dyn FnMut() -> f64| -> usize {
            let draw = rng();
            let mut acc = 0.0;
            for (i, &p) in dist.iter().enumerate() {
                acc += p;
                if draw < acc {
                    return i;
                }
            }
            dist.len() - 1
        };
        let mut items = Vec::with_capacity(len);
        let mut state = 0usize;
        for t in 0..len {
            let mut draw = || rng.gen::<f64>();
            state = if t == 0 {
                pick(model.pi().as_slice().unwrap(), &mut draw)
            } else {
                pick(model.trans().row(state).as_slice().unwrap(), &mut draw)
            };
            items.push(pick(model.emis().row(state).as_slice().unwrap(), &mut draw));
        }
        InteractionSequence::new("sampled", items)
    }

    // -------------------------------------------------- forward

    #[test]
    fn single_state_uniform_emissions() {
        let model = HmmParams::new(
            ndarray::arr1(&[1.0]),
            ndarray::arr2(&[[1.0]]),
            ndarray::arr2(&[[0.5, 0.5]]),
            0,
        )
        .unwrap();
        let ll = forward_log_likelihood(&model, &seq(&[0, 1, 0])).unwrap();
        assert_relative_eq!(ll, 0.125f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn theta_star_two_step_likelihood() {
        // Hand enumeration: only the path (0, 1) survives, with probability
        // 1 * 0.9 * 0.1 * 0.9 = 0.081.
        let ll = forward_log_likelihood(&theta_star(), &seq(&[0, 2])).unwrap();
        assert_relative_eq!(ll, 0.081f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn empty_sequence_has_log_likelihood_zero() {
        assert_eq!(forward_log_likelihood(&theta_star(), &seq(&[])).unwrap(), 0.0);
    }

    #[test]
    fn impossible_sequence_has_minus_infinity() {
        // theta* cannot start in state 1, and state 0 never emits item c.
        let ll = forward_log_likelihood(&theta_star(), &seq(&[2, 0])).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn long_sequences_stay_finite_under_scaling() {
        let model = HmmParams::new(
            ndarray::arr1(&[0.5, 0.5]),
            ndarray::arr2(&[[0.99, 0.01], [0.01, 0.99]]),
            ndarray::arr2(&[[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]]),
            0,
        )
        .unwrap();
        let items: Vec<usize> = (0..10_000).map(|t| t % 3).collect();
        let ll = forward_log_likelihood(&model, &seq(&items)).unwrap();
        assert!(ll.is_finite());
        assert!(ll < 0.0);
    }

    #[test]
    fn out_of_vocabulary_item_is_rejected() {
        assert!(matches!(
            forward_log_likelihood(&theta_star(), &seq(&[0, 3])).unwrap_err(),
            Error::Vocabulary(_)
        ));
        assert!(matches!(
            viterbi_decode(&theta_star(), &seq(&[3])).unwrap_err(),
            Error::Vocabulary(_)
        ));
    }

    // -------------------------------------------------- viterbi

    #[test]
    fn theta_star_viterbi_switches_once() {
        // Brute force over the 16 paths: [0,0,1,1] wins with probability
        // 0.9 * (0.9*0.9) * (0.1*0.9) * (1.0*0.9) = 0.059049.
        let result = viterbi_decode(&theta_star(), &seq(&[0, 0, 2, 2])).unwrap();
        assert_eq!(result.path, vec![0, 0, 1, 1]);
        assert_relative_eq!(result.log_prob, 0.059049f64.ln(), epsilon = 1e-9);
        let expected = [0.9, 0.81, 0.09, 0.9];
        for (got, want) in result.step_scores.iter().zip(expected) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        // Declared identity between the two result fields.
        let recomputed: f64 = result.step_scores.iter().map(|s| s.ln()).sum();
        assert_eq!(result.log_prob, recomputed);
    }

    #[test]
    fn single_state_path_is_all_zeros() {
        let model = HmmParams::new(
            ndarray::arr1(&[1.0]),
            ndarray::arr2(&[[1.0]]),
            ndarray::arr2(&[[0.25, 0.75]]),
            0,
        )
        .unwrap();
        let result = viterbi_decode(&model, &seq(&[1, 1, 0, 1])).unwrap();
        assert_eq!(result.path, vec![0, 0, 0, 0]);
    }

    #[test]
    fn length_one_sequence_picks_argmax_start() {
        let model = HmmParams::new(
            ndarray::arr1(&[0.5, 0.5]),
            ndarray::arr2(&[[0.5, 0.5], [0.5, 0.5]]),
            ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            0,
        )
        .unwrap();
        assert_eq!(viterbi_decode(&model, &seq(&[0])).unwrap().path, vec![0]);
        assert_eq!(viterbi_decode(&model, &seq(&[1])).unwrap().path, vec![1]);
    }

    #[test]
    fn exact_ties_resolve_to_lowest_state() {
        let model = HmmParams::new(
            ndarray::arr1(&[0.5, 0.5]),
            ndarray::arr2(&[[0.5, 0.5], [0.5, 0.5]]),
            ndarray::arr2(&[[0.5, 0.5], [0.5, 0.5]]),
            0,
        )
        .unwrap();
        let result = viterbi_decode(&model, &seq(&[0, 1, 0])).unwrap();
        assert_eq!(result.path, vec![0, 0, 0]);
    }

    #[test]
    fn impossible_paths_return_smallest_path() {
        // No state can emit item 1, so every path is impossible.
        let model = HmmParams::new(
            ndarray::arr1(&[1.0, 0.0]),
            ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            ndarray::arr2(&[[1.0, 0.0], [1.0, 0.0]]),
            0,
        )
        .unwrap();
        let result = viterbi_decode(&model, &seq(&[1, 1])).unwrap();
        assert_eq!(result.path, vec![0, 0]);
        assert_eq!(result.log_prob, f64::NEG_INFINITY);
    }

    #[test]
    fn empty_sequence_cannot_be_decoded() {
        assert!(matches!(
            viterbi_decode(&theta_star(), &seq(&[])).unwrap_err(),
            Error::EmptyInput(_)
        ));
    }

    // -------------------------------------------------- baum-welch

    #[test]
    fn single_state_fit_recovers_item_frequencies() {
        // Corpus frequencies a:3, b:1; with smoothing disabled the M-step is
        // an exact maximum-likelihood count ratio.
        let corpus = vec![seq(&[0, 1, 0, 0])];
        let config = FitConfig {
            smoothing: 0.0,
            max_iters: 3,
            ..FitConfig::default()
        };
        let model = baum_welch_fit(&corpus, 1, 2, &config).unwrap();
        assert_eq!(model.emis()[(0, 0)], 0.75);
        assert_eq!(model.emis()[(0, 1)], 0.25);
        assert_eq!(model.trans()[(0, 0)], 1.0);
        assert_eq!(model.pi()[0], 1.0);
    }

    #[test]
    fn fit_is_bit_deterministic_per_seed() {
        let corpus = vec![seq(&[0, 0, 1, 2, 2]), seq(&[2, 2, 1]), seq(&[0, 1])];
        let config = FitConfig {
            max_iters: 20,
            seed: 9,
            ..FitConfig::default()
        };
        let a = baum_welch_fit(&corpus, 2, 3, &config).unwrap();
        let b = baum_welch_fit(&corpus, 2, 3, &config).unwrap();
        assert_eq!(a, b);
        let other = baum_welch_fit(&corpus, 2, 3, &FitConfig { seed: 10, ..config }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn fitted_rows_are_stochastic_and_emissions_positive() {
        let corpus = vec![seq(&[0, 0, 0, 1, 3, 3]), seq(&[3, 3, 2])];
        let model = baum_welch_fit(&corpus, 2, 4, &FitConfig::default()).unwrap();
        // Revalidation through the constructor checks all row sums.
        let rebuilt = HmmParams::new(
            model.pi().clone(),
            model.trans().clone(),
            model.emis().clone(),
            model.seed(),
        );
        assert!(rebuilt.is_ok());
        assert!(model.emis().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn likelihood_climbs_on_a_sampled_corpus() {
        let mut rng = crate::rng::seeded(77, 0);
        let truth = theta_star();
        let corpus: Vec<InteractionSequence> =
            (0..50).map(|_| sample(&truth, 100, &mut rng)).collect();
        let config = FitConfig {
            max_iters: 50,
            ll_tolerance: -1.0,
            seed: 5,
            ..FitConfig::default()
        };
        let (_, history) = baum_welch_fit_with_history(&corpus, 2, 3, &config).unwrap();
        assert_eq!(history.len(), 50);
        assert!(history[9] >= history[0]);
        for pair in history.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-8,
                "log-likelihood dropped from {} to {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn early_stopping_truncates_history() {
        let corpus = vec![seq(&[0, 0, 1, 1]); 4];
        let config = FitConfig {
            max_iters: 500,
            ll_tolerance: 1e-3,
            ..FitConfig::default()
        };
        let (_, history) = baum_welch_fit_with_history(&corpus, 2, 2, &config).unwrap();
        assert!(history.len() < 500);
    }

    #[test]
    fn degenerate_corpora_are_rejected() {
        assert!(matches!(
            baum_welch_fit(&[], 2, 3, &FitConfig::default()).unwrap_err(),
            Error::EmptyInput(_)
        ));
        assert!(matches!(
            baum_welch_fit(&[seq(&[])], 2, 3, &FitConfig::default()).unwrap_err(),
            Error::EmptyInput(_)
        ));
        assert!(matches!(
            baum_welch_fit(&[seq(&[5])], 2, 3, &FitConfig::default()).unwrap_err(),
            Error::Vocabulary(_)
        ));
        let bad = FitConfig {
            max_iters: 0,
            ..FitConfig::default()
        };
        assert!(matches!(
            baum_welch_fit(&[seq(&[0])], 2, 3, &bad).unwrap_err(),
            Error::InvalidParameter(_)
        ));
    }

    #[test]
    fn empty_sequences_are_ignored_during_fit() {
        let with_empty = vec![seq(&[0, 1, 0]), seq(&[])];
        let without = vec![seq(&[0, 1, 0])];
        let a = baum_welch_fit(&with_empty, 2, 2, &FitConfig::default()).unwrap();
        let b = baum_welch_fit(&without, 2, 2, &FitConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    // -------------------------------------------------- construction & io

    #[test]
    fn invalid_parameters_are_rejected() {
        // Row does not sum to one.
        assert!(HmmParams::new(
            ndarray::arr1(&[0.5, 0.4]),
            ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            ndarray::arr2(&[[1.0], [1.0]]),
            0,
        )
        .is_err());
        // Negative entry.
        assert!(HmmParams::new(
            ndarray::arr1(&[1.5, -0.5]),
            ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            ndarray::arr2(&[[1.0], [1.0]]),
            0,
        )
        .is_err());
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let corpus = vec![seq(&[0, 0, 1, 2, 2, 1]), seq(&[2, 0, 1])];
        let config = FitConfig {
            max_iters: 15,
            seed: 3,
            ..FitConfig::default()
        };
        let model = baum_welch_fit(&corpus, 2, 3, &config).unwrap();
        let text = model.to_text();
        let reloaded = HmmParams::from_text(&text).unwrap();
        assert_eq!(model, reloaded);
        assert_eq!(text, reloaded.to_text());
    }

    #[test]
    fn file_round_trip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.hmm");
        theta_star().save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        HmmParams::load(&path).unwrap().save(&path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn malformed_model_text_is_rejected() {
        assert!(matches!(
            HmmParams::from_text("not a model").unwrap_err(),
            Error::ModelFormat(_)
        ));
        let truncated = "hmm-model v1\nstates 2\nitems 3\nseed 0\npi 1 0\n";
        assert!(matches!(
            HmmParams::from_text(truncated).unwrap_err(),
            Error::ModelFormat(_)
        ));
    }
}
