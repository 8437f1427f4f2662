//! Non-negative matrix factorization over segment-level incidence matrices.
//!
//! Sequences are cut into segments (see [`crate::changepoint::segment`]);
//! each segment becomes one binary row of a segment-by-item matrix. The
//! matrix is factorized with multiplicative updates minimizing the squared
//! Frobenius reconstruction error, and new interaction profiles are folded
//! into the fixed item factors to produce user vectors for ranking.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Zip};
use rand::Rng;

use crate::data::InteractionSequence;
use crate::error::{Error, Result};
use crate::hmm::{fmt_row, parse_keyword_int, parse_keyword_row};
use crate::rng;

/// Multiplicative-update denominators never drop below this floor.
const DENOM_FLOOR: f64 = 1e-12;

// ----------------------------------------------------------------------
// Segment incidence matrices
// ----------------------------------------------------------------------

/// One binary row of the training matrix: the distinct items of one segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentRow {
    pub user_id: String,
    /// Position of this segment within the user's sequence (0-based).
    pub segment_index: usize,
    /// Sorted distinct item indices present in the segment.
    pub items: Vec<usize>,
}

/// Binary segment-by-item incidence matrix in sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedMatrix {
    rows: Vec<SegmentRow>,
    num_items: usize,
}

impl SegmentedMatrix {
    pub fn rows(&self) -> &[SegmentRow] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = Array2::zeros((self.rows.len(), self.num_items));
        for (r, row) in self.rows.iter().enumerate() {
            for &item in &row.items {
                dense[(r, item)] = 1.0;
            }
        }
        dense
    }
}

/// Builds the training matrix from per-user segment lists, one row per
/// segment in user order then segment order.
pub fn build_segmented_matrix(
    segments_per_user: &[Vec<InteractionSequence>],
    num_items: usize,
) -> Result<SegmentedMatrix> {
    if num_items == 0 {
        return Err(Error::InvalidParameter("num_items must be positive".into()));
    }
    let mut rows = Vec::new();
    for user_segments in segments_per_user {
        for (k, seg) in user_segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(Error::InvalidSegment(format!(
                    "user {}: segment {k} is empty",
                    seg.user_id
                )));
            }
            let distinct: BTreeSet<usize> = seg.items.iter().copied().collect();
            if let Some(&bad) = distinct.iter().find(|&&i| i >= num_items) {
                return Err(Error::Vocabulary(format!(
                    "user {}: item index {bad} outside vocabulary of {num_items}",
                    seg.user_id
                )));
            }
            rows.push(SegmentRow {
                user_id: seg.user_id.clone(),
                segment_index: k,
                items: distinct.into_iter().collect(),
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("no segments to factorize".into()));
    }
    Ok(SegmentedMatrix { rows, num_items })
}

/// Binary incidence vector of an item list over a vocabulary of `num_items`.
pub fn incidence_vector(items: &[usize], num_items: usize) -> Result<Array1<f64>> {
    let mut v = Array1::zeros(num_items);
    for &item in items {
        if item >= num_items {
            return Err(Error::Vocabulary(format!(
                "item index {item} outside vocabulary of {num_items}"
            )));
        }
        v[item] = 1.0;
    }
    Ok(v)
}

// ----------------------------------------------------------------------
// Factor model
// ----------------------------------------------------------------------

/// Non-negative factors `P` (rows by rank) and `Q` (items by rank) with the
/// training loss trace.
///
/// # Text format
///
/// ```text
/// factor-model v1
/// rows <n>
/// items <m>
/// rank <f>
/// seed <s>
/// p <f floats>      // n lines
/// q <f floats>      // m lines
/// loss <floats...>  // one line, possibly empty
/// ```
///
/// Floats use the shortest representation that round-trips, so
/// `load(save(model))` reproduces the model bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    p: Array2<f64>,
    q: Array2<f64>,
    seed: u64,
    loss_history: Vec<f64>,
}

impl FactorModel {
    pub fn new(p: Array2<f64>, q: Array2<f64>, seed: u64, loss_history: Vec<f64>) -> Result<Self> {
        if p.nrows() == 0 || q.nrows() == 0 {
            return Err(Error::InvalidParameter("factor matrices must be non-empty".into()));
        }
        if p.ncols() != q.ncols() || p.ncols() == 0 {
            return Err(Error::InvalidParameter(format!(
                "rank mismatch: p has {} columns, q has {}",
                p.ncols(),
                q.ncols()
            )));
        }
        if p.iter().chain(q.iter()).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "factor matrices must be non-negative and finite".into(),
            ));
        }
        if loss_history.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("loss history must be finite".into()));
        }
        Ok(Self { p, q, seed, loss_history })
    }

    pub fn p(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn rank(&self) -> usize {
        self.p.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.p.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.q.nrows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Squared Frobenius reconstruction error after each full update pass.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "factor-model v1");
        let _ = writeln!(out, "rows {}", self.num_rows());
        let _ = writeln!(out, "items {}", self.num_items());
        let _ = writeln!(out, "rank {}", self.rank());
        let _ = writeln!(out, "seed {}", self.seed);
        for row in self.p.rows() {
            let _ = writeln!(out, "p {}", fmt_row(row.as_slice().expect("row-major")));
        }
        for row in self.q.rows() {
            let _ = writeln!(out, "q {}", fmt_row(row.as_slice().expect("row-major")));
        }
        if self.loss_history.is_empty() {
            let _ = writeln!(out, "loss");
        } else {
            let _ = writeln!(out, "loss {}", fmt_row(&self.loss_history));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("factor-model v1") => {}
            other => {
                return Err(Error::ModelFormat(format!(
                    "expected `factor-model v1` header, found `{}`",
                    other.unwrap_or("<empty>")
                )))
            }
        }
        let rows = parse_keyword_int(lines.next(), "rows")?;
        let items = parse_keyword_int(lines.next(), "items")?;
        let rank = parse_keyword_int(lines.next(), "rank")?;
        let seed = parse_keyword_int(lines.next(), "seed")? as u64;
        let mut p = Vec::with_capacity(rows * rank);
        for _ in 0..rows {
            p.extend(parse_keyword_row(lines.next(), "p", rank)?);
        }
        let mut q = Vec::with_capacity(items * rank);
        for _ in 0..items {
            q.extend(parse_keyword_row(lines.next(), "q", rank)?);
        }
        let loss_line = lines
            .next()
            .ok_or_else(|| Error::ModelFormat("missing `loss` line".into()))?;
        let loss_rest = loss_line
            .strip_prefix("loss")
            .ok_or_else(|| Error::ModelFormat(format!("expected `loss ...`, found `{loss_line}`")))?;
        let loss_history: Vec<f64> = loss_rest
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::ModelFormat(format!("bad float `{tok}` in `loss` line")))
            })
            .collect::<Result<_>>()?;
        if let Some(extra) = lines.next() {
            return Err(Error::ModelFormat(format!("unexpected trailing line `{extra}`")));
        }
        Self::new(
            Array2::from_shape_vec((rows, rank), p).expect("sized above"),
            Array2::from_shape_vec((items, rank), q).expect("sized above"),
            seed,
            loss_history,
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

// ----------------------------------------------------------------------
// Fitting
// ----------------------------------------------------------------------

fn squared_frobenius_residual(m: &Array2<f64>, p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    let residual = m - &p.dot(&q.t());
    residual.iter().map(|v| v * v).sum()
}

/// Factorizes a segment matrix; see [`nmf_fit_dense`].
pub fn nmf_fit(matrix: &SegmentedMatrix, rank: usize, iters: usize, seed: u64) -> Result<FactorModel> {
    nmf_fit_dense(&matrix.to_dense(), rank, iters, seed)
}

/// Multiplicative-update factorization of a non-negative dense matrix.
///
/// Each iteration updates `P` from the current `Q`, then `Q` from the new
/// `P`, and records the squared Frobenius reconstruction error. The updates
/// never increase the error. Initial entries are drawn uniformly from
/// `[0.1, 1.0)`, `P` rows first, then `Q` rows, from a generator derived
/// from `seed` — the fit is a deterministic function of `(matrix, rank,
/// iters, seed)`.
pub fn nmf_fit_dense(m: &Array2<f64>, rank: usize, iters: usize, seed: u64) -> Result<FactorModel> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::EmptyInput("cannot factorize an empty matrix".into()));
    }
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be at least 1".into()));
    }
    if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParameter(
            "matrix entries must be non-negative and finite".into(),
        ));
    }

    let mut rng = rng::seeded(seed, 0);
    let mut init = |rows: usize| -> Array2<f64> {
        let mut a = Array2::zeros((rows, rank));
        for v in a.iter_mut() {
            *v = rng.gen_range(0.1..1.0);
        }
        a
    };
    let mut p = init(m.nrows());
    let mut q = init(m.ncols());

    let mut loss_history = Vec::with_capacity(iters);
    for _ in 0..iters {
        let qtq = q.t().dot(&q);
        let numer_p = m.dot(&q);
        let denom_p = p.dot(&qtq);
        Zip::from(&mut p).and(&numer_p).and(&denom_p).for_each(|pe, &n, &d| {
            *pe *= n / d.max(DENOM_FLOOR);
        });

        let ptp = p.t().dot(&p);
        let numer_q = m.t().dot(&p);
        let denom_q = q.dot(&ptp);
        Zip::from(&mut q).and(&numer_q).and(&denom_q).for_each(|qe, &n, &d| {
            *qe *= n / d.max(DENOM_FLOOR);
        });

        loss_history.push(squared_frobenius_residual(m, &p, &q));
    }
    FactorModel::new(p, q, seed, loss_history)
}

/// Projects an incidence vector onto fixed item factors.
///
/// Runs the `P`-side multiplicative update with `Q` held constant, starting
/// from all ones, and returns the resulting profile vector. Deterministic:
/// no randomness is involved.
pub fn fold_in(q: &Array2<f64>, v: &Array1<f64>, iters: usize) -> Result<Array1<f64>> {
    if q.nrows() == 0 || q.ncols() == 0 {
        return Err(Error::InvalidParameter("empty factor matrix".into()));
    }
    if v.len() != q.nrows() {
        return Err(Error::InvalidParameter(format!(
            "profile has {} entries, factors cover {} items",
            v.len(),
            q.nrows()
        )));
    }
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidParameter(
            "profile entries must be non-negative and finite".into(),
        ));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidSegment(
            "cannot fold in an all-zero profile".into(),
        ));
    }
    let qtq = q.t().dot(q);
    let numer = v.dot(q);
    let mut p = Array1::ones(q.ncols());
    for _ in 0..iters {
        let denom = p.dot(&qtq);
        Zip::from(&mut p).and(&numer).and(&denom).for_each(|pe, &n, &d| {
            *pe *= n / d.max(DENOM_FLOOR);
        });
    }
    Ok(p)
}

// ----------------------------------------------------------------------
// Tests
// ----------------------------------------------------------------------
