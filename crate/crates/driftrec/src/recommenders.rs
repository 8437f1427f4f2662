//! Recommenders that produce ranked item lists.
//!
//! Four scoring families share one output type: global popularity, first-order
//! item transitions, pairwise-ranking matrix factorization (BPR), and the
//! fold-in scoring of non-negative factor models (used for both the plain and
//! the segment-aware factorization methods). Every ranked list is sorted by
//! score descending with ties resolved toward the smaller item index, and
//! never contains excluded (already-seen) items.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::data::InteractionSequence;
use crate::error::{Error, Result};
use crate::factorization::FactorModel;
use crate::rng;

/// A ranked item list for one user, scores parallel to items.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub user_id: String,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Ranks items by score (descending, ties toward the smaller index), drops
/// excluded items, and keeps the top `l`.
pub fn rank_from_scores(
    user_id: &str,
    scores: &[f64],
    l: usize,
    exclude: &HashSet<usize>,
) -> Recommendation {
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|i| !exclude.contains(i))
        .collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(l);
    let ranked_scores = order.iter().map(|&i| scores[i]).collect();
    Recommendation {
        user_id: user_id.to_string(),
        items: order,
        scores: ranked_scores,
    }
}

fn check_corpus(seqs: &[InteractionSequence], num_items: usize) -> Result<()> {
    if num_items == 0 {
        return Err(Error::InvalidParameter("num_items must be positive".into()));
    }
    if seqs.is_empty() {
        return Err(Error::EmptyInput("cannot fit on an empty corpus".into()));
    }
    for seq in seqs {
        if let Some(&bad) = seq.items.iter().find(|&&i| i >= num_items) {
            return Err(Error::Vocabulary(format!(
                "user {}: item index {bad} outside vocabulary of {num_items}",
                seq.user_id
            )));
        }
    }
    Ok(())
}

// ----------------------------------------------------------------------
// Popularity
// ----------------------------------------------------------------------

/// Global item occurrence counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityModel {
    counts: Vec<usize>,
}

impl PopularityModel {
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_items(&self) -> usize {
        self.counts.len()
    }
}

/// Counts every interaction with each item across the corpus.
pub fn poprank_fit(seqs: &[InteractionSequence], num_items: usize) -> Result<PopularityModel> {
    check_corpus(seqs, num_items)?;
    let mut counts = vec![0usize; num_items];
    for seq in seqs {
        for &item in &seq.items {
            counts[item] += 1;
        }
    }
    Ok(PopularityModel { counts })
}

/// Most-popular items first; the score is the occurrence count.
pub fn poprank_recommend(
    model: &PopularityModel,
    user_id: &str,
    l: usize,
    exclude: &HashSet<usize>,
) -> Recommendation {
    let scores: Vec<f64> = model.counts.iter().map(|&c| c as f64).collect();
    rank_from_scores(user_id, &scores, l, exclude)
}

// ----------------------------------------------------------------------
// First-order item transitions
// ----------------------------------------------------------------------

/// Successor counts for each item plus a popularity fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemTransitionModel {
    successors: Vec<BTreeMap<usize, usize>>,
    totals: Vec<usize>,
    popularity: PopularityModel,
}

impl ItemTransitionModel {
    pub fn num_items(&self) -> usize {
        self.totals.len()
    }

    /// Empirical probability of `next` following `prev`.
    pub fn transition_prob(&self, prev: usize, next: usize) -> f64 {
        let total = self.totals[prev];
        if total == 0 {
            return 0.0;
        }
        *self.successors[prev].get(&next).unwrap_or(&0) as f64 / total as f64
    }
}

/// Counts adjacent item pairs across the corpus.
pub fn mc_fit(seqs: &[InteractionSequence], num_items: usize) -> Result<ItemTransitionModel> {
    let popularity = poprank_fit(seqs, num_items)?;
    let mut successors = vec![BTreeMap::new(); num_items];
    let mut totals = vec![0usize; num_items];
    for seq in seqs {
        for pair in seq.items.windows(2) {
            *successors[pair[0]].entry(pair[1]).or_insert(0) += 1;
            totals[pair[0]] += 1;
        }
    }
    Ok(ItemTransitionModel {
        successors,
        totals,
        popularity,
    })
}

/// Ranks successors of the user's last item by transition probability, then
/// backfills with global popularity. With no last item (or one never seen
/// before another item) the list is pure popularity. Backfilled items carry
/// score zero.
pub fn mc_recommend(
    model: &ItemTransitionModel,
    user_id: &str,
    last_item: Option<usize>,
    l: usize,
    exclude: &HashSet<usize>,
) -> Result<Recommendation> {
    if let Some(item) = last_item {
        if item >= model.num_items() {
            return Err(Error::Vocabulary(format!(
                "user {user_id}: item index {item} outside vocabulary of {}",
                model.num_items()
            )));
        }
    }
    let mut scores = vec![0.0f64; model.num_items()];
    if let Some(prev) = last_item {
        for (&next, _) in &model.successors[prev] {
            scores[next] = model.transition_prob(prev, next);
        }
    }
    let by_transition = rank_from_scores(user_id, &scores, l, exclude);
    if by_transition.items.len() >= l {
        return Ok(by_transition);
    }

    // Backfill: popularity order over items with no transition evidence.
    let mut items = by_transition.items;
    let mut ranked_scores = by_transition.scores;
    let taken: HashSet<usize> = items.iter().copied().collect();
    let pop_scores: Vec<f64> = model.popularity.counts().iter().map(|&c| c as f64).collect();
    let backfill = rank_from_scores(user_id, &pop_scores, model.num_items(), exclude);
    for item in backfill.items {
        if items.len() >= l {
            break;
        }
        if !taken.contains(&item) {
            items.push(item);
            ranked_scores.push(0.0);
        }
    }
    Ok(Recommendation {
        user_id: user_id.to_string(),
        items,
        scores: ranked_scores,
    })
}

// ----------------------------------------------------------------------
// Bayesian personalized ranking
// ----------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct BprConfig {
    pub factors: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub seed: u64,
}

impl Default for BprConfig {
    fn default() -> Self {
        Self {
            factors: 40,
            epochs: 30,
            learning_rate: 0.01,
            regularization: 0.0,
            seed: 0,
        }
    }
}

impl BprConfig {
    fn validate(&self) -> Result<()> {
        if self.factors == 0 {
            return Err(Error::InvalidParameter("factors must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.regularization.is_finite() && self.regularization >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "regularization must be non-negative, got {}",
                self.regularization
            )));
        }
        Ok(())
    }
}

/// Pairwise-ranking factors; unlike the non-negative models these may hold
/// negative values.
#[derive(Debug, Clone, PartialEq)]
pub struct BprModel {
    user_ids: Vec<String>,
    index: HashMap<String, usize>,
    p: Array2<f64>,
    q: Array2<f64>,
}

impl BprModel {
    /// All-zero factors: every item scores 0, so ranked lists fall back to
    /// item-index order. Useful as a behavioral baseline.
    pub fn zeroed(user_ids: Vec<String>, num_items: usize, factors: usize) -> Result<Self> {
        if factors == 0 || num_items == 0 || user_ids.is_empty() {
            return Err(Error::InvalidParameter(
                "zeroed model needs users, items, and at least one factor".into(),
            ));
        }
        let index = build_user_index(&user_ids)?;
        Ok(Self {
            p: Array2::zeros((user_ids.len(), factors)),
            q: Array2::zeros((num_items, factors)),
            user_ids,
            index,
        })
    }

    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.index.get(user_id).copied()
    }

    pub fn num_items(&self) -> usize {
        self.q.nrows()
    }

    pub fn score(&self, user_idx: usize, item: usize) -> f64 {
        self.p.row(user_idx).dot(&self.q.row(item))
    }
}

fn build_user_index(user_ids: &[String]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(user_ids.len());
    for (i, id) in user_ids.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::InvalidParameter(format!("duplicate user id {id}")));
        }
    }
    Ok(index)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Loss of one (user, preferred item, other item) triple:
/// `-ln sigmoid(x_uij) + reg/2 * (|p|^2 + |q_i|^2 + |q_j|^2)` where `x_uij`
/// is the score difference.
pub fn bpr_triple_loss(p_u: &[f64], q_i: &[f64], q_j: &[f64], regularization: f64) -> f64 {
    let x: f64 = p_u
        .iter()
        .zip(q_i.iter().zip(q_j.iter()))
        .map(|(p, (i, j))| p * (i - j))
        .sum();
    let norms: f64 = p_u.iter().map(|v| v * v).sum::<f64>()
        + q_i.iter().map(|v| v * v).sum::<f64>()
        + q_j.iter().map(|v| v * v).sum::<f64>();
    -sigmoid(x).ln() + regularization / 2.0 * norms
}

/// Gradient of [`bpr_triple_loss`] with respect to `(p_u, q_i, q_j)`,
/// evaluated at the given values.
pub fn bpr_triple_grad(
    p_u: &[f64],
    q_i: &[f64],
    q_j: &[f64],
    regularization: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let x: f64 = p_u
        .iter()
        .zip(q_i.iter().zip(q_j.iter()))
        .map(|(p, (i, j))| p * (i - j))
        .sum();
    let coeff = -sigmoid(-x);
    let g_p = p_u
        .iter()
        .zip(q_i.iter().zip(q_j.iter()))
        .map(|(p, (i, j))| coeff * (i - j) + regularization * p)
        .collect();
    let g_i = p_u
        .iter()
        .zip(q_i.iter())
        .map(|(p, i)| coeff * p + regularization * i)
        .collect();
    let g_j = p_u
        .iter()
        .zip(q_j.iter())
        .map(|(p, j)| -coeff * p + regularization * j)
        .collect();
    (g_p, g_i, g_j)
}

/// Fits pairwise-ranking factors by stochastic gradient descent.
///
/// Each epoch walks users in corpus order and each user's distinct items in
/// ascending order; for every positive item one negative is drawn by seeded
/// rejection sampling. Users who have interacted with every item have no
/// negatives and are skipped with a warning. Initial factors are uniform in
/// `(-0.1, 0.1)`, user rows first, then item rows. The fit is a
/// deterministic function of `(corpus, num_items, config)`.
pub fn bpr_fit(
    seqs: &[InteractionSequence],
    num_items: usize,
    config: &BprConfig,
) -> Result<BprModel> {
    config.validate()?;
    check_corpus(seqs, num_items)?;

    let user_ids: Vec<String> = seqs.iter().map(|s| s.user_id.clone()).collect();
    let index = build_user_index(&user_ids)?;
    let positives: Vec<Vec<usize>> = seqs
        .iter()
        .map(|s| {
            let distinct: BTreeSet<usize> = s.items.iter().copied().collect();
            distinct.into_iter().collect()
        })
        .collect();
    let positive_sets: Vec<HashSet<usize>> = positives
        .iter()
        .map(|p| p.iter().copied().collect())
        .collect();
    for (u, pos) in positives.iter().enumerate() {
        if pos.len() == num_items {
            log::warn!(
                "user {}: every item is positive; no negatives to sample, skipping",
                user_ids[u]
            );
        }
    }

    let mut rng = rng::seeded(config.seed, 0);
    let mut init = |rows: usize| -> Array2<f64> {
        let mut a = Array2::zeros((rows, config.factors));
        for v in a.iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        a
    };
    let mut p = init(seqs.len());
    let mut q = init(num_items);

    let lr = config.learning_rate;
    for _ in 0..config.epochs {
        for (u, pos) in positives.iter().enumerate() {
            if pos.len() == num_items {
                continue;
            }
            for &i in pos {
                let j = loop {
                    let cand = rng.gen_range(0..num_items);
                    if !positive_sets[u].contains(&cand) {
                        break cand;
                    }
                };
                let p_u: Vec<f64> = p.row(u).to_vec();
                let q_i: Vec<f64> = q.row(i).to_vec();
                let q_j: Vec<f64> = q.row(j).to_vec();
                let (g_p, g_i, g_j) = bpr_triple_grad(&p_u, &q_i, &q_j, config.regularization);
                for (f, g) in g_p.into_iter().enumerate() {
                    p[(u, f)] -= lr * g;
                }
                for (f, g) in g_i.into_iter().enumerate() {
                    q[(i, f)] -= lr * g;
                }
                for (f, g) in g_j.into_iter().enumerate() {
                    q[(j, f)] -= lr * g;
                }
            }
        }
    }
    Ok(BprModel {
        user_ids,
        index,
        p,
        q,
    })
}

/// Ranks items for a trained user by factor dot product.
pub fn bpr_recommend(
    model: &BprModel,
    user_id: &str,
    l: usize,
    exclude: &HashSet<usize>,
) -> Result<Recommendation> {
    let u = model.user_index(user_id).ok_or_else(|| {
        Error::Vocabulary(format!("user {user_id} was not in the training corpus"))
    })?;
    let scores: Vec<f64> = (0..model.num_items()).map(|i| model.score(u, i)).collect();
    Ok(rank_from_scores(user_id, &scores, l, exclude))
}

// ----------------------------------------------------------------------
// Factor-model scoring (shared by the factorization-based methods)
// ----------------------------------------------------------------------

/// Ranks items for a folded-in profile vector against a factor model's item
/// factors. The score of item `j` is the dot product of `profile` with row
/// `j` of `Q`.
pub fn factor_recommend(
    model: &FactorModel,
    user_id: &str,
    profile: &Array1<f64>,
    l: usize,
    exclude: &HashSet<usize>,
) -> Result<Recommendation> {
    if profile.len() != model.rank() {
        return Err(Error::InvalidParameter(format!(
            "profile has {} factors, model has rank {}",
            profile.len(),
            model.rank()
        )));
    }
    let scores: Vec<f64> = model.q().dot(profile).to_vec();
    Ok(rank_from_scores(user_id, &scores, l, exclude))
}

// ----------------------------------------------------------------------
// Tests
// ----------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::nmf_fit_dense;
    use ndarray::arr2;

    fn seq(user: &str, items: &[usize]) -> InteractionSequence {
        InteractionSequence::new(user, items.to_vec())
    }

    fn no_exclude() -> HashSet<usize> {
        HashSet::new()
    }

    // -------------------------------------------------- ranking helper

    #[test]
    fn ranking_sorts_by_score_then_index() {
        let rec = rank_from_scores("u", &[0.2, 0.9, 0.9, 0.1], 4, &no_exclude());
        assert_eq!(rec.items, vec![1, 2, 0, 3]);
        assert_eq!(rec.scores, vec![0.9, 0.9, 0.2, 0.1]);
    }

    #[test]
    fn ranking_respects_exclusions_and_length() {
        let exclude: HashSet<usize> = [1].into_iter().collect();
        let rec = rank_from_scores("u", &[0.2, 0.9, 0.5, 0.1], 2, &exclude);
        assert_eq!(rec.items, vec![2, 0]);
    }

    #[test]
    fn ranking_zero_length_is_empty() {
        let rec = rank_from_scores("u", &[1.0, 2.0], 0, &no_exclude());
        assert!(rec.items.is_empty());
    }

    // -------------------------------------------------- popularity

    #[test]
    fn popularity_counts_every_interaction() {
        let seqs = vec![seq("a", &[0, 1]), seq("b", &[1])];
        let model = poprank_fit(&seqs, 3).unwrap();
        assert_eq!(model.counts(), &[1, 2, 0]);
        let rec = poprank_recommend(&model, "a", 3, &no_exclude());
        assert_eq!(rec.items, vec![1, 0, 2]);
        assert_eq!(rec.scores, vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn popularity_ties_resolve_to_the_smaller_index() {
        let seqs = vec![seq("a", &[0, 1])];
        let model = poprank_fit(&seqs, 2).unwrap();
        let rec = poprank_recommend(&model, "a", 2, &no_exclude());
        assert_eq!(rec.items, vec![0, 1]);
    }

    #[test]
    fn popularity_rejects_bad_corpora() {
        assert!(matches!(
            poprank_fit(&[], 2).unwrap_err(),
            Error::EmptyInput(_)
        ));
        assert!(matches!(
            poprank_fit(&[seq("a", &[3])], 2).unwrap_err(),
            Error::Vocabulary(_)
        ));
    }

    // -------------------------------------------------- transitions

    #[test]
    fn transition_probabilities_follow_pair_counts() {
        // a->b twice, a->c once.
        let seqs = vec![seq("u1", &[0, 1]), seq("u2", &[0, 1]), seq("u3", &[0, 2])];
        let model = mc_fit(&seqs, 3).unwrap();
        approx::assert_relative_eq!(model.transition_prob(0, 1), 2.0 / 3.0);
        approx::assert_relative_eq!(model.transition_prob(0, 2), 1.0 / 3.0);
        assert_eq!(model.transition_prob(1, 0), 0.0);
    }

    #[test]
    fn transition_ranking_backfills_with_popularity() {
        let seqs = vec![seq("u1", &[0, 1]), seq("u2", &[0, 1]), seq("u3", &[0, 2])];
        let model = mc_fit(&seqs, 3).unwrap();
        let rec = mc_recommend(&model, "u1", Some(0), 3, &no_exclude()).unwrap();
        // Successors of 0 first (b=1 then c=2), then popularity fills 0.
        assert_eq!(rec.items, vec![1, 2, 0]);
        approx::assert_relative_eq!(rec.scores[0], 2.0 / 3.0);
        approx::assert_relative_eq!(rec.scores[1], 1.0 / 3.0);
        assert_eq!(rec.scores[2], 0.0);
    }

    #[test]
    fn cold_start_falls_back_to_popularity() {
        let seqs = vec![seq("u1", &[0, 1]), seq("u2", &[0, 1]), seq("u3", &[0, 2])];
        let model = mc_fit(&seqs, 3).unwrap();
        // Item 1 is never followed by anything.
        let rec = mc_recommend(&model, "u1", Some(1), 3, &no_exclude()).unwrap();
        assert_eq!(rec.items, vec![0, 1, 2]);
        // No last item at all behaves the same way.
        let rec = mc_recommend(&model, "u1", None, 3, &no_exclude()).unwrap();
        assert_eq!(rec.items, vec![0, 1, 2]);
    }

    #[test]
    fn transition_ranking_respects_exclusions() {
        let seqs = vec![seq("u1", &[0, 1]), seq("u2", &[0, 1]), seq("u3", &[0, 2])];
        let model = mc_fit(&seqs, 3).unwrap();
        let exclude: HashSet<usize> = [1].into_iter().collect();
        let rec = mc_recommend(&model, "u1", Some(0), 3, &exclude).unwrap();
        assert_eq!(rec.items, vec![2, 0]);
    }

    // -------------------------------------------------- bpr

    #[test]
    fn triple_loss_at_zero_is_ln_two() {
        let z = [0.0, 0.0];
        approx::assert_relative_eq!(
            bpr_triple_loss(&z, &z, &z, 0.0),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn triple_gradient_matches_central_differences() {
        let mut rng = rng::seeded(17, 0);
        for _ in 0..5 {
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            let p_u = draw(&mut rng);
            let q_i = draw(&mut rng);
            let q_j = draw(&mut rng);
            let reg = 0.3;
            let (g_p, g_i, g_j) = bpr_triple_grad(&p_u, &q_i, &q_j, reg);

            let h = 1e-5;
            let check = |which: usize, analytic: &[f64]| {
                for f in 0..5 {
                    let mut plus = [p_u.clone(), q_i.clone(), q_j.clone()];
                    let mut minus = plus.clone();
                    plus[which][f] += h;
                    minus[which][f] -= h;
                    let numeric = (bpr_triple_loss(&plus[0], &plus[1], &plus[2], reg)
                        - bpr_triple_loss(&minus[0], &minus[1], &minus[2], reg))
                        / (2.0 * h);
                    approx::assert_relative_eq!(
                        analytic[f],
                        numeric,
                        max_relative = 1e-5,
                        epsilon = 1e-8
                    );
                }
            };
            check(0, &g_p);
            check(1, &g_i);
            check(2, &g_j);
        }
    }

    #[test]
    fn zeroed_model_ranks_by_item_index() {
        let model = BprModel::zeroed(vec!["a".into()], 4, 3).unwrap();
        let rec = bpr_recommend(&model, "a", 4, &no_exclude()).unwrap();
        assert_eq!(rec.items, vec![0, 1, 2, 3]);
        assert!(rec.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn unknown_user_is_a_vocabulary_error() {
        let model = BprModel::zeroed(vec!["a".into()], 2, 2).unwrap();
        assert!(matches!(
            bpr_recommend(&model, "zz", 2, &no_exclude()).unwrap_err(),
            Error::Vocabulary(_)
        ));
    }

    /// Two user groups with disjoint tastes: training must separate them.
    fn taste_corpus() -> Vec<InteractionSequence> {
        let mut seqs = Vec::new();
        for u in 0..4 {
            seqs.push(seq(&format!("left-{u}"), &[0, 1, 0, 1]));
        }
        for u in 0..4 {
            seqs.push(seq(&format!("right-{u}"), &[2, 3, 2, 3]));
        }
        seqs
    }

    #[test]
    fn training_separates_disjoint_tastes() {
        let config = BprConfig {
            factors: 4,
            epochs: 60,
            learning_rate: 0.05,
            regularization: 0.0,
            seed: 1,
        };
        let model = bpr_fit(&taste_corpus(), 4, &config).unwrap();
        let left = model.user_index("left-0").unwrap();
        let right = model.user_index("right-0").unwrap();
        assert!(model.score(left, 0) > model.score(left, 2));
        assert!(model.score(left, 1) > model.score(left, 3));
        assert!(model.score(right, 2) > model.score(right, 0));
    }

    /// Corpus ranking loss with a deterministic negative per positive (the
    /// smallest item the user never interacted with).
    fn corpus_loss(model: &BprModel, seqs: &[InteractionSequence], num_items: usize) -> f64 {
        let mut total = 0.0;
        for s in seqs {
            let u = model.user_index(&s.user_id).unwrap();
            let pos: BTreeSet<usize> = s.items.iter().copied().collect();
            let neg = (0..num_items).find(|i| !pos.contains(i)).unwrap();
            let p_u = model.p.row(u).to_vec();
            let q_j = model.q.row(neg).to_vec();
            for &i in &pos {
                total += bpr_triple_loss(&p_u, &model.q.row(i).to_vec(), &q_j, 0.0);
            }
        }
        total
    }

    #[test]
    fn training_reduces_the_ranking_loss() {
        let seqs = taste_corpus();
        let untrained = BprConfig {
            epochs: 1,
            learning_rate: 1e-9, // effectively the random init
            ..BprConfig::default()
        };
        let trained = BprConfig {
            factors: 40,
            epochs: 30,
            learning_rate: 0.05,
            regularization: 0.0,
            seed: 0,
        };
        let before = corpus_loss(&bpr_fit(&seqs, 4, &untrained).unwrap(), &seqs, 4);
        let after = corpus_loss(&bpr_fit(&seqs, 4, &trained).unwrap(), &seqs, 4);
        assert!(
            after < before,
            "loss did not drop: before {before}, after {after}"
        );
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let seqs = taste_corpus();
        let config = BprConfig {
            epochs: 5,
            ..BprConfig::default()
        };
        let a = bpr_fit(&seqs, 4, &config).unwrap();
        let b = bpr_fit(&seqs, 4, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_positive_users_are_skipped_not_fatal() {
        let seqs = vec![seq("all", &[0, 1]), seq("partial", &[0])];
        let model = bpr_fit(&seqs, 2, &BprConfig::default()).unwrap();
        // The skipped user still gets a (popularity-free) ranked list.
        let rec = bpr_recommend(&model, "all", 2, &no_exclude()).unwrap();
        assert_eq!(rec.items.len(), 2);
    }

    #[test]
    fn duplicate_user_ids_are_rejected() {
        let seqs = vec![seq("a", &[0]), seq("a", &[1])];
        assert!(matches!(
            bpr_fit(&seqs, 2, &BprConfig::default()).unwrap_err(),
            Error::InvalidParameter(_)
        ));
    }

    // -------------------------------------------------- factor scoring

    #[test]
    fn factor_scores_are_q_dot_profile() {
        let model = crate::factorization::FactorModel::new(
            arr2(&[[1.0, 0.0]]),
            arr2(&[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]),
            0,
            vec![],
        )
        .unwrap();
        let profile = ndarray::arr1(&[1.0, 0.0]);
        let rec = factor_recommend(&model, "u", &profile, 3, &no_exclude()).unwrap();
        assert_eq!(rec.items, vec![0, 2, 1]);
        assert_eq!(rec.scores, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn factor_profile_rank_mismatch_is_rejected() {
        let m = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let model = nmf_fit_dense(&m, 2, 10, 0).unwrap();
        let profile = ndarray::arr1(&[1.0]);
        assert!(matches!(
            factor_recommend(&model, "u", &profile, 2, &no_exclude()).unwrap_err(),
            Error::InvalidParameter(_)
        ));
    }
}
