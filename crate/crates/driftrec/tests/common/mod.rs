//! Shared oracles for the integration suites: exhaustive-enumeration
//! references for the sequence-model recursions, plus seeded random model
//! and corpus generators.
//!
//! The enumeration oracles are deliberately naive — they sum or maximize
//! over every one of the `h^T` state paths by direct products — so they
//! share no code or algebra with the implementations under test.

#![allow(dead_code)] // each integration target compiles its own copy

use driftrec::data::InteractionSequence;
use driftrec::hmm::HmmParams;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a - b| <= tol * max(|a|, |b|, 1)`.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Probability of one explicit state path for `items` under `model`.
pub fn path_probability(model: &HmmParams, items: &[usize], path: &[usize]) -> f64 {
    assert_eq!(items.len(), path.len());
    let mut prob = 1.0;
    for (t, (&item, &state)) in items.iter().zip(path).enumerate() {
        let move_p = if t == 0 {
            model.pi()[state]
        } else {
            model.trans()[(path[t - 1], state)]
        };
        prob *= move_p * model.emis()[(state, item)];
    }
    prob
}

/// Enumerates every state path (as base-`h` digit strings).
fn all_paths(num_states: usize, len: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = num_states.pow(len as u32);
    (0..total).map(move |code| {
        let mut c = code;
        (0..len)
            .map(|_| {
                let s = c % num_states;
                c /= num_states;
                s
            })
            .collect()
    })
}

/// Total observation probability: sum over all `h^T` paths.
pub fn exhaustive_likelihood(model: &HmmParams, items: &[usize]) -> f64 {
    all_paths(model.num_states(), items.len())
        .map(|path| path_probability(model, items, &path))
        .sum()
}

/// Highest single-path probability over all `h^T` paths.
pub fn exhaustive_max_path_probability(model: &HmmParams, items: &[usize]) -> f64 {
    all_paths(model.num_states(), items.len())
        .map(|path| path_probability(model, items, &path))
        .fold(0.0, f64::max)
}

fn random_stochastic_row(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= sum);
    row
}

/// A random valid model with `1..=max_states` states over `1..=max_items`
/// items, fully determined by `seed`.
pub fn random_model(seed: u64, max_states: usize, max_items: usize) -> HmmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.gen_range(1..=max_states);
    let m = rng.gen_range(1..=max_items);
    let pi = Array1::from_vec(random_stochastic_row(&mut rng, h));
    let mut trans = Vec::new();
    for _ in 0..h {
        trans.extend(random_stochastic_row(&mut rng, h));
    }
    let mut emis = Vec::new();
    for _ in 0..h {
        emis.extend(random_stochastic_row(&mut rng, m));
    }
    HmmParams::new(
        pi,
        Array2::from_shape_vec((h, h), trans).unwrap(),
        Array2::from_shape_vec((h, m), emis).unwrap(),
        seed,
    )
    .expect("normalized rows form a valid model")
}

/// A random observation sequence of length `1..=max_len` over the model's
/// vocabulary, determined by `seed` (drawn from a stream independent of
/// `random_model`'s).
pub fn random_observations(model: &HmmParams, seed: u64, max_len: usize) -> InteractionSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let len = rng.gen_range(1..=max_len);
    let items = (0..len)
        .map(|_| rng.gen_range(0..model.num_items()))
        .collect();
    InteractionSequence::new(format!("rand-{seed}"), items)
}

/// A seeded corpus of uniform-random sequences over `num_items` items.
pub fn random_corpus(
    seed: u64,
    num_seqs: usize,
    num_items: usize,
    min_len: usize,
    max_len: usize,
) -> Vec<InteractionSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d));
    (0..num_seqs)
        .map(|i| {
            let len = rng.gen_range(min_len..=max_len);
            let items = (0..len).map(|_| rng.gen_range(0..num_items)).collect();
            InteractionSequence::new(format!("u{i}"), items)
        })
        .collect()
}
