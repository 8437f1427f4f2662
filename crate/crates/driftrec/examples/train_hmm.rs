//! Fit a hidden-state model to sequences with block-structured behavior and
//! watch the log-likelihood climb.
//!
//! The training corpus interleaves two kinds of sequences — one per item
//! block — so a 2-state fit should discover the blocks: each state's emission
//! mass should concentrate on one block.
//!
//! Run with: `cargo run --example train_hmm`

use driftrec::data::planted_hmm_pool;
use driftrec::hmm::{baum_welch_fit_with_history, FitConfig};

fn main() -> driftrec::Result<()> {
    // 30 single-block sequences over 10 items (block 0: items 0..5,
    // block 1: items 5..10).
    let corpus = planted_hmm_pool(2, 10, &[40; 30], 5)?;

    let config = FitConfig {
        max_iters: 60,
        ll_tolerance: 1e-7,
        smoothing: 1e-6,
        seed: 9,
    };
    let (model, history) = baum_welch_fit_with_history(&corpus, 2, 10, &config)?;

    println!("log-likelihood trajectory (every 5th iteration):");
    for (i, ll) in history.iter().enumerate() {
        if i % 5 == 0 || i + 1 == history.len() {
            println!("  iter {i:3}  {ll:.4}");
        }
    }
    let improved = history.last().unwrap() - history.first().unwrap();
    println!("  improved by {improved:.4} over {} iterations\n", history.len());

    println!("learned emission rows (one line per state):");
    for s in 0..model.num_states() {
        let row: Vec<String> = (0..model.num_items())
            .map(|i| format!("{:.3}", model.emis()[(s, i)]))
            .collect();
        let block0: f64 = (0..5).map(|i| model.emis()[(s, i)]).sum();
        println!(
            "  state {s}: [{}]  mass on items 0..5 = {block0:.3}",
            row.join(" ")
        );
    }

    println!("\nlearned transition matrix (states stay put between steps):");
    for s in 0..model.num_states() {
        let row: Vec<String> = (0..model.num_states())
            .map(|t| format!("{:.3}", model.trans()[(s, t)]))
            .collect();
        println!("  state {s}: [{}]", row.join(" "));
    }
    Ok(())
}
