//! Produce ranked lists from every recommender on one corpus.
//!
//! Users in this corpus drift between two item blocks mid-sequence. The
//! segment-aware method detects the drift and builds its user profile from
//! the final segment only, so its lists should favor each user's current
//! block; whole-history methods mix both blocks.
//!
//! Run with: `cargo run --example recommend_items`

use driftrec::changepoint::DetectionConfig;
use driftrec::data::{planted_hmm_pool, synth_concat, InteractionSequence, Vocabulary};
use driftrec::eval::{recommend_all, RecMethod};
use driftrec::hmm::{baum_welch_fit, FitConfig};
use driftrec::recommenders::BprConfig;

fn main() -> driftrec::Result<()> {
    let num_items = 40;
    let pool = planted_hmm_pool(2, num_items, &[80, 60], 2)?;
    let labeled = synth_concat(&pool, 30, 4, 10, 30)?;
    let seqs: Vec<InteractionSequence> = labeled.iter().map(|l| l.seq.clone()).collect();
    let vocab = Vocabulary::synthetic(num_items);

    let hmm = baum_welch_fit(&seqs, 2, num_items, &FitConfig::default())?;

    let methods: Vec<(&str, RecMethod)> = vec![
        ("poprank", RecMethod::PopRank),
        ("mc", RecMethod::Mc),
        ("bpr", RecMethod::Bpr(BprConfig::default())),
        (
            "nmf",
            RecMethod::Nmf {
                rank: 8,
                iters: 150,
                fold_in_iters: 150,
                seed: 0,
            },
        ),
        (
            "smf",
            RecMethod::Smf {
                hmm: &hmm,
                detection: DetectionConfig::default(),
                rank: 8,
                iters: 150,
                fold_in_iters: 150,
                seed: 0,
            },
        ),
    ];

    let user = 0;
    let seq = &seqs[user];
    let cp = labeled[user].change_point;
    println!(
        "user {} drifts at position {cp}: history ends in items {:?}\n",
        seq.user_id,
        &seq.items[seq.len() - 4..]
            .iter()
            .map(|&i| vocab.id(i))
            .collect::<Vec<_>>()
    );

    println!("top-5 lists for {} (seen items excluded):", seq.user_id);
    for (name, method) in &methods {
        let recs = recommend_all(method, &seqs, num_items, 5)?;
        let list: Vec<String> = recs[user]
            .items
            .iter()
            .zip(&recs[user].scores)
            .map(|(&i, &s)| format!("{} ({s:.3})", vocab.id(i)))
            .collect();
        println!("  {name:8} -> {}", list.join(", "));
    }
    Ok(())
}
