//! Detect change points in a spliced sequence with every detector and
//! compare against the planted ground truth.
//!
//! The model-based detector scores Viterbi state switches; the two
//! distance-based baselines work in an item-factor space fitted here by
//! non-negative factorization of the corpus incidence rows; the random
//! partition shows what an uninformed guess looks like.
//!
//! Run with: `cargo run --example detect_changes`

use driftrec::changepoint::{
    cusum_detect, hmcd_detect, random_partition, segment, sliding_window_detect, ChangePointSet,
    DetectionConfig, ItemFactors,
};
use driftrec::data::{planted_hmm_pool, synth_concat, InteractionSequence};
use driftrec::factorization::{build_segmented_matrix, nmf_fit};
use driftrec::hmm::{baum_welch_fit, FitConfig};

fn show(name: &str, truth: usize, cps: &ChangePointSet) {
    let detected: Vec<String> = cps
        .iter()
        .map(|(i, s)| format!("{i} (score {s:.3})"))
        .collect();
    let delta = cps
        .best()
        .map(|(i, _)| (i as i64 - truth as i64).unsigned_abs().to_string())
        .unwrap_or_else(|| "-".into());
    println!(
        "  {name:18} -> [{}]  |best - truth| = {delta}",
        detected.join(", ")
    );
}

fn main() -> driftrec::Result<()> {
    // Corpus of spliced sequences; ground truth known by construction. The
    // two pool sources occupy different item blocks, so every splice switches
    // behavior at its boundary.
    let pool = planted_hmm_pool(2, 16, &[80, 60], 2)?;
    let labeled = synth_concat(&pool, 40, 4, 10, 30)?;
    let seqs: Vec<InteractionSequence> = labeled.iter().map(|l| l.seq.clone()).collect();

    // Model-based detection needs a fitted sequence model.
    let hmm = baum_welch_fit(&seqs, 2, 16, &FitConfig::default())?;

    // Distance-based detection needs item factors: factorize the
    // per-sequence incidence matrix and use the item-side factors.
    let rows: Vec<Vec<InteractionSequence>> = seqs.iter().map(|s| vec![s.clone()]).collect();
    let incidence = build_segmented_matrix(&rows, 16)?;
    let factors = ItemFactors::new(nmf_fit(&incidence, 6, 150, 21)?.q().to_owned())?;

    let example = &seqs[0];
    let truth = labeled[0].change_point;
    println!(
        "sequence {} (len {}), planted change point at {truth}:\n",
        example.user_id,
        example.len()
    );

    let detection = DetectionConfig::default();
    let hmcd = hmcd_detect(&hmm, example, &detection)?;
    show("state-switch", truth, &hmcd);

    // CUSUM threshold: mean cumulative path distance across the corpus.
    let tau = seqs
        .iter()
        .map(|s| {
            s.items
                .windows(2)
                .map(|w| factors.distance(w[0], w[1]))
                .sum::<f64>()
        })
        .sum::<f64>()
        / seqs.len() as f64;
    show("cusum", truth, &cusum_detect(&factors, example, tau)?);
    show(
        "sliding-window",
        truth,
        &sliding_window_detect(&factors, example)?,
    );
    show("random-partition", truth, &random_partition(example, 99)?);

    // Change points induce segments; the recommender consumes the last one.
    let segments = segment(example, &hmcd)?;
    println!("\nsegments induced by the state-switch detection:");
    for (i, seg) in segments.iter().enumerate() {
        println!("  segment {i}: {} items", seg.len());
    }
    Ok(())
}
