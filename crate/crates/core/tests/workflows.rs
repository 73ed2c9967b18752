mod common;

use std::collections::BTreeSet;

use common::{run_task1, run_task2};

#[test]
fn task1_noiseless_is_exact() {
    let run = run_task1(0.0, 7);
    for r in &run.records {
        assert!(r.validation_status.is_valid(), "{}: {:?}", r.sample_id, r.failure_reason);
    }
    let c = &run.report.combined;
    println!("{c:?}");
    assert_eq!(c.mean_lcs_percent, Some(100.0));
    assert_eq!(c.mean_kendall_tau, Some(1.0));
}

#[test]
fn task2_merges_planted_singletons() {
    let run = run_task2(7);
    for (r, g) in run.records.iter().zip(&run.fixture.id_glosses) {
        let got: BTreeSet<Vec<String>> = r.clusters.iter().map(|c| c.members.clone()).collect();
        let want: BTreeSet<Vec<String>> = g.expected_clusters().into_iter().collect();
        println!("{}: baseline {} -> {}", r.gloss, r.baseline.clusters.len(), r.clusters.len());
        for a in &r.adjustments {
            println!("  {}", a["rationale"]);
        }
        assert_eq!(got, want);
    }
    println!("{:?}\n{:?}", run.baseline_eval, run.refined_eval);
}

fn mean_visual_cue(run: &common::Task1Run) -> f64 {
    let v: Vec<f64> =
        run.records.iter().flat_map(|r| r.alignment.iter().filter_map(|a| a.cues.as_ref().map(|c| c.visual))).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

// Noise only touches embeddings; the order is still recovered from the
// phonological and lexical cues, but visual similarity must drop.
#[test]
fn embedding_noise_weakens_visual_cue_only() {
    let clean = common::run_task1(0.0, 21);
    let noisy = common::run_task1(2.0, 21);
    let (vc, vn) = (mean_visual_cue(&clean), mean_visual_cue(&noisy));
    assert!((vc - 1.0).abs() < 1e-6, "{vc}");
    assert!(vn < 0.6, "{vn}");
    assert_eq!(noisy.report.combined.mean_lcs_percent, Some(100.0));
}
