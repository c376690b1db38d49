use ndarray::{array, Array2};
use neurodecode::augment::{augment_corpus, dtw_align, warp_neural, WarpPath};
use neurodecode::dataset::FeatureTrial;
use proptest::prelude::*;

fn dist(x: &Array2<f64>, y: &Array2<f64>, i: usize, j: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(y.row(j))
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

// every monotone path, enumerated recursively
fn brute_min(x: &Array2<f64>, y: &Array2<f64>, i: usize, j: usize) -> f64 {
    let d = dist(x, y, i, j);
    if i == 0 && j == 0 {
        return d;
    }
    let mut best = f64::INFINITY;
    if i > 0 {
        best = best.min(brute_min(x, y, i - 1, j));
    }
    if j > 0 {
        best = best.min(brute_min(x, y, i, j - 1));
    }
    if i > 0 && j > 0 {
        best = best.min(brute_min(x, y, i - 1, j - 1));
    }
    d + best
}

fn path_cost(x: &Array2<f64>, y: &Array2<f64>, p: &WarpPath) -> f64 {
    p.pairs().iter().map(|&(i, j)| dist(x, y, i, j)).sum()
}

fn seq(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
}

#[test]
fn identical_sequences_align_on_the_diagonal() {
    let x = Array2::from_shape_fn((7, 3), |(i, j)| (i * 3 + j) as f64 * 0.37);
    let (p, cost) = dtw_align(x.view(), x.view()).unwrap();
    assert_eq!(cost, 0.0);
    assert_eq!(p.pairs(), (0..7).map(|i| (i, i)).collect::<Vec<_>>().as_slice());
}

#[test]
fn repeated_frame_costs_nothing() {
    let (p, cost) = dtw_align(seq(&[0., 1., 2.]).view(), seq(&[0., 1., 1., 2.]).view()).unwrap();
    assert_eq!(cost, 0.0);
    p.validate(3, 4).unwrap();
    assert_eq!(p.pairs(), &[(0, 0), (1, 1), (1, 2), (2, 3)]);
}

#[test]
fn empty_and_mismatched_inputs_are_rejected() {
    let a = Array2::<f64>::zeros((0, 2));
    let b = Array2::<f64>::zeros((3, 2));
    assert!(dtw_align(a.view(), b.view()).is_err());
    assert!(dtw_align(b.view(), Array2::zeros((3, 3)).view()).is_err());
}

#[test]
fn warp_averages_frames_sharing_a_target() {
    let e = array![[1.0, 10.0], [3.0, 30.0], [5.0, 50.0]];
    let p = WarpPath(vec![(0, 0), (1, 0), (2, 1)]);
    let w = warp_neural(e.view(), &p, 2).unwrap();
    assert_eq!(w, array![[2.0, 20.0], [5.0, 50.0]]);
    let stretch = WarpPath(vec![(0, 0), (0, 1), (1, 2), (2, 3)]);
    let w = warp_neural(e.view(), &stretch, 4).unwrap();
    assert_eq!(w, array![[1.0, 10.0], [1.0, 10.0], [3.0, 30.0], [5.0, 50.0]]);
    assert!(warp_neural(e.view(), &p, 3).is_err());
}

proptest! {
    #[test]
    fn dtw_matches_exhaustive_search(
        i in 1usize..=6, j in 1usize..=6, d in 1usize..=3,
        seed in prop::collection::vec(-3.0f64..3.0, 36)
    ) {
        let x = Array2::from_shape_fn((i, d), |(a, b)| seed[(a * d + b) % 36]);
        let y = Array2::from_shape_fn((j, d), |(a, b)| seed[35 - (a * d + b) * 2 % 36]);
        let (p, cost) = dtw_align(x.view(), y.view()).unwrap();
        p.validate(i, j).unwrap();
        let oracle = brute_min(&x, &y, i - 1, j - 1);
        prop_assert!((cost - oracle).abs() < 1e-9, "{cost} vs {oracle}");
        prop_assert!((path_cost(&x, &y, &p) - cost).abs() < 1e-9);
        let (_, back) = dtw_align(y.view(), x.view()).unwrap();
        prop_assert!((back - cost).abs() < 1e-9);
    }

    #[test]
    fn dtw_never_exceeds_lockstep_alignment(
        n in 1usize..20, v in prop::collection::vec(-5.0f64..5.0, 40)
    ) {
        let x = seq(&v[..n]);
        let y = seq(&v[20..20 + n]);
        let (_, cost) = dtw_align(x.view(), y.view()).unwrap();
        let lock: f64 = (0..n).map(|k| dist(&x, &y, k, k)).sum();
        prop_assert!(cost <= lock + 1e-9);
    }

    #[test]
    fn warped_rows_stay_inside_source_range(
        i in 1usize..10, j in 1usize..10, v in prop::collection::vec(-2.0f64..2.0, 20)
    ) {
        let x = seq(&v[..i]);
        let y = seq(&v[10..10 + j]);
        let (p, _) = dtw_align(x.view(), y.view()).unwrap();
        let e = Array2::from_shape_fn((i, 4), |(a, b)| (a * 4 + b) as f64);
        let w = warp_neural(e.view(), &p, j).unwrap();
        prop_assert_eq!(w.nrows(), j);
        for c in 0..4 {
            let lo = e.column(c).iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = e.column(c).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for &x in w.column(c) {
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }
    }
}

fn trial(id: &str, sentence: &str, rep: usize, frames: usize) -> FeatureTrial {
    FeatureTrial {
        trial_id: id.into(),
        sentence_id: sentence.into(),
        repetition_index: rep,
        block_id: "B1".into(),
        features: Array2::from_shape_fn((frames, 42), |(t, c)| (t + c + rep) as f64 * 0.01),
        targets: Array2::from_shape_fn((frames, 29), |(t, c)| ((t * 3 + c) % 11) as f64 + rep as f64),
        vowel_intervals: vec![],
        provenance: None,
    }
}

fn five_reps() -> Vec<FeatureTrial> {
    (0..5).map(|r| trial(&format!("s0r{r}"), "s0", r, 20 + r)).collect()
}

#[test]
fn factor_four_triples_with_distinct_donors() {
    let orig = five_reps();
    let out = augment_corpus(&orig[..4], 4, 1).unwrap();
    assert_eq!(out.len(), 16);
    for src in &orig[..4] {
        let donors: Vec<&str> = out
            .iter()
            .filter_map(|t| t.provenance.as_ref())
            .filter(|p| p.source_trial == src.trial_id)
            .map(|p| p.audio_donor_trial.as_str())
            .collect();
        assert_eq!(donors.len(), 3);
        let mut uniq = donors.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 3);
        assert!(!donors.contains(&src.trial_id.as_str()));
    }
    for t in &out[4..] {
        let donor = orig
            .iter()
            .find(|o| o.trial_id == t.provenance.as_ref().unwrap().audio_donor_trial)
            .unwrap();
        assert_eq!(t.targets, donor.targets);
        assert_eq!(t.features.nrows(), donor.n_frames());
        assert_eq!(t.features.ncols(), 42);
    }
}

#[test]
fn few_siblings_draw_with_replacement() {
    let orig = five_reps();
    let out = augment_corpus(&orig[..2], 4, 3).unwrap();
    assert_eq!(out.len(), 8);
    assert!(out[2..].iter().all(|t| t.is_augmented()));
}

#[test]
fn single_repetition_sentences_pass_through() {
    let orig = vec![trial("a", "s0", 0, 20), trial("b", "s1", 0, 25)];
    let out = augment_corpus(&orig, 4, 0).unwrap();
    assert_eq!(out, orig);
}

#[test]
fn factor_one_is_identity_and_zero_is_rejected() {
    let orig = five_reps();
    assert_eq!(augment_corpus(&orig, 1, 9).unwrap(), orig);
    assert!(augment_corpus(&orig, 0, 9).is_err());
}

#[test]
fn augmentation_is_deterministic_in_seed() {
    let orig = five_reps();
    let a = augment_corpus(&orig, 3, 5).unwrap();
    let b = augment_corpus(&orig, 3, 5).unwrap();
    assert_eq!(a, b);
    let again = augment_corpus(&a, 2, 5);
    assert!(again.is_err());
}
