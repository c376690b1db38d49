use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use neurodecode::contamination::{
    audit_block, bonferroni_report, correlation_matrix, format_table, mdv, min_shift_frames, surrogate_test,
};
use neurodecode::rng_for;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn noise(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_for(seed, 7);
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn self_and_anti_correlation() {
    let a = noise(6, 50, 1);
    let c = correlation_matrix(a.view(), a.view()).unwrap();
    assert!(c.values.diag().iter().all(|v| (v - 1.0).abs() < 1e-12));
    let neg = a.mapv(|v| -v);
    let c = correlation_matrix(a.view(), neg.view()).unwrap();
    assert!(c.values.diag().iter().all(|v| (v + 1.0).abs() < 1e-12));
    assert!((mdv(c.values.view()).unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn entries_match_direct_pearson() {
    let a = noise(4, 40, 2);
    let b = noise(4, 40, 3);
    let c = correlation_matrix(a.view(), b.view()).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want = pearson(&a.row(i).to_vec(), &b.row(j).to_vec());
            assert!((c.values[[i, j]] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn independent_noise_stays_below_fisher_bound() {
    // Under independence atanh(r)·√(T−3) is standard normal, so
    // P(|r| < 0.11) = erf(atanh(0.11)·√(T−3)/√2).
    let t = 1000;
    let z = (0.11f64).atanh() * ((t - 3) as f64).sqrt();
    let p_inside = statrs::function::erf::erf(z / 2f64.sqrt());
    assert!(p_inside > 0.999);
    let (mut inside, mut total) = (0, 0);
    for seed in 0..5 {
        let c = correlation_matrix(noise(10, t, 10 + seed).view(), noise(10, t, 100 + seed).view()).unwrap();
        inside += c.values.iter().filter(|v| v.abs() < 0.11).count();
        total += c.values.len();
    }
    let frac = inside as f64 / total as f64;
    assert!(frac >= 0.995, "{frac}");
}

#[test]
fn constant_row_gives_zero_and_flag() {
    let mut a = noise(3, 30, 4);
    a.row_mut(1).fill(2.5);
    let b = noise(3, 30, 5);
    let c = correlation_matrix(a.view(), b.view()).unwrap();
    assert!(c.constant_rows);
    assert!(c.values.row(1).iter().all(|&v| v == 0.0));
}

#[test]
fn mdv_examples() {
    assert_eq!(mdv(Array2::<f64>::eye(5).view()).unwrap(), 1.0);
    assert_eq!(mdv(Array2::<f64>::zeros((3, 3)).view()).unwrap(), 0.0);
    assert!(mdv(Array2::<f64>::zeros((2, 3)).view()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mdv_is_invariant_to_row_affine_maps(
        seed in any::<u64>(),
        scales in proptest::collection::vec(0.1f64..10.0, 5),
        offsets in proptest::collection::vec(-5.0f64..5.0, 5),
    ) {
        let a = noise(5, 40, seed);
        let b = noise(5, 40, seed ^ 0xabc);
        let base = mdv(correlation_matrix(a.view(), b.view()).unwrap().values.view()).unwrap();
        let mut b2 = b.clone();
        for (r, mut row) in b2.outer_iter_mut().enumerate() {
            row.mapv_inplace(|v| v * scales[r] + offsets[r]);
        }
        let moved = mdv(correlation_matrix(a.view(), b2.view()).unwrap().values.view()).unwrap();
        prop_assert!((base - moved).abs() < 1e-10);
    }
}

/// Brute-force surrogate p-value with explicit shifting.
fn brute_p(audio: ArrayView2<'_, f64>, neural: &[Array2<f64>], n: usize, seed: u64) -> (f64, f64) {
    let t = audio.ncols();
    let w = min_shift_frames();
    let stat = |shift: usize| {
        neural
            .iter()
            .map(|ch| {
                let shifted = Array2::from_shape_fn(ch.dim(), |(r, k)| ch[[r, (k + shift) % t]]);
                mdv(correlation_matrix(audio, shifted.view()).unwrap().values.view()).unwrap()
            })
            .sum::<f64>()
            / neural.len() as f64
    };
    let observed = stat(0);
    let exceed = (0..n)
        .filter(|&i| stat(rng_for(seed, i as u64).gen_range(w..=t - w)) >= observed - 1e-12)
        .count();
    (observed, (1 + exceed) as f64 / (n + 1) as f64)
}

#[test]
fn shift_statistics_match_brute_force() {
    for seed in 0..4 {
        let audio = noise(5, 80, seed);
        // Weakly related neural channels so the p-value is not extreme.
        let neural: Vec<Array2<f64>> = (0..3)
            .map(|c| &noise(5, 80, 50 + seed * 3 + c) + &(0.15 * &audio))
            .collect();
        let views: Vec<_> = neural.iter().map(|n| n.view()).collect();
        let r = surrogate_test("b", audio.view(), &views, 60, seed).unwrap();
        let (obs, p) = brute_p(audio.view(), &neural, 60, seed);
        assert!((r.mdv - obs).abs() < 1e-10);
        assert!((r.p_value - p).abs() < 1e-12, "{} vs {p}", r.p_value);
        assert!(r.mdv_max >= r.mdv);
    }
}

#[test]
fn copy_of_audio_gives_minimum_p() {
    let audio = noise(8, 200, 9);
    let r = surrogate_test("b", audio.view(), &[audio.view()], 500, 1).unwrap();
    assert!((r.mdv - 1.0).abs() < 1e-12);
    assert_eq!(r.p_value, 1.0 / 501.0);
}

#[test]
fn degenerate_surrogate_requests_fail() {
    let audio = noise(3, 200, 1);
    assert!(surrogate_test("b", audio.view(), &[audio.view()], 0, 1).is_err());
    let short = noise(3, 30, 1);
    assert!(surrogate_test("b", short.view(), &[short.view()], 10, 1).is_err());
}

fn speech_like(n: usize, fs: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, 1);
    let mut phase = 0.0;
    let rate: f64 = rng.gen_range(2.0..4.0);
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let f0 = 110.0 + 25.0 * (2.0 * PI * 0.7 * t).sin();
            phase += 2.0 * PI * f0 / fs;
            let env = (0.5 + 0.5 * (2.0 * PI * rate * t).sin()).powi(2);
            env * (phase.sin() + 0.5 * (2.0 * phase).sin())
        })
        .collect()
}

fn injected(gain_db: f64, seed: u64) -> f64 {
    let fs = 1000.0;
    let n = 8000;
    let audio = speech_like(n, fs, seed);
    let audio_rms = (audio.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let mut rng = rng_for(seed, 2);
    let neural = Array2::from_shape_fn((4, n), |(_, i)| {
        rng.sample::<f64, _>(StandardNormal) + 10f64.powf(gain_db / 20.0) * audio[i] / audio_rms
    });
    audit_block("b", &audio, neural.view(), fs, 2000, seed).unwrap().p_value
}

#[test]
fn p_value_decreases_with_injected_gain() {
    for seed in 0..2 {
        let ps: Vec<f64> = [-40.0, -30.0, -20.0].iter().map(|&g| injected(g, seed)).collect();
        assert!(ps[0] >= ps[1] && ps[1] >= ps[2], "{ps:?}");
        assert!(ps[2] < 0.001, "{ps:?}");
    }
}

#[test]
fn bonferroni_thresholds() {
    let audio = noise(3, 100, 1);
    let base = surrogate_test("b", audio.view(), &[noise(3, 100, 2).view()], 50, 1).unwrap();
    for (k, want) in [(9, 0.05 / 9.0), (3, 0.05 / 3.0), (1, 0.05)] {
        let reports = vec![base.clone(); k];
        let out = bonferroni_report(&reports, 0.05).unwrap();
        assert!(out.iter().all(|r| r.bonferroni_alpha == Some(want)));
    }
    let mut low = base.clone();
    low.p_value = 0.004;
    let mut high = base;
    high.p_value = 0.006;
    let out = bonferroni_report(
        &[
            low,
            high.clone(),
            high.clone(),
            high.clone(),
            high.clone(),
            high.clone(),
            high.clone(),
            high.clone(),
            high,
        ],
        0.05,
    )
    .unwrap();
    assert_eq!(out[0].contaminated, Some(true));
    assert!(out[1..].iter().all(|r| r.contaminated == Some(false)));
    assert!(format_table(&out).contains("Bonferroni"));
    assert!(bonferroni_report(&[], 0.05).is_err());
}
