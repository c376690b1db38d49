use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use neurodecode::corpus::GridGeometry;
use neurodecode::sigproc::{
    apply_zscore, assemble_features, band_features, common_average_reference, fit_stats, lfp_feature, lfp_filter,
    FeatureStats, NeuralFeatureTensor, Standardizer,
};
use proptest::prelude::*;

fn sine(freq: f64, fs: f64, seconds: f64, amp: f64) -> Vec<f64> {
    let n = (fs * seconds).round() as usize;
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()
}

/// Band powers by a direct O(N²) DFT over the same frames.
fn dft_bands(x: &[f64], fs: f64) -> Vec<[f64; 20]> {
    let win = (0.2 * fs).round() as usize;
    let nfft = 2 * win;
    let w: Vec<f64> = (0..win)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (win as f64 - 1.0)).cos())
        .collect();
    let norm = fs * w.iter().map(|v| v * v).sum::<f64>();
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let start = (k as f64 * fs / 100.0).round() as usize;
        if start + win > x.len() {
            break;
        }
        let mut sums = [0.0; 20];
        let mut counts = [0usize; 20];
        for j in 0..=nfft / 2 {
            let f = j as f64 * fs / nfft as f64;
            if f >= 200.0 {
                break;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..win {
                let ang = -2.0 * PI * (j * n) as f64 / nfft as f64;
                re += x[start + n] * w[n] * ang.cos();
                im += x[start + n] * w[n] * ang.sin();
            }
            let mut p = (re * re + im * im) / norm;
            if j != 0 && j != nfft / 2 {
                p *= 2.0;
            }
            let b = (f / 10.0).floor() as usize;
            sums[b] += p;
            counts[b] += 1;
        }
        let mut bands = [0.0; 20];
        for b in 0..20 {
            bands[b] = sums[b] / counts[b] as f64;
        }
        out.push(bands);
        k += 1;
    }
    out
}

#[test]
fn tone_at_75hz_dominates_band_7() {
    let x = sine(75.0, 1000.0, 1.0, 1.0);
    let bands = band_features(&x, 1000.0).unwrap();
    let oracle = dft_bands(&x, 1000.0);
    assert_eq!(bands.ncols(), oracle.len());
    for (t, o) in oracle.iter().enumerate() {
        for b in 0..20 {
            let rel = (bands[[b, t]] - o[b]).abs() / o[b].abs().max(1e-12);
            assert!(rel < 1e-8, "frame {t} band {b}: {} vs {}", bands[[b, t]], o[b]);
        }
        let other = (0..20).filter(|&b| b != 7).map(|b| o[b]).fold(0.0, f64::max);
        assert!(o[7] > 10.0 * other, "frame {t}: {} vs {other}", o[7]);
    }
}

#[test]
fn dft_oracle_agrees_on_noise_at_odd_rate() {
    let fs = 585.6;
    let x: Vec<f64> = (0..400).map(|i| ((i * 7919) % 113) as f64 / 56.0 - 1.0).collect();
    let bands = band_features(&x, fs).unwrap();
    let oracle = dft_bands(&x, fs);
    assert_eq!(bands.ncols(), oracle.len());
    for (t, o) in oracle.iter().enumerate() {
        for b in 0..20 {
            assert!((bands[[b, t]] - o[b]).abs() <= 1e-9 * o[b].abs().max(1e-9));
        }
    }
}

#[test]
fn zero_signal_gives_zero_features() {
    let bands = band_features(&vec![0.0; 500], 1000.0).unwrap();
    assert!(bands.iter().all(|&v| v == 0.0));
}

#[test]
fn two_seconds_give_181_frames_at_any_rate() {
    for fs in [400.0f64, 500.0, 585.6, 1000.0, 1024.0, 2000.0, 3051.76] {
        let n = (2.0 * fs).round() as usize;
        let win = (0.2 * fs).round() as usize;
        let enumerated = (0..)
            .take_while(|&k| (k as f64 * fs / 100.0).round() as usize + win <= n)
            .count();
        let bands = band_features(&vec![0.0; n], fs).unwrap();
        assert_eq!(bands.ncols(), 181, "fs {fs}");
        assert_eq!(enumerated, 181, "fs {fs}");
    }
}

#[test]
fn bad_rates_and_short_signals_fail() {
    assert!(band_features(&vec![0.0; 1000], 300.0).is_err());
    assert!(band_features(&vec![0.0; 100], 1000.0).is_err());
    assert!(lfp_feature(&vec![0.0; 1000], 8.0).is_err());
}

#[test]
fn tones_above_205hz_barely_leak() {
    let fs = 2000.0;
    let clean = sine(45.0, fs, 1.0, 1.0);
    let base = band_features(&clean, fs).unwrap();
    for f in [205.0, 230.0, 400.0, 610.0] {
        let tone = sine(f, fs, 1.0, 1.0);
        let mixed: Vec<f64> = clean.iter().zip(&tone).map(|(a, b)| a + b).collect();
        let with = band_features(&mixed, fs).unwrap();
        let alone = band_features(&tone, fs).unwrap();
        // The tone's own peak PSD, measured on the same frames.
        let win = 400;
        let peak = 0.25 / fs * (win as f64) * (win as f64) * 0.54 * 0.54
            / (0..win)
                .map(|i| (0.54 - 0.46 * (2.0 * PI * i as f64 / (win as f64 - 1.0)).cos()).powi(2))
                .sum::<f64>()
            * 2.0;
        for b in 0..20 {
            for t in 0..alone.ncols() {
                assert!(alone[[b, t]] < 0.01 * peak, "tone {f} band {b}: {}", alone[[b, t]]);
                let d = (with[[b, t]] - base[[b, t]]).abs();
                assert!(d < 0.01 * peak, "tone {f} band {b} shifted by {d}");
            }
        }
    }
}

#[test]
fn band_sum_is_bounded_by_total_psd() {
    let fs = 1000.0;
    let x: Vec<f64> = (0..800)
        .map(|i| ((i * 2654435761usize) % 1000) as f64 / 500.0 - 1.0)
        .collect();
    let bands = band_features(&x, fs).unwrap();
    let oracle_total: Vec<f64> = {
        let win = 200;
        let nfft = 400;
        let w: Vec<f64> = (0..win)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (win as f64 - 1.0)).cos())
            .collect();
        let norm = fs * w.iter().map(|v| v * v).sum::<f64>();
        (0..bands.ncols())
            .map(|k| {
                let s = k * 10;
                (0..=nfft / 2)
                    .map(|j| {
                        let (mut re, mut im) = (0.0, 0.0);
                        for n in 0..win {
                            let a = -2.0 * PI * (j * n) as f64 / nfft as f64;
                            re += x[s + n] * w[n] * a.cos();
                            im += x[s + n] * w[n] * a.sin();
                        }
                        let p = (re * re + im * im) / norm;
                        if j == 0 || j == nfft / 2 {
                            p
                        } else {
                            2.0 * p
                        }
                    })
                    .sum()
            })
            .collect()
    };
    for (t, total) in oracle_total.iter().enumerate() {
        let s: f64 = (0..20).map(|b| bands[[b, t]]).sum();
        assert!(s <= *total + 1e-12);
    }
}

/// Amplitude of a steady sinusoid of known frequency by least squares over
/// the middle half of the record.
fn fitted_amplitude(y: &[f64], freq: f64, fs: f64) -> f64 {
    let (lo, hi) = (y.len() / 4, 3 * y.len() / 4);
    let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in lo..hi {
        let a = 2.0 * PI * freq * i as f64 / fs;
        let (s, c) = a.sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        ys += y[i] * s;
        yc += y[i] * c;
    }
    let det = ss * cc - sc * sc;
    let bs = (ys * cc - yc * sc) / det;
    let bc = (yc * ss - ys * sc) / det;
    (bs * bs + bc * bc).sqrt()
}

/// Forward-backward gain of the designed cascade from the bilinear-warped
/// Butterworth magnitude.
fn analytic_gain(f: f64, fs: f64) -> f64 {
    let warp = |x: f64| (PI * x / fs).tan();
    let lp = 1.0 / (1.0 + (warp(f) / warp(5.0)).powi(8));
    let hp = 1.0 / (1.0 + (warp(0.5) / warp(f)).powi(8));
    lp * hp
}

#[test]
fn lfp_filter_matches_magnitude_oracle() {
    let fs = 1000.0;
    for f in [0.7, 1.0, 2.0, 3.5, 5.0, 6.0, 8.0] {
        let x = sine(f, fs, 30.0, 1.0);
        let y = lfp_filter(&x, fs);
        let got = fitted_amplitude(&y, f, fs);
        let want = analytic_gain(f, fs);
        assert!((got - want).abs() < 2e-3 + 0.01 * want, "{f} Hz: {got} vs {want}");
    }
}

#[test]
fn lfp_passes_2hz_and_rejects_dc_and_50hz() {
    let fs = 1000.0;
    let y = lfp_filter(&sine(2.0, fs, 10.0, 1.0), fs);
    assert!((fitted_amplitude(&y, 2.0, fs) - 1.0).abs() < 0.05);

    let dc = lfp_feature(&vec![3.0; 5000], fs).unwrap();
    assert!(dc[50..].iter().all(|v| v.abs() < 0.03));

    let y = lfp_filter(&sine(50.0, fs, 4.0, 1.0), fs);
    let amp = fitted_amplitude(&y, 50.0, fs);
    assert!(20.0 * amp.log10() < -20.0, "{amp}");
}

#[test]
fn car_examples() {
    let one = Array2::from_shape_vec((1, 4), vec![1.0, -2.0, 3.0, 0.5]).unwrap();
    assert!(common_average_reference(one.view()).iter().all(|&v| v == 0.0));

    let x = [0.3, -1.2, 2.0, 0.1];
    let pm = Array2::from_shape_fn((2, 4), |(c, i)| if c == 0 { x[i] } else { -x[i] });
    assert_eq!(common_average_reference(pm.view()), pm);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn car_rejects_common_mode_and_is_idempotent(
        data in proptest::collection::vec(-5.0f64..5.0, 12),
        common in proptest::collection::vec(-5.0f64..5.0, 4),
    ) {
        let raw = Array2::from_shape_vec((3, 4), data).unwrap();
        let shifted = Array2::from_shape_fn((3, 4), |(c, i)| raw[[c, i]] + common[i]);
        let a = common_average_reference(raw.view());
        let b = common_average_reference(shifted.view());
        let twice = common_average_reference(a.view());
        for ((x, y), z) in a.iter().zip(&b).zip(&twice) {
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!((x - z).abs() < 1e-12);
        }
    }
}

fn noise_raw(channels: usize, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((channels, n), |(c, i)| {
        (((c * 7717 + i * 104729) % 10007) as f64 / 5003.5 - 1.0) + 0.2 * (i as f64 * 0.05).sin()
    })
}

#[test]
fn assembled_frame_sizes() {
    for (grid, nf) in [(GridGeometry::new(9, 8), 1512), (GridGeometry::new(4, 8), 672)] {
        let raw = noise_raw(grid.electrodes(), 450);
        let t = assemble_features(raw.view(), 1000.0, grid).unwrap();
        let m = t.frame_matrix();
        assert_eq!(m.ncols(), nf);
        assert_eq!(t.n_frames(), band_features(&vec![0.0; 450], 1000.0).unwrap().ncols());
        assert_eq!(t.n_frames(), lfp_feature(&vec![0.0; 450], 1000.0).unwrap().len());
    }
    let raw = noise_raw(5, 450);
    assert!(assemble_features(raw.view(), 1000.0, GridGeometry::new(4, 8)).is_err());
}

#[test]
fn zscore_on_fitting_set() {
    let grid = GridGeometry::new(2, 2);
    let a = assemble_features(noise_raw(4, 500).view(), 1000.0, grid).unwrap();
    let b = assemble_features(noise_raw(4, 700).slice(ndarray::s![.., 100..]), 1000.0, grid).unwrap();
    let stats = fit_stats(&[&a, &b]).unwrap();
    let za = apply_zscore(&a, &stats).unwrap().frame_matrix();
    let zb = apply_zscore(&b, &stats).unwrap().frame_matrix();
    let all = ndarray::concatenate(ndarray::Axis(0), &[za.view(), zb.view()]).unwrap();
    for col in all.columns() {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6, "{mean} {sd}");
    }
}

#[test]
fn constant_feature_is_floored_to_zero_output() {
    let m = Array2::from_elem((5, 2), 4.0);
    let stats = FeatureStats::fit(&[m.view()]).unwrap();
    assert_eq!(stats.std, vec![1e-8, 1e-8]);
    assert!(stats.apply(m.view()).unwrap().iter().all(|&v| v == 0.0));
    let empty: [ArrayView2<'_, f64>; 0] = [];
    assert!(FeatureStats::fit(&empty).is_err());
}

#[test]
fn standardizer_refuses_second_fit() {
    let train = Array2::from_shape_fn((6, 3), |(i, j)| (i * j) as f64);
    let test = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64);
    let mut s = Standardizer::new();
    let fitted = s.fit(&[train.view()]).unwrap().clone();
    assert!(s.fit(&[test.view()]).is_err());
    assert_eq!(s.stats(), Some(&fitted));
    assert_eq!(s.apply(test.view()).unwrap(), fitted.apply(test.view()).unwrap());
}

#[test]
fn frame_matrix_roundtrip() {
    let grid = GridGeometry::new(2, 3);
    let t = assemble_features(noise_raw(6, 400).view(), 1000.0, grid).unwrap();
    let m = t.frame_matrix();
    assert_eq!(m[[3, 21 + 5]], t.values[[1, 5, 3]]);
    let back = NeuralFeatureTensor::from_frame_matrix(m.view(), 6).unwrap();
    assert_eq!(back, t);
}
