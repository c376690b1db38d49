//! Butterworth biquad cascades designed by the bilinear transform with
//! prewarping, applied forward and backward.

use std::f64::consts::PI;

/// Normalized biquad `b0 + b1 z⁻¹ + b2 z⁻² / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    LowPass,
    HighPass,
}

/// Even-order Butterworth filter as `order/2` biquads.
pub fn butterworth(order: usize, cutoff_hz: f64, fs: f64, kind: Kind) -> Vec<Biquad> {
    assert!(order.is_multiple_of(2) && order > 0, "even order required");
    let k = 2.0 * fs;
    let wc = k * (PI * cutoff_hz / fs).tan();
    (0..order / 2)
        .map(|i| {
            // Real part of the analog prototype pole pair, scaled by wc.
            let theta = PI * (2 * i + 1 + order) as f64 / (2 * order) as f64;
            let re = wc * theta.cos();
            let a0 = k * k - 2.0 * re * k + wc * wc;
            let a1 = 2.0 * (wc * wc - k * k);
            let a2 = k * k + 2.0 * re * k + wc * wc;
            let b = match kind {
                Kind::LowPass => [wc * wc, 2.0 * wc * wc, wc * wc],
                Kind::HighPass => [k * k, -2.0 * k * k, k * k],
            };
            Biquad {
                b: [b[0] / a0, b[1] / a0, b[2] / a0],
                a: [a1 / a0, a2 / a0],
            }
        })
        .collect()
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Transposed direct form II, starting from the steady state for a constant
/// input equal to `x[0]`.
fn sosfilt_steady(sos: &[Biquad], x: &mut [f64]) {
    let Some(&first) = x.first() else { return };
    let mut level = first;
    for s in sos {
        let g = s.dc_gain();
        let y0 = g * level;
        let mut z2 = s.b[2] * level - s.a[1] * y0;
        let mut z1 = s.b[1] * level - s.a[0] * y0 + z2;
        for v in x.iter_mut() {
            let xin = *v;
            let y = s.b[0] * xin + z1;
            z1 = s.b[1] * xin - s.a[0] * y + z2;
            z2 = s.b[2] * xin - s.a[1] * y;
            *v = y;
        }
        level = y0;
    }
}

/// Zero-phase filtering: odd reflection padding of `pad` samples on both
/// ends, forward pass, backward pass, then the padding is cut.
pub fn filtfilt(sos: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    sosfilt_steady(sos, &mut ext);
    ext.reverse();
    sosfilt_steady(sos, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}
