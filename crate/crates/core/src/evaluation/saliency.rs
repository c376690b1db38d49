use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use neurodecode_autodiff::{Graph, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{GridGeometry, N_FEATURES};
use crate::error::{data_err, Error, Result};
use crate::models::{Mode, Model};
use crate::rng_for;

pub const SMOOTHGRAD_N: usize = 50;
pub const SMOOTHGRAD_SIGMA: f64 = 0.15;

/// Anything that maps a `[1, T, N_f]` input to `[1, T, 29]` on a graph in
/// evaluation mode.
pub trait SaliencyModel {
    fn forward_eval(&self, g: &mut Graph, x: Var) -> Result<Var>;
}

impl SaliencyModel for Model {
    fn forward_eval(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = self.params.bind_with(g, false);
        let t = g.shape(x)[1];
        let (y, _) = self.forward(g, &w, x, &[t], &mut Mode::Eval)?;
        Ok(y)
    }
}

/// Input gradients, `electrodes × 21 × T`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub values: Array3<f64>,
}

/// `∂ MSE(f(e), a) / ∂e` for one trial. `e` is `T × N_f`, `a` is `T × 29`,
/// both in the model's (normalised) units.
pub fn saliency_raw<M: SaliencyModel + ?Sized>(
    model: &M,
    e: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
) -> Result<SaliencyMap> {
    let (t, nf) = e.dim();
    if a.nrows() != t || nf % N_FEATURES != 0 || t == 0 {
        return data_err(format!("saliency inputs {:?} and {:?}", e.dim(), a.dim()));
    }
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![1, t, nf], e.iter().copied().collect())?);
    let y = model.forward_eval(&mut g, x)?;
    let target = g.constant(Tensor::new(vec![1, t, a.ncols()], a.iter().copied().collect())?);
    let loss = g.mse(y, target)?;
    g.backward(loss)?;
    let grad = g.grad_tensor(x);
    let e_count = nf / N_FEATURES;
    let values = Array3::from_shape_fn((e_count, N_FEATURES, t), |(el, f, ti)| {
        grad.data()[ti * nf + el * N_FEATURES + f]
    });
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite saliency".into()));
    }
    Ok(SaliencyMap { values })
}

/// Standard deviation of the SmoothGrad noise, `σ / (e_max − e_min)`.
pub fn smoothgrad_noise_sd(e: ArrayView2<'_, f64>, sigma: f64) -> Result<f64> {
    let emax = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let emin = e.iter().copied().fold(f64::INFINITY, f64::min);
    if !(emax > emin) {
        return data_err("σ̂ undefined: input is constant");
    }
    Ok(sigma / (emax - emin))
}

/// Mean of raw saliency over `n` noisy copies of `e`, with elementwise
/// Gaussian noise of standard deviation [`smoothgrad_noise_sd`].
pub fn smoothgrad<M: SaliencyModel + ?Sized>(
    model: &M,
    e: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<SaliencyMap> {
    if n == 0 {
        return data_err("smoothgrad needs n >= 1");
    }
    let sd = smoothgrad_noise_sd(e, sigma)?;
    let mut rng = rng_for(seed, 0x5a11);
    let noise: Vec<Array2<f64>> = (0..n)
        .map(|_| Array2::from_shape_simple_fn(e.dim(), || sd * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    smoothgrad_with_noise(model, e, a, &noise)
}

/// Mean of raw saliency at `e + noise_i` over the given draws.
pub fn smoothgrad_with_noise<M: SaliencyModel + ?Sized>(
    model: &M,
    e: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    noise: &[Array2<f64>],
) -> Result<SaliencyMap> {
    let mut acc: Option<Array3<f64>> = None;
    for n in noise {
        if n.dim() != e.dim() {
            return data_err("noise draw does not match the input");
        }
        let s = saliency_raw(model, (&e + n).view(), a)?.values;
        acc = Some(match acc {
            None => s,
            Some(x) => x + s,
        });
    }
    match acc {
        Some(sum) => Ok(SaliencyMap {
            values: sum / noise.len() as f64,
        }),
        None => data_err("smoothgrad needs at least one noise draw"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencyAxis {
    Electrode,
    Feature,
}

/// Mean `|Ŝ|` per electrode (laid out `n_x × n_y`) or per feature
/// (`1 × 21`), averaged over the other axis and time.
pub fn aggregate_saliency(map: &SaliencyMap, axis: SaliencyAxis, grid: GridGeometry) -> Result<Array2<f64>> {
    let abs = map.values.mapv(f64::abs);
    match axis {
        SaliencyAxis::Electrode => {
            if abs.shape()[0] != grid.electrodes() {
                return data_err("saliency map does not match the grid");
            }
            let per: Array1<f64> = abs
                .mean_axis(Axis(2))
                .and_then(|m| m.mean_axis(Axis(1)))
                .expect("non-empty");
            Ok(per
                .into_shape_with_order((grid.n_x, grid.n_y))
                .expect("electrode count checked"))
        }
        SaliencyAxis::Feature => {
            let per: Array1<f64> = abs
                .mean_axis(Axis(2))
                .and_then(|m| m.mean_axis(Axis(0)))
                .expect("non-empty");
            Ok(per.insert_axis(Axis(0)))
        }
    }
}

/// Share of total `|Ŝ|` carried by the listed electrodes.
pub fn electrode_mass_fraction(map: &SaliencyMap, electrodes: &[usize]) -> f64 {
    let per: Vec<f64> = map
        .values
        .outer_iter()
        .map(|m| m.iter().map(|v| v.abs()).sum())
        .collect();
    let total: f64 = per.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    electrodes.iter().filter_map(|&e| per.get(e)).sum::<f64>() / total
}
