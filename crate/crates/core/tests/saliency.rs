use ndarray::{Array2, Array3};
use neurodecode::corpus::GridGeometry;
use neurodecode::evaluation::{
    aggregate_saliency, electrode_mass_fraction, saliency_raw, smoothgrad, smoothgrad_noise_sd, smoothgrad_with_noise,
    SaliencyAxis, SaliencyMap, SaliencyModel,
};
use neurodecode::models::{EncoderVariant, Model, ModelConfig, ModelDims};
use neurodecode::rng_for;
use neurodecode_autodiff::{grad_check, Graph, Tensor, Var};
use rand::Rng;

/// Frame-wise linear map `y_t = e_t W`.
struct Linear {
    w: Array2<f64>,
}

impl SaliencyModel for Linear {
    fn forward_eval(&self, g: &mut Graph, x: Var) -> neurodecode::Result<Var> {
        let w = g.constant(Tensor::new(vec![self.w.nrows(), 29], self.w.iter().copied().collect())?);
        Ok(g.matmul(x, w)?)
    }
}

fn rand_mat(r: usize, c: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_for(seed, 4);
    Array2::from_shape_simple_fn((r, c), || rng.gen_range(-1.0..1.0))
}

const NF: usize = 4 * 21;

fn tiny_model() -> Model {
    let dims = ModelDims {
        vit_embed: 8,
        vit_latent: 6,
        vit_heads: 2,
        vit_head_dim: 3,
        vit_ffn: 5,
        lstm_hidden: 4,
        lstm_layers: 1,
        head_hidden: 6,
        ..ModelDims::compact()
    };
    Model::new(
        ModelConfig {
            variant: EncoderVariant::Vit,
            dims,
        },
        GridGeometry::new(2, 2),
        5,
    )
    .unwrap()
}

#[test]
fn dead_feature_gets_zero_saliency() {
    let mut w = rand_mat(NF, 29, 1);
    // electrode 2, feature 7 feeds nothing
    w.row_mut(2 * 21 + 7).fill(0.0);
    let m = Linear { w };
    let e = rand_mat(6, NF, 2);
    let a = rand_mat(6, 29, 3);
    let s = saliency_raw(&m, e.view(), a.view()).unwrap();
    assert_eq!(s.values.dim(), (4, 21, 6));
    assert!(s.values.slice(ndarray::s![2, 7, ..]).iter().all(|v| *v == 0.0));
    assert!(s.values.iter().filter(|v| **v != 0.0).count() > 400);
}

#[test]
fn linear_smoothgrad_is_affine_in_mean_noise() {
    let w = rand_mat(NF, 29, 4);
    let m = Linear { w: w.clone() };
    let (t, e, a) = (5, rand_mat(5, NF, 5), rand_mat(5, 29, 6));
    let noise: Vec<Array2<f64>> = (0..7).map(|k| rand_mat(t, NF, 100 + k).mapv(|v| 0.3 * v)).collect();
    let s = saliency_raw(&m, e.view(), a.view()).unwrap();
    let sm = smoothgrad_with_noise(&m, e.view(), a.view(), &noise).unwrap();
    let mean_noise = noise.iter().fold(Array2::zeros((t, NF)), |acc, n| acc + n) / 7.0;
    // S(e + n) − S(e) = 2/(T·29) · n W Wᵀ
    let shift = mean_noise.dot(&w).dot(&w.t()) * (2.0 / (t * 29) as f64);
    for ti in 0..t {
        for c in 0..NF {
            let (el, f) = (c / 21, c % 21);
            let d = sm.values[[el, f, ti]] - s.values[[el, f, ti]];
            assert!((d - shift[[ti, c]]).abs() < 1e-12);
        }
    }
    // zero-mean noise leaves it untouched
    let pm: Vec<Array2<f64>> = vec![noise[0].clone(), noise[0].mapv(|v| -v)];
    let back = smoothgrad_with_noise(&m, e.view(), a.view(), &pm).unwrap();
    assert!((&back.values - &s.values).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn saliency_matches_finite_differences() {
    let m = tiny_model();
    let e = rand_mat(4, NF, 7);
    let a = rand_mat(4, 29, 8);
    let s = saliency_raw(&m, e.view(), a.view()).unwrap();
    let at = Tensor::new(vec![1, 4, 29], a.iter().copied().collect()).unwrap();
    let x = Tensor::new(vec![1, 4, NF], e.iter().copied().collect()).unwrap();
    let err = grad_check(
        |g, v| {
            let y = m.forward_eval(g, v).unwrap();
            let t = g.constant(at.clone());
            g.mse(y, t)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
    assert!(s.values.iter().all(|v| v.is_finite()));
}

#[test]
fn vanishing_noise_recovers_raw_gradient() {
    let m = tiny_model();
    let e = rand_mat(5, NF, 9);
    let a = rand_mat(5, 29, 10);
    let s = saliency_raw(&m, e.view(), a.view()).unwrap();
    let sm = smoothgrad(&m, e.view(), a.view(), 1, 1e-9, 3).unwrap();
    let scale = s.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let worst = (&sm.values - &s.values).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    assert!(worst <= 1e-6 * scale.max(1.0), "{worst}");
}

#[test]
fn smoothgrad_is_seeded_and_averages_down() {
    let m = tiny_model();
    let e = rand_mat(4, NF, 11);
    let a = rand_mat(4, 29, 12);
    let one = smoothgrad(&m, e.view(), a.view(), 3, 0.15, 1).unwrap();
    assert_eq!(one, smoothgrad(&m, e.view(), a.view(), 3, 0.15, 1).unwrap());
    assert_ne!(one, smoothgrad(&m, e.view(), a.view(), 3, 0.15, 2).unwrap());
    let spread = |n: usize| {
        let maps: Vec<Array3<f64>> = (0..6)
            .map(|s| smoothgrad(&m, e.view(), a.view(), n, 3.0, 50 + s).unwrap().values)
            .collect();
        let mean = maps.iter().fold(Array3::<f64>::zeros(maps[0].dim()), |acc, x| acc + x) / 6.0;
        maps.iter().map(|x| (x - &mean).mapv(|v| v * v).sum()).sum::<f64>()
    };
    let (v1, v10, v50) = (spread(1), spread(10), spread(50));
    assert!(v1 > v10 && v10 > v50, "{v1} {v10} {v50}");
}

#[test]
fn constant_input_has_no_noise_scale() {
    let m = tiny_model();
    let e = Array2::from_elem((3, NF), 0.4);
    let a = rand_mat(3, 29, 13);
    assert!(smoothgrad(&m, e.view(), a.view(), 2, 0.15, 0).is_err());
    assert!(smoothgrad_noise_sd(e.view(), 0.15).is_err());
    let e = rand_mat(3, NF, 14);
    let span = e.iter().cloned().fold(f64::MIN, f64::max) - e.iter().cloned().fold(f64::MAX, f64::min);
    assert!((smoothgrad_noise_sd(e.view(), 0.15).unwrap() - 0.15 / span).abs() < 1e-15);
}

#[test]
fn aggregates() {
    let grid = GridGeometry::new(2, 3);
    let uniform = SaliencyMap {
        values: Array3::from_elem((6, 21, 4), -0.5),
    };
    let el = aggregate_saliency(&uniform, SaliencyAxis::Electrode, grid).unwrap();
    assert_eq!(el.dim(), (2, 3));
    assert!(el.iter().all(|v| *v == 0.5));
    let ft = aggregate_saliency(&uniform, SaliencyAxis::Feature, grid).unwrap();
    assert_eq!(ft.dim(), (1, 21));
    assert!(ft.iter().all(|v| *v == 0.5));

    let mut rng = rng_for(3, 3);
    let map = SaliencyMap {
        values: Array3::from_shape_simple_fn((6, 21, 4), || rng.gen_range(-1.0..1.0)),
    };
    let mean_abs = map.values.mapv(f64::abs).mean().unwrap();
    let el = aggregate_saliency(&map, SaliencyAxis::Electrode, grid).unwrap();
    let ft = aggregate_saliency(&map, SaliencyAxis::Feature, grid).unwrap();
    assert!((el.sum() / 6.0 - mean_abs).abs() < 1e-12);
    assert!((ft.sum() / 21.0 - mean_abs).abs() < 1e-12);
    // electrode 4 sits at row 1, column 1
    let direct = map.values.slice(ndarray::s![4, .., ..]).mapv(f64::abs).mean().unwrap();
    assert!((el[[1, 1]] - direct).abs() < 1e-12);
    assert!(aggregate_saliency(&map, SaliencyAxis::Electrode, GridGeometry::new(2, 2)).is_err());
    let frac = electrode_mass_fraction(&map, &[0, 1, 2, 3, 4, 5]);
    assert!((frac - 1.0).abs() < 1e-12);
}
