use ndarray::Array2;
use neurodecode::corpus::GridGeometry;
use neurodecode::models::{positional_encoding, EncoderVariant, Mode, Model, ModelConfig, ModelDims, Role};
use neurodecode::rng_for;
use neurodecode_autodiff::{grad_check, Graph, Tensor};
use rand::Rng;

fn tiny_dims() -> ModelDims {
    ModelDims {
        vit_embed: 6,
        vit_latent: 4,
        vit_heads: 2,
        vit_head_dim: 3,
        vit_ffn: 5,
        cnn_channels: [3, 2, 2],
        cnn_kernel: (2, 2),
        lstm_hidden: 3,
        lstm_layers: 2,
        head_hidden: 5,
        head_dropout: 0.5,
        projector_hidden: 4,
    }
}

fn model(variant: EncoderVariant, dims: ModelDims, grid: GridGeometry) -> Model {
    Model::new(ModelConfig { variant, dims }, grid, 7).unwrap()
}

fn input(b: usize, t: usize, nf: usize, seed: u64) -> Tensor {
    let mut rng = rng_for(seed, 0);
    Tensor::new(
        vec![b, t, nf],
        (0..b * t * nf).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn run(m: &Model, x: &Tensor, lengths: &[usize]) -> Tensor {
    let mut g = Graph::new();
    let w = m.params.bind(&mut g);
    let xv = g.constant(x.clone());
    let (y, _) = m.forward(&mut g, &w, xv, lengths, &mut Mode::Eval).unwrap();
    g.value(y).clone()
}

fn latent(m: &Model, x: &Tensor, lengths: &[usize]) -> Tensor {
    let mut g = Graph::new();
    let w = m.params.bind(&mut g);
    let xv = g.constant(x.clone());
    let e = m.encode(&mut g, &w, xv, lengths, &mut Mode::Eval).unwrap();
    g.value(e.latent).clone()
}

#[test]
fn positional_encoding_values() {
    let pe = positional_encoding(50, 176).unwrap();
    assert_eq!(pe.dim(), (176, 50));
    for r in 0..176 {
        assert_eq!(pe[[r, 0]], if r % 2 == 0 { 0.0 } else { 1.0 });
    }
    assert!(pe.iter().all(|v| v.abs() <= 1.0));
    for t in 0..50 {
        assert!((pe[[0, t]] - (t as f64).sin()).abs() < 1e-12);
        assert!((pe[[1, t]] - (t as f64).cos()).abs() < 1e-12);
        // row 2i uses frequency 10000^(-2i/d); check i = 10
        let w = (-(20.0 / 176.0) * 10000f64.ln()).exp();
        assert!((pe[[20, t]] - (t as f64 * w).sin()).abs() < 1e-12);
    }
    assert!(positional_encoding(4, 5).is_err());
}

#[test]
fn vit_latent_has_176_dims_per_frame() {
    let grid = GridGeometry::new(2, 2);
    let m = model(EncoderVariant::Vit, ModelDims::paper(), grid);
    let x = input(2, 5, grid.flattened_dim(), 1);
    let z = latent(&m, &x, &[5, 5]);
    assert_eq!(z.shape(), &[2, 5, 176]);
    let y = run(&m, &x, &[5, 5]);
    assert_eq!(y.shape(), &[2, 5, 29]);
}

#[test]
fn cnn_latent_dims_follow_grid() {
    for (nx, ny, want) in [(9, 8, 2304), (4, 8, 1024)] {
        let grid = GridGeometry::new(nx, ny);
        let m = model(EncoderVariant::Cnn, ModelDims::paper(), grid);
        assert_eq!(m.latent_dim(), want);
    }
    let grid = GridGeometry::new(4, 8);
    let dims = ModelDims {
        cnn_channels: [8, 4, 32],
        ..tiny_dims()
    };
    let m = model(EncoderVariant::Cnn, dims, grid);
    let z = latent(&m, &Tensor::zeros(&[1, 3, grid.flattened_dim()]), &[3]);
    assert_eq!(z.shape(), &[1, 3, 1024]);
    assert!(z.data().iter().all(|v| *v == 0.0));
}

#[test]
fn wrong_input_width_is_rejected() {
    let grid = GridGeometry::new(2, 2);
    let m = model(EncoderVariant::Vit, tiny_dims(), grid);
    let mut g = Graph::new();
    let w = m.params.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[1, 3, 85]));
    assert!(m.encode(&mut g, &w, x, &[3], &mut Mode::Eval).is_err());
    let x = g.constant(Tensor::zeros(&[1, 3, 84]));
    assert!(m.encode(&mut g, &w, x, &[4], &mut Mode::Eval).is_err());
}

#[test]
fn padding_does_not_change_valid_frames() {
    let grid = GridGeometry::new(2, 2);
    let nf = grid.flattened_dim();
    for variant in [EncoderVariant::Vit, EncoderVariant::Cnn] {
        let m = model(variant, tiny_dims(), grid);
        let a = input(1, 3, nf, 2);
        let b = input(1, 5, nf, 3);
        let mut padded = vec![0.0; 2 * 5 * nf];
        padded[..3 * nf].copy_from_slice(a.data());
        padded[5 * nf..].copy_from_slice(b.data());
        let both = run(&m, &Tensor::new(vec![2, 5, nf], padded).unwrap(), &[3, 5]);
        let ya = run(&m, &a, &[3]);
        let yb = run(&m, &b, &[5]);
        for k in 0..3 * 29 {
            assert!((both.data()[k] - ya.data()[k]).abs() < 1e-12, "{variant:?}");
        }
        for k in 0..5 * 29 {
            assert!((both.data()[5 * 29 + k] - yb.data()[k]).abs() < 1e-12, "{variant:?}");
        }
    }
}

#[test]
fn batch_permutation_is_equivariant() {
    let grid = GridGeometry::new(2, 2);
    let nf = grid.flattened_dim();
    let m = model(EncoderVariant::Vit, tiny_dims(), grid);
    let x = input(2, 4, nf, 4);
    let mut swapped = x.data()[4 * nf..].to_vec();
    swapped.extend_from_slice(&x.data()[..4 * nf]);
    let y = run(&m, &x, &[4, 4]);
    let ys = run(&m, &Tensor::new(vec![2, 4, nf], swapped).unwrap(), &[4, 4]);
    assert_eq!(&y.data()[..4 * 29], &ys.data()[4 * 29..]);
    assert_eq!(&y.data()[4 * 29..], &ys.data()[..4 * 29]);
}

#[test]
fn eval_is_deterministic_and_train_uses_dropout() {
    let grid = GridGeometry::new(2, 2);
    let m = model(EncoderVariant::Vit, tiny_dims(), grid);
    let x = input(1, 6, grid.flattened_dim(), 5);
    assert_eq!(run(&m, &x, &[6]), run(&m, &x, &[6]));
    let mut g = Graph::new();
    let w = m.params.bind(&mut g);
    let xv = g.constant(x.clone());
    let mut rng = rng_for(1, 1);
    let (y, _) = m.forward(&mut g, &w, xv, &[6], &mut Mode::Train(&mut rng)).unwrap();
    assert_ne!(g.value(y), &run(&m, &x, &[6]));
}

#[test]
fn first_frame_sees_the_last_frame() {
    let grid = GridGeometry::new(2, 2);
    let nf = grid.flattened_dim();
    for variant in [EncoderVariant::Vit, EncoderVariant::Cnn] {
        let m = model(variant, tiny_dims(), grid);
        let x = input(1, 6, nf, 6);
        let mut changed = x.clone();
        for v in &mut changed.data_mut()[5 * nf..] {
            *v += 0.5;
        }
        let y = run(&m, &x, &[6]);
        let y2 = run(&m, &changed, &[6]);
        let d: f64 = (0..29).map(|c| (y.data()[c] - y2.data()[c]).abs()).sum();
        assert!(d > 1e-9, "{variant:?} frame 0 ignored the last frame");
    }
}

#[test]
fn predict_matches_batched_forward() {
    let grid = GridGeometry::new(2, 2);
    let m = model(EncoderVariant::Vit, tiny_dims(), grid);
    let x = input(1, 4, grid.flattened_dim(), 8);
    let y = run(&m, &x, &[4]);
    let feats = Array2::from_shape_vec((4, grid.flattened_dim()), x.data().to_vec()).unwrap();
    let p = m.predict(feats.view()).unwrap();
    assert_eq!(p.as_slice().unwrap(), y.data());
}

#[test]
fn transfer_copies_shared_weights() {
    let p5 = GridGeometry::new(9, 8);
    let clin = GridGeometry::new(4, 8);
    let src = model(EncoderVariant::Vit, ModelDims::compact(), p5);
    let dst = src.transfer_init(clin, 3).unwrap();
    assert_eq!(dst.params.get("enc.embed1.w").unwrap().value.shape(), &[672, 64]);
    assert_eq!(src.params.get("enc.embed1.w").unwrap().value.shape(), &[1512, 64]);
    for p in dst.params.iter() {
        let s = src.params.get(&p.name).unwrap();
        match p.role {
            Role::Shared => assert_eq!(p.value, s.value, "{}", p.name),
            Role::PatientSpecific => assert!(p.name.starts_with("enc.embed1")),
        }
    }
    assert_eq!(src.shared_encoder_numel(), dst.shared_encoder_numel());
    let x = input(1, 3, 672, 9);
    assert_eq!(run(&dst, &x, &[3]).shape(), &[1, 3, 29]);
    let cnn = model(EncoderVariant::Cnn, ModelDims::compact(), p5);
    assert!(cnn.transfer_init(clin, 3).is_err());
    assert_eq!(cnn.shared_encoder_numel(), 0);
}

#[test]
fn paper_vit_shared_part_is_grid_independent() {
    let a = model(EncoderVariant::Vit, ModelDims::paper(), GridGeometry::new(9, 8));
    let b = model(EncoderVariant::Vit, ModelDims::paper(), GridGeometry::new(4, 8));
    assert_eq!(a.shared_encoder_numel(), b.shared_encoder_numel());
    assert_eq!(a.params.get("dec.lstm0f.w_hh").unwrap().value.shape(), &[256, 1024]);
    assert_eq!(a.params.get("dec.head1.w").unwrap().value.shape(), &[512, 1024]);
    assert_eq!(a.params.get("enc.attn.q.w").unwrap().value.shape(), &[176, 128]);
    assert_eq!(a.params.get("proj.1.w").unwrap().value.shape(), &[176, 128]);
}

#[test]
fn recurrent_blocks_are_orthogonal_and_forget_bias_is_one() {
    let m = model(EncoderVariant::Vit, tiny_dims(), GridGeometry::new(2, 2));
    let w = &m.params.get("dec.lstm1b.w_hh").unwrap().value;
    let h = 3;
    for blk in 0..4 {
        for i in 0..h {
            for j in 0..h {
                let dot: f64 = (0..h)
                    .map(|r| w.data()[r * 4 * h + blk * h + i] * w.data()[r * 4 * h + blk * h + j])
                    .sum();
                assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-10);
            }
        }
    }
    let b = &m.params.get("dec.lstm0f.b").unwrap().value;
    assert_eq!(b.data(), &[0., 0., 0., 1., 1., 1., 0., 0., 0., 0., 0., 0.]);
}

fn composite_error(variant: EncoderVariant) -> f64 {
    let grid = GridGeometry::new(2, 2);
    let nf = grid.flattened_dim();
    let m = model(variant, tiny_dims(), grid);
    let x = input(2, 2, nf, 10);
    let target = input(2, 2, 29, 11);
    let mut worst: f64 = 0.0;
    let names: Vec<String> = m.params.iter().map(|p| p.name.clone()).collect();
    for name in names {
        let value = m.params.get(&name).unwrap().value.clone();
        let f = |g: &mut Graph, v| {
            let w = m.params.bind_replacing(g, &name, v);
            let xv = g.constant(x.clone());
            let mut rng = rng_for(3, 3);
            let (y, enc) = m.forward(g, &w, xv, &[2, 2], &mut Mode::Train(&mut rng)).unwrap();
            let t = g.constant(target.clone());
            let mse = g.mse(y, t)?;
            let p = m.project(g, &w, enc.latent).unwrap();
            let q = g.square(p)?;
            let q = g.mean(q)?;
            g.add(mse, q)
        };
        let err = grad_check(f, &value, 1e-5).unwrap();
        assert!(err < 1e-4, "{variant:?} {name}: {err}");
        worst = worst.max(err);
    }
    worst
}

#[test]
fn vit_composite_gradients_match_finite_differences() {
    composite_error(EncoderVariant::Vit);
}

#[test]
fn cnn_composite_gradients_match_finite_differences() {
    composite_error(EncoderVariant::Cnn);
}

#[test]
fn checkpoint_roundtrip_keeps_f32_values() {
    let grid = GridGeometry::new(2, 2);
    let m = model(EncoderVariant::Cnn, tiny_dims(), grid);
    let dir = tempfile::tempdir().unwrap();
    let path = neurodecode::models::write_checkpoint(&m, dir.path()).unwrap();
    let back = neurodecode::models::load_checkpoint(&path).unwrap();
    assert_eq!(back.config, m.config);
    assert_eq!(back.bn_running, m.bn_running);
    for (a, b) in m.params.iter().zip(back.params.iter()) {
        assert_eq!(a.name, b.name);
        let rounded: Vec<f64> = a.value.data().iter().map(|v| *v as f32 as f64).collect();
        assert_eq!(rounded, b.value.data());
    }
}
