//! CNN and ViT encoders, the bidirectional LSTM decoder with its output head,
//! the contrastive projector, and transfer-learning initialisation.
//!
//! Batches are `[B, T, N_f]` with zero padding past each trial's length.
//! Padding never leaks into valid frames: attention masks padded keys, the
//! backward LSTM runs on each sequence reversed within its own length, and
//! the CNN normalises over valid frames only.

mod checkpoint;
mod params;

use neurodecode_autodiff::{BatchNormMode, BatchStats, Graph, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{GridGeometry, N_ACOUSTIC, N_FEATURES};
use crate::error::{config_err, data_err, Result};
use crate::rng_for;

pub use checkpoint::{load_checkpoint, write_checkpoint, CHECKPOINT_MANIFEST};
use params::{fan_in_uniform, orthogonal_blocks};
pub use params::{Bound, Param, ParamSet, Role};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const FORGET_BIAS: f64 = 1.0;
const MASKED: f64 = -1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderVariant {
    Cnn,
    Vit,
}

/// Layer sizes. [`ModelDims::paper`] is the full architecture;
/// [`ModelDims::compact`] keeps the wiring at a size a single core trains in
/// minutes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub vit_embed: usize,
    pub vit_latent: usize,
    pub vit_heads: usize,
    pub vit_head_dim: usize,
    pub vit_ffn: usize,
    pub cnn_channels: [usize; 3],
    pub cnn_kernel: (usize, usize),
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub head_hidden: usize,
    pub head_dropout: f64,
    pub projector_hidden: usize,
}

impl ModelDims {
    pub fn paper() -> Self {
        Self {
            vit_embed: 256,
            vit_latent: 176,
            vit_heads: 4,
            vit_head_dim: 32,
            vit_ffn: 64,
            cnn_channels: [128, 64, 32],
            cnn_kernel: (3, 3),
            lstm_hidden: 256,
            lstm_layers: 3,
            head_hidden: 1024,
            head_dropout: 0.5,
            projector_hidden: 128,
        }
    }

    pub fn compact() -> Self {
        Self {
            vit_embed: 64,
            vit_latent: 48,
            vit_heads: 2,
            vit_head_dim: 16,
            vit_ffn: 32,
            cnn_channels: [16, 8, 4],
            cnn_kernel: (3, 3),
            lstm_hidden: 32,
            lstm_layers: 2,
            head_hidden: 64,
            head_dropout: 0.5,
            projector_hidden: 32,
        }
    }

    fn validate(&self) -> Result<()> {
        let sizes = [
            self.vit_embed,
            self.vit_latent,
            self.vit_heads,
            self.vit_head_dim,
            self.vit_ffn,
            self.lstm_hidden,
            self.lstm_layers,
            self.head_hidden,
            self.projector_hidden,
            self.cnn_kernel.0,
            self.cnn_kernel.1,
        ];
        if sizes.contains(&0) || self.cnn_channels.contains(&0) {
            return config_err("model dimensions must be positive");
        }
        if !self.vit_latent.is_multiple_of(2) {
            return config_err("ViT latent size must be even for the positional encoding");
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return config_err(format!("head dropout {} outside [0, 1)", self.head_dropout));
        }
        Ok(())
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        Self::paper()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: EncoderVariant,
    pub dims: ModelDims,
}

/// Running statistics of one CNN batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Dropout randomness in training; none in evaluation.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub struct EncoderOutput {
    /// `[B, T, d_latent]`.
    pub latent: Var,
    /// Per-layer statistics of training-mode batch norm (CNN only).
    pub bn_stats: Vec<BatchStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub grid: GridGeometry,
    pub params: ParamSet,
    pub bn_running: Vec<RunningStats>,
}

fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape)
}

/// Sine–cosine table, `d × T`: row `2i` holds `sin(t / 10000^(2i/d))`, row
/// `2i + 1` the matching cosine.
pub fn positional_encoding(t: usize, d: usize) -> Result<ndarray::Array2<f64>> {
    if !d.is_multiple_of(2) {
        return data_err(format!("positional encoding needs even d, got {d}"));
    }
    Ok(ndarray::Array2::from_shape_fn((d, t), |(row, ti)| {
        let i = (row / 2) as f64;
        let angle = ti as f64 / 10000f64.powf(2.0 * i / d as f64);
        if row % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

impl Model {
    /// Fresh weights: fan-in uniform for dense and conv kernels, orthogonal
    /// recurrent blocks, zero biases except the LSTM forget gate.
    pub fn new(config: ModelConfig, grid: GridGeometry, seed: u64) -> Result<Self> {
        config.dims.validate()?;
        if grid.n_features != N_FEATURES || grid.electrodes() == 0 {
            return config_err(format!("unsupported grid {grid:?}"));
        }
        let mut rng = rng_for(seed, 0x30de1);
        let d = &config.dims;
        let mut p = ParamSet::default();
        let nf = grid.flattened_dim();
        let mut bn_running = Vec::new();
        match config.variant {
            EncoderVariant::Vit => {
                let ps = Role::PatientSpecific;
                let sh = Role::Shared;
                p.push("enc.embed1.w", fan_in_uniform(&mut rng, &[nf, d.vit_embed], nf), ps);
                p.push("enc.embed1.b", zeros(&[d.vit_embed]), ps);
                let l = d.vit_latent;
                let inner = d.vit_heads * d.vit_head_dim;
                p.push(
                    "enc.embed2.w",
                    fan_in_uniform(&mut rng, &[d.vit_embed, l], d.vit_embed),
                    sh,
                );
                p.push("enc.embed2.b", zeros(&[l]), sh);
                for name in ["q", "k", "v"] {
                    p.push(
                        &format!("enc.attn.{name}.w"),
                        fan_in_uniform(&mut rng, &[l, inner], l),
                        sh,
                    );
                    p.push(&format!("enc.attn.{name}.b"), zeros(&[inner]), sh);
                }
                p.push("enc.attn.o.w", fan_in_uniform(&mut rng, &[inner, l], inner), sh);
                p.push("enc.attn.o.b", zeros(&[l]), sh);
                p.push("enc.ln1.g", Tensor::full(&[l], 1.0), sh);
                p.push("enc.ln1.b", zeros(&[l]), sh);
                p.push("enc.ffn1.w", fan_in_uniform(&mut rng, &[l, d.vit_ffn], l), sh);
                p.push("enc.ffn1.b", zeros(&[d.vit_ffn]), sh);
                p.push("enc.ffn2.w", fan_in_uniform(&mut rng, &[d.vit_ffn, l], d.vit_ffn), sh);
                p.push("enc.ffn2.b", zeros(&[l]), sh);
                p.push("enc.ln2.g", Tensor::full(&[l], 1.0), sh);
                p.push("enc.ln2.b", zeros(&[l]), sh);
            }
            EncoderVariant::Cnn => {
                let (kh, kw) = d.cnn_kernel;
                let mut cin = N_FEATURES;
                for (i, &cout) in d.cnn_channels.iter().enumerate() {
                    let fan = cin * kh * kw;
                    let role = Role::PatientSpecific;
                    p.push(
                        &format!("enc.conv{i}.w"),
                        fan_in_uniform(&mut rng, &[cout, cin, kh, kw], fan),
                        role,
                    );
                    p.push(&format!("enc.conv{i}.b"), zeros(&[cout]), role);
                    p.push(&format!("enc.bn{i}.g"), Tensor::full(&[cout], 1.0), role);
                    p.push(&format!("enc.bn{i}.b"), zeros(&[cout]), role);
                    bn_running.push(RunningStats {
                        mean: vec![0.0; cout],
                        var: vec![1.0; cout],
                    });
                    cin = cout;
                }
            }
        }
        let latent = latent_dim(&config, grid);
        let h = d.lstm_hidden;
        for layer in 0..d.lstm_layers {
            let input = if layer == 0 { latent } else { 2 * h };
            for dir in ["f", "b"] {
                let pre = format!("dec.lstm{layer}{dir}");
                p.push(
                    &format!("{pre}.w_ih"),
                    fan_in_uniform(&mut rng, &[input, 4 * h], input),
                    Role::Shared,
                );
                p.push(&format!("{pre}.w_hh"), orthogonal_blocks(&mut rng, h), Role::Shared);
                let mut bias = vec![0.0; 4 * h];
                bias[h..2 * h].fill(FORGET_BIAS);
                p.push(&format!("{pre}.b"), Tensor::new(vec![4 * h], bias)?, Role::Shared);
            }
        }
        p.push(
            "dec.head1.w",
            fan_in_uniform(&mut rng, &[2 * h, d.head_hidden], 2 * h),
            Role::Shared,
        );
        p.push("dec.head1.b", zeros(&[d.head_hidden]), Role::Shared);
        p.push(
            "dec.head2.w",
            fan_in_uniform(&mut rng, &[d.head_hidden, N_ACOUSTIC], d.head_hidden),
            Role::Shared,
        );
        p.push("dec.head2.b", zeros(&[N_ACOUSTIC]), Role::Shared);
        let ph = d.projector_hidden;
        p.push(
            "proj.1.w",
            fan_in_uniform(&mut rng, &[latent, ph], latent),
            Role::Shared,
        );
        p.push("proj.1.b", zeros(&[ph]), Role::Shared);
        p.push(
            "proj.2.w",
            fan_in_uniform(&mut rng, &[ph, N_ACOUSTIC], ph),
            Role::Shared,
        );
        p.push("proj.2.b", zeros(&[N_ACOUSTIC]), Role::Shared);
        Ok(Self {
            config,
            grid,
            params: p,
            bn_running,
        })
    }

    pub fn latent_dim(&self) -> usize {
        latent_dim(&self.config, self.grid)
    }

    /// Number of scalars in tensors marked [`Role::Shared`] that belong to
    /// the encoder.
    pub fn shared_encoder_numel(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.role == Role::Shared && p.name.starts_with("enc."))
            .map(|p| p.value.numel())
            .sum()
    }

    fn check_input(&self, g: &Graph, x: Var, lengths: &[usize]) -> Result<(usize, usize)> {
        let s = g.shape(x);
        if s.len() != 3 || s[2] != self.grid.flattened_dim() {
            return data_err(format!(
                "input shape {s:?}, expected [B, T, {}]",
                self.grid.flattened_dim()
            ));
        }
        let (b, t) = (s[0], s[1]);
        if lengths.len() != b || lengths.iter().any(|&l| l == 0 || l > t) {
            return data_err(format!("lengths {lengths:?} invalid for batch {b} x {t}"));
        }
        Ok((b, t))
    }

    /// Encoder: `[B, T, N_f] → [B, T, d_latent]`.
    pub fn encode(
        &self,
        g: &mut Graph,
        w: &Bound<'_>,
        x: Var,
        lengths: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<EncoderOutput> {
        let (b, t) = self.check_input(g, x, lengths)?;
        match self.config.variant {
            EncoderVariant::Vit => Ok(EncoderOutput {
                latent: self.vit(g, w, x, lengths, b, t)?,
                bn_stats: Vec::new(),
            }),
            EncoderVariant::Cnn => self.cnn(g, w, x, lengths, b, t, mode.is_train()),
        }
    }

    fn dense(&self, g: &mut Graph, w: &Bound<'_>, x: Var, name: &str) -> Result<Var> {
        let y = g.matmul(x, w.var(&format!("{name}.w")))?;
        Ok(g.add_bias(y, w.var(&format!("{name}.b")))?)
    }

    fn vit(&self, g: &mut Graph, w: &Bound<'_>, x: Var, lengths: &[usize], b: usize, t: usize) -> Result<Var> {
        let d = &self.config.dims;
        let l = d.vit_latent;
        let (nh, hd) = (d.vit_heads, d.vit_head_dim);
        let h1 = self.dense(g, w, x, "enc.embed1")?;
        let h1 = g.tanh(h1)?;
        let h2 = self.dense(g, w, h1, "enc.embed2")?;
        let h2 = g.tanh(h2)?;
        let pe = positional_encoding(t, l)?;
        let mut pe_data = Vec::with_capacity(b * t * l);
        for _ in 0..b {
            for ti in 0..t {
                pe_data.extend(pe.column(ti).iter());
            }
        }
        let pe = g.constant(Tensor::new(vec![b, t, l], pe_data)?);
        let z = g.add(h2, pe)?;

        let heads = |g: &mut Graph, v: Var| -> Result<Var> {
            let v = g.reshape(v, &[b, t, nh, hd])?;
            let v = g.permute(v, &[0, 2, 1, 3])?;
            Ok(g.reshape(v, &[b * nh, t, hd])?)
        };
        let q = self.dense(g, w, z, "enc.attn.q")?;
        let q = heads(g, q)?;
        let k = self.dense(g, w, z, "enc.attn.k")?;
        let k = heads(g, k)?;
        let v = self.dense(g, w, z, "enc.attn.v")?;
        let v = heads(g, v)?;
        let scores = g.bmm(q, k, false, true)?;
        let mut scores = g.scale(scores, 1.0 / (hd as f64).sqrt())?;
        if lengths.iter().any(|&len| len < t) {
            let mut mask = vec![0.0; b * nh * t * t];
            for (bi, &len) in lengths.iter().enumerate() {
                for hi in 0..nh {
                    let base = (bi * nh + hi) * t * t;
                    for qi in 0..t {
                        mask[base + qi * t + len..base + (qi + 1) * t].fill(MASKED);
                    }
                }
            }
            let mask = g.constant(Tensor::new(vec![b * nh, t, t], mask)?);
            scores = g.add(scores, mask)?;
        }
        let attn = g.softmax(scores)?;
        let ctx = g.bmm(attn, v, false, false)?;
        let ctx = g.reshape(ctx, &[b, nh, t, hd])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, t, nh * hd])?;
        let o = self.dense(g, w, ctx, "enc.attn.o")?;
        let r1 = g.add(z, o)?;
        let n1 = g.layer_norm(r1, w.var("enc.ln1.g"), w.var("enc.ln1.b"), NORM_EPS)?;
        let f = self.dense(g, w, n1, "enc.ffn1")?;
        let f = g.gelu(f)?;
        let f = self.dense(g, w, f, "enc.ffn2")?;
        let r2 = g.add(n1, f)?;
        Ok(g.layer_norm(r2, w.var("enc.ln2.g"), w.var("enc.ln2.b"), NORM_EPS)?)
    }

    #[allow(clippy::too_many_arguments)]
    fn cnn(
        &self,
        g: &mut Graph,
        w: &Bound<'_>,
        x: Var,
        lengths: &[usize],
        b: usize,
        t: usize,
        train: bool,
    ) -> Result<EncoderOutput> {
        let e = self.grid.electrodes();
        let valid: Vec<Option<usize>> = (0..b)
            .flat_map(|bi| (0..lengths[bi]).map(move |ti| Some(bi * t + ti)))
            .collect();
        let n = valid.len();
        let mut h = g.gather_rows(x, &valid)?;
        h = g.reshape(h, &[n, e, N_FEATURES])?;
        h = g.permute(h, &[0, 2, 1])?;
        h = g.reshape(h, &[n, N_FEATURES, self.grid.n_x, self.grid.n_y])?;
        let mut stats = Vec::new();
        for i in 0..3 {
            h = g.conv2d(h, w.var(&format!("enc.conv{i}.w")), w.var(&format!("enc.conv{i}.b")))?;
            let rs = &self.bn_running[i];
            let mode = if train {
                BatchNormMode::Train
            } else {
                BatchNormMode::Eval {
                    running_mean: &rs.mean,
                    running_var: &rs.var,
                }
            };
            let (y, s) = g.batch_norm(
                h,
                w.var(&format!("enc.bn{i}.g")),
                w.var(&format!("enc.bn{i}.b")),
                mode,
                NORM_EPS,
            )?;
            stats.extend(s);
            h = g.leaky_relu(y, LEAKY_SLOPE)?;
        }
        let latent = self.latent_dim();
        h = g.reshape(h, &[n, latent])?;
        let mut scatter = vec![None; b * t];
        let mut k = 0;
        for (bi, &len) in lengths.iter().enumerate() {
            for ti in 0..len {
                scatter[bi * t + ti] = Some(k);
                k += 1;
            }
        }
        h = g.gather_rows(h, &scatter)?;
        Ok(EncoderOutput {
            latent: g.reshape(h, &[b, t, latent])?,
            bn_stats: stats,
        })
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        for (rs, s) in self.bn_running.iter_mut().zip(stats) {
            for (r, v) in rs.mean.iter_mut().zip(&s.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
            for (r, v) in rs.var.iter_mut().zip(&s.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }

    /// Bidirectional LSTM stack and head: `[B, T, d] → [B, T, 29]`.
    pub fn decode(
        &self,
        g: &mut Graph,
        w: &Bound<'_>,
        latent: Var,
        lengths: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let s = g.shape(latent).to_vec();
        let (b, t) = (s[0], s[1]);
        let d = &self.config.dims;
        let h = d.lstm_hidden;
        // time-major from here on
        let mut x = g.permute(latent, &[1, 0, 2])?;
        let reverse: Vec<Option<usize>> = (0..t)
            .flat_map(|ti| (0..b).map(move |bi| (ti < lengths[bi]).then(|| (lengths[bi] - 1 - ti) * b + bi)))
            .collect();
        for layer in 0..d.lstm_layers {
            let fwd = self.lstm_pass(g, w, x, &format!("dec.lstm{layer}f"), t, b, h)?;
            let width = g.shape(x)[2];
            let xr = g.gather_rows(x, &reverse)?;
            let xr = g.reshape(xr, &[t, b, width])?;
            let back = self.lstm_pass(g, w, xr, &format!("dec.lstm{layer}b"), t, b, h)?;
            let back = g.gather_rows(back, &reverse)?;
            let back = g.reshape(back, &[t, b, h])?;
            x = g.concat(&[fwd, back], 2)?;
        }
        let y = self.dense(g, w, x, "dec.head1")?;
        let y = match mode {
            Mode::Train(rng) => g.dropout(y, d.head_dropout, true, *rng)?,
            Mode::Eval => y,
        };
        let y = self.dense(g, w, y, "dec.head2")?;
        Ok(g.permute(y, &[1, 0, 2])?)
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_pass(&self, g: &mut Graph, w: &Bound<'_>, x: Var, pre: &str, t: usize, b: usize, h: usize) -> Result<Var> {
        let xw = g.matmul(x, w.var(&format!("{pre}.w_ih")))?;
        let xw = g.add_bias(xw, w.var(&format!("{pre}.b")))?;
        let w_hh = w.var(&format!("{pre}.w_hh"));
        let mut hs = g.constant(zeros(&[b, h]));
        let mut cs = g.constant(zeros(&[b, h]));
        let mut out = Vec::with_capacity(t);
        for ti in 0..t {
            let gx = g.narrow(xw, 0, ti, 1)?;
            let gx = g.reshape(gx, &[b, 4 * h])?;
            let gh = g.matmul(hs, w_hh)?;
            let gates = g.add(gx, gh)?;
            (hs, cs) = g.lstm_step(gates, cs)?;
            out.push(hs);
        }
        Ok(g.stack(&out)?)
    }

    /// Contrastive projector: `[B, T, d] → [B, T, 29]`.
    pub fn project(&self, g: &mut Graph, w: &Bound<'_>, latent: Var) -> Result<Var> {
        let y = self.dense(g, w, latent, "proj.1")?;
        let y = g.gelu(y)?;
        self.dense(g, w, y, "proj.2")
    }

    /// Encoder followed by decoder; returns the output and the encoder state.
    pub fn forward(
        &self,
        g: &mut Graph,
        w: &Bound<'_>,
        x: Var,
        lengths: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<(Var, EncoderOutput)> {
        let enc = self.encode(g, w, x, lengths, mode)?;
        let out = self.decode(g, w, enc.latent, lengths, mode)?;
        Ok((out, enc))
    }

    /// Eval-mode prediction for one trial, `T × N_f → T × 29`.
    pub fn predict(&self, features: ndarray::ArrayView2<'_, f64>) -> Result<ndarray::Array2<f64>> {
        let (t, nf) = features.dim();
        let mut g = Graph::new();
        let w = self.params.bind_with(&mut g, false);
        let x = g.constant(Tensor::new(vec![1, t, nf], features.iter().copied().collect())?);
        let (y, _) = self.forward(&mut g, &w, x, &[t], &mut Mode::Eval)?;
        let v = g.value(y);
        Ok(ndarray::Array2::from_shape_vec((t, N_ACOUSTIC), v.data().to_vec()).expect("shape"))
    }

    /// Copies the source model for a participant with a different grid. Only
    /// the first ViT projection is re-initialised; everything else is carried
    /// over bit for bit.
    pub fn transfer_init(&self, target: GridGeometry, seed: u64) -> Result<Model> {
        if self.config.variant != EncoderVariant::Vit {
            return config_err("transfer learning needs a ViT encoder");
        }
        let mut fresh = Model::new(self.config.clone(), target, seed)?;
        for p in fresh.params.iter_mut() {
            if p.role == Role::Shared {
                p.value = self.params.get(&p.name).expect("same architecture").value.clone();
            }
        }
        Ok(fresh)
    }
}

fn latent_dim(config: &ModelConfig, grid: GridGeometry) -> usize {
    match config.variant {
        EncoderVariant::Vit => config.dims.vit_latent,
        EncoderVariant::Cnn => config.dims.cnn_channels[2] * grid.electrodes(),
    }
}
