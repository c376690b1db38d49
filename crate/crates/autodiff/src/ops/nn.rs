//! Layer-level ops: normalization, dropout, convolution and the LSTM cell.

use rand::Rng;

use super::dense;
use super::elementwise::sigmoid;
use super::linalg::gemm;
use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Running statistics for batch normalization in evaluation mode.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    Train,
    Eval {
        running_mean: &'a [f64],
        running_var: &'a [f64],
    },
}

/// Per-channel statistics of a training-mode batch norm call. `var` is the
/// unbiased estimate, which is what running averages track.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Flat layout `[outer, groups, inner]`; statistics are taken per group over
/// `outer × inner` values.
struct GroupLayout {
    outer: usize,
    groups: usize,
    inner: usize,
}

impl GroupLayout {
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        for o in 0..self.outer {
            for g in 0..self.groups {
                let base = (o * self.groups + g) * self.inner;
                for i in 0..self.inner {
                    f(g, base + i);
                }
            }
        }
    }

    fn count(&self) -> usize {
        self.outer * self.inner
    }
}

/// `dx = (dx̂ − mean(dx̂) − x̂·mean(dx̂·x̂)) / σ` per group.
fn normalized_backward(layout: &GroupLayout, dxhat: &[f64], xhat: &[f64], inv_std: &[f64]) -> Vec<f64> {
    let mut s1 = vec![0.0; layout.groups];
    let mut s2 = vec![0.0; layout.groups];
    layout.for_each(|g, k| {
        s1[g] += dxhat[k];
        s2[g] += dxhat[k] * xhat[k];
    });
    let m = layout.count() as f64;
    let mut dx = vec![0.0; dxhat.len()];
    layout.for_each(|g, k| {
        dx[k] = inv_std[g] * (dxhat[k] - s1[g] / m - xhat[k] * s2[g] / m);
    });
    dx
}

impl Graph {
    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap_or(&1);
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return shape_err("layer_norm", format!("affine params for last axis {n}"));
        }
        let rows = self.value(x).numel() / n.max(1);
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..n {
                let h = (row[i] - mu) * is;
                xhat[r * n + i] = h;
                out[r * n + i] = gv[i] * h + bv[i];
            }
        }
        self.push(
            "layer_norm",
            Tensor::new(shape, out)?,
            &[x, gamma, beta],
            Box::new(move |args| {
                let g = args.grad;
                let gamma = args.inputs[1].data();
                let gx = args.needs[0].then(|| {
                    let layout = GroupLayout {
                        outer: 1,
                        groups: rows,
                        inner: n,
                    };
                    let dxhat: Vec<f64> = g.iter().enumerate().map(|(k, v)| v * gamma[k % n]).collect();
                    normalized_backward(&layout, &dxhat, &xhat, &inv_std)
                });
                let ggamma = args.needs[1].then(|| {
                    let mut acc = vec![0.0; n];
                    for (k, (gv, hv)) in g.iter().zip(&xhat).enumerate() {
                        acc[k % n] += gv * hv;
                    }
                    acc
                });
                let gbeta = args.needs[2].then(|| {
                    let mut acc = vec![0.0; n];
                    for (k, gv) in g.iter().enumerate() {
                        acc[k % n] += gv;
                    }
                    acc
                });
                vec![gx.and_then(dense), ggamma.and_then(dense), gbeta.and_then(dense)]
            }),
        )
    }

    /// Batch normalization over axis 1 of `[N, C, ...]`, with statistics over
    /// every other axis. Training mode also returns the batch statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return shape_err("batch_norm", format!("rank {}", shape.len()));
        }
        let c = shape[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return shape_err("batch_norm", format!("affine params for {c} channels"));
        }
        let layout = GroupLayout {
            outer: shape[0],
            groups: c,
            inner: shape[2..].iter().product(),
        };
        let m = layout.count();
        let xv = self.value(x).data().to_vec();
        let (mean, var, stats) = match mode {
            BatchNormMode::Train => {
                if m < 2 {
                    return arg_err("batch_norm", "training mode needs more than one value per channel");
                }
                let mut mean = vec![0.0; c];
                layout.for_each(|g, k| mean[g] += xv[k]);
                mean.iter_mut().for_each(|v| *v /= m as f64);
                let mut var = vec![0.0; c];
                layout.for_each(|g, k| var[g] += (xv[k] - mean[g]).powi(2));
                let unbiased: Vec<f64> = var.iter().map(|v| v / (m - 1) as f64).collect();
                var.iter_mut().for_each(|v| *v /= m as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return shape_err("batch_norm", "running statistics length");
                }
                (running_mean.to_vec(), running_var.to_vec(), None)
            }
        };
        let train = stats.is_some();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        layout.for_each(|g, k| {
            let h = (xv[k] - mean[g]) * inv_std[g];
            xhat[k] = h;
            out[k] = gv[g] * h + bv[g];
        });
        let var_out = self.push(
            "batch_norm",
            Tensor::new(shape, out)?,
            &[x, gamma, beta],
            Box::new(move |args| {
                let g = args.grad;
                let gamma = args.inputs[1].data();
                let gx = args.needs[0].then(|| {
                    let mut dxhat = vec![0.0; g.len()];
                    layout.for_each(|ch, k| dxhat[k] = g[k] * gamma[ch]);
                    if train {
                        normalized_backward(&layout, &dxhat, &xhat, &inv_std)
                    } else {
                        let mut dx = dxhat;
                        layout.for_each(|ch, k| dx[k] *= inv_std[ch]);
                        dx
                    }
                });
                let ggamma = args.needs[1].then(|| {
                    let mut acc = vec![0.0; c];
                    layout.for_each(|ch, k| acc[ch] += g[k] * xhat[k]);
                    acc
                });
                let gbeta = args.needs[2].then(|| {
                    let mut acc = vec![0.0; c];
                    layout.for_each(|ch, k| acc[ch] += g[k]);
                    acc
                });
                vec![gx.and_then(dense), ggamma.and_then(dense), gbeta.and_then(dense)]
            }),
        )?;
        Ok((var_out, stats))
    }

    /// Inverted dropout: survivors are scaled by `1/(1 − rate)` in training;
    /// identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return arg_err("dropout", format!("rate {rate} outside [0, 1)"));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let xt = self.value(x);
        let out = Tensor::new(
            xt.shape().to_vec(),
            xt.data().iter().zip(&mask).map(|(a, b)| a * b).collect(),
        )?;
        self.push(
            "dropout",
            out,
            &[x],
            Box::new(move |args| vec![dense(args.grad.iter().zip(&mask).map(|(a, b)| a * b).collect())]),
        )
    }

    /// 2-D convolution, stride 1, "same" zero padding.
    ///
    /// `x: [N, Cin, H, W]`, `w: [Cout, Cin, KH, KW]`, `b: [Cout]`. For even
    /// kernels the extra padding row/column goes after the input.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || self.shape(b) != [ws[0]] {
            return shape_err("conv2d", format!("x {xs:?} w {ws:?} b {:?}", self.shape(b)));
        }
        let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            kh,
            kw,
        };
        let cols = geom.im2col(self.value(x).data());
        let kdim = cin * kh * kw;
        let rows = n * h * wd;
        let mut out_rows = vec![0.0; rows * cout];
        gemm(
            rows,
            kdim,
            cout,
            &cols,
            false,
            self.value(w).data(),
            true,
            0.0,
            &mut out_rows,
        );
        let bias = self.value(b).data();
        let mut out = vec![0.0; n * cout * h * wd];
        for ni in 0..n {
            for p in 0..h * wd {
                let r = ni * h * wd + p;
                for co in 0..cout {
                    out[(ni * cout + co) * h * wd + p] = out_rows[r * cout + co] + bias[co];
                }
            }
        }
        self.push(
            "conv2d",
            Tensor::new(vec![n, cout, h, wd], out)?,
            &[x, w, b],
            Box::new(move |args| {
                let hw = h * wd;
                let mut grows = vec![0.0; rows * cout];
                for ni in 0..n {
                    for co in 0..cout {
                        for p in 0..hw {
                            grows[(ni * hw + p) * cout + co] = args.grad[(ni * cout + co) * hw + p];
                        }
                    }
                }
                let gx = args.needs[0].then(|| {
                    let mut gcols = vec![0.0; rows * kdim];
                    gemm(
                        rows,
                        cout,
                        kdim,
                        &grows,
                        false,
                        args.inputs[1].data(),
                        false,
                        0.0,
                        &mut gcols,
                    );
                    geom.col2im(&gcols)
                });
                let gw = args.needs[1].then(|| {
                    let mut gw = vec![0.0; cout * kdim];
                    gemm(cout, rows, kdim, &grows, true, &cols, false, 0.0, &mut gw);
                    gw
                });
                let gb = args.needs[2].then(|| {
                    let mut gb = vec![0.0; cout];
                    for r in grows.chunks(cout) {
                        for (acc, v) in gb.iter_mut().zip(r) {
                            *acc += v;
                        }
                    }
                    gb
                });
                vec![gx.and_then(dense), gw.and_then(dense), gb.and_then(dense)]
            }),
        )
    }

    /// Pointwise LSTM update. `gates: [B, 4H]` are pre-activations in
    /// `[input, forget, cell, output]` order, `c_prev: [B, H]`. Returns
    /// `[B, 2H]` holding `[h | c]`.
    pub fn lstm_gates(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let gs = self.shape(gates).to_vec();
        let cs = self.shape(c_prev).to_vec();
        if gs.len() != 2 || cs.len() != 2 || gs[0] != cs[0] || gs[1] != 4 * cs[1] {
            return shape_err("lstm_gates", format!("gates {gs:?} c {cs:?}"));
        }
        let (bsz, hd) = (cs[0], cs[1]);
        let gv = self.value(gates).data();
        let cv = self.value(c_prev).data();
        // Saved activations: i, f, g, o, tanh(c).
        let mut act = vec![0.0; bsz * 5 * hd];
        let mut out = vec![0.0; bsz * 2 * hd];
        for b in 0..bsz {
            let row = &gv[b * 4 * hd..(b + 1) * 4 * hd];
            let a = &mut act[b * 5 * hd..(b + 1) * 5 * hd];
            for j in 0..hd {
                let i = sigmoid(row[j]);
                let f = sigmoid(row[hd + j]);
                let g = row[2 * hd + j].tanh();
                let o = sigmoid(row[3 * hd + j]);
                let c = f * cv[b * hd + j] + i * g;
                let tc = c.tanh();
                a[j] = i;
                a[hd + j] = f;
                a[2 * hd + j] = g;
                a[3 * hd + j] = o;
                a[4 * hd + j] = tc;
                out[b * 2 * hd + j] = o * tc;
                out[b * 2 * hd + hd + j] = c;
            }
        }
        self.push(
            "lstm_gates",
            Tensor::new(vec![bsz, 2 * hd], out)?,
            &[gates, c_prev],
            Box::new(move |args| {
                let cprev = args.inputs[1].data();
                let mut dgates = vec![0.0; bsz * 4 * hd];
                let mut dc_prev = vec![0.0; bsz * hd];
                for b in 0..bsz {
                    let a = &act[b * 5 * hd..(b + 1) * 5 * hd];
                    let gr = &args.grad[b * 2 * hd..(b + 1) * 2 * hd];
                    for j in 0..hd {
                        let (i, f, g, o, tc) = (a[j], a[hd + j], a[2 * hd + j], a[3 * hd + j], a[4 * hd + j]);
                        let dh = gr[j];
                        let dc = gr[hd + j] + dh * o * (1.0 - tc * tc);
                        let d = &mut dgates[b * 4 * hd..(b + 1) * 4 * hd];
                        d[j] = dc * g * i * (1.0 - i);
                        d[hd + j] = dc * cprev[b * hd + j] * f * (1.0 - f);
                        d[2 * hd + j] = dc * i * (1.0 - g * g);
                        d[3 * hd + j] = dh * tc * o * (1.0 - o);
                        dc_prev[b * hd + j] = dc * f;
                    }
                }
                vec![
                    args.needs[0].then_some(dgates).and_then(dense),
                    args.needs[1].then_some(dc_prev).and_then(dense),
                ]
            }),
        )
    }

    /// One LSTM step: `x: [B, D]`, `h, c: [B, H]`, `w_ih: [D, 4H]`,
    /// `w_hh: [H, 4H]`, `bias: [4H]`. Returns the new `(h, c)`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, bias: Var) -> Result<(Var, Var)> {
        let xi = self.matmul(x, w_ih)?;
        let hh = self.matmul(h, w_hh)?;
        let pre = self.add(xi, hh)?;
        let gates = self.add_bias(pre, bias)?;
        self.lstm_step(gates, c)
    }

    /// Applies [`Graph::lstm_gates`] and splits the result into `(h, c)`.
    pub fn lstm_step(&mut self, gates: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.shape(c)[1];
        let hc = self.lstm_gates(gates, c)?;
        let h = self.narrow(hc, 1, 0, hd)?;
        let c = self.narrow(hc, 1, hd, hd)?;
        Ok((h, c))
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeom {
    fn pads(&self) -> (usize, usize) {
        ((self.kh - 1) / 2, (self.kw - 1) / 2)
    }

    /// Visits every (column-matrix index, input index) pair that is inside
    /// the image.
    fn visit(&self, mut f: impl FnMut(usize, usize)) {
        let (pt, pl) = self.pads();
        let kdim = self.cin * self.kh * self.kw;
        for ni in 0..self.n {
            for i in 0..self.h {
                for j in 0..self.w {
                    let row = (ni * self.h + i) * self.w + j;
                    for ci in 0..self.cin {
                        for di in 0..self.kh {
                            let y = i + di;
                            if y < pt || y - pt >= self.h {
                                continue;
                            }
                            for dj in 0..self.kw {
                                let x = j + dj;
                                if x < pl || x - pl >= self.w {
                                    continue;
                                }
                                let col = (ci * self.kh + di) * self.kw + dj;
                                let src = ((ni * self.cin + ci) * self.h + (y - pt)) * self.w + (x - pl);
                                f(row * kdim + col, src);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.n * self.h * self.w * self.cin * self.kh * self.kw];
        self.visit(|c, s| cols[c] = x[s]);
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n * self.cin * self.h * self.w];
        self.visit(|c, s| x[s] += cols[c]);
        x
    }
}
