use super::dense;
use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

impl Graph {
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let n = self.value(x).numel();
        self.push(
            "sum",
            Tensor::scalar(s),
            &[x],
            Box::new(move |args| vec![dense(vec![args.grad[0]; n])]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return arg_err("mean", "empty tensor");
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean over the last axis: `[..., n] -> [...]`.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some(&n) = shape.last() else {
            return shape_err("mean_last", "rank 0");
        };
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(n)
            .map(|r| r.iter().sum::<f64>() / n as f64)
            .collect();
        self.push(
            "mean_last",
            Tensor::new(shape[..shape.len() - 1].to_vec(), data)?,
            &[x],
            Box::new(move |args| {
                let mut g = Vec::with_capacity(args.grad.len() * n);
                for &v in args.grad {
                    g.extend(std::iter::repeat_n(v / n as f64, n));
                }
                vec![dense(g)]
            }),
        )
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("mse", format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let n = self.value(a).numel();
        if n == 0 {
            return arg_err("mse", "empty tensor");
        }
        let diff: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(p, q)| p - q)
            .collect();
        let v = diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
        self.push(
            "mse",
            Tensor::scalar(v),
            &[a, b],
            Box::new(move |args| {
                let c = 2.0 * args.grad[0] / n as f64;
                let ga = args.needs[0].then(|| diff.iter().map(|d| c * d).collect());
                let gb = args.needs[1].then(|| diff.iter().map(|d| -c * d).collect());
                vec![ga.and_then(dense), gb.and_then(dense)]
            }),
        )
    }

    /// Squared error averaged over valid rows. `pred` and `target` have shape
    /// `[..., c]`; `row_mask` holds one 0/1 weight per length-`c` row. The
    /// result is `Σ mask·(pred − target)² / (Σ mask · c)`.
    pub fn masked_mse(&mut self, pred: Var, target: Var, row_mask: &[f64]) -> Result<Var> {
        let shape = self.shape(pred).to_vec();
        if shape != self.shape(target) {
            return shape_err("masked_mse", format!("{shape:?} vs {:?}", self.shape(target)));
        }
        let c = *shape.last().unwrap_or(&1);
        let rows = self.value(pred).numel() / c.max(1);
        if row_mask.len() != rows {
            return shape_err("masked_mse", format!("mask {} for {rows} rows", row_mask.len()));
        }
        let weight: f64 = row_mask.iter().sum::<f64>() * c as f64;
        if weight <= 0.0 {
            return arg_err("masked_mse", "empty mask");
        }
        let mut diff: Vec<f64> = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, q)| p - q)
            .collect();
        for (row, &m) in diff.chunks_mut(c).zip(row_mask) {
            for d in row {
                *d *= m;
            }
        }
        let v = diff.iter().map(|d| d * d).sum::<f64>() / weight;
        self.push(
            "masked_mse",
            Tensor::scalar(v),
            &[pred, target],
            Box::new(move |args| {
                let k = 2.0 * args.grad[0] / weight;
                let gp = args.needs[0].then(|| diff.iter().map(|d| k * d).collect());
                let gt = args.needs[1].then(|| diff.iter().map(|d| -k * d).collect());
                vec![gp.and_then(dense), gt.and_then(dense)]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap_or(&1);
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push(
            "softmax",
            Tensor::new(shape, data)?,
            &[x],
            Box::new(move |args| {
                let y = args.out.data();
                let mut g = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(n).zip(args.grad.chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    g.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                vec![dense(g)]
            }),
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap_or(&1);
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(
            "log_softmax",
            Tensor::new(shape, data)?,
            &[x],
            Box::new(move |args| {
                let y = args.out.data();
                let mut g = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(n).zip(args.grad.chunks(n)) {
                    let s: f64 = gr.iter().sum();
                    g.extend(yr.iter().zip(gr).map(|(yv, gv)| gv - yv.exp() * s));
                }
                vec![dense(g)]
            }),
        )
    }
}
