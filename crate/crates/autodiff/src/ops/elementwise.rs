use super::dense;
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

impl Graph {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect(),
        )?;
        self.push(
            "add",
            out,
            &[a, b],
            Box::new(|args| {
                let g = args.grad.to_vec();
                vec![
                    args.needs[0].then(|| crate::Contribution::Dense(g.clone())),
                    args.needs[1].then_some(crate::Contribution::Dense(g)),
                ]
            }),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect(),
        )?;
        self.push(
            "sub",
            out,
            &[a, b],
            Box::new(|args| {
                vec![
                    args.needs[0].then(|| crate::Contribution::Dense(args.grad.to_vec())),
                    args.needs[1].then(|| crate::Contribution::Dense(args.grad.iter().map(|g| -g).collect())),
                ]
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect(),
        )?;
        self.push(
            "mul",
            out,
            &[a, b],
            Box::new(|args| {
                let (x, y) = (args.inputs[0].data(), args.inputs[1].data());
                vec![
                    args.needs[0]
                        .then(|| crate::Contribution::Dense(args.grad.iter().zip(y).map(|(g, v)| g * v).collect())),
                    args.needs[1]
                        .then(|| crate::Contribution::Dense(args.grad.iter().zip(x).map(|(g, v)| g * v).collect())),
                ]
            }),
        )
    }

    /// Adds `bias` (shape `[n]`) to every length-`n` row of `x` (last axis `n`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [n] {
            return shape_err(
                "add_bias",
                format!("bias {:?} for input {:?}", self.shape(bias), self.shape(x)),
            );
        }
        let b = self.value(bias).data().to_vec();
        let xt = self.value(x);
        let mut data = xt.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bb) in row.iter_mut().zip(&b) {
                *v += bb;
            }
        }
        let out = Tensor::new(xt.shape().to_vec(), data)?;
        self.push(
            "add_bias",
            out,
            &[x, bias],
            Box::new(move |args| {
                let gb = args.needs[1].then(|| {
                    let mut gb = vec![0.0; n];
                    for row in args.grad.chunks(n) {
                        for (acc, g) in gb.iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    crate::Contribution::Dense(gb)
                });
                vec![
                    args.needs[0].then(|| crate::Contribution::Dense(args.grad.to_vec())),
                    gb,
                ]
            }),
        )
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = map(self.value(x), |v| v * c);
        self.push(
            "scale",
            out,
            &[x],
            Box::new(move |args| vec![dense(args.grad.iter().map(|g| g * c).collect())]),
        )
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = map(self.value(x), |v| v + c);
        self.push(
            "add_scalar",
            out,
            &[x],
            Box::new(|args| vec![dense(args.grad.to_vec())]),
        )
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| v * v);
        self.push(
            "square",
            out,
            &[x],
            Box::new(|args| {
                let x = args.inputs[0].data();
                vec![dense(args.grad.iter().zip(x).map(|(g, v)| 2.0 * g * v).collect())]
            }),
        )
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), f64::exp);
        self.push(
            "exp",
            out,
            &[x],
            Box::new(|args| {
                vec![dense(
                    args.grad.iter().zip(args.out.data()).map(|(g, y)| g * y).collect(),
                )]
            }),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), f64::tanh);
        self.push(
            "tanh",
            out,
            &[x],
            Box::new(|args| {
                vec![dense(
                    args.grad
                        .iter()
                        .zip(args.out.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect(),
                )]
            }),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), sigmoid);
        self.push(
            "sigmoid",
            out,
            &[x],
            Box::new(|args| {
                vec![dense(
                    args.grad
                        .iter()
                        .zip(args.out.data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect(),
                )]
            }),
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = map(self.value(x), |v| if v >= 0.0 { v } else { slope * v });
        self.push(
            "leaky_relu",
            out,
            &[x],
            Box::new(move |args| {
                let x = args.inputs[0].data();
                vec![dense(
                    args.grad
                        .iter()
                        .zip(x)
                        .map(|(g, v)| if *v >= 0.0 { *g } else { slope * g })
                        .collect(),
                )]
            }),
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), gelu);
        self.push(
            "gelu",
            out,
            &[x],
            Box::new(|args| {
                let x = args.inputs[0].data();
                vec![dense(args.grad.iter().zip(x).map(|(g, v)| g * gelu_grad(*v)).collect())]
            }),
        )
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(v: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2));
    cdf + v * FRAC_1_SQRT_2PI * (-0.5 * v * v).exp()
}
