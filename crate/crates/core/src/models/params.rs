use std::collections::HashMap;

use neurodecode_autodiff::{Graph, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Whether a tensor is tied to one participant's electrode layout or reused
/// across participants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Shared,
    PatientSpecific,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub role: Role,
}

/// Named parameters in a fixed order; the order is the layout used by Adam.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn push(&mut self, name: &str, value: Tensor, role: Role) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            role,
        });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.params.iter().map(|p| p.value.numel()).collect()
    }

    /// Copies every parameter onto `g` as a gradient-tracking leaf.
    pub fn bind<'p>(&'p self, g: &mut Graph) -> Bound<'p> {
        self.bind_with(g, true)
    }

    /// Like [`ParamSet::bind`]; with `trainable = false` the leaves are
    /// constants (inference, input saliency).
    pub fn bind_with<'p>(&'p self, g: &mut Graph, trainable: bool) -> Bound<'p> {
        let vars = self.params.iter().map(|p| g.leaf(p.value.clone(), trainable)).collect();
        Bound { set: self, vars }
    }
}

impl ParamSet {
    /// Binds as constants except `name`, which is served by `var`; used to
    /// probe the gradient of a single tensor.
    pub fn bind_replacing<'p>(&'p self, g: &mut Graph, name: &str, var: Var) -> Bound<'p> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if p.name == name {
                    var
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        Bound { set: self, vars }
    }
}

/// Graph handles for a bound [`ParamSet`].
pub struct Bound<'p> {
    set: &'p ParamSet,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn var(&self, name: &str) -> Var {
        match self.set.position(name) {
            Some(i) => self.vars[i],
            None => panic!("no parameter named {name}"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in parameter order, `None` where nothing flowed.
    pub fn grads<'g>(&self, g: &'g Graph) -> Vec<Option<&'g [f64]>> {
        self.vars.iter().map(|&v| g.grad(v)).collect()
    }
}

/// `U(−1/√fan_in, 1/√fan_in)`.
pub(crate) fn fan_in_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// `[h, 4h]` made of four orthogonal `h × h` blocks (Gram–Schmidt on
/// Gaussian columns).
pub(crate) fn orthogonal_blocks<R: Rng>(rng: &mut R, h: usize) -> Tensor {
    let mut out = vec![0.0; h * 4 * h];
    for block in 0..4 {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(h);
        while cols.len() < h {
            let mut v: Vec<f64> = (0..h).map(|_| rng.sample(StandardNormal)).collect();
            for u in &cols {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue;
            }
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
        for (j, col) in cols.iter().enumerate() {
            for (i, &x) in col.iter().enumerate() {
                out[i * 4 * h + block * h + j] = x;
            }
        }
    }
    Tensor::new(vec![h, 4 * h], out).expect("shape matches data")
}
