use super::dense;
use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Contribution, Graph, Var};
use crate::tensor::Tensor;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each output flat index, the source flat index under `perm`.
fn permute_index(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let numel: usize = shape.iter().product();
    let mut idx = Vec::with_capacity(numel);
    let mut counter = vec![0usize; out_shape.len()];
    for _ in 0..numel {
        let src: usize = counter.iter().zip(perm).map(|(&c, &p)| c * in_strides[p]).sum();
        idx.push(src);
        for d in (0..counter.len()).rev() {
            counter[d] += 1;
            if counter[d] < out_shape[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    idx
}

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x)));
        }
        let out = self.value(x).reshaped(shape.to_vec())?;
        self.push("reshape", out, &[x], Box::new(|args| vec![dense(args.grad.to_vec())]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return arg_err("permute", format!("invalid permutation {perm:?} for {shape:?}"));
        }
        let idx = permute_index(&shape, perm);
        let src = self.value(x).data();
        let data: Vec<f64> = idx.iter().map(|&i| src[i]).collect();
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        self.push(
            "permute",
            Tensor::new(out_shape, data)?,
            &[x],
            Box::new(move |args| {
                let mut g = vec![0.0; idx.len()];
                for (o, &i) in idx.iter().enumerate() {
                    g[i] = args.grad[o];
                }
                vec![dense(g)]
            }),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return shape_err("transpose", format!("rank {r}"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return shape_err("narrow", format!("{shape:?} axis {axis} {start}+{len}"));
        }
        let (outer, dim, inner) = self.value(x).split_at_axis(axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let contiguous = outer == 1;
        let total = outer * dim * inner;
        self.push(
            "narrow",
            Tensor::new(out_shape, data)?,
            &[x],
            Box::new(move |args| {
                if contiguous {
                    return vec![Some(Contribution::Range {
                        offset: start * inner,
                        values: args.grad.to_vec(),
                    })];
                }
                let mut g = vec![0.0; total];
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    g[base..base + len * inner].copy_from_slice(&args.grad[o * len * inner..(o + 1) * len * inner]);
                }
                vec![dense(g)]
            }),
        )
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return arg_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} for {base:?}"));
        }
        let mut sizes = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return shape_err("concat", format!("{base:?} vs {s:?}"));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total_axis: usize = sizes.iter().sum();
        let mut data = vec![0.0; outer * total_axis * inner];
        let mut offset = 0;
        for (&v, &sz) in xs.iter().zip(&sizes) {
            let src = self.value(v).data();
            for o in 0..outer {
                let dst = o * total_axis * inner + offset * inner;
                data[dst..dst + sz * inner].copy_from_slice(&src[o * sz * inner..(o + 1) * sz * inner]);
            }
            offset += sz;
        }
        let mut out_shape = base;
        out_shape[axis] = total_axis;
        self.push(
            "concat",
            Tensor::new(out_shape, data)?,
            xs,
            Box::new(move |args| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut offset = 0;
                for (k, &sz) in sizes.iter().enumerate() {
                    if args.needs[k] {
                        let mut g = Vec::with_capacity(outer * sz * inner);
                        for o in 0..outer {
                            let src = o * total_axis * inner + offset * inner;
                            g.extend_from_slice(&args.grad[src..src + sz * inner]);
                        }
                        out.push(dense(g));
                    } else {
                        out.push(None);
                    }
                    offset += sz;
                }
                out
            }),
        )
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return arg_err("stack", "no inputs");
        };
        let mut unit = vec![1];
        unit.extend_from_slice(self.shape(first));
        let reshaped = xs.iter().map(|&v| self.reshape(v, &unit)).collect::<Result<Vec<_>>>()?;
        self.concat(&reshaped, 0)
    }

    /// Row gather on a `[n, d]` view of `x` (last axis `d`): output row `r` is
    /// input row `index[r]`, or zeros for `None`. Gradients scatter-add back.
    pub fn gather_rows(&mut self, x: Var, index: &[Option<usize>]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&1);
        let rows = self.value(x).numel() / d.max(1);
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= rows) {
            return shape_err("gather_rows", format!("row {bad} of {rows}"));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; index.len() * d];
        for (r, i) in index.iter().enumerate() {
            if let Some(i) = i {
                data[r * d..(r + 1) * d].copy_from_slice(&src[i * d..(i + 1) * d]);
            }
        }
        let index = index.to_vec();
        self.push(
            "gather_rows",
            Tensor::new(vec![index.len(), d], data)?,
            &[x],
            Box::new(move |args| {
                let mut g = vec![0.0; rows * d];
                for (r, i) in index.iter().enumerate() {
                    if let Some(i) = i {
                        for (acc, v) in g[i * d..(i + 1) * d].iter_mut().zip(&args.grad[r * d..(r + 1) * d]) {
                            *acc += v;
                        }
                    }
                }
                vec![dense(g)]
            }),
        )
    }

    /// Gathers individual elements by flat index into a rank-1 tensor.
    pub fn pick(&mut self, x: Var, flat_index: &[usize]) -> Result<Var> {
        let numel = self.value(x).numel();
        if let Some(bad) = flat_index.iter().find(|&&i| i >= numel) {
            return shape_err("pick", format!("index {bad} of {numel}"));
        }
        let src = self.value(x).data();
        let data: Vec<f64> = flat_index.iter().map(|&i| src[i]).collect();
        let index = flat_index.to_vec();
        self.push(
            "pick",
            Tensor::from_vec(data),
            &[x],
            Box::new(move |args| {
                let mut g = vec![0.0; numel];
                for (o, &i) in index.iter().enumerate() {
                    g[i] += args.grad[o];
                }
                vec![dense(g)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_index_transposes_matrix() {
        // [[0,1,2],[3,4,5]] transposed -> [[0,3],[1,4],[2,5]]
        assert_eq!(permute_index(&[2, 3], &[1, 0]), vec![0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn narrow_and_concat_round_trip() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2, 4], (0..8).map(f64::from).collect()).unwrap());
        let a = g.narrow(x, 1, 0, 1).unwrap();
        let b = g.narrow(x, 1, 1, 3).unwrap();
        let y = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }
}
