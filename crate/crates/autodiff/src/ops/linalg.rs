use super::dense;
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// `c = op(a) · op(b) + beta·c` for row-major storage, where `op` optionally
/// transposes. Logical shapes: `op(a)` is `m×k`, `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n extents
    // of the slices, whose lengths are checked by the debug assertions and by
    // every caller constructing them from tensor shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    /// `x[..., k] · w[k, n] -> [..., n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return shape_err("matmul", format!("{xs:?} · {ws:?}"));
        }
        let (k, n) = (ws[0], ws[1]);
        let m = self.value(x).numel() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            0.0,
            &mut out,
        );
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = n;
        self.push(
            "matmul",
            Tensor::new(shape, out)?,
            &[x, w],
            Box::new(move |args| {
                let (xv, wv) = (args.inputs[0].data(), args.inputs[1].data());
                let gx = args.needs[0].then(|| {
                    let mut gx = vec![0.0; m * k];
                    gemm(m, n, k, args.grad, false, wv, true, 0.0, &mut gx);
                    gx
                });
                let gw = args.needs[1].then(|| {
                    let mut gw = vec![0.0; k * n];
                    gemm(k, m, n, xv, true, args.grad, false, 0.0, &mut gw);
                    gw
                });
                vec![gx.and_then(dense), gw.and_then(dense)]
            }),
        )
    }

    /// Batched matrix product over a leading batch axis.
    ///
    /// `a` is stored `[bt, m, k]` (or `[bt, k, m]` when `trans_a`), `b` is
    /// stored `[bt, k, n]` (or `[bt, n, k]` when `trans_b`); output `[bt, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return shape_err("bmm", format!("{sa:?} · {sb:?}"));
        }
        let bt = sa[0];
        let (m, k) = if trans_a { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != k2 {
            return shape_err("bmm", format!("inner dims {k} vs {k2}"));
        }
        let mut out = vec![0.0; bt * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..bt {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    trans_a,
                    &bv[i * k * n..(i + 1) * k * n],
                    trans_b,
                    0.0,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        self.push(
            "bmm",
            Tensor::new(vec![bt, m, n], out)?,
            &[a, b],
            Box::new(move |args| {
                let (av, bv) = (args.inputs[0].data(), args.inputs[1].data());
                let g = args.grad;
                let ga = args.needs[0].then(|| {
                    let mut ga = vec![0.0; bt * m * k];
                    for i in 0..bt {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bv[i * k * n..(i + 1) * k * n];
                        let dst = &mut ga[i * m * k..(i + 1) * m * k];
                        if trans_a {
                            gemm(k, n, m, bi, trans_b, gi, true, 0.0, dst);
                        } else {
                            gemm(m, n, k, gi, false, bi, !trans_b, 0.0, dst);
                        }
                    }
                    ga
                });
                let gb = args.needs[1].then(|| {
                    let mut gb = vec![0.0; bt * k * n];
                    for i in 0..bt {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &av[i * m * k..(i + 1) * m * k];
                        let dst = &mut gb[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            gemm(n, m, k, gi, true, ai, trans_a, 0.0, dst);
                        } else {
                            gemm(k, m, n, ai, !trans_a, gi, false, 0.0, dst);
                        }
                    }
                    gb
                });
                vec![ga.and_then(dense), gb.and_then(dense)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::gemm;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_for_all_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|v| (v as f64).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64 * 0.7).cos()).collect();
        for ta in [false, true] {
            for tb in [false, true] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, &a, ta, &b, tb, 0.0, &mut c);
                let want = naive(m, k, n, &a, ta, &b, tb);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
