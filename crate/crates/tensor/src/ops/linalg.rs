use crate::error::{shape_err, Result};
use crate::graph::{accumulate, Graph, Op, Var};
use crate::tensor::{Real, Tensor};

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm_acc<T: Real>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o = *o + s * bv;
            }
        }
    }
}

/// Inner product with eight independent partial sums.
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] = lanes[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    let pairs = [lanes[0] + lanes[4], lanes[1] + lanes[5], lanes[2] + lanes[6], lanes[3] + lanes[7]];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

/// `out[m×k] += g[m×n] · bᵀ` where `b` is `k×n`.
fn gemm_bt_acc<T: Real>(out: &mut [T], g: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = out[i * k + p] + dot(grow, brow);
        }
    }
}

/// `out[k×n] += aᵀ · g` where `a` is `m×k`, `g` is `m×n`.
fn gemm_at_acc<T: Real>(out: &mut [T], a: &[T], g: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            for (o, &gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o = *o + s * gv;
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// `out[b,m] = Σ_n x[b,n]·w[n,m] + bias[m]`
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return shape_err("linear", xs, ws);
        }
        let (rows, n, m) = (xs[0], xs[1], ws[1]);
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return shape_err("linear bias", self.shape(b), &[m]);
            }
        }
        let mut out = vec![T::zero(); rows * m];
        if let Some(b) = bias {
            let bv = self.data(b);
            for r in 0..rows {
                out[r * m..(r + 1) * m].copy_from_slice(bv);
            }
        }
        gemm_acc(&mut out, self.data(x), self.data(w), rows, n, m);
        let value = Tensor::new(vec![rows, m], out)?;
        let mut deps = vec![x, w];
        deps.extend(bias);
        let needs = self.needs(&deps);
        Ok(self.push(value, Op::Linear { x, w, b: bias }, needs))
    }

    /// Batched product `[G×M×K]·[G×K×N] → [G×M×N]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return shape_err("batch_matmul", sa, sb);
        }
        let (groups, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); groups * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for gi in 0..groups {
            gemm_acc(
                &mut out[gi * m * n..(gi + 1) * m * n],
                &da[gi * m * k..(gi + 1) * m * k],
                &db[gi * k * n..(gi + 1) * k * n],
                m,
                k,
                n,
            );
        }
        let value = Tensor::new(vec![groups, m, n], out)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::BatchMatMul(a, b), needs))
    }
}

pub(super) fn backward<T: Real>(graph: &Graph<T>, index: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    match &graph.nodes[index].op {
        Op::Linear { x, w, b } => {
            let (rows, n) = (graph.shape(*x)[0], graph.shape(*x)[1]);
            let m = graph.shape(*w)[1];
            let (xv, wv) = (graph.data(*x), graph.data(*w));
            accumulate(grads, graph, *x, |d| gemm_bt_acc(d, g, wv, rows, n, m));
            accumulate(grads, graph, *w, |d| gemm_at_acc(d, xv, g, rows, n, m));
            if let Some(b) = b {
                accumulate(grads, graph, *b, |d| {
                    for r in 0..rows {
                        for (dv, &gv) in d.iter_mut().zip(&g[r * m..(r + 1) * m]) {
                            *dv = *dv + gv;
                        }
                    }
                });
            }
        }
        Op::BatchMatMul(a, b) => {
            let (groups, m, k) = {
                let s = graph.shape(*a);
                (s[0], s[1], s[2])
            };
            let n = graph.shape(*b)[2];
            let (av, bv) = (graph.data(*a), graph.data(*b));
            accumulate(grads, graph, *a, |d| {
                for gi in 0..groups {
                    gemm_bt_acc(
                        &mut d[gi * m * k..(gi + 1) * m * k],
                        &g[gi * m * n..(gi + 1) * m * n],
                        &bv[gi * k * n..(gi + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            });
            accumulate(grads, graph, *b, |d| {
                for gi in 0..groups {
                    gemm_at_acc(
                        &mut d[gi * k * n..(gi + 1) * k * n],
                        &av[gi * m * k..(gi + 1) * m * k],
                        &g[gi * m * n..(gi + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
            });
        }
        _ => unreachable!("not a linear-algebra op"),
    }
}
