use super::linalg::dot;
use crate::error::{shape_err, Result};
use crate::graph::{accumulate, Graph, Op, Var};
use crate::tensor::{Real, Tensor};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Real> Graph<T> {
    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = *v.shape().last().expect("rank >= 1");
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                sum = sum + *e;
            }
            for e in row.iter_mut() {
                *e = *e / sum;
            }
        }
        let value = Tensor::new(v.shape().to_vec(), out).expect("same extent");
        let needs = self.needs(&[x]);
        self.push(value, Op::Softmax(x), needs)
    }

    /// Normalizes each row over the last axis; optional elementwise affine
    /// `(gamma, beta)` of the row length.
    pub fn layer_norm(&mut self, x: Var, affine: Option<(Var, Var)>) -> Result<Var> {
        let v = self.value(x);
        let n = *v.shape().last().expect("rank >= 1");
        if let Some((gm, bt)) = affine {
            if self.shape(gm) != [n] || self.shape(bt) != [n] {
                return shape_err("layer_norm", v.shape(), self.shape(gm));
            }
        }
        let inv_n = T::one() / T::lit(n as f64);
        let eps = T::lit(LAYER_NORM_EPS);
        let rows = v.numel() / n;
        let mut xhat = Vec::with_capacity(v.numel());
        let mut rstd = Vec::with_capacity(rows);
        for row in v.data().chunks(n) {
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() * inv_n;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            xhat.extend(row.iter().map(|&e| (e - mean) * r));
        }
        let out = match affine {
            Some((gm, bt)) => {
                let (gv, bv) = (self.data(gm), self.data(bt));
                xhat.chunks(n)
                    .flat_map(|row| row.iter().zip(gv).zip(bv).map(|((&h, &g), &b)| h * g + b))
                    .collect()
            }
            None => xhat.clone(),
        };
        let value = Tensor::new(v.shape().to_vec(), out)?;
        let mut deps = vec![x];
        if let Some((gm, bt)) = affine {
            deps.extend([gm, bt]);
        }
        let needs = self.needs(&deps);
        Ok(self.push(value, Op::LayerNorm { x, affine, xhat, rstd }, needs))
    }
}

pub(super) fn backward<T: Real>(graph: &Graph<T>, index: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &graph.nodes[index];
    let n = *node.value.shape().last().expect("rank >= 1");
    match &node.op {
        Op::Softmax(x) => {
            let y = node.value.data();
            accumulate(grads, graph, *x, |d| {
                for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                    let gy = dot(gr, yr);
                    for ((dv, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *dv = *dv + yv * (gv - gy);
                    }
                }
            });
        }
        Op::LayerNorm { x, affine, xhat, rstd } => {
            let inv_n = T::one() / T::lit(n as f64);
            let gamma = affine.map(|(gm, _)| graph.data(gm));
            accumulate(grads, graph, *x, |d| {
                let mut dxhat = vec![T::zero(); n];
                for (r, ((dr, gr), hr)) in d.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate() {
                    for (j, dh) in dxhat.iter_mut().enumerate() {
                        *dh = match gamma {
                            Some(gm) => gr[j] * gm[j],
                            None => gr[j],
                        };
                    }
                    let mean_d = dxhat.iter().copied().sum::<T>() * inv_n;
                    let mean_dh = dot(&dxhat, hr) * inv_n;
                    for j in 0..n {
                        dr[j] = dr[j] + rstd[r] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                    }
                }
            });
            if let Some((gm, bt)) = affine {
                accumulate(grads, graph, *gm, |d| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for ((dv, &gv), &h) in d.iter_mut().zip(gr).zip(hr) {
                            *dv = *dv + gv * h;
                        }
                    }
                });
                accumulate(grads, graph, *bt, |d| {
                    for gr in g.chunks(n) {
                        super::elementwise::add_into(d, gr);
                    }
                });
            }
        }
        _ => unreachable!("not a normalization op"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[1, 4]));
        let y = g.softmax(x);
        assert_eq!(g.data(y), &[0.25; 4]);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(vec![2, 4], &[1., 2., 3., 4., -5., 0., 5., 10.]).unwrap());
        let y = g.layer_norm(x, None).unwrap();
        for row in g.data(y).chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
