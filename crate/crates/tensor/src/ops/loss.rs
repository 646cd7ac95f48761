use crate::error::{shape_err, Result, TensorError};
use crate::graph::{accumulate, Graph, Op, Var};
use crate::tensor::{Real, Tensor};

impl<T: Real> Graph<T> {
    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mean = v.data().iter().copied().sum::<T>() / T::lit(v.numel() as f64);
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(mean), Op::MeanAll(x), needs)
    }

    /// Mean cross-entropy of `[N×C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return shape_err("cross_entropy", &s, &[targets.len()]);
        }
        let classes = s[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: bad,
                classes,
            });
        }
        let mut probs = Vec::with_capacity(s[0] * classes);
        let mut total = T::zero();
        for (row, &t) in self.data(logits).chunks(classes).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&e| (e - max).exp()).sum();
            let log_z = max + sum.ln();
            total = total + (log_z - row[t]);
            probs.extend(row.iter().map(|&e| (e - log_z).exp()));
        }
        let value = Tensor::scalar(total / T::lit(s[0] as f64));
        let needs = self.needs(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Mean over rows of the row-wise L1 distance: `(1/N) Σ_n Σ_k |p − t|`.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let s = self.shape(pred).to_vec();
        if s.len() != 2 || target.numel() != s[0] * s[1] {
            return shape_err("l1_loss", &s, target.shape());
        }
        let sum: T = self
            .data(pred)
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t).abs())
            .sum();
        let value = Tensor::scalar(sum / T::lit(s[0] as f64));
        let needs = self.needs(&[pred]);
        Ok(self.push(
            value,
            Op::L1 {
                pred,
                target: target.data().to_vec(),
            },
            needs,
        ))
    }
}

pub(super) fn backward<T: Real>(graph: &Graph<T>, index: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let g0 = g[0];
    match &graph.nodes[index].op {
        Op::MeanAll(x) => {
            let scale = g0 / T::lit(graph.value(*x).numel() as f64);
            accumulate(grads, graph, *x, |d| {
                for v in d.iter_mut() {
                    *v = *v + scale;
                }
            });
        }
        Op::CrossEntropy { logits, targets, probs } => {
            let classes = graph.shape(*logits)[1];
            let scale = g0 / T::lit(targets.len() as f64);
            accumulate(grads, graph, *logits, |d| {
                for (r, (dr, pr)) in d.chunks_mut(classes).zip(probs.chunks(classes)).enumerate() {
                    for (c, (dv, &p)) in dr.iter_mut().zip(pr).enumerate() {
                        let onehot = if c == targets[r] { T::one() } else { T::zero() };
                        *dv = *dv + scale * (p - onehot);
                    }
                }
            });
        }
        Op::L1 { pred, target } => {
            let rows = graph.shape(*pred)[0];
            let scale = g0 / T::lit(rows as f64);
            let pv = graph.data(*pred);
            accumulate(grads, graph, *pred, |d| {
                for ((dv, &p), &t) in d.iter_mut().zip(pv).zip(target) {
                    let diff = p - t;
                    if diff > T::zero() {
                        *dv = *dv + scale;
                    } else if diff < T::zero() {
                        *dv = *dv - scale;
                    }
                }
            });
        }
        _ => unreachable!("not a loss op"),
    }
}
