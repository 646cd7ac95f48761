use crate::error::{config_err, shape_err, Result};
use crate::graph::{accumulate, Graph, Op, Var};
use crate::tensor::{strides, Real, Tensor};

use super::elementwise::add_into;

/// For every flat output position, the flat input position it reads from,
/// given per-output-dimension input strides.
fn gather_map(out_shape: &[usize], in_strides: &[usize]) -> Vec<usize> {
    let numel: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..numel {
        map.push(offset);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            offset += in_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= in_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

fn permute_map(in_shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let s = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
    let map = gather_map(&out_shape, &out_strides);
    (out_shape, map)
}

fn expand_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let s = strides(in_shape);
    let eff: Vec<usize> = in_shape
        .iter()
        .zip(&s)
        .map(|(&d, &st)| if d == 1 { 0 } else { st })
        .collect();
    gather_map(out_shape, &eff)
}

/// (outer, axis extent, inner) decomposition around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let in_shape = self.shape(x).to_vec();
        let mut seen = vec![false; in_shape.len()];
        if perm.len() != in_shape.len() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return shape_err("permute", &in_shape, perm);
        }
        let (out_shape, map) = permute_map(&in_shape, perm);
        let src = self.data(x);
        let data = map.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(out_shape, data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            needs,
        ))
    }

    /// Broadcasts extent-1 axes of `x` up to `shape` (same rank).
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let in_shape = self.shape(x).to_vec();
        if in_shape.len() != shape.len()
            || in_shape.iter().zip(shape).any(|(&a, &b)| a != b && a != 1)
        {
            return shape_err("expand", &in_shape, shape);
        }
        let map = expand_map(&in_shape, shape);
        let src = self.data(x);
        let data = map.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::Expand(x), needs))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return config_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return config_err("concat", format!("axis {axis} out of range for rank {}", base.len()));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return shape_err("concat", &base, s);
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let chunk = self.shape(x)[axis] * inner;
                data.extend_from_slice(&self.data(x)[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(out_shape, data)?;
        let needs = self.needs(xs);
        Ok(self.push(
            value,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return config_err(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            );
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let src = self.data(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::Slice { x, axis, start }, needs))
    }
}

pub(super) fn backward<T: Real>(graph: &Graph<T>, index: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out_shape = graph.nodes[index].value.shape();
    match &graph.nodes[index].op {
        Op::Reshape(x) => accumulate(grads, graph, *x, |d| add_into(d, g)),
        Op::Permute { x, perm } => {
            let (_, map) = permute_map(graph.shape(*x), perm);
            accumulate(grads, graph, *x, |d| {
                for (o, &i) in map.iter().enumerate() {
                    d[i] = d[i] + g[o];
                }
            });
        }
        Op::Expand(x) => {
            let map = expand_map(graph.shape(*x), out_shape);
            accumulate(grads, graph, *x, |d| {
                for (o, &i) in map.iter().enumerate() {
                    d[i] = d[i] + g[o];
                }
            });
        }
        Op::Concat { xs, axis } => {
            let (outer, total, inner) = split_axis(out_shape, *axis);
            let mut offset = 0;
            for &x in xs {
                let extent = graph.shape(x)[*axis];
                accumulate(grads, graph, x, |d| {
                    let chunk = extent * inner;
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        add_into(&mut d[o * chunk..(o + 1) * chunk], &g[src..src + chunk]);
                    }
                });
                offset += extent;
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, extent, inner) = split_axis(graph.shape(*x), *axis);
            let len = out_shape[*axis];
            accumulate(grads, graph, *x, |d| {
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let src = o * len * inner;
                    add_into(&mut d[dst..dst + len * inner], &g[src..src + len * inner]);
                }
            });
        }
        _ => unreachable!("not a shape op"),
    }
}
