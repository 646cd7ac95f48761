use crate::error::{shape_err, Result};
use crate::graph::{accumulate, Graph, Op, Var};
use crate::tensor::{Real, Tensor};

impl<T: Real> Graph<T> {
    fn zip_values(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return shape_err(op, va.shape(), vb.shape());
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    fn map_value(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let v = self.value(x);
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect())
            .expect("same extent")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_values("add", a, b, |x, y| x + y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_values("sub", a, b, |x, y| x - y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), needs))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_values("mul", a, b, |x, y| x * y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    /// `mul * x + add` with constant coefficients.
    pub fn affine(&mut self, x: Var, mul: T, add: T) -> Var {
        let value = self.map_value(x, |e| mul * e + add);
        let needs = self.needs(&[x]);
        self.push(value, Op::Affine { x, mul }, needs)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.affine(x, factor, T::zero())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.map_value(x, |e| if e > T::zero() { e } else { T::zero() });
        let needs = self.needs(&[x]);
        self.push(value, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.map_value(x, |e| T::one() / (T::one() + (-e).exp()));
        let needs = self.needs(&[x]);
        self.push(value, Op::Sigmoid(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.map_value(x, |e| e.tanh());
        let needs = self.needs(&[x]);
        self.push(value, Op::Tanh(x), needs)
    }
}

pub(super) fn backward<T: Real>(graph: &Graph<T>, index: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = graph.nodes[index].value.data();
    match &graph.nodes[index].op {
        Op::Add(a, b) => {
            accumulate(grads, graph, *a, |d| add_into(d, g));
            accumulate(grads, graph, *b, |d| add_into(d, g));
        }
        Op::Sub(a, b) => {
            accumulate(grads, graph, *a, |d| add_into(d, g));
            accumulate(grads, graph, *b, |d| {
                for (d, &g) in d.iter_mut().zip(g) {
                    *d = *d - g;
                }
            });
        }
        Op::Mul(a, b) => {
            let (va, vb) = (graph.data(*a), graph.data(*b));
            accumulate(grads, graph, *a, |d| {
                for ((d, &g), &y) in d.iter_mut().zip(g).zip(vb) {
                    *d = *d + g * y;
                }
            });
            accumulate(grads, graph, *b, |d| {
                for ((d, &g), &x) in d.iter_mut().zip(g).zip(va) {
                    *d = *d + g * x;
                }
            });
        }
        Op::Affine { x, mul } => accumulate(grads, graph, *x, |d| {
            for (d, &g) in d.iter_mut().zip(g) {
                *d = *d + *mul * g;
            }
        }),
        Op::Relu(x) => {
            let vx = graph.data(*x);
            accumulate(grads, graph, *x, |d| {
                for ((d, &g), &e) in d.iter_mut().zip(g).zip(vx) {
                    if e > T::zero() {
                        *d = *d + g;
                    }
                }
            })
        }
        Op::Sigmoid(x) => accumulate(grads, graph, *x, |d| {
            for ((d, &g), &y) in d.iter_mut().zip(g).zip(out) {
                *d = *d + g * y * (T::one() - y);
            }
        }),
        Op::Tanh(x) => accumulate(grads, graph, *x, |d| {
            for ((d, &g), &y) in d.iter_mut().zip(g).zip(out) {
                *d = *d + g * (T::one() - y * y);
            }
        }),
        _ => unreachable!("not an elementwise op"),
    }
}

pub(crate) fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
