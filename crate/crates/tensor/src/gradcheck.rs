//! Central finite-difference checking at 64-bit, with a catalog covering
//! every differentiable op and module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{GruCell, MultiHeadAttention, TransformerBlock};
use crate::{Graph, Initializer, ParamStore, Tensor, Var};

pub const STEP: f64 = 1e-5;
/// Per-op bound on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so that gradients which are zero up to round-off do not
/// turn into huge relative errors.
pub const FLOOR: f64 = 1e-6;

pub type Build = fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Var;
pub type Make = fn(&mut ChaCha8Rng) -> (ParamStore<f64>, Vec<Tensor<f64>>);

/// One named check: random inputs and parameters, and the function of them
/// whose gradients are verified.
pub struct OpCheck {
    pub name: &'static str,
    pub make: Make,
    pub build: Build,
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_f64(shape.to_vec(), &v).expect("shape matches data")
}

/// Scalar objective `Σ r⊙y` with fixed random `r`.
fn objective(store: &ParamStore<f64>, inputs: &[Tensor<f64>], weights: &[f64], build: Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let y = build(&mut g, store, &vars);
    g.data(y).iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// Maximum relative error between analytic and central-difference
/// gradients over every input and parameter coordinate.
pub fn max_rel_error(store: &ParamStore<f64>, inputs: &[Tensor<f64>], seed: u64, build: Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let y = build(&mut g, store, &vars);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let n = g.value(y).numel();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = g.input(Tensor::from_f64(g.shape(y).to_vec(), &weights).expect("shape matches data"));
    let prod = g.mul(y, r).expect("same shape");
    let mean = g.mean_all(prod);
    let loss = g.scale(mean, n as f64);
    let grads = g.backward(loss).expect("scalar loss");

    let rel = |a: f64, num: f64| (a - num).abs() / a.abs().max(num.abs()).max(FLOOR);
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[k].numel()];
        let analytic = grads.wrt(*v).unwrap_or(&zeros);
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let num = (objective(store, &plus, &weights, build) - objective(store, &minus, &weights, build)) / (2.0 * STEP);
            worst = worst.max(rel(analytic[i], num));
        }
    }
    for (id, p) in store.iter() {
        let zeros = vec![0.0; p.tensor.numel()];
        let analytic = grads.param(id).unwrap_or(&zeros);
        for i in 0..p.tensor.numel() {
            let mut plus = store.clone();
            plus.get_mut(id).tensor.data_mut()[i] += STEP;
            let mut minus = store.clone();
            minus.get_mut(id).tensor.data_mut()[i] -= STEP;
            let num = (objective(&plus, inputs, &weights, build) - objective(&minus, inputs, &weights, build)) / (2.0 * STEP);
            worst = worst.max(rel(analytic[i], num));
        }
    }
    worst
}

impl OpCheck {
    /// Maximum relative error for each seed in `0..seeds`.
    pub fn sweep(&self, seeds: u64) -> Vec<f64> {
        (0..seeds)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (store, inputs) = (self.make)(&mut rng);
                max_rel_error(&store, &inputs, seed, self.build)
            })
            .collect()
    }
}

fn no_params() -> ParamStore<f64> {
    ParamStore::new()
}

/// Module handles are parameter ids assigned in registration order, so an
/// identically-shaped shadow registration yields ids valid for the store
/// being checked.
fn shadow<M>(register: impl FnOnce(&mut ParamStore<f64>) -> crate::Result<M>) -> M {
    register(&mut ParamStore::new()).expect("valid module shape")
}

pub fn op_checks() -> Vec<OpCheck> {
    vec![
        OpCheck {
            name: "linear",
            make: |rng| (no_params(), vec![random(rng, &[4, 8], 1.0), random(rng, &[8, 3], 1.0), random(rng, &[3], 1.0)]),
            build: |g, _, v| g.linear(v[0], v[1], Some(v[2])).unwrap(),
        },
        OpCheck {
            name: "conv2d",
            make: |rng| (no_params(), vec![random(rng, &[2, 3, 8, 8], 1.0), random(rng, &[4, 3, 3, 3], 0.5)]),
            build: |g, _, v| g.conv2d(v[0], v[1], 1, 1).unwrap(),
        },
        OpCheck {
            name: "conv2d stride 2",
            make: |rng| (no_params(), vec![random(rng, &[1, 2, 7, 7], 1.0), random(rng, &[3, 2, 3, 3], 0.5)]),
            build: |g, _, v| g.conv2d(v[0], v[1], 2, 1).unwrap(),
        },
        OpCheck {
            name: "batch_matmul",
            make: |rng| (no_params(), vec![random(rng, &[2, 3, 4], 1.0), random(rng, &[2, 4, 5], 1.0)]),
            build: |g, _, v| g.batch_matmul(v[0], v[1]).unwrap(),
        },
        OpCheck {
            name: "permute/expand/concat/slice",
            make: |rng| (no_params(), vec![random(rng, &[2, 3, 4], 1.0), random(rng, &[1, 3, 1], 1.0)]),
            build: |g, _, v| {
                let p = g.permute(v[0], &[2, 0, 1]).unwrap();
                let e = g.expand(v[1], &[2, 3, 4]).unwrap();
                let ep = g.permute(e, &[2, 0, 1]).unwrap();
                let c = g.concat(&[p, ep], 1).unwrap();
                let s = g.slice(c, 1, 1, 2).unwrap();
                let r = g.reshape(s, &[4, 6]).unwrap();
                g.mul(r, r).unwrap()
            },
        },
        OpCheck {
            name: "relu/sigmoid/tanh/affine",
            make: |rng| (no_params(), vec![random(rng, &[5, 6], 2.0), random(rng, &[5, 6], 2.0)]),
            build: |g, _, v| {
                let a = g.relu(v[0]);
                let b = g.sigmoid(v[1]);
                let c = g.tanh(v[0]);
                let d = g.affine(c, -1.5, 0.25);
                let ab = g.mul(a, b).unwrap();
                let s = g.sub(ab, d).unwrap();
                g.add(s, b).unwrap()
            },
        },
        OpCheck {
            name: "softmax",
            make: |rng| (no_params(), vec![random(rng, &[3, 7], 3.0)]),
            build: |g, _, v| g.softmax(v[0]),
        },
        OpCheck {
            name: "layer_norm",
            make: |rng| (no_params(), vec![random(rng, &[4, 6], 2.0), random(rng, &[6], 1.0), random(rng, &[6], 1.0)]),
            build: |g, _, v| g.layer_norm(v[0], Some((v[1], v[2]))).unwrap(),
        },
        OpCheck {
            name: "layer_norm no affine",
            make: |rng| (no_params(), vec![random(rng, &[2, 12], 2.0)]),
            build: |g, _, v| g.layer_norm(v[0], None).unwrap(),
        },
        OpCheck {
            name: "avg_pool2d",
            make: |rng| (no_params(), vec![random(rng, &[2, 2, 4, 6], 1.0)]),
            build: |g, _, v| g.avg_pool2d(v[0], 2).unwrap(),
        },
        OpCheck {
            name: "upsample_bilinear",
            make: |rng| (no_params(), vec![random(rng, &[1, 2, 3, 2], 1.0)]),
            build: |g, _, v| g.upsample_bilinear(v[0], 7, 5).unwrap(),
        },
        OpCheck {
            name: "channel_affine",
            make: |rng| (no_params(), vec![random(rng, &[2, 3, 2, 2], 1.0), random(rng, &[3], 1.0), random(rng, &[3], 1.0)]),
            build: |g, _, v| g.channel_affine(v[0], v[1], v[2]).unwrap(),
        },
        OpCheck {
            name: "cross_entropy",
            make: |rng| (no_params(), vec![random(rng, &[5, 4], 2.0)]),
            build: |g, _, v| g.cross_entropy(v[0], &[0, 3, 1, 1, 2]).unwrap(),
        },
        OpCheck {
            name: "l1_loss",
            make: |rng| (no_params(), vec![random(rng, &[4, 2], 1.0)]),
            build: |g, _, v| {
                let t = Tensor::from_f64(vec![4, 2], &[0.31, -0.72, 0.05, 0.9, -0.44, 0.18, -0.97, 0.63]).unwrap();
                g.l1_loss(v[0], &t).unwrap()
            },
        },
        OpCheck {
            name: "multihead_attention",
            make: |rng| {
                let mut store = ParamStore::new();
                MultiHeadAttention::new(&mut store, &Initializer::new(rng.random()), "attn", 8, 2).unwrap();
                (store, vec![random(rng, &[1, 3, 8], 1.0), random(rng, &[1, 3, 8], 1.0)])
            },
            build: |g, store, v| {
                let attn = shadow(|s| MultiHeadAttention::new(s, &Initializer::new(0), "attn", 8, 2));
                attn.forward(g, store, v[0], v[1]).unwrap().output
            },
        },
        OpCheck {
            name: "transformer_block",
            make: |rng| {
                let mut store = ParamStore::new();
                TransformerBlock::new(&mut store, &Initializer::new(rng.random()), "blk", 8, 2, 2).unwrap();
                (store, vec![random(rng, &[1, 3, 8], 1.0)])
            },
            build: |g, store, v| {
                let blk = shadow(|s| TransformerBlock::new(s, &Initializer::new(0), "blk", 8, 2, 2));
                blk.forward(g, store, v[0]).unwrap()
            },
        },
        OpCheck {
            name: "gru_cell",
            make: |rng| {
                let mut store = ParamStore::new();
                GruCell::new(&mut store, &Initializer::new(rng.random()), "gru", 4, 8).unwrap();
                (store, vec![random(rng, &[2, 4], 1.0), random(rng, &[2, 8], 1.0)])
            },
            build: |g, store, v| {
                let cell = shadow(|s| GruCell::new(s, &Initializer::new(0), "gru", 4, 8));
                cell.forward(g, store, v[0], v[1]).unwrap()
            },
        },
    ]
}
