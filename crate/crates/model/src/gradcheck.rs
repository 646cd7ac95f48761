//! Finite-difference check of the whole network and multi-task loss at
//! 64-bit, on randomly sampled parameter coordinates.

use cogfuse_tensor::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{AuxSource, AuxStage, FusionConfig};
use crate::data::{NetInput, SS_SIZE};
use crate::error::Result;
use crate::network::FusionNetwork;
use crate::trainer::{compute_loss, Labels, TrainConfig};

pub const STEP: f64 = 1e-6;
/// End-to-end bound on the maximum relative error.
pub const TOLERANCE: f64 = 1e-3;
pub const FLOOR: f64 = 1e-5;

/// Tiny configuration with every auxiliary path active: segmentation
/// features at all blocks and both heads.
pub fn check_config() -> FusionConfig {
    FusionConfig {
        aux_source: AuxSource::SsFeatures,
        aux_stage: AuxStage::All,
        head_tl: true,
        head_ss: true,
        ..FusionConfig::tiny()
    }
}

fn case(cfg: &FusionConfig, seed: u64) -> (NetInput<f64>, Labels<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |shape: Vec<usize>, lo: f64, hi: f64| {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::from_f64(shape, &v).expect("shape matches data")
    };
    let (b, s, a, c) = (2, cfg.input_size, cfg.aux_input_size(), cfg.semantic_classes);
    let input = NetInput {
        image: fill(vec![b, 3, s, s], 0.0, 1.0),
        lidar: fill(vec![b, 2, s, s], 0.0, 1.0),
        speed: fill(vec![b, 1], 0.0, 6.0),
        goal: fill(vec![b, 2], -20.0, 20.0),
        aux: Some(fill(vec![b, c, a, a], 0.0, 1.0)),
    };
    let waypoints = fill(vec![b * cfg.waypoints, 2], -3.0, 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let labels = Labels {
        waypoints,
        tl: Some((0..b).map(|_| rng.random_range(0..2)).collect()),
        ss: Some((0..b * SS_SIZE * SS_SIZE).map(|_| rng.random_range(0..c)).collect()),
    };
    (input, labels)
}

fn loss(net: &FusionNetwork, store: &ParamStore<f64>, input: &NetInput<f64>, labels: &Labels<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let out = net.forward(&mut g, store, input)?;
    Ok(compute_loss(&mut g, &out, labels, &TrainConfig::default())?.1.total)
}

/// Worst relative error over `coords` sampled parameter coordinates of a
/// network initialized and fed from `seed`.
pub fn network_error(seed: u64, coords: usize) -> Result<f64> {
    let cfg = check_config();
    let (net, store) = FusionNetwork::build::<f64>(&cfg, seed)?;
    let (input, labels) = case(&cfg, seed);
    let mut g = Graph::new();
    let out = net.forward(&mut g, &store, &input)?;
    let (total, _) = compute_loss(&mut g, &out, &labels, &TrainConfig::default())?;
    let grads = g.backward(total)?;

    let ids: Vec<_> = store.ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let id = ids[rng.random_range(0..ids.len())];
        let i = rng.random_range(0..store.get(id).tensor.numel());
        let analytic = grads.param(id).map_or(0.0, |d| d[i]);
        let mut plus = store.clone();
        plus.get_mut(id).tensor.data_mut()[i] += STEP;
        let mut minus = store.clone();
        minus.get_mut(id).tensor.data_mut()[i] -= STEP;
        let numeric = (loss(&net, &plus, &input, &labels)? - loss(&net, &minus, &input, &labels)?) / (2.0 * STEP);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR));
    }
    Ok(worst)
}
