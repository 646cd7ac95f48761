//! Multi-task imitation training and auxiliary-provider pre-training.

use cogfuse_tensor::{Adam, AdamConfig, GradBuffer, Graph, Initializer, ParamStore, Real, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aux::{AuxProvider, ProviderKind};
use crate::config::FusionConfig;
use crate::data::{Batch, NetInput, Sample};
use crate::error::{config, ModelError, Result};
use crate::network::{FusionNetwork, NetworkOutput};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_wp: f64,
    pub lambda_tl: f64,
    pub lambda_ss: f64,
    pub seed: u64,
    /// Steps between checkpoint callbacks; 0 disables them.
    pub checkpoint_every: usize,
    /// Also update the auxiliary provider during main training.
    pub joint_provider: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 10,
            epochs: 10,
            lambda_wp: 1.0,
            lambda_tl: 1.0,
            lambda_ss: 0.3,
            seed: 0,
            checkpoint_every: 0,
            joint_provider: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return config("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config(format!("learning rate must be positive, got {}", self.lr));
        }
        for (name, v) in [("lambda_wp", self.lambda_wp), ("lambda_tl", self.lambda_tl), ("lambda_ss", self.lambda_ss)] {
            if !(v >= 0.0 && v.is_finite()) {
                return config(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Loss terms of one step. `total = λ_wp·wp + λ_tl·tl + λ_ss·ss`; terms of
/// disabled heads are zero.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct TrainLoss {
    pub total: f64,
    pub wp: f64,
    pub tl: f64,
    pub ss: f64,
}

/// Supervision for one batch.
#[derive(Clone, Debug)]
pub struct Labels<T> {
    /// `[B·T×2]`
    pub waypoints: Tensor<T>,
    pub tl: Option<Vec<usize>>,
    /// `B·64·64` class ids.
    pub ss: Option<Vec<usize>>,
}

impl Labels<f32> {
    pub fn from_batch(batch: &Batch) -> Self {
        Self {
            waypoints: batch.waypoints.clone(),
            tl: Some(batch.tl.clone()),
            ss: Some(batch.ss.clone()),
        }
    }
}

fn per_pixel_logits<T: Real>(g: &mut Graph<T>, logits: Var) -> Result<Var> {
    let s = g.shape(logits).to_vec();
    let p = g.permute(logits, &[0, 2, 3, 1])?;
    Ok(g.reshape(p, &[s[0] * s[2] * s[3], s[1]])?)
}

/// Builds the weighted objective on `g`. Terms with a zero coefficient are
/// reported but left out of the returned node.
pub fn compute_loss<T: Real>(
    g: &mut Graph<T>,
    out: &NetworkOutput,
    labels: &Labels<T>,
    cfg: &TrainConfig,
) -> Result<(Var, TrainLoss)> {
    let s = g.shape(out.waypoints).to_vec();
    let pred = g.reshape(out.waypoints, &[s[0] * s[1], s[2]])?;
    let wp = g.l1_loss(pred, &labels.waypoints)?;
    let mut total = g.scale(wp, T::lit(cfg.lambda_wp));
    let mut loss = TrainLoss {
        wp: g.data(wp)[0].as_f64(),
        ..TrainLoss::default()
    };
    if out.has_tl() {
        let targets = labels
            .tl
            .as_ref()
            .ok_or_else(|| ModelError::Data("traffic-light head enabled but batch has no traffic-light labels".into()))?;
        let logits = out.tl_logits()?;
        let tl = g.cross_entropy(logits, targets)?;
        loss.tl = g.data(tl)[0].as_f64();
        if cfg.lambda_tl > 0.0 {
            let w = g.scale(tl, T::lit(cfg.lambda_tl));
            total = g.add(total, w)?;
        }
    }
    if out.has_ss() {
        let targets = labels
            .ss
            .as_ref()
            .ok_or_else(|| ModelError::Data("segmentation head enabled but batch has no semantic labels".into()))?;
        let logits = per_pixel_logits(g, out.ss_logits()?)?;
        let ss = g.cross_entropy(logits, targets)?;
        loss.ss = g.data(ss)[0].as_f64();
        if cfg.lambda_ss > 0.0 {
            let w = g.scale(ss, T::lit(cfg.lambda_ss));
            total = g.add(total, w)?;
        }
    }
    loss.total = g.data(total)[0].as_f64();
    Ok((total, loss))
}

fn check_finite(loss: &TrainLoss, step: u64) -> Result<()> {
    for (term, v) in [("waypoint", loss.wp), ("traffic-light", loss.tl), ("segmentation", loss.ss), ("total", loss.total)] {
        if !v.is_finite() {
            return Err(ModelError::NonFinite { term, step });
        }
    }
    Ok(())
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: TrainLoss,
}

/// Loss history as CSV with a header row.
pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,total,wp,tl,ss\n");
    for r in history {
        let l = &r.loss;
        s.push_str(&format!("{},{},{},{},{}\n", r.step, l.total, l.wp, l.tl, l.ss));
    }
    s
}

/// Indices of `n` items in seeded epoch order, split into batches.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Owns a network, its parameters and the optimizer state.
pub struct Trainer {
    pub net: FusionNetwork,
    pub store: ParamStore<f32>,
    pub config: TrainConfig,
    pub history: Vec<LossRecord>,
    adam: Adam<f32>,
}

impl Trainer {
    pub fn new(mut net: FusionNetwork, store: ParamStore<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        net.train_provider = config.joint_provider;
        let adam = Adam::new(&store, config.adam());
        Ok(Self {
            net,
            store,
            config,
            history: Vec::new(),
            adam,
        })
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// Loss and parameter gradients on a batch, without updating.
    pub fn gradients(&self, batch: &Batch) -> Result<(TrainLoss, GradBuffer<f32>)> {
        let mut g = Graph::new();
        let out = self.net.forward(&mut g, &self.store, &batch.input)?;
        let (total, loss) = compute_loss(&mut g, &out, &Labels::from_batch(batch), &self.config)?;
        check_finite(&loss, self.steps() + 1)?;
        let grads = g.backward(total)?;
        let mut buf = GradBuffer::zeros_like(&self.store);
        grads.accumulate(&mut buf);
        if buf.has_non_finite() {
            return Err(ModelError::NonFinite {
                term: "gradient",
                step: self.steps() + 1,
            });
        }
        Ok((loss, buf))
    }

    /// Loss on a batch without gradients.
    pub fn loss(&self, batch: &Batch) -> Result<TrainLoss> {
        let mut g = Graph::new();
        let out = self.net.forward(&mut g, &self.store, &batch.input)?;
        Ok(compute_loss(&mut g, &out, &Labels::from_batch(batch), &self.config)?.1)
    }

    /// One forward, backward and Adam update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<TrainLoss> {
        let (loss, grads) = self.gradients(batch)?;
        self.adam.step(&mut self.store, &grads);
        self.history.push(LossRecord {
            step: self.steps(),
            loss,
        });
        Ok(loss)
    }

    /// Runs `config.epochs` passes over `samples` in seeded shuffled order.
    /// `on_checkpoint` is called every `checkpoint_every` steps.
    pub fn fit(&mut self, samples: &[Sample], mut on_checkpoint: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        if samples.is_empty() {
            return Err(ModelError::Data("cannot train on an empty dataset".into()));
        }
        for s in samples {
            s.check_schema(&self.net.config)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        for _ in 0..self.config.epochs {
            for idx in epoch_batches(samples.len(), self.config.batch_size, &mut rng) {
                let items: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
                let batch = Batch::new(&items, &self.net.config)?;
                self.train_step(&batch)?;
                let every = self.config.checkpoint_every as u64;
                if every > 0 && self.steps() % every == 0 {
                    on_checkpoint(self)?;
                }
            }
        }
        Ok(())
    }

    /// Fraction of samples whose traffic-light head prediction is correct.
    pub fn tl_accuracy(&self, samples: &[Sample]) -> Result<f64> {
        let mut correct = 0;
        for chunk in samples.chunks(self.config.batch_size) {
            let items: Vec<&Sample> = chunk.iter().collect();
            let batch = Batch::new(&items, &self.net.config)?;
            let mut g = Graph::new();
            let out = self.net.forward(&mut g, &self.store, &batch.input)?;
            let logits = g.data(out.tl_logits()?);
            correct += logits
                .chunks(2)
                .zip(&batch.tl)
                .filter(|(l, &t)| usize::from(l[1] > l[0]) == t)
                .count();
        }
        Ok(correct as f64 / samples.len() as f64)
    }
}

/// A pre-trained auxiliary provider and its parameters, including the
/// pre-training head.
pub struct PretrainedProvider {
    pub provider: AuxProvider,
    pub store: ParamStore<f32>,
    pub history: Vec<LossRecord>,
}

fn provider_loss(
    g: &mut Graph<f32>,
    provider: &AuxProvider,
    store: &ParamStore<f32>,
    samples: &[&Sample],
    cfg: &FusionConfig,
) -> Result<(Var, Var, Vec<usize>)> {
    let features: Vec<_> = samples.iter().map(|s| &s.features).collect();
    let input = NetInput::<f32>::from_features(&features, cfg)?;
    let image = g.input(input.image);
    match provider.kind {
        ProviderKind::TrafficLight => {
            let f = provider.features(g, store, image)?;
            let logits = provider.tl_logits(g, store, f)?;
            let targets: Vec<usize> = samples.iter().map(|s| s.tl_state as usize).collect();
            Ok((g.cross_entropy(logits, &targets)?, logits, targets))
        }
        ProviderKind::Segmentation => {
            let y = provider.logits(g, store, image)?;
            let logits = per_pixel_logits(g, y)?;
            let targets: Vec<usize> = samples
                .iter()
                .flat_map(|s| s.features.semantics.iter().map(|&c| c as usize))
                .collect();
            Ok((g.cross_entropy(logits, &targets)?, logits, targets))
        }
    }
}

/// Trains a provider with its classification or segmentation head.
pub fn pretrain_aux(samples: &[Sample], kind: ProviderKind, cfg: &FusionConfig, train: &TrainConfig) -> Result<PretrainedProvider> {
    train.validate()?;
    if samples.is_empty() {
        return Err(ModelError::Data("cannot pre-train on an empty dataset".into()));
    }
    for s in samples {
        s.check_schema(cfg)?;
    }
    let mut store = ParamStore::new();
    let provider = AuxProvider::new(&mut store, &Initializer::new(train.seed), kind, cfg, true)?;
    let mut adam = Adam::new(&store, train.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut history = Vec::new();
    for _ in 0..train.epochs {
        for idx in epoch_batches(samples.len(), train.batch_size, &mut rng) {
            let items: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let mut g = Graph::new();
            let (loss, _, _) = provider_loss(&mut g, &provider, &store, &items, cfg)?;
            let value = g.data(loss)[0] as f64;
            let step = adam.steps() + 1;
            if !value.is_finite() {
                return Err(ModelError::NonFinite { term: kind.name(), step });
            }
            let grads = g.backward(loss)?;
            let mut buf = GradBuffer::zeros_like(&store);
            grads.accumulate(&mut buf);
            adam.step(&mut store, &buf);
            history.push(LossRecord {
                step,
                loss: TrainLoss {
                    total: value,
                    ..TrainLoss::default()
                },
            });
        }
    }
    Ok(PretrainedProvider { provider, store, history })
}

impl PretrainedProvider {
    /// Classification accuracy: per frame for traffic lights, per pixel for
    /// segmentation.
    pub fn accuracy(&self, samples: &[Sample], cfg: &FusionConfig) -> Result<f64> {
        let (mut correct, mut total) = (0usize, 0usize);
        for chunk in samples.chunks(10) {
            let items: Vec<&Sample> = chunk.iter().collect();
            let mut g = Graph::new();
            let (_, logits, targets) = provider_loss(&mut g, &self.provider, &self.store, &items, cfg)?;
            let classes = g.shape(logits)[1];
            for (row, &t) in g.data(logits).chunks(classes).zip(&targets) {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
                correct += usize::from(best == t);
                total += 1;
            }
        }
        Ok(correct as f64 / total as f64)
    }
}
