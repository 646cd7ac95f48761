//! The full fusion network: two branches, four fusion blocks, waypoint
//! decoder and auxiliary heads.

use cogfuse_tensor::nn::{GruCell, Linear};
use cogfuse_tensor::{Graph, Initializer, ParamStore, Real, Tensor, Var};

use crate::aux::{AuxProvider, ProviderKind};
use crate::config::{AuxSource, FusionConfig, SsProvider};
use crate::data::{NetInput, SS_SIZE};
use crate::encoder::Encoder;
use crate::error::{ModelError, Result};
use crate::fusion::FusionBlock;

/// Positions and goals enter the decoder in units of this many meters.
pub const DECODER_UNIT: f64 = 10.0;
const TL_HIDDEN: usize = 64;
/// Side of the coarse segmentation map produced before upsampling.
const SS_COARSE: usize = 8;

#[derive(Clone, Debug)]
pub struct NetworkOutput {
    /// `[B×T×2]` cumulative waypoints in meters.
    pub waypoints: Var,
    /// `[B×T×2]` per-step displacements.
    pub deltas: Var,
    /// `[B×embedding]`
    pub fused: Var,
    tl_logits: Option<Var>,
    ss_logits: Option<Var>,
}

impl NetworkOutput {
    pub fn new(waypoints: Var, deltas: Var, fused: Var, tl_logits: Option<Var>, ss_logits: Option<Var>) -> Self {
        Self {
            waypoints,
            deltas,
            fused,
            tl_logits,
            ss_logits,
        }
    }

    /// `[B×2]` Stop/Proceed logits.
    pub fn tl_logits(&self) -> Result<Var> {
        self.tl_logits
            .ok_or_else(|| ModelError::Config("traffic-light head is disabled".into()))
    }

    /// `[B×classes×64×64]` segmentation logits.
    pub fn ss_logits(&self) -> Result<Var> {
        self.ss_logits
            .ok_or_else(|| ModelError::Config("segmentation head is disabled".into()))
    }

    pub fn has_tl(&self) -> bool {
        self.tl_logits.is_some()
    }

    pub fn has_ss(&self) -> bool {
        self.ss_logits.is_some()
    }
}

#[derive(Clone, Debug)]
pub struct FusionNetwork {
    pub config: FusionConfig,
    pub image_encoder: Encoder,
    pub lidar_encoder: Encoder,
    pub blocks: Vec<FusionBlock>,
    pub fuse: Linear,
    pub init_hidden: Linear,
    pub gru: GruCell,
    pub delta: Linear,
    pub tl_head: Option<(Linear, Linear)>,
    pub ss_head: Option<Linear>,
    pub provider: Option<AuxProvider>,
    /// When false the auxiliary path is skipped entirely, as if the network
    /// had no auxiliary source.
    pub aux_enabled: bool,
    /// Lets gradients reach the provider parameters.
    pub train_provider: bool,
}

impl FusionNetwork {
    pub fn new<T: Real>(cfg: &FusionConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let init = Initializer::new(seed);
        let image_encoder = Encoder::new(store, &init, "image", 3, cfg)?;
        let lidar_encoder = Encoder::new(store, &init, "lidar", 2, cfg)?;
        let blocks = (0..4)
            .map(|k| FusionBlock::new(store, &init, cfg, k))
            .collect::<Result<Vec<_>>>()?;
        let emb = cfg.embedding();
        let fuse = Linear::new(store, &init, "fuse", 2 * cfg.block_dims[3], emb)?;
        let init_hidden = Linear::new(store, &init, "decoder.init", emb, cfg.gru_hidden)?;
        let gru = GruCell::new(store, &init, "decoder.gru", 4, cfg.gru_hidden)?;
        let delta = Linear::new(store, &init, "decoder.delta", cfg.gru_hidden, 2)?;
        let tl_head = if cfg.head_tl {
            Some((
                Linear::new(store, &init, "head_tl.hidden", emb, TL_HIDDEN)?,
                Linear::new(store, &init, "head_tl.out", TL_HIDDEN, 2)?,
            ))
        } else {
            None
        };
        let ss_head = if cfg.head_ss {
            Some(Linear::new(
                store,
                &init,
                "head_ss",
                emb,
                SS_COARSE * SS_COARSE * cfg.semantic_classes,
            )?)
        } else {
            None
        };
        let provider = match (cfg.aux_source, cfg.ss_provider) {
            (AuxSource::TlFeatures, _) => Some(AuxProvider::new(store, &init, ProviderKind::TrafficLight, cfg, false)?),
            (AuxSource::SsFeatures, SsProvider::Learned) => {
                Some(AuxProvider::new(store, &init, ProviderKind::Segmentation, cfg, false)?)
            }
            _ => None,
        };
        Ok(Self {
            config: cfg.clone(),
            image_encoder,
            lidar_encoder,
            blocks,
            fuse,
            init_hidden,
            gru,
            delta,
            tl_head,
            ss_head,
            provider,
            aux_enabled: true,
            train_provider: false,
        })
    }

    /// Builds a network together with a fresh parameter store.
    pub fn build<T: Real>(cfg: &FusionConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let net = Self::new(cfg, &mut store, seed)?;
        Ok((net, store))
    }

    fn check_input<T: Real>(&self, input: &NetInput<T>) -> Result<()> {
        let b = input.batch();
        self.image_encoder.check_input(input.image.shape())?;
        self.lidar_encoder.check_input(input.lidar.shape())?;
        let dim = |name: &str, got: &[usize], want: &[usize]| {
            if got != want {
                Err(ModelError::Dimension(format!("{name} must be {want:?}, got {got:?}")))
            } else {
                Ok(())
            }
        };
        dim("LiDAR batch", &input.lidar.shape()[..1], &[b])?;
        dim("speed", input.speed.shape(), &[b, 1])?;
        dim("goal", input.goal.shape(), &[b, 2])?;
        if let Some(a) = &input.aux {
            let s = self.config.aux_input_size();
            dim("auxiliary map", a.shape(), &[b, self.config.semantic_classes, s, s])?;
        }
        Ok(())
    }

    /// The auxiliary feature map for this forward pass, if any.
    fn aux_map<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, input: &NetInput<T>, image: Var) -> Result<Option<Var>> {
        if !self.aux_enabled || self.config.aux_source == AuxSource::None {
            return Ok(None);
        }
        if let Some(p) = &self.provider {
            g.set_frozen(!self.train_provider);
            let f = p.features(g, store, image);
            g.set_frozen(false);
            return f.map(Some);
        }
        match &input.aux {
            Some(a) => Ok(Some(g.input(a.clone()))),
            None => Err(ModelError::Data("ground-truth semantic features are required by this network".into())),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, input: &NetInput<T>) -> Result<NetworkOutput> {
        self.check_input(input)?;
        let b = input.batch();
        let mut image = g.input(input.image.clone());
        let mut lidar = g.input(input.lidar.clone());
        let speed = g.input(input.speed.clone());
        let aux = self.aux_map(g, store, input, image)?;
        for (k, block) in self.blocks.iter().enumerate() {
            image = self.image_encoder.stage(g, store, k, image)?;
            lidar = self.lidar_encoder.stage(g, store, k, lidar)?;
            let a = aux.filter(|_| block.injects);
            (image, lidar) = block.forward(g, store, image, lidar, a, speed)?;
        }
        let mut pooled = Vec::with_capacity(2);
        for x in [image, lidar] {
            let s = g.shape(x).to_vec();
            let p = g.avg_pool2d(x, s[2])?;
            pooled.push(g.reshape(p, &[s[0], s[1]])?);
        }
        let joined = g.concat(&pooled, 1)?;
        let fused = self.fuse.forward(g, store, joined)?;

        let (waypoints, deltas) = self.decode(g, store, fused, &input.goal)?;

        let tl_logits = match &self.tl_head {
            Some((hidden, out)) => {
                let h = hidden.forward(g, store, fused)?;
                let h = g.relu(h);
                Some(out.forward(g, store, h)?)
            }
            None => None,
        };
        let ss_logits = match &self.ss_head {
            Some(head) => {
                let y = head.forward(g, store, fused)?;
                let y = g.reshape(y, &[b, self.config.semantic_classes, SS_COARSE, SS_COARSE])?;
                Some(g.upsample_bilinear(y, SS_SIZE, SS_SIZE)?)
            }
            None => None,
        };
        Ok(NetworkOutput {
            waypoints,
            deltas,
            fused,
            tl_logits,
            ss_logits,
        })
    }

    /// Autoregressive GRU roll-out from the origin. Returns cumulative
    /// waypoints and per-step deltas, both `[B×T×2]`.
    pub fn decode<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, fused: Var, goal: &Tensor<T>) -> Result<(Var, Var)> {
        let b = g.shape(fused)[0];
        let unit = T::lit(1.0 / DECODER_UNIT);
        let goal = g.input(goal.clone());
        let goal = g.scale(goal, unit);
        let mut h = self.init_hidden.forward(g, store, fused)?;
        let mut pos = g.input(Tensor::zeros(&[b, 2]));
        let mut points = Vec::with_capacity(self.config.waypoints);
        let mut deltas = Vec::with_capacity(self.config.waypoints);
        for _ in 0..self.config.waypoints {
            let p = g.scale(pos, unit);
            let x = g.concat(&[p, goal], 1)?;
            h = self.gru.forward(g, store, x, h)?;
            let d = self.delta.forward(g, store, h)?;
            pos = g.add(pos, d)?;
            deltas.push(g.reshape(d, &[b, 1, 2])?);
            points.push(g.reshape(pos, &[b, 1, 2])?);
        }
        Ok((g.concat(&points, 1)?, g.concat(&deltas, 1)?))
    }

    /// Forward pass returning plain waypoint values `[B][T]`.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, input: &NetInput<T>) -> Result<Vec<Vec<[f64; 2]>>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, input)?;
        let t = self.config.waypoints;
        Ok(g
            .data(out.waypoints)
            .chunks(2 * t)
            .map(|row| row.chunks(2).map(|p| [p[0].as_f64(), p[1].as_f64()]).collect())
            .collect())
    }

    /// Parameters of the auxiliary projection feeding block `k`.
    pub fn aux_projection(&self, k: usize) -> Option<&Linear> {
        self.blocks.get(k).and_then(|b| b.aux_projection.as_ref())
    }
}
