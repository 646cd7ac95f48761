//! Small convolutional providers of auxiliary feature maps.

use cogfuse_tensor::nn::Linear;
use cogfuse_tensor::{Graph, Initializer, ParamId, ParamStore, Real, Tensor, Var};

use crate::config::FusionConfig;
use crate::encoder::ConvNorm;
use crate::error::{ModelError, Result};

/// Name prefix shared by every provider parameter.
pub const PROVIDER_PREFIX: &str = "provider.";

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ProviderKind {
    /// Traffic-light state features, trained on Stop/Proceed labels.
    TrafficLight,
    /// Per-pixel class probabilities, trained on semantic labels.
    Segmentation,
}

impl ProviderKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::TrafficLight => "tl",
            Self::Segmentation => "ss",
        }
    }
}

/// Maps a `[B×3×S×S]` image to `[B×C×S/2×S/2]` features.
#[derive(Clone, Debug)]
pub struct AuxProvider {
    pub kind: ProviderKind,
    conv1: ConvNorm,
    conv2: ConvNorm,
    /// Segmentation: per-pixel class logits. Traffic light: unused.
    classify: Option<ConvKernel>,
    /// Traffic-light pre-training head over pooled features.
    pub head: Option<Linear>,
    pub channels: usize,
}

#[derive(Clone, Debug)]
struct ConvKernel {
    kernel: ParamId,
    bias: ParamId,
}

const HIDDEN: usize = 16;
/// The traffic-light head sees features pooled to this grid.
const HEAD_GRID: usize = 4;

impl AuxProvider {
    /// Registers the provider; `with_head` adds the layers needed only for
    /// pre-training.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        kind: ProviderKind,
        cfg: &FusionConfig,
        with_head: bool,
    ) -> Result<Self> {
        let p = PROVIDER_PREFIX;
        let channels = match kind {
            ProviderKind::TrafficLight => cfg.tl_channels,
            ProviderKind::Segmentation => cfg.semantic_classes,
        };
        let conv1 = ConvNorm::new(store, init, &format!("{p}conv1"), 3, HIDDEN)?;
        let (conv2, classify, head) = match kind {
            ProviderKind::TrafficLight => {
                let conv2 = ConvNorm::new(store, init, &format!("{p}conv2"), HIDDEN, channels)?;
                let head = if with_head {
                    Some(Linear::new(store, init, "provider_head.tl", channels * HEAD_GRID * HEAD_GRID, 2)?)
                } else {
                    None
                };
                (conv2, None, head)
            }
            ProviderKind::Segmentation => {
                let conv2 = ConvNorm::new(store, init, &format!("{p}conv2"), HIDDEN, HIDDEN)?;
                let std = (2.0 / (HIDDEN * 9) as f64).sqrt();
                let classify = ConvKernel {
                    kernel: init.normal(store, &format!("{p}classify.kernel"), &[channels, HIDDEN, 3, 3], std)?,
                    bias: init.constant(store, &format!("{p}classify.bias"), &[channels], 0.0)?,
                };
                (conv2, Some(classify), None)
            }
        };
        Ok(Self {
            kind,
            conv1,
            conv2,
            classify,
            head,
            channels,
        })
    }

    /// Raw map before the output nonlinearity: ReLU features for traffic
    /// lights, class logits for segmentation.
    pub fn logits<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, image: Var) -> Result<Var> {
        let h = self.conv1.forward(g, store, image)?;
        let h = g.relu(h);
        let h = g.avg_pool2d(h, 2)?;
        let h = self.conv2.forward(g, store, h)?;
        match &self.classify {
            None => Ok(g.relu(h)),
            Some(c) => {
                let h = g.relu(h);
                let k = g.param(store, c.kernel);
                let y = g.conv2d(h, k, 1, 1)?;
                let ones = g.input(Tensor::full(&[self.channels], T::one()));
                let b = g.param(store, c.bias);
                Ok(g.channel_affine(y, ones, b)?)
            }
        }
    }

    /// Feature map handed to the fusion network.
    pub fn features<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, image: Var) -> Result<Var> {
        let y = self.logits(g, store, image)?;
        match self.kind {
            ProviderKind::TrafficLight => Ok(y),
            ProviderKind::Segmentation => {
                let p = g.permute(y, &[0, 2, 3, 1])?;
                let p = g.softmax(p);
                Ok(g.permute(p, &[0, 3, 1, 2])?)
            }
        }
    }

    /// Traffic-light pre-training logits `[B×2]` from features pooled to a
    /// coarse grid.
    pub fn tl_logits<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, features: Var) -> Result<Var> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| ModelError::Config("provider built without a pre-training head".into()))?;
        let s = g.shape(features).to_vec();
        let pooled = g.avg_pool2d(features, s[2] / HEAD_GRID)?;
        let pooled = g.reshape(pooled, &[s[0], s[1] * HEAD_GRID * HEAD_GRID])?;
        Ok(head.forward(g, store, pooled)?)
    }
}

/// Copies every provider parameter of `src` into `dst` by name.
pub fn install_provider<T: Real>(dst: &mut ParamStore<T>, src: &ParamStore<T>) -> Result<usize> {
    let mut copied = 0;
    for (_, p) in src.iter().filter(|(_, p)| p.name.starts_with(PROVIDER_PREFIX)) {
        let id = dst
            .id(&p.name)
            .ok_or_else(|| ModelError::Config(format!("network has no provider parameter `{}`", p.name)))?;
        let slot = dst.get_mut(id);
        if slot.tensor.shape() != p.tensor.shape() {
            return Err(ModelError::Config(format!(
                "provider parameter `{}` has shape {:?}, network expects {:?}",
                p.name,
                p.tensor.shape(),
                slot.tensor.shape()
            )));
        }
        slot.tensor = p.tensor.clone();
        copied += 1;
    }
    Ok(copied)
}
