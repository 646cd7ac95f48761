//! Transformer fusion of the two branches, with optional auxiliary tokens.

use cogfuse_tensor::nn::{Linear, TransformerBlock};
use cogfuse_tensor::{Graph, Initializer, ParamId, ParamStore, Real, Var};

use crate::config::FusionConfig;
use crate::error::{config, Result};

/// Pools a `[B×C×H×W]` map to `grid×grid` and lays it out as `[B×grid²×C]`.
pub(crate) fn to_tokens<T: Real>(g: &mut Graph<T>, x: Var, grid: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let p = g.avg_pool2d(x, s[2] / grid)?;
    let r = g.reshape(p, &[s[0], s[1], grid * grid])?;
    Ok(g.permute(r, &[0, 2, 1])?)
}

/// Inverse layout of [`to_tokens`], resized to `size×size`.
fn from_tokens<T: Real>(g: &mut Graph<T>, t: Var, grid: usize, size: usize) -> Result<Var> {
    let s = g.shape(t).to_vec();
    let p = g.permute(t, &[0, 2, 1])?;
    let r = g.reshape(p, &[s[0], s[2], grid, grid])?;
    Ok(g.upsample_bilinear(r, size, size)?)
}

#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub index: usize,
    pub dim: usize,
    pub block: TransformerBlock,
    /// `[max_tokens×dim]`; rows beyond the active token count are unused.
    pub position: ParamId,
    pub velocity: Linear,
    /// Present for every block whenever the network has an auxiliary source.
    pub aux_projection: Option<Linear>,
    /// Whether the configured stage injects auxiliary tokens here.
    pub injects: bool,
    grid: usize,
}

impl FusionBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &Initializer, cfg: &FusionConfig, index: usize) -> Result<Self> {
        let dim = cfg.block_dims[index];
        let name = format!("fusion.block{index}");
        let per = cfg.tokens_per_modality();
        let groups = if cfg.aux_channels() > 0 { 3 } else { 2 };
        let position = init.normal(store, &format!("{name}.position"), &[groups * per, dim], 0.02)?;
        let velocity = Linear::new(store, init, &format!("{name}.velocity"), 1, dim)?;
        let aux_projection = match cfg.aux_channels() {
            0 => None,
            c => Some(Linear::new(store, init, &format!("{name}.aux"), c, dim)?),
        };
        let block = TransformerBlock::new(store, init, &format!("{name}.transformer"), dim, cfg.heads, cfg.ff_mult)?;
        Ok(Self {
            index,
            dim,
            block,
            position,
            velocity,
            aux_projection,
            injects: cfg.aux_injected(index),
            grid: cfg.token_grid,
        })
    }

    /// Fuses `[B×C×H×W]` image and LiDAR maps. `aux` is a `[B×A×h×w]`
    /// feature map, accepted only at blocks selected for injection.
    /// `speed` is `[B×1]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        image: Var,
        lidar: Var,
        aux: Option<Var>,
        speed: Var,
    ) -> Result<(Var, Var)> {
        let per = self.grid * self.grid;
        let mut groups = vec![to_tokens(g, image, self.grid)?, to_tokens(g, lidar, self.grid)?];
        if let Some(a) = aux {
            let proj = match (&self.aux_projection, self.injects) {
                (Some(p), true) => p,
                _ => return config(format!("auxiliary features supplied to fusion block {} which does not take them", self.index + 1)),
            };
            let t = to_tokens(g, a, self.grid)?;
            groups.push(proj.forward_tokens(g, store, t)?);
        }
        let tokens = g.concat(&groups, 1)?;
        let batch = g.shape(tokens)[0];
        let count = groups.len() * per;

        let pos = g.param(store, self.position);
        let pos = g.slice(pos, 0, 0, count)?;
        let pos = g.reshape(pos, &[1, count, self.dim])?;
        let pos = g.expand(pos, &[batch, count, self.dim])?;
        let vel = self.velocity.forward(g, store, speed)?;
        let vel = g.reshape(vel, &[batch, 1, self.dim])?;
        let vel = g.expand(vel, &[batch, count, self.dim])?;
        let x = g.add(tokens, pos)?;
        let x = g.add(x, vel)?;

        let y = self.block.forward(g, store, x)?;
        let update = g.sub(y, x)?;
        let size = g.shape(image)[2];
        let mut out = [image, lidar];
        for (m, o) in out.iter_mut().enumerate() {
            let u = g.slice(update, 1, m * per, per)?;
            let u = from_tokens(g, u, self.grid, size)?;
            *o = g.add(*o, u)?;
        }
        Ok((out[0], out[1]))
    }
}
