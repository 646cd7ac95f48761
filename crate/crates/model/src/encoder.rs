//! Residual convolutional branches producing four feature stages.

use cogfuse_tensor::{Graph, Initializer, ParamId, ParamStore, Real, Var};

use crate::config::FusionConfig;
use crate::error::{ModelError, Result};

/// 3×3 convolution, layer norm over the whole `C×H×W` map and a per-channel
/// affine.
#[derive(Clone, Debug)]
pub(crate) struct ConvNorm {
    kernel: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

impl ConvNorm {
    pub(crate) fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        let std = (2.0 / (cin * 9) as f64).sqrt();
        Ok(Self {
            kernel: init.normal(store, &format!("{name}.kernel"), &[cout, cin, 3, 3], std)?,
            gamma: init.constant(store, &format!("{name}.gamma"), &[cout], 1.0)?,
            beta: init.constant(store, &format!("{name}.beta"), &[cout], 0.0)?,
        })
    }

    pub(crate) fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let k = g.param(store, self.kernel);
        let y = g.conv2d(x, k, 1, 1)?;
        let s = g.shape(y).to_vec();
        let flat = g.reshape(y, &[s[0], s[1] * s[2] * s[3]])?;
        let n = g.layer_norm(flat, None)?;
        let n = g.reshape(n, &s)?;
        let gm = g.param(store, self.gamma);
        let bt = g.param(store, self.beta);
        Ok(g.channel_affine(n, gm, bt)?)
    }
}

#[derive(Clone, Debug)]
struct Residual {
    a: ConvNorm,
    b: ConvNorm,
}

#[derive(Clone, Debug)]
struct Stage {
    entry: ConvNorm,
    units: Vec<Residual>,
    /// Average-pooling window applied before (`k > 0`) or after (`k = 0`)
    /// the entry convolution.
    pool: usize,
    first: bool,
}

/// One sensor branch. Stage `k` outputs `block_dims[k]` channels at
/// `input_size / 2^(k+2)`.
#[derive(Clone, Debug)]
pub struct Encoder {
    stages: Vec<Stage>,
    in_channels: usize,
    input_size: usize,
}

impl Encoder {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &Initializer,
        name: &str,
        in_channels: usize,
        cfg: &FusionConfig,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(4);
        let mut cin = in_channels;
        for (k, &cout) in cfg.block_dims.iter().enumerate() {
            let entry = ConvNorm::new(store, init, &format!("{name}.stage{k}.entry"), cin, cout)?;
            let units = (0..cfg.depth)
                .map(|u| {
                    Ok(Residual {
                        a: ConvNorm::new(store, init, &format!("{name}.stage{k}.unit{u}.a"), cout, cout)?,
                        b: ConvNorm::new(store, init, &format!("{name}.stage{k}.unit{u}.b"), cout, cout)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage {
                entry,
                units,
                pool: if k == 0 { 4 } else { 2 },
                first: k == 0,
            });
            cin = cout;
        }
        Ok(Self {
            stages,
            in_channels,
            input_size: cfg.input_size,
        })
    }

    /// Checks a `[B×C×S×S]` branch input.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let want = [self.in_channels, self.input_size, self.input_size];
        if shape.len() != 4 || shape[1..] != want {
            return Err(ModelError::Dimension(format!(
                "branch input must be [B, {}, {}, {}], got {shape:?}",
                want[0], want[1], want[2]
            )));
        }
        Ok(())
    }

    /// Runs stage `k` on the previous stage's (possibly fused) output.
    pub fn stage<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, k: usize, x: Var) -> Result<Var> {
        let st = &self.stages[k];
        let mut h = if st.first {
            let c = st.entry.forward(g, store, x)?;
            let c = g.relu(c);
            g.avg_pool2d(c, st.pool)?
        } else {
            let p = g.avg_pool2d(x, st.pool)?;
            let c = st.entry.forward(g, store, p)?;
            g.relu(c)
        };
        for u in &st.units {
            let a = u.a.forward(g, store, h)?;
            let a = g.relu(a);
            let b = u.b.forward(g, store, a)?;
            let s = g.add(h, b)?;
            h = g.relu(s);
        }
        Ok(h)
    }

    /// All four stages without fusion in between.
    pub fn forward_all<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<[Var; 4]> {
        self.check_input(g.shape(x))?;
        let f1 = self.stage(g, store, 0, x)?;
        let f2 = self.stage(g, store, 1, f1)?;
        let f3 = self.stage(g, store, 2, f2)?;
        let f4 = self.stage(g, store, 3, f3)?;
        Ok([f1, f2, f3, f4])
    }
}
