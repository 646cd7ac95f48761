use std::time::{Duration, Instant};

use cogfuse_model::{Features, FusionNetwork, ModelError, NetInput};
use cogfuse_sim::episode::Policy;
use cogfuse_sim::geom::Vec2;
use cogfuse_sim::pid::{control_step, PidConfig, PidState};
use cogfuse_sim::render::Observation;
use cogfuse_sim::vehicle::ControlCommand;
use cogfuse_sim::SimError;
use cogfuse_tensor::{Graph, ParamStore};

/// Accumulated per-frame latency.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Timing {
    pub frames: u64,
    pub total: Duration,
}

impl Timing {
    pub fn add(&mut self, other: Timing) {
        self.frames += other.frames;
        self.total += other.total;
    }

    pub fn mean_ms(&self) -> Option<f64> {
        (self.frames > 0).then(|| self.total.as_secs_f64() * 1e3 / self.frames as f64)
    }
}

/// Network output for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub waypoints: [Vec2; 4],
    /// Probability of the `Stop` class when the network has a
    /// traffic-light head.
    pub stop_probability: Option<f64>,
}

pub fn plan(net: &FusionNetwork, store: &ParamStore<f32>, features: &Features) -> Result<Plan, ModelError> {
    let input = NetInput::<f32>::from_features(&[features], &net.config)?;
    let mut g = Graph::new();
    let out = net.forward(&mut g, store, &input)?;
    let w = g.data(out.waypoints);
    let waypoints = std::array::from_fn(|i| Vec2::new(w[2 * i] as f64, w[2 * i + 1] as f64));
    let stop_probability = if out.has_tl() {
        let logits = out.tl_logits()?;
        let p = g.softmax(logits);
        Some(g.data(p)[0] as f64)
    } else {
        None
    };
    Ok(Plan {
        waypoints,
        stop_probability,
    })
}

/// Closed-loop driver: preprocessing, network forward and PID control.
pub struct NetworkPolicy<'a> {
    net: &'a FusionNetwork,
    store: &'a ParamStore<f32>,
    pid: PidState,
    pub timing: Timing,
}

impl<'a> NetworkPolicy<'a> {
    pub fn new(net: &'a FusionNetwork, store: &'a ParamStore<f32>, pid: &PidConfig) -> Self {
        Self {
            net,
            store,
            pid: PidState::new(pid),
            timing: Timing::default(),
        }
    }
}

impl Policy for NetworkPolicy<'_> {
    fn act(&mut self, obs: &Observation) -> cogfuse_sim::Result<ControlCommand> {
        let start = Instant::now();
        let features = Features::from_observation(obs, &self.net.config).map_err(|e| SimError::Controller(e.to_string()))?;
        let p = plan(self.net, self.store, &features).map_err(|e| SimError::Controller(e.to_string()))?;
        let cmd = control_step(&p.waypoints, obs.speed, &mut self.pid)?;
        self.timing.frames += 1;
        self.timing.total += start.elapsed();
        Ok(cmd)
    }
}
