#![allow(dead_code)]

use cogfuse_model::{FusionConfig, Sample};
use cogfuse_sim::episode::{run_episode, seeded_route, Driver, EpisodeConfig};
use cogfuse_sim::world::WorldConfig;

/// Expert frames from seeded routes, recorded every `every` steps, until
/// `count` samples are collected.
pub fn expert_samples(cfg: &FusionConfig, count: usize, every: u64, first_seed: u64) -> Vec<Sample> {
    let mut out = Vec::new();
    let mut seed = first_seed;
    while out.len() < count {
        let (town, route) = seeded_route(seed, 3).unwrap();
        let ec = EpisodeConfig {
            max_steps: 600,
            seed,
            world: WorldConfig::default(),
            record_every: every,
        };
        let (_, frames) = run_episode(&town, &route, Driver::Expert, &ec).unwrap();
        for f in frames {
            if out.len() < count {
                out.push(Sample::from_frame(&f.obs, &f.waypoints, cfg).unwrap());
            }
        }
        seed += 1;
    }
    out
}

/// Takes up to `per_class` samples of each traffic-light state.
pub fn balanced(samples: Vec<Sample>, per_class: usize) -> Vec<Sample> {
    let mut counts = [0usize; 2];
    let mut out = Vec::new();
    for s in samples {
        let c = s.tl_state as usize;
        if counts[c] < per_class {
            counts[c] += 1;
            out.push(s);
        }
    }
    out
}
