use cogfuse_sim::episode::{
    run_episode, seeded_route, Driver, EpisodeConfig, EpisodeLog, InfractionKind, Outcome, Policy, LABEL_HORIZONS,
};
use cogfuse_sim::geom::{Obb, Vec2};
use cogfuse_sim::metrics::{driving_score, RouteResult};
use cogfuse_sim::render::Observation;
use cogfuse_sim::town::{LightState, Town};
use cogfuse_sim::vehicle::{ControlCommand, HALF_LENGTH, V_MAX, DT};
use cogfuse_sim::{Result, SimError};

fn config(seed: u64) -> EpisodeConfig {
    EpisodeConfig {
        seed,
        ..EpisodeConfig::default()
    }
}

fn strictly_increasing(log: &EpisodeLog) -> bool {
    log.infractions.windows(2).all(|w| w[0].step < w[1].step)
}

#[test]
fn expert_is_infraction_free_on_fifty_seeds() {
    let mut results = Vec::new();
    for seed in 0..50 {
        let (town, route) = seeded_route(seed, 3).unwrap();
        let (log, _) = run_episode(&town, &route, Driver::Expert, &config(seed)).unwrap();
        assert!(log.infractions.is_empty(), "seed {seed}: {:?}", log.infractions);
        assert_eq!(log.outcome, Outcome::Finished, "seed {seed}");
        assert_eq!(log.completed, log.route_length);
        results.push(RouteResult::from_log(&log).unwrap());
    }
    let (ds, rc) = driving_score(&results).unwrap();
    assert_eq!((ds, rc), (100.0, 100.0));
}

/// Counts red crossings from the trace alone: the front bumper's motion
/// segment intersects a stop line, heading into the intersection, while the
/// light shows red after the step.
fn replay_red_crossings(town: &Town, log: &EpisodeLog) -> usize {
    let cross = |a: Vec2, b: Vec2, p: Vec2| (b - a).cross(p - a);
    let mut count = 0;
    let mut prev = log.start;
    for (k, t) in log.trace.iter().enumerate() {
        let fa = prev.pos + prev.forward() * HALF_LENGTH;
        let fb = t.pose.pos + t.pose.forward() * HALF_LENGTH;
        for l in &town.lights {
            if l.state(k as u64 + 1) != LightState::Red {
                continue;
            }
            let (p, q) = town.stop_line(l.node, l.approach);
            let straddles = cross(p, q, fa) * cross(p, q, fb) <= 0.0 && cross(p, q, fa) != 0.0;
            let within = cross(fa, fb, p) * cross(fa, fb, q) <= 0.0;
            if straddles && within && (fb - fa).dot(l.approach.direction()) > 0.0 {
                count += 1;
            }
        }
        prev = t.pose;
    }
    count
}

#[test]
fn red_runner_penalty_matches_replayed_crossings() {
    let mut total = 0;
    for seed in 0..10 {
        let (town, route) = seeded_route(seed, 3).unwrap();
        let (log, _) = run_episode(&town, &route, Driver::RedRunner, &config(seed)).unwrap();
        let k = replay_red_crossings(&town, &log);
        assert_eq!(log.count(InfractionKind::RedLight), k, "seed {seed}");
        assert_eq!(log.infractions.len(), k, "seed {seed}: {:?}", log.infractions);
        let r = RouteResult::from_log(&log).unwrap();
        let (ds, rc) = driving_score(&[r]).unwrap();
        assert!((ds - 0.7f64.powi(k as i32) * rc).abs() < 1e-9, "seed {seed}");
        total += k;
    }
    assert!(total > 0);
}

#[test]
fn replays_are_identical() {
    let (town, route) = seeded_route(17, 3).unwrap();
    let cfg = EpisodeConfig {
        record_every: 25,
        ..config(17)
    };
    let (a, fa) = run_episode(&town, &route, Driver::Expert, &cfg).unwrap();
    let (b, fb) = run_episode(&town, &route, Driver::Expert, &cfg).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(fa, fb);
}

#[test]
fn log_text_round_trips_exactly() {
    let (town, route) = seeded_route(3, 3).unwrap();
    let (log, _) = run_episode(&town, &route, Driver::RedRunner, &config(3)).unwrap();
    assert!(!log.infractions.is_empty());
    assert_eq!(EpisodeLog::from_text(&log.to_text()).unwrap(), log);
    assert!(EpisodeLog::from_text("episode 1\nroute_length 5\nbogus 1\n").is_err());
}

#[test]
fn per_step_displacement_is_bounded() {
    for seed in 0..5 {
        let (town, route) = seeded_route(seed, 3).unwrap();
        let (log, _) = run_episode(&town, &route, Driver::RedRunner, &config(seed)).unwrap();
        let mut prev = log.start.pos;
        for t in &log.trace {
            assert!(t.pose.pos.dist(prev) <= V_MAX * DT + 1e-12);
            prev = t.pose.pos;
        }
        assert!(log.completed <= log.route_length && strictly_increasing(&log));
    }
}

#[test]
fn frame_labels_are_future_poses_in_ego_frame() {
    let (town, route) = seeded_route(22, 3).unwrap();
    let cfg = EpisodeConfig {
        record_every: 10,
        ..config(22)
    };
    let (log, frames) = run_episode(&town, &route, Driver::Expert, &cfg).unwrap();
    assert!(frames.len() >= 5);
    for f in &frames {
        let k = f.step as usize;
        let here = if k == 0 { log.start } else { log.trace[k - 1].pose };
        assert_eq!(f.obs.pose, here);
        for (w, h) in f.waypoints.iter().zip(LABEL_HORIZONS) {
            let future = log.trace[k + h - 1].pose.pos;
            let d = future - here.pos;
            let expect = Vec2::new(d.dot(here.forward()), d.dot(here.forward().right()));
            assert!(w.dist(expect) < 1e-9);
        }
        assert!(f.waypoints[0].x >= 0.0);
    }
}

#[test]
fn static_collisions_count_once_per_object_and_end_the_episode() {
    let (mut town, route) = seeded_route(0, 3).unwrap();
    let (log, _) = run_episode(&town, &route, Driver::Expert, &config(0)).unwrap();
    let place = |meters: f64| {
        let i = log.trace.iter().position(|t| t.pose.pos.dist(log.start.pos) >= meters).unwrap();
        let p = log.trace[i].pose;
        Obb {
            center: p.pos,
            heading: p.heading,
            half_len: 0.4,
            half_wid: 0.4,
            height: 2.0,
        }
    };
    town.buildings.push(place(10.0));
    let (one, _) = run_episode(&town, &route, Driver::Expert, &config(0)).unwrap();
    assert_eq!(one.count(InfractionKind::Static), 1);
    town.buildings.push(place(20.0));
    town.buildings.push(place(30.0));
    let (three, _) = run_episode(&town, &route, Driver::Expert, &config(0)).unwrap();
    assert_eq!(three.count(InfractionKind::Static), 3);
    assert_eq!(three.outcome, Outcome::CollisionLimit);
    assert!(three.completed < three.route_length);
}

struct Broken;

impl Policy for Broken {
    fn act(&mut self, _: &Observation) -> Result<ControlCommand> {
        Err(SimError::Controller("non-finite waypoint".into()))
    }
}

struct FullThrottle(usize);

impl Policy for FullThrottle {
    fn act(&mut self, obs: &Observation) -> Result<ControlCommand> {
        self.0 += 1;
        assert_eq!(obs.front.data.len(), 256 * 256 * 3);
        Ok(ControlCommand {
            steer: 0.0,
            throttle: 1.0,
            brake: false,
        })
    }
}

#[test]
fn policy_drivers() {
    let (town, route) = seeded_route(5, 3).unwrap();
    let (log, _) = run_episode(&town, &route, Driver::Policy(&mut Broken), &config(5)).unwrap();
    assert_eq!(log.outcome, Outcome::ControllerAbort);
    assert!(log.infractions.is_empty() && log.trace.is_empty());

    let mut p = FullThrottle(0);
    let cfg = EpisodeConfig {
        max_steps: 40,
        ..config(5)
    };
    let (log, _) = run_episode(&town, &route, Driver::Policy(&mut p), &cfg).unwrap();
    assert_eq!(p.0, log.trace.len());
    assert!(log.trace.iter().all(|t| t.command.throttle == 1.0));
}
