//! Closed-loop episode runner and its log.

use std::collections::HashSet;
use std::fmt::Write;

use crate::error::{Result, SimError};
use crate::geom::{Pose, Vec2};
use crate::path::LanePath;
use crate::render::{sense, Observation};
use crate::town::{LightState, Route, Town, LANE_OFFSET, ROAD_HALF_WIDTH, STOP_LINE};
use crate::vehicle::{ControlCommand, VehicleState};
use crate::world::{expert_command, AgentId, ExpertParams, Navigator, World, WorldConfig};

/// Waypoint label horizons, in steps of 0.1 s.
pub const LABEL_HORIZONS: [usize; 4] = [5, 10, 15, 20];
pub const COLLISION_LIMIT: usize = 3;
/// The route counts as finished within this distance of its end.
pub const FINISH_TOLERANCE: f64 = 1.0;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InfractionKind {
    Pedestrian,
    Vehicle,
    Static,
    RedLight,
}

impl InfractionKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pedestrian => "pedestrian",
            Self::Vehicle => "vehicle",
            Self::Static => "static",
            Self::RedLight => "red_light",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pedestrian" => Self::Pedestrian,
            "vehicle" => Self::Vehicle,
            "static" => Self::Static,
            "red_light" => Self::RedLight,
            _ => return None,
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Infraction {
    pub step: u64,
    pub kind: InfractionKind,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub pose: Pose,
    pub speed: f64,
    pub command: ControlCommand,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Finished,
    Timeout,
    CollisionLimit,
    ControllerAbort,
}

impl Outcome {
    fn name(self) -> &'static str {
        match self {
            Self::Finished => "finished",
            Self::Timeout => "timeout",
            Self::CollisionLimit => "collision_limit",
            Self::ControllerAbort => "controller_abort",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "finished" => Self::Finished,
            "timeout" => Self::Timeout,
            "collision_limit" => Self::CollisionLimit,
            "controller_abort" => Self::ControllerAbort,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub route_length: f64,
    pub completed: f64,
    pub off_route: f64,
    pub infractions: Vec<Infraction>,
    pub start: Pose,
    /// Pose and command after each simulated step.
    pub trace: Vec<TraceStep>,
    pub outcome: Outcome,
}

impl EpisodeLog {
    pub fn count(&self, kind: InfractionKind) -> usize {
        self.infractions.iter().filter(|i| i.kind == kind).count()
    }

    /// Distance driven, summed over steps.
    pub fn distance_traveled(&self) -> f64 {
        let mut prev = self.start.pos;
        let mut total = 0.0;
        for t in &self.trace {
            total += t.pose.pos.dist(prev);
            prev = t.pose.pos;
        }
        total
    }

    /// Line-oriented text. Floats use shortest round-trip formatting, so
    /// parsing reproduces the log exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::from("episode 1\n");
        writeln!(s, "route_length {}", self.route_length).unwrap();
        writeln!(s, "completed {}", self.completed).unwrap();
        writeln!(s, "off_route {}", self.off_route).unwrap();
        writeln!(s, "outcome {}", self.outcome.name()).unwrap();
        writeln!(s, "start {} {} {}", self.start.pos.x, self.start.pos.y, self.start.heading).unwrap();
        for i in &self.infractions {
            writeln!(s, "infraction {} {}", i.step, i.kind.name()).unwrap();
        }
        for t in &self.trace {
            writeln!(
                s,
                "step {} {} {} {} {} {} {}",
                t.pose.pos.x,
                t.pose.pos.y,
                t.pose.heading,
                t.speed,
                t.command.steer,
                t.command.throttle,
                u8::from(t.command.brake)
            )
            .unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: &str| SimError::Argument(format!("malformed episode log line: {line:?}"));
        let mut lines = text.lines();
        if lines.next() != Some("episode 1") {
            return Err(SimError::Argument("missing episode log header".into()));
        }
        let mut log = EpisodeLog {
            route_length: f64::NAN,
            completed: 0.0,
            off_route: 0.0,
            infractions: Vec::new(),
            start: Pose::default(),
            trace: Vec::new(),
            outcome: Outcome::Timeout,
        };
        for line in lines {
            let mut it = line.split_whitespace();
            let key = it.next().ok_or_else(|| bad(line))?;
            let rest: Vec<&str> = it.collect();
            let num = |i: usize| -> Result<f64> { rest.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| bad(line)) };
            match key {
                "route_length" => log.route_length = num(0)?,
                "completed" => log.completed = num(0)?,
                "off_route" => log.off_route = num(0)?,
                "outcome" => log.outcome = rest.first().and_then(|v| Outcome::parse(v)).ok_or_else(|| bad(line))?,
                "start" => {
                    log.start = Pose {
                        pos: Vec2::new(num(0)?, num(1)?),
                        heading: num(2)?,
                    }
                }
                "infraction" => log.infractions.push(Infraction {
                    step: rest.first().and_then(|v| v.parse().ok()).ok_or_else(|| bad(line))?,
                    kind: rest.get(1).and_then(|v| InfractionKind::parse(v)).ok_or_else(|| bad(line))?,
                }),
                "step" => log.trace.push(TraceStep {
                    pose: Pose {
                        pos: Vec2::new(num(0)?, num(1)?),
                        heading: num(2)?,
                    },
                    speed: num(3)?,
                    command: ControlCommand {
                        steer: num(4)?,
                        throttle: num(5)?,
                        brake: num(6)? != 0.0,
                    },
                }),
                _ => return Err(bad(line)),
            }
        }
        if !log.route_length.is_finite() {
            return Err(SimError::Argument("episode log lacks route_length".into()));
        }
        Ok(log)
    }
}

/// A learned driver: maps an observation to a command.
pub trait Policy {
    fn act(&mut self, obs: &Observation) -> Result<ControlCommand>;
}

pub enum Driver<'a> {
    Expert,
    /// The expert with traffic signals ignored.
    RedRunner,
    Policy(&'a mut dyn Policy),
}

#[derive(Clone, Debug)]
pub struct EpisodeConfig {
    pub max_steps: u64,
    pub seed: u64,
    pub world: WorldConfig,
    /// Record an observation every this many steps (0 disables recording).
    pub record_every: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 3000,
            seed: 0,
            world: WorldConfig::default(),
            record_every: 0,
        }
    }
}

/// Observation with expert waypoint labels in its own ego frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub step: u64,
    pub obs: Observation,
    pub waypoints: [Vec2; 4],
}

/// Whether moving the front bumper from `a` to `b` crosses the stop line
/// of `(node, approach)` in the direction of travel.
pub fn crosses_stop_line(town: &Town, node: usize, approach: crate::town::Approach, a: Vec2, b: Vec2) -> bool {
    let u = approach.direction();
    let c = town.node(node);
    let (sa, sb) = ((a - c).dot(u), (b - c).dot(u));
    let lateral = (b - c).dot(u.right());
    sa < -STOP_LINE && sb >= -STOP_LINE && (0.0..=ROAD_HALF_WIDTH).contains(&lateral)
}

pub fn run_episode(town: &Town, route: &Route, mut driver: Driver, config: &EpisodeConfig) -> Result<(EpisodeLog, Vec<Frame>)> {
    let path = LanePath::from_route(town, route)?;
    let start = Navigator::start_pose(&path, 0.0);
    let length = path.length();
    let mut nav = Navigator::new(path, start.pos);
    let mut ego = VehicleState { pose: start, speed: 0.0 };
    let mut world = World::new(town.clone(), &config.world, config.seed, start)?;
    let npc_params = ExpertParams::default();
    let ego_params = ExpertParams {
        obey_lights: !matches!(driver, Driver::RedRunner),
        ..ExpertParams::default()
    };

    let mut log = EpisodeLog {
        route_length: length,
        completed: 0.0,
        off_route: 0.0,
        infractions: Vec::new(),
        start,
        trace: Vec::new(),
        outcome: Outcome::Timeout,
    };
    let mut recorded: Vec<(u64, Observation)> = Vec::new();
    let mut hit_objects: HashSet<(InfractionKind, usize)> = HashSet::new();
    let mut collisions = 0;

    for k in 0..config.max_steps {
        let record = config.record_every > 0 && k % config.record_every == 0;
        let policy_turn = matches!(driver, Driver::Policy(_));
        let obs = (record || policy_turn).then(|| sense(&world, &ego, &nav));
        let scene = world.scene(Some(&ego));
        let cmd = match &mut driver {
            Driver::Expert | Driver::RedRunner => expert_command(&ego_params, &ego, &nav, &scene, AgentId::Ego),
            Driver::Policy(p) => match p.act(obs.as_ref().unwrap()) {
                Ok(c) => c,
                Err(SimError::Controller(_)) => {
                    log.outcome = Outcome::ControllerAbort;
                    break;
                }
                Err(e) => return Err(e),
            },
        };
        let npc_cmds = world.npc_commands(&scene, &npc_params);
        drop(scene);
        if record {
            recorded.push((k, obs.unwrap()));
        }

        let before = ego;
        ego.step(&cmd);
        world.advance(&npc_cmds, Some(&ego));
        nav.update(ego.pose.pos);

        let mut events: Vec<InfractionKind> = Vec::new();
        for (i, npc) in world.npcs.iter().enumerate() {
            if npc.active && ego.hits(&npc.state.obb()) && hit_objects.insert((InfractionKind::Vehicle, i)) {
                events.push(InfractionKind::Vehicle);
            }
        }
        for (i, ped) in world.peds.iter().enumerate() {
            if ego.hits(&ped.obb()) && hit_objects.insert((InfractionKind::Pedestrian, i)) {
                events.push(InfractionKind::Pedestrian);
            }
        }
        for (i, b) in town.buildings.iter().enumerate() {
            if ego.hits(b) && hit_objects.insert((InfractionKind::Static, i)) {
                events.push(InfractionKind::Static);
            }
        }
        collisions += events.len();
        for l in &town.lights {
            if l.state(world.step) == LightState::Red && crosses_stop_line(town, l.node, l.approach, before.front(), ego.front()) {
                events.push(InfractionKind::RedLight);
            }
        }
        if let Some(&kind) = events.iter().min() {
            log.infractions.push(Infraction { step: k, kind });
        }

        if nav.lateral > LANE_OFFSET {
            log.off_route += ego.pose.pos.dist(before.pose.pos);
        }
        log.completed = log.completed.max(nav.s.min(length));
        log.trace.push(TraceStep {
            pose: ego.pose,
            speed: ego.speed,
            command: cmd,
        });
        if nav.s >= length - FINISH_TOLERANCE {
            log.completed = length;
            log.outcome = Outcome::Finished;
            break;
        }
        if collisions >= COLLISION_LIMIT {
            log.outcome = Outcome::CollisionLimit;
            break;
        }
    }

    let poses: Vec<Pose> = std::iter::once(log.start).chain(log.trace.iter().map(|t| t.pose)).collect();
    let frames = recorded
        .into_iter()
        .filter(|(k, _)| (*k as usize) + LABEL_HORIZONS[3] < poses.len())
        .map(|(k, obs)| {
            let here = poses[k as usize];
            let waypoints = LABEL_HORIZONS.map(|h| here.to_ego(poses[k as usize + h].pos));
            Frame { step: k, obs, waypoints }
        })
        .collect();
    Ok((log, frames))
}

/// Town and route derived from one seed: two distinct random nodes joined
/// by the planner.
pub fn seeded_route(seed: u64, size: usize) -> Result<(Town, Route)> {
    use rand::{Rng, SeedableRng};
    let town = crate::town::build_town(seed, size)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x0a7e_5eed);
    let n = town.node_count();
    let start = rng.random_range(0..n);
    let end = (start + rng.random_range(1..n)) % n;
    let route = crate::town::plan_route(&town, start, end)?;
    Ok((town, route))
}
