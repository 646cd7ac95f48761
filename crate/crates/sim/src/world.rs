//! Dynamic agents and the rule-based expert driver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geom::{Obb, Pose, Vec2};
use crate::path::LanePath;
use crate::town::{plan_route, LightState, Town, CROSSWALK_WIDTH, ROAD_HALF_WIDTH};
use crate::vehicle::{ControlCommand, VehicleState, BRAKE_DECEL, DRAG, ACCEL, HALF_LENGTH, HALF_WIDTH, MAX_STEER, WHEELBASE, DT};

pub const PED_HALF: f64 = 0.3;
pub const PED_HEIGHT: f64 = 1.8;
pub const PED_SPEED: f64 = 1.4;
/// Pedestrians wait while any vehicle is this close to their crosswalk.
pub const PED_CLEARANCE: f64 = 25.0;
/// Range within which the governing signal is reported to the ego.
pub const TL_SENSING_RANGE: f64 = 20.0;
/// Inside this distance to a red stop line the expert holds the brake.
pub const RED_HOLD: f64 = 3.0;

#[derive(Clone, Debug)]
pub struct ExpertParams {
    pub target_speed: f64,
    pub lateral_accel: f64,
    pub comfort_decel: f64,
    pub stop_decel: f64,
    pub headway: f64,
    pub lookahead: f64,
    pub obey_lights: bool,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            target_speed: 6.0,
            lateral_accel: 2.5,
            comfort_decel: 2.0,
            stop_decel: 4.0,
            headway: 3.0,
            lookahead: 30.0,
            obey_lights: true,
        }
    }
}

/// Route-following state of one vehicle.
#[derive(Clone, Debug)]
pub struct Navigator {
    pub path: LanePath,
    /// Current arc-length position of the vehicle center.
    pub s: f64,
    /// Distance from the vehicle center to the path.
    pub lateral: f64,
}

impl Navigator {
    pub fn new(path: LanePath, pos: Vec2) -> Self {
        let (s, lateral) = path.project(pos, 0.0, f64::INFINITY);
        Self { path, s, lateral }
    }

    pub fn update(&mut self, pos: Vec2) {
        let (s, lateral) = self.path.project(pos, self.s - 3.0, self.s + 6.0);
        self.s = s;
        self.lateral = lateral;
    }

    pub fn start_pose(path: &LanePath, s: f64) -> Pose {
        let a = path.point_at(s);
        let b = path.point_at(s + 0.5);
        Pose {
            pos: a,
            heading: (b - a).y.atan2((b - a).x),
        }
    }

    /// Signal governing the next stop line ahead of the front bumper, with
    /// the bumper's distance to that line.
    pub fn next_signal<'t>(&self, town: &'t Town) -> Option<(&'t crate::town::Light, f64)> {
        let front = self.s + HALF_LENGTH;
        self.path
            .stops
            .iter()
            .find(|st| st.s >= front)
            .and_then(|st| town.light(st.node, st.approach).map(|l| (l, st.s - front)))
    }

    /// Next route target point beyond the vehicle.
    pub fn goal(&self) -> Vec2 {
        self.path
            .goals
            .iter()
            .find(|(s, _)| *s > self.s + 1.0)
            .or(self.path.goals.last())
            .map(|&(_, p)| p)
            .unwrap()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AgentId {
    Ego,
    Npc(usize),
}

#[derive(Clone, Debug)]
pub struct Npc {
    pub state: VehicleState,
    pub nav: Navigator,
    pub active: bool,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub enum PedPhase {
    Waiting { until: u64 },
    Crossing { t: f64 },
}

#[derive(Clone, Debug)]
pub struct Pedestrian {
    pub crosswalk: usize,
    /// Crossing from the first crosswalk end to the second.
    pub outbound: bool,
    pub phase: PedPhase,
    pub pos: Vec2,
}

impl Pedestrian {
    pub fn obb(&self) -> Obb {
        Obb {
            center: self.pos,
            heading: 0.0,
            half_len: PED_HALF,
            half_wid: PED_HALF,
            height: PED_HEIGHT,
        }
    }

    pub fn crossing(&self) -> bool {
        matches!(self.phase, PedPhase::Crossing { .. })
    }
}

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub npc_vehicles: usize,
    /// Probability that a crosswalk hosts a pedestrian.
    pub pedestrian_density: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            npc_vehicles: 4,
            pedestrian_density: 0.6,
        }
    }
}

/// Read-only view of every dynamic obstacle at one instant.
pub struct Scene<'a> {
    pub town: &'a Town,
    pub step: u64,
    pub vehicles: Vec<(AgentId, Obb)>,
    pub peds: Vec<Obb>,
    pub busy_crosswalks: Vec<bool>,
}

pub struct World {
    pub town: Town,
    pub step: u64,
    pub npcs: Vec<Npc>,
    pub peds: Vec<Pedestrian>,
    rng: ChaCha8Rng,
}

impl World {
    /// Populates `town` with seed-derived vehicles and pedestrians, keeping
    /// spawn points clear of `ego`.
    pub fn new(town: Town, config: &WorldConfig, seed: u64, ego: Pose) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a9e7);
        let mut npcs: Vec<Npc> = Vec::new();
        let n = town.node_count();
        let mut attempts = 0;
        while npcs.len() < config.npc_vehicles && attempts < 50 * config.npc_vehicles.max(1) {
            attempts += 1;
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let route = plan_route(&town, a, b)?;
            let path = LanePath::from_route(&town, &route)?;
            let s = rng.random_range(0.0..(path.length() * 0.5));
            let pose = Navigator::start_pose(&path, s);
            let clear = pose.pos.dist(ego.pos) > 15.0 && npcs.iter().all(|o| o.state.pose.pos.dist(pose.pos) > 12.0);
            if !clear {
                continue;
            }
            let nav = Navigator::new(path, pose.pos);
            npcs.push(Npc {
                state: VehicleState { pose, speed: 0.0 },
                nav,
                active: true,
            });
        }
        let mut peds = Vec::new();
        for (i, cw) in town.crosswalks.iter().enumerate() {
            if !rng.random_bool(config.pedestrian_density) {
                continue;
            }
            let outbound = rng.random_bool(0.5);
            let (e0, e1) = cw.ends();
            peds.push(Pedestrian {
                crosswalk: i,
                outbound,
                phase: PedPhase::Waiting {
                    until: rng.random_range(0..150),
                },
                pos: if outbound { e0 } else { e1 },
            });
        }
        Ok(Self {
            town,
            step: 0,
            npcs,
            peds,
            rng,
        })
    }

    pub fn scene(&self, ego: Option<&VehicleState>) -> Scene<'_> {
        let mut vehicles: Vec<(AgentId, Obb)> = ego.map(|e| (AgentId::Ego, e.obb())).into_iter().collect();
        vehicles.extend(
            self.npcs
                .iter()
                .enumerate()
                .filter(|(_, n)| n.active)
                .map(|(i, n)| (AgentId::Npc(i), n.state.obb())),
        );
        let mut busy = vec![false; self.town.crosswalks.len()];
        for p in &self.peds {
            if p.crossing() {
                busy[p.crosswalk] = true;
            }
        }
        Scene {
            town: &self.town,
            step: self.step,
            vehicles,
            peds: self.peds.iter().map(Pedestrian::obb).collect(),
            busy_crosswalks: busy,
        }
    }

    /// Expert commands for every active NPC, computed from one snapshot.
    pub fn npc_commands(&self, scene: &Scene, params: &ExpertParams) -> Vec<Option<ControlCommand>> {
        self.npcs
            .iter()
            .enumerate()
            .map(|(i, n)| n.active.then(|| expert_command(params, &n.state, &n.nav, scene, AgentId::Npc(i))))
            .collect()
    }

    /// Applies NPC commands, advances pedestrians and the clock.
    pub fn advance(&mut self, commands: &[Option<ControlCommand>], ego: Option<&VehicleState>) {
        for (npc, cmd) in self.npcs.iter_mut().zip(commands) {
            if let Some(cmd) = cmd {
                npc.state.step(cmd);
                npc.nav.update(npc.state.pose.pos);
                if npc.nav.s >= npc.nav.path.length() - 1.0 {
                    npc.active = false;
                }
            }
        }
        self.step += 1;
        let vehicles: Vec<Vec2> = ego
            .map(|e| e.pose.pos)
            .into_iter()
            .chain(self.npcs.iter().filter(|n| n.active).map(|n| n.state.pose.pos))
            .collect();
        for ped in &mut self.peds {
            let cw = self.town.crosswalks[ped.crosswalk];
            let (e0, e1) = cw.ends();
            let (from, to) = if ped.outbound { (e0, e1) } else { (e1, e0) };
            match ped.phase {
                PedPhase::Waiting { until } => {
                    if self.step >= until && vehicles.iter().all(|v| v.dist(cw.center) > PED_CLEARANCE) {
                        ped.phase = PedPhase::Crossing { t: 0.0 };
                    }
                }
                PedPhase::Crossing { t } => {
                    let t = t + PED_SPEED * DT / from.dist(to);
                    if t >= 1.0 {
                        ped.pos = to;
                        ped.outbound = !ped.outbound;
                        ped.phase = PedPhase::Waiting {
                            until: self.step + self.rng.random_range(100..300),
                        };
                    } else {
                        ped.pos = from + (to - from) * t;
                        ped.phase = PedPhase::Crossing { t };
                    }
                }
            }
        }
    }
}

/// Pure-pursuit lane following with a speed profile limited by curvature,
/// signals, busy crosswalks and obstacles in the driving corridor.
pub fn expert_command(
    params: &ExpertParams,
    state: &VehicleState,
    nav: &Navigator,
    scene: &Scene,
    me: AgentId,
) -> ControlCommand {
    let path = &nav.path;
    let v = state.speed;
    let s = nav.s;
    let front = s + HALF_LENGTH;

    let mut cruise = params.target_speed;
    let mut d = 0.0;
    while d <= 25.0 {
        let k = path.curvature_at(s + d);
        if k > 0.0 {
            let v_turn = (params.lateral_accel / k).sqrt();
            cruise = cruise.min((v_turn * v_turn + 2.0 * params.comfort_decel * d).sqrt());
        }
        d += 1.0;
    }

    // Distances from the front bumper to points where the vehicle must stop.
    let mut stops: Vec<f64> = Vec::new();
    if params.obey_lights {
        if let Some((light, d_line)) = nav.next_signal(scene.town) {
            if d_line < params.lookahead {
                match light.state(scene.step) {
                    LightState::Red => stops.push(if d_line <= RED_HOLD { 0.0 } else { d_line - 1.0 }),
                    LightState::Yellow if v * v / (2.0 * 5.0) <= d_line => stops.push(d_line - 1.0),
                    _ => {}
                }
            }
        }
    }
    for (i, cw) in scene.town.crosswalks.iter().enumerate() {
        if !scene.busy_crosswalks[i] {
            continue;
        }
        let (s_cw, lat) = path.project(cw.center, s, s + params.lookahead);
        if lat <= ROAD_HALF_WIDTH && s_cw - CROSSWALK_WIDTH / 2.0 > s {
            stops.push(s_cw - CROSSWALK_WIDTH / 2.0 - 1.0 - front);
        }
    }
    for (id, obb) in &scene.vehicles {
        if *id == me {
            continue;
        }
        if let Some(gap) = corridor_gap(path, s, obb, HALF_WIDTH + 0.6, params.lookahead) {
            stops.push(gap - params.headway);
        }
    }
    for obb in &scene.peds {
        if let Some(gap) = corridor_gap(path, s, obb, HALF_WIDTH + 0.7, params.lookahead) {
            stops.push(gap - 2.0);
        }
    }
    let stop_speed = stops
        .iter()
        .map(|&d| (2.0 * params.stop_decel * d.max(0.0)).sqrt())
        .fold(f64::INFINITY, f64::min);

    let ld = (2.5 + 0.4 * v).clamp(3.0, 6.0);
    let target = state.pose.to_ego(path.point_at(s + ld));
    let alpha = target.y.atan2(target.x);
    let delta = (2.0 * WHEELBASE * alpha.sin() / ld).atan();
    let steer = (delta / MAX_STEER).clamp(-1.0, 1.0);

    let desired = cruise.min(stop_speed);
    if desired < 0.05 || v > stop_speed || v > cruise + 0.3 {
        return ControlCommand::braking(steer);
    }
    let throttle = (0.6 * (desired - v) + DRAG * desired / ACCEL).clamp(0.0, 1.0);
    ControlCommand {
        steer,
        throttle,
        brake: false,
    }
}

/// Free distance from the front bumper to `obb` when it sits in the
/// corridor ahead along `path`.
fn corridor_gap(path: &LanePath, s: f64, obb: &Obb, half_corridor: f64, lookahead: f64) -> Option<f64> {
    let (s_o, lat) = path.project(obb.center, s, s + lookahead);
    if s_o <= s + 0.5 {
        return None;
    }
    let a = path.point_at(s_o);
    let b = path.point_at(s_o + 0.5);
    let dir = (b - a).normalized();
    let f = Vec2::from_angle(obb.heading);
    let cos = dir.dot(f).abs();
    let sin = dir.cross(f).abs();
    let across = obb.half_len * sin + obb.half_wid * cos;
    if lat > half_corridor + across {
        return None;
    }
    let along = obb.half_len * cos + obb.half_wid * sin;
    Some(s_o - along - (s + HALF_LENGTH))
}

/// Physical stopping distance under full braking from `speed`.
pub fn braking_distance(speed: f64) -> f64 {
    speed * speed / (2.0 * BRAKE_DECEL)
}
