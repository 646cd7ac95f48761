//! Synthetic sensors: pinhole camera with semantic labels, and a ray-cast LiDAR.

use crate::bev::{crop_center, rasterize_lidar, BevGrid, Image, Point3, DEFAULT_HEIGHT_SPLIT, FRONT_SIZE};
use crate::geom::{ray_sphere, Obb, Pose, Vec2};
use crate::town::{Approach, LightState, Town, CROSSWALK_WIDTH, ROAD_HALF_WIDTH, STOP_LINE};
use crate::vehicle::VehicleState;
use crate::world::{Navigator, World, TL_SENSING_RANGE};

pub const RAW_WIDTH: usize = 400;
pub const RAW_HEIGHT: usize = 300;
pub const FOV_DEG: f64 = 100.0;
pub const CAMERA_HEIGHT: f64 = 2.0;
pub const CAMERA_FORWARD: f64 = 1.0;
pub const LIDAR_HEIGHT: f64 = 2.5;
pub const LIDAR_AZIMUTHS: usize = 64;
pub const LIDAR_ELEVATIONS: usize = 16;
pub const LIDAR_RANGE: f64 = 50.0;
pub const TL_RADIUS: f64 = 0.5;
pub const TL_HEIGHT: f64 = 3.0;
const MAX_GROUND_RANGE: f64 = 150.0;

pub const SEMANTIC_CLASSES: usize = 7;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Semantic {
    Void = 0,
    Road = 1,
    LaneMarking = 2,
    Vehicle = 3,
    Pedestrian = 4,
    TrafficLight = 5,
    Building = 6,
}

impl Semantic {
    fn color(self) -> [u8; 3] {
        match self {
            Self::Void => [70, 110, 60],
            Self::Road => [95, 95, 95],
            Self::LaneMarking => [235, 235, 235],
            Self::Vehicle => [30, 60, 200],
            Self::Pedestrian => [215, 30, 30],
            Self::TrafficLight => [0, 0, 0],
            Self::Building => [130, 80, 40],
        }
    }
}

const SKY: [u8; 3] = [150, 190, 230];

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum TlState {
    Stop = 0,
    Proceed = 1,
}

/// One sensed frame in the ego frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub front: Image,
    pub bev: BevGrid,
    pub semantics: Image,
    pub tl_state: TlState,
    /// Next route target in the ego frame (`x` forward, `y` right).
    pub goal: Vec2,
    pub pose: Pose,
    pub speed: f64,
}

#[derive(Copy, Clone)]
struct Solid {
    obb: Obb,
    class: Semantic,
}

/// Signal head for `approach`, at the far-right corner of the intersection.
pub fn signal_head(town: &Town, node: usize, approach: Approach) -> [f64; 3] {
    let u = approach.direction();
    let p = town.node(node) + u * (ROAD_HALF_WIDTH + 0.5) + u.right() * (ROAD_HALF_WIDTH + 0.5);
    [p.x, p.y, TL_HEIGHT]
}

fn solids(world: &World) -> Vec<Solid> {
    let mut v: Vec<Solid> = world
        .town
        .buildings
        .iter()
        .map(|&obb| Solid {
            obb,
            class: Semantic::Building,
        })
        .collect();
    v.extend(world.npcs.iter().filter(|n| n.active).map(|n| Solid {
        obb: n.state.obb(),
        class: Semantic::Vehicle,
    }));
    v.extend(world.peds.iter().map(|p| Solid {
        obb: p.obb(),
        class: Semantic::Pedestrian,
    }));
    v
}

/// Ground appearance at a world point.
fn ground_class(town: &Town, p: Vec2) -> Semantic {
    if !town.on_road(p) {
        return Semantic::Void;
    }
    for cw in &town.crosswalks {
        let d = p - cw.center;
        let along = d.dot(cw.along);
        let across = d.dot(cw.along.left());
        if along.abs() <= CROSSWALK_WIDTH / 2.0 && across.abs() <= ROAD_HALF_WIDTH {
            return if across.rem_euclid(1.0) < 0.5 {
                Semantic::LaneMarking
            } else {
                Semantic::Road
            };
        }
    }
    let mut in_box = false;
    for l in &town.lights {
        let u = l.approach.direction();
        let d = p - town.node(l.node);
        let along = d.dot(u);
        let right = d.dot(u.right());
        if along.abs() <= ROAD_HALF_WIDTH && right.abs() <= ROAD_HALF_WIDTH {
            in_box = true;
        }
        if (-STOP_LINE - 0.3..=-STOP_LINE).contains(&along) && (0.0..=ROAD_HALF_WIDTH).contains(&right) {
            return Semantic::LaneMarking;
        }
    }
    if in_box {
        return Semantic::Road;
    }
    for &(a, b) in &town.edges {
        let (pa, pb) = (town.node(a), town.node(b));
        let dir = (pb - pa).normalized();
        let d = p - pa;
        let along = d.dot(dir);
        if d.cross(dir).abs() < 0.1 && along > 0.0 && along < pa.dist(pb) && along.rem_euclid(4.0) < 2.0 {
            return Semantic::LaneMarking;
        }
    }
    Semantic::Road
}

/// Renders the 400×300 camera (colors and class ids), center-cropped to
/// 256×256. Only pixels inside the crop are traced.
pub fn render_camera(world: &World, ego: &VehicleState) -> (Image, Image) {
    let town = &world.town;
    let f = ego.pose.forward();
    let r = f.right();
    let cam2 = ego.pose.pos + f * CAMERA_FORWARD;
    let cam = [cam2.x, cam2.y, CAMERA_HEIGHT];
    let focal = (RAW_WIDTH as f64 / 2.0) / (FOV_DEG.to_radians() / 2.0).tan();
    let (cx, cy) = (RAW_WIDTH as f64 / 2.0, RAW_HEIGHT as f64 / 2.0);
    let ray = |u: usize, v: usize| -> [f64; 3] {
        let right = (u as f64 + 0.5 - cx) / focal;
        let up = -(v as f64 + 0.5 - cy) / focal;
        let d = f + r * right;
        [d.x, d.y, up]
    };
    let project = |p: [f64; 3]| -> Option<(f64, f64)> {
        let d = Vec2::new(p[0] - cam[0], p[1] - cam[1]);
        let depth = d.dot(f);
        if depth < 0.05 {
            return None;
        }
        Some((cx + d.dot(r) / depth * focal, cy - (p[2] - cam[2]) / depth * focal))
    };

    let mut depth = vec![f64::INFINITY; RAW_WIDTH * RAW_HEIGHT];
    let mut class = vec![Semantic::Void; RAW_WIDTH * RAW_HEIGHT];
    let mut rgb = vec![SKY; RAW_WIDTH * RAW_HEIGHT];

    let (x0, y0) = ((RAW_WIDTH - FRONT_SIZE) / 2, (RAW_HEIGHT - FRONT_SIZE) / 2);
    let (x1, y1) = (x0 + FRONT_SIZE, y0 + FRONT_SIZE);
    let full = (x0, x1, y0, y1);
    let bounds = |pts: &[[f64; 3]]| -> Option<(usize, usize, usize, usize)> {
        let mut any_front = false;
        let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &p in pts {
            match project(p) {
                Some((u, v)) => {
                    any_front = true;
                    u0 = u0.min(u);
                    u1 = u1.max(u);
                    v0 = v0.min(v);
                    v1 = v1.max(v);
                }
                None => {
                    let d = Vec2::new(p[0] - cam[0], p[1] - cam[1]).dot(f);
                    if d > -60.0 {
                        return Some(full);
                    }
                }
            }
        }
        if !any_front {
            return None;
        }
        let clampu = |x: f64| x.clamp(x0 as f64, x1 as f64) as usize;
        let clampv = |x: f64| x.clamp(y0 as f64, y1 as f64) as usize;
        let b = (clampu(u0.floor() - 1.0), clampu(u1.ceil() + 1.0), clampv(v0.floor() - 1.0), clampv(v1.ceil() + 1.0));
        (b.0 < b.1 && b.2 < b.3).then_some(b)
    };

    for v in y0..y1 {
        for u in x0..x1 {
            let d = ray(u, v);
            if d[2] < 0.0 {
                let t = CAMERA_HEIGHT / -d[2];
                let p = Vec2::new(cam[0] + d[0] * t, cam[1] + d[1] * t);
                if p.dist(cam2) < MAX_GROUND_RANGE {
                    let c = ground_class(town, p);
                    let i = v * RAW_WIDTH + u;
                    depth[i] = t;
                    class[i] = c;
                    rgb[i] = c.color();
                }
            }
        }
    }

    for solid in solids(world) {
        let corners: Vec<[f64; 3]> = solid
            .obb
            .corners()
            .iter()
            .flat_map(|c| [[c.x, c.y, 0.0], [c.x, c.y, solid.obb.height]])
            .collect();
        let Some((u0, u1, v0, v1)) = bounds(&corners) else { continue };
        let shade = solid.class.color();
        for v in v0..v1 {
            for u in u0..u1 {
                if let Some(t) = solid.obb.ray_hit(cam, ray(u, v)) {
                    let i = v * RAW_WIDTH + u;
                    if t < depth[i] {
                        depth[i] = t;
                        class[i] = solid.class;
                        rgb[i] = shade;
                    }
                }
            }
        }
    }

    for l in &town.lights {
        let head = signal_head(town, l.node, l.approach);
        let lo = [head[0] - TL_RADIUS, head[1] - TL_RADIUS, head[2] - TL_RADIUS];
        let hi = [head[0] + TL_RADIUS, head[1] + TL_RADIUS, head[2] + TL_RADIUS];
        let pts: Vec<[f64; 3]> = (0..8)
            .map(|k| [if k & 1 == 0 { lo[0] } else { hi[0] }, if k & 2 == 0 { lo[1] } else { hi[1] }, if k & 4 == 0 { lo[2] } else { hi[2] }])
            .collect();
        let Some((u0, u1, v0, v1)) = bounds(&pts) else { continue };
        let color = match l.state(world.step) {
            LightState::Green => [0, 220, 0],
            LightState::Yellow => [235, 200, 0],
            LightState::Red => [235, 0, 0],
        };
        for v in v0..v1 {
            for u in u0..u1 {
                if let Some(t) = ray_sphere(cam, ray(u, v), head, TL_RADIUS) {
                    let i = v * RAW_WIDTH + u;
                    if t < depth[i] {
                        depth[i] = t;
                        class[i] = Semantic::TrafficLight;
                        rgb[i] = color;
                    }
                }
            }
        }
    }

    let mut image = Image::new(RAW_WIDTH, RAW_HEIGHT, 3);
    for (dst, px) in image.data.chunks_exact_mut(3).zip(&rgb) {
        dst.copy_from_slice(px);
    }
    let labels = Image {
        width: RAW_WIDTH,
        height: RAW_HEIGHT,
        channels: 1,
        data: class.iter().map(|&c| c as u8).collect(),
    };
    (
        crop_center(&image, FRONT_SIZE).expect("raw frame larger than crop"),
        crop_center(&labels, FRONT_SIZE).expect("raw frame larger than crop"),
    )
}

/// Beam directions as `(azimuth, elevation)` in radians; azimuth is positive
/// to the right.
pub fn lidar_beams() -> Vec<(f64, f64)> {
    let mut beams = Vec::with_capacity(LIDAR_AZIMUTHS * LIDAR_ELEVATIONS);
    for i in 0..LIDAR_AZIMUTHS {
        let az = (-90.0 + (i as f64 + 0.5) * 180.0 / LIDAR_AZIMUTHS as f64).to_radians();
        for j in 0..LIDAR_ELEVATIONS {
            let el = (-24.0 + j as f64 * 23.0 / (LIDAR_ELEVATIONS - 1) as f64).to_radians();
            beams.push((az, el));
        }
    }
    beams
}

/// Casts every beam against the ground plane and solid boxes; returns hits
/// in the ego frame.
pub fn cast_lidar(world: &World, ego: &Pose) -> Vec<Point3> {
    let boxes: Vec<Obb> = solids(world).into_iter().map(|s| s.obb).collect();
    let near: Vec<&Obb> = boxes
        .iter()
        .filter(|b| b.distance(ego.pos) < LIDAR_RANGE)
        .collect();
    let f = ego.forward();
    let r = f.right();
    let origin = [ego.pos.x, ego.pos.y, LIDAR_HEIGHT];
    let mut points = Vec::new();
    for (az, el) in lidar_beams() {
        let (fx, fy, fz) = (el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        let d2 = f * fx + r * fy;
        let dir = [d2.x, d2.y, fz];
        let ground = if fz < 0.0 { LIDAR_HEIGHT / -fz } else { f64::INFINITY };
        let t_hit = near
            .iter()
            .filter_map(|b| b.ray_hit(origin, dir))
            .fold(ground, f64::min);
        if t_hit <= LIDAR_RANGE {
            let z = if t_hit == ground { 0.0 } else { (LIDAR_HEIGHT + t_hit * fz).max(0.0) };
            points.push(Point3 {
                x: t_hit * fx,
                y: t_hit * fy,
                z,
            });
        }
    }
    points
}

/// Full observation for the ego.
pub fn sense(world: &World, ego: &VehicleState, nav: &Navigator) -> Observation {
    let (front, semantics) = render_camera(world, ego);
    let cloud = cast_lidar(world, &ego.pose);
    let (bev, _) = rasterize_lidar(&cloud, DEFAULT_HEIGHT_SPLIT);
    Observation {
        front,
        bev,
        semantics,
        tl_state: tl_state(world, nav),
        goal: ego.pose.to_ego(nav.goal()),
        pose: ego.pose,
        speed: ego.speed,
    }
}

/// `Stop` when the signal governing the ego's approach is red and within
/// sensing range.
pub fn tl_state(world: &World, nav: &Navigator) -> TlState {
    match nav.next_signal(&world.town) {
        Some((light, d)) if d <= TL_SENSING_RANGE && light.state(world.step) == LightState::Red => TlState::Stop,
        _ => TlState::Proceed,
    }
}
