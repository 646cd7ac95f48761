//! Grid road network with signalized intersections, buildings and
//! mid-block crosswalks.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};
use crate::geom::{Obb, Vec2};

/// Half width of a two-lane road.
pub const ROAD_HALF_WIDTH: f64 = 3.5;
pub const LANE_OFFSET: f64 = 1.75;
/// Stop line distance from the intersection center, 1 m before the box.
pub const STOP_LINE: f64 = 4.5;
pub const CROSSWALK_WIDTH: f64 = 3.0;

pub const GREEN_STEPS: u32 = 40;
pub const YELLOW_STEPS: u32 = 20;
pub const ALL_RED_STEPS: u32 = 30;
pub const SLOT_STEPS: u32 = GREEN_STEPS + YELLOW_STEPS + ALL_RED_STEPS;

/// Direction of travel into an intersection.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Approach {
    Eastbound = 0,
    Northbound = 1,
    Westbound = 2,
    Southbound = 3,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Self::Eastbound, Self::Northbound, Self::Westbound, Self::Southbound];

    pub fn from_direction(d: Vec2) -> Self {
        if d.x.abs() >= d.y.abs() {
            if d.x > 0.0 {
                Self::Eastbound
            } else {
                Self::Westbound
            }
        } else if d.y > 0.0 {
            Self::Northbound
        } else {
            Self::Southbound
        }
    }

    pub fn direction(self) -> Vec2 {
        match self {
            Self::Eastbound => Vec2::new(1.0, 0.0),
            Self::Northbound => Vec2::new(0.0, 1.0),
            Self::Westbound => Vec2::new(-1.0, 0.0),
            Self::Southbound => Vec2::new(0.0, -1.0),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum LightState {
    Green,
    Yellow,
    Red,
}

/// Fixed-time signal for one approach. Times are in simulation steps.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Light {
    pub node: usize,
    pub approach: Approach,
    pub period: u32,
    pub offset: u32,
}

impl Light {
    pub fn state(&self, step: u64) -> LightState {
        let phase = ((step + self.offset as u64) % self.period as u64) as u32;
        if phase < GREEN_STEPS {
            LightState::Green
        } else if phase < GREEN_STEPS + YELLOW_STEPS {
            LightState::Yellow
        } else {
            LightState::Red
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Crosswalk {
    pub edge: (usize, usize),
    pub center: Vec2,
    /// Unit vector along the road.
    pub along: Vec2,
}

impl Crosswalk {
    /// Start and end of the pedestrian path across the road.
    pub fn ends(&self) -> (Vec2, Vec2) {
        let across = self.along.left() * (ROAD_HALF_WIDTH + 1.5);
        (self.center - across, self.center + across)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Town {
    pub seed: u64,
    pub size: usize,
    /// Node coordinates in millimeters, so path costs add exactly.
    pub nodes_mm: Vec<(i64, i64)>,
    pub edges: Vec<(usize, usize)>,
    pub lights: Vec<Light>,
    pub buildings: Vec<Obb>,
    pub crosswalks: Vec<Crosswalk>,
    adjacency: Vec<Vec<usize>>,
}

impl Town {
    pub fn node_count(&self) -> usize {
        self.nodes_mm.len()
    }

    pub fn node(&self, i: usize) -> Vec2 {
        let (x, y) = self.nodes_mm[i];
        Vec2::new(x as f64 / 1000.0, y as f64 / 1000.0)
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn edge_length_mm(&self, a: usize, b: usize) -> u64 {
        let (pa, pb) = (self.nodes_mm[a], self.nodes_mm[b]);
        (pa.0 - pb.0).unsigned_abs() + (pa.1 - pb.1).unsigned_abs()
    }

    pub fn light(&self, node: usize, approach: Approach) -> Option<&Light> {
        self.lights.iter().find(|l| l.node == node && l.approach == approach)
    }

    /// Stop-line segment endpoints for an approach, spanning the inbound lane.
    pub fn stop_line(&self, node: usize, approach: Approach) -> (Vec2, Vec2) {
        let u = approach.direction();
        let base = self.node(node) - u * STOP_LINE;
        (base, base + u.right() * ROAD_HALF_WIDTH)
    }

    /// Whether `p` lies on a road surface (segments and intersection boxes).
    pub fn on_road(&self, p: Vec2) -> bool {
        self.edges.iter().any(|&(a, b)| {
            let (pa, pb) = (self.node(a), self.node(b));
            let lo = Vec2::new(pa.x.min(pb.x), pa.y.min(pb.y));
            let hi = Vec2::new(pa.x.max(pb.x), pa.y.max(pb.y));
            p.x >= lo.x - ROAD_HALF_WIDTH
                && p.x <= hi.x + ROAD_HALF_WIDTH
                && p.y >= lo.y - ROAD_HALF_WIDTH
                && p.y <= hi.y + ROAD_HALF_WIDTH
        })
    }

    /// Line-oriented text form; identical towns serialize identically.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for (i, &(x, y)) in self.nodes_mm.iter().enumerate() {
            writeln!(s, "node {i} {:.3} {:.3}", x as f64 / 1000.0, y as f64 / 1000.0).unwrap();
        }
        for &(a, b) in &self.edges {
            writeln!(s, "edge {a} {b}").unwrap();
        }
        for l in &self.lights {
            writeln!(
                s,
                "light {} {} {:.1} {:.1}",
                l.node,
                l.approach as u8,
                l.period as f64 / 10.0,
                l.offset as f64 / 10.0
            )
            .unwrap();
        }
        for b in &self.buildings {
            let c = b.corners();
            let (x0, x1) = (c.iter().map(|p| p.x).fold(f64::MAX, f64::min), c.iter().map(|p| p.x).fold(f64::MIN, f64::max));
            let (y0, y1) = (c.iter().map(|p| p.y).fold(f64::MAX, f64::min), c.iter().map(|p| p.y).fold(f64::MIN, f64::max));
            writeln!(s, "building {x0:.3} {y0:.3} {x1:.3} {y1:.3} {:.3}", b.height).unwrap();
        }
        for c in &self.crosswalks {
            writeln!(s, "crosswalk {} {} {:.3} {:.3}", c.edge.0, c.edge.1, c.center.x, c.center.y).unwrap();
        }
        s
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.node_count()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &m in self.neighbors(n) {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Deterministic `size × size` grid town. Node `i` sits at row `i / size`,
/// column `i % size`.
pub fn build_town(seed: u64, size: usize) -> Result<Town> {
    if size < 2 {
        return Err(SimError::Config(format!("town size {size} below 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coord = |rng: &mut ChaCha8Rng| {
        let mut v = vec![0i64];
        for _ in 1..size {
            let last = *v.last().unwrap();
            v.push(last + rng.random_range(40_000..=60_000));
        }
        v
    };
    let xs = coord(&mut rng);
    let ys = coord(&mut rng);
    let nodes_mm: Vec<(i64, i64)> = (0..size * size).map(|i| (xs[i % size], ys[i / size])).collect();

    let mut edges = Vec::new();
    for i in 0..size * size {
        let (r, c) = (i / size, i % size);
        if c + 1 < size {
            edges.push((i, i + 1));
        }
        if r + 1 < size {
            edges.push((i, i + size));
        }
    }
    edges.sort_unstable();
    let mut adjacency = vec![Vec::new(); size * size];
    for &(a, b) in &edges {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }

    let mut town = Town {
        seed,
        size,
        nodes_mm,
        edges,
        lights: Vec::new(),
        buildings: Vec::new(),
        crosswalks: Vec::new(),
        adjacency,
    };

    for n in 0..town.node_count() {
        let approaches: Vec<Approach> = {
            let mut v: Vec<Approach> = town
                .neighbors(n)
                .iter()
                .map(|&m| Approach::from_direction(town.node(n) - town.node(m)))
                .collect();
            v.sort_unstable();
            v
        };
        let period = SLOT_STEPS * approaches.len() as u32;
        let start = rng.random_range(0..period);
        for (slot, &approach) in approaches.iter().enumerate() {
            // Green while (step + start) mod period lies in this approach's slot.
            let offset = (start + period - SLOT_STEPS * slot as u32) % period;
            town.lights.push(Light {
                node: n,
                approach,
                period,
                offset,
            });
        }
    }

    let setback = ROAD_HALF_WIDTH + 5.0;
    for r in 0..size - 1 {
        for c in 0..size - 1 {
            let (x0, x1) = (xs[c] as f64 / 1000.0 + setback, xs[c + 1] as f64 / 1000.0 - setback);
            let (y0, y1) = (ys[r] as f64 / 1000.0 + setback, ys[r + 1] as f64 / 1000.0 - setback);
            let (mx, my) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            for (qx0, qx1, qy0, qy1) in [(x0, mx, y0, my), (mx, x1, y0, my), (x0, mx, my, y1), (mx, x1, my, y1)] {
                if !rng.random_bool(0.7) {
                    continue;
                }
                let (w, h) = (qx1 - qx0 - 1.0, qy1 - qy0 - 1.0);
                let (bw, bh) = (w * rng.random_range(0.6..1.0), h * rng.random_range(0.6..1.0));
                let bx = qx0 + 0.5 + rng.random_range(0.0..=(w - bw));
                let by = qy0 + 0.5 + rng.random_range(0.0..=(h - bh));
                let height = rng.random_range(6.0..15.0);
                town.buildings.push(Obb::axis_aligned(bx, by, bx + bw, by + bh, height));
            }
        }
    }

    for &(a, b) in &town.edges.clone() {
        if !rng.random_bool(0.5) {
            continue;
        }
        let t = rng.random_range(0.35..0.65);
        let (pa, pb) = (town.node(a), town.node(b));
        town.crosswalks.push(Crosswalk {
            edge: (a, b),
            center: pa + (pb - pa) * t,
            along: (pb - pa).normalized(),
        });
    }
    Ok(town)
}

/// Node sequence from `start` to `end` with its length in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub nodes: Vec<usize>,
    pub length: f64,
}

/// A* over segment lengths. Costs are integer millimeters so equal-cost
/// alternatives compare exactly; among them the smaller predecessor index wins.
pub fn plan_route(town: &Town, start: usize, end: usize) -> Result<Route> {
    let n = town.node_count();
    for node in [start, end] {
        if node >= n {
            return Err(SimError::UnknownNode(node));
        }
    }
    let h = |i: usize| {
        let (a, b) = (town.nodes_mm[i], town.nodes_mm[end]);
        (a.0 - b.0).unsigned_abs() + (a.1 - b.1).unsigned_abs()
    };
    let mut g = vec![u64::MAX; n];
    let mut prev = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[start] = 0;
    open.push(Reverse((h(start), start)));
    while let Some(Reverse((_, cur))) = open.pop() {
        if closed[cur] {
            continue;
        }
        closed[cur] = true;
        if cur == end {
            break;
        }
        for &next in town.neighbors(cur) {
            if closed[next] {
                continue;
            }
            let cost = g[cur] + town.edge_length_mm(cur, next);
            if cost < g[next] || (cost == g[next] && cur < prev[next]) {
                g[next] = cost;
                prev[next] = cur;
                open.push(Reverse((cost + h(next), next)));
            }
        }
    }
    if g[end] == u64::MAX {
        return Err(SimError::Unreachable { from: start, to: end });
    }
    let mut nodes = vec![end];
    while *nodes.last().unwrap() != start {
        nodes.push(prev[*nodes.last().unwrap()]);
    }
    nodes.reverse();
    Ok(Route {
        nodes,
        length: g[end] as f64 / 1000.0,
    })
}
