//! Dense lane-center polyline for a planned route.

use crate::error::{Result, SimError};
use crate::geom::Vec2;
use crate::town::{Approach, Route, Town, LANE_OFFSET, STOP_LINE};

/// Distance the route is trimmed from its first and last node centers.
pub const END_TRIM: f64 = 8.0;
pub const TURN_RADIUS: f64 = 4.0;
const STRAIGHT_STEP: f64 = 0.5;
const ARC_STEP: f64 = 0.25;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct StopPoint {
    pub node: usize,
    pub approach: Approach,
    /// Arc length of the stop line along the path.
    pub s: f64,
}

#[derive(Clone, Debug)]
pub struct LanePath {
    pub points: Vec<Vec2>,
    /// Cumulative arc length at each point.
    pub s: Vec<f64>,
    /// Unsigned curvature at each point.
    pub curvature: Vec<f64>,
    pub stops: Vec<StopPoint>,
    /// Arc length and position of each route node after the first, where
    /// the final entry is the path end.
    pub goals: Vec<(f64, Vec2)>,
}

fn push_line(points: &mut Vec<Vec2>, curv: &mut Vec<f64>, to: Vec2) {
    let from = *points.last().unwrap();
    let n = ((to.dist(from) / STRAIGHT_STEP).ceil() as usize).max(1);
    for i in 1..=n {
        points.push(from + (to - from) * (i as f64 / n as f64));
        curv.push(0.0);
    }
}

impl LanePath {
    /// Right-hand lane path along `route`, with 90° corners rounded.
    pub fn from_route(town: &Town, route: &Route) -> Result<Self> {
        let nodes = &route.nodes;
        if nodes.len() < 2 {
            return Err(SimError::Config("a drivable route needs at least two nodes".into()));
        }
        let dirs: Vec<Vec2> = nodes
            .windows(2)
            .map(|w| (town.node(w[1]) - town.node(w[0])).normalized())
            .collect();
        let first = town.node(nodes[0]) + dirs[0] * END_TRIM + dirs[0].right() * LANE_OFFSET;
        let mut points = vec![first];
        let mut curvature = vec![0.0];
        let mut goal_points = Vec::new();
        for i in 1..nodes.len() - 1 {
            let (din, dout) = (dirs[i - 1], dirs[i]);
            let center = town.node(nodes[i]);
            if din.dot(dout) > 0.99 {
                let p = center + din.right() * LANE_OFFSET;
                push_line(&mut points, &mut curvature, p);
                goal_points.push(p);
                continue;
            }
            let corner = center + din.right() * LANE_OFFSET + dout.right() * LANE_OFFSET;
            let t1 = corner - din * TURN_RADIUS;
            let _t2 = corner + dout * TURN_RADIUS;
            push_line(&mut points, &mut curvature, t1);
            let right_turn = din.cross(dout) < 0.0;
            let normal = if right_turn { din.right() } else { din.left() };
            let origin = t1 + normal * TURN_RADIUS;
            let a0 = (t1 - origin).y.atan2((t1 - origin).x);
            let sweep = if right_turn { -std::f64::consts::FRAC_PI_2 } else { std::f64::consts::FRAC_PI_2 };
            let n = (TURN_RADIUS * sweep.abs() / ARC_STEP).ceil() as usize;
            for k in 1..=n {
                let a = a0 + sweep * k as f64 / n as f64;
                points.push(origin + Vec2::from_angle(a) * TURN_RADIUS);
                curvature.push(1.0 / TURN_RADIUS);
            }
            goal_points.push(corner);
        }
        let last_dir = *dirs.last().unwrap();
        let end = town.node(*nodes.last().unwrap()) - last_dir * END_TRIM + last_dir.right() * LANE_OFFSET;
        push_line(&mut points, &mut curvature, end);
        goal_points.push(end);

        let mut s = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        s.push(0.0);
        for w in points.windows(2) {
            acc += w[1].dist(w[0]);
            s.push(acc);
        }
        let mut path = Self {
            points,
            s,
            curvature,
            stops: Vec::new(),
            goals: Vec::new(),
        };
        for i in 1..nodes.len() - 1 {
            let approach = Approach::from_direction(dirs[i - 1]);
            let line = town.node(nodes[i]) - dirs[i - 1] * STOP_LINE + dirs[i - 1].right() * LANE_OFFSET;
            let (s, _) = path.project(line, 0.0, f64::INFINITY);
            path.stops.push(StopPoint {
                node: nodes[i],
                approach,
                s,
            });
        }
        path.goals = goal_points
            .into_iter()
            .map(|p| (path.project(p, 0.0, f64::INFINITY).0, p))
            .collect();
        Ok(path)
    }

    pub fn length(&self) -> f64 {
        *self.s.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        match self.s.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.s.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.s.len() - 2),
        }
    }

    /// Point at arc length `s`, clamped to the path, extrapolating straight
    /// past the end.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let len = self.length();
        if s > len {
            let n = self.points.len();
            let dir = (self.points[n - 1] - self.points[n - 2]).normalized();
            return self.points[n - 1] + dir * (s - len);
        }
        let s = s.max(0.0);
        let i = self.segment_at(s);
        let span = self.s[i + 1] - self.s[i];
        let t = if span > 0.0 { (s - self.s[i]) / span } else { 0.0 };
        self.points[i] + (self.points[i + 1] - self.points[i]) * t
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        if s >= self.length() || s < 0.0 {
            return 0.0;
        }
        let i = self.segment_at(s);
        self.curvature[i + 1]
    }

    /// Closest point on the path among segments whose arc length lies in
    /// `[lo, hi]`; returns `(s, distance)`.
    pub fn project(&self, p: Vec2, lo: f64, hi: f64) -> (f64, f64) {
        let start = self.segment_at(lo.max(0.0));
        let mut best = (f64::INFINITY, 0.0);
        for i in start..self.points.len() - 1 {
            if self.s[i] > hi {
                break;
            }
            let (a, b) = (self.points[i], self.points[i + 1]);
            let ab = b - a;
            let len2 = ab.dot(ab);
            let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let d = p.dist(a + ab * t);
            if d < best.0 {
                best = (d, self.s[i] + t * (self.s[i + 1] - self.s[i]));
            }
        }
        (best.1, best.0)
    }
}
