use std::ops::{Add, Mul, Neg, Sub};

#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Self {
        self * (1.0 / self.norm())
    }

    /// Unit vector to the right of `self` in a counter-clockwise world frame.
    pub fn right(self) -> Self {
        Self::new(self.y, -self.x)
    }

    pub fn left(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn dist(self, o: Self) -> f64 {
        (self - o).norm()
    }
}

impl Add for Vec2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Position and heading (radians, counter-clockwise from +x).
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Pose {
    pub pos: Vec2,
    pub heading: f64,
}

impl Pose {
    pub fn forward(&self) -> Vec2 {
        Vec2::from_angle(self.heading)
    }

    /// World point expressed in the ego frame (`x` forward, `y` right).
    pub fn to_ego(&self, p: Vec2) -> Vec2 {
        let d = p - self.pos;
        let f = self.forward();
        Vec2::new(d.dot(f), d.dot(f.right()))
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        let f = self.forward();
        self.pos + f * p.x + f.right() * p.y
    }
}

/// Oriented rectangle with a vertical extent from the ground.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub half_len: f64,
    pub half_wid: f64,
    pub height: f64,
}

impl Obb {
    pub fn axis_aligned(x0: f64, y0: f64, x1: f64, y1: f64, height: f64) -> Self {
        Self {
            center: Vec2::new((x0 + x1) / 2.0, (y0 + y1) / 2.0),
            heading: 0.0,
            half_len: (x1 - x0).abs() / 2.0,
            half_wid: (y1 - y0).abs() / 2.0,
            height,
        }
    }

    pub fn local(&self, p: Vec2) -> Vec2 {
        let f = Vec2::from_angle(self.heading);
        let d = p - self.center;
        Vec2::new(d.dot(f), d.dot(f.left()))
    }

    /// Distance from `p` to the rectangle (zero inside).
    pub fn distance(&self, p: Vec2) -> f64 {
        let l = self.local(p);
        let dx = (l.x.abs() - self.half_len).max(0.0);
        let dy = (l.y.abs() - self.half_wid).max(0.0);
        dx.hypot(dy)
    }

    pub fn overlaps_circle(&self, c: Vec2, r: f64) -> bool {
        self.distance(c) < r
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::from_angle(self.heading);
        let l = f.left();
        let (a, b) = (f * self.half_len, l * self.half_wid);
        [self.center + a + b, self.center + a - b, self.center - a - b, self.center - a + b]
    }

    /// Entry distance of the ray `origin + t·dir` (3D, `dir` not necessarily
    /// unit) into the box, if it hits with `t > 0`.
    pub fn ray_hit(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let f = Vec2::from_angle(self.heading);
        let l = f.left();
        let o = Vec2::new(origin[0], origin[1]) - self.center;
        let d = Vec2::new(dir[0], dir[1]);
        let lo = [o.dot(f), o.dot(l), origin[2]];
        let ld = [d.dot(f), d.dot(l), dir[2]];
        let lo_b = [-self.half_len, -self.half_wid, 0.0];
        let hi_b = [self.half_len, self.half_wid, self.height];
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for k in 0..3 {
            if ld[k].abs() < 1e-12 {
                if lo[k] < lo_b[k] || lo[k] > hi_b[k] {
                    return None;
                }
                continue;
            }
            let a = (lo_b[k] - lo[k]) / ld[k];
            let b = (hi_b[k] - lo[k]) / ld[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
            if t0 > t1 {
                return None;
            }
        }
        (t0 > 0.0).then_some(t0)
    }
}

/// Smallest `t > 0` where `origin + t·dir` meets a sphere.
pub fn ray_sphere(origin: [f64; 3], dir: [f64; 3], center: [f64; 3], radius: f64) -> Option<f64> {
    let oc = [origin[0] - center[0], origin[1] - center[1], origin[2] - center[2]];
    let a = dir.iter().map(|v| v * v).sum::<f64>();
    let b = 2.0 * (0..3).map(|k| oc[k] * dir[k]).sum::<f64>();
    let c = oc.iter().map(|v| v * v).sum::<f64>() - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / (2.0 * a);
    (t > 0.0).then_some(t)
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ego_frame_has_y_to_the_right() {
        let pose = Pose {
            pos: Vec2::new(1.0, 1.0),
            heading: std::f64::consts::FRAC_PI_2,
        };
        let p = pose.to_ego(Vec2::new(2.0, 3.0));
        assert!((p.x - 2.0).abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12);
        let back = pose.to_world(p);
        assert!(back.dist(Vec2::new(2.0, 3.0)) < 1e-12);
    }

    #[test]
    fn ray_enters_box_front_face() {
        let b = Obb::axis_aligned(5.0, -1.0, 9.0, 1.0, 1.5);
        let t = b.ray_hit([0.0, 0.0, 1.0], [1.0, 0.0, 0.0]).unwrap();
        assert!((t - 5.0).abs() < 1e-12);
        assert!(b.ray_hit([0.0, 0.0, 2.0], [1.0, 0.0, 0.0]).is_none());
        assert!(b.ray_hit([0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn circle_box_overlap() {
        let b = Obb {
            center: Vec2::new(0.0, 0.0),
            heading: 0.3,
            half_len: 2.0,
            half_wid: 1.0,
            height: 1.0,
        };
        assert!(b.overlaps_circle(Vec2::new(0.0, 0.0), 0.1));
        assert!(!b.overlaps_circle(Vec2::new(0.0, 3.0), 0.5));
    }
}
