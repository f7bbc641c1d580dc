//! Parametric capsule bodies with a simple walking gait.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Point3;

/// Minimum height difference between non-twin identities of one dataset.
pub const MIN_HEIGHT_GAP: f64 = 0.02;

/// Heights of the shorter and taller member of a scale-twin pair.
pub const TWIN_HEIGHTS: (f64, f64) = (1.60, 1.84);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gait {
    /// Step cycles per second; zero means a static pose.
    pub frequency: f64,
    /// Peak arm swing about the shoulder, radians.
    pub arm_swing: f64,
    /// Phase offset, radians.
    pub phase: f64,
}

/// Segment lengths as fractions of standing height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimbFractions {
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub height: f64,
    pub shoulder_width: f64,
    pub torso_radius: f64,
    pub limbs: LimbFractions,
    /// Surface samples per square meter.
    pub density: f64,
    pub gait: Gait,
}

/// Everything in a body except its height, in height-relative units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proportions {
    pub shoulder_width: f64,
    pub torso_radius: f64,
    pub limbs: LimbFractions,
}

/// A capsule: the set of points within `radius` of the segment `a`–`b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub a: Point3,
    pub b: Point3,
    pub radius: f64,
}

impl Capsule {
    fn area(&self) -> f64 {
        2.0 * PI * self.radius * dist(self.a, self.b) + 4.0 * PI * self.radius * self.radius
    }

    /// Uniform sample on the surface.
    fn sample<R: Rng>(&self, rng: &mut R) -> Point3 {
        let axis = sub(self.b, self.a);
        let len = norm(axis);
        let cyl = 2.0 * PI * self.radius * len;
        if rng.random::<f64>() * self.area() < cyl {
            let dir = scale(axis, 1.0 / len);
            let (u, v) = basis(dir);
            let t: f64 = rng.random();
            let th = rng.random::<f64>() * 2.0 * PI;
            let off = add(scale(u, th.cos() * self.radius), scale(v, th.sin() * self.radius));
            add(add(self.a, scale(axis, t)), off)
        } else {
            let z = rng.random::<f64>() * 2.0 - 1.0;
            let th = rng.random::<f64>() * 2.0 * PI;
            let s = (1.0 - z * z).sqrt();
            let dir = [s * th.cos(), s * th.sin(), z];
            let cap = if len > 0.0 && dot(dir, axis) >= 0.0 { self.b } else { self.a };
            add(cap, scale(dir, self.radius))
        }
    }
}

impl BodyModel {
    pub fn proportions(&self) -> Proportions {
        Proportions {
            shoulder_width: self.shoulder_width / self.height,
            torso_radius: self.torso_radius / self.height,
            limbs: self.limbs,
        }
    }

    pub fn limb_radius(&self) -> f64 {
        0.4 * self.torso_radius
    }

    pub fn head_radius(&self) -> f64 {
        0.065 * self.height
    }

    /// Body of the same proportions and gait at another height, with the
    /// density rescaled so the expected sample count is unchanged.
    pub fn rescaled(&self, height: f64) -> Self {
        let s = height / self.height;
        Self {
            height,
            shoulder_width: self.shoulder_width * s,
            torso_radius: self.torso_radius * s,
            limbs: self.limbs,
            density: self.density / (s * s),
            gait: self.gait,
        }
    }

    /// Capsules of the posed body in its own frame (x forward, y left, z up),
    /// standing on the floor, at time `t` seconds.
    pub fn pose(&self, t: f64) -> Vec<Capsule> {
        let h = self.height;
        let l = self.limbs;
        let rl = self.limb_radius();
        let rh = self.head_radius();
        let phi = 2.0 * PI * self.gait.frequency * t + self.gait.phase;
        let (thigh, shin) = (l.thigh * h, l.shin * h);
        let (upper, fore) = (l.upper_arm * h, l.forearm * h);
        let hip_z = thigh + shin + rl;
        let head_c = h - rh;
        let shoulder_z = head_c - rh - 0.02 * h - 0.5 * self.torso_radius;
        let hip_y = (0.6 * self.torso_radius).max(rl);
        let arm_y = 0.5 * self.shoulder_width;

        let swing = if self.gait.frequency > 0.0 { 0.35 } else { 0.0 };
        let arm = if self.gait.frequency > 0.0 { self.gait.arm_swing } else { 0.0 };
        let mut caps = Vec::with_capacity(10);
        caps.push(Capsule {
            a: [0.0, 0.0, head_c],
            b: [0.0, 0.0, head_c],
            radius: rh,
        });
        caps.push(Capsule {
            a: [0.0, 0.0, hip_z],
            b: [0.0, 0.0, shoulder_z],
            radius: self.torso_radius,
        });
        for (side, sign) in [(0.0, 1.0), (PI, -1.0)] {
            let leg = swing * (phi + side).sin();
            let knee = if swing > 0.0 { 0.25 * (1.0 - (phi + side).cos()) } else { 0.0 };
            let hip = [0.0, sign * hip_y, hip_z];
            let knee_p = add(hip, limb_dir(leg, thigh));
            let foot = add(knee_p, limb_dir(leg - knee, shin));
            caps.push(Capsule { a: hip, b: knee_p, radius: rl });
            caps.push(Capsule { a: knee_p, b: foot, radius: rl });

            let a = -arm * (phi + side).sin();
            let shoulder = [0.0, sign * arm_y, shoulder_z];
            let elbow = add(shoulder, limb_dir(a, upper));
            let hand = add(elbow, limb_dir(a + 0.25, fore));
            caps.push(Capsule { a: shoulder, b: elbow, radius: 0.9 * rl });
            caps.push(Capsule { a: elbow, b: hand, radius: 0.8 * rl });
        }
        // Keep the lowest surface point on the floor.
        let lowest = caps
            .iter()
            .map(|c| c.a[2].min(c.b[2]) - c.radius)
            .fold(f64::INFINITY, f64::min);
        for c in &mut caps {
            c.a[2] -= lowest;
            c.b[2] -= lowest;
        }
        caps
    }

    /// Surface samples of the body posed at time `t`, facing `heading`
    /// radians and standing at horizontal position `at`.
    pub fn sample_surface<R: Rng>(&self, t: f64, heading: f64, at: [f64; 2], rng: &mut R) -> Vec<Point3> {
        let caps = self.pose(t);
        let areas: Vec<f64> = caps.iter().map(Capsule::area).collect();
        let total: f64 = areas.iter().sum();
        let count = (self.density * total).round() as usize;
        let (s, c) = heading.sin_cos();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut pick = rng.random::<f64>() * total;
            let mut idx = 0;
            while idx + 1 < caps.len() && pick >= areas[idx] {
                pick -= areas[idx];
                idx += 1;
            }
            let p = caps[idx].sample(rng);
            out.push([c * p[0] - s * p[1] + at[0], s * p[0] + c * p[1] + at[1], p[2]]);
        }
        out
    }
}

fn limb_dir(angle: f64, len: f64) -> Point3 {
    [len * angle.sin(), 0.0, -len * angle.cos()]
}

fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

fn dist(a: Point3, b: Point3) -> f64 {
    norm(sub(a, b))
}

/// Two unit vectors completing `dir` to an orthonormal frame.
fn basis(dir: Point3) -> (Point3, Point3) {
    let helper = if dir[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = {
        let d = dot(helper, dir);
        let v = sub(helper, scale(dir, d));
        scale(v, 1.0 / norm(v))
    };
    let v = [
        dir[1] * u[2] - dir[2] * u[1],
        dir[2] * u[0] - dir[0] * u[2],
        dir[0] * u[1] - dir[1] * u[0],
    ];
    (u, v)
}

/// Draws proportions and gait; the height is supplied by the caller.
fn sample_shape<R: Rng>(rng: &mut R, height: f64, density: f64) -> BodyModel {
    let width = rng.random_range(0.20..0.27);
    let torso = rng.random_range(0.060..0.085);
    BodyModel {
        height,
        shoulder_width: width * height,
        torso_radius: torso * height,
        limbs: LimbFractions {
            upper_arm: rng.random_range(0.16..0.20),
            forearm: rng.random_range(0.13..0.17),
            thigh: rng.random_range(0.22..0.27),
            shin: rng.random_range(0.22..0.27),
        },
        density,
        gait: Gait {
            frequency: rng.random_range(1.6..2.2),
            arm_swing: rng.random_range(0.15..0.60),
            phase: rng.random_range(0.0..2.0 * PI),
        },
    }
}

/// One body with a height drawn from `[1.50, 2.00]` m.
pub fn sample_body<R: Rng>(rng: &mut R, density: f64) -> BodyModel {
    let height = rng.random_range(1.50..=2.00);
    sample_shape(rng, height, density)
}

/// `count` bodies whose heights differ pairwise by at least
/// [`MIN_HEIGHT_GAP`]. With `twin_pairs > 0` the first `2·twin_pairs`
/// bodies are scale twins instead: consecutive pairs share proportions and
/// gait, at the heights of [`TWIN_HEIGHTS`].
pub fn sample_bodies<R: Rng>(rng: &mut R, count: usize, twin_pairs: usize, density: f64) -> Vec<BodyModel> {
    let twins = twin_pairs.min(count / 2);
    let mut bodies = Vec::with_capacity(count);
    for _ in 0..twins {
        let short = sample_shape(rng, TWIN_HEIGHTS.0, density);
        bodies.push(short);
        bodies.push(short.rescaled(TWIN_HEIGHTS.1));
    }
    while bodies.len() < count {
        let candidate = sample_body(rng, density);
        let clear = bodies[2 * twins..]
            .iter()
            .all(|b| (b.height - candidate.height).abs() >= MIN_HEIGHT_GAP);
        if clear {
            bodies.push(candidate);
        }
    }
    bodies
}
