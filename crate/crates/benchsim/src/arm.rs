//! Two-link planar arm kinematics.
//!
//! The arm lives in a vertical plane: `x` points away from the base, `y` up.
//! Joint 1 rotates link 1 about the base, joint 2 rotates link 2 relative to
//! link 1. The inverse kinematics always returns the elbow-up branch
//! (`θ2 < 0`), which is the one every scripted motion uses.

use std::f64::consts::PI;

pub const LINK1: f64 = 0.45;
pub const LINK2: f64 = 0.40;
pub const JOINT_LIMIT: f64 = PI;
pub const GRIPPER_MAX: f64 = 0.08;

pub type Point = [f64; 2];

pub fn elbow(q: [f64; 2]) -> Point {
    [LINK1 * q[0].cos(), LINK1 * q[0].sin()]
}

pub fn end_effector(q: [f64; 2]) -> Point {
    let e = elbow(q);
    let a = q[0] + q[1];
    [e[0] + LINK2 * a.cos(), e[1] + LINK2 * a.sin()]
}

/// Heading of link 2, i.e. the gripper approach direction.
pub fn tool_angle(q: [f64; 2]) -> f64 {
    q[0] + q[1]
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Elbow-up joint solution reaching `p`, or `None` if `p` is out of reach.
pub fn inverse(p: Point) -> Option<[f64; 2]> {
    let r2 = p[0] * p[0] + p[1] * p[1];
    let c2 = (r2 - LINK1 * LINK1 - LINK2 * LINK2) / (2.0 * LINK1 * LINK2);
    if !(-1.0..=1.0).contains(&c2) {
        return None;
    }
    let q2 = -c2.acos();
    let k1 = LINK1 + LINK2 * q2.cos();
    let k2 = LINK2 * q2.sin();
    let q1 = p[1].atan2(p[0]) - k2.atan2(k1);
    Some([wrap(q1), q2])
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

pub fn clamp_joints(q: [f64; 2]) -> [f64; 2] {
    [
        q[0].clamp(-JOINT_LIMIT, JOINT_LIMIT),
        q[1].clamp(-JOINT_LIMIT, JOINT_LIMIT),
    ]
}

/// Moves `from` toward `to` along a straight joint-space line, covering at
/// most `max_step` radians on the larger axis.
pub fn step_toward(from: [f64; 2], to: [f64; 2], max_step: f64) -> [f64; 2] {
    let d = [to[0] - from[0], to[1] - from[1]];
    let span = d[0].abs().max(d[1].abs());
    if span <= max_step {
        return to;
    }
    let s = max_step / span;
    [from[0] + d[0] * s, from[1] + d[1] * s]
}
