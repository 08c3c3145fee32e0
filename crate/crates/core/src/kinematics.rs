//! Four-wheel mecanum kinematics, dead-reckoning and gyro fusion.
//!
//! Wheel order is always front-left, front-right, rear-left, rear-right.
//! With `r` the wheel radius and `l = lx + ly`:
//!
//! ```text
//! vx = r ( w_fl + w_fr + w_rl + w_rr) / 4
//! vy = r (-w_fl + w_fr + w_rl - w_rr) / 4
//! ω  = r (-w_fl + w_fr - w_rl + w_rr) / (4 l)
//! ```

use crate::error::{Error, Result};
use crate::geometry::{Pose2D, Twist2D, WorldConfig};
use crate::scalar::{normalize_angle, Real};

/// Wheel angular rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WheelSpeeds<T> {
    pub w_fl: T,
    pub w_fr: T,
    pub w_rl: T,
    pub w_rr: T,
}

impl<T: Real> WheelSpeeds<T> {
    pub fn new(w_fl: T, w_fr: T, w_rl: T, w_rr: T) -> Self {
        Self { w_fl, w_fr, w_rl, w_rr }
    }

    pub fn as_array(&self) -> [T; 4] {
        [self.w_fl, self.w_fr, self.w_rl, self.w_rr]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

pub fn forward_kinematics<T: Real>(ws: &WheelSpeeds<T>, cfg: &WorldConfig<T>) -> Twist2D<T> {
    let r4 = cfg.wheel_radius / T::lit(4.0);
    let l = cfg.lx + cfg.ly;
    Twist2D::new(
        r4 * (ws.w_fl + ws.w_fr + ws.w_rl + ws.w_rr),
        r4 * (-ws.w_fl + ws.w_fr + ws.w_rl - ws.w_rr),
        r4 * (-ws.w_fl + ws.w_fr - ws.w_rl + ws.w_rr) / l,
    )
}

pub fn inverse_kinematics<T: Real>(t: &Twist2D<T>, cfg: &WorldConfig<T>) -> WheelSpeeds<T> {
    let r = cfg.wheel_radius;
    let lw = (cfg.lx + cfg.ly) * t.omega;
    WheelSpeeds::new(
        (t.vx - t.vy - lw) / r,
        (t.vx + t.vy + lw) / r,
        (t.vx + t.vy - lw) / r,
        (t.vx - t.vy + lw) / r,
    )
}

/// One explicit Euler step of the body twist in the world frame.
pub fn integrate_odometry<T: Real>(pose: &Pose2D<T>, t: &Twist2D<T>, dt: T) -> Pose2D<T> {
    debug_assert!(dt > T::zero());
    let (s, c) = pose.theta.sin_cos();
    Pose2D::new(
        pose.x + (c * t.vx - s * t.vy) * dt,
        pose.y + (s * t.vx + c * t.vy) * dt,
        pose.theta + t.omega * dt,
    )
}

/// Fused heading from the two gyros.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadingEstimate<T> {
    pub theta: T,
    pub weight_a: T,
}

/// Fixed-weight circular mean of two headings.
pub fn fuse_heading<T: Real>(theta_a: T, theta_b: T, weight_a: T) -> Result<T> {
    debug_assert!(weight_a >= T::zero() && weight_a <= T::one());
    let wb = T::one() - weight_a;
    let s = weight_a * theta_a.sin() + wb * theta_b.sin();
    let c = weight_a * theta_a.cos() + wb * theta_b.cos();
    if s.hypot(c) < T::lit(1e-9) {
        return Err(Error::DegenerateFusion);
    }
    if weight_a == T::one() {
        return Ok(normalize_angle(theta_a));
    }
    Ok(normalize_angle(s.atan2(c)))
}

impl<T: Real> HeadingEstimate<T> {
    pub fn fuse(theta_a: T, theta_b: T, weight_a: T) -> Result<Self> {
        Ok(Self {
            theta: fuse_heading(theta_a, theta_b, weight_a)?,
            weight_a,
        })
    }
}
