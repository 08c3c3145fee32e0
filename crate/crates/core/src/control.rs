//! PID controllers, path following and the stop-and-replan gate.

use crate::geometry::{Point2, Pose2D, Twist2D, WorldConfig};
use crate::scalar::{normalize_angle, Real};
use crate::sensing::{LidarScan, RangeReadings};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains<T> {
    pub kp: T,
    pub ki: T,
    pub kd: T,
    /// Bound on the accumulated integral.
    pub i_limit: T,
    /// Bound on the controller output.
    pub out_limit: T,
}

impl<T: Real> PidGains<T> {
    pub fn new(kp: T, ki: T, kd: T) -> Self {
        Self {
            kp,
            ki,
            kd,
            i_limit: T::infinity(),
            out_limit: T::infinity(),
        }
    }

    pub fn with_limits(mut self, i_limit: T, out_limit: T) -> Self {
        self.i_limit = i_limit;
        self.out_limit = out_limit;
        self
    }

    /// Default position-loop gains for path tracking.
    pub fn position() -> Self {
        Self::new(T::lit(1.2), T::lit(0.1), T::lit(0.05)).with_limits(T::lit(0.2), T::infinity())
    }

    /// Default heading-loop gains.
    pub fn heading() -> Self {
        Self::new(T::lit(2.0), T::zero(), T::zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState<T> {
    pub e_prev: T,
    pub e_prev2: T,
    pub integral: T,
    pub u_prev: T,
}

impl<T: Real> PidState<T> {
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

fn clamp_abs<T: Real>(v: T, limit: T) -> T {
    v.max(-limit).min(limit)
}

/// Positional PID: rectangle-rule integral with clamping anti-windup,
/// derivative on error.
pub fn pid_step<T: Real>(st: &mut PidState<T>, e: T, gains: &PidGains<T>, dt: T) -> T {
    debug_assert!(dt > T::zero());
    st.integral = clamp_abs(st.integral + e * dt, gains.i_limit);
    let deriv = (e - st.e_prev) / dt;
    let u = clamp_abs(
        gains.kp * e + gains.ki * st.integral + gains.kd * deriv,
        gains.out_limit,
    );
    st.e_prev2 = st.e_prev;
    st.e_prev = e;
    st.u_prev = u;
    u
}

/// Velocity-form PID: emits `u_prev + Δu`.
pub fn incremental_pid_step<T: Real>(st: &mut PidState<T>, e: T, gains: &PidGains<T>, dt: T) -> T {
    debug_assert!(dt > T::zero());
    let du =
        gains.kp * (e - st.e_prev) + gains.ki * e * dt + gains.kd * (e - T::lit(2.0) * st.e_prev + st.e_prev2) / dt;
    let u = clamp_abs(st.u_prev + du, gains.out_limit);
    st.e_prev2 = st.e_prev;
    st.e_prev = e;
    st.u_prev = u;
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FollowMode {
    Tracking,
    Stopped,
    GoalReached,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerStatus<T> {
    pub mode: FollowMode,
    pub active_waypoint: usize,
    pub cross_track_error: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerConfig<T> {
    pub gains_xy: PidGains<T>,
    pub gains_theta: PidGains<T>,
    pub capture_radius: T,
    pub heading_tolerance: T,
}

impl<T: Real> Default for FollowerConfig<T> {
    fn default() -> Self {
        Self {
            gains_xy: PidGains::position(),
            gains_theta: PidGains::heading(),
            capture_radius: T::lit(0.05),
            heading_tolerance: T::lit(0.05),
        }
    }
}

/// Tracks a waypoint polyline with along-track and cross-track PID loops
/// plus a heading loop. The commanded planar speed never exceeds the
/// configured maximum.
#[derive(Debug, Clone)]
pub struct PathFollower<T> {
    cfg: FollowerConfig<T>,
    waypoints: Vec<Point2<T>>,
    segment_start: Point2<T>,
    target_heading: T,
    active: usize,
    along: PidState<T>,
    cross: PidState<T>,
    heading: PidState<T>,
    mode: FollowMode,
}

impl<T: Real> PathFollower<T> {
    /// Start following `waypoints` from `pose`, holding `target_heading`.
    pub fn new(cfg: FollowerConfig<T>, pose: &Pose2D<T>, waypoints: Vec<Point2<T>>, target_heading: T) -> Self {
        assert!(!waypoints.is_empty(), "path follower needs at least one waypoint");
        Self {
            cfg,
            waypoints,
            segment_start: pose.position(),
            target_heading: normalize_angle(target_heading),
            active: 0,
            along: PidState::default(),
            cross: PidState::default(),
            heading: PidState::default(),
            mode: FollowMode::Tracking,
        }
    }

    pub fn waypoints(&self) -> &[Point2<T>] {
        &self.waypoints
    }

    pub fn mode(&self) -> FollowMode {
        self.mode
    }

    pub fn active_waypoint(&self) -> usize {
        self.active
    }

    pub fn stop(&mut self) {
        if self.mode == FollowMode::Tracking {
            self.mode = FollowMode::Stopped;
        }
    }

    fn status(&self, cte: T) -> FollowerStatus<T> {
        FollowerStatus {
            mode: self.mode,
            active_waypoint: self.active,
            cross_track_error: cte,
        }
    }

    /// One control step from the estimated pose.
    pub fn step(&mut self, est: &Pose2D<T>, world: &WorldConfig<T>, dt: T) -> (Twist2D<T>, FollowerStatus<T>) {
        let zero = T::zero();
        if self.mode != FollowMode::Tracking {
            return (Twist2D::zero(), self.status(zero));
        }
        let pos = est.position();
        let last = self.waypoints.len() - 1;
        // Advance past waypoints that are captured or already behind us.
        while self.active < last {
            let wp = self.waypoints[self.active];
            let dir = wp - self.segment_start;
            let len = dir.norm();
            let along = if len > zero {
                ((wp.x - pos.x) * dir.x + (wp.y - pos.y) * dir.y) / len
            } else {
                zero
            };
            if pos.distance(&wp) < self.cfg.capture_radius || along <= zero {
                self.segment_start = wp;
                self.active += 1;
                self.cross.reset();
            } else {
                break;
            }
        }
        let wp = self.waypoints[self.active];
        let heading_err = normalize_angle(self.target_heading - est.theta);
        if self.active == last
            && pos.distance(&wp) < self.cfg.capture_radius
            && heading_err.abs() < self.cfg.heading_tolerance
        {
            self.mode = FollowMode::GoalReached;
            return (Twist2D::zero(), self.status(zero));
        }

        let mut dir = wp - self.segment_start;
        let mut len = dir.norm();
        if len <= T::lit(1e-12) {
            dir = wp - pos;
            len = dir.norm();
        }
        let (ux, uy) = if len > T::lit(1e-12) {
            (dir.x / len, dir.y / len)
        } else {
            (T::one(), zero)
        };
        // Along-track error is the remaining polyline length.
        let mut remaining = (wp.x - pos.x) * ux + (wp.y - pos.y) * uy;
        for w in self.waypoints[self.active..].windows(2) {
            remaining += w[0].distance(&w[1]);
        }
        let rel = pos - self.segment_start;
        let cte = ux * rel.y - uy * rel.x;

        let v_along = pid_step(&mut self.along, remaining, &self.cfg.gains_xy, dt);
        let v_cross = pid_step(&mut self.cross, -cte, &self.cfg.gains_xy, dt);
        let omega = pid_step(&mut self.heading, heading_err, &self.cfg.gains_theta, dt);

        let wx = v_along * ux - v_cross * uy;
        let wy = v_along * uy + v_cross * ux;
        let body = Point2::new(wx, wy).rotated(-est.theta);
        let mut twist = Twist2D::new(body.x, body.y, omega);
        let speed = twist.planar_speed();
        if speed > world.max_velocity {
            let s = world.max_velocity / speed;
            twist.vx *= s;
            twist.vy *= s;
            // Guard against rounding pushing the norm a hair over the cap.
            while twist.planar_speed() > world.max_velocity {
                twist.vx *= T::lit(1.0 - 1e-12);
                twist.vy *= T::lit(1.0 - 1e-12);
            }
        }
        (twist, self.status(cte))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Proceed,
    StopAndReplan,
}

pub const DEFAULT_STOP_DIST: f64 = 0.25;

/// Stop when any sensed range strictly within ±90° of the commanded
/// translation direction is shorter than `stop_dist`.
pub fn collision_gate(scan: &LidarScan, ranges: &RangeReadings, cmd: &Twist2D<f64>, stop_dist: f64) -> GateDecision {
    if cmd.planar_speed() <= 1e-12 {
        return GateDecision::Proceed;
    }
    let heading = cmd.vy.atan2(cmd.vx);
    let ahead = |angle: f64| normalize_angle(angle - heading).abs() < std::f64::consts::FRAC_PI_2;
    let lidar = scan.beams.iter().map(|b| (b.angle, b.range));
    let blocked = lidar
        .chain(ranges.with_angles())
        .any(|(a, r)| ahead(a) && r < stop_dist);
    if blocked {
        GateDecision::StopAndReplan
    } else {
        GateDecision::Proceed
    }
}
