//! Five-joint arm: rotary base, vertical elevator, horizontal telescope and a
//! two-axis wrist. Forward kinematics, joint-level tracking and the grasp
//! state machine.

use std::fmt;

use crate::control::{pid_step, PidGains, PidState};
use crate::geometry::{Point2, Pose2D};
use crate::scalar::{normalize_angle, normalize_axis, Real};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmJoints<T> {
    pub theta_base: T,
    pub d_elev: T,
    pub d_tel: T,
    pub wrist_pitch: T,
    pub wrist_roll: T,
}

impl<T: Real> ArmJoints<T> {
    pub fn home() -> Self {
        Self::default()
    }

    fn as_array(&self) -> [T; 5] {
        [
            self.theta_base,
            self.d_elev,
            self.d_tel,
            self.wrist_pitch,
            self.wrist_roll,
        ]
    }

    fn from_array(a: [T; 5]) -> Self {
        Self {
            theta_base: a[0],
            d_elev: a[1],
            d_tel: a[2],
            wrist_pitch: a[3],
            wrist_roll: a[4],
        }
    }
}

/// Joint ranges and speed limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmLimits<T> {
    pub d_elev_max: T,
    pub d_tel_max: T,
    pub wrist_max: T,
    /// rad/s, applies to the base and both wrist joints.
    pub revolute_speed: T,
    /// m/s, applies to the elevator and telescope.
    pub prismatic_speed: T,
}

impl<T: Real> Default for ArmLimits<T> {
    fn default() -> Self {
        Self {
            d_elev_max: T::lit(0.50),
            d_tel_max: T::lit(0.35),
            wrist_max: T::FRAC_PI_2(),
            revolute_speed: T::lit(45f64.to_radians()),
            prismatic_speed: T::lit(0.1),
        }
    }
}

impl<T: Real> ArmLimits<T> {
    pub fn clamp(&self, j: &ArmJoints<T>) -> ArmJoints<T> {
        let z = T::zero();
        ArmJoints {
            theta_base: normalize_angle(j.theta_base),
            d_elev: j.d_elev.max(z).min(self.d_elev_max),
            d_tel: j.d_tel.max(z).min(self.d_tel_max),
            wrist_pitch: j.wrist_pitch.max(-self.wrist_max).min(self.wrist_max),
            wrist_roll: j.wrist_roll.max(-self.wrist_max).min(self.wrist_max),
        }
    }

    pub fn within(&self, j: &ArmJoints<T>) -> bool {
        let z = T::zero();
        let pi = T::PI();
        j.theta_base > -pi
            && j.theta_base <= pi
            && j.d_elev >= z
            && j.d_elev <= self.d_elev_max
            && j.d_tel >= z
            && j.d_tel <= self.d_tel_max
            && j.wrist_pitch.abs() <= self.wrist_max
            && j.wrist_roll.abs() <= self.wrist_max
    }

    fn speeds(&self) -> [T; 5] {
        [
            self.revolute_speed,
            self.prismatic_speed,
            self.prismatic_speed,
            self.revolute_speed,
            self.revolute_speed,
        ]
    }
}

/// Fixed offsets of the arm base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmGeometry<T> {
    /// Planar reach with the telescope retracted.
    pub r0: T,
    /// Tool height with the elevator at zero.
    pub z0: T,
}

impl<T: Real> Default for ArmGeometry<T> {
    fn default() -> Self {
        Self {
            r0: T::lit(0.15),
            z0: T::lit(0.20),
        }
    }
}

/// Planar pose of the arm base plus its height.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmMount<T> {
    pub pose: Pose2D<T>,
    pub z: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndEffector<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub yaw: T,
    pub pitch: T,
}

pub fn arm_fk<T: Real>(j: &ArmJoints<T>, geom: &ArmGeometry<T>, mount: &ArmMount<T>) -> EndEffector<T> {
    let r = geom.r0 + j.d_tel;
    let heading = mount.pose.theta + j.theta_base;
    let (s, c) = heading.sin_cos();
    EndEffector {
        x: mount.pose.x + r * c,
        y: mount.pose.y + r * s,
        z: mount.z + geom.z0 + j.d_elev,
        yaw: normalize_angle(heading + j.wrist_roll),
        pitch: j.wrist_pitch,
    }
}

/// Whether the arm can place its tool at `target` (arm-base frame).
pub fn reachable<T: Real>(target: &GraspTarget<T>, geom: &ArmGeometry<T>, limits: &ArmLimits<T>) -> bool {
    let r = target.x.hypot(target.y);
    r >= geom.r0 && r <= geom.r0 + limits.d_tel_max && target.z >= geom.z0 && target.z <= geom.z0 + limits.d_elev_max
}

pub type JointGains<T> = [PidGains<T>; 5];

pub fn default_joint_gains<T: Real>(limits: &ArmLimits<T>) -> JointGains<T> {
    limits
        .speeds()
        .map(|v| PidGains::new(T::lit(4.0), T::lit(0.2), T::lit(0.02)).with_limits(T::lit(0.05), v))
}

/// Closed-loop joint servo: one PID per joint producing a rate command.
#[derive(Debug, Clone)]
pub struct JointTracker<T> {
    pub gains: JointGains<T>,
    pub limits: ArmLimits<T>,
    states: [PidState<T>; 5],
}

impl<T: Real> JointTracker<T> {
    pub fn new(limits: ArmLimits<T>) -> Self {
        Self {
            gains: default_joint_gains(&limits),
            limits,
            states: [PidState::default(); 5],
        }
    }

    pub fn with_gains(limits: ArmLimits<T>, gains: JointGains<T>) -> Self {
        Self {
            gains,
            limits,
            states: [PidState::default(); 5],
        }
    }

    pub fn reset(&mut self) {
        self.states = [PidState::default(); 5];
    }

    pub fn step(&mut self, j: &ArmJoints<T>, setpoints: &ArmJoints<T>, dt: T) -> ArmJoints<T> {
        joint_track(j, setpoints, &self.gains, &mut self.states, &self.limits, dt)
    }
}

pub fn joint_track<T: Real>(
    j: &ArmJoints<T>,
    setpoints: &ArmJoints<T>,
    gains: &JointGains<T>,
    states: &mut [PidState<T>; 5],
    limits: &ArmLimits<T>,
    dt: T,
) -> ArmJoints<T> {
    let cur = j.as_array();
    let sp = limits.clamp(setpoints).as_array();
    let speeds = limits.speeds();
    let mut next = cur;
    for i in 0..5 {
        let mut e = sp[i] - cur[i];
        if i == 0 {
            e = normalize_angle(e);
        }
        let v = pid_step(&mut states[i], e, &gains[i], dt);
        let v = v.max(-speeds[i]).min(speeds[i]);
        next[i] = cur[i] + v * dt;
    }
    limits.clamp(&ArmJoints::from_array(next))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraspPhase {
    Idle,
    AlignY,
    AlignX,
    AlignAngleHeight,
    CloseGripper,
    Lift,
    Holding,
    Place,
    Failed,
}

impl GraspPhase {
    pub fn name(self) -> &'static str {
        match self {
            GraspPhase::Idle => "Idle",
            GraspPhase::AlignY => "AlignY",
            GraspPhase::AlignX => "AlignX",
            GraspPhase::AlignAngleHeight => "AlignAngleHeight",
            GraspPhase::CloseGripper => "CloseGripper",
            GraspPhase::Lift => "Lift",
            GraspPhase::Holding => "Holding",
            GraspPhase::Place => "Place",
            GraspPhase::Failed => "Failed",
        }
    }
}

impl fmt::Display for GraspPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GripperState<K> {
    pub open: bool,
    pub holding: Option<K>,
}

impl<K> Default for GripperState<K> {
    fn default() -> Self {
        Self {
            open: true,
            holding: None,
        }
    }
}

impl<K> GripperState<K> {
    pub fn close_on(&mut self, object: Option<K>) {
        self.open = false;
        self.holding = object;
    }

    pub fn release(&mut self) -> Option<K> {
        self.open = true;
        self.holding.take()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripperCommand {
    None,
    Open,
    Close,
}

/// Object pose in the arm-base frame. `yaw` is an undirected axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspTarget<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub yaw: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspTolerance<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub yaw: T,
}

impl<T: Real> Default for GraspTolerance<T> {
    fn default() -> Self {
        Self {
            x: T::lit(0.003),
            y: T::lit(0.003),
            z: T::lit(0.003),
            yaw: T::lit(0.02),
        }
    }
}

/// Alignment residuals in the arm's pointing frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlignErrors<T> {
    /// Target offset perpendicular to the arm direction.
    pub y: T,
    /// Target offset along the arm beyond the tool.
    pub x: T,
    pub z: T,
    pub yaw: T,
}

pub fn align_errors<T: Real>(j: &ArmJoints<T>, target: &GraspTarget<T>, geom: &ArmGeometry<T>) -> AlignErrors<T> {
    let (s, c) = j.theta_base.sin_cos();
    AlignErrors {
        y: -s * target.x + c * target.y,
        x: c * target.x + s * target.y - (geom.r0 + j.d_tel),
        z: target.z - (geom.z0 + j.d_elev),
        yaw: normalize_axis(target.yaw - (j.theta_base + j.wrist_roll)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspOutput<T> {
    pub phase: GraspPhase,
    pub setpoints: ArmJoints<T>,
    pub gripper: GripperCommand,
    pub errors: AlignErrors<T>,
    /// Alignment phases that finished in tolerance during this step.
    pub completed: Vec<GraspPhase>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspConfig<T> {
    pub tol: GraspTolerance<T>,
    pub timeout: T,
    pub lift_clearance: T,
    pub geom: ArmGeometry<T>,
    pub limits: ArmLimits<T>,
}

impl<T: Real> Default for GraspConfig<T> {
    fn default() -> Self {
        Self {
            tol: GraspTolerance::default(),
            timeout: T::lit(10.0),
            lift_clearance: T::lit(0.05),
            geom: ArmGeometry::default(),
            limits: ArmLimits::default(),
        }
    }
}

/// Grasp sequencing: lateral alignment by base rotation, then telescope
/// extension, then wrist angle and elevator height, then close and lift.
#[derive(Debug, Clone)]
pub struct GraspFsm<T> {
    pub cfg: GraspConfig<T>,
    phase: GraspPhase,
    phase_time: T,
    lift_target: T,
}

impl<T: Real> GraspFsm<T> {
    pub fn new(cfg: GraspConfig<T>) -> Self {
        Self {
            cfg,
            phase: GraspPhase::Idle,
            phase_time: T::zero(),
            lift_target: T::zero(),
        }
    }

    pub fn phase(&self) -> GraspPhase {
        self.phase
    }

    /// Begin a pick from `Idle` (or retry after `Failed`).
    pub fn start_pick(&mut self) {
        if matches!(self.phase, GraspPhase::Idle | GraspPhase::Failed) {
            self.enter(GraspPhase::AlignY);
        }
    }

    /// Begin placing a held object.
    pub fn start_place(&mut self) {
        if self.phase == GraspPhase::Holding {
            self.enter(GraspPhase::Place);
        }
    }

    pub fn reset(&mut self) {
        self.enter(GraspPhase::Idle);
    }

    /// Give up on a placement and keep holding the object.
    pub fn resume_holding(&mut self) {
        if matches!(self.phase, GraspPhase::Place | GraspPhase::Failed) {
            self.enter(GraspPhase::Holding);
        }
    }

    fn enter(&mut self, p: GraspPhase) {
        self.phase = p;
        self.phase_time = T::zero();
    }

    fn aim(&self, target: &GraspTarget<T>) -> T {
        target.y.atan2(target.x)
    }

    fn reach(&self, target: &GraspTarget<T>) -> T {
        target.x.hypot(target.y) - self.cfg.geom.r0
    }

    fn in_tol(&self, phase: GraspPhase, e: &AlignErrors<T>) -> bool {
        let t = &self.cfg.tol;
        match phase {
            GraspPhase::AlignY => e.y.abs() < t.y,
            GraspPhase::AlignX => e.x.abs() < t.x,
            // The last alignment stage gates the close, so it re-checks the
            // planar axes in case they drifted while the later joints moved.
            GraspPhase::AlignAngleHeight | GraspPhase::Place => {
                e.x.abs() < t.x && e.y.abs() < t.y && e.z.abs() < t.z && e.yaw.abs() < t.yaw
            }
            _ => false,
        }
    }

    /// Full-pose setpoints for `target`.
    fn solve(&self, target: &GraspTarget<T>) -> ArmJoints<T> {
        let aim = self.aim(target);
        self.cfg.limits.clamp(&ArmJoints {
            theta_base: aim,
            d_elev: target.z - self.cfg.geom.z0,
            d_tel: self.reach(target),
            wrist_pitch: T::zero(),
            wrist_roll: normalize_axis(target.yaw - aim),
        })
    }

    /// One step. `joints` are the measured joint values, `target` the object
    /// (or placement) pose in the arm-base frame.
    pub fn step(&mut self, joints: &ArmJoints<T>, target: &GraspTarget<T>, dt: T) -> GraspOutput<T> {
        let errors = align_errors(joints, target, &self.cfg.geom);
        let mut completed = Vec::new();
        let mut gripper = GripperCommand::None;

        loop {
            let next = match self.phase {
                GraspPhase::AlignY if self.in_tol(GraspPhase::AlignY, &errors) => GraspPhase::AlignX,
                GraspPhase::AlignX if self.in_tol(GraspPhase::AlignX, &errors) => GraspPhase::AlignAngleHeight,
                GraspPhase::AlignAngleHeight if self.in_tol(GraspPhase::AlignAngleHeight, &errors) => {
                    GraspPhase::CloseGripper
                }
                _ => break,
            };
            completed.push(self.phase);
            self.enter(next);
        }

        let hold = *joints;
        let solved = self.solve(target);
        let setpoints = match self.phase {
            GraspPhase::Idle | GraspPhase::Holding | GraspPhase::Failed => hold,
            GraspPhase::AlignY => ArmJoints {
                theta_base: solved.theta_base,
                ..hold
            },
            GraspPhase::AlignX => ArmJoints {
                theta_base: solved.theta_base,
                d_tel: solved.d_tel,
                ..hold
            },
            GraspPhase::AlignAngleHeight => ArmJoints {
                wrist_pitch: T::zero(),
                ..solved
            },
            GraspPhase::CloseGripper => {
                gripper = GripperCommand::Close;
                self.lift_target = (solved.d_elev + self.cfg.lift_clearance).min(self.cfg.limits.d_elev_max);
                self.enter(GraspPhase::Lift);
                ArmJoints {
                    wrist_pitch: T::zero(),
                    ..solved
                }
            }
            // Keep the planar grasp pose while raising.
            GraspPhase::Lift => {
                if (joints.d_elev - self.lift_target).abs() < self.cfg.tol.z {
                    self.enter(GraspPhase::Holding);
                    hold
                } else {
                    ArmJoints {
                        d_elev: self.lift_target,
                        wrist_pitch: T::zero(),
                        ..solved
                    }
                }
            }
            GraspPhase::Place => {
                if self.in_tol(GraspPhase::Place, &errors) {
                    gripper = GripperCommand::Open;
                    self.enter(GraspPhase::Idle);
                    hold
                } else {
                    solved
                }
            }
        };

        if matches!(
            self.phase,
            GraspPhase::AlignY
                | GraspPhase::AlignX
                | GraspPhase::AlignAngleHeight
                | GraspPhase::Lift
                | GraspPhase::Place
        ) {
            self.phase_time += dt;
            if self.phase_time > self.cfg.timeout {
                self.enter(GraspPhase::Failed);
            }
        }

        GraspOutput {
            phase: self.phase,
            setpoints,
            gripper,
            errors,
            completed,
        }
    }
}

/// `t=<s> phase=<name> theta=<rad> d_elev=<m> d_tel=<m> err_y=<m> err_x=<m>`
pub fn trace_line<T: Real>(t: f64, phase: GraspPhase, j: &ArmJoints<T>, e: &AlignErrors<T>) -> String {
    format!(
        "t={t:.2} phase={} theta={:.6} d_elev={:.6} d_tel={:.6} err_y={:.6} err_x={:.6}",
        phase.name(),
        j.theta_base.to_f64_lossy(),
        j.d_elev.to_f64_lossy(),
        j.d_tel.to_f64_lossy(),
        e.y.to_f64_lossy(),
        e.x.to_f64_lossy()
    )
}

/// Express a robot-frame point in an arm-base frame given by `mount`.
pub fn to_mount_frame<T: Real>(mount: &ArmMount<T>, p: Point2<T>, z: T, yaw: T) -> GraspTarget<T> {
    let local = mount.pose.inverse_transform_point(p);
    GraspTarget {
        x: local.x,
        y: local.y,
        z: z - mount.z,
        yaw: normalize_axis(yaw - mount.pose.theta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn origin() -> ArmMount<f64> {
        ArmMount::default()
    }

    // Homogeneous-transform chain oracle: Rz(mount) · T(mount) · Rz(base) ·
    // Tx(r0 + d_tel) · Tz(z0 + d_elev) · Rz(roll).
    fn fk_chain(j: &ArmJoints<f64>, g: &ArmGeometry<f64>, m: &ArmMount<f64>) -> (f64, f64, f64, f64) {
        type M = [[f64; 4]; 4];
        let mul = |a: &M, b: &M| -> M {
            let mut o = [[0.0; 4]; 4];
            for i in 0..4 {
                for k in 0..4 {
                    o[i][k] = (0..4).map(|l| a[i][l] * b[l][k]).sum();
                }
            }
            o
        };
        let rz = |t: f64| -> M {
            [
                [t.cos(), -t.sin(), 0.0, 0.0],
                [t.sin(), t.cos(), 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        };
        let tr = |x: f64, y: f64, z: f64| -> M {
            [
                [1.0, 0.0, 0.0, x],
                [0.0, 1.0, 0.0, y],
                [0.0, 0.0, 1.0, z],
                [0.0, 0.0, 0.0, 1.0],
            ]
        };
        let chain = [
            tr(m.pose.x, m.pose.y, m.z),
            rz(m.pose.theta),
            rz(j.theta_base),
            tr(g.r0 + j.d_tel, 0.0, g.z0 + j.d_elev),
            rz(j.wrist_roll),
        ];
        let t = chain.iter().skip(1).fold(chain[0], |acc, x| mul(&acc, x));
        (t[0][3], t[1][3], t[2][3], t[1][0].atan2(t[0][0]))
    }

    #[test]
    fn fk_examples() {
        let g = ArmGeometry::default();
        let e = arm_fk(&ArmJoints::home(), &g, &origin());
        assert_eq!((e.x, e.y, e.z, e.yaw, e.pitch), (0.15, 0.0, 0.2, 0.0, 0.0));
        let j = ArmJoints {
            theta_base: FRAC_PI_2,
            d_tel: 0.2,
            ..ArmJoints::home()
        };
        let e = arm_fk(&j, &g, &origin());
        assert!(e.x.abs() < 1e-12 && (e.y - 0.35).abs() < 1e-12);
        assert!((e.z - 0.2).abs() < 1e-12 && (e.yaw - FRAC_PI_2).abs() < 1e-12 && e.pitch == 0.0);
    }

    proptest! {
        #[test]
        fn fk_matches_transform_chain(
            tb in -PI..PI, de in 0.0f64..0.5, dt in 0.0f64..0.35, wp in -1.5f64..1.5, wr in -1.5f64..1.5,
            mx in -3.0f64..3.0, my in -3.0f64..3.0, mt in -PI..PI, mz in 0.0f64..0.5,
        ) {
            let j = ArmJoints { theta_base: tb, d_elev: de, d_tel: dt, wrist_pitch: wp, wrist_roll: wr };
            let m = ArmMount { pose: Pose2D::new(mx, my, mt), z: mz };
            let g = ArmGeometry::default();
            let e = arm_fk(&j, &g, &m);
            let (x, y, z, yaw) = fk_chain(&j, &g, &m);
            prop_assert!((e.x - x).abs() < 1e-9 && (e.y - y).abs() < 1e-9 && (e.z - z).abs() < 1e-9);
            prop_assert!(normalize_angle(e.yaw - yaw).abs() < 1e-9);
            prop_assert_eq!(e.pitch, wp);
            let j2 = ArmJoints { theta_base: tb + 2.0 * PI, ..j };
            prop_assert!(normalize_angle(arm_fk(&j2, &g, &m).yaw - e.yaw).abs() < 1e-9);
        }

        #[test]
        fn joint_limits_hold(sp in prop::array::uniform5(-3.0f64..3.0), steps in 1usize..200) {
            let limits = ArmLimits::default();
            let mut tr = JointTracker::new(limits);
            let mut j = ArmJoints::home();
            let target = ArmJoints { theta_base: sp[0], d_elev: sp[1], d_tel: sp[2], wrist_pitch: sp[3], wrist_roll: sp[4] };
            for _ in 0..steps {
                let n = tr.step(&j, &target, 0.02);
                prop_assert!(limits.within(&n));
                prop_assert!(normalize_angle(n.theta_base - j.theta_base).abs() <= limits.revolute_speed * 0.02 + 1e-12);
                prop_assert!((n.wrist_roll - j.wrist_roll).abs() <= limits.revolute_speed * 0.02 + 1e-12);
                prop_assert!((n.d_tel - j.d_tel).abs() <= limits.prismatic_speed * 0.02 + 1e-12);
                j = n;
            }
        }
    }

    #[test]
    fn joint_track_holds_at_setpoint() {
        let mut tr = JointTracker::new(ArmLimits::default());
        let j = ArmJoints {
            theta_base: 0.3,
            d_elev: 0.1,
            d_tel: 0.2,
            wrist_pitch: 0.0,
            wrist_roll: -0.2,
        };
        assert_eq!(tr.step(&j, &j, 0.02), j);
    }

    #[test]
    fn step_response_settles() {
        let mut tr = JointTracker::new(ArmLimits::default());
        let goal = 30f64.to_radians();
        let sp = ArmJoints {
            theta_base: goal,
            ..ArmJoints::home()
        };
        let mut j = ArmJoints::home();
        let dt = 0.02;
        let mut settled_at = None;
        for k in 0..500 {
            j = tr.step(&j, &sp, dt);
            let inside = (j.theta_base - goal).abs() <= 0.02 * goal;
            match (inside, settled_at) {
                (true, None) => settled_at = Some(k),
                (false, Some(_)) => settled_at = None,
                _ => {}
            }
        }
        let t = (settled_at.expect("settles") + 1) as f64 * dt;
        assert!(t < 5.0, "settled at {t}");
    }

    #[test]
    fn aligned_target_passes_through() {
        let mut fsm = GraspFsm::new(GraspConfig::default());
        let j = ArmJoints {
            theta_base: 0.2,
            d_elev: 0.1,
            d_tel: 0.1,
            wrist_pitch: 0.0,
            wrist_roll: 0.1,
        };
        let e = arm_fk(&j, &fsm.cfg.geom, &origin());
        let target = GraspTarget {
            x: e.x,
            y: e.y,
            z: e.z,
            yaw: e.yaw,
        };
        fsm.start_pick();
        let out = fsm.step(&j, &target, 0.02);
        assert_eq!(
            out.completed,
            vec![GraspPhase::AlignY, GraspPhase::AlignX, GraspPhase::AlignAngleHeight]
        );
        let sp = out.setpoints;
        for (a, b) in [
            (sp.theta_base, j.theta_base),
            (sp.d_elev, j.d_elev),
            (sp.d_tel, j.d_tel),
            (sp.wrist_roll, j.wrist_roll),
        ] {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(out.gripper, GripperCommand::Close);
        assert_eq!(fsm.phase(), GraspPhase::Lift);
    }

    #[test]
    fn lateral_target_rotates_base_positive() {
        let mut fsm = GraspFsm::new(GraspConfig::default());
        fsm.start_pick();
        let target = GraspTarget {
            x: 0.3,
            y: 0.1,
            z: 0.3,
            yaw: 0.0,
        };
        let out = fsm.step(&ArmJoints::home(), &target, 0.02);
        assert_eq!(out.phase, GraspPhase::AlignY);
        assert!(out.errors.y > 0.0 && out.setpoints.theta_base > 0.0);
    }

    #[test]
    fn unreachable_target_fails() {
        let cfg = GraspConfig::default();
        let mut fsm = GraspFsm::new(cfg);
        let mut tr = JointTracker::new(cfg.limits);
        let target = GraspTarget {
            x: 0.9,
            y: 0.0,
            z: 0.3,
            yaw: 0.0,
        };
        assert!(!reachable(&target, &cfg.geom, &cfg.limits));
        fsm.start_pick();
        let mut j = ArmJoints::home();
        for _ in 0..2000 {
            let out = fsm.step(&j, &target, 0.02);
            assert_ne!(out.gripper, GripperCommand::Close);
            j = tr.step(&j, &out.setpoints, 0.02);
        }
        assert_eq!(fsm.phase(), GraspPhase::Failed);
    }

    #[test]
    fn place_opens_gripper() {
        let cfg = GraspConfig::default();
        let mut fsm = GraspFsm::new(cfg);
        let mut tr = JointTracker::new(cfg.limits);
        let mut j = ArmJoints::home();
        let pick = GraspTarget {
            x: 0.25,
            y: -0.15,
            z: 0.35,
            yaw: 0.4,
        };
        fsm.start_pick();
        for _ in 0..3000 {
            let out = fsm.step(&j, &pick, 0.02);
            j = tr.step(&j, &out.setpoints, 0.02);
            if fsm.phase() == GraspPhase::Holding {
                break;
            }
        }
        assert_eq!(fsm.phase(), GraspPhase::Holding);
        let place = GraspTarget {
            x: 0.3,
            y: 0.2,
            z: 0.3,
            yaw: -0.3,
        };
        fsm.start_place();
        let mut opened = false;
        for _ in 0..3000 {
            let out = fsm.step(&j, &place, 0.02);
            j = tr.step(&j, &out.setpoints, 0.02);
            if out.gripper == GripperCommand::Open {
                opened = true;
                break;
            }
        }
        assert!(opened);
        assert_eq!(fsm.phase(), GraspPhase::Idle);
        let e = arm_fk(&j, &cfg.geom, &origin());
        assert!((e.x - 0.3).abs() < 0.005 && (e.y - 0.2).abs() < 0.005 && (e.z - 0.3).abs() < 0.005);
    }

    #[test]
    fn gripper_state_invariant() {
        let mut g: GripperState<&str> = GripperState::default();
        assert!(g.open && g.holding.is_none());
        g.close_on(Some("bolt"));
        assert!(!g.open && g.holding == Some("bolt"));
        assert_eq!(g.release(), Some("bolt"));
        assert!(g.open);
    }

    #[test]
    fn trace_format() {
        let line = trace_line(
            0.5,
            GraspPhase::AlignX,
            &ArmJoints::<f64>::home(),
            &AlignErrors::default(),
        );
        assert_eq!(
            line,
            "t=0.50 phase=AlignX theta=0.000000 d_elev=0.000000 d_tel=0.000000 err_y=0.000000 err_x=0.000000"
        );
    }
}
