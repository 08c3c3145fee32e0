//! Simulation core for a mecanum-base warehouse robot with a five-joint arm:
//! kinematics and odometry, lidar mapping, safety-aware grid planning, PID
//! path following, mission sequencing, perception stand-ins and grasping.

pub mod arm;
pub mod control;
pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod mission;
pub mod perception;
pub mod planning;
pub mod render;
pub mod scalar;
pub mod sensing;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{Cell, CellState, GridMap, Point2, Point3, Pose2D, Twist2D, WorldConfig};
pub use scalar::Real;

pub type Pose = Pose2D<f64>;
pub type Twist = Twist2D<f64>;
pub type Point = Point2<f64>;
pub type Posef = Pose2D<f32>;
pub type Twistf = Twist2D<f32>;
pub type Pointf = Point2<f32>;
