//! Simulated camera detections, back-projection to the robot frame, PCA
//! orientation and line extraction for floor-marked walls.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{GridMap, Point2, Point3, Pose2D};
use crate::mission::ObjectKind;
use crate::scalar::{normalize_axis, Real};
use crate::sensing::cast_ray;

/// How normalized image coordinates map to viewing angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionModel {
    /// Image offset proportional to the tangent of the viewing angle.
    #[default]
    Pinhole,
    /// Image offset proportional to the viewing angle itself.
    Equiangular,
}

/// Camera optics plus its mounting on the robot body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub hfov: f64,
    pub vfov: f64,
    pub max_depth: f64,
    pub model: ProjectionModel,
    /// Optical centre in the robot frame.
    pub mount: Point3<f64>,
    /// Optical axis yaw relative to the robot heading.
    pub mount_yaw: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            hfov: 87f64.to_radians(),
            vfov: 58f64.to_radians(),
            max_depth: 3.0,
            model: ProjectionModel::Pinhole,
            mount: Point3::new(0.10, 0.0, 0.40),
            mount_yaw: 0.0,
        }
    }
}

impl Camera {
    fn offset(&self, ratio: f64, fov: f64) -> f64 {
        match self.model {
            ProjectionModel::Pinhole => ratio / (2.0 * (fov / 2.0).tan()),
            ProjectionModel::Equiangular => ratio.atan() / fov,
        }
    }

    fn ratio(&self, offset: f64, fov: f64) -> f64 {
        match self.model {
            ProjectionModel::Pinhole => offset * 2.0 * (fov / 2.0).tan(),
            ProjectionModel::Equiangular => (offset * fov).tan(),
        }
    }

    /// Robot-frame point into camera coordinates (forward, left, up).
    fn camera_frame(&self, p: Point3<f64>) -> Point3<f64> {
        let d = Point2::new(p.x - self.mount.x, p.y - self.mount.y).rotated(-self.mount_yaw);
        Point3::new(d.x, d.y, p.z - self.mount.z)
    }

    /// Project a robot-frame point to `(u, v, depth)`. `u` grows to the right
    /// and `v` grows downward; depth is measured along the optical axis.
    /// Points at or behind the image plane give `None`.
    pub fn project(&self, p: Point3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.camera_frame(p);
        if c.x <= 0.0 {
            return None;
        }
        let u = 0.5 - self.offset(c.y / c.x, self.hfov);
        let v = 0.5 - self.offset(c.z / c.x, self.vfov);
        Some((u, v, c.x))
    }

    pub fn in_frustum(&self, u: f64, v: f64, depth: f64) -> bool {
        (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) && depth > 0.0 && depth <= self.max_depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub kind: ObjectKind,
    pub bbox_center: (f64, f64),
    pub depth: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientedObject {
    pub kind: ObjectKind,
    pub position: Point3<f64>,
    pub yaw: f64,
}

/// Ground-truth object in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldObject {
    pub kind: ObjectKind,
    pub position: Point3<f64>,
    pub yaw: f64,
}

/// Objects visible from `robot` through `camera`, optionally occluded by the
/// occupied cells of `occluders`. Depth gets zero-mean Gaussian noise drawn
/// from a generator seeded with `seed`.
pub fn simulate_detections(
    objects: &[WorldObject],
    robot: &Pose2D<f64>,
    camera: &Camera,
    occluders: Option<&GridMap>,
    noise_sigma: f64,
    seed: u64,
) -> Vec<Detection> {
    assert!(
        camera.hfov > 0.0 && camera.hfov < std::f64::consts::PI,
        "fov must lie in (0, pi)"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("finite sigma"));
    let cam_world = robot.transform_point(Point2::new(camera.mount.x, camera.mount.y));
    let mut out = Vec::new();
    for obj in objects {
        let local = robot.inverse_transform_point(Point2::new(obj.position.x, obj.position.y));
        let Some((u, v, depth)) = camera.project(Point3::new(local.x, local.y, obj.position.z)) else {
            continue;
        };
        if !camera.in_frustum(u, v, depth) {
            continue;
        }
        if let Some(map) = occluders {
            let target = Point2::new(obj.position.x, obj.position.y);
            let dist = cam_world.distance(&target);
            let heading = (target.y - cam_world.y).atan2(target.x - cam_world.x);
            if cast_ray(map, cam_world, heading, dist) < dist - map.resolution() {
                continue;
            }
        }
        let noisy = match &noise {
            Some(n) => (depth + n.sample(&mut rng)).max(1e-3),
            None => depth,
        };
        out.push(Detection {
            kind: obj.kind.clone(),
            bbox_center: (u, v),
            depth: noisy,
            confidence: (1.0 - 0.5 * depth / camera.max_depth).clamp(0.0, 1.0),
        });
    }
    out
}

/// Back-project a detection into the robot frame.
pub fn locate_object(d: &Detection, camera: &Camera) -> Point3<f64> {
    debug_assert!(d.depth > 0.0);
    let (u, v) = d.bbox_center;
    let y = camera.ratio(0.5 - u, camera.hfov) * d.depth;
    let z = camera.ratio(0.5 - v, camera.vfov) * d.depth;
    let p = Point2::new(d.depth, y).rotated(camera.mount_yaw);
    Point3::new(p.x + camera.mount.x, p.y + camera.mount.y, z + camera.mount.z)
}

/// Principal-axis angle of a planar point cloud, in (-pi/2, pi/2].
pub fn pca_orientation<T: Real>(points: &[Point2<T>]) -> Result<T> {
    if points.len() < 3 {
        return Err(Error::DegenerateCluster);
    }
    let n = T::from_usize(points.len()).expect("count fits");
    let (sx, sy) = points
        .iter()
        .fold((T::zero(), T::zero()), |(a, b), p| (a + p.x, b + p.y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut syy, mut sxy) = (T::zero(), T::zero(), T::zero());
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let two = T::lit(2.0);
    let gap = (sxx - syy).hypot(two * sxy);
    let trace = sxx + syy;
    if gap.is_nan() || gap < T::lit(1e-9) * trace || trace <= T::zero() {
        return Err(Error::DegenerateCluster);
    }
    Ok(normalize_axis((two * sxy).atan2(sxx - syy) / two))
}

pub const RANSAC_ITERATIONS: usize = 200;
pub const DEFAULT_MIN_SUPPORT: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct WallSegment {
    pub p1: Point2<f64>,
    pub p2: Point2<f64>,
    pub inlier_count: usize,
    /// Indices into the input slice.
    pub inliers: Vec<usize>,
}

impl WallSegment {
    pub fn distance_to_line(&self, p: Point2<f64>) -> f64 {
        let d = self.p2 - self.p1;
        let r = p - self.p1;
        (d.x * r.y - d.y * r.x).abs() / d.norm()
    }

    pub fn angle(&self) -> f64 {
        let d = self.p2 - self.p1;
        normalize_axis(d.y.atan2(d.x))
    }
}

#[derive(Debug, Clone, Copy)]
struct Line {
    origin: Point2<f64>,
    dir: Point2<f64>,
}

impl Line {
    fn through(a: Point2<f64>, b: Point2<f64>) -> Option<Self> {
        let d = b - a;
        let n = d.norm();
        (n > 1e-12).then(|| Self {
            origin: a,
            dir: Point2::new(d.x / n, d.y / n),
        })
    }

    fn distance(&self, p: Point2<f64>) -> f64 {
        let r = p - self.origin;
        (self.dir.x * r.y - self.dir.y * r.x).abs()
    }

    fn along(&self, p: Point2<f64>) -> f64 {
        let r = p - self.origin;
        self.dir.x * r.x + self.dir.y * r.y
    }

    fn at(&self, s: f64) -> Point2<f64> {
        Point2::new(self.origin.x + s * self.dir.x, self.origin.y + s * self.dir.y)
    }

    /// Total-least-squares line through `pts`.
    fn fit(pts: &[Point2<f64>]) -> Option<Self> {
        let n = pts.len() as f64;
        let mean = Point2::new(
            pts.iter().map(|p| p.x).sum::<f64>() / n,
            pts.iter().map(|p| p.y).sum::<f64>() / n,
        );
        let yaw = pca_orientation(pts).ok()?;
        Some(Self {
            origin: mean,
            dir: Point2::new(yaw.cos(), yaw.sin()),
        })
    }
}

fn inliers_of(line: &Line, points: &[Point2<f64>], pool: &[usize], tol: f64) -> Vec<usize> {
    pool.iter()
        .copied()
        .filter(|&i| line.distance(points[i]) < tol)
        .collect()
}

/// Sequential sample-consensus line extraction.
pub fn detect_virtual_walls(points: &[Point2<f64>], dist_tol: f64, min_support: usize, seed: u64) -> Vec<WallSegment> {
    let min_support = min_support.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..points.len()).collect();
    let mut walls = Vec::new();

    while pool.len() >= min_support {
        let mut best: Vec<usize> = Vec::new();
        let mut best_line = None;
        for _ in 0..RANSAC_ITERATIONS {
            let pick = sample(&mut rng, pool.len(), 2);
            let Some(line) = Line::through(points[pool[pick.index(0)]], points[pool[pick.index(1)]]) else {
                continue;
            };
            let inl = inliers_of(&line, points, &pool, dist_tol);
            if inl.len() > best.len() {
                best = inl;
                best_line = Some(line);
            }
        }
        let Some(mut line) = best_line.filter(|_| best.len() >= min_support) else {
            break;
        };
        let support: Vec<Point2<f64>> = best.iter().map(|&i| points[i]).collect();
        if let Some(refit) = Line::fit(&support) {
            let inl = inliers_of(&refit, points, &pool, dist_tol);
            if inl.len() >= best.len() {
                best = inl;
                line = refit;
            }
        }
        let (lo, hi) = best
            .iter()
            .map(|&i| line.along(points[i]))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s), b.max(s)));
        if hi - lo <= 1e-12 {
            break;
        }
        pool.retain(|i| !best.contains(i));
        walls.push(WallSegment {
            p1: line.at(lo),
            p2: line.at(hi),
            inlier_count: best.len(),
            inliers: best,
        });
    }
    walls
}

/// `t=<s> kind=<k> x=<m> y=<m> z=<m> yaw=<rad> conf=<f>`
pub fn detection_log_line(t: f64, obj: &OrientedObject, confidence: f64) -> String {
    format!(
        "t={t:.2} kind={} x={:.4} y={:.4} z={:.4} yaw={:.4} conf={:.3}",
        obj.kind, obj.position.x, obj.position.y, obj.position.z, obj.yaw, confidence
    )
}

/// Planar footprint samples of an elongated part: a `length` by `width`
/// rectangle grid centred on `center`, long side along `yaw`.
pub fn footprint_points(
    center: Point2<f64>,
    yaw: f64,
    length: f64,
    width: f64,
    n_long: usize,
    n_wide: usize,
) -> Vec<Point2<f64>> {
    let mut pts = Vec::with_capacity(n_long * n_wide);
    for i in 0..n_long {
        let a = if n_long > 1 {
            length * (i as f64 / (n_long - 1) as f64 - 0.5)
        } else {
            0.0
        };
        for j in 0..n_wide {
            let b = if n_wide > 1 {
                width * (j as f64 / (n_wide - 1) as f64 - 0.5)
            } else {
                0.0
            };
            pts.push(center + Point2::new(a, b).rotated(yaw));
        }
    }
    pts
}
