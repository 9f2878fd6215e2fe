//! Labelled synthetic worlds for tests and demos: simple objects along a
//! square road loop with a partial second lap, observed by an idealized
//! 360° range sensor.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::cloud::{horizontal_distance, transform_cloud, Point3, PointCloud, Pose, Trajectory};
use crate::error::{Error, Result};
use crate::io::{write_cloud, write_poses};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    Box,
    Pole,
    Tree,
    LShape,
}

impl ObjectKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectKind::Box => "box",
            ObjectKind::Pole => "pole",
            ObjectKind::Tree => "tree",
            ObjectKind::LShape => "l-shape",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Primitive {
    /// Vertical box standing on the ground; bottom face omitted.
    Box { center: Point3, half: Vector3<f64>, yaw: f64 },
    /// Vertical cylinder side and top cap.
    Cylinder { base: Point3, radius: f64, height: f64 },
    Sphere { center: Point3, radius: f64 },
}

impl Primitive {
    fn area(&self) -> f64 {
        match *self {
            Primitive::Box { half, .. } => {
                let (a, b, c) = (2.0 * half.x, 2.0 * half.y, 2.0 * half.z);
                a * b + 2.0 * (a * c + b * c)
            }
            Primitive::Cylinder { radius, height, .. } => {
                std::f64::consts::TAU * radius * height + std::f64::consts::PI * radius * radius
            }
            Primitive::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
        }
    }

    fn anchor(&self) -> Point3 {
        match *self {
            Primitive::Box { center, .. } | Primitive::Sphere { center, .. } => center,
            Primitive::Cylinder { base, .. } => base,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point3 {
        match *self {
            Primitive::Box { center, half, yaw } => {
                let (a, b, c) = (2.0 * half.x, 2.0 * half.y, 2.0 * half.z);
                let faces = [a * b, a * c, a * c, b * c, b * c];
                let mut pick = rng.random::<f64>() * faces.iter().sum::<f64>();
                let mut face = 0;
                while face < 4 && pick > faces[face] {
                    pick -= faces[face];
                    face += 1;
                }
                let (u, v) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let local = match face {
                    0 => Vector3::new(u * half.x, v * half.y, half.z),
                    1 => Vector3::new(u * half.x, half.y, v * half.z),
                    2 => Vector3::new(u * half.x, -half.y, v * half.z),
                    3 => Vector3::new(half.x, u * half.y, v * half.z),
                    _ => Vector3::new(-half.x, u * half.y, v * half.z),
                };
                let (s, co) = yaw.sin_cos();
                center + Vector3::new(co * local.x - s * local.y, s * local.x + co * local.y, local.z)
            }
            Primitive::Cylinder { base, radius, height } => {
                let side = std::f64::consts::TAU * radius * height;
                let cap = std::f64::consts::PI * radius * radius;
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                if rng.random::<f64>() * (side + cap) < side {
                    base + Vector3::new(radius * theta.cos(), radius * theta.sin(), rng.random_range(0.0..height))
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    base + Vector3::new(r * theta.cos(), r * theta.sin(), height)
                }
            }
            Primitive::Sphere { center, radius } => {
                let d: [f64; 3] = UnitSphere.sample(rng);
                center + Vector3::from(d) * radius
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldObject {
    pub id: usize,
    pub kind: ObjectKind,
    /// Ground-level center of the footprint.
    pub position: Point3,
    pub yaw: f64,
    /// Kind-specific extents (m); see `objects.csv` in the README.
    pub size: Vector3<f64>,
    /// Radius of a vertical cylinder enclosing the object.
    pub footprint: f64,
    pub height: f64,
    primitives: Vec<Primitive>,
}

impl WorldObject {
    fn build(id: usize, kind: ObjectKind, position: Point3, yaw: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut prims = Vec::new();
        let (size, footprint, height);
        match kind {
            ObjectKind::Box => {
                let s = Vector3::new(rng.random_range(1.0..4.0), rng.random_range(1.0..4.0), rng.random_range(1.0..3.5));
                prims.push(Primitive::Box { center: position + Vector3::new(0.0, 0.0, s.z / 2.0), half: s / 2.0, yaw });
                size = s;
                footprint = (s.x * s.x + s.y * s.y).sqrt() / 2.0;
                height = s.z;
            }
            ObjectKind::Pole => {
                let (r, h) = (rng.random_range(0.2..0.6), rng.random_range(2.0..6.0));
                prims.push(Primitive::Cylinder { base: position, radius: r, height: h });
                size = Vector3::new(r, r, h);
                footprint = r;
                height = h;
            }
            ObjectKind::Tree => {
                let (tr, th, cr) = (rng.random_range(0.15..0.3), rng.random_range(1.5..3.0), rng.random_range(1.0..2.5));
                let crown = position + Vector3::new(0.0, 0.0, th + 0.8 * cr);
                prims.push(Primitive::Cylinder { base: position, radius: tr, height: th + 0.8 * cr });
                prims.push(Primitive::Sphere { center: crown, radius: cr });
                size = Vector3::new(tr, cr, th);
                footprint = cr;
                height = th + 1.8 * cr;
            }
            ObjectKind::LShape => {
                let (a, b, h) = (rng.random_range(2.0..5.0), rng.random_range(2.0..5.0), rng.random_range(1.5..3.0));
                let t = 0.5;
                let (s, c) = yaw.sin_cos();
                let rot = |x: f64, y: f64| Vector3::new(c * x - s * y, s * x + c * y, h / 2.0);
                prims.push(Primitive::Box { center: position + rot(a / 2.0, t / 2.0), half: Vector3::new(a / 2.0, t / 2.0, h / 2.0), yaw });
                prims.push(Primitive::Box { center: position + rot(t / 2.0, t + (b - t) / 2.0), half: Vector3::new(t / 2.0, (b - t) / 2.0, h / 2.0), yaw });
                size = Vector3::new(a, b, h);
                footprint = (a * a + b * b).sqrt();
                height = h;
            }
        }
        Self { id, kind, position, yaw, size, footprint, height, primitives: prims }
    }

    pub fn surface_area(&self) -> f64 {
        self.primitives.iter().map(Primitive::area).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldParams {
    pub n_objects: usize,
    /// Side length of the square road loop (m).
    pub side: f64,
    /// Length of the second lap along the first side (m).
    pub revisit: f64,
    pub min_offset: f64,
    pub max_offset: f64,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            n_objects: 40,
            side: 60.0,
            revisit: 60.0,
            min_offset: 4.0,
            max_offset: 15.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserveParams {
    pub range: f64,
    /// Surface samples per m² for an object 10 m away; falls off with the
    /// squared range beyond that.
    pub density: f64,
    pub ground_points: usize,
    /// Gaussian noise per coordinate (m).
    pub noise: f64,
    pub seed: u64,
}

impl Default for ObserveParams {
    fn default() -> Self {
        Self {
            range: 60.0,
            density: 1000.0,
            ground_points: 40_000,
            noise: 0.02,
            seed: 0,
        }
    }
}

const DENSITY_REFERENCE_RANGE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub params: WorldParams,
    pub objects: Vec<WorldObject>,
    waypoints: Vec<Point3>,
}

fn segment_distance(p: &Point3, a: &Point3, b: &Point3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    horizontal_distance(p, &(a + ab * t))
}

impl World {
    pub fn generate(params: &WorldParams) -> Result<Self> {
        if !(params.side > 2.0 * params.max_offset && params.min_offset > 0.0 && params.max_offset > params.min_offset) {
            return Err(Error::param("world needs side > 2·max_offset > 2·min_offset > 0"));
        }
        let s = params.side;
        let mut waypoints = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(s, 0.0, 0.0),
            Point3::new(s, s, 0.0),
            Point3::new(0.0, s, 0.0),
            Point3::new(0.0, 0.0, 0.0),
        ];
        if params.revisit > 0.0 {
            waypoints.push(Point3::new(params.revisit.min(s), 0.0, 0.0));
        }
        let mut world = Self { params: *params, objects: Vec::new(), waypoints };
        let loop_length = 4.0 * s;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let kinds = [ObjectKind::Box, ObjectKind::Pole, ObjectKind::Tree, ObjectKind::LShape];
        let mut attempts = 0;
        while world.objects.len() < params.n_objects {
            attempts += 1;
            if attempts > 200 * params.n_objects.max(1) {
                return Err(Error::param("could not place all objects; reduce n_objects"));
            }
            let arc = rng.random_range(0.0..loop_length);
            let (on_road, heading) = world.point_at(arc);
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let offset = rng.random_range(params.min_offset..params.max_offset);
            let normal = Vector3::new(-heading.sin(), heading.cos(), 0.0) * side;
            let position = on_road + normal * offset;
            let kind = kinds[rng.random_range(0..kinds.len())];
            let yaw = rng.random_range(0.0..std::f64::consts::TAU);
            let object = WorldObject::build(world.objects.len(), kind, position, yaw, &mut rng);
            let clear_of_road = world
                .waypoints
                .windows(2)
                .all(|w| segment_distance(&position, &w[0], &w[1]) >= (object.footprint + 1.0).max(3.0));
            let clear_of_objects = world
                .objects
                .iter()
                .all(|o| horizontal_distance(&o.position, &position) >= o.footprint + object.footprint + 1.5);
            if clear_of_road && clear_of_objects {
                world.objects.push(object);
            }
        }
        Ok(world)
    }

    pub fn path_length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Road position and heading at arc length `arc`.
    pub fn point_at(&self, arc: f64) -> (Point3, f64) {
        let mut left = arc.max(0.0);
        for w in self.waypoints.windows(2) {
            let d = w[1] - w[0];
            let len = d.norm();
            let heading = d.y.atan2(d.x);
            if left <= len {
                return (w[0] + d * (left / len), heading);
            }
            left -= len;
        }
        let n = self.waypoints.len();
        let d = self.waypoints[n - 1] - self.waypoints[n - 2];
        (self.waypoints[n - 1], d.y.atan2(d.x))
    }

    /// Sensor poses every `spacing` metres along the road, heading-aligned.
    pub fn poses(&self, spacing: f64) -> Vec<Pose> {
        let n = (self.path_length() / spacing).floor() as usize;
        (0..=n)
            .map(|k| {
                let (p, yaw) = self.point_at(k as f64 * spacing);
                Pose::from_yaw(yaw, p.coords)
            })
            .collect()
    }

    /// A scan in the global frame taken from `pose`, seeded by
    /// `(obs.seed, scan_index)`.
    pub fn observe(&self, pose: &Pose, obs: &ObserveParams, scan_index: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(obs.seed);
        rng.set_stream(scan_index as u64);
        let noise = Normal::new(0.0, obs.noise.max(0.0)).expect("finite noise");
        let sensor = pose.position();
        let mut points = Vec::new();
        for object in &self.objects {
            if horizontal_distance(&object.position, &sensor) > obs.range + object.footprint {
                continue;
            }
            for prim in &object.primitives {
                let range = horizontal_distance(&prim.anchor(), &sensor).max(DENSITY_REFERENCE_RANGE);
                let scale = (DENSITY_REFERENCE_RANGE / range).powi(2);
                let n = (prim.area() * obs.density * scale).round() as usize;
                for _ in 0..n {
                    points.push(prim.sample(&mut rng));
                }
            }
        }
        for _ in 0..obs.ground_points {
            let r = rng.random_range(2.0..obs.range);
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            points.push(sensor + Vector3::new(r * theta.cos(), r * theta.sin(), -sensor.z));
        }
        let points = points
            .into_iter()
            .filter(|p| horizontal_distance(p, &sensor) <= obs.range)
            .map(|p| p + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        PointCloud::with_frame(points, "world")
    }

    /// The object whose enclosing cylinder, grown by `margin`, contains `p`.
    pub fn object_at(&self, p: &Point3, margin: f64) -> Option<usize> {
        self.objects
            .iter()
            .filter(|o| {
                horizontal_distance(&o.position, p) <= o.footprint + margin
                    && p.z >= -margin
                    && p.z <= o.height + margin
            })
            .min_by(|a, b| horizontal_distance(&a.position, p).total_cmp(&horizontal_distance(&b.position, p)))
            .map(|o| o.id)
    }

    pub fn objects_csv(&self) -> String {
        let mut s = String::from("id,kind,x,y,yaw,size_x,size_y,size_z\n");
        for o in &self.objects {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                o.id, o.kind.name(), o.position.x, o.position.y, o.yaw, o.size.x, o.size.y, o.size.z
            )
            .unwrap();
        }
        s
    }
}

/// Writes `scans/NNNNNN.segpc` (sensor frame), `poses.txt` and
/// `objects.csv` under `dir`.
pub fn write_dataset(world: &World, poses: &[Pose], obs: &ObserveParams, dir: &Path) -> Result<()> {
    let scans = dir.join("scans");
    fs::create_dir_all(&scans)?;
    for (i, pose) in poses.iter().enumerate() {
        let global = world.observe(pose, obs, i);
        let mut local = transform_cloud(&global, &pose.inverse());
        local.frame_id = "sensor".into();
        write_cloud(&scans.join(format!("{i:06}.segpc")), &local)?;
    }
    write_poses(&dir.join("poses.txt"), &Trajectory::from_sequence(poses.iter().copied()))?;
    fs::write(dir.join("objects.csv"), world.objects_csv())?;
    Ok(())
}
