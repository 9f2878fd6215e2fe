//! Point-cloud and pose-file ingestion, dataset sequences.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use crate::cloud::{Point3, PointCloud, Pose, Trajectory};
use crate::error::{Error, Result};
use crate::wire;

pub const CLOUD_MAGIC: &[u8; 7] = b"SEGPC1\n";
/// Pose rows further than this from orthonormal are rejected.
pub const POSE_TOLERANCE: f64 = 1e-6;

/// Reads a `SEGPC1` binary cloud, or whitespace-separated ASCII `x y z`
/// lines when the header is absent.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    let frame = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let points = if bytes.starts_with(CLOUD_MAGIC) {
        parse_binary(&bytes[CLOUD_MAGIC.len()..])?
    } else if bytes.starts_with(b"SEGPC") {
        let tag = String::from_utf8_lossy(&bytes[..bytes.len().min(6)]).into_owned();
        return Err(Error::Version(tag));
    } else {
        parse_ascii(&bytes, &path.display().to_string())?
    };
    let cloud = PointCloud::with_frame(points, frame);
    cloud.validate()?;
    Ok(cloud)
}

fn parse_binary(mut body: &[u8]) -> Result<Vec<Point3>> {
    const WHAT: &str = "cloud";
    let count = wire::read_u64(&mut body, WHAT)? as usize;
    if body.len() != count.saturating_mul(24) {
        return Err(Error::format(
            WHAT,
            format!("header announces {count} points but body holds {} bytes", body.len()),
        ));
    }
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        points.push(Point3::new(
            wire::read_f64(&mut body, WHAT)?,
            wire::read_f64(&mut body, WHAT)?,
            wire::read_f64(&mut body, WHAT)?,
        ));
    }
    Ok(points)
}

fn parse_ascii(bytes: &[u8], origin: &str) -> Result<Vec<Point3>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::format("cloud", "neither SEGPC1 nor UTF-8 text"))?;
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: origin.to_string(),
            line: n + 1,
            reason,
        };
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("invalid number `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 3 {
            return Err(err(format!("expected 3 coordinates, found {}", values.len())));
        }
        points.push(Point3::new(values[0], values[1], values[2]));
    }
    Ok(points)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CLOUD_MAGIC)?;
    wire::write_u64(&mut w, cloud.len() as u64)?;
    for p in &cloud.points {
        for v in p.iter() {
            wire::write_f64(&mut w, *v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_cloud_ascii(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses one pose row of 12 reals (row-major `[R | t]`).
pub fn parse_pose_row(line: &str) -> std::result::Result<Pose, String> {
    let values = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("invalid number `{t}`")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != 12 {
        return Err(format!("expected 12 values, found {}", values.len()));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err("non-finite value".into());
    }
    let v = &values;
    let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let t = Vector3::new(v[3], v[7], v[11]);
    // Exact rotations are kept bit-for-bit; slightly off ones are projected.
    Pose::new(r, t)
        .or_else(|_| Pose::from_approximate(r, t, POSE_TOLERANCE))
        .map_err(|e| e.to_string())
}

/// Reads a pose file: one row per scan, indexed 0, 1, 2, … Blank lines are
/// skipped.
pub fn read_poses(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path)?;
    parse_poses(&text, &path.display().to_string())
}

pub fn parse_poses(text: &str, origin: &str) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pose = parse_pose_row(line).map_err(|reason| Error::Parse {
            path: origin.to_string(),
            line: n + 1,
            reason,
        })?;
        poses.push(pose);
    }
    Ok(Trajectory::from_sequence(poses))
}

pub fn write_poses(path: &Path, trajectory: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (_, pose) in trajectory.iter() {
        let row: Vec<String> = pose.to_row_major().iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// An ordered list of scan files with one ground-truth pose each.
#[derive(Debug, Clone)]
pub struct SequenceDataset {
    pub scans: Vec<PathBuf>,
    pub poses: Trajectory,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn load_scan(&self, i: usize) -> Result<PointCloud> {
        read_cloud(&self.scans[i])
    }

    pub fn pose(&self, i: usize) -> Result<&Pose> {
        self.poses.get(i).ok_or(Error::MissingPose(i))
    }

    /// Lazily loads `(index, sensor-frame cloud, pose)` in sequence order.
    pub fn frames(&self) -> impl Iterator<Item = Result<(usize, PointCloud, Pose)>> + '_ {
        (0..self.len()).map(move |i| Ok((i, self.load_scan(i)?, *self.pose(i)?)))
    }
}

/// Lists the regular, non-hidden files of `scan_dir` in name order and pairs
/// them with the rows of `pose_file`.
pub fn load_sequence(scan_dir: &Path, pose_file: &Path) -> Result<SequenceDataset> {
    let mut scans = Vec::new();
    for entry in fs::read_dir(scan_dir)? {
        let entry = entry?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if entry.file_type()?.is_file() && !hidden {
            scans.push(entry.path());
        }
    }
    scans.sort();
    let poses = read_poses(pose_file)?;
    if poses.len() != scans.len() {
        return Err(Error::format(
            "sequence",
            format!("{} scans but {} poses", scans.len(), poses.len()),
        ));
    }
    Ok(SequenceDataset { scans, poses })
}
