//! Scans, rigid sensor poses, and the ASCII scan file format.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// The semantic label set. `DontCare` marks ground-truth cells excluded from
/// training and evaluation; it is never a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum SemanticClass {
    Background = 0,
    Car = 1,
    Pedestrian = 2,
    Cyclist = 3,
    DontCare = 4,
}

/// Number of predictable classes (excludes `DontCare`).
pub const N_CLASSES: usize = 4;

impl SemanticClass {
    pub fn from_id(id: u8) -> Result<Self> {
        Ok(match id {
            0 => SemanticClass::Background,
            1 => SemanticClass::Car,
            2 => SemanticClass::Pedestrian,
            3 => SemanticClass::Cyclist,
            4 => SemanticClass::DontCare,
            v => return Err(Error::Argument(format!("unknown class id {v}"))),
        })
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticClass::Background => "background",
            SemanticClass::Car => "car",
            SemanticClass::Pedestrian => "pedestrian",
            SemanticClass::Cyclist => "cyclist",
            SemanticClass::DontCare => "dontcare",
        }
    }

    pub fn predictable() -> [SemanticClass; N_CLASSES] {
        [
            SemanticClass::Background,
            SemanticClass::Car,
            SemanticClass::Pedestrian,
            SemanticClass::Cyclist,
        ]
    }
}

/// Rigid transform from the sensor frame into the map frame, stored as a
/// unit quaternion (w, x, y, z) plus a translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [f64; 4],
    pub translation: Point3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0, 0.0, 0.0],
        }
    }

    /// Pose at `translation` rotated by `yaw` radians about +z.
    pub fn from_yaw(translation: Point3, yaw: f64) -> Self {
        Pose {
            rotation: [(yaw / 2.0).cos(), 0.0, 0.0, (yaw / 2.0).sin()],
            translation,
        }
    }

    /// The rotation is orthonormal iff the quaternion has unit norm.
    pub fn validate(&self) -> Result<()> {
        let [w, x, y, z] = self.rotation;
        let norm2 = w * w + x * x + y * y + z * z;
        if (norm2 - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "pose rotation is not orthonormal: |q|^2 = {norm2}"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("pose translation is not finite".into()));
        }
        Ok(())
    }

    pub fn rotate(&self, p: Point3) -> Point3 {
        let [w, x, y, z] = self.rotation;
        // Rotation matrix from the unit quaternion.
        let r = [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ];
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
        ]
    }

    /// Map a sensor-frame point into the map frame.
    pub fn transform(&self, p: Point3) -> Point3 {
        let r = self.rotate(p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn inverse(&self) -> Pose {
        let [w, x, y, z] = self.rotation;
        let conj = Pose {
            rotation: [w, -x, -y, -z],
            translation: [0.0, 0.0, 0.0],
        };
        let t = conj.rotate(self.translation);
        Pose {
            rotation: conj.rotation,
            translation: [-t[0], -t[1], -t[2]],
        }
    }
}

/// One timestamped scan: sensor pose, points (sensor frame) and optional
/// per-point ground-truth labels (synthetic data only).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudScan {
    pub timestamp: f64,
    pub pose: Pose,
    pub points: Vec<Point3>,
    pub labels: Option<Vec<SemanticClass>>,
}

impl PointCloudScan {
    pub fn validate(&self) -> Result<()> {
        self.pose.validate()?;
        if !self
            .points
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
        {
            return Err(Error::Argument("scan contains non-finite points".into()));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.points.len() {
                return Err(Error::Argument(format!(
                    "scan has {} points but {} labels",
                    self.points.len(),
                    labels.len()
                )));
            }
        }
        Ok(())
    }
}

/// Write a scan: header `timestamp tx ty tz qw qx qy qz`, then one
/// `x y z label_id` line per point.
pub fn write_scan(scan: &PointCloudScan, out: &mut dyn Write) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io("<scan>", e);
    let t = &scan.pose.translation;
    let q = &scan.pose.rotation;
    writeln!(
        out,
        "{} {} {} {} {} {} {} {}",
        scan.timestamp, t[0], t[1], t[2], q[0], q[1], q[2], q[3]
    )
    .map_err(io_err)?;
    for (i, p) in scan.points.iter().enumerate() {
        match &scan.labels {
            Some(labels) => writeln!(out, "{} {} {} {}", p[0], p[1], p[2], labels[i].id()),
            None => writeln!(out, "{} {} {}", p[0], p[1], p[2]),
        }
        .map_err(io_err)?;
    }
    Ok(())
}

pub fn save_scan(path: &Path, scan: &PointCloudScan) -> Result<()> {
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    write_scan(scan, &mut f)
}

pub fn read_scan(input: &mut dyn BufRead) -> Result<PointCloudScan> {
    let mut header = String::new();
    input
        .read_line(&mut header)
        .map_err(|e| Error::io("<scan>", e))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 8 {
        return Err(Error::format(
            "header",
            format!("expected 8 fields, got {}", fields.len()),
        ));
    }
    let parse = |s: &str, field: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::format(field, format!("not a number: {s}")))
    };
    let timestamp = parse(fields[0], "timestamp")?;
    let translation = [
        parse(fields[1], "tx")?,
        parse(fields[2], "ty")?,
        parse(fields[3], "tz")?,
    ];
    let rotation = [
        parse(fields[4], "qw")?,
        parse(fields[5], "qx")?,
        parse(fields[6], "qy")?,
        parse(fields[7], "qz")?,
    ];
    let mut points = Vec::new();
    let mut labels: Vec<SemanticClass> = Vec::new();
    let mut any_unlabeled = false;
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<scan>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fs: Vec<&str> = line.split_whitespace().collect();
        if fs.len() != 3 && fs.len() != 4 {
            return Err(Error::format(
                format!("point line {}", lineno + 2),
                format!("expected 3 or 4 fields, got {}", fs.len()),
            ));
        }
        let field = format!("point line {}", lineno + 2);
        points.push([
            parse(fs[0], &field)?,
            parse(fs[1], &field)?,
            parse(fs[2], &field)?,
        ]);
        if fs.len() == 4 {
            let id: u8 = fs[3]
                .parse()
                .map_err(|_| Error::format(&field, format!("bad label id {}", fs[3])))?;
            labels.push(SemanticClass::from_id(id)?);
        } else {
            any_unlabeled = true;
        }
    }
    if any_unlabeled && !labels.is_empty() {
        return Err(Error::format(
            "labels",
            "scan mixes labeled and unlabeled points",
        ));
    }
    let scan = PointCloudScan {
        timestamp,
        pose: Pose {
            rotation,
            translation,
        },
        points,
        labels: if any_unlabeled || labels.is_empty() {
            None
        } else {
            Some(labels)
        },
    };
    scan.validate()?;
    Ok(scan)
}

pub fn load_scan(path: &Path) -> Result<PointCloudScan> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_scan(&mut BufReader::new(f))
}
