//! Pinhole intrinsics with a stereo baseline, and rigid transforms.
//!
//! Poses are world-from-camera: `x_world = R·x_cam + t`. The relative pose
//! of keyframe `j` with respect to the current frame `t` is
//! `T_{j→t} = W_j⁻¹ ∘ W_t`, which takes current-camera coordinates into
//! keyframe-camera coordinates; its inverse moves keyframe points into the
//! current camera.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{arg_err, Error, Result};

/// Rotations read from files are accepted up to this deviation from
/// orthonormality; text formats rarely carry full precision.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, baseline: f64) -> Result<Self> {
        let all = [fx, fy, cx, cy, baseline];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera intrinsics".into()));
        }
        if fx <= 0.0 || fy <= 0.0 || baseline <= 0.0 {
            return arg_err(format!(
                "fx, fy and baseline must be positive: {fx} {fy} {baseline}"
            ));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            baseline,
        })
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<(f64, f64)> {
        if p.z <= 0.0 {
            return Err(Error::BehindCamera(p.z));
        }
        Ok((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn backproject(&self, u: f64, v: f64, disparity: f64) -> Result<Vector3<f64>> {
        if disparity <= 0.0 || !disparity.is_finite() {
            return Err(Error::NonPositiveDisparity(disparity));
        }
        let z = self.depth_from_disparity(disparity);
        Ok(Vector3::new(
            (u - self.cx) * z / self.fx,
            (v - self.cy) * z / self.fy,
            z,
        ))
    }

    pub fn depth_from_disparity(&self, d: f64) -> f64 {
        self.baseline * self.fx / d
    }

    pub fn disparity_from_depth(&self, z: f64) -> f64 {
        self.baseline * self.fx / z
    }

    /// Parse the one-line intrinsics format `fx fy cx cy baseline`.
    pub fn parse(text: &str) -> Result<Self> {
        let vals = parse_reals(text)?;
        if vals.len() != 5 {
            return Err(Error::Parse(format!(
                "intrinsics need 5 numbers, got {}",
                vals.len()
            )));
        }
        Self::new(vals[0], vals[1], vals[2], vals[3], vals[4])
    }

    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.fx, self.fy, self.cx, self.cy, self.baseline
        )
    }
}

pub(crate) fn parse_reals(text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|tok| {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Parse(format!("not a number: {tok:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse(format!("non-finite value {tok:?}")))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

fn orthonormal_deviation(r: &Matrix3<f64>) -> f64 {
    let e = r.transpose() * r - Matrix3::identity();
    let det = (r.determinant() - 1.0).abs();
    e.amax().max(det)
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        if r.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose".into()));
        }
        let dev = orthonormal_deviation(&r);
        if dev > ROTATION_TOLERANCE {
            return Err(Error::NonOrthonormal(dev));
        }
        Ok(Self { r, t })
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vector3::new(x, y, z),
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle_rad: f64, t: Vector3<f64>) -> Self {
        let r = match Unit::try_new(axis, 1e-15) {
            Some(a) => *Rotation3::from_axis_angle(&a, angle_rad).matrix(),
            None => Matrix3::identity(),
        };
        Self { r, t }
    }

    /// Row-major `[R|t]` as written in pose files.
    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::Parse(format!(
                "pose needs 12 numbers, got {}",
                v.len()
            )));
        }
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Self::new(r, Vector3::new(v[3], v[7], v[11]))
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let (r, t) = (&self.r, &self.t);
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r * p + self.t
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            r: self.r * other.r,
            t: self.r * other.t + self.t,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.r.transpose();
        Pose {
            r: rt,
            t: -(rt * self.t),
        }
    }

    pub fn rotation_angle_deg(&self) -> f64 {
        let c = ((self.r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }

    pub fn translation_norm(&self) -> f64 {
        self.t.norm()
    }

    /// `T_{j→t}` from world-from-camera poses of keyframe `j` and current frame `t`.
    pub fn relative(world_j: &Pose, world_t: &Pose) -> Pose {
        world_j.inverse().compose(world_t)
    }

    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.r - other.r).amax().max((self.t - other.t).amax())
    }
}

/// `a ∘ b`, or `a⁻¹` when `b` is absent.
pub fn pose_compose_invert(a: &Pose, b: Option<&Pose>) -> Result<Pose> {
    for p in std::iter::once(a).chain(b) {
        let dev = orthonormal_deviation(&p.r);
        if dev > ROTATION_TOLERANCE {
            return Err(Error::NonOrthonormal(dev));
        }
    }
    Ok(match b {
        Some(b) => a.compose(b),
        None => a.inverse(),
    })
}

/// Random-axis rotation with angle ~ N(0, σ_R degrees) applied in the camera
/// frame, plus N(0, σ_t) noise on each translation component.
pub fn perturb_pose(p: &Pose, sigma_r_deg: f64, sigma_t: f64, seed: u64) -> Result<Pose> {
    if !(sigma_r_deg >= 0.0 && sigma_t >= 0.0) {
        return arg_err(format!(
            "noise levels must be non-negative: {sigma_r_deg} {sigma_t}"
        ));
    }
    if sigma_r_deg == 0.0 && sigma_t == 0.0 {
        return Ok(*p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = loop {
        let a: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
        if a.norm() > 1e-9 {
            break a;
        }
    };
    let angle = if sigma_r_deg > 0.0 {
        let n = Normal::new(0.0, sigma_r_deg).expect("positive sigma");
        n.sample(&mut rng).to_radians()
    } else {
        0.0
    };
    let mut dt = Vector3::zeros();
    if sigma_t > 0.0 {
        let n = Normal::new(0.0, sigma_t).expect("positive sigma");
        for k in 0..3 {
            dt[k] = n.sample(&mut rng);
        }
    }
    let noise = Pose::from_axis_angle(axis, angle, Vector3::zeros());
    let rotated = p.compose(&noise);
    Ok(Pose {
        r: rotated.r,
        t: p.t + dt,
    })
}

/// One pose per non-empty line, 12 reals each.
pub fn parse_pose_file(text: &str) -> Result<Vec<Pose>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let v = parse_reals(l).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            Pose::from_row_major(&v).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn format_pose_file(poses: &[Pose]) -> String {
    let mut s = String::new();
    for p in poses {
        let v = p.to_row_major();
        let line: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}
