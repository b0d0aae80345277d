//! Synthetic rectified stereo scenes and sequences with exact ground truth,
//! and the brute-force matcher used as a reference.
//!
//! Scenes are made of fronto-parallel planes: an infinite background and an
//! optional vertical strip in front of it. Each plane carries a procedural
//! texture indexed by its own plane coordinates, so any camera that sees a
//! point renders the same intensity for it.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, Pose};
use crate::error::{arg_err, Result};
use crate::features::census_transform;
use crate::regression::DisparityMap;
use crate::tensor::Tensor;

pub const DEFAULT_BASELINE: f64 = 0.25;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, plane: u64, octave: u64, ix: i64, iy: i64) -> f64 {
    let mut h = splitmix(seed ^ 0x5151_7A7A);
    h = splitmix(h ^ plane);
    h = splitmix(h ^ octave);
    h = splitmix(h ^ ix as u64);
    h = splitmix(h ^ (iy as u64).rotate_left(32));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Multi-octave value noise; each octave interpolates a hashed lattice
/// bilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub seed: u64,
    pub plane: u64,
    /// `(period, amplitude)` in texture units.
    pub octaves: Vec<(f64, f64)>,
}

impl Texture {
    pub fn new(seed: u64, plane: u64) -> Self {
        Self {
            seed,
            plane,
            octaves: vec![(1.0, 1.0), (4.0, 0.7), (16.0, 0.7)],
        }
    }

    pub fn sample(&self, s: f64, t: f64) -> f64 {
        let mut acc = 0.0;
        let mut total = 0.0;
        for (k, &(period, amp)) in self.octaves.iter().enumerate() {
            let (x, y) = (s / period, t / period);
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let (ix, iy) = (x0 as i64, y0 as i64);
            let l = |dx: i64, dy: i64| lattice(self.seed, self.plane, k as u64, ix + dx, iy + dy);
            let top = (1.0 - fx) * l(0, 0) + fx * l(1, 0);
            let bot = (1.0 - fx) * l(0, 1) + fx * l(1, 1);
            acc += amp * ((1.0 - fy) * top + fy * bot);
            total += amp;
        }
        acc / total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SceneSpec {
    /// Single fronto-parallel plane at disparity `disparity`.
    Plane { disparity: f64 },
    /// Background at `far` plus a vertical strip at `near`, covering
    /// columns `[strip_left, strip_left + strip_width)` of the first frame.
    TwoPlane {
        far: f64,
        near: f64,
        strip_left: f64,
        strip_width: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Trajectory {
    Static,
    /// Along the optical axis, meters per frame.
    Forward {
        step: f64,
    },
    /// Along +x, meters per frame.
    Lateral {
        step: f64,
    },
    /// Around a vertical axis through `(0, 0, radius)`, degrees per frame.
    Orbit {
        step_deg: f64,
        radius: f64,
    },
}

impl Trajectory {
    /// World-from-camera pose of frame `k`; frame 0 is the identity.
    pub fn pose(&self, k: usize) -> Pose {
        let kf = k as f64;
        match *self {
            Trajectory::Static => Pose::identity(),
            Trajectory::Forward { step } => Pose::from_translation(0.0, 0.0, step * kf),
            Trajectory::Lateral { step } => Pose::from_translation(step * kf, 0.0, 0.0),
            Trajectory::Orbit { step_deg, radius } => {
                let th = (step_deg * kf).to_radians();
                let c = Vector3::new(-radius * th.sin(), 0.0, radius * (1.0 - th.cos()));
                Pose::from_axis_angle(Vector3::y(), th, c)
            }
        }
    }

    pub fn is_degenerate(&self) -> bool {
        match *self {
            Trajectory::Static => true,
            Trajectory::Forward { step } | Trajectory::Lateral { step } => step == 0.0,
            Trajectory::Orbit { step_deg, .. } => step_deg == 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// `[H,W]` grayscale in `[0, 1]`.
    pub left: Tensor,
    pub right: Tensor,
    pub gt: DisparityMap,
    /// True where the left pixel is not visible in the right image.
    pub occlusion: Vec<bool>,
    /// True where a pixel occluded in this frame was seen by the left camera
    /// of an earlier frame. Only the last frame of a sequence carries it.
    pub previously_visible: Option<Vec<bool>>,
    pub pose: Pose,
    pub camera: CameraModel,
    pub frame_index: usize,
}

/// Camera used for all synthetic scenes: `fx = fy = W/2`, principal point at
/// the image center.
pub fn synthetic_camera(h: usize, w: usize, baseline: f64) -> Result<CameraModel> {
    CameraModel::new(
        w as f64 / 2.0,
        w as f64 / 2.0,
        (w as f64 - 1.0) / 2.0,
        (h as f64 - 1.0) / 2.0,
        baseline,
    )
}

#[derive(Debug, Clone)]
struct World {
    cam: CameraModel,
    far_z: f64,
    /// `(z, x0, x1)` in world coordinates.
    strip: Option<(f64, f64, f64)>,
    textures: [Texture; 2],
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    point: Vector3<f64>,
    depth: f64,
    plane: usize,
}

impl World {
    fn new(spec: &SceneSpec, cam: CameraModel, seed: u64, d_max: f64) -> Result<Self> {
        let check = |d: f64| {
            if d > 0.0 && d < d_max {
                Ok(())
            } else {
                arg_err(format!("disparity {d} outside (0, {d_max})"))
            }
        };
        let (far, strip) = match *spec {
            SceneSpec::Plane { disparity } => {
                check(disparity)?;
                (disparity, None)
            }
            SceneSpec::TwoPlane {
                far,
                near,
                strip_left,
                strip_width,
            } => {
                check(far)?;
                check(near)?;
                if near <= far || strip_width <= 0.0 {
                    return arg_err(format!(
                        "near {near} must exceed far {far}, width {strip_width} > 0"
                    ));
                }
                let z = cam.depth_from_disparity(near);
                let x0 = (strip_left - 0.5 - cam.cx) * z / cam.fx;
                let x1 = (strip_left + strip_width - 0.5 - cam.cx) * z / cam.fx;
                (far, Some((z, x0, x1)))
            }
        };
        Ok(Self {
            cam,
            far_z: cam.depth_from_disparity(far),
            strip,
            textures: [Texture::new(seed, 0), Texture::new(seed, 1)],
        })
    }

    fn cast(&self, pose: &Pose, u: f64, v: f64) -> Option<Hit> {
        let dir_c = Vector3::new(
            (u - self.cam.cx) / self.cam.fx,
            (v - self.cam.cy) / self.cam.fy,
            1.0,
        );
        let dir = pose.rotation() * dir_c;
        let o = pose.translation();
        if dir.z <= 0.0 {
            return None;
        }
        let mut best: Option<Hit> = None;
        let lf = (self.far_z - o.z) / dir.z;
        if lf > 0.0 {
            best = Some(Hit {
                point: o + dir * lf,
                depth: lf,
                plane: 0,
            });
        }
        if let Some((z, x0, x1)) = self.strip {
            let ln = (z - o.z) / dir.z;
            let p = o + dir * ln;
            if ln > 0.0 && p.x >= x0 && p.x < x1 && best.is_none_or(|b| ln < b.depth) {
                best = Some(Hit {
                    point: p,
                    depth: ln,
                    plane: 1,
                });
            }
        }
        best
    }

    fn plane_z(&self, plane: usize) -> f64 {
        match (plane, self.strip) {
            (1, Some((z, _, _))) => z,
            _ => self.far_z,
        }
    }

    fn shade(&self, hit: &Hit) -> f64 {
        let z = self.plane_z(hit.plane);
        let s = hit.point.x * self.cam.fx / z + self.cam.cx;
        let t = hit.point.y * self.cam.fy / z + self.cam.cy;
        self.textures[hit.plane].sample(s, t)
    }

    /// Whether camera `pose` sees world point `p` on plane `plane`, inside
    /// its image and not hidden by the strip.
    fn sees(&self, pose: &Pose, p: &Vector3<f64>, plane: usize, h: usize, w: usize) -> bool {
        let local = pose.inverse().transform_point(p);
        let Ok((u, v)) = self.cam.project(&local) else {
            return false;
        };
        let eps = 1e-9;
        if u < -eps || v < -eps || u > w as f64 - 1.0 + eps || v > h as f64 - 1.0 + eps {
            return false;
        }
        if plane == 1 {
            return true;
        }
        match self.strip {
            None => true,
            Some((z, x0, x1)) => {
                let o = pose.translation();
                let dz = p.z - o.z;
                if dz.abs() < 1e-15 {
                    return true;
                }
                let lam = (z - o.z) / dz;
                if !(lam > 0.0 && lam < 1.0) {
                    return true;
                }
                let x = o.x + lam * (p.x - o.x);
                !(x >= x0 && x < x1)
            }
        }
    }

    fn render(&self, pose: &Pose, h: usize, w: usize) -> Tensor {
        let mut img = Tensor::zeros(&[h, w]);
        for y in 0..h {
            for x in 0..w {
                let v = self
                    .cast(pose, x as f64, y as f64)
                    .map_or(0.0, |hit| self.shade(&hit));
                img.data_mut()[y * w + x] = v;
            }
        }
        img
    }

    fn sample(
        &self,
        pose: &Pose,
        h: usize,
        w: usize,
        index: usize,
        earlier: &[Pose],
    ) -> SceneSample {
        let right_pose = pose.compose(&Pose::from_translation(self.cam.baseline, 0.0, 0.0));
        let left = self.render(pose, h, w);
        let right = self.render(&right_pose, h, w);
        let mut gt = vec![0.0; h * w];
        let mut valid = vec![false; h * w];
        let mut occ = vec![true; h * w];
        let mut prev = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let Some(hit) = self.cast(pose, x as f64, y as f64) else {
                    continue;
                };
                gt[i] = self.cam.disparity_from_depth(hit.depth);
                valid[i] = true;
                occ[i] = !self.sees(&right_pose, &hit.point, hit.plane, h, w);
                if occ[i] {
                    prev[i] = earlier
                        .iter()
                        .any(|p| self.sees(p, &hit.point, hit.plane, h, w));
                }
            }
        }
        let gt = DisparityMap::with_mask(Tensor::new(vec![h, w], gt).expect("shape"), 1, valid)
            .expect("mask length");
        SceneSample {
            left,
            right,
            gt,
            occlusion: occ,
            previously_visible: (!earlier.is_empty()).then_some(prev),
            pose: *pose,
            camera: self.cam,
            frame_index: index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSize {
    pub height: usize,
    pub width: usize,
    pub baseline: f64,
    pub d_max: f64,
}

impl SceneSize {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            baseline: DEFAULT_BASELINE,
            d_max: 192.0,
        }
    }
}

pub fn generate_scene(spec: &SceneSpec, seed: u64, size: SceneSize) -> Result<SceneSample> {
    let cam = synthetic_camera(size.height, size.width, size.baseline)?;
    let world = World::new(spec, cam, seed, size.d_max)?;
    Ok(world.sample(&Pose::identity(), size.height, size.width, 0, &[]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub frames: Vec<SceneSample>,
    /// Set when the trajectory does not move the camera.
    pub degenerate: bool,
}

/// Render `frames` views along `trajectory`. The last frame is labeled with
/// the occluded pixels that an earlier left view saw.
pub fn generate_sequence(
    spec: &SceneSpec,
    trajectory: &Trajectory,
    frames: usize,
    seed: u64,
    size: SceneSize,
) -> Result<SceneSequence> {
    if frames == 0 {
        return arg_err("a sequence needs at least one frame");
    }
    let cam = synthetic_camera(size.height, size.width, size.baseline)?;
    let world = World::new(spec, cam, seed, size.d_max)?;
    let poses: Vec<Pose> = (0..frames).map(|k| trajectory.pose(k)).collect();
    let out = poses
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let earlier = if k + 1 == frames {
                &poses[..k]
            } else {
                &[][..]
            };
            world.sample(p, size.height, size.width, k, earlier)
        })
        .collect();
    Ok(SceneSequence {
        frames: out,
        degenerate: frames > 1 && trajectory.is_degenerate(),
    })
}

/// Exhaustive census matcher over integer disparities `0..=max_disp` with
/// `u − d ≥ 0`. Pixels whose best Hamming cost is shared by two disparities
/// are marked invalid.
pub fn brute_force_disparity(
    left: &Tensor,
    right: &Tensor,
    radius: usize,
    max_disp: usize,
) -> DisparityMap {
    let (h, w) = (left.shape()[0], left.shape()[1]);
    let cl = census_transform(left, radius);
    let cr = census_transform(right, radius);
    let nb = cl.shape()[0];
    let pack = |c: &Tensor| -> Vec<Vec<u64>> {
        (0..h * w)
            .map(|p| {
                let mut words = vec![0u64; nb.div_ceil(64)];
                for b in 0..nb {
                    if c.data()[b * h * w + p] != 0.0 {
                        words[b / 64] |= 1 << (b % 64);
                    }
                }
                words
            })
            .collect()
    };
    let (bl, br) = (pack(&cl), pack(&cr));
    let mut out = vec![0.0; h * w];
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = u32::MAX;
            let mut arg = 0usize;
            let mut tie = false;
            for d in 0..=max_disp.min(x) {
                let a = &bl[y * w + x];
                let b = &br[y * w + x - d];
                let cost: u32 = a.iter().zip(b).map(|(p, q)| (p ^ q).count_ones()).sum();
                if cost < best {
                    best = cost;
                    arg = d;
                    tie = false;
                } else if cost == best {
                    tie = true;
                }
            }
            out[y * w + x] = arg as f64;
            valid[y * w + x] = !tie;
        }
    }
    DisparityMap::with_mask(Tensor::new(vec![h, w], out).expect("shape"), 1, valid).expect("mask")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_scene_ground_truth() {
        let s = generate_scene(
            &SceneSpec::Plane { disparity: 8.0 },
            3,
            SceneSize::new(32, 48),
        )
        .unwrap();
        assert!(s.gt.values.data().iter().all(|&d| (d - 8.0).abs() < 1e-12));
        for y in 0..32 {
            for x in 0..48 {
                assert_eq!(s.occlusion[y * 48 + x], x < 8, "{x}");
            }
        }
    }

    #[test]
    fn plane_rejects_out_of_range() {
        for d in [0.0, -1.0, 192.0] {
            assert!(generate_scene(
                &SceneSpec::Plane { disparity: d },
                0,
                SceneSize::new(32, 32)
            )
            .is_err());
        }
    }

    #[test]
    fn two_plane_band_width() {
        let spec = SceneSpec::TwoPlane {
            far: 4.0,
            near: 12.0,
            strip_left: 40.0,
            strip_width: 16.0,
        };
        let s = generate_scene(&spec, 1, SceneSize::new(16, 96)).unwrap();
        let row: Vec<bool> = (0..96).map(|x| s.occlusion[5 * 96 + x]).collect();
        let band: Vec<usize> = (16..96).filter(|&x| row[x]).collect();
        assert_eq!(band, (32..40).collect::<Vec<_>>());
        assert_eq!(s.gt.at(5, 40), 12.0);
        assert!((s.gt.at(5, 39) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_sample() {
        let spec = SceneSpec::Plane { disparity: 5.0 };
        let a = generate_scene(&spec, 11, SceneSize::new(16, 16)).unwrap();
        let b = generate_scene(&spec, 11, SceneSize::new(16, 16)).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&spec, 12, SceneSize::new(16, 16)).unwrap();
        assert_ne!(a.left, c.left);
    }

    #[test]
    fn right_is_warp_of_left() {
        let s = generate_scene(
            &SceneSpec::Plane { disparity: 6.0 },
            4,
            SceneSize::new(16, 32),
        )
        .unwrap();
        for y in 0..16 {
            for x in 6..32 {
                let a = s.left.data()[y * 32 + x];
                let b = s.right.data()[y * 32 + x - 6];
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sequences() {
        let spec = SceneSpec::Plane { disparity: 6.0 };
        let one = generate_sequence(
            &spec,
            &Trajectory::Lateral { step: 0.3 },
            1,
            0,
            SceneSize::new(16, 32),
        )
        .unwrap();
        assert_eq!(one.frames.len(), 1);
        assert_eq!(one.frames[0].pose, Pose::identity());
        let lat = generate_sequence(
            &spec,
            &Trajectory::Lateral { step: 0.3 },
            4,
            0,
            SceneSize::new(16, 32),
        )
        .unwrap();
        assert!(!lat.degenerate);
        for f in &lat.frames {
            assert!(f.gt.values.data().iter().all(|&d| (d - 6.0).abs() < 1e-12));
        }
        assert!(lat.frames[3].previously_visible.is_some());
        let st =
            generate_sequence(&spec, &Trajectory::Static, 2, 0, SceneSize::new(16, 32)).unwrap();
        assert!(st.degenerate);
        assert!(
            generate_sequence(&spec, &Trajectory::Static, 0, 0, SceneSize::new(16, 32)).is_err()
        );
    }

    #[test]
    fn brute_force_recovers_plane() {
        let s = generate_scene(
            &SceneSpec::Plane { disparity: 8.0 },
            2,
            SceneSize::new(48, 64),
        )
        .unwrap();
        let bf = brute_force_disparity(&s.left, &s.right, 3, 32);
        let mut good = 0;
        let mut total = 0;
        for y in 3..45 {
            for x in 11..61 {
                total += 1;
                if bf.is_valid(y * 64 + x) && bf.at(y, x) == 8.0 {
                    good += 1;
                }
            }
        }
        assert!(good as f64 >= 0.99 * total as f64, "{good}/{total}");
    }

    #[test]
    fn brute_force_flags_textureless() {
        let flat = Tensor::full(&[16, 16], 0.5);
        let bf = brute_force_disparity(&flat, &flat, 3, 8);
        assert!((0..256).filter(|i| i % 16 > 0).all(|i| !bf.is_valid(i)));
    }
}
