//! Pinhole camera poses and keyframed camera paths.
//!
//! Positions follow a centripetal Catmull-Rom spline (or a polyline), and
//! orientations are slerped per segment along the shortest arc.

use glam::{DMat3, DMat4, DQuat, DVec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_VFOV_DEG: f64 = 60.0;
pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 1000.0;

/// Below this |dot| gap slerp falls back to normalized lerp.
const SLERP_LINEAR_THRESHOLD: f64 = 0.9995;
/// Tolerance absorbing `duration * fps` round-off when counting samples.
const FRAME_COUNT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory has no keyframes")]
    EmptyTrajectory,
    #[error("keyframe times must strictly increase (keyframe {0})")]
    NonMonotoneKeyframes(usize),
    #[error("invalid camera pose: {0}")]
    InvalidPose(&'static str),
    #[error("fps must be positive and finite, got {0}")]
    InvalidFps(f64),
    #[error("eye, target and up do not span a camera basis")]
    DegenerateBasis,
    #[error("trajectory file: {0}")]
    Parse(String),
}

/// Camera-to-world rigid pose plus pinhole intrinsics. The camera looks down
/// its local −z axis with +y up. Serializes as
/// `{ "position", "quaternion": [w,x,y,z], "vfov_deg", "near", "far" }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseFile", into = "PoseFile")]
pub struct CameraPose {
    pub position: DVec3,
    pub orientation: DQuat,
    /// Vertical field of view in radians.
    pub vfov: f64,
    pub near: f64,
    pub far: f64,
}

impl CameraPose {
    pub fn new(position: DVec3, orientation: DQuat) -> Self {
        Self {
            position,
            orientation,
            vfov: DEFAULT_VFOV_DEG.to_radians(),
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        }
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.position.is_finite() && self.orientation.is_finite()) {
            return Err(TrajectoryError::InvalidPose(
                "non-finite position or orientation",
            ));
        }
        if (self.orientation.length() - 1.0).abs() > 1e-6 {
            return Err(TrajectoryError::InvalidPose(
                "orientation is not a unit quaternion",
            ));
        }
        if !(self.vfov > 0.0 && self.vfov < std::f64::consts::PI) {
            return Err(TrajectoryError::InvalidPose("vfov must lie in (0, pi)"));
        }
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(TrajectoryError::InvalidPose("require 0 < near < far"));
        }
        Ok(())
    }

    /// Focal length in pixels for an image `height` pixels tall.
    pub fn focal_px(&self, height: u32) -> f64 {
        height as f64 / (2.0 * (self.vfov * 0.5).tan())
    }

    pub fn camera_to_world(&self) -> DMat4 {
        DMat4::from_rotation_translation(self.orientation, self.position)
    }
}

/// Builds a pose at `eye` whose −z axis points at `target`.
pub fn look_at(eye: DVec3, target: DVec3, up: DVec3) -> Result<CameraPose, TrajectoryError> {
    let forward = (target - eye)
        .try_normalize()
        .ok_or(TrajectoryError::DegenerateBasis)?;
    let right = forward
        .cross(up)
        .try_normalize()
        .ok_or(TrajectoryError::DegenerateBasis)?;
    let cam_up = right.cross(forward);
    let basis = DMat3::from_cols(right, cam_up, -forward);
    Ok(CameraPose::new(eye, DQuat::from_mat3(&basis).normalize()))
}

/// World-to-camera matrix, the rigid inverse of [`CameraPose::camera_to_world`].
pub fn view_transform(pose: &CameraPose) -> DMat4 {
    let inv_rot = pose.orientation.conjugate();
    DMat4::from_rotation_translation(inv_rot, -(inv_rot * pose.position))
}

/// Shortest-arc spherical interpolation; `t = 0` gives `a`, `t = 1` gives `b`
/// (up to sign).
pub fn slerp(a: DQuat, b: DQuat, t: f64) -> DQuat {
    let mut dot = a.dot(b);
    let b = if dot < 0.0 {
        dot = -dot;
        -b
    } else {
        b
    };
    if dot > SLERP_LINEAR_THRESHOLD {
        return (a + (b - a) * t).normalize();
    }
    let theta = dot.clamp(-1.0, 1.0).acos();
    let sin_theta = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / sin_theta;
    let wb = (t * theta).sin() / sin_theta;
    (a * wa + b * wb).normalize()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keyframe {
    pub pose: CameraPose,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationMode {
    Linear,
    #[default]
    CatmullRom,
}

/// Time-sorted keyframes with an interpolation mode; never empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryFile", into = "TrajectoryFile")]
pub struct Trajectory {
    keyframes: Vec<Keyframe>,
    mode: InterpolationMode,
}

impl Trajectory {
    pub fn new(keyframes: Vec<Keyframe>, mode: InterpolationMode) -> Result<Self, TrajectoryError> {
        if keyframes.is_empty() {
            return Err(TrajectoryError::EmptyTrajectory);
        }
        for (i, k) in keyframes.iter().enumerate() {
            k.pose.validate()?;
            if !(k.time.is_finite() && k.time >= 0.0) {
                return Err(TrajectoryError::NonMonotoneKeyframes(i));
            }
            if i > 0 && k.time <= keyframes[i - 1].time {
                return Err(TrajectoryError::NonMonotoneKeyframes(i));
            }
        }
        Ok(Self { keyframes, mode })
    }

    /// A constant path holding one pose.
    pub fn still(pose: CameraPose) -> Result<Self, TrajectoryError> {
        Self::new(
            vec![Keyframe { pose, time: 0.0 }],
            InterpolationMode::Linear,
        )
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn mode(&self) -> InterpolationMode {
        self.mode
    }

    pub fn start(&self) -> f64 {
        self.keyframes[0].time
    }

    pub fn end(&self) -> f64 {
        self.keyframes[self.keyframes.len() - 1].time
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    /// Pose at time `t`, clamped to the keyframe range. Exact at knots.
    pub fn interpolate(&self, t: f64) -> CameraPose {
        let ks = &self.keyframes;
        let t = t.clamp(self.start(), self.end());
        // First keyframe strictly after t; t sits in segment (seg, seg + 1).
        let next = ks.partition_point(|k| k.time <= t);
        if next == 0 {
            return ks[0].pose;
        }
        let seg = next - 1;
        if ks[seg].time == t || next == ks.len() {
            return ks[seg].pose;
        }
        let (k1, k2) = (&ks[seg], &ks[next]);
        let s = (t - k1.time) / (k2.time - k1.time);

        let position = match self.mode {
            InterpolationMode::Linear => k1.pose.position.lerp(k2.pose.position, s),
            InterpolationMode::CatmullRom => {
                let p0 = if seg > 0 {
                    ks[seg - 1].pose.position
                } else {
                    k1.pose.position
                };
                let p3 = ks
                    .get(next + 1)
                    .map_or(k2.pose.position, |k| k.pose.position);
                centripetal_catmull_rom(p0, k1.pose.position, k2.pose.position, p3, s)
            }
        };
        CameraPose {
            position,
            orientation: slerp(k1.pose.orientation, k2.pose.orientation, s),
            vfov: lerp(k1.pose.vfov, k2.pose.vfov, s),
            near: lerp(k1.pose.near, k2.pose.near, s),
            far: lerp(k1.pose.far, k2.pose.far, s),
        }
    }

    /// Times `start + k / fps` for `k = 0..=floor(duration * fps)`.
    pub fn sample_times(&self, fps: f64) -> Result<Vec<f64>, TrajectoryError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(TrajectoryError::InvalidFps(fps));
        }
        let count = (self.duration() * fps + FRAME_COUNT_EPS).floor() as usize + 1;
        Ok((0..count)
            .map(|k| (self.start() + k as f64 / fps).min(self.end()))
            .collect())
    }

    /// Poses sampled uniformly at `fps`, always including the first keyframe.
    pub fn sample_uniform(&self, fps: f64) -> Result<Vec<CameraPose>, TrajectoryError> {
        Ok(self
            .sample_times(fps)?
            .into_iter()
            .map(|t| self.interpolate(t))
            .collect())
    }

    pub fn from_json(text: &str) -> Result<Self, TrajectoryError> {
        let file: TrajectoryFile =
            serde_json::from_str(text).map_err(|e| TrajectoryError::Parse(e.to_string()))?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TrajectoryFile::from(self)).expect("trajectory serializes")
    }
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

/// Centripetal (alpha = 1/2) Catmull-Rom between `p1` and `p2` via the
/// Barry-Goldman pyramid; `s` in [0,1] maps linearly onto the knot interval.
/// Coincident control points collapse their interval, handled by returning
/// the later point.
fn centripetal_catmull_rom(p0: DVec3, p1: DVec3, p2: DVec3, p3: DVec3, s: f64) -> DVec3 {
    let knot = |a: DVec3, b: DVec3| a.distance(b).sqrt();
    let t0 = 0.0;
    let t1 = t0 + knot(p0, p1);
    let t2 = t1 + knot(p1, p2);
    let t3 = t2 + knot(p2, p3);
    if t2 == t1 {
        return p1;
    }
    let t = t1 + (t2 - t1) * s;
    let blend = |a: DVec3, b: DVec3, ta: f64, tb: f64| {
        if tb - ta <= f64::EPSILON {
            b
        } else {
            a * ((tb - t) / (tb - ta)) + b * ((t - ta) / (tb - ta))
        }
    };
    let a1 = blend(p0, p1, t0, t1);
    let a2 = blend(p1, p2, t1, t2);
    let a3 = blend(p2, p3, t2, t3);
    let b1 = blend(a1, a2, t0, t2);
    let b2 = blend(a2, a3, t1, t3);
    blend(b1, b2, t1, t2)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryFile {
    #[serde(default)]
    mode: InterpolationMode,
    keyframes: Vec<KeyframeFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyframeFile {
    t: f64,
    position: [f64; 3],
    /// (w, x, y, z)
    quaternion: [f64; 4],
    #[serde(default = "default_vfov_deg")]
    vfov_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    far: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    position: [f64; 3],
    /// (w, x, y, z)
    quaternion: [f64; 4],
    #[serde(default = "default_vfov_deg")]
    vfov_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    far: Option<f64>,
}

fn default_vfov_deg() -> f64 {
    DEFAULT_VFOV_DEG
}

impl TryFrom<PoseFile> for CameraPose {
    type Error = TrajectoryError;

    fn try_from(p: PoseFile) -> Result<Self, Self::Error> {
        let [w, x, y, z] = p.quaternion;
        let q = DQuat::from_xyzw(x, y, z, w);
        let norm = q.length();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(TrajectoryError::InvalidPose("zero quaternion"));
        }
        let pose = CameraPose {
            position: DVec3::from_array(p.position),
            orientation: q / norm,
            vfov: p.vfov_deg.to_radians(),
            near: p.near.unwrap_or(DEFAULT_NEAR),
            far: p.far.unwrap_or(DEFAULT_FAR),
        };
        pose.validate()?;
        Ok(pose)
    }
}

impl From<CameraPose> for PoseFile {
    fn from(pose: CameraPose) -> Self {
        let q = pose.orientation;
        Self {
            position: pose.position.to_array(),
            quaternion: [q.w, q.x, q.y, q.z],
            vfov_deg: pose.vfov.to_degrees(),
            near: Some(pose.near),
            far: Some(pose.far),
        }
    }
}

impl TryFrom<TrajectoryFile> for Trajectory {
    type Error = TrajectoryError;

    fn try_from(file: TrajectoryFile) -> Result<Self, Self::Error> {
        let keyframes = file
            .keyframes
            .into_iter()
            .map(|k| {
                let pose = CameraPose::try_from(PoseFile {
                    position: k.position,
                    quaternion: k.quaternion,
                    vfov_deg: k.vfov_deg,
                    near: k.near,
                    far: k.far,
                })?;
                Ok(Keyframe { time: k.t, pose })
            })
            .collect::<Result<Vec<_>, TrajectoryError>>()?;
        Trajectory::new(keyframes, file.mode)
    }
}

impl From<Trajectory> for TrajectoryFile {
    fn from(traj: Trajectory) -> Self {
        Self::from(&traj)
    }
}

impl From<&Trajectory> for TrajectoryFile {
    fn from(traj: &Trajectory) -> Self {
        Self {
            mode: traj.mode,
            keyframes: traj
                .keyframes
                .iter()
                .map(|k| {
                    let p = PoseFile::from(k.pose);
                    KeyframeFile {
                        t: k.time,
                        position: p.position,
                        quaternion: p.quaternion,
                        vfov_deg: p.vfov_deg,
                        near: p.near,
                        far: p.far,
                    }
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn pose_at(p: [f64; 3]) -> CameraPose {
        CameraPose::new(DVec3::from_array(p), DQuat::IDENTITY)
    }

    fn kf(p: [f64; 3], time: f64) -> Keyframe {
        Keyframe {
            pose: pose_at(p),
            time,
        }
    }

    #[test]
    fn linear_midpoint() {
        let traj = Trajectory::new(
            vec![kf([0.0; 3], 0.0), kf([2.0, 0.0, 0.0], 1.0)],
            InterpolationMode::Linear,
        )
        .unwrap();
        assert_eq!(traj.interpolate(0.5).position, DVec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn slerp_quarter_turn_half_way() {
        let q = slerp(
            DQuat::IDENTITY,
            DQuat::from_rotation_z(std::f64::consts::FRAC_PI_2),
            0.5,
        );
        // cos(22.5°), sin(22.5°)
        assert_abs_diff_eq!(q.w, 0.9238795325112867, epsilon = 1e-12);
        assert_abs_diff_eq!(q.z, 0.3826834323650898, epsilon = 1e-12);
        assert_abs_diff_eq!(q.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn slerp_handles_double_cover() {
        let a = DQuat::from_rotation_y(0.3);
        let b = DQuat::from_rotation_x(1.1);
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            let p = slerp(a, b, t);
            let n = slerp(a, -b, t);
            assert!(p.dot(n).abs() > 1.0 - 1e-12, "t={t}");
        }
    }

    #[test]
    fn single_keyframe_is_constant() {
        let traj = Trajectory::still(pose_at([1.0, 2.0, 3.0])).unwrap();
        for t in [-1.0, 0.0, 5.0] {
            assert_eq!(traj.interpolate(t), pose_at([1.0, 2.0, 3.0]));
        }
        assert_eq!(traj.sample_uniform(30.0).unwrap().len(), 1);
    }

    #[test]
    fn knots_are_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let keys: Vec<Keyframe> = (0..6)
            .map(|i| Keyframe {
                time: i as f64 * 0.7 + rng.gen_range(0.0..0.3),
                pose: CameraPose {
                    position: DVec3::new(
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(-5.0..5.0),
                    ),
                    orientation: DQuat::from_euler(
                        glam::EulerRot::YXZ,
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-1.0..1.0),
                        0.2,
                    ),
                    vfov: rng.gen_range(0.5..1.5),
                    near: 0.05,
                    far: 100.0,
                },
            })
            .collect();
        for mode in [InterpolationMode::Linear, InterpolationMode::CatmullRom] {
            let traj = Trajectory::new(keys.clone(), mode).unwrap();
            for k in &keys {
                assert_eq!(traj.interpolate(k.time), k.pose);
            }
        }
    }

    #[test]
    fn clamps_outside_range() {
        let traj = Trajectory::new(
            vec![kf([0.0; 3], 1.0), kf([2.0, 0.0, 0.0], 2.0)],
            InterpolationMode::CatmullRom,
        )
        .unwrap();
        assert_eq!(traj.interpolate(0.0).position, DVec3::ZERO);
        assert_eq!(traj.interpolate(9.0).position, DVec3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn two_key_catmull_rom_stays_on_segment() {
        // Duplicated end knots make a two-key path a straight segment.
        let traj = Trajectory::new(
            vec![kf([0.0; 3], 0.0), kf([4.0, 0.0, 0.0], 1.0)],
            InterpolationMode::CatmullRom,
        )
        .unwrap();
        for i in 0..=20 {
            let p = traj.interpolate(i as f64 / 20.0).position;
            assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-12);
            assert!((0.0..=4.0).contains(&p.x));
        }
    }

    #[test]
    fn coincident_keys_do_not_produce_nan() {
        let traj = Trajectory::new(
            vec![
                kf([1.0; 3], 0.0),
                kf([1.0; 3], 1.0),
                kf([2.0; 3], 2.0),
                kf([2.0; 3], 3.0),
            ],
            InterpolationMode::CatmullRom,
        )
        .unwrap();
        for i in 0..=30 {
            assert!(traj.interpolate(i as f64 / 10.0).position.is_finite());
        }
    }

    #[test]
    fn sample_counts() {
        let two = |d: f64| {
            Trajectory::new(
                vec![kf([0.0; 3], 0.0), kf([1.0; 3], d)],
                InterpolationMode::Linear,
            )
            .unwrap()
        };
        assert_eq!(two(1.0).sample_uniform(30.0).unwrap().len(), 31);
        let half = two(0.5).sample_times(30.0).unwrap();
        assert_eq!(half.len(), 16);
        assert_eq!(*half.last().unwrap(), 0.5);
        assert_eq!(
            two(1.0).sample_uniform(0.0),
            Err(TrajectoryError::InvalidFps(0.0))
        );
    }

    #[test]
    fn look_at_canonical_frame() {
        let pose = look_at(DVec3::new(0.0, 0.0, 5.0), DVec3::ZERO, DVec3::Y).unwrap();
        assert_abs_diff_eq!(
            pose.orientation.dot(DQuat::IDENTITY).abs(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn look_at_from_plus_x_is_quarter_turn_about_y() {
        let pose = look_at(DVec3::new(5.0, 0.0, 0.0), DVec3::ZERO, DVec3::Y).unwrap();
        // Columns right=(0,0,-1), up=(0,1,0), back=(1,0,0): R_y(90°),
        // quaternion (cos 45°, 0, sin 45°, 0).
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = DQuat::from_xyzw(0.0, h, 0.0, h);
        assert_abs_diff_eq!(pose.orientation.dot(expected).abs(), 1.0, epsilon = 1e-12);
        let fwd = pose.orientation * DVec3::NEG_Z;
        assert_abs_diff_eq!(fwd.x, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn look_at_degenerate() {
        assert_eq!(
            look_at(DVec3::ONE, DVec3::ONE, DVec3::Y),
            Err(TrajectoryError::DegenerateBasis)
        );
        assert_eq!(
            look_at(DVec3::new(0.0, 5.0, 0.0), DVec3::ZERO, DVec3::Y),
            Err(TrajectoryError::DegenerateBasis)
        );
    }

    #[test]
    fn view_transform_cases() {
        assert_eq!(view_transform(&pose_at([0.0; 3])), DMat4::IDENTITY);
        let v = view_transform(&pose_at([0.0, 0.0, 5.0]));
        assert_eq!(v.w_axis.truncate(), DVec3::new(0.0, 0.0, -5.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let pose = CameraPose::new(
                DVec3::new(
                    rng.gen_range(-100.0..100.0),
                    rng.gen_range(-100.0..100.0),
                    rng.gen_range(-100.0..100.0),
                ),
                DQuat::from_xyzw(rng.gen(), rng.gen(), rng.gen(), rng.gen_range(0.1..1.0))
                    .normalize(),
            );
            let product = view_transform(&pose) * pose.camera_to_world();
            assert!(product.abs_diff_eq(DMat4::IDENTITY, 1e-6), "{product:?}");
        }
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{ "mode": "catmull_rom", "keyframes": [
            { "t": 0.0, "position": [0,0,5], "quaternion": [1,0,0,0], "vfov_deg": 60 },
            { "t": 2.0, "position": [5,0,0], "quaternion": [0.7071067811865476,0,0.7071067811865476,0], "vfov_deg": 45 } ] }"#;
        let traj = Trajectory::from_json(text).unwrap();
        assert_eq!(traj.keyframes().len(), 2);
        assert_abs_diff_eq!(
            traj.keyframes()[1].pose.vfov,
            45f64.to_radians(),
            epsilon = 1e-15
        );
        let again = Trajectory::from_json(&traj.to_json()).unwrap();
        assert_eq!(again.keyframes().len(), 2);
        assert!(again.keyframes()[1]
            .pose
            .position
            .abs_diff_eq(DVec3::new(5.0, 0.0, 0.0), 1e-15));
        assert_eq!(
            Trajectory::from_json(r#"{"keyframes":[]}"#),
            Err(TrajectoryError::EmptyTrajectory)
        );
    }
}
