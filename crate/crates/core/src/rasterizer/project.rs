use glam::{DMat3, DVec3};

use super::{PixelRect, RenderConfig};
use crate::splat_model::Splat;
use crate::trajectory::CameraPose;

/// Screen covariances with a smaller determinant are treated as singular.
const SINGULAR_DET: f64 = 1e-12;
/// Slack added to the per-axis footprint extents before rounding to pixels.
const RECT_SLACK_PX: f64 = 1e-3;

/// A splat mapped to screen space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSplat {
    /// Index of the source splat in its cloud.
    pub index: u32,
    /// Center in pixels; +x right, +y down, pixel (i, j) has center (i + 0.5, j + 0.5).
    pub mean: [f32; 2],
    /// Inverse screen covariance `[[a, b], [b, c]]` stored as `[a, b, c]`.
    pub conic: [f32; 3],
    /// Camera-space distance along the view axis.
    pub depth: f32,
    pub color: [f32; 3],
    pub opacity: f32,
    /// Pixels whose centers may fall inside the cutoff ellipse, clamped to the viewport.
    pub rect: PixelRect,
}

/// World-to-screen mapping for one pose and framebuffer size.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    /// World-to-camera rotation.
    view_rot: DMat3,
    cam_pos: DVec3,
    focal: f64,
    cx: f64,
    cy: f64,
    near: f64,
    width: f64,
    height: f64,
    dilation: f64,
    cutoff: f64,
}

impl Projector {
    pub fn new(pose: &CameraPose, cfg: &RenderConfig) -> Self {
        Self {
            view_rot: DMat3::from_quat(pose.orientation.conjugate()),
            cam_pos: pose.position,
            focal: pose.focal_px(cfg.height),
            cx: cfg.width as f64 * 0.5,
            cy: cfg.height as f64 * 0.5,
            near: pose.near,
            width: cfg.width as f64,
            height: cfg.height as f64,
            dilation: cfg.dilation as f64,
            cutoff: cfg.sigma_cutoff as f64,
        }
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn to_camera(&self, world: DVec3) -> DVec3 {
        self.view_rot * (world - self.cam_pos)
    }

    /// Pixel coordinates of a camera-space point in front of the camera.
    pub fn camera_to_pixel(&self, p: DVec3) -> [f64; 2] {
        let depth = -p.z;
        [
            self.cx + self.focal * p.x / depth,
            self.cy - self.focal * p.y / depth,
        ]
    }

    /// Affine Jacobian of [`Self::camera_to_pixel`] at `p`, as two rows.
    pub fn jacobian(&self, p: DVec3) -> [[f64; 3]; 2] {
        let d = -p.z;
        let f = self.focal;
        [
            [f / d, 0.0, f * p.x / (d * d)],
            [0.0, -f / d, -f * p.y / (d * d)],
        ]
    }

    /// Projects one splat, or `None` if it is culled: behind the near plane,
    /// with a singular screen covariance, or with its cutoff footprint fully
    /// outside the viewport.
    pub fn project(&self, index: u32, splat: &Splat) -> Option<ProjectedSplat> {
        let p = self.to_camera(splat.position.as_dvec3());
        let depth = -p.z;
        if !(depth > self.near) {
            return None;
        }

        let rot = DMat3::from_quat(splat.rotation.as_dquat());
        let m = rot * DMat3::from_diagonal(splat.scale.as_dvec3());
        let sigma_world = m * m.transpose();
        let sigma_cam = self.view_rot * sigma_world * self.view_rot.transpose();

        let [j0, j1] = self.jacobian(p);
        let (j0, j1) = (DVec3::from_array(j0), DVec3::from_array(j1));
        let (s_j0, s_j1) = (sigma_cam * j0, sigma_cam * j1);
        let a = j0.dot(s_j0) + self.dilation;
        let b = j0.dot(s_j1);
        let c = j1.dot(s_j1) + self.dilation;

        let det = a * c - b * b;
        if !(det >= SINGULAR_DET) {
            return None;
        }

        let [mx, my] = self.camera_to_pixel(p);
        let half_trace = 0.5 * (a + c);
        let lambda_max = half_trace + (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let reach = self.cutoff * lambda_max.sqrt();
        if mx + reach < 0.0
            || mx - reach > self.width
            || my + reach < 0.0
            || my - reach > self.height
        {
            return None;
        }

        let rx = self.cutoff * a.sqrt() + RECT_SLACK_PX;
        let ry = self.cutoff * c.sqrt() + RECT_SLACK_PX;
        let rect = PixelRect::covering(
            mx - rx - 0.5,
            mx + rx - 0.5,
            my - ry - 0.5,
            my + ry - 0.5,
            self.width,
            self.height,
        );
        if rect.is_empty() {
            return None;
        }

        Some(ProjectedSplat {
            index,
            mean: [mx as f32, my as f32],
            conic: [(c / det) as f32, (-b / det) as f32, (a / det) as f32],
            depth: depth as f32,
            color: splat.color,
            opacity: splat.opacity,
            rect,
        })
    }
}

/// Projects a single splat; culled splats yield `None`.
pub fn project(splat: &Splat, pose: &CameraPose, cfg: &RenderConfig) -> Option<ProjectedSplat> {
    Projector::new(pose, cfg).project(0, splat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use glam::{DQuat, Quat, Vec3};

    /// Height 200 with vfov = 2·atan(1) gives f = 100.
    fn setup() -> (CameraPose, RenderConfig) {
        let mut pose = CameraPose::new(DVec3::ZERO, DQuat::IDENTITY);
        pose.vfov = 2.0 * 1f64.atan();
        let mut cfg = RenderConfig::new(200, 200);
        cfg.dilation = 0.0;
        (pose, cfg)
    }

    fn splat(p: Vec3, s: f32) -> Splat {
        Splat::new(p, Quat::IDENTITY, Vec3::splat(s), 0.8, [1.0; 3])
    }

    #[test]
    fn on_axis_projects_to_center() {
        let (pose, cfg) = setup();
        let ps = project(&splat(Vec3::new(0.0, 0.0, -5.0), 0.1), &pose, &cfg).unwrap();
        assert_eq!(ps.mean, [100.0, 100.0]);
        assert_eq!(ps.depth, 5.0);
    }

    #[test]
    fn isotropic_screen_sigma() {
        let (pose, cfg) = setup();
        assert!((Projector::new(&pose, &cfg).focal() - 100.0).abs() < 1e-12);
        let ps = project(&splat(Vec3::new(0.0, 0.0, -5.0), 0.1), &pose, &cfg).unwrap();
        // f·s/z = 100·0.1/5 = 2 px, so the conic is I/4.
        assert!((ps.conic[0] - 0.25).abs() < 1e-6);
        assert!(ps.conic[1].abs() < 1e-9);
        assert!((ps.conic[2] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn behind_camera_is_culled() {
        let (pose, cfg) = setup();
        assert!(project(&splat(Vec3::new(0.0, 0.0, 1.0), 0.1), &pose, &cfg).is_none());
    }

    #[test]
    fn far_off_screen_is_culled() {
        let (pose, cfg) = setup();
        assert!(project(&splat(Vec3::new(50.0, 0.0, -5.0), 0.1), &pose, &cfg).is_none());
        // Just outside the viewport but within the footprint reach survives.
        assert!(project(&splat(Vec3::new(5.05, 0.0, -5.0), 0.1), &pose, &cfg).is_some());
    }

    #[test]
    fn singular_covariance_is_culled() {
        let (pose, cfg) = setup();
        let mut s = splat(Vec3::new(0.0, 0.0, -5.0), 0.1);
        s.scale = Vec3::new(1e-9, 0.5, 1e-9);
        assert!(project(&s, &pose, &cfg).is_none());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let (pose, cfg) = setup();
        let proj = Projector::new(&pose, &cfg);
        for p in [
            DVec3::new(0.3, -0.7, -4.0),
            DVec3::new(-2.0, 1.5, -9.0),
            DVec3::new(0.01, 0.02, -0.5),
        ] {
            let j = proj.jacobian(p);
            let h = 1e-6;
            for axis in 0..3 {
                let mut e = DVec3::ZERO;
                e[axis] = h;
                let hi = proj.camera_to_pixel(p + e);
                let lo = proj.camera_to_pixel(p - e);
                for row in 0..2 {
                    let numeric = (hi[row] - lo[row]) / (2.0 * h);
                    let analytic = j[row][axis];
                    let scale = analytic.abs().max(1.0);
                    assert!(
                        (numeric - analytic).abs() / scale < 1e-4,
                        "row {row} axis {axis}: {numeric} vs {analytic}"
                    );
                }
            }
        }
    }
}
