//! Deterministic procedural scenes for tests, benchmarks and demos.

use std::sync::Arc;

use glam::{DVec3, Quat, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::splat_model::{Scene, SequenceManifest, Splat, SplatCloud};
use crate::trajectory::{look_at, CameraPose};

/// Half-extent of the box the synthetic splats occupy, centered at the origin.
pub const SCENE_HALF_EXTENT: [f32; 3] = [2.0, 1.2, 2.5];

/// Distance of [`reference_camera`] from the scene center.
pub const REFERENCE_DISTANCE: f64 = 6.0;

/// The camera on +z looking at the origin, the scene filling most of a 16:9 frame.
pub fn reference_camera() -> CameraPose {
    orbit_camera(0.0, 0.0, REFERENCE_DISTANCE)
}

/// A camera on a sphere around the origin, looking at it. `yaw` turns about
/// +y starting from +z, `pitch` raises the camera; both in radians.
pub fn orbit_camera(yaw: f64, pitch: f64, distance: f64) -> CameraPose {
    let pitch = pitch.clamp(-1.5, 1.5);
    let eye = DVec3::new(
        distance * pitch.cos() * yaw.sin(),
        distance * pitch.sin(),
        distance * pitch.cos() * yaw.cos(),
    );
    look_at(eye, DVec3::ZERO, DVec3::Y).expect("pitch is clamped away from the poles")
}

fn random_splat(rng: &mut ChaCha8Rng, scale_range: (f32, f32)) -> Splat {
    let [hx, hy, hz] = SCENE_HALF_EXTENT;
    let position = Vec3::new(
        rng.gen_range(-hx..=hx),
        rng.gen_range(-hy..=hy),
        rng.gen_range(-hz..=hz),
    );
    let axis = Vec3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let rotation = axis
        .try_normalize()
        .map_or(Quat::IDENTITY, |a| {
            Quat::from_axis_angle(a, rng.gen_range(0.0..std::f32::consts::TAU))
        })
        .normalize();
    let (lo, hi) = scale_range;
    let scale = Vec3::new(
        rng.gen_range(lo..hi),
        rng.gen_range(lo..hi),
        rng.gen_range(lo..hi),
    );
    let color = [
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
    ];
    Splat::new(position, rotation, scale, rng.gen_range(0.2..0.95), color)
}

/// `count` random splats in the scene box. Splat size shrinks with density so
/// screen coverage stays comparable across counts.
pub fn random_cloud(count: usize, seed: u64) -> SplatCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = (0.15 / (count.max(1) as f32).cbrt()).clamp(0.004, 0.3);
    let splats = (0..count)
        .map(|_| random_splat(&mut rng, (0.4 * base, 1.6 * base)))
        .collect();
    SplatCloud::new(splats).expect("generated splats satisfy the invariants")
}

/// The performance reference scene: `count` splats seen from [`reference_camera`].
pub fn reference_scene(count: usize) -> SplatCloud {
    random_cloud(count, 0x5eed)
}

/// A 4D sequence of `frames` clouds at `fps`: one random cloud drifting
/// along +x by `0.05` world units per frame.
pub fn drifting_sequence(frames: usize, count: usize, fps: f64, seed: u64) -> Scene {
    let base = random_cloud(count, seed);
    let clouds = (0..frames.max(1))
        .map(|k| {
            let shift = Vec3::new(0.05 * k as f32, 0.0, 0.0);
            let splats = base
                .splats()
                .iter()
                .map(|s| Splat {
                    position: s.position + shift,
                    ..s.clone()
                })
                .collect();
            Arc::new(SplatCloud::new(splats).expect("shifted splats stay valid"))
        })
        .collect::<Vec<_>>();
    let refs = (0..clouds.len())
        .map(|k| format!("frame_{k:03}.ply"))
        .collect();
    Scene {
        manifest: SequenceManifest::uniform(refs, fps).expect("fps is validated by the manifest"),
        frames: clouds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasterizer::{Projector, RenderConfig};

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(random_cloud(50, 7).splats(), random_cloud(50, 7).splats());
        assert_ne!(random_cloud(50, 7).splats(), random_cloud(50, 8).splats());
    }

    #[test]
    fn reference_camera_sees_the_scene() {
        let cloud = reference_scene(2000);
        let cfg = RenderConfig::new(640, 360);
        let projector = Projector::new(&reference_camera(), &cfg);
        let visible = cloud
            .splats()
            .iter()
            .enumerate()
            .filter(|(i, s)| projector.project(*i as u32, s).is_some())
            .count();
        assert!(visible > 1900, "{visible}");
    }

    #[test]
    fn orbit_camera_faces_origin() {
        let pose = orbit_camera(1.0, 0.3, 4.0);
        assert!((pose.position.length() - 4.0).abs() < 1e-12);
        let forward = pose.orientation * DVec3::NEG_Z;
        assert!((forward + pose.position.normalize()).length() < 1e-9);
    }

    #[test]
    fn drifting_sequence_layout() {
        let scene = drifting_sequence(4, 10, 30.0, 1);
        assert_eq!(scene.frames.len(), 4);
        assert!((scene.manifest.duration() - 4.0 / 30.0).abs() < 1e-12);
        let d = scene.frames[3].splats()[0].position - scene.frames[0].splats()[0].position;
        assert!((d.x - 0.15).abs() < 1e-6);
    }
}
