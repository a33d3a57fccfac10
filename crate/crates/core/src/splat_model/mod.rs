//! Gaussian splat domain types, the PLY codec and the sequence manifest.

mod manifest;
mod ply;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use glam::{Quat, Vec3};
use thiserror::Error;

pub use manifest::{
    load_manifest, FrameEntry, ManifestError, SequenceManifest, DEFAULT_SOURCE_FPS,
};
pub use ply::{parse_ply, serialize_ply, PlyError, SH_C0};

/// Tolerance on the quaternion norm accepted by [`SplatCloud::new`].
pub const UNIT_NORM_TOLERANCE: f32 = 1e-6;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

/// Draws a cloud version from a process-wide counter, so versions of distinct
/// clouds never collide and every mutation observes a strictly larger value.
pub(crate) fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// One activated 3D Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    pub position: Vec3,
    /// Unit quaternion, local-to-world.
    pub rotation: Quat,
    /// Per-axis standard deviations in world units.
    pub scale: Vec3,
    pub opacity: f32,
    /// Linear RGB in [0,1].
    pub color: [f32; 3],
    /// Higher-order SH coefficients in file order; carried along, never shaded.
    pub sh_rest: Vec<f32>,
}

impl Splat {
    pub fn new(position: Vec3, rotation: Quat, scale: Vec3, opacity: f32, color: [f32; 3]) -> Self {
        Self {
            position,
            rotation,
            scale,
            opacity,
            color,
            sh_rest: Vec::new(),
        }
    }

    fn check(&self, index: usize) -> Result<(), CloudError> {
        let finite = self.position.is_finite()
            && self.rotation.is_finite()
            && self.scale.is_finite()
            && self.opacity.is_finite()
            && self.color.iter().all(|c| c.is_finite())
            && self.sh_rest.iter().all(|c| c.is_finite());
        if !finite {
            return Err(CloudError::InvalidSplat {
                index,
                reason: "non-finite field",
            });
        }
        if (self.rotation.length() - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(CloudError::InvalidSplat {
                index,
                reason: "rotation is not a unit quaternion",
            });
        }
        if self.scale.min_element() <= 0.0 {
            return Err(CloudError::InvalidSplat {
                index,
                reason: "scale must be positive",
            });
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(CloudError::InvalidSplat {
                index,
                reason: "opacity outside [0,1]",
            });
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(CloudError::InvalidSplat {
                index,
                reason: "color outside [0,1]",
            });
        }
        Ok(())
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn contains(&self, p: Vec3) -> bool {
        p.cmpge(self.min).all() && p.cmple(self.max).all()
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("splat {index} is invalid: {reason}")]
    InvalidSplat { index: usize, reason: &'static str },
    #[error("splat {index} carries {found} SH coefficients, expected {expected}")]
    ShLengthMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("cloud is empty")]
    EmptyCloud,
}

/// An ordered, validated set of splats; one temporal frame of a 4D scene.
///
/// Clouds are never mutated in place. Edits build a new cloud with a larger
/// version, so renderers holding an older `Arc<SplatCloud>` stay valid.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatCloud {
    splats: Vec<Splat>,
    bounds: Option<Aabb>,
    version: u64,
}

impl SplatCloud {
    pub fn new(splats: Vec<Splat>) -> Result<Self, CloudError> {
        let sh_len = splats.first().map_or(0, |s| s.sh_rest.len());
        for (index, splat) in splats.iter().enumerate() {
            splat.check(index)?;
            if splat.sh_rest.len() != sh_len {
                return Err(CloudError::ShLengthMismatch {
                    index,
                    expected: sh_len,
                    found: splat.sh_rest.len(),
                });
            }
        }
        let bounds = compute_bounds(&splats);
        Ok(Self {
            splats,
            bounds,
            version: next_version(),
        })
    }

    pub fn empty() -> Self {
        Self {
            splats: Vec::new(),
            bounds: None,
            version: next_version(),
        }
    }

    pub fn splats(&self) -> &[Splat] {
        &self.splats
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// `None` for an empty cloud.
    pub fn bounds(&self) -> Option<Aabb> {
        self.bounds
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Number of higher-order SH coefficients per splat.
    pub fn sh_rest_len(&self) -> usize {
        self.splats.first().map_or(0, |s| s.sh_rest.len())
    }

    /// Builds the successor of this cloud from an edited splat list. The caller
    /// guarantees the splats still satisfy the per-splat invariants.
    pub(crate) fn derive(&self, splats: Vec<Splat>) -> Self {
        debug_assert!(splats.iter().enumerate().all(|(i, s)| s.check(i).is_ok()));
        let bounds = compute_bounds(&splats);
        Self {
            splats,
            bounds,
            version: next_version(),
        }
    }
}

fn compute_bounds(splats: &[Splat]) -> Option<Aabb> {
    let first = splats.first()?.position;
    let (min, max) = splats.iter().fold((first, first), |(lo, hi), s| {
        (lo.min(s.position), hi.max(s.position))
    });
    Some(Aabb { min, max })
}

/// Exact min/max box over splat positions.
pub fn bounding_box(cloud: &SplatCloud) -> Result<Aabb, CloudError> {
    cloud.bounds().ok_or(CloudError::EmptyCloud)
}

/// A loaded 4D scene: the manifest plus one parsed cloud per frame.
#[derive(Debug, Clone)]
pub struct Scene {
    pub manifest: SequenceManifest,
    pub frames: Vec<Arc<SplatCloud>>,
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Ply {
        path: PathBuf,
        #[source]
        source: PlyError,
    },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

impl Scene {
    /// A still scene made of a single cloud.
    pub fn single(cloud: SplatCloud) -> Self {
        Self {
            manifest: SequenceManifest::uniform(
                vec!["frame_000.ply".to_string()],
                DEFAULT_SOURCE_FPS,
            )
            .expect("one frame at the default rate is a valid manifest"),
            frames: vec![Arc::new(cloud)],
        }
    }

    /// Loads either a lone `.ply` file or a manifest JSON whose frame paths
    /// resolve relative to the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let read = |p: &Path| {
            std::fs::read(p).map_err(|source| SceneError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        let is_ply = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("ply"));
        if is_ply {
            let cloud = parse_ply(&read(path)?).map_err(|source| SceneError::Ply {
                path: path.to_path_buf(),
                source,
            })?;
            return Ok(Self::single(cloud));
        }
        let text = String::from_utf8_lossy(&read(path)?).into_owned();
        let manifest = load_manifest(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let frames = manifest
            .frames()
            .iter()
            .map(|entry| {
                let frame_path = base.join(&entry.frame_ref);
                let cloud = parse_ply(&read(&frame_path)?).map_err(|source| SceneError::Ply {
                    path: frame_path.clone(),
                    source,
                })?;
                Ok(Arc::new(cloud))
            })
            .collect::<Result<Vec<_>, SceneError>>()?;
        Ok(Self { manifest, frames })
    }
}
