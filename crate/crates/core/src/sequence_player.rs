//! The 4D timeline: playback state, time-to-frame lookup and a prefetching
//! frame cache.

use std::collections::VecDeque;
use std::sync::Arc;

use thiserror::Error;

use crate::splat_model::{SequenceManifest, SplatCloud};

pub const DEFAULT_CACHE_CAPACITY: usize = 8;
pub const DEFAULT_PREFETCH_WINDOW: usize = 3;
pub const DEFAULT_TARGET_FPS: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlayerError {
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("speed must be positive and finite, got {0}")]
    InvalidSpeed(f64),
    #[error("target fps must be positive and finite, got {0}")]
    InvalidFps(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaybackState {
    /// Seconds into the sequence, within `[0, duration]`.
    pub time: f64,
    pub playing: bool,
    pub speed: f64,
    pub looping: bool,
    /// Rate at which the render loop produces frames.
    pub target_fps: f64,
}

impl Default for PlaybackState {
    fn default() -> Self {
        Self {
            time: 0.0,
            playing: false,
            speed: 1.0,
            looping: false,
            target_fps: DEFAULT_TARGET_FPS,
        }
    }
}

impl PlaybackState {
    pub fn with_speed(self, speed: f64) -> Result<Self, PlayerError> {
        if !(speed.is_finite() && speed > 0.0) {
            return Err(PlayerError::InvalidSpeed(speed));
        }
        Ok(Self { speed, ..self })
    }

    pub fn with_target_fps(self, target_fps: f64) -> Result<Self, PlayerError> {
        if !(target_fps.is_finite() && target_fps > 0.0) {
            return Err(PlayerError::InvalidFps(target_fps));
        }
        Ok(Self { target_fps, ..self })
    }
}

/// Index of the frame with the largest timestamp `<= time`. Times outside
/// `[0, duration]` are clamped first.
pub fn frame_at(manifest: &SequenceManifest, time: f64) -> Result<usize, PlayerError> {
    let frames = manifest.frames();
    if frames.is_empty() {
        return Err(PlayerError::EmptySequence);
    }
    let time = if time.is_nan() {
        0.0
    } else {
        time.clamp(0.0, manifest.duration())
    };
    let after = frames.partition_point(|f| f.timestamp <= time);
    Ok(after.saturating_sub(1))
}

fn wrap(time: f64, duration: f64) -> f64 {
    let t = time.rem_euclid(duration);
    // rem_euclid may round up to exactly `duration` for tiny negative inputs.
    if t >= duration {
        0.0
    } else {
        t
    }
}

/// Moves the playhead by `wall_dt · speed`. Looping wraps modulo the
/// duration; otherwise the playhead stops at the end and playback pauses.
pub fn advance(state: &PlaybackState, manifest: &SequenceManifest, wall_dt: f64) -> PlaybackState {
    if !state.playing || !(wall_dt > 0.0) {
        return *state;
    }
    let duration = manifest.duration();
    let t = state.time + wall_dt * state.speed;
    if state.looping {
        PlaybackState {
            time: wrap(t, duration),
            ..*state
        }
    } else if t >= duration {
        PlaybackState {
            time: duration,
            playing: false,
            ..*state
        }
    } else {
        PlaybackState { time: t, ..*state }
    }
}

/// Moves the playhead to `t`: wrapped past the end when looping, clamped
/// otherwise. The playing flag is untouched.
pub fn seek(state: &PlaybackState, manifest: &SequenceManifest, t: f64) -> PlaybackState {
    let duration = manifest.duration();
    let time = if t.is_nan() {
        state.time
    } else if state.looping && t > duration {
        wrap(t, duration)
    } else {
        t.clamp(0.0, duration)
    };
    PlaybackState { time, ..*state }
}

/// Loaded clouds keyed by frame index with least-recently-used eviction.
/// The current frame is pinned and never evicted.
#[derive(Debug, Clone)]
pub struct FrameCache {
    capacity: usize,
    window: usize,
    /// Front is least recently used.
    entries: VecDeque<(usize, Arc<SplatCloud>)>,
    pinned: Option<usize>,
}

impl Default for FrameCache {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_CAPACITY, DEFAULT_PREFETCH_WINDOW)
    }
}

impl FrameCache {
    /// `capacity` is raised to at least 1.
    pub fn new(capacity: usize, window: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            window,
            entries: VecDeque::new(),
            pinned: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.entries.iter().any(|(i, _)| *i == index)
    }

    /// Cached frame indices from least to most recently used.
    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|(i, _)| *i).collect()
    }

    /// Looks up a frame and marks it most recently used.
    pub fn get(&mut self, index: usize) -> Option<Arc<SplatCloud>> {
        let pos = self.entries.iter().position(|(i, _)| *i == index)?;
        let entry = self.entries.remove(pos)?;
        let cloud = Arc::clone(&entry.1);
        self.entries.push_back(entry);
        Some(cloud)
    }

    /// Marks `index` as the displayed frame, protecting it from eviction.
    pub fn set_current(&mut self, index: usize) {
        self.pinned = Some(index);
        self.get(index);
    }

    /// Inserts or refreshes a frame, evicting the least recently used
    /// unpinned entry when full. Returns false, storing nothing, when the
    /// only occupant is the pinned frame.
    pub fn insert(&mut self, index: usize, cloud: Arc<SplatCloud>) -> bool {
        if let Some(pos) = self.entries.iter().position(|(i, _)| *i == index) {
            self.entries.remove(pos);
        }
        while self.entries.len() >= self.capacity {
            let victim = self
                .entries
                .iter()
                .position(|(i, _)| Some(*i) != self.pinned);
            match victim {
                Some(pos) => {
                    self.entries.remove(pos);
                }
                None => return false,
            }
        }
        self.entries.push_back((index, cloud));
        true
    }
}

/// Frames to load next: up to `window` indices after the current frame in
/// playback order (wrapping when looping), skipping cached ones.
pub fn prefetch_plan(
    state: &PlaybackState,
    manifest: &SequenceManifest,
    cache: &FrameCache,
) -> Vec<usize> {
    let Ok(current) = frame_at(manifest, state.time) else {
        return Vec::new();
    };
    let n = manifest.len();
    (1..=cache.window)
        .map(|k| current + k)
        .filter_map(|i| match (i < n, state.looping) {
            (true, _) => Some(i),
            (false, true) => Some(i % n),
            (false, false) => None,
        })
        .filter(|&i| i != current && !cache.contains(i))
        .fold(Vec::new(), |mut plan, i| {
            if !plan.contains(&i) {
                plan.push(i);
            }
            plan
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(times: &[f64], duration: Option<f64>) -> SequenceManifest {
        let frames = times
            .iter()
            .enumerate()
            .map(|(i, &t)| (format!("f{i}.ply"), Some(t)))
            .collect();
        SequenceManifest::new(frames, None, duration).unwrap()
    }

    fn uniform(n: usize) -> SequenceManifest {
        SequenceManifest::uniform((0..n).map(|i| format!("f{i}.ply")).collect(), 30.0).unwrap()
    }

    fn playing() -> PlaybackState {
        PlaybackState {
            playing: true,
            ..Default::default()
        }
    }

    #[test]
    fn frame_at_floor_lookup() {
        let m = manifest(&[0.0, 0.5, 1.0], None);
        assert_eq!(frame_at(&m, 0.75).unwrap(), 1);
        assert_eq!(frame_at(&m, 0.0).unwrap(), 0);
        assert_eq!(frame_at(&m, 0.5).unwrap(), 1);
        assert_eq!(frame_at(&m, 1.0).unwrap(), 2);
        assert_eq!(frame_at(&m, 99.0).unwrap(), 2);
        assert_eq!(frame_at(&m, -1.0).unwrap(), 0);
    }

    #[test]
    fn advance_examples() {
        let m = manifest(&[0.0, 1.0], Some(2.0));
        let s = PlaybackState {
            speed: 2.0,
            ..playing()
        };
        assert_eq!(advance(&s, &m, 0.5).time, 1.0);

        let s = PlaybackState {
            time: 1.9,
            looping: true,
            ..playing()
        };
        assert!((advance(&s, &m, 0.2).time - 0.1).abs() < 1e-12);

        let paused = PlaybackState {
            time: 0.3,
            ..Default::default()
        };
        assert_eq!(advance(&paused, &m, 5.0), paused);
    }

    #[test]
    fn advance_stops_at_end() {
        let m = manifest(&[0.0, 1.0], Some(2.0));
        let s = PlaybackState {
            time: 1.5,
            ..playing()
        };
        let s = advance(&s, &m, 1.0);
        assert_eq!(s.time, 2.0);
        assert!(!s.playing);
    }

    #[test]
    fn seek_examples() {
        let m = manifest(&[0.0, 1.0], Some(2.0));
        let s = PlaybackState::default();
        assert_eq!(seek(&s, &m, -1.0).time, 0.0);
        assert_eq!(seek(&s, &m, 1.0).time, 1.0);
        assert_eq!(seek(&s, &m, 7.0).time, 2.0);
        let looped = PlaybackState {
            looping: true,
            ..playing()
        };
        let after = seek(&looped, &m, 5.0);
        assert_eq!(after.time, 1.0);
        assert!(after.playing);
    }

    #[test]
    fn speed_and_fps_validation() {
        let s = PlaybackState::default();
        assert_eq!(s.with_speed(0.0), Err(PlayerError::InvalidSpeed(0.0)));
        assert!(s.with_speed(-1.0).is_err());
        assert_eq!(s.with_speed(2.0).unwrap().speed, 2.0);
        assert!(s.with_target_fps(f64::NAN).is_err());
        assert_eq!(s.with_target_fps(24.0).unwrap().target_fps, 24.0);
    }

    #[test]
    fn prefetch_examples() {
        let m = uniform(10);
        let cache = FrameCache::new(8, 3);
        assert_eq!(
            prefetch_plan(&PlaybackState::default(), &m, &cache),
            vec![1, 2, 3]
        );

        let at8 = seek(&PlaybackState::default(), &m, 8.0 / 30.0);
        assert_eq!(frame_at(&m, at8.time).unwrap(), 8);
        let looped = PlaybackState {
            looping: true,
            ..at8
        };
        assert_eq!(prefetch_plan(&looped, &m, &cache), vec![9, 0, 1]);
        assert_eq!(prefetch_plan(&at8, &m, &cache), vec![9]);

        let mut cache = FrameCache::new(8, 3);
        let cloud = Arc::new(SplatCloud::empty());
        cache.insert(1, Arc::clone(&cloud));
        cache.insert(2, cloud);
        assert_eq!(
            prefetch_plan(&PlaybackState::default(), &m, &cache),
            vec![3]
        );
    }

    #[test]
    fn prefetch_on_tiny_loop_has_no_duplicates() {
        let m = uniform(2);
        let s = PlaybackState {
            looping: true,
            ..Default::default()
        };
        assert_eq!(prefetch_plan(&s, &m, &FrameCache::new(8, 3)), vec![1]);
    }

    #[test]
    fn cache_evicts_lru_but_not_current() {
        let mut cache = FrameCache::new(3, 3);
        let cloud = Arc::new(SplatCloud::empty());
        for i in 0..3 {
            cache.insert(i, Arc::clone(&cloud));
        }
        cache.set_current(0);
        cache.insert(3, Arc::clone(&cloud));
        assert_eq!(cache.indices(), vec![2, 0, 3]);
        cache.get(2);
        cache.insert(4, Arc::clone(&cloud));
        assert_eq!(cache.indices(), vec![0, 2, 4]);
    }

    #[test]
    fn pinned_frame_survives_pressure() {
        let mut cache = FrameCache::new(2, 3);
        let cloud = Arc::new(SplatCloud::empty());
        cache.insert(5, Arc::clone(&cloud));
        cache.set_current(5);
        for i in 0..20 {
            cache.insert(i + 10, Arc::clone(&cloud));
            assert!(cache.contains(5));
            assert!(cache.len() <= 2);
        }
    }

    #[test]
    fn pinned_sole_occupant_refuses_insert() {
        let cloud = Arc::new(SplatCloud::empty());
        let mut cache = FrameCache::new(1, 3);
        cache.set_current(0);
        assert!(cache.insert(0, Arc::clone(&cloud)));
        assert!(!cache.insert(1, cloud));
        assert_eq!(cache.indices(), vec![0]);
    }
}
