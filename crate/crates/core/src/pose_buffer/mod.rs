//! Temporal multi-view pose fusion.
//!
//! Each track keeps the symmetry-canonicalized world poses it absorbed and a
//! fused pose that is always the average of that history.

mod symmetry;

pub use symmetry::*;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{angular_distance, average_rotations, average_translations, Pose, Rotation, Vec3};
use crate::mesh::{Aabb, Bvh, TriangleMesh};
use crate::object::ObjectModel;
use crate::perception::Frustum;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BufferConfig {
    /// radians
    pub theta_thresh: f64,
    /// meters
    pub delta_thresh: f64,
    pub min_observations: usize,
    pub stale_after: u32,
    /// tracks still below `min_observations` this many iterations after their
    /// last sighting are dropped regardless of visibility; 0 disables
    pub confirm_within: u64,
    /// weight averages by estimate confidence instead of uniformly
    pub confidence_weighting: bool,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig {
            theta_thresh: 15f64.to_radians(),
            delta_thresh: 0.010,
            min_observations: 2,
            stale_after: 2,
            confirm_within: 3,
            confidence_weighting: false,
        }
    }
}

/// A filtered estimate already expressed in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldEstimate {
    pub class_id: u32,
    pub pose: Pose,
    pub confidence: f64,
    /// ground-truth instance, when known; never used for association
    pub source: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackedObject {
    pub id: u64,
    pub class_id: u32,
    /// canonicalized world poses, oldest first
    pub history: Vec<Pose>,
    pub confidences: Vec<f64>,
    pub sources: Vec<Option<usize>>,
    pub fused: Pose,
    pub last_seen: u64,
    /// consecutive in-view iterations without a matching estimate
    pub unseen_in_view: u32,
    last_checked: Option<u64>,
}

impl TrackedObject {
    pub fn count(&self) -> usize {
        self.history.len()
    }

    pub fn confidence(&self) -> f64 {
        self.confidences.iter().sum::<f64>() / self.confidences.len() as f64
    }

    /// Most frequent ground-truth source among absorbed estimates.
    pub fn majority_source(&self) -> Option<usize> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for s in self.sources.iter().flatten() {
            *counts.entry(*s).or_default() += 1;
        }
        counts.into_iter().max_by_key(|(s, c)| (*c, std::cmp::Reverse(*s))).map(|(s, _)| s)
    }

    fn refuse(&mut self, weighting: bool) {
        let weights: Vec<f64> = if weighting { self.confidences.iter().map(|c| c.max(1e-6)).collect() } else { vec![1.0; self.history.len()] };
        let rots: Vec<Rotation> = self.history.iter().map(|p| p.rotation).collect();
        let ts: Vec<Vec3> = self.history.iter().map(|p| p.translation).collect();
        self.fused = Pose::new(
            average_rotations(&rots, &weights).expect("history is non-empty"),
            average_translations(&ts, &weights).expect("history is non-empty"),
        );
    }
}

/// A pose exposed to planning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidatedPose {
    pub track_id: u64,
    pub class_id: u32,
    pub pose: Pose,
    pub confidence: f64,
    pub count: usize,
}

/// One record per absorbed estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackLogRecord {
    pub iteration: u64,
    pub track_id: u64,
    pub new_track: bool,
    pub raw: Pose,
    pub canonical: Pose,
    pub fused: Pose,
}

pub fn write_track_log(records: &[TrackLogRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// `pose * S` closest to `reference`; free-function form of [`SymmetryGroup::canonicalize`].
pub fn canonicalize(pose: &Pose, reference: &Pose, group: &SymmetryGroup) -> Pose {
    group.canonicalize(pose, &reference.rotation)
}

fn matches(estimate: &WorldEstimate, track: &TrackedObject, group: &SymmetryGroup, config: &BufferConfig) -> Option<f64> {
    if track.class_id != estimate.class_id {
        return None;
    }
    let dt = (estimate.pose.translation - track.fused.translation).norm();
    if !(dt < config.delta_thresh) {
        return None;
    }
    let c = canonicalize(&estimate.pose, &track.fused, group);
    if angular_distance(&c.rotation, &track.fused.rotation) < config.theta_thresh {
        Some(dt)
    } else {
        None
    }
}

/// The qualifying track of the same class with the smallest translation distance.
pub fn associate(estimate: &WorldEstimate, tracks: &[TrackedObject], group: &SymmetryGroup, config: &BufferConfig) -> Option<u64> {
    let mut best: Option<(f64, u64)> = None;
    for t in tracks {
        if let Some(d) = matches(estimate, t, group, config) {
            if best.is_none_or(|(bd, bid)| d < bd || (d == bd && t.id < bid)) {
                best = Some((d, t.id));
            }
        }
    }
    best.map(|(_, id)| id)
}

#[derive(Clone, Debug)]
struct ClassInfo {
    symmetry: SymmetryGroup,
    mesh: Arc<TriangleMesh>,
}

#[derive(Clone, Debug)]
pub struct PoseBuffer {
    config: BufferConfig,
    classes: BTreeMap<u32, ClassInfo>,
    tracks: Vec<TrackedObject>,
    next_id: u64,
    log: Vec<TrackLogRecord>,
}

impl PoseBuffer {
    pub fn new(config: BufferConfig, catalog: &[Arc<ObjectModel>]) -> Self {
        let classes = catalog
            .iter()
            .map(|m| (m.class_id, ClassInfo { symmetry: m.symmetry.clone(), mesh: m.mesh.clone() }))
            .collect();
        PoseBuffer { config, classes, tracks: Vec::new(), next_id: 0, log: Vec::new() }
    }

    pub fn config(&self) -> &BufferConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[TrackedObject] {
        &self.tracks
    }

    pub fn track(&self, id: u64) -> Option<&TrackedObject> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn clear(&mut self) {
        self.tracks.clear();
    }

    pub fn symmetry(&self, class_id: u32) -> SymmetryGroup {
        self.classes.get(&class_id).map(|c| c.symmetry.clone()).unwrap_or_else(SymmetryGroup::trivial)
    }

    /// Drains the ingest log accumulated so far.
    pub fn take_log(&mut self) -> Vec<TrackLogRecord> {
        std::mem::take(&mut self.log)
    }

    /// Absorbs the estimates of iteration `k`. Candidate (estimate, track)
    /// pairs are assigned greedily by translation distance; every track
    /// takes at most one estimate and leftovers open new tracks.
    pub fn ingest(&mut self, estimates: &[WorldEstimate], k: u64) {
        let groups: Vec<SymmetryGroup> = estimates.iter().map(|e| self.symmetry(e.class_id)).collect();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ei, e) in estimates.iter().enumerate() {
            for (ti, t) in self.tracks.iter().enumerate() {
                if let Some(d) = matches(e, t, &groups[ei], &self.config) {
                    pairs.push((d, ei, ti));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut est_done = vec![false; estimates.len()];
        let mut track_done = vec![false; self.tracks.len()];
        let mut assigned: Vec<(usize, usize)> = Vec::new();
        for (_, ei, ti) in pairs {
            if !est_done[ei] && !track_done[ti] {
                est_done[ei] = true;
                track_done[ti] = true;
                assigned.push((ei, ti));
            }
        }
        assigned.sort();
        for (ei, ti) in assigned {
            let e = &estimates[ei];
            let track = &mut self.tracks[ti];
            let canonical = groups[ei].canonicalize(&e.pose, &track.fused.rotation);
            track.history.push(canonical);
            track.confidences.push(e.confidence);
            track.sources.push(e.source);
            track.last_seen = k;
            track.unseen_in_view = 0;
            track.refuse(self.config.confidence_weighting);
            self.log.push(TrackLogRecord { iteration: k, track_id: track.id, new_track: false, raw: e.pose, canonical, fused: track.fused });
        }
        for (ei, e) in estimates.iter().enumerate() {
            if est_done[ei] {
                continue;
            }
            // a fixed reference makes the stored pose independent of which symmetric variant arrived
            let canonical = groups[ei].canonicalize(&e.pose, &Rotation::identity());
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(TrackedObject {
                id,
                class_id: e.class_id,
                history: vec![canonical],
                confidences: vec![e.confidence],
                sources: vec![e.source],
                fused: canonical,
                last_seen: k,
                unseen_in_view: 0,
                last_checked: None,
            });
            self.log.push(TrackLogRecord { iteration: k, track_id: id, new_track: true, raw: e.pose, canonical, fused: canonical });
        }
    }

    /// Whether the fused centroid of `idx` should have been observable from the view:
    /// inside the frustum and not hidden behind another track's fused mesh.
    /// Bounding spheres of the tracks as boxes, with their radii.
    fn occluder_index(&self) -> (Bvh, Vec<f64>) {
        let radii: Vec<f64> = self
            .tracks
            .iter()
            .map(|t| self.classes.get(&t.class_id).map_or(0.0, |c| c.mesh.aabb().extents().norm() * 0.5))
            .collect();
        let boxes: Vec<Aabb> = self
            .tracks
            .iter()
            .zip(&radii)
            .map(|(t, &r)| Aabb { min: t.fused.translation.add_scalar(-r), max: t.fused.translation.add_scalar(r) })
            .collect();
        (Bvh::build(&boxes), radii)
    }

    fn expected_visible(&self, idx: usize, frustum: &Frustum, occluders: &(Bvh, Vec<f64>)) -> bool {
        let target = self.tracks[idx].fused.translation;
        if !frustum.contains(&target) {
            return false;
        }
        let origin = frustum.camera.translation;
        let to = target - origin;
        let dist = to.norm();
        let dir = to / dist;
        let (bvh, radii) = occluders;
        let mut hidden = false;
        bvh.traverse_ray(&origin, &dir, dist, |j, _| {
            if j == idx || hidden {
                return None;
            }
            let other = &self.tracks[j];
            let info = self.classes.get(&other.class_id)?;
            let radius = radii[j];
            let c = other.fused.translation;
            let along = (c - origin).dot(&dir);
            if along < 0.0 || along - radius > dist || ((c - origin) - dir * along).norm() > radius {
                return None;
            }
            let inv = other.fused.inverse();
            let o = inv.transform_point(&origin);
            let d = inv.transform_vector(&dir);
            let hit = info.mesh.raycast_within(&o, &d, 0.0, dist)?;
            // the other surface must lie clearly in front of the target centroid
            if hit.distance < dist - radius.min(0.01) {
                hidden = true;
                // a zero limit ends the traversal
                return Some(0.0);
            }
            None
        });
        !hidden
    }

    /// Counts an unseen in-view iteration for every track expected to be
    /// visible from `frustum` but not observed at `k`, and removes tracks
    /// reaching `stale_after` or left unconfirmed for `confirm_within`.
    /// Repeated calls for the same `k` are no-ops.
    pub fn invalidate(&mut self, k: u64, frustum: &Frustum) {
        let occluders = self.occluder_index();
        let visible: Vec<bool> =
            (0..self.tracks.len()).map(|i| self.tracks[i].last_seen != k && self.expected_visible(i, frustum, &occluders)).collect();
        for (t, vis) in self.tracks.iter_mut().zip(visible) {
            if t.last_checked == Some(k) {
                continue;
            }
            t.last_checked = Some(k);
            if vis {
                t.unseen_in_view += 1;
            }
        }
        let stale = self.config.stale_after.max(1);
        let (min_obs, confirm) = (self.config.min_observations.max(1), self.config.confirm_within);
        self.tracks.retain(|t| {
            let unconfirmed = confirm > 0 && t.count() < min_obs && k.saturating_sub(t.last_seen) >= confirm;
            t.last_seen == k || (t.unseen_in_view < stale && !unconfirmed)
        });
    }

    /// Removes one track, e.g. after its object was picked.
    pub fn remove(&mut self, id: u64) -> bool {
        let before = self.tracks.len();
        self.tracks.retain(|t| t.id != id);
        self.tracks.len() != before
    }

    /// Tracks seen at `k` with at least `min_observations` observations.
    pub fn validated_poses(&self, k: u64) -> Vec<ValidatedPose> {
        validated_poses(&self.tracks, k, &self.config)
    }
}

pub fn validated_poses(tracks: &[TrackedObject], k: u64, config: &BufferConfig) -> Vec<ValidatedPose> {
    tracks
        .iter()
        .filter(|t| t.last_seen == k && t.count() >= config.min_observations.max(1))
        .map(|t| ValidatedPose { track_id: t.id, class_id: t.class_id, pose: t.fused, confidence: t.confidence(), count: t.count() })
        .collect()
}
