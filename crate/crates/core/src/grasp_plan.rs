//! Online grasp planning: scoring, shortlist truncation, static pose
//! validation and trajectory validation.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Vec3};
use crate::grasp_gen::{GraspCandidate, GraspDatabase};
use crate::gripper::{GripperModel, PartBox};
use crate::mesh::{meshes_intersect, Aabb, TriangleMesh};
use crate::scene::{colliding_voxels, PosedTriangles, SceneState, Target};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("no grasps to rank")]
    EmptyInput,
}

/// Weights of the alignment, yaw, confidence and height terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct ScoreWeights([f64; 4]);

#[derive(Serialize, Deserialize)]
struct RawWeights {
    align: f64,
    yaw: f64,
    confidence: f64,
    height: f64,
}

impl TryFrom<RawWeights> for ScoreWeights {
    type Error = String;
    fn try_from(r: RawWeights) -> Result<Self, String> {
        ScoreWeights::new([r.align, r.yaw, r.confidence, r.height])
    }
}

impl From<ScoreWeights> for RawWeights {
    fn from(w: ScoreWeights) -> Self {
        RawWeights { align: w.0[0], yaw: w.0[1], confidence: w.0[2], height: w.0[3] }
    }
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights([0.4, 0.1, 0.2, 0.3])
    }
}

impl ScoreWeights {
    /// Normalizes to unit sum.
    pub fn new(w: [f64; 4]) -> Result<Self, String> {
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(format!("weights must be finite and nonnegative: {w:?}"));
        }
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return Err("weights must not all be zero".into());
        }
        Ok(ScoreWeights(w.map(|x| x / s)))
    }

    pub fn values(&self) -> [f64; 4] {
        self.0
    }
}

/// The four score terms, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub align: f64,
    pub yaw: f64,
    pub confidence: f64,
    pub height: f64,
}

impl ScoreComponents {
    pub fn as_array(&self) -> [f64; 4] {
        [self.align, self.yaw, self.confidence, self.height]
    }

    pub fn score(&self, w: &ScoreWeights) -> f64 {
        self.as_array().iter().zip(w.values()).map(|(c, w)| c * w).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedGrasp {
    pub track_id: u64,
    pub candidate_index: usize,
    pub candidate: GraspCandidate,
    /// end effector in world
    pub world_pose: Pose,
    pub score: f64,
    pub components: ScoreComponents,
}

/// Per-iteration normalizers for the score terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreContext {
    pub max_confidence: f64,
    pub floor_z: f64,
    /// highest target centroid this iteration
    pub fill_z: f64,
    /// bin principal horizontal axis
    pub bin_x: Vec3,
}

impl ScoreContext {
    pub fn from_targets(targets: &[Target], floor_z: f64, bin_x: Vec3) -> Self {
        ScoreContext {
            max_confidence: targets.iter().map(|t| t.confidence).fold(0.0, f64::max),
            floor_z,
            fill_z: targets.iter().map(|t| t.pose.translation.z).fold(f64::NEG_INFINITY, f64::max),
            bin_x,
        }
    }
}

pub const GRAVITY_DOWN: Vec3 = Vec3::new(0.0, 0.0, -1.0);

pub fn score_components(world_pose: &Pose, target: &Target, ctx: &ScoreContext) -> ScoreComponents {
    let z_ee = world_pose.rotation.rotate(&GripperModel::APPROACH_AXIS);
    let x_ee = world_pose.rotation.rotate(&GripperModel::LATERAL_AXIS);
    let align = ((1.0 + z_ee.dot(&GRAVITY_DOWN)) * 0.5).clamp(0.0, 1.0);
    let yaw = ((1.0 + x_ee.dot(&ctx.bin_x).abs()) * 0.5).clamp(0.0, 1.0);
    let confidence = if ctx.max_confidence > 0.0 { (target.confidence / ctx.max_confidence).clamp(0.0, 1.0) } else { 0.0 };
    let span = ctx.fill_z - ctx.floor_z;
    let height = if span > 1e-12 { ((target.pose.translation.z - ctx.floor_z) / span).clamp(0.0, 1.0) } else { 1.0 };
    ScoreComponents { align, yaw, confidence, height }
}

pub fn score_grasp(candidate: &GraspCandidate, candidate_index: usize, target: &Target, ctx: &ScoreContext, weights: &ScoreWeights) -> RankedGrasp {
    let world_pose = target.pose.compose(&candidate.pose);
    let components = score_components(&world_pose, target, ctx);
    RankedGrasp {
        track_id: target.track_id,
        candidate_index,
        candidate: candidate.clone(),
        world_pose,
        score: components.score(weights),
        components,
    }
}

/// `ceil(fraction * n)`, guarding against products like `0.18 * 100` landing
/// an ulp above an integer.
pub fn shortlist_len(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    (((fraction * n as f64) - 1e-9).ceil().max(1.0) as usize).min(n)
}

/// Descending score, ties by `(track_id, candidate_index)`.
pub fn rank_order(a: &RankedGrasp, b: &RankedGrasp) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.track_id.cmp(&b.track_id)).then(a.candidate_index.cmp(&b.candidate_index))
}

pub fn rank_and_truncate(mut grasps: Vec<RankedGrasp>, fraction: f64) -> Result<Vec<RankedGrasp>, PlanError> {
    if grasps.is_empty() {
        return Err(PlanError::EmptyInput);
    }
    grasps.sort_by(rank_order);
    grasps.truncate(shortlist_len(grasps.len(), fraction));
    Ok(grasps)
}

/// Workspace membership stand-in for inverse kinematics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReachModel {
    pub base: Vec3,
    pub r_min: f64,
    pub r_max: f64,
    /// largest angle between the approach axis and gravity, radians
    pub max_tilt: f64,
}

impl Default for ReachModel {
    fn default() -> Self {
        ReachModel { base: Vec3::new(-0.45, 0.0, 0.0), r_min: 0.15, r_max: 0.95, max_tilt: 60f64.to_radians() }
    }
}

impl ReachModel {
    pub fn position_reachable(&self, p: &Vec3) -> bool {
        let r = (p - self.base).norm();
        r >= self.r_min && r <= self.r_max
    }

    pub fn reachable(&self, pose: &Pose) -> bool {
        let z = pose.rotation.rotate(&GripperModel::APPROACH_AXIS);
        self.position_reachable(&pose.translation) && z.dot(&GRAVITY_DOWN) >= self.max_tilt.cos() - 1e-12
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticFail {
    Unreachable,
    StaticHit,
    ObjectHit,
    VoxelHit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrajectoryFail {
    StaticHit { sample: usize },
    VoxelBudget { sample: usize },
    NeighborHit { sample: usize },
    Unreachable { sample: usize },
}

/// Contact allowance for the trajectory stage: parts shrunk by `erosion`
/// may touch at most `voxel_budget` occupied voxels and no neighbor mesh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelaxConfig {
    pub erosion: f64,
    pub min_half: f64,
    pub voxel_budget: usize,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        RelaxConfig { erosion: 0.005, min_half: 0.001, voxel_budget: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    /// pre-grasp standoff along the approach axis, meters
    pub pre_grasp_offset: f64,
    /// lift target above the bin floor, meters
    pub lift_height: f64,
    /// largest sweep step; clamped to the voxel resolution
    pub max_step: f64,
    pub v_max: f64,
    pub a_max: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig { pre_grasp_offset: 0.08, lift_height: 0.20, max_step: 0.005, v_max: 0.5, a_max: 1.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub weights: ScoreWeights,
    pub fraction: f64,
    pub reach: ReachModel,
    /// per-finger clearance added to the grasp width when opening, meters
    pub opening_margin: f64,
    pub motion: MotionConfig,
    pub relax: RelaxConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            weights: ScoreWeights::default(),
            fraction: 0.18,
            reach: ReachModel::default(),
            opening_margin: 0.006,
            motion: MotionConfig::default(),
            relax: RelaxConfig::default(),
        }
    }
}

impl PlannerConfig {
    pub fn opening(&self, width: f64, gripper: &GripperModel) -> f64 {
        (width + 2.0 * self.opening_margin).min(gripper.max_opening())
    }
}

/// Bin placement used for scoring and retreat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinFrame {
    /// bin frame to world; origin at the interior floor center
    pub pose: Pose,
    /// interior height, meters
    pub rim_height: f64,
}

impl BinFrame {
    pub fn floor_z(&self) -> f64 {
        self.pose.translation.z
    }

    pub fn x_axis(&self) -> Vec3 {
        self.pose.rotation.rotate(&Vec3::x())
    }
}

/// Gripper part meshes placed at one end-effector pose.
pub struct PosedGripper {
    parts: Vec<(Arc<TriangleMesh>, Pose, Aabb)>,
    triangles: Vec<PosedTriangles>,
}

impl PosedGripper {
    pub fn new(boxes: &[PartBox], pose: &Pose) -> Self {
        let parts: Vec<(Arc<TriangleMesh>, Pose, Aabb)> = boxes
            .iter()
            .map(|b| {
                let m = Arc::new(b.mesh());
                let aabb = m.posed_aabb(pose);
                (m, *pose, aabb)
            })
            .collect();
        let triangles = parts.iter().map(|(m, p, _)| PosedTriangles::with_solid(m.clone(), p)).collect();
        PosedGripper { parts, triangles }
    }

    pub fn bounds(&self) -> Aabb {
        self.parts.iter().fold(Aabb::empty(), |a, p| a.union(&p.2))
    }

    pub fn hits_mesh(&self, mesh: &TriangleMesh, pose: &Pose) -> bool {
        let b = mesh.posed_aabb(pose);
        self.parts.iter().any(|(m, p, aabb)| aabb.overlaps(&b) && meshes_intersect(m, p, mesh, pose))
    }

    /// Distinct occupied voxels touching any part.
    pub fn voxel_contacts(&self, scene: &SceneState) -> usize {
        let mut seen: Vec<[usize; 3]> = Vec::new();
        for t in &self.triangles {
            for v in colliding_voxels(&scene.voxels, t) {
                if !seen.contains(&v) {
                    seen.push(v);
                }
            }
        }
        seen.len()
    }

    pub fn hits_statics(&self, scene: &SceneState) -> bool {
        scene.statics.iter().any(|s| self.hits_mesh(&s.mesh, &s.pose))
    }

    pub fn hits_other_targets(&self, scene: &SceneState, exempt: u64) -> bool {
        scene.targets.iter().any(|t| t.track_id != exempt && self.hits_mesh(&t.model.mesh, &t.pose))
    }
}

/// Stage one: reachability, then statics, other targets and voxels at the grasp pose.
pub fn static_pose_validation(grasp: &RankedGrasp, scene: &SceneState, gripper: &GripperModel, config: &PlannerConfig) -> Result<(), StaticFail> {
    if !config.reach.reachable(&grasp.world_pose) {
        return Err(StaticFail::Unreachable);
    }
    let posed = PosedGripper::new(&gripper.parts(config.opening(grasp.candidate.width, gripper)), &grasp.world_pose);
    if posed.hits_statics(scene) {
        return Err(StaticFail::StaticHit);
    }
    if posed.hits_other_targets(scene, grasp.track_id) {
        return Err(StaticFail::ObjectHit);
    }
    if posed.voxel_contacts(scene) > 0 {
        return Err(StaticFail::VoxelHit);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Approach,
    Lift,
    Retreat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub pose: Pose,
    pub opening: f64,
    pub segment: Segment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspTrajectory {
    /// pre-grasp, grasp, lift, retreat
    pub waypoints: Vec<Pose>,
    /// seconds from the trajectory start, one per waypoint
    pub timestamps: Vec<f64>,
    /// dense sweep actually checked
    pub samples: Vec<TrajectorySample>,
    pub step: f64,
}

impl GraspTrajectory {
    pub fn duration(&self) -> f64 {
        self.timestamps.last().copied().unwrap_or(0.0)
    }
}

/// Time to travel `d` from rest to rest under a trapezoidal speed profile.
pub fn trapezoid_time(d: f64, v_max: f64, a_max: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    let d_ramp = v_max * v_max / a_max;
    if d <= d_ramp {
        2.0 * (d / a_max).sqrt()
    } else {
        2.0 * v_max / a_max + (d - d_ramp) / v_max
    }
}

/// Spacing at most `step`; a segment within rounding of a whole number of
/// steps gets exactly that many.
fn interpolate(a: &Pose, b: &Pose, step: f64) -> Vec<Pose> {
    let d = (b.translation - a.translation).norm();
    let n = ((d / step - 1e-9).ceil() as usize).max(1);
    (1..=n).map(|i| Pose::new(a.rotation, a.translation + (b.translation - a.translation) * (i as f64 / n as f64))).collect()
}

/// Waypoints and dense samples for a grasp, before collision checks.
pub fn build_trajectory(grasp: &RankedGrasp, gripper: &GripperModel, bin: &BinFrame, step: f64, config: &PlannerConfig) -> GraspTrajectory {
    let g = grasp.world_pose;
    let z_ee = g.rotation.rotate(&GripperModel::APPROACH_AXIS);
    let pre = Pose::new(g.rotation, g.translation - z_ee * config.motion.pre_grasp_offset);
    let lift_z = (bin.floor_z() + config.motion.lift_height).max(g.translation.z);
    let lift = Pose::new(g.rotation, Vec3::new(g.translation.x, g.translation.y, lift_z));
    let above = bin.pose.translation;
    let retreat = Pose::new(g.rotation, Vec3::new(above.x, above.y, lift_z));
    let open = config.opening(grasp.candidate.width, gripper);
    let closed = grasp.candidate.width;
    let mut samples = vec![TrajectorySample { pose: pre, opening: open, segment: Segment::Approach }];
    samples.extend(interpolate(&pre, &g, step).into_iter().map(|pose| TrajectorySample { pose, opening: open, segment: Segment::Approach }));
    samples.extend(interpolate(&g, &lift, step).into_iter().map(|pose| TrajectorySample { pose, opening: closed, segment: Segment::Lift }));
    samples.extend(interpolate(&lift, &retreat, step).into_iter().map(|pose| TrajectorySample { pose, opening: closed, segment: Segment::Retreat }));
    let waypoints = vec![pre, g, lift, retreat];
    let mut timestamps = vec![0.0];
    for w in waypoints.windows(2) {
        let d = (w[1].translation - w[0].translation).norm();
        timestamps.push(timestamps.last().unwrap() + trapezoid_time(d, config.motion.v_max, config.motion.a_max));
    }
    GraspTrajectory { waypoints, timestamps, samples, step }
}

/// Stage two: strict statics along the whole sweep; relaxed voxel and
/// neighbor contacts while approaching and lifting.
pub fn trajectory_validation(grasp: &RankedGrasp, scene: &SceneState, gripper: &GripperModel, bin: &BinFrame, config: &PlannerConfig) -> Result<GraspTrajectory, TrajectoryFail> {
    let step = config.motion.max_step.min(scene.voxels.resolution()).max(1e-4);
    let traj = build_trajectory(grasp, gripper, bin, step, config);
    for (i, s) in traj.samples.iter().enumerate() {
        if !config.reach.position_reachable(&s.pose.translation) {
            return Err(TrajectoryFail::Unreachable { sample: i });
        }
        let parts = gripper.parts(s.opening);
        let full = PosedGripper::new(&parts, &s.pose);
        if full.hits_statics(scene) {
            return Err(TrajectoryFail::StaticHit { sample: i });
        }
        if s.segment == Segment::Retreat {
            continue;
        }
        let eroded: Vec<PartBox> = parts.iter().map(|p| p.eroded(config.relax.erosion, config.relax.min_half)).collect();
        let shrunk = PosedGripper::new(&eroded, &s.pose);
        if shrunk.hits_other_targets(scene, grasp.track_id) {
            return Err(TrajectoryFail::NeighborHit { sample: i });
        }
        if shrunk.voxel_contacts(scene) > config.relax.voxel_budget {
            return Err(TrajectoryFail::VoxelBudget { sample: i });
        }
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    NoTargets,
    NoCandidates,
    NoFeasible,
}

/// Stage-failure counts over the evaluated shortlist.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStats {
    pub candidates: usize,
    pub shortlisted: usize,
    pub evaluated: usize,
    pub unreachable: usize,
    pub static_hit: usize,
    pub object_hit: usize,
    pub voxel_hit: usize,
    pub trajectory_fail: usize,
    /// rank of the chosen grasp in the shortlist
    pub chosen_rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PlanOutcome {
    Grasp { trajectory: GraspTrajectory, grasp: RankedGrasp, stats: PlanStats },
    EarlyExit { reason: ExitReason, stats: PlanStats },
}

impl PlanOutcome {
    pub fn stats(&self) -> &PlanStats {
        match self {
            PlanOutcome::Grasp { stats, .. } | PlanOutcome::EarlyExit { stats, .. } => stats,
        }
    }

    pub fn is_early_exit(&self) -> bool {
        matches!(self, PlanOutcome::EarlyExit { .. })
    }
}

/// Scores every database candidate on every target.
pub fn score_all(scene: &SceneState, dbs: &BTreeMap<u32, GraspDatabase>, bin: &BinFrame, weights: &ScoreWeights) -> Vec<RankedGrasp> {
    let ctx = ScoreContext::from_targets(&scene.targets, bin.floor_z(), bin.x_axis());
    let mut out = Vec::new();
    for t in &scene.targets {
        let Some(db) = dbs.get(&t.model.class_id) else { continue };
        for (i, c) in db.candidates.iter().enumerate() {
            out.push(score_grasp(c, i, t, &ctx, weights));
        }
    }
    out
}

/// Checks a single grasp through both stages.
pub fn evaluate(grasp: &RankedGrasp, scene: &SceneState, gripper: &GripperModel, bin: &BinFrame, config: &PlannerConfig) -> Result<GraspTrajectory, Result<StaticFail, TrajectoryFail>> {
    static_pose_validation(grasp, scene, gripper, config).map_err(Ok)?;
    trajectory_validation(grasp, scene, gripper, bin, config).map_err(Err)
}

/// First shortlisted grasp, in rank order, passing both stages.
pub fn plan(scene: &SceneState, dbs: &BTreeMap<u32, GraspDatabase>, gripper: &GripperModel, bin: &BinFrame, config: &PlannerConfig) -> PlanOutcome {
    let mut stats = PlanStats::default();
    if scene.targets.is_empty() {
        return PlanOutcome::EarlyExit { reason: ExitReason::NoTargets, stats };
    }
    let all = score_all(scene, dbs, bin, &config.weights);
    stats.candidates = all.len();
    let Ok(shortlist) = rank_and_truncate(all, config.fraction) else {
        return PlanOutcome::EarlyExit { reason: ExitReason::NoCandidates, stats };
    };
    stats.shortlisted = shortlist.len();
    for (rank, g) in shortlist.into_iter().enumerate() {
        stats.evaluated += 1;
        match evaluate(&g, scene, gripper, bin, config) {
            Ok(trajectory) => {
                stats.chosen_rank = Some(rank);
                return PlanOutcome::Grasp { trajectory, grasp: g, stats };
            }
            Err(Ok(StaticFail::Unreachable)) => stats.unreachable += 1,
            Err(Ok(StaticFail::StaticHit)) => stats.static_hit += 1,
            Err(Ok(StaticFail::ObjectHit)) => stats.object_hit += 1,
            Err(Ok(StaticFail::VoxelHit)) => stats.voxel_hit += 1,
            Err(Err(_)) => stats.trajectory_fail += 1,
        }
    }
    PlanOutcome::EarlyExit { reason: ExitReason::NoFeasible, stats }
}

/// Chosen grasp as logged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChosenGrasp {
    pub track_id: u64,
    pub candidate_index: usize,
    pub score: f64,
    pub components: ScoreComponents,
    pub duration: f64,
}

/// One line of the plan log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanLogRecord {
    pub iteration: u64,
    pub chosen: Option<ChosenGrasp>,
    pub exit_reason: Option<ExitReason>,
    pub stats: PlanStats,
}

impl PlanLogRecord {
    pub fn new(iteration: u64, outcome: &PlanOutcome) -> Self {
        match outcome {
            PlanOutcome::Grasp { trajectory, grasp, stats } => PlanLogRecord {
                iteration,
                chosen: Some(ChosenGrasp {
                    track_id: grasp.track_id,
                    candidate_index: grasp.candidate_index,
                    score: grasp.score,
                    components: grasp.components,
                    duration: trajectory.duration(),
                }),
                exit_reason: None,
                stats: stats.clone(),
            },
            PlanOutcome::EarlyExit { reason, stats } => {
                PlanLogRecord { iteration, chosen: None, exit_reason: Some(*reason), stats: stats.clone() }
            }
        }
    }
}

pub fn write_plan_log(records: &[PlanLogRecord], mut out: impl std::io::Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
