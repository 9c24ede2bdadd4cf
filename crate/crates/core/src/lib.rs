//! Bin-picking planning and evaluation stack.
//!
//! Perception is emulated: a ray-cast depth camera with configurable noise and
//! a pose-estimate generator stand in for the sensor and the learned models.
//! Everything downstream of the estimates (rejection, fusion, scene model,
//! grasp planning, verification, masked-time scheduling) is the real logic.

pub mod geometry;
pub mod mesh;
pub mod object;
pub mod perception;
pub mod pose_buffer;
pub mod scene;
pub mod gripper;
pub mod grasp_gen;
pub mod grasp_plan;
pub mod sim;

pub use geometry::{angular_distance, average_rotations, average_translations, GeometryError, Pose, Rotation, Vec3};
pub use grasp_gen::{generate_database, read_db, write_db, GraspCandidate, GraspDatabase, GraspGenConfig, GraspGenError};
pub use grasp_plan::{plan, BinFrame, PlanOutcome, PlannerConfig, RankedGrasp, ScoreWeights};
pub use gripper::{GripperModel, GripperSpec};
pub use mesh::{load_mesh, meshes_intersect, MeshError, MeshFormat, RayHit, TriangleMesh};
pub use object::{ObjectModel, ObjectSpec};
pub use perception::{
    corrupt_depth, emit_pose_estimates, project_bb_center, rejection_filter, render, render_depth, CameraIntrinsics,
    DepthImage, DepthNoisePreset, EstimatorNoise, PoseEstimate, RejectionConfig, Verdict,
};
pub use pose_buffer::{BufferConfig, PoseBuffer, SymmetryGroup, TrackedObject, ValidatedPose, WorldEstimate};
pub use scene::{classify_and_carve, depth_to_points, voxels_collide, CarveConfig, GridSpec, SceneState, VoxelGrid};
pub use sim::{ablate, run, AblationAxis, RunOutput, SimConfig, SimError, Simulator};
