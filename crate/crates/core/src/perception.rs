//! Simulated camera and pose estimator: depth rendering, depth corruption,
//! emulated pose estimates and the depth-consistency rejection filter.
//!
//! Camera frames follow the pinhole convention: `z` forward, `x` right, `y`
//! down. Pixel `(i, j)` has image coordinates `u = i`, `v = j`.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Rotation, Vec3};
use crate::mesh::{Aabb, Bvh, TriangleMesh};
use crate::object::ObjectModel;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid depth {0}: must be positive")]
    InvalidDepth(f64),
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Deserialize)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = PerceptionError;
    fn try_from(r: RawIntrinsics) -> Result<Self, Self::Error> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics::from_fov(160, 120, 70f64.to_radians())
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, PerceptionError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(PerceptionError::InvalidIntrinsics(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(PerceptionError::InvalidIntrinsics(format!("principal point ({cx}, {cy}) outside {width}x{height}")));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy, width, height })
    }

    /// Square pixels, principal point at the image center, horizontal field of view `hfov`.
    pub fn from_fov(width: usize, height: usize, hfov: f64) -> Self {
        let f = (width as f64 - 1.0) * 0.5 / (hfov * 0.5).tan();
        CameraIntrinsics { fx: f, fy: f, cx: (width as f64 - 1.0) * 0.5, cy: (height as f64 - 1.0) * 0.5, width, height }
    }

    /// Image coordinates of a camera-frame point in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if !(p.z > 0.0) {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// `z * K^-1 [u, v, 1]^T`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Depth per pixel in meters along the optical axis; 0 marks a hole.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        DepthImage { width, height, data: vec![0.0; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }

    /// Binary 16-bit PGM with one gray level per millimeter, saturating.
    pub fn write_pgm(&self, mut out: impl Write) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.data.len() * 2);
        for d in &self.data {
            let mm = (d * 1000.0).round().clamp(0.0, 65535.0) as u16;
            buf.extend_from_slice(&mm.to_be_bytes());
        }
        out.write_all(&buf)
    }

    pub fn read_pgm(mut input: impl BufRead) -> Result<Self, PerceptionError> {
        let mut header = Vec::new();
        // magic, width, height, maxval: four whitespace-separated tokens
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            header.clear();
            if input.read_until(b'\n', &mut header)? == 0 {
                return Err(PerceptionError::Pgm("truncated header".into()));
            }
            let line = String::from_utf8_lossy(&header);
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_string));
        }
        if tokens[0] != "P5" || tokens.len() != 4 {
            return Err(PerceptionError::Pgm(format!("unsupported header {tokens:?}")));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| PerceptionError::Pgm(format!("bad number {s:?}")));
        let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 65535 {
            return Err(PerceptionError::Pgm(format!("expected maxval 65535, got {maxval}")));
        }
        let mut bytes = vec![0u8; w * h * 2];
        input.read_exact(&mut bytes).map_err(|_| PerceptionError::Pgm("truncated raster".into()))?;
        let data = bytes.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0).collect();
        Ok(DepthImage { width: w, height: h, data })
    }
}

/// Camera-frame surface normals and incidence angles (radians between the
/// normal and the viewing ray) per pixel. Holes carry a zero normal.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalImage {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vec3>,
    pub incidence: Vec<f64>,
}

impl NormalImage {
    /// Uniform incidence everywhere, facing the camera otherwise.
    pub fn uniform(width: usize, height: usize, incidence: f64) -> Self {
        NormalImage { width, height, normals: vec![-Vec3::z(); width * height], incidence: vec![incidence; width * height] }
    }
}

/// Per-pixel owner: an object instance index, or one of the two markers.
pub type PixelLabel = i32;
pub const LABEL_NONE: PixelLabel = -1;
pub const LABEL_STATIC: PixelLabel = -2;

/// Posed scene surfaces with owner labels, indexed by a top-level BVH over
/// their world boxes. Rays are cast into each candidate mesh's local frame.
#[derive(Clone, Debug, Default)]
pub struct SceneGeometry<'a> {
    parts: Vec<ScenePart<'a>>,
    bvh: Option<Bvh>,
}

#[derive(Clone, Debug)]
struct ScenePart<'a> {
    mesh: &'a TriangleMesh,
    pose: Pose,
    inverse: Pose,
    label: PixelLabel,
}

/// Nearest surface hit in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneHit {
    pub distance: f64,
    pub normal: Vec3,
    pub label: PixelLabel,
}

impl<'a> SceneGeometry<'a> {
    /// Statics get `LABEL_STATIC`; objects are labeled by their index.
    pub fn new(statics: &[(&'a TriangleMesh, Pose)], objects: &[(&'a TriangleMesh, Pose)]) -> Self {
        let labeled = statics
            .iter()
            .map(|&(m, p)| (m, p, LABEL_STATIC))
            .chain(objects.iter().enumerate().map(|(i, &(m, p))| (m, p, i as PixelLabel)));
        let parts: Vec<ScenePart> = labeled
            .filter(|(m, _, _)| !m.is_empty())
            .map(|(mesh, pose, label)| ScenePart { mesh, pose, inverse: pose.inverse(), label })
            .collect();
        if parts.is_empty() {
            return SceneGeometry::default();
        }
        let boxes: Vec<Aabb> = parts.iter().map(|p| p.mesh.posed_aabb(&p.pose)).collect();
        SceneGeometry { bvh: Some(Bvh::build(&boxes)), parts }
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// Ties on distance go to the earlier part.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<SceneHit> {
        let bvh = self.bvh.as_ref()?;
        let mut best: Option<(f64, usize, Vec3)> = None;
        bvh.traverse_ray(origin, dir, f64::INFINITY, |i, limit| {
            let part = &self.parts[i];
            let o = part.inverse.transform_point(origin);
            let d = part.inverse.transform_vector(dir);
            let hit = part.mesh.raycast_within(&o, &d, 0.0, limit)?;
            let better = match best {
                None => true,
                Some((bt, bi, _)) => hit.distance < bt || (hit.distance == bt && i < bi),
            };
            if better {
                best = Some((hit.distance, i, hit.normal));
            }
            Some(hit.distance)
        });
        best.map(|(distance, i, n)| SceneHit { distance, normal: self.parts[i].pose.transform_vector(&n), label: self.parts[i].label })
    }
}

#[derive(Clone, Debug)]
pub struct Render {
    pub depth: DepthImage,
    pub normals: NormalImage,
    pub labels: Vec<PixelLabel>,
}

/// Unit camera-frame ray through pixel `(x, y)`.
fn pixel_ray(intr: &CameraIntrinsics, x: usize, y: usize) -> Vec3 {
    intr.backproject(x as f64, y as f64, 1.0).normalize()
}

/// Nearest-hit ray cast for every pixel; `camera` maps camera to world.
pub fn render(scene: &SceneGeometry, camera: &Pose, intr: &CameraIntrinsics) -> Render {
    let (w, h) = (intr.width, intr.height);
    let mut depth = DepthImage::zeros(w, h);
    let mut normals = NormalImage { width: w, height: h, normals: vec![Vec3::zeros(); w * h], incidence: vec![0.0; w * h] };
    let mut labels = vec![LABEL_NONE; w * h];
    if scene.is_empty() {
        return Render { depth, normals, labels };
    }
    let origin = camera.translation;
    let inv = camera.rotation.inverse();
    for y in 0..h {
        for x in 0..w {
            let d_cam = pixel_ray(intr, x, y);
            let d_world = camera.rotation.rotate(&d_cam);
            if let Some(hit) = scene.raycast(&origin, &d_world) {
                let i = y * w + x;
                depth.data[i] = hit.distance * d_cam.z;
                let n = inv.rotate(&hit.normal);
                normals.normals[i] = n;
                normals.incidence[i] = n.dot(&d_cam).abs().min(1.0).acos();
                labels[i] = hit.label;
            }
        }
    }
    Render { depth, normals, labels }
}

pub fn render_depth(scene: &SceneGeometry, camera: &Pose, intr: &CameraIntrinsics) -> DepthImage {
    render(scene, camera, intr).depth
}

/// Additive Gaussian noise, incidence-dependent dropout, flying pixels smeared
/// across depth discontinuities and foreground bleeding into the background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthNoisePreset {
    pub name: String,
    /// meters
    pub gaussian_sigma: f64,
    /// `[incidence_deg, hole_probability]` knots, piecewise linear, clamped at the ends
    pub hole_table: Vec<[f64; 2]>,
    /// a pixel differing from a 4-neighbor by more than this lies on an edge, meters
    #[serde(default)]
    pub edge_threshold: f64,
    /// chance that an edge pixel takes a depth between its own and the neighbor's
    #[serde(default)]
    pub flying_probability: f64,
    /// background pixels within this many pixels (Chebyshev) of a nearer
    /// surface may take its depth, fattening foreground silhouettes
    #[serde(default)]
    pub edge_bleed_px: usize,
    #[serde(default)]
    pub bleed_probability: f64,
}

impl DepthNoisePreset {
    pub fn raw() -> Self {
        DepthNoisePreset {
            name: "raw".into(),
            gaussian_sigma: 0.004,
            hole_table: vec![[0.0, 0.01], [45.0, 0.04], [65.0, 0.12], [80.0, 0.18], [90.0, 0.20]],
            edge_threshold: 0.01,
            flying_probability: 0.5,
            edge_bleed_px: 2,
            bleed_probability: 0.6,
        }
    }

    pub fn enhanced() -> Self {
        DepthNoisePreset {
            name: "enhanced".into(),
            gaussian_sigma: 0.001,
            hole_table: vec![[0.0, 0.0], [60.0, 0.001], [90.0, 0.005]],
            edge_threshold: 0.01,
            flying_probability: 0.02,
            edge_bleed_px: 0,
            bleed_probability: 0.0,
        }
    }

    pub fn identity() -> Self {
        DepthNoisePreset {
            name: "identity".into(),
            gaussian_sigma: 0.0,
            hole_table: vec![],
            edge_threshold: 0.0,
            flying_probability: 0.0,
            edge_bleed_px: 0,
            bleed_probability: 0.0,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "raw" => Some(Self::raw()),
            "enhanced" => Some(Self::enhanced()),
            "identity" => Some(Self::identity()),
            _ => None,
        }
    }

    pub fn hole_probability(&self, incidence: f64) -> f64 {
        let deg = incidence.to_degrees();
        let t = &self.hole_table;
        let p = match t.len() {
            0 => 0.0,
            _ if deg <= t[0][0] => t[0][1],
            n if deg >= t[n - 1][0] => t[n - 1][1],
            _ => {
                let k = t.partition_point(|knot| knot[0] <= deg);
                let (a, b) = (t[k - 1], t[k]);
                a[1] + (b[1] - a[1]) * (deg - a[0]) / (b[0] - a[0])
            }
        };
        p.clamp(0.0, 1.0)
    }
}

/// Deterministic per `(depth, normals, preset, seed)`.
pub fn corrupt_depth(depth: &DepthImage, normals: &NormalImage, preset: &DepthNoisePreset, seed: u64) -> Result<DepthImage, PerceptionError> {
    if depth.width != normals.width || depth.height != normals.height {
        return Err(PerceptionError::SizeMismatch(depth.width, depth.height, normals.width, normals.height));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, preset.gaussian_sigma.max(0.0)).expect("finite sigma");
    let mut out = depth.clone();
    let (w, h) = (depth.width, depth.height);
    for (i, d) in out.data.iter_mut().enumerate() {
        if *d <= 0.0 {
            continue;
        }
        // one uniform per valid pixel keeps the stream independent of edges
        let u: f64 = rng.random();
        let (x, y) = (i % w, i / w);
        let mut bled = false;
        if preset.edge_bleed_px > 0 && u < preset.bleed_probability {
            let r = preset.edge_bleed_px;
            let mut near = *d;
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    let dn = depth.data[yy * w + xx];
                    if dn > 0.0 && dn < near {
                        near = dn;
                    }
                }
            }
            if near < *d - preset.edge_threshold {
                *d = near;
                bled = true;
            }
        }
        if !bled && preset.flying_probability > 0.0 {
            let mut far = None;
            let nbrs = [(x > 0).then(|| i - 1), (x + 1 < w).then(|| i + 1), (y > 0).then(|| i - w), (y + 1 < h).then(|| i + w)];
            for j in nbrs.into_iter().flatten() {
                let dn = depth.data[j];
                let gap = (dn - depth.data[i]).abs();
                if dn > 0.0 && gap > preset.edge_threshold && far.is_none_or(|(_, g)| gap > g) {
                    far = Some((dn, gap));
                }
            }
            if let Some((dn, _)) = far {
                if u < preset.flying_probability {
                    let t = 0.2 + 0.6 * (u / preset.flying_probability);
                    *d += (dn - *d) * t;
                }
            }
        }
        let p = preset.hole_probability(normals.incidence[i]);
        if p > 0.0 && rng.random::<f64>() < p {
            *d = 0.0;
            continue;
        }
        if preset.gaussian_sigma > 0.0 {
            *d = (*d + noise.sample(&mut rng)).max(1e-4);
        }
    }
    Ok(out)
}

/// Camera view volume used to decide which tracks a view should have seen.
#[derive(Clone, Copy, Debug)]
pub struct Frustum {
    pub camera: Pose,
    pub intrinsics: CameraIntrinsics,
    pub near: f64,
    pub far: f64,
}

impl Frustum {
    pub fn contains(&self, world: &Vec3) -> bool {
        let p = self.camera.inverse().transform_point(world);
        if p.z < self.near || p.z > self.far {
            return false;
        }
        self.intrinsics.project(&p).is_some_and(|(u, v)| self.intrinsics.in_image(u, v))
    }
}

/// One emulated detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub class_id: u32,
    /// object in camera frame
    pub pose: Pose,
    pub confidence: f64,
    /// `(u_c, v_c)` of the mask bounding box
    pub bbox_center: (f64, f64),
    /// mean valid depth over the mask, meters
    pub z_mean: f64,
    pub iteration: u64,
}

/// Ground-truth labels attached by the emulator for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledEstimate {
    pub estimate: PoseEstimate,
    /// index of the true instance in the scene
    pub instance: usize,
    pub symmetric: bool,
    pub rear_flip: bool,
    pub outlier: bool,
    pub visible_fraction: f64,
}

/// Error model of the emulated pose estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorNoise {
    /// axis-angle std per component, radians
    pub sigma_rotation: f64,
    /// std per axis, meters
    pub sigma_translation: f64,
    pub p_detect: f64,
    pub p_sym: f64,
    pub p_rear: f64,
    /// gross errors: translation offset in `outlier_offset` meters and rotation up to `outlier_angle`
    pub p_outlier: f64,
    pub outlier_offset: [f64; 2],
    pub outlier_angle: f64,
    /// noise scale grows as `1 + occlusion_gain * occluded + hole_gain * holes + depth_error_gain * rms`
    pub occlusion_gain: f64,
    pub hole_gain: f64,
    /// additive outlier probability per unit occluded / hole fraction
    pub outlier_occlusion_gain: f64,
    pub outlier_hole_gain: f64,
    /// per meter of RMS depth error inside the mask; added to the noise scale
    pub depth_error_gain: f64,
    /// per meter of RMS depth error; added to the outlier probability
    pub outlier_depth_gain: f64,
    /// minimum visible-surface fraction for detection
    pub min_visible_fraction: f64,
    /// minimum valid mask pixels
    pub min_mask_pixels: usize,
    pub confidence_base: f64,
    pub confidence_sigma: f64,
}

impl Default for EstimatorNoise {
    fn default() -> Self {
        EstimatorNoise {
            sigma_rotation: 3f64.to_radians(),
            sigma_translation: 0.002,
            p_detect: 0.9,
            p_sym: 0.2,
            p_rear: 0.05,
            p_outlier: 0.08,
            outlier_offset: [0.012, 0.03],
            outlier_angle: 60f64.to_radians(),
            occlusion_gain: 1.0,
            hole_gain: 2.0,
            outlier_occlusion_gain: 0.15,
            outlier_hole_gain: 0.6,
            depth_error_gain: 80.0,
            outlier_depth_gain: 6.0,
            min_visible_fraction: 0.2,
            min_mask_pixels: 8,
            confidence_base: 0.9,
            confidence_sigma: 0.05,
        }
    }
}

impl EstimatorNoise {
    /// Estimates equal to the ground truth.
    pub fn zero() -> Self {
        EstimatorNoise {
            sigma_rotation: 0.0,
            sigma_translation: 0.0,
            p_detect: 1.0,
            p_sym: 0.0,
            p_rear: 0.0,
            p_outlier: 0.0,
            occlusion_gain: 0.0,
            hole_gain: 0.0,
            outlier_occlusion_gain: 0.0,
            outlier_hole_gain: 0.0,
            depth_error_gain: 0.0,
            outlier_depth_gain: 0.0,
            confidence_sigma: 0.0,
            ..Default::default()
        }
    }
}

/// Ground-truth object instance.
#[derive(Clone, Debug)]
pub struct Instance {
    pub model: Arc<ObjectModel>,
    /// object to world
    pub pose: Pose,
}

/// Pixels the instance would cover with nothing in front of it.
fn unoccluded_pixels(inst: &Instance, camera: &Pose, intr: &CameraIntrinsics) -> usize {
    let cam_from_obj = camera.inverse().compose(&inst.pose);
    let b = inst.model.mesh.aabb();
    let mut umin = f64::INFINITY;
    let mut umax = f64::NEG_INFINITY;
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for i in 0..8 {
        let c = Vec3::new(
            if i & 1 == 0 { b.min.x } else { b.max.x },
            if i & 2 == 0 { b.min.y } else { b.max.y },
            if i & 4 == 0 { b.min.z } else { b.max.z },
        );
        let Some((u, v)) = intr.project(&cam_from_obj.transform_point(&c)) else {
            return 0;
        };
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    let x0 = umin.floor().max(0.0) as usize;
    let y0 = vmin.floor().max(0.0) as usize;
    let x1 = (umax.ceil() as isize).min(intr.width as isize - 1);
    let y1 = (vmax.ceil() as isize).min(intr.height as isize - 1);
    if x1 < 0 || y1 < 0 {
        return 0;
    }
    let obj_from_cam = cam_from_obj.inverse();
    let origin = obj_from_cam.translation;
    let mut n = 0;
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            let d = obj_from_cam.rotation.rotate(&pixel_ray(intr, x, y));
            if inst.model.mesh.raycast_within(&origin, &d, 0.0, f64::INFINITY).is_some() {
                n += 1;
            }
        }
    }
    n
}

/// Length of the object's chord along the ray from the camera through its center.
pub fn through_depth(inst: &Instance, camera: &Pose) -> f64 {
    let obj_from_world = inst.pose.inverse();
    let origin = obj_from_world.transform_point(&camera.translation);
    let dir = -origin;
    let ts = inst.model.mesh.ray_crossings(&origin, &dir);
    match (ts.first(), ts.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    }
}

struct MaskStats {
    pixels: usize,
    valid: usize,
    depth_sum: f64,
    /// squared deviation from the true render over valid pixels
    err_sq: f64,
    bbox: [usize; 4],
}

/// Emulated detector + pose estimator. Masks, bounding boxes and `z_mean`
/// come from the true render; `z_mean` averages the corrupted depth.
pub fn emit_pose_estimates(
    instances: &[Instance],
    truth: &Render,
    corrupted: &DepthImage,
    camera: &Pose,
    intr: &CameraIntrinsics,
    noise: &EstimatorNoise,
    iteration: u64,
    seed: u64,
) -> Vec<LabeledEstimate> {
    let mut masks: Vec<MaskStats> =
        (0..instances.len()).map(|_| MaskStats { pixels: 0, valid: 0, depth_sum: 0.0, err_sq: 0.0, bbox: [usize::MAX, usize::MAX, 0, 0] }).collect();
    for (i, &l) in truth.labels.iter().enumerate() {
        if l < 0 || l as usize >= instances.len() {
            continue;
        }
        let m = &mut masks[l as usize];
        let (x, y) = (i % intr.width, i / intr.width);
        m.pixels += 1;
        m.bbox = [m.bbox[0].min(x), m.bbox[1].min(y), m.bbox[2].max(x), m.bbox[3].max(y)];
        let d = corrupted.data[i];
        if d > 0.0 {
            m.valid += 1;
            m.depth_sum += d;
            m.err_sq += (d - truth.depth.data[i]).powi(2);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let cam_inv = camera.inverse();
    let mut out = Vec::new();
    for (idx, (inst, mask)) in instances.iter().zip(&masks).enumerate() {
        if mask.valid < noise.min_mask_pixels.max(1) {
            continue;
        }
        let full = unoccluded_pixels(inst, camera, intr).max(mask.pixels);
        let visible = mask.pixels as f64 / full as f64;
        if visible < noise.min_visible_fraction {
            continue;
        }
        // same number of draws per detectable object keeps streams aligned
        let draws: [f64; 6] = std::array::from_fn(|_| rng.random());
        let rot_noise = Vec3::from_fn(|_, _| std_normal.sample(&mut rng));
        let trans_noise = Vec3::from_fn(|_, _| std_normal.sample(&mut rng));
        let dir: [f64; 3] = UnitSphere.sample(&mut rng);
        let axis: [f64; 3] = UnitSphere.sample(&mut rng);
        let sym = inst.model.symmetry.sample(&mut rng);
        let conf_noise = std_normal.sample(&mut rng);
        if draws[0] >= noise.p_detect {
            continue;
        }
        let occluded = 1.0 - visible;
        let holes = 1.0 - mask.valid as f64 / mask.pixels as f64;
        let depth_rms = (mask.err_sq / mask.valid as f64).sqrt();
        let scale = 1.0 + noise.occlusion_gain * occluded + noise.hole_gain * holes + noise.depth_error_gain * depth_rms;
        let truth_cam = cam_inv.compose(&inst.pose);
        let mut rotation = truth_cam.rotation * Rotation::from_scaled_axis(&(rot_noise * noise.sigma_rotation * scale));
        let mut translation = truth_cam.translation + trans_noise * noise.sigma_translation * scale;
        let symmetric = draws[1] < noise.p_sym;
        if symmetric {
            rotation = rotation * sym;
        }
        let rear_flip = draws[2] < noise.p_rear;
        if rear_flip {
            let ray = truth_cam.translation.normalize();
            translation -= ray * through_depth(inst, camera);
        }
        let p_out = (noise.p_outlier + noise.outlier_occlusion_gain * occluded + noise.outlier_hole_gain * holes
            + noise.outlier_depth_gain * depth_rms)
            .clamp(0.0, 1.0);
        let outlier = !rear_flip && draws[3] < p_out;
        if outlier {
            let [lo, hi] = noise.outlier_offset;
            // keep the offset off the viewing ray so depth consistency does not flag it
            let ray = truth_cam.translation.normalize();
            let mut d = Vec3::from(dir);
            d -= ray * d.dot(&ray);
            let d = if d.norm() > 1e-9 { d.normalize() } else { crate::geometry::any_orthogonal(&ray) };
            translation += d * (lo + (hi - lo) * draws[4]);
            rotation = rotation * Rotation::from_axis_angle(&Vec3::from(axis), noise.outlier_angle * draws[5]);
        }
        let confidence =
            (noise.confidence_base - 0.3 * occluded - 0.3 * holes + noise.confidence_sigma * conf_noise).clamp(0.05, 1.0);
        let b = mask.bbox;
        out.push(LabeledEstimate {
            estimate: PoseEstimate {
                class_id: inst.model.class_id,
                pose: Pose::new(rotation, translation),
                confidence,
                bbox_center: ((b[0] + b[2]) as f64 * 0.5, (b[1] + b[3]) as f64 * 0.5),
                z_mean: mask.depth_sum / mask.valid as f64,
                iteration,
            },
            instance: idx,
            symmetric,
            rear_flip,
            outlier,
            visible_fraction: visible,
        });
    }
    out
}

/// `z_mean * K^-1 [u_c, v_c, 1]^T`.
pub fn project_bb_center(intr: &CameraIntrinsics, bbox_center: (f64, f64), z_mean: f64) -> Result<Vec3, PerceptionError> {
    if !(z_mean > 0.0) {
        return Err(PerceptionError::InvalidDepth(z_mean));
    }
    Ok(intr.backproject(bbox_center.0, bbox_center.1, z_mean))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionRule {
    /// reject when the estimated centroid lies in front of the observed surface
    CloserThanSurface,
    /// reject when the estimated centroid lies behind the observed surface
    FartherThanSurface,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RejectionConfig {
    pub enabled: bool,
    /// meters
    pub margin: f64,
    pub rule: RejectionRule,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        RejectionConfig { enabled: true, margin: 0.005, rule: RejectionRule::CloserThanSurface }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Reject,
}

pub fn rejection_filter(estimate: &PoseEstimate, intr: &CameraIntrinsics, config: &RejectionConfig) -> Verdict {
    if !config.enabled {
        return Verdict::Keep;
    }
    let Ok(t_bb) = project_bb_center(intr, estimate.bbox_center, estimate.z_mean) else {
        return Verdict::Reject;
    };
    let (bb, obj) = (t_bb.norm(), estimate.pose.translation.norm());
    let reject = match config.rule {
        RejectionRule::CloserThanSurface => obj < bb - config.margin,
        RejectionRule::FartherThanSurface => obj > bb + config.margin,
    };
    if reject {
        Verdict::Reject
    } else {
        Verdict::Keep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_between;
    use crate::mesh::shapes;
    use crate::object::ObjectSpec;

    fn looking_down_z() -> Pose {
        Pose::identity()
    }

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn plane_renders_constant_depth() {
        let plane = shapes::rectangle(10.0, 10.0);
        let scene = SceneGeometry::new(&[(&plane, Pose::from_translation(Vec3::new(0.0, 0.0, 1.0)))], &[]);
        let cam = CameraIntrinsics::from_fov(32, 24, 1.0);
        let d = render_depth(&scene, &looking_down_z(), &cam);
        assert!(d.data.iter().all(|z| (z - 1.0).abs() < 1e-12));
        let empty = render_depth(&SceneGeometry::default(), &looking_down_z(), &cam);
        assert!(empty.data.iter().all(|z| *z == 0.0));
    }

    #[test]
    fn cube_center_pixel_depth() {
        let cube = shapes::cuboid(Vec3::repeat(1.0));
        let scene = SceneGeometry::new(&[], &[(&cube, Pose::from_translation(Vec3::new(0.0, 0.0, 1.0)))]);
        let cam = CameraIntrinsics::from_fov(33, 33, 0.5);
        let r = render(&scene, &Pose::identity(), &cam);
        assert!((r.depth.get(16, 16) - 0.5).abs() < 1e-12);
        assert_eq!(r.labels[16 * 33 + 16], 0);
        assert!(r.normals.incidence[16 * 33 + 16].abs() < 1e-9);
    }

    #[test]
    fn project_bb_center_cases() {
        let k = intr();
        assert!((project_bb_center(&k, (320.0, 240.0), 1.0).unwrap() - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!((project_bb_center(&k, (920.0, 240.0), 2.0).unwrap() - Vec3::new(2.0, 0.0, 2.0)).norm() < 1e-12);
        assert!(matches!(project_bb_center(&k, (1.0, 1.0), 0.0), Err(PerceptionError::InvalidDepth(_))));
        let a = project_bb_center(&k, (17.0, 400.0), 0.7).unwrap();
        let b = project_bb_center(&k, (17.0, 400.0), 1.4).unwrap();
        assert!((b - 2.0 * a).norm() < 1e-12);
    }

    #[test]
    fn project_round_trip() {
        let k = intr();
        for p in [Vec3::new(0.1, -0.2, 0.9), Vec3::new(-1.0, 0.3, 4.0)] {
            let (u, v) = k.project(&p).unwrap();
            assert!((project_bb_center(&k, (u, v), p.z).unwrap() - p).norm() < 1e-9);
        }
    }

    fn estimate_at(t_obj_norm: f64, z_mean: f64) -> PoseEstimate {
        PoseEstimate {
            class_id: 0,
            pose: Pose::from_translation(Vec3::new(0.0, 0.0, t_obj_norm)),
            confidence: 1.0,
            bbox_center: (320.0, 240.0),
            z_mean,
            iteration: 0,
        }
    }

    #[test]
    fn rejection_rule_cases() {
        let k = intr();
        let c = RejectionConfig::default();
        assert_eq!(rejection_filter(&estimate_at(0.55, 0.50), &k, &c), Verdict::Keep);
        assert_eq!(rejection_filter(&estimate_at(0.42, 0.50), &k, &c), Verdict::Reject);
        assert_eq!(rejection_filter(&estimate_at(0.496, 0.50), &k, &c), Verdict::Keep);
        let printed = RejectionConfig { rule: RejectionRule::FartherThanSurface, ..c };
        assert_eq!(rejection_filter(&estimate_at(0.55, 0.50), &k, &printed), Verdict::Reject);
    }

    #[test]
    fn identity_preset_is_noop() {
        let d = DepthImage { width: 3, height: 1, data: vec![0.0, 0.5, 1.2] };
        let n = NormalImage::uniform(3, 1, 1.4);
        assert_eq!(corrupt_depth(&d, &n, &DepthNoisePreset::identity(), 9).unwrap(), d);
    }

    #[test]
    fn hole_table_interpolates() {
        let p = DepthNoisePreset::raw();
        assert!((p.hole_probability(80f64.to_radians()) - 0.18).abs() < 1e-12);
        assert!((p.hole_probability(85f64.to_radians()) - 0.19).abs() < 1e-12);
        assert!((p.hole_probability(2.0) - 0.20).abs() < 1e-12);
        assert_eq!(DepthNoisePreset::enhanced().hole_probability(0.0), 0.0);
    }

    #[test]
    fn hole_rates_match_presets() {
        let (w, h) = (100, 100);
        let d = DepthImage { width: w, height: h, data: vec![1.0; w * h] };
        for seed in 0..5 {
            let frontal = corrupt_depth(&d, &NormalImage::uniform(w, h, 0.0), &DepthNoisePreset::enhanced(), seed).unwrap();
            assert!(frontal.valid_count() as f64 >= 0.995 * (w * h) as f64);
            let grazing = corrupt_depth(&d, &NormalImage::uniform(w, h, 80f64.to_radians()), &DepthNoisePreset::raw(), seed).unwrap();
            assert!((w * h - grazing.valid_count()) as f64 >= 0.15 * (w * h) as f64);
        }
        let a = corrupt_depth(&d, &NormalImage::uniform(w, h, 0.7), &DepthNoisePreset::raw(), 3).unwrap();
        let b = corrupt_depth(&d, &NormalImage::uniform(w, h, 0.7), &DepthNoisePreset::raw(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pgm_round_trip_millimeters() {
        let d = DepthImage { width: 2, height: 2, data: vec![0.0, 0.5, 1.2345, 70.0] };
        let mut buf = Vec::new();
        d.write_pgm(&mut buf).unwrap();
        let back = DepthImage::read_pgm(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.data, vec![0.0, 0.5, 1.235, 65.535]);
    }

    fn single_object_scene(flip: f64) -> (Vec<Instance>, Render, Pose, CameraIntrinsics) {
        let model = Arc::new(ObjectSpec::default().build(0).unwrap());
        let pose = Pose::new(rotation_between(&Vec3::z(), &Vec3::x()), Vec3::new(0.01, 0.0, 0.0));
        let instances = vec![Instance { model: model.clone(), pose }];
        let camera = Pose::new(Rotation::from_axis_angle(&Vec3::x(), std::f64::consts::PI + flip), Vec3::new(0.0, 0.0, 0.4));
        let intr = CameraIntrinsics::default();
        let scene = SceneGeometry::new(&[], &[(&model.mesh, pose)]);
        let r = render(&scene, &camera, &intr);
        (instances, r, camera, intr)
    }

    #[test]
    fn zero_noise_estimates_equal_truth() {
        let (inst, r, camera, intr) = single_object_scene(0.1);
        let est = emit_pose_estimates(&inst, &r, &r.depth, &camera, &intr, &EstimatorNoise::zero(), 4, 1);
        assert_eq!(est.len(), 1);
        let world = camera.compose(&est[0].estimate.pose);
        let (da, dt) = world.distance(&inst[0].pose);
        assert!(da < 1e-9 && dt < 1e-9);
        assert_eq!(est[0].estimate.iteration, 4);
        assert!(est[0].visible_fraction > 0.99);
        assert_eq!(rejection_filter(&est[0].estimate, &intr, &RejectionConfig::default()), Verdict::Keep);
    }

    #[test]
    fn rear_flips_land_in_front_of_surface() {
        let (inst, r, camera, intr) = single_object_scene(0.2);
        let noise = EstimatorNoise { p_rear: 1.0, ..EstimatorNoise::zero() };
        let est = emit_pose_estimates(&inst, &r, &r.depth, &camera, &intr, &noise, 0, 2);
        let e = &est[0].estimate;
        let t_bb = project_bb_center(&intr, e.bbox_center, e.z_mean).unwrap();
        assert!(est[0].rear_flip);
        assert!(e.pose.translation.norm() < t_bb.norm());
        assert_eq!(rejection_filter(e, &intr, &RejectionConfig::default()), Verdict::Reject);
    }
}
