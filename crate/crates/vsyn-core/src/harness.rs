//! Seeded synthetic scenes and the two quantitative studies built on them.
//!
//! The generators produce a camera ring gazing at a common target, pose
//! graphs with tangent-space edge noise and injected outliers, and paired
//! depth maps with modality-specific corruption: quadratically growing
//! stereo noise versus an affine-distorted but low-noise monocular signal.
//! Everything is a pure function of (preset, noise, seed), so reruns are
//! bit-identical and experiment reports can be pinned byte-for-byte.
//!
//! [`run_fig4_experiment`] measures rotation recovery (spanning-tree init,
//! cycle filtering plus robust averaging, learned refinement) across seeds;
//! [`run_fig6_experiment`] measures depth complementarity (stereo, aligned
//! monocular, fused). Both emit rows suitable for JSON and CSV export.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::aggregation::{AggregationError, PinholeCamera};
use crate::averaging::{
    gauge_align, pose_error_stats, robust_average, AveragingConfig, AveragingError, ErrorStats,
};
use crate::fusion::{
    align_scale, depth_error_stats, fuse, ConfidenceMap, DepthMap, FusionConfig, FusionError,
    PixelClass,
};
use crate::mpnn::{refine, MpnnError, TrainConfig};
use crate::so3::Rotation;
use crate::viewgraph::{
    cycle_consistency_filter, init_absolute_rotations, min_spanning_tree, GraphError, ViewGraph,
};

/// Depths are clamped here so that extreme noise draws cannot produce a
/// non-positive sample; at realistic settings the clamp never fires.
const MIN_DEPTH: f64 = 1e-6;

/// Monocular estimators are confident almost everywhere; the generator
/// hands out this flat confidence on every covered pixel.
const MONO_CONFIDENCE: f64 = 0.9;

/// The range-factor grid swept by [`run_sigma_sweep`].
pub const SIGMA_SWEEP: [f64; 6] = [0.25, 0.5, 0.66, 1.0, 1.5, 2.0];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("bad preset: {0}")]
    BadPreset(String),
    #[error("bad noise model: {0}")]
    BadNoise(String),
    #[error("bad setting: {0}")]
    BadSetting(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Averaging(#[from] AveragingError),
    #[error(transparent)]
    Mpnn(#[from] MpnnError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

/// A fronto-parallel square plane at a fixed camera-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub depth: f64,
    /// Half-width of the square in scene units.
    pub extent: f64,
}

/// Deterministic scene description: a ring of cameras around a look-at
/// target and a stack of depth planes, plus shared intrinsics.
#[derive(Debug, Clone)]
pub struct ScenePreset {
    pub camera_count: u32,
    pub ring_radius: f64,
    pub target: [f64; 3],
    /// Planes ordered nearest first; the first plane containing a pixel's
    /// ray wins.
    pub planes: Vec<Plane>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for ScenePreset {
    fn default() -> ScenePreset {
        ScenePreset {
            camera_count: 30,
            ring_radius: 4.0,
            target: [0.0, 0.0, 0.0],
            planes: vec![
                Plane {
                    depth: 2.0,
                    extent: 0.9,
                },
                Plane {
                    depth: 20.0,
                    extent: 30.0,
                },
            ],
            fx: 160.0,
            fy: 160.0,
            cx: 96.0,
            cy: 72.0,
            width: 192,
            height: 144,
            seed: 42,
        }
    }
}

impl ScenePreset {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::BadPreset(msg.to_string()));
        if self.camera_count < 2 {
            return bad("camera_count must be at least 2");
        }
        if !(self.ring_radius.is_finite() && self.ring_radius > 0.0) {
            return bad("ring_radius must be positive");
        }
        if self.target.iter().any(|t| !t.is_finite()) {
            return bad("target must be finite");
        }
        if self.planes.is_empty() {
            return bad("at least one plane is required");
        }
        let mut last = 0.0;
        for p in &self.planes {
            if !(p.depth.is_finite() && p.depth > 0.0) {
                return bad("plane depths must be positive");
            }
            if p.depth <= last {
                return bad("plane depths must be strictly increasing");
            }
            if !(p.extent.is_finite() && p.extent > 0.0) {
                return bad("plane extents must be positive");
            }
            last = p.depth;
        }
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return bad("principal point must be finite");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be positive");
        }
        Ok(())
    }
}

/// Noise characteristics for graph edges and the two depth modalities.
#[derive(Debug, Clone, Copy)]
pub struct NoiseModel {
    /// Standard deviation, in radians, of the tangent-space perturbation
    /// applied to clean relative rotations.
    pub edge_noise_sigma: f64,
    /// Fraction of edges replaced by uniform random rotations.
    pub outlier_fraction: f64,
    /// Stereo noise follows `std = coeff * depth^2`, the low-disparity
    /// error model.
    pub mvs_noise_coeff: f64,
    /// Stereo pixels deeper than this produce no estimate at all.
    pub mvs_max_depth: Option<f64>,
    /// Monocular depth is `a * truth + b` before its relative noise.
    pub mono_affine: (f64, f64),
    /// Relative (multiplicative) monocular noise level.
    pub mono_noise_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> NoiseModel {
        NoiseModel {
            edge_noise_sigma: 5.0_f64.to_radians(),
            outlier_fraction: 0.1,
            mvs_noise_coeff: 0.002,
            mvs_max_depth: None,
            mono_affine: (1.0 / 3.7, -0.4 / 3.7),
            mono_noise_sigma: 0.01,
        }
    }
}

impl NoiseModel {
    /// An exact world: zero sigmas, no outliers, identity mono mapping.
    pub fn noiseless() -> NoiseModel {
        NoiseModel {
            edge_noise_sigma: 0.0,
            outlier_fraction: 0.0,
            mvs_noise_coeff: 0.0,
            mvs_max_depth: None,
            mono_affine: (1.0, 0.0),
            mono_noise_sigma: 0.0,
        }
    }

    /// Stereo noise standard deviation at a given depth.
    pub fn mvs_std(&self, depth: f64) -> f64 {
        self.mvs_noise_coeff * depth * depth
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::BadNoise(msg.to_string()));
        if !(self.edge_noise_sigma.is_finite() && self.edge_noise_sigma >= 0.0) {
            return bad("edge_noise_sigma must be nonnegative");
        }
        if !(self.outlier_fraction.is_finite() && (0.0..=1.0).contains(&self.outlier_fraction)) {
            return bad("outlier_fraction must lie in [0, 1]");
        }
        if !(self.mvs_noise_coeff.is_finite() && self.mvs_noise_coeff >= 0.0) {
            return bad("mvs_noise_coeff must be nonnegative");
        }
        if let Some(d) = self.mvs_max_depth {
            if !(d.is_finite() && d > 0.0) {
                return bad("mvs_max_depth must be positive when set");
            }
        }
        let (a, b) = self.mono_affine;
        if !(a.is_finite() && b.is_finite() && a > 0.0) {
            return bad("mono_affine needs a positive finite scale");
        }
        if !(self.mono_noise_sigma.is_finite() && self.mono_noise_sigma >= 0.0) {
            return bad("mono_noise_sigma must be nonnegative");
        }
        Ok(())
    }
}

/// Cameras on a ring of the given radius around the target, evenly spaced
/// starting at angle zero, all gazing at the target with a +z up vector.
pub fn generate_cameras(preset: &ScenePreset) -> Result<Vec<PinholeCamera>, HarnessError> {
    preset.validate()?;
    let n = preset.camera_count;
    let mut cams = Vec::with_capacity(n as usize);
    for k in 0..n {
        let theta = 2.0 * std::f64::consts::PI * (k as f64) / (n as f64);
        let center = [
            preset.target[0] + preset.ring_radius * theta.cos(),
            preset.target[1] + preset.ring_radius * theta.sin(),
            preset.target[2],
        ];
        let cam = PinholeCamera::look_at(
            preset.fx,
            preset.fy,
            preset.cx,
            preset.cy,
            preset.width,
            preset.height,
            center,
            preset.target,
            [0.0, 0.0, 1.0],
        )?;
        cams.push(cam);
    }
    Ok(cams)
}

fn random_unit_axis(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = f64::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Builds a measurement graph over the cameras: the chain 0-1-...-n-1 is
/// always present to guarantee connectivity, every other pair joins with
/// probability `density`, and exactly `round(outlier_fraction * edges)`
/// seeded-chosen edges are replaced by uniform random rotations.
///
/// Returns the noisy graph (no absolutes), a ground-truth graph over the
/// same edges with exact relatives and camera absolutes, and a label per
/// edge marking the injected outliers, aligned with `edges()` order.
pub fn generate_pose_graph(
    cameras: &[PinholeCamera],
    noise: &NoiseModel,
    density: f64,
    seed: u64,
) -> Result<(ViewGraph, ViewGraph, Vec<bool>), HarnessError> {
    noise.validate()?;
    if cameras.len() < 2 {
        return Err(HarnessError::BadSetting(
            "need at least two cameras".to_string(),
        ));
    }
    if !(density.is_finite() && density > 0.0 && density <= 1.0) {
        return Err(HarnessError::BadSetting(
            "density must lie in (0, 1]".to_string(),
        ));
    }
    let n = cameras.len() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pairs: Vec<(u32, u32)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    for i in 0..n {
        for j in (i + 2)..n {
            if rng.gen_range(0.0..1.0) < density {
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();

    let m = pairs.len();
    let outlier_count = ((noise.outlier_fraction * m as f64).round() as usize).min(m);
    let mut labels = vec![false; m];
    for idx in rand::seq::index::sample(&mut rng, m, outlier_count) {
        labels[idx] = true;
    }

    let mut noisy = ViewGraph::new();
    let mut truth = ViewGraph::new();
    for (id, cam) in cameras.iter().enumerate() {
        noisy.add_vertex(id as u32, None)?;
        truth.add_vertex(id as u32, Some(cam.rotation))?;
    }
    for (&(i, j), &is_outlier) in pairs.iter().zip(&labels) {
        let clean = cameras[j as usize]
            .rotation
            .compose(&cameras[i as usize].rotation.inverse());
        let rel = if is_outlier {
            Rotation::sample_uniform(&mut rng)
        } else {
            let z: f64 = StandardNormal.sample(&mut rng);
            let angle = noise.edge_noise_sigma * z;
            let axis = random_unit_axis(&mut rng);
            if angle == 0.0 {
                // keep the zero-noise path bit-exact
                clean
            } else {
                Rotation::from_axis_angle(axis, angle)
                    .expect("axis is unit length")
                    .compose(&clean)
            }
        };
        noisy.add_edge(i, j, rel, 1.0)?;
        truth.add_edge(i, j, clean, 1.0)?;
    }
    Ok((noisy, truth, labels))
}

/// One camera's worth of synthetic depth data.
#[derive(Debug, Clone)]
pub struct DepthPair {
    pub truth: DepthMap,
    pub mvs: DepthMap,
    pub mvs_conf: ConfidenceMap,
    pub mono: DepthMap,
    pub mono_conf: ConfidenceMap,
}

/// Renders ground-truth depth by intersecting each pixel ray with the
/// preset's camera-space planes (nearest containing plane wins), then
/// derives the stereo estimate `truth + N(0, coeff * depth^2)` with
/// confidence `exp(-std)` and the monocular estimate
/// `(a * truth + b) * (1 + relative noise)` with flat high confidence.
/// Pixels hitting no plane are invalid everywhere; stereo pixels beyond
/// `mvs_max_depth` are invalid with zero confidence.
pub fn generate_depth_pair(
    camera: &PinholeCamera,
    preset: &ScenePreset,
    noise: &NoiseModel,
) -> Result<DepthPair, HarnessError> {
    preset.validate()?;
    noise.validate()?;
    let (w, h) = (camera.width, camera.height);
    let mut rng = ChaCha8Rng::seed_from_u64(preset.seed);
    let mut truth = DepthMap::new(w, h);
    let mut mvs = DepthMap::new(w, h);
    let mut mvs_conf = ConfidenceMap::uniform(w, h, 0.0)?;
    let mut mono = DepthMap::new(w, h);
    let mut mono_conf = ConfidenceMap::uniform(w, h, 0.0)?;
    let (a, b) = noise.mono_affine;
    for y in 0..h {
        for x in 0..w {
            // draw for every pixel so the noise field does not depend on
            // the plane layout
            let zv: f64 = StandardNormal.sample(&mut rng);
            let zm: f64 = StandardNormal.sample(&mut rng);
            let dir_x = (x as f64 - camera.cx) / camera.fx;
            let dir_y = (y as f64 - camera.cy) / camera.fy;
            let mut hit = None;
            for p in &preset.planes {
                if (dir_x * p.depth).abs() <= p.extent && (dir_y * p.depth).abs() <= p.extent {
                    hit = Some(p.depth);
                    break;
                }
            }
            let Some(t) = hit else { continue };
            truth.set(x, y, t);
            if noise.mvs_max_depth.map_or(true, |cutoff| t <= cutoff) {
                let std = noise.mvs_std(t);
                mvs.set(x, y, (t + std * zv).max(MIN_DEPTH));
                mvs_conf.set(x, y, (-std).exp());
            }
            let base = a * t + b;
            mono.set(
                x,
                y,
                (base * (1.0 + noise.mono_noise_sigma * zm)).max(MIN_DEPTH),
            );
            mono_conf.set(x, y, MONO_CONFIDENCE);
        }
    }
    Ok(DepthPair {
        truth,
        mvs,
        mvs_conf,
        mono,
        mono_conf,
    })
}

// ---------------------------------------------------------------------------
// configuration file

/// Everything the experiments need, readable from a flat key-value file.
#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub preset: ScenePreset,
    pub noise: NoiseModel,
    /// Probability for each non-chain camera pair to get an edge.
    pub density: f64,
    /// Number of seeds to run; trial k uses `preset.seed + k`.
    pub trials: u32,
    /// Cycle-filter flagging threshold, in degrees.
    pub threshold_deg: f64,
    pub averaging: AveragingConfig,
    pub training: TrainConfig,
    pub fusion: FusionConfig,
    /// Stereo confidence floor for scale alignment.
    pub conf_floor: f64,
}

impl Default for HarnessConfig {
    // A dense graph keeps each edge's median cycle score robust to the
    // triangles that happen to contain a genuine outlier, and the
    // threshold sits well above the error level honest triangles reach
    // by stacking three edges of tangent noise.
    fn default() -> HarnessConfig {
        HarnessConfig {
            preset: ScenePreset::default(),
            noise: NoiseModel::default(),
            density: 0.8,
            trials: 20,
            threshold_deg: 20.0,
            averaging: AveragingConfig::default(),
            training: TrainConfig::default(),
            fusion: FusionConfig::default(),
            conf_floor: 0.0,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.preset.validate()?;
        self.noise.validate()?;
        let bad = |msg: &str| Err(HarnessError::BadSetting(msg.to_string()));
        if !(self.density.is_finite() && self.density > 0.0 && self.density <= 1.0) {
            return bad("density must lie in (0, 1]");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if !(self.threshold_deg.is_finite() && self.threshold_deg > 0.0) {
            return bad("threshold_deg must be positive");
        }
        if !(self.averaging.beta.is_finite() && self.averaging.beta >= 0.0) {
            return bad("beta must be nonnegative");
        }
        if self.averaging.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if self.training.hidden == 0 || self.training.rounds == 0 {
            return bad("hidden and rounds must be at least 1");
        }
        if self.training.iters == 0 {
            return bad("iters must be at least 1");
        }
        if !(self.training.learning_rate.is_finite() && self.training.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.fusion.validate().is_err() {
            return bad("fusion thresholds out of range");
        }
        if !(self.conf_floor.is_finite() && (0.0..=1.0).contains(&self.conf_floor)) {
            return bad("conf_floor must lie in [0, 1]");
        }
        Ok(())
    }
}

fn cfg_f64(value: &str, line: usize) -> Result<f64, HarnessError> {
    value.parse().map_err(|_| HarnessError::Config {
        line,
        msg: format!("not a number: `{value}`"),
    })
}

fn cfg_u32(value: &str, line: usize) -> Result<u32, HarnessError> {
    value.parse().map_err(|_| HarnessError::Config {
        line,
        msg: format!("not an unsigned integer: `{value}`"),
    })
}

fn cfg_u64(value: &str, line: usize) -> Result<u64, HarnessError> {
    value.parse().map_err(|_| HarnessError::Config {
        line,
        msg: format!("not an unsigned integer: `{value}`"),
    })
}

fn cfg_usize(value: &str, line: usize) -> Result<usize, HarnessError> {
    value.parse().map_err(|_| HarnessError::Config {
        line,
        msg: format!("not an unsigned integer: `{value}`"),
    })
}

fn cfg_planes(value: &str, line: usize) -> Result<Vec<Plane>, HarnessError> {
    let mut planes = Vec::new();
    for part in value.split(',') {
        let Some((d, e)) = part.split_once(':') else {
            return Err(HarnessError::Config {
                line,
                msg: format!("expected `depth:extent`, got `{part}`"),
            });
        };
        planes.push(Plane {
            depth: cfg_f64(d.trim(), line)?,
            extent: cfg_f64(e.trim(), line)?,
        });
    }
    Ok(planes)
}

/// Parses a flat `key = value` configuration. Blank lines and lines
/// starting with `#` are skipped; unknown keys are rejected; keys left out
/// keep their defaults. The parsed configuration is validated before it is
/// returned.
pub fn parse_config(text: &str) -> Result<HarnessConfig, HarnessError> {
    let mut cfg = HarnessConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(HarnessError::Config {
                line,
                msg: "expected `key = value`".to_string(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "camera_count" => cfg.preset.camera_count = cfg_u32(value, line)?,
            "ring_radius" => cfg.preset.ring_radius = cfg_f64(value, line)?,
            "target_x" => cfg.preset.target[0] = cfg_f64(value, line)?,
            "target_y" => cfg.preset.target[1] = cfg_f64(value, line)?,
            "target_z" => cfg.preset.target[2] = cfg_f64(value, line)?,
            "planes" => cfg.preset.planes = cfg_planes(value, line)?,
            "fx" => cfg.preset.fx = cfg_f64(value, line)?,
            "fy" => cfg.preset.fy = cfg_f64(value, line)?,
            "cx" => cfg.preset.cx = cfg_f64(value, line)?,
            "cy" => cfg.preset.cy = cfg_f64(value, line)?,
            "width" => cfg.preset.width = cfg_u32(value, line)?,
            "height" => cfg.preset.height = cfg_u32(value, line)?,
            "seed" => cfg.preset.seed = cfg_u64(value, line)?,
            "edge_noise_sigma" => cfg.noise.edge_noise_sigma = cfg_f64(value, line)?,
            "outlier_fraction" => cfg.noise.outlier_fraction = cfg_f64(value, line)?,
            "mvs_noise_coeff" => cfg.noise.mvs_noise_coeff = cfg_f64(value, line)?,
            "mvs_max_depth" => {
                cfg.noise.mvs_max_depth = if value == "none" {
                    None
                } else {
                    Some(cfg_f64(value, line)?)
                }
            }
            "mono_scale" => cfg.noise.mono_affine.0 = cfg_f64(value, line)?,
            "mono_shift" => cfg.noise.mono_affine.1 = cfg_f64(value, line)?,
            "mono_noise_sigma" => cfg.noise.mono_noise_sigma = cfg_f64(value, line)?,
            "density" => cfg.density = cfg_f64(value, line)?,
            "trials" => cfg.trials = cfg_u32(value, line)?,
            "threshold_deg" => cfg.threshold_deg = cfg_f64(value, line)?,
            "beta" => cfg.averaging.beta = cfg_f64(value, line)?,
            "max_iters" => cfg.averaging.max_iters = cfg_usize(value, line)?,
            "hidden" => cfg.training.hidden = cfg_u32(value, line)?,
            "rounds" => cfg.training.rounds = cfg_u32(value, line)?,
            "iters" => cfg.training.iters = cfg_usize(value, line)?,
            "learning_rate" => cfg.training.learning_rate = cfg_f64(value, line)?,
            "tau" => cfg.fusion.tau = cfg_f64(value, line)?,
            "sigma" => cfg.fusion.sigma = cfg_f64(value, line)?,
            "reg_lambda" => cfg.fusion.reg_lambda = cfg_f64(value, line)?,
            "conf_floor" => cfg.conf_floor = cfg_f64(value, line)?,
            other => {
                return Err(HarnessError::Config {
                    line,
                    msg: format!("unknown key `{other}`"),
                });
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes every key in a fixed order; `parse_config` of the result gives
/// back the same configuration.
pub fn serialize_config(cfg: &HarnessConfig) -> String {
    let mut s = String::new();
    let planes = cfg
        .preset
        .planes
        .iter()
        .map(|p| format!("{}:{}", p.depth, p.extent))
        .collect::<Vec<_>>()
        .join(",");
    let max_depth = match cfg.noise.mvs_max_depth {
        None => "none".to_string(),
        Some(d) => format!("{d}"),
    };
    let _ = writeln!(s, "camera_count = {}", cfg.preset.camera_count);
    let _ = writeln!(s, "ring_radius = {}", cfg.preset.ring_radius);
    let _ = writeln!(s, "target_x = {}", cfg.preset.target[0]);
    let _ = writeln!(s, "target_y = {}", cfg.preset.target[1]);
    let _ = writeln!(s, "target_z = {}", cfg.preset.target[2]);
    let _ = writeln!(s, "planes = {planes}");
    let _ = writeln!(s, "fx = {}", cfg.preset.fx);
    let _ = writeln!(s, "fy = {}", cfg.preset.fy);
    let _ = writeln!(s, "cx = {}", cfg.preset.cx);
    let _ = writeln!(s, "cy = {}", cfg.preset.cy);
    let _ = writeln!(s, "width = {}", cfg.preset.width);
    let _ = writeln!(s, "height = {}", cfg.preset.height);
    let _ = writeln!(s, "seed = {}", cfg.preset.seed);
    let _ = writeln!(s, "edge_noise_sigma = {}", cfg.noise.edge_noise_sigma);
    let _ = writeln!(s, "outlier_fraction = {}", cfg.noise.outlier_fraction);
    let _ = writeln!(s, "mvs_noise_coeff = {}", cfg.noise.mvs_noise_coeff);
    let _ = writeln!(s, "mvs_max_depth = {max_depth}");
    let _ = writeln!(s, "mono_scale = {}", cfg.noise.mono_affine.0);
    let _ = writeln!(s, "mono_shift = {}", cfg.noise.mono_affine.1);
    let _ = writeln!(s, "mono_noise_sigma = {}", cfg.noise.mono_noise_sigma);
    let _ = writeln!(s, "density = {}", cfg.density);
    let _ = writeln!(s, "trials = {}", cfg.trials);
    let _ = writeln!(s, "threshold_deg = {}", cfg.threshold_deg);
    let _ = writeln!(s, "beta = {}", cfg.averaging.beta);
    let _ = writeln!(s, "max_iters = {}", cfg.averaging.max_iters);
    let _ = writeln!(s, "hidden = {}", cfg.training.hidden);
    let _ = writeln!(s, "rounds = {}", cfg.training.rounds);
    let _ = writeln!(s, "iters = {}", cfg.training.iters);
    let _ = writeln!(s, "learning_rate = {}", cfg.training.learning_rate);
    let _ = writeln!(s, "tau = {}", cfg.fusion.tau);
    let _ = writeln!(s, "sigma = {}", cfg.fusion.sigma);
    let _ = writeln!(s, "reg_lambda = {}", cfg.fusion.reg_lambda);
    let _ = writeln!(s, "conf_floor = {}", cfg.conf_floor);
    s
}

// ---------------------------------------------------------------------------
// experiments

/// Angular error summary converted to degrees for reporting.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PoseStatsDeg {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub rms_deg: f64,
    pub max_deg: f64,
}

impl PoseStatsDeg {
    pub fn from_radians(stats: &ErrorStats) -> PoseStatsDeg {
        PoseStatsDeg {
            mean_deg: stats.mean.to_degrees(),
            median_deg: stats.median.to_degrees(),
            rms_deg: stats.rms.to_degrees(),
            max_deg: stats.max.to_degrees(),
        }
    }
}

/// One seed of the rotation-recovery study.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Fig4Row {
    pub seed: u64,
    pub edges: usize,
    pub injected_outliers: usize,
    pub flagged: usize,
    pub recall: f64,
    pub precision: f64,
    pub init: PoseStatsDeg,
    pub averaged: PoseStatsDeg,
    pub refined: PoseStatsDeg,
    pub averaging_converged: bool,
    /// Training loss of the refiner before the first update.
    pub lmra_pretrain: f64,
    /// Training loss after the final update.
    pub lmra_trained: f64,
    pub refine_applied: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Fig4Report {
    pub trials: u32,
    pub camera_count: u32,
    pub edge_noise_sigma: f64,
    pub outlier_fraction: f64,
    pub density: f64,
    pub threshold_deg: f64,
    pub rows: Vec<Fig4Row>,
    pub mean_init_median_deg: f64,
    pub mean_averaged_median_deg: f64,
    pub mean_refined_median_deg: f64,
    /// Largest per-seed ratio of averaged to init median error.
    pub worst_averaged_ratio: f64,
    pub min_recall: f64,
    pub min_precision: f64,
}

/// Runs `trials` seeds of graph generation, spanning-tree initialization,
/// cycle filtering with robust averaging, and learned refinement,
/// reporting gauge-aligned angular errors per stage.
pub fn run_fig4_experiment(cfg: &HarnessConfig) -> Result<Fig4Report, HarnessError> {
    cfg.validate()?;
    let cameras = generate_cameras(&cfg.preset)?;
    let threshold = cfg.threshold_deg.to_radians();
    let mut rows: Vec<Fig4Row> = Vec::with_capacity(cfg.trials as usize);
    for k in 0..cfg.trials {
        let seed = cfg.preset.seed + k as u64;
        let (noisy, truth, labels) = generate_pose_graph(&cameras, &cfg.noise, cfg.density, seed)?;

        let tree = min_spanning_tree(&noisy)?;
        let init_g = init_absolute_rotations(&noisy, &tree)?;
        let (init_aligned, _) = gauge_align(&init_g, &truth)?;
        let init_stats = pose_error_stats(&init_aligned, &truth)?;

        let filtered = cycle_consistency_filter(&init_g, threshold);
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (e, lab) in filtered.edges().iter().zip(&labels) {
            if e.outlier {
                if *lab {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let injected = labels.iter().filter(|l| **l).count();
        let flagged = tp + fp;
        let recall = if injected == 0 {
            1.0
        } else {
            tp as f64 / injected as f64
        };
        let precision = if flagged == 0 {
            1.0
        } else {
            tp as f64 / flagged as f64
        };

        let averaged = robust_average(&filtered, &cfg.averaging)?;
        let (avg_aligned, _) = gauge_align(&averaged.graph, &truth)?;
        let avg_stats = pose_error_stats(&avg_aligned, &truth)?;

        // The refiner and the classical solver both start from the filtered
        // spanning-tree initialization, so the report compares them as two
        // independent methods rather than chaining one after the other.
        let refined = refine(&filtered, &cfg.training, seed)?;
        let (ref_aligned, _) = gauge_align(&refined.graph, &truth)?;
        let ref_stats = pose_error_stats(&ref_aligned, &truth)?;

        rows.push(Fig4Row {
            seed,
            edges: labels.len(),
            injected_outliers: injected,
            flagged,
            recall,
            precision,
            init: PoseStatsDeg::from_radians(&init_stats),
            averaged: PoseStatsDeg::from_radians(&avg_stats),
            refined: PoseStatsDeg::from_radians(&ref_stats),
            averaging_converged: averaged.converged,
            lmra_pretrain: refined.trace.first().copied().unwrap_or(0.0),
            lmra_trained: refined.trace.last().copied().unwrap_or(0.0),
            refine_applied: refined.applied,
        });
    }

    let n = rows.len() as f64;
    let mean_init = rows.iter().map(|r| r.init.median_deg).sum::<f64>() / n;
    let mean_avg = rows.iter().map(|r| r.averaged.median_deg).sum::<f64>() / n;
    let mean_ref = rows.iter().map(|r| r.refined.median_deg).sum::<f64>() / n;
    let worst_ratio = rows
        .iter()
        .map(|r| {
            if r.init.median_deg == 0.0 {
                if r.averaged.median_deg == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                r.averaged.median_deg / r.init.median_deg
            }
        })
        .fold(0.0, f64::max);
    let min_recall = rows.iter().map(|r| r.recall).fold(f64::INFINITY, f64::min);
    let min_precision = rows
        .iter()
        .map(|r| r.precision)
        .fold(f64::INFINITY, f64::min);
    Ok(Fig4Report {
        trials: cfg.trials,
        camera_count: cfg.preset.camera_count,
        edge_noise_sigma: cfg.noise.edge_noise_sigma,
        outlier_fraction: cfg.noise.outlier_fraction,
        density: cfg.density,
        threshold_deg: cfg.threshold_deg,
        rows,
        mean_init_median_deg: mean_init,
        mean_averaged_median_deg: mean_avg,
        mean_refined_median_deg: mean_ref,
        worst_averaged_ratio: worst_ratio,
        min_recall,
        min_precision,
    })
}

/// One seed of the depth-complementarity study.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Fig6Row {
    pub seed: u64,
    pub scale: f64,
    pub shift: f64,
    pub scale_error_rel: f64,
    pub shift_error_rel: f64,
    pub mvs_rmse: f64,
    pub mono_rmse: f64,
    pub fused_rmse: f64,
    pub mvs_abs_rel: f64,
    pub mono_abs_rel: f64,
    pub fused_abs_rel: f64,
    pub blend_fraction: f64,
    pub mono_fraction: f64,
    pub fused_le_min: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Fig6Report {
    pub trials: u32,
    pub tau: f64,
    pub sigma: f64,
    pub expected_scale: f64,
    pub expected_shift: f64,
    pub rows: Vec<Fig6Row>,
    pub mean_mvs_rmse: f64,
    pub mean_mono_rmse: f64,
    pub mean_fused_rmse: f64,
    pub all_fused_le_min: bool,
    pub max_scale_error_rel: f64,
    pub max_shift_error_rel: f64,
}

fn relative_to(value: f64, expected: f64) -> f64 {
    (value - expected).abs() / expected.abs().max(1e-12)
}

/// Runs `trials` seeds of depth generation, monocular alignment, and
/// fusion on camera 0 of the preset's ring, comparing each output against
/// the rendered ground truth.
pub fn run_fig6_experiment(cfg: &HarnessConfig) -> Result<Fig6Report, HarnessError> {
    cfg.validate()?;
    let cameras = generate_cameras(&cfg.preset)?;
    let camera = &cameras[0];
    let (a, b) = cfg.noise.mono_affine;
    let expected_scale = 1.0 / a;
    let expected_shift = -b / a;
    let mut rows: Vec<Fig6Row> = Vec::with_capacity(cfg.trials as usize);
    for k in 0..cfg.trials {
        let mut preset = cfg.preset.clone();
        preset.seed = cfg.preset.seed + k as u64;
        let pair = generate_depth_pair(camera, &preset, &cfg.noise)?;
        let fit = align_scale(&pair.mono, &pair.mvs, &pair.mvs_conf, cfg.conf_floor)?;
        let aligned = fit.apply(&pair.mono);
        let mvs_stats = depth_error_stats(&pair.mvs, &pair.truth)?;
        let mono_stats = depth_error_stats(&aligned, &pair.truth)?;
        let (fused, mask) = fuse(
            &pair.mvs,
            &aligned,
            Some(&pair.mvs_conf),
            Some(&pair.mono_conf),
            &cfg.fusion,
        )?;
        let fused_stats = depth_error_stats(&fused, &pair.truth)?;
        let total = (mask.width() as usize) * (mask.height() as usize);
        rows.push(Fig6Row {
            seed: preset.seed,
            scale: fit.scale,
            shift: fit.shift,
            scale_error_rel: relative_to(fit.scale, expected_scale),
            shift_error_rel: relative_to(fit.shift, expected_shift),
            mvs_rmse: mvs_stats.rmse,
            mono_rmse: mono_stats.rmse,
            fused_rmse: fused_stats.rmse,
            mvs_abs_rel: mvs_stats.abs_rel,
            mono_abs_rel: mono_stats.abs_rel,
            fused_abs_rel: fused_stats.abs_rel,
            blend_fraction: mask.count(PixelClass::Blend) as f64 / total as f64,
            mono_fraction: mask.count(PixelClass::Mono) as f64 / total as f64,
            fused_le_min: fused_stats.rmse <= mvs_stats.rmse.min(mono_stats.rmse),
        });
    }
    let n = rows.len() as f64;
    Ok(Fig6Report {
        trials: cfg.trials,
        tau: cfg.fusion.tau,
        sigma: cfg.fusion.sigma,
        expected_scale,
        expected_shift,
        mean_mvs_rmse: rows.iter().map(|r| r.mvs_rmse).sum::<f64>() / n,
        mean_mono_rmse: rows.iter().map(|r| r.mono_rmse).sum::<f64>() / n,
        mean_fused_rmse: rows.iter().map(|r| r.fused_rmse).sum::<f64>() / n,
        all_fused_le_min: rows.iter().all(|r| r.fused_le_min),
        max_scale_error_rel: rows.iter().map(|r| r.scale_error_rel).fold(0.0, f64::max),
        max_shift_error_rel: rows.iter().map(|r| r.shift_error_rel).fold(0.0, f64::max),
        rows,
    })
}

/// One range-factor setting of the sensitivity sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub mean_fused_rmse: f64,
    pub mean_blend_fraction: f64,
    pub mean_mono_fraction: f64,
    pub all_fused_le_min: bool,
}

/// Reruns the depth study once per range factor in `sigmas`.
pub fn run_sigma_sweep(
    cfg: &HarnessConfig,
    sigmas: &[f64],
) -> Result<Vec<SweepRow>, HarnessError> {
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let mut swept = cfg.clone();
        swept.fusion.sigma = sigma;
        let report = run_fig6_experiment(&swept)?;
        let n = report.rows.len() as f64;
        rows.push(SweepRow {
            sigma,
            mean_fused_rmse: report.mean_fused_rmse,
            mean_blend_fraction: report.rows.iter().map(|r| r.blend_fraction).sum::<f64>() / n,
            mean_mono_fraction: report.rows.iter().map(|r| r.mono_fraction).sum::<f64>() / n,
            all_fused_le_min: report.all_fused_le_min,
        });
    }
    Ok(rows)
}

/// CSV trace of a rotation-recovery report, one row per seed.
pub fn fig4_csv(report: &Fig4Report) -> String {
    let mut s = String::from(
        "seed,edges,injected_outliers,flagged,recall,precision,\
         init_median_deg,averaged_median_deg,refined_median_deg,\
         lmra_pretrain,lmra_trained,refine_applied\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.edges,
            r.injected_outliers,
            r.flagged,
            r.recall,
            r.precision,
            r.init.median_deg,
            r.averaged.median_deg,
            r.refined.median_deg,
            r.lmra_pretrain,
            r.lmra_trained,
            r.refine_applied
        );
    }
    s
}

/// CSV trace of a depth-complementarity report, one row per seed.
pub fn fig6_csv(report: &Fig6Report) -> String {
    let mut s = String::from(
        "seed,scale,shift,mvs_rmse,mono_rmse,fused_rmse,\
         blend_fraction,mono_fraction,fused_le_min\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.scale,
            r.shift,
            r.mvs_rmse,
            r.mono_rmse,
            r.fused_rmse,
            r.blend_fraction,
            r.mono_fraction,
            r.fused_le_min
        );
    }
    s
}

/// CSV trace of a sigma sweep, one row per setting.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "sigma,mean_fused_rmse,mean_blend_fraction,mean_mono_fraction,all_fused_le_min\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.sigma, r.mean_fused_rmse, r.mean_blend_fraction, r.mean_mono_fraction,
            r.all_fused_le_min
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_ring(count: u32) -> ScenePreset {
        ScenePreset {
            camera_count: count,
            ring_radius: 5.0,
            ..ScenePreset::default()
        }
    }

    #[test]
    fn ring_of_four_sits_on_the_compass_points() {
        let cams = generate_cameras(&small_ring(4)).unwrap();
        let expected = [
            [5.0, 0.0, 0.0],
            [0.0, 5.0, 0.0],
            [-5.0, 0.0, 0.0],
            [0.0, -5.0, 0.0],
        ];
        for (cam, want) in cams.iter().zip(&expected) {
            let c = cam.center();
            for k in 0..3 {
                assert!((c[k] - want[k]).abs() < 1e-9, "center {c:?} vs {want:?}");
            }
            // every camera gazes at the target: it projects onto the
            // principal point at depth equal to the ring radius
            let (u, v, z) = cam.project([0.0, 0.0, 0.0]).unwrap();
            assert!((u - 96.0).abs() < 1e-9);
            assert!((v - 72.0).abs() < 1e-9);
            assert!((z - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ring_reruns_are_bit_identical() {
        let preset = small_ring(7);
        let a = generate_cameras(&preset).unwrap();
        let b = generate_cameras(&preset).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.rotation.wxyz(), y.rotation.wxyz());
            assert_eq!(x.translation, y.translation);
        }
    }

    #[test]
    fn ring_relatives_close_the_loop() {
        let cams = generate_cameras(&small_ring(9)).unwrap();
        let mut acc = Rotation::rot_z(0.0);
        for k in 0..9 {
            let next = (k + 1) % 9;
            let rel = cams[next].rotation.compose(&cams[k].rotation.inverse());
            acc = rel.compose(&acc);
        }
        assert!(acc.angle() < 1e-9, "loop closure angle {}", acc.angle());
    }

    #[test]
    fn zero_noise_graph_has_exact_relatives() {
        let cams = generate_cameras(&small_ring(6)).unwrap();
        let (noisy, truth, labels) =
            generate_pose_graph(&cams, &NoiseModel::noiseless(), 1.0, 7).unwrap();
        assert_eq!(noisy.edge_count(), 15); // complete graph on 6 vertices
        assert!(labels.iter().all(|l| !l));
        for (a, b) in noisy.edges().iter().zip(truth.edges()) {
            assert_eq!(a.rel.wxyz(), b.rel.wxyz(), "edge ({}, {})", a.i, a.j);
        }
    }

    #[test]
    fn outlier_counts_are_exact() {
        let cams = generate_cameras(&small_ring(15)).unwrap();
        for fraction in [0.0, 0.1, 0.25, 1.0] {
            let noise = NoiseModel {
                outlier_fraction: fraction,
                ..NoiseModel::default()
            };
            let (noisy, _, labels) = generate_pose_graph(&cams, &noise, 1.0, 3).unwrap();
            let m = noisy.edge_count();
            assert_eq!(m, 105); // complete graph on 15 vertices
            let want = (fraction * m as f64).round() as usize;
            let got = labels.iter().filter(|l| **l).count();
            assert_eq!(got, want, "fraction {fraction}");
        }
    }

    #[test]
    fn graph_reruns_are_bit_identical() {
        let cams = generate_cameras(&small_ring(8)).unwrap();
        let noise = NoiseModel::default();
        let (a, _, la) = generate_pose_graph(&cams, &noise, 0.5, 11).unwrap();
        let (b, _, lb) = generate_pose_graph(&cams, &noise, 0.5, 11).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.edge_count(), b.edge_count());
        for (x, y) in a.edges().iter().zip(b.edges()) {
            assert_eq!((x.i, x.j), (y.i, y.j));
            assert_eq!(x.rel.wxyz(), y.rel.wxyz());
        }
    }

    #[test]
    fn single_plane_zero_noise_collapses_all_maps() {
        let preset = ScenePreset {
            planes: vec![Plane {
                depth: 2.0,
                extent: 100.0,
            }],
            ..small_ring(2)
        };
        let noise = NoiseModel {
            mono_affine: (2.0, 0.5),
            ..NoiseModel::noiseless()
        };
        let cams = generate_cameras(&preset).unwrap();
        let pair = generate_depth_pair(&cams[0], &preset, &noise).unwrap();
        for y in 0..preset.height {
            for x in 0..preset.width {
                assert_eq!(pair.truth.get(x, y), Some(2.0));
                assert_eq!(pair.mvs.get(x, y), Some(2.0));
                assert_eq!(pair.mvs_conf.get(x, y), 1.0);
                let mono = pair.mono.get(x, y).unwrap();
                assert!(((mono - 0.5) / 2.0 - 2.0).abs() < 1e-12);
                assert_eq!(pair.mono_conf.get(x, y), MONO_CONFIDENCE);
            }
        }
    }

    #[test]
    fn two_plane_scene_splits_into_the_expected_regions() {
        let preset = ScenePreset::default();
        let cams = generate_cameras(&preset).unwrap();
        let pair = generate_depth_pair(&cams[0], &preset, &NoiseModel::noiseless()).unwrap();
        // the near plane at depth 2 with extent 0.9 covers |x - cx| <= 72,
        // i.e. columns 24..=168, across every row
        let mut near = 0usize;
        let mut far = 0usize;
        for y in 0..preset.height {
            for x in 0..preset.width {
                match pair.truth.get(x, y) {
                    Some(d) if d == 2.0 => {
                        near += 1;
                        assert!((24..=168).contains(&x), "column {x} should be far");
                    }
                    Some(d) if d == 20.0 => far += 1,
                    other => panic!("unexpected depth {other:?}"),
                }
            }
        }
        assert_eq!(near, 145 * 144);
        assert_eq!(far, 47 * 144);
    }

    #[test]
    fn stereo_noise_grows_with_depth_squared() {
        let noise = NoiseModel {
            mvs_noise_coeff: 0.01,
            ..NoiseModel::noiseless()
        };
        assert!((noise.mvs_std(2.0) - 0.04).abs() < 1e-15);
        assert!((noise.mvs_std(20.0) - 4.0).abs() < 1e-15);

        // empirical spot check on a constant-depth scene
        let preset = ScenePreset {
            planes: vec![Plane {
                depth: 20.0,
                extent: 1000.0,
            }],
            ..small_ring(2)
        };
        let cams = generate_cameras(&preset).unwrap();
        let pair = generate_depth_pair(&cams[0], &preset, &noise).unwrap();
        let n = pair.mvs.len() as f64;
        let mean = pair.mvs.values().iter().sum::<f64>() / n;
        let var = pair
            .mvs
            .values()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        assert!(
            (std - 4.0).abs() < 0.4,
            "empirical std {std} should be near 4"
        );
    }

    #[test]
    fn stereo_cutoff_invalidates_deep_pixels() {
        let preset = ScenePreset::default();
        let noise = NoiseModel {
            mvs_max_depth: Some(10.0),
            ..NoiseModel::default()
        };
        let cams = generate_cameras(&preset).unwrap();
        let pair = generate_depth_pair(&cams[0], &preset, &noise).unwrap();
        for y in 0..preset.height {
            for x in 0..preset.width {
                let t = pair.truth.get(x, y).unwrap();
                if t > 10.0 {
                    assert!(pair.mvs.get(x, y).is_none());
                    assert_eq!(pair.mvs_conf.get(x, y), 0.0);
                } else {
                    assert!(pair.mvs.get(x, y).is_some());
                    assert!(pair.mvs_conf.get(x, y) > 0.0);
                }
                // the monocular side never sees the cutoff
                assert!(pair.mono.get(x, y).is_some());
            }
        }
    }

    #[test]
    fn depth_pair_reruns_are_bit_identical() {
        let preset = ScenePreset::default();
        let cams = generate_cameras(&preset).unwrap();
        let a = generate_depth_pair(&cams[0], &preset, &NoiseModel::default()).unwrap();
        let b = generate_depth_pair(&cams[0], &preset, &NoiseModel::default()).unwrap();
        let bits = |m: &DepthMap, n: &DepthMap| {
            m.values()
                .iter()
                .zip(n.values())
                .all(|(x, y)| x.to_bits() == y.to_bits())
        };
        assert!(bits(&a.truth, &b.truth));
        assert!(bits(&a.mvs, &b.mvs));
        assert!(bits(&a.mono, &b.mono));
        assert_eq!(a.mvs_conf.values(), b.mvs_conf.values());
        assert_eq!(a.mono_conf.values(), b.mono_conf.values());
    }

    #[test]
    fn config_round_trips_through_text() {
        let cfg = HarnessConfig::default();
        let text = serialize_config(&cfg);
        let parsed = parse_config(&text).unwrap();
        assert_eq!(serialize_config(&parsed), text);
        assert_eq!(parsed.preset.camera_count, 30);
        assert_eq!(parsed.trials, 20);
        assert_eq!(parsed.fusion.tau, 0.05);
        assert_eq!(parsed.fusion.sigma, 0.66);
        assert_eq!(parsed.noise.mvs_max_depth, None);

        // overrides and comments
        let parsed = parse_config(
            "# comment\n\ncamera_count = 5\nplanes = 3:1.5,9:20\nmvs_max_depth = 12.5\n",
        )
        .unwrap();
        assert_eq!(parsed.preset.camera_count, 5);
        assert_eq!(
            parsed.preset.planes,
            vec![
                Plane {
                    depth: 3.0,
                    extent: 1.5
                },
                Plane {
                    depth: 9.0,
                    extent: 20.0
                }
            ]
        );
        assert_eq!(parsed.noise.mvs_max_depth, Some(12.5));
    }

    #[test]
    fn config_parser_rejects_malformed_input() {
        assert!(matches!(
            parse_config("no equals sign"),
            Err(HarnessError::Config { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("unknown_key = 3"),
            Err(HarnessError::Config { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("camera_count = many"),
            Err(HarnessError::Config { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("\n\nplanes = 5"),
            Err(HarnessError::Config { line: 3, .. })
        ));
        // semantic validation still applies after parsing
        assert!(matches!(
            parse_config("camera_count = 1"),
            Err(HarnessError::BadPreset(_))
        ));
        assert!(matches!(
            parse_config("density = 0"),
            Err(HarnessError::BadSetting(_))
        ));
        assert!(matches!(
            parse_config("planes = 9:1,3:1"),
            Err(HarnessError::BadPreset(_))
        ));
        assert!(matches!(
            parse_config("outlier_fraction = 1.5"),
            Err(HarnessError::BadNoise(_))
        ));
    }
}
