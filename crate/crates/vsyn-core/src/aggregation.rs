//! Pinhole cameras, feature maps, view-dependent aggregation, forward
//! warping, and the correlation-based hybrid feature objective.
//!
//! Conventions used throughout:
//!
//! * A camera maps world points to camera coordinates via
//!   `x_cam = R * x_world + t`; the optical axis is +z and only points with
//!   `z > 0` are visible.
//! * Pixel coordinates are `(u, v)` with `u` along image columns and `v`
//!   along rows; integer coordinates sit at pixel centers.
//! * Observation directions point from the surface point toward the camera
//!   center and are unit length.

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;

use crate::fusion::{DepthMap, PixelClass};
use crate::mpnn::Affine;
use crate::so3::Rotation;

/// Errors produced by camera, aggregation, and warping operations.
#[derive(Debug, thiserror::Error)]
pub enum AggregationError {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("point coincides with the camera center")]
    DegeneratePoint,
    #[error("camera target coincides with the camera center")]
    DegenerateFrame,
    #[error("vector has zero variance; correlation is undefined")]
    ZeroVariance,
    #[error("dimension mismatch: {what}")]
    DimensionMismatch { what: String },
    #[error("no observations to aggregate")]
    EmptyObservations,
    #[error("observation {index} is invalid: {why}")]
    BadObservation { index: usize, why: &'static str },
    #[error("vector is not unit length (norm = {norm})")]
    NotUnit { norm: f64 },
    #[error("invalid value: {what}")]
    BadValue { what: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("bad magic bytes; expected `FMAP`")]
    BadMagic,
    #[error("length mismatch: expected {expected} bytes, got {got}")]
    Length { expected: u64, got: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Calibrated pinhole camera with a world-to-camera rigid pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: Rotation,
    pub translation: [f64; 3],
}

impl PinholeCamera {
    /// Builds a camera and validates the intrinsics.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rotation: Rotation,
        translation: [f64; 3],
    ) -> Result<PinholeCamera, AggregationError> {
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(AggregationError::BadValue {
                what: format!("focal lengths must be finite and positive, got ({fx}, {fy})"),
            });
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(AggregationError::BadValue {
                what: "principal point must be finite".to_string(),
            });
        }
        if width == 0 || height == 0 {
            return Err(AggregationError::BadValue {
                what: "image dimensions must be at least 1x1".to_string(),
            });
        }
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(AggregationError::BadValue {
                what: "translation must be finite".to_string(),
            });
        }
        Ok(PinholeCamera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        })
    }

    /// Places a camera at `center` gazing at `target` with `up` steadying the
    /// roll.  An `up` parallel to the gaze direction falls back to a fixed
    /// replacement axis, so the construction is total except when the target
    /// coincides with the center.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        center: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
    ) -> Result<PinholeCamera, AggregationError> {
        let forward = sub(target, center);
        let flen = norm3(forward);
        if flen < 1e-12 {
            return Err(AggregationError::DegenerateFrame);
        }
        let z = scale3(forward, 1.0 / flen);
        let mut x = cross(z, up);
        if norm3(x) < 1e-9 {
            // gaze is parallel to `up`: substitute whichever world axis is
            // least aligned with the gaze
            let fallback = if z[0].abs() < 0.9 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 1.0, 0.0]
            };
            x = cross(z, fallback);
        }
        let x = scale3(x, 1.0 / norm3(x));
        let y = cross(z, x);
        let m = [x, y, z];
        let rotation = Rotation::from_matrix(&m).map_err(|e| AggregationError::BadValue {
            what: format!("constructed frame is not a rotation: {e}"),
        })?;
        let rc = rotation.rotate(center);
        let translation = [-rc[0], -rc[1], -rc[2]];
        PinholeCamera::new(fx, fy, cx, cy, width, height, rotation, translation)
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> [f64; 3] {
        let t = self.translation;
        self.rotation.inverse().rotate([-t[0], -t[1], -t[2]])
    }

    /// Projects a world point to `(u, v, depth)`.
    ///
    /// The returned depth is the z coordinate in the camera frame.  Points
    /// with non-positive depth are rejected rather than silently mirrored.
    pub fn project(&self, x_world: [f64; 3]) -> Result<(f64, f64, f64), AggregationError> {
        let r = self.rotation.rotate(x_world);
        let xc = [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ];
        if xc[2] <= 0.0 {
            return Err(AggregationError::BehindCamera { z: xc[2] });
        }
        Ok((
            self.fx * xc[0] / xc[2] + self.cx,
            self.fy * xc[1] / xc[2] + self.cy,
            xc[2],
        ))
    }

    /// Lifts pixel `(u, v)` at `depth` back to a world point.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let xc = [
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        ];
        let d = sub(xc, self.translation);
        self.rotation.inverse().rotate(d)
    }

    /// Unit vector from the surface point toward the camera center.
    pub fn view_direction(&self, x_world: [f64; 3]) -> Result<[f64; 3], AggregationError> {
        let d = sub(self.center(), x_world);
        let n = norm3(d);
        if n < 1e-12 {
            return Err(AggregationError::DegeneratePoint);
        }
        Ok(scale3(d, 1.0 / n))
    }

    /// True when `(u, v)` rounds to a pixel inside the image.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        let pu = u.round();
        let pv = v.round();
        pu >= 0.0 && pv >= 0.0 && pu <= (self.width - 1) as f64 && pv <= (self.height - 1) as f64
    }
}

/// Parses a camera from its one-line text form:
///
/// ```text
/// fx fy cx cy width height qw qx qy qz tx ty tz
/// ```
pub fn parse_camera_line(text: &str, line: usize) -> Result<PinholeCamera, AggregationError> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() != 13 {
        return Err(AggregationError::Parse {
            line,
            msg: format!("expected 13 fields, got {}", toks.len()),
        });
    }
    let mut floats = [0.0f64; 4];
    for (slot, tok) in floats.iter_mut().zip(&toks[..4]) {
        *slot = tok.parse::<f64>().map_err(|_| AggregationError::Parse {
            line,
            msg: format!("bad number `{tok}`"),
        })?;
    }
    let width: u32 = toks[4].parse().map_err(|_| AggregationError::Parse {
        line,
        msg: format!("bad width `{}`", toks[4]),
    })?;
    let height: u32 = toks[5].parse().map_err(|_| AggregationError::Parse {
        line,
        msg: format!("bad height `{}`", toks[5]),
    })?;
    let mut rest = [0.0f64; 7];
    for (slot, tok) in rest.iter_mut().zip(&toks[6..]) {
        *slot = tok.parse::<f64>().map_err(|_| AggregationError::Parse {
            line,
            msg: format!("bad number `{tok}`"),
        })?;
    }
    let rotation = Rotation::from_wxyz(rest[0], rest[1], rest[2], rest[3]).map_err(|e| {
        AggregationError::Parse {
            line,
            msg: format!("bad rotation: {e}"),
        }
    })?;
    PinholeCamera::new(
        floats[0],
        floats[1],
        floats[2],
        floats[3],
        width,
        height,
        rotation,
        [rest[4], rest[5], rest[6]],
    )
    .map_err(|e| AggregationError::Parse {
        line,
        msg: e.to_string(),
    })
}

/// Serializes one camera to the line format read by [`parse_camera_line`].
pub fn serialize_camera(cam: &PinholeCamera) -> String {
    let (qw, qx, qy, qz) = cam.rotation.wxyz();
    let mut s = String::new();
    write!(
        s,
        "{:.16e} {:.16e} {:.16e} {:.16e} {} {} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        cam.width,
        cam.height,
        qw,
        qx,
        qy,
        qz,
        cam.translation[0],
        cam.translation[1],
        cam.translation[2]
    )
    .expect("writing to a String cannot fail");
    s
}

/// Parses a text file with one camera per line; `#` starts a comment.
pub fn parse_camera_file(text: &str) -> Result<Vec<PinholeCamera>, AggregationError> {
    let mut cams = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        cams.push(parse_camera_line(line, idx + 1)?);
    }
    Ok(cams)
}

/// Serializes cameras one per line with a trailing newline.
pub fn serialize_camera_file(cams: &[PinholeCamera]) -> String {
    let mut out = String::new();
    for cam in cams {
        out.push_str(&serialize_camera(cam));
        out.push('\n');
    }
    out
}

/// Dense per-pixel feature image with `channels` values per pixel.
///
/// Values are stored row-major, all channels of a pixel adjacent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: u32,
    height: u32,
    channels: u32,
    values: Vec<f64>,
}

impl FeatureMap {
    /// All-zero map; every dimension must be at least 1.
    pub fn new(width: u32, height: u32, channels: u32) -> FeatureMap {
        assert!(channels >= 1, "feature maps need at least one channel");
        assert!(
            width >= 1 && height >= 1,
            "feature maps need a nonempty pixel grid"
        );
        FeatureMap {
            width,
            height,
            channels,
            values: vec![0.0; width as usize * height as usize * channels as usize],
        }
    }

    /// Wraps an existing buffer, validating length and finiteness.
    pub fn from_values(
        width: u32,
        height: u32,
        channels: u32,
        values: Vec<f64>,
    ) -> Result<FeatureMap, AggregationError> {
        if channels == 0 {
            return Err(AggregationError::BadValue {
                what: "feature maps need at least one channel".to_string(),
            });
        }
        if width == 0 || height == 0 {
            return Err(AggregationError::BadValue {
                what: "feature maps need a nonempty pixel grid".to_string(),
            });
        }
        let expected = width as usize * height as usize * channels as usize;
        if values.len() != expected {
            return Err(AggregationError::DimensionMismatch {
                what: format!(
                    "{}x{}x{} needs {} values, got {}",
                    width,
                    height,
                    channels,
                    expected,
                    values.len()
                ),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(AggregationError::NonFinite { index });
        }
        Ok(FeatureMap {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Feature vector at `(x, y)`, or `None` outside the image.
    pub fn get(&self, x: u32, y: u32) -> Option<&[f64]> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let c = self.channels as usize;
        let base = (y as usize * self.width as usize + x as usize) * c;
        Some(&self.values[base..base + c])
    }

    /// Overwrites the feature vector at `(x, y)`.
    ///
    /// Panics on out-of-range coordinates, wrong channel count, or
    /// non-finite values; those are caller bugs, not data errors.
    pub fn set(&mut self, x: u32, y: u32, feature: &[f64]) {
        assert!(x < self.width && y < self.height, "pixel out of range");
        assert_eq!(
            feature.len(),
            self.channels as usize,
            "channel count mismatch"
        );
        assert!(
            feature.iter().all(|v| v.is_finite()),
            "features must be finite"
        );
        let c = self.channels as usize;
        let base = (y as usize * self.width as usize + x as usize) * c;
        self.values[base..base + c].copy_from_slice(feature);
    }
}

const FMAP_MAGIC: &[u8; 4] = b"FMAP";

/// Encodes a feature map: magic `FMAP`, u32 width/height/channels, then
/// f32 little-endian values row-major with channels adjacent.  Values are
/// clamped to the f32 range on the way out.
pub fn write_feature_map(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + map.values.len() * 4);
    out.extend_from_slice(FMAP_MAGIC);
    out.extend_from_slice(&map.width.to_le_bytes());
    out.extend_from_slice(&map.height.to_le_bytes());
    out.extend_from_slice(&map.channels.to_le_bytes());
    for &v in &map.values {
        let clamped = v.clamp(-(f32::MAX as f64), f32::MAX as f64) as f32;
        out.extend_from_slice(&clamped.to_le_bytes());
    }
    out
}

/// Decodes the format written by [`write_feature_map`], rejecting bad
/// magic, truncated or oversized payloads, and non-finite samples.
pub fn read_feature_map(bytes: &[u8]) -> Result<FeatureMap, AggregationError> {
    if bytes.len() < 16 {
        return Err(AggregationError::Length {
            expected: 16,
            got: bytes.len(),
        });
    }
    if &bytes[..4] != FMAP_MAGIC {
        return Err(AggregationError::BadMagic);
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().expect("slice is 4 bytes"));
    let height = u32::from_le_bytes(bytes[8..12].try_into().expect("slice is 4 bytes"));
    let channels = u32::from_le_bytes(bytes[12..16].try_into().expect("slice is 4 bytes"));
    if channels == 0 {
        return Err(AggregationError::BadValue {
            what: "feature maps need at least one channel".to_string(),
        });
    }
    let count = width as u64 * height as u64 * channels as u64;
    let expected = 16u64 + count * 4;
    if bytes.len() as u64 != expected {
        return Err(AggregationError::Length {
            expected,
            got: bytes.len(),
        });
    }
    let mut values = Vec::with_capacity(count as usize);
    for (i, chunk) in bytes[16..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk is 4 bytes")) as f64;
        if !v.is_finite() {
            return Err(AggregationError::NonFinite { index: i });
        }
        values.push(v);
    }
    FeatureMap::from_values(width, height, channels, values)
}

/// One view's contribution to a surface point: the unit direction from the
/// point toward that camera, the sampled feature, and a confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub view: u32,
    pub direction: [f64; 3],
    pub feature: Vec<f64>,
    pub confidence: f64,
}

/// A 3D point together with everything the source views said about it.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSample {
    pub position: [f64; 3],
    pub observations: Vec<Observation>,
}

fn check_observations(obs: &[Observation]) -> Result<usize, AggregationError> {
    if obs.is_empty() {
        return Err(AggregationError::EmptyObservations);
    }
    let channels = obs[0].feature.len();
    if channels == 0 {
        return Err(AggregationError::BadObservation {
            index: 0,
            why: "feature vector is empty",
        });
    }
    for (index, o) in obs.iter().enumerate() {
        if o.feature.len() != channels {
            return Err(AggregationError::DimensionMismatch {
                what: format!(
                    "observation {} has {} channels, expected {}",
                    index,
                    o.feature.len(),
                    channels
                ),
            });
        }
        if o.feature.iter().any(|v| !v.is_finite()) {
            return Err(AggregationError::BadObservation {
                index,
                why: "feature contains a non-finite value",
            });
        }
        let n = norm3(o.direction);
        if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
            return Err(AggregationError::BadObservation {
                index,
                why: "direction is not unit length",
            });
        }
        if !o.confidence.is_finite() || !(0.0..=1.0).contains(&o.confidence) {
            return Err(AggregationError::BadObservation {
                index,
                why: "confidence is outside [0, 1]",
            });
        }
    }
    Ok(channels)
}

/// Cosine-weighted directional feature aggregation.
///
/// Each observation contributes with weight `max(0, u . v_k)`, so views
/// looking from the same side as the target direction `u` dominate and
/// back-facing views drop out entirely.  Returns the normalized feature and
/// the total weight.  When every view is back-facing (total weight below
/// 1e-12) the feature is zero and the weight 0; holes are reported, never
/// invented.
pub fn directional_aggregate(
    u: [f64; 3],
    obs: &[Observation],
) -> Result<(Vec<f64>, f64), AggregationError> {
    let nu = norm3(u);
    if !nu.is_finite() || (nu - 1.0).abs() > 1e-9 {
        return Err(AggregationError::NotUnit { norm: nu });
    }
    let channels = check_observations(obs)?;
    let mut acc = vec![0.0; channels];
    let mut total = 0.0;
    for o in obs {
        let w = dot(u, o.direction).max(0.0);
        if w == 0.0 {
            continue;
        }
        total += w;
        for (a, f) in acc.iter_mut().zip(&o.feature) {
            *a += w * f;
        }
    }
    if total <= 1e-12 {
        return Ok((vec![0.0; channels], 0.0));
    }
    for a in &mut acc {
        *a /= total;
    }
    Ok((acc, total))
}

/// Confidence-weighted feature sum `sum_k c_k f_k`.
///
/// Deliberately not normalized: a point seen by many confident views keeps
/// a larger magnitude than a barely observed one, and downstream layers can
/// exploit that. Use [`confidence_aggregate_normalized`] for a convex
/// combination instead.
pub fn confidence_aggregate(obs: &[Observation]) -> Result<Vec<f64>, AggregationError> {
    let channels = check_observations(obs)?;
    let mut acc = vec![0.0; channels];
    for o in obs {
        for (a, f) in acc.iter_mut().zip(&o.feature) {
            *a += o.confidence * f;
        }
    }
    Ok(acc)
}

/// Normalized variant of [`confidence_aggregate`]: divides by the total
/// confidence, returning zeros when the total is below 1e-12.
pub fn confidence_aggregate_normalized(obs: &[Observation]) -> Result<Vec<f64>, AggregationError> {
    let channels = check_observations(obs)?;
    let mut acc = vec![0.0; channels];
    let mut total = 0.0;
    for o in obs {
        total += o.confidence;
        for (a, f) in acc.iter_mut().zip(&o.feature) {
            *a += o.confidence * f;
        }
    }
    if total <= 1e-12 {
        return Ok(vec![0.0; channels]);
    }
    for a in &mut acc {
        *a /= total;
    }
    Ok(acc)
}

/// Forward-splats source features into the destination view.
///
/// Every valid source pixel is unprojected with its depth, reprojected into
/// the destination camera, and written to the nearest destination pixel.
/// Collisions resolve by depth: strictly nearer splats overwrite, so with
/// equal depths the first pixel in row-major scan order wins.  Returns the
/// warped features and a coverage depth map (destination-frame depth at
/// covered pixels, invalid at holes).  No interpolation and no inpainting:
/// a pixel nothing splatted onto stays a hole.
pub fn forward_warp(
    src_cam: &PinholeCamera,
    dst_cam: &PinholeCamera,
    src_features: &FeatureMap,
    src_depth: &DepthMap,
) -> Result<(FeatureMap, DepthMap), AggregationError> {
    if src_features.width() != src_cam.width || src_features.height() != src_cam.height {
        return Err(AggregationError::DimensionMismatch {
            what: format!(
                "feature map is {}x{} but the source camera is {}x{}",
                src_features.width(),
                src_features.height(),
                src_cam.width,
                src_cam.height
            ),
        });
    }
    if src_depth.width() != src_cam.width || src_depth.height() != src_cam.height {
        return Err(AggregationError::DimensionMismatch {
            what: format!(
                "depth map is {}x{} but the source camera is {}x{}",
                src_depth.width(),
                src_depth.height(),
                src_cam.width,
                src_cam.height
            ),
        });
    }
    let mut out = FeatureMap::new(dst_cam.width, dst_cam.height, src_features.channels());
    let mut coverage = DepthMap::new(dst_cam.width, dst_cam.height);
    for y in 0..src_cam.height {
        for x in 0..src_cam.width {
            let Some(d) = src_depth.get(x, y) else {
                continue;
            };
            let world = src_cam.unproject(x as f64, y as f64, d);
            let Ok((u, v, z)) = dst_cam.project(world) else {
                continue;
            };
            if !dst_cam.contains(u, v) {
                continue;
            }
            let px = u.round() as u32;
            let py = v.round() as u32;
            let nearer = match coverage.get(px, py) {
                None => true,
                Some(cur) => z < cur,
            };
            if nearer {
                let feature = src_features.get(x, y).expect("source pixel is in range");
                out.set(px, py, feature);
                coverage.set(px, py, z);
            }
        }
    }
    Ok((out, coverage))
}

/// Pearson correlation between two feature vectors.
///
/// Needs at least two components; a (numerically) constant input has no
/// defined correlation and is rejected.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<f64, AggregationError> {
    let (c, _, _) = correlation_with_grad(a, b)?;
    Ok(c)
}

/// Correlation plus its gradient with respect to the first argument.
///
/// Also returns the centered first argument's norm so callers can reuse it.
fn correlation_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, f64), AggregationError> {
    if a.len() != b.len() {
        return Err(AggregationError::DimensionMismatch {
            what: format!("correlation inputs have lengths {} and {}", a.len(), b.len()),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(AggregationError::DimensionMismatch {
            what: "correlation needs at least 2 components".to_string(),
        });
    }
    let mean_a: f64 = a.iter().sum::<f64>() / n as f64;
    let mean_b: f64 = b.iter().sum::<f64>() / n as f64;
    let xa: Vec<f64> = a.iter().map(|v| v - mean_a).collect();
    let xb: Vec<f64> = b.iter().map(|v| v - mean_b).collect();
    let p = xa.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q = xb.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale_a = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let scale_b = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if p <= 1e-12 * scale_a || q <= 1e-12 * scale_b {
        return Err(AggregationError::ZeroVariance);
    }
    let s: f64 = xa.iter().zip(&xb).map(|(x, y)| x * y).sum();
    let c = s / (p * q);
    // dC/da_i = (xb_i / q - C * xa_i / p) / p; the mean terms vanish
    // because the centered vectors sum to zero.
    let grad: Vec<f64> = xa
        .iter()
        .zip(&xb)
        .map(|(x, y)| (y / q - c * x / p) / p)
        .collect();
    Ok((c, grad, p))
}

/// Per-class weights for the hybrid objective, one-hot by provenance.
///
/// Pixels fused from both modalities exercise the product term, pixels
/// backed by a single modality correlate against that modality alone, and
/// invalid pixels contribute nothing.
pub fn lambdas_for_class(class: PixelClass) -> [f64; 3] {
    match class {
        PixelClass::Blend => [1.0, 0.0, 0.0],
        PixelClass::Mvs => [0.0, 1.0, 0.0],
        PixelClass::Mono => [0.0, 0.0, 1.0],
        PixelClass::Invalid => [0.0, 0.0, 0.0],
    }
}

/// Correlation objective tying the fused feature to its sources:
///
/// `lambda1 * C(h_f, h_m) * C(h_f, h_s) + lambda2 * C(h_f, h_s) + lambda3 * C(h_f, h_m)`
///
/// Correlations are only evaluated for terms with a nonzero weight, so a
/// one-hot selector never trips over the unused modality.
pub fn hybrid_objective(
    h_f: &[f64],
    h_m: &[f64],
    h_s: &[f64],
    lambdas: [f64; 3],
) -> Result<f64, AggregationError> {
    let [l1, l2, l3] = lambdas;
    let need_m = l1 != 0.0 || l3 != 0.0;
    let need_s = l1 != 0.0 || l2 != 0.0;
    let c_m = if need_m { correlation(h_f, h_m)? } else { 0.0 };
    let c_s = if need_s { correlation(h_f, h_s)? } else { 0.0 };
    Ok(l1 * c_m * c_s + l2 * c_s + l3 * c_m)
}

/// Loss form of [`hybrid_objective`]: gradient descent on this value pushes
/// the fused feature toward agreement with its sources.
pub fn l_corr(
    h_f: &[f64],
    h_m: &[f64],
    h_s: &[f64],
    lambdas: [f64; 3],
) -> Result<f64, AggregationError> {
    Ok(-hybrid_objective(h_f, h_m, h_s, lambdas)?)
}

/// Parameters of the learned hybrid aggregator
/// `h_f = relu(W_nu [relu(W_a h_m + b_a); relu(W_b h_s + b_b)] + b_nu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridParams {
    c_in: usize,
    c_mid: usize,
    alpha: Affine,
    beta: Affine,
    nu: Affine,
}

impl HybridParams {
    /// Random initialization with fan-in scaled uniform weights.
    pub fn seeded(c_in: usize, c_mid: usize, seed: u64) -> HybridParams {
        assert!(c_in >= 1 && c_mid >= 1, "channel counts must be positive");
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha = Affine::seeded(c_mid, c_in, &mut rng);
        let beta = Affine::seeded(c_mid, c_in, &mut rng);
        let nu = Affine::seeded(c_mid, 2 * c_mid, &mut rng);
        HybridParams {
            c_in,
            c_mid,
            alpha,
            beta,
            nu,
        }
    }

    /// Identity construction: both branch maps are the identity and the
    /// mixer averages the two halves, so equal componentwise-nonnegative
    /// inputs pass through unchanged.
    pub fn identity(channels: usize) -> HybridParams {
        assert!(channels >= 1, "channel count must be positive");
        let mut eye = vec![0.0; channels * channels];
        for i in 0..channels {
            eye[i * channels + i] = 1.0;
        }
        let mut half_cat = vec![0.0; channels * 2 * channels];
        for i in 0..channels {
            half_cat[i * 2 * channels + i] = 0.5;
            half_cat[i * 2 * channels + channels + i] = 0.5;
        }
        HybridParams {
            c_in: channels,
            c_mid: channels,
            alpha: Affine::from_parts(channels, channels, eye.clone(), vec![0.0; channels]),
            beta: Affine::from_parts(channels, channels, eye, vec![0.0; channels]),
            nu: Affine::from_parts(channels, 2 * channels, half_cat, vec![0.0; channels]),
        }
    }

    /// Input feature dimension.
    pub fn c_in(&self) -> usize {
        self.c_in
    }

    /// Branch (and output) feature dimension.
    pub fn c_mid(&self) -> usize {
        self.c_mid
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.alpha.len() + self.beta.len() + self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattens to `[alpha W, alpha b, beta W, beta b, nu W, nu b]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.alpha.write_flat(&mut out);
        self.beta.write_flat(&mut out);
        self.nu.write_flat(&mut out);
        out
    }

    /// Rebuilds parameters of this shape from a flat vector.
    pub fn with_flat(&self, flat: &[f64]) -> HybridParams {
        assert_eq!(flat.len(), self.len(), "flat parameter length mismatch");
        let (a, rest) = flat.split_at(self.alpha.len());
        let (b, c) = rest.split_at(self.beta.len());
        HybridParams {
            c_in: self.c_in,
            c_mid: self.c_mid,
            alpha: self.alpha.read_flat(a),
            beta: self.beta.read_flat(b),
            nu: self.nu.read_flat(c),
        }
    }
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

struct HybridTape {
    a_pre: Vec<f64>,
    a: Vec<f64>,
    b_pre: Vec<f64>,
    b: Vec<f64>,
    cat: Vec<f64>,
    f_pre: Vec<f64>,
    h_f: Vec<f64>,
}

fn hybrid_forward_tape(
    params: &HybridParams,
    h_m: &[f64],
    h_s: &[f64],
) -> Result<HybridTape, AggregationError> {
    if h_m.len() != params.c_in || h_s.len() != params.c_in {
        return Err(AggregationError::DimensionMismatch {
            what: format!(
                "hybrid inputs have lengths {} and {}, parameters expect {}",
                h_m.len(),
                h_s.len(),
                params.c_in
            ),
        });
    }
    let mid = params.c_mid;
    let mut a_pre = vec![0.0; mid];
    params.alpha.apply(h_m, &mut a_pre);
    let mut a = a_pre.clone();
    relu_inplace(&mut a);
    let mut b_pre = vec![0.0; mid];
    params.beta.apply(h_s, &mut b_pre);
    let mut b = b_pre.clone();
    relu_inplace(&mut b);
    let mut cat = Vec::with_capacity(2 * mid);
    cat.extend_from_slice(&a);
    cat.extend_from_slice(&b);
    let mut f_pre = vec![0.0; mid];
    params.nu.apply(&cat, &mut f_pre);
    let mut h_f = f_pre.clone();
    relu_inplace(&mut h_f);
    Ok(HybridTape {
        a_pre,
        a,
        b_pre,
        b,
        cat,
        f_pre,
        h_f,
    })
}

/// Fuses a monocular-branch feature and a stereo-branch feature through the
/// learned two-branch network.
pub fn hybrid_aggregate(
    h_m: &[f64],
    h_s: &[f64],
    params: &HybridParams,
) -> Result<Vec<f64>, AggregationError> {
    Ok(hybrid_forward_tape(params, h_m, h_s)?.h_f)
}

/// Evaluates the correlation loss of the fused feature and its gradient
/// with respect to every parameter, in [`HybridParams::to_flat`] order.
///
/// The inputs are treated as constants; only the network parameters carry
/// gradients.
pub fn l_corr_and_gradients(
    params: &HybridParams,
    h_m: &[f64],
    h_s: &[f64],
    lambdas: [f64; 3],
) -> Result<(f64, Vec<f64>), AggregationError> {
    let tape = hybrid_forward_tape(params, h_m, h_s)?;
    let [l1, l2, l3] = lambdas;
    let need_m = l1 != 0.0 || l3 != 0.0;
    let need_s = l1 != 0.0 || l2 != 0.0;
    let n = tape.h_f.len();
    let (c_m, g_m) = if need_m {
        let (c, g, _) = correlation_with_grad(&tape.h_f, h_m)?;
        (c, g)
    } else {
        (0.0, vec![0.0; n])
    };
    let (c_s, g_s) = if need_s {
        let (c, g, _) = correlation_with_grad(&tape.h_f, h_s)?;
        (c, g)
    } else {
        (0.0, vec![0.0; n])
    };
    let loss = -(l1 * c_m * c_s + l2 * c_s + l3 * c_m);
    // dL/dh_f, then back through the relu stack
    let mut d_hf = vec![0.0; n];
    for i in 0..n {
        d_hf[i] = -(l1 * (c_s * g_m[i] + c_m * g_s[i]) + l2 * g_s[i] + l3 * g_m[i]);
    }
    let mid = params.c_mid;
    let mut df_pre = d_hf;
    for (g, &z) in df_pre.iter_mut().zip(&tape.f_pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    let mut dw_nu = vec![0.0; mid * 2 * mid];
    let mut db_nu = vec![0.0; mid];
    let mut d_cat = vec![0.0; 2 * mid];
    params
        .nu
        .backward(&tape.cat, &df_pre, &mut dw_nu, &mut db_nu, &mut d_cat);
    let mut da = d_cat[..mid].to_vec();
    for (g, &z) in da.iter_mut().zip(&tape.a_pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    let mut db = d_cat[mid..].to_vec();
    for (g, &z) in db.iter_mut().zip(&tape.b_pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    let c_in = params.c_in;
    let mut dw_a = vec![0.0; mid * c_in];
    let mut db_a = vec![0.0; mid];
    let mut dx_sink = vec![0.0; c_in];
    params
        .alpha
        .backward(h_m, &da, &mut dw_a, &mut db_a, &mut dx_sink);
    let mut dw_b = vec![0.0; mid * c_in];
    let mut db_b = vec![0.0; mid];
    let mut dx_sink_b = vec![0.0; c_in];
    params
        .beta
        .backward(h_s, &db, &mut dw_b, &mut db_b, &mut dx_sink_b);
    let mut grad = Vec::with_capacity(params.len());
    grad.extend_from_slice(&dw_a);
    grad.extend_from_slice(&db_a);
    grad.extend_from_slice(&dw_b);
    grad.extend_from_slice(&db_b);
    grad.extend_from_slice(&dw_nu);
    grad.extend_from_slice(&db_nu);
    let _ = (&tape.a, &tape.b);
    Ok((loss, grad))
}
