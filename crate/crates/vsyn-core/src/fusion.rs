//! Fusing multi-view stereo depth with monocular depth.
//!
//! MVS depth is metric and accurate up close but noisy or missing at range;
//! monocular depth is dense and smooth but only defined up to an affine
//! ambiguity. The pipeline here is:
//!
//! 1. [`align_scale`] fits `d_mvs ≈ s · d_mono + t` robustly over pixels
//!    where both maps are valid and the MVS confidence clears a floor, so
//!    the monocular map can be brought into metric units with
//!    [`AffineFit::apply`].
//! 2. [`classify_pixels`] decides per pixel which source to trust. A pixel
//!    is "far" when `d_mvs · sigma` exceeds the median valid MVS depth;
//!    far pixels and pixels without MVS coverage use the monocular value,
//!    near pixels blend both unless the monocular confidence drops below
//!    `tau`, in which case MVS alone is used.
//! 3. [`fuse`] realizes the classification into an output depth map and a
//!    provenance mask recording the per-pixel decision.
//!
//! Depth maps use `NaN` for invalid pixels, in memory and on disk. The disk
//! format (`DFMP`) is a little-endian header (magic, width, height, kind
//! byte: 0 depth / 1 confidence) followed by row-major `f32` samples.
//! Provenance masks serialize as `PMSK` with one byte per pixel.

use byteorder::{ByteOrder, LittleEndian};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("bad magic; expected `{expected}`")]
    BadMagic { expected: &'static str },
    #[error("wrong map kind: expected {expected}, got {got}")]
    WrongKind { expected: u8, got: u8 },
    #[error("length mismatch: expected {expected} bytes, got {got}")]
    Length { expected: u64, got: usize },
    #[error("map dimensions must be positive, got {0}x{1}")]
    EmptyDimensions(u32, u32),
    #[error("bad value at pixel {index}: {value} ({why})")]
    BadValue {
        index: usize,
        value: f64,
        why: &'static str,
    },
    #[error("maps have different shapes: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("only {count} overlapping valid pixels, need at least {needed}")]
    InsufficientOverlap { count: usize, needed: usize },
    #[error("alignment fit is degenerate; the scale is unobservable")]
    DegenerateFit,
    #[error("no valid pixels to work with")]
    EmptyValidSet,
}

/// Dense per-pixel depth, row-major, `NaN` marking invalid pixels. Valid
/// depths are strictly positive and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl DepthMap {
    /// An all-invalid map. Panics on zero dimensions.
    pub fn new(width: u32, height: u32) -> DepthMap {
        assert!(width > 0 && height > 0, "map dimensions must be positive");
        DepthMap {
            width,
            height,
            values: vec![f64::NAN; (width as usize) * (height as usize)],
        }
    }

    /// Wraps row-major values; `NaN` means invalid. Rejects zero, negative,
    /// or infinite entries and empty shapes.
    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Result<DepthMap, FusionError> {
        if width == 0 || height == 0 {
            return Err(FusionError::EmptyDimensions(width, height));
        }
        let expected = (width as u64) * (height as u64);
        if values.len() as u64 != expected {
            return Err(FusionError::Length {
                expected,
                got: values.len(),
            });
        }
        for (index, &v) in values.iter().enumerate() {
            if v.is_nan() {
                continue;
            }
            if !v.is_finite() || v <= 0.0 {
                return Err(FusionError::BadValue {
                    index,
                    value: v,
                    why: "depth must be positive and finite or NaN",
                });
            }
        }
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize) * (self.width as usize) + (x as usize)
    }

    /// Depth at `(x, y)`, or `None` for an invalid pixel.
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        let v = self.values[self.index(x, y)];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        !self.values[self.index(x, y)].is_nan()
    }

    /// Sets a valid depth; panics on non-positive or non-finite input.
    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        assert!(
            value.is_finite() && value > 0.0,
            "depth must be positive and finite, got {value}"
        );
        let idx = self.index(x, y);
        self.values[idx] = value;
    }

    pub fn set_invalid(&mut self, x: u32, y: u32) {
        let idx = self.index(x, y);
        self.values[idx] = f64::NAN;
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }

    fn same_shape(&self, other: &DepthMap) -> Result<(), FusionError> {
        if self.width != other.width || self.height != other.height {
            return Err(FusionError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

/// Dense per-pixel confidence in `[0, 1]`, row-major, always valid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl ConfidenceMap {
    /// Uniform confidence everywhere.
    pub fn uniform(width: u32, height: u32, value: f64) -> Result<ConfidenceMap, FusionError> {
        ConfidenceMap::from_values(
            width,
            height,
            vec![value; (width as usize) * (height as usize)],
        )
    }

    pub fn from_values(
        width: u32,
        height: u32,
        values: Vec<f64>,
    ) -> Result<ConfidenceMap, FusionError> {
        if width == 0 || height == 0 {
            return Err(FusionError::EmptyDimensions(width, height));
        }
        let expected = (width as u64) * (height as u64);
        if values.len() as u64 != expected {
            return Err(FusionError::Length {
                expected,
                got: values.len(),
            });
        }
        for (index, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(FusionError::BadValue {
                    index,
                    value: v,
                    why: "confidence must lie in [0, 1]",
                });
            }
        }
        Ok(ConfidenceMap {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[(y as usize) * (self.width as usize) + (x as usize)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        assert!(
            value.is_finite() && (0.0..=1.0).contains(&value),
            "confidence must lie in [0, 1], got {value}"
        );
        let idx = (y as usize) * (self.width as usize) + (x as usize);
        self.values[idx] = value;
    }
}

/// Thresholds steering [`classify_pixels`] and the weight regularizer of
/// [`confidence_weighted_loss`].
#[derive(Debug, Clone, Copy)]
pub struct FusionConfig {
    /// Monocular confidence below which a near pixel uses MVS alone.
    /// Must lie strictly inside `(0, 1)`.
    pub tau: f64,
    /// Range factor, strictly positive: a pixel is far once
    /// `d_mvs * sigma` exceeds the median valid MVS depth.
    pub sigma: f64,
    /// Nonnegative coefficient of the `Σ w²` term in the weighted loss.
    pub reg_lambda: f64,
}

impl Default for FusionConfig {
    fn default() -> FusionConfig {
        FusionConfig {
            tau: 0.05,
            sigma: 0.66,
            reg_lambda: 0.0,
        }
    }
}

impl FusionConfig {
    /// Checks the documented invariants.
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.tau.is_finite() && self.tau > 0.0 && self.tau < 1.0) {
            return Err(FusionError::BadValue {
                index: 0,
                value: self.tau,
                why: "tau must lie strictly inside (0, 1)",
            });
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(FusionError::BadValue {
                index: 0,
                value: self.sigma,
                why: "sigma must be positive",
            });
        }
        if !(self.reg_lambda.is_finite() && self.reg_lambda >= 0.0) {
            return Err(FusionError::BadValue {
                index: 0,
                value: self.reg_lambda,
                why: "reg_lambda must be nonnegative",
            });
        }
        Ok(())
    }
}

/// Per-pixel fusion decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PixelClass {
    /// Neither source had a usable value.
    Invalid = 0,
    /// MVS value used alone.
    Mvs = 1,
    /// Monocular value used alone.
    Mono = 2,
    /// Confidence-weighted blend of both.
    Blend = 3,
}

impl PixelClass {
    fn from_u8(v: u8) -> Option<PixelClass> {
        match v {
            0 => Some(PixelClass::Invalid),
            1 => Some(PixelClass::Mvs),
            2 => Some(PixelClass::Mono),
            3 => Some(PixelClass::Blend),
            _ => None,
        }
    }
}

/// Row-major per-pixel classes produced by fusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceMask {
    width: u32,
    height: u32,
    classes: Vec<PixelClass>,
}

impl ProvenanceMask {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn classes(&self) -> &[PixelClass] {
        &self.classes
    }

    pub fn get(&self, x: u32, y: u32) -> PixelClass {
        self.classes[(y as usize) * (self.width as usize) + (x as usize)]
    }

    pub fn count(&self, class: PixelClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }
}

/// Result of fitting `d_mvs ≈ scale · d_mono + shift`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct AffineFit {
    pub scale: f64,
    pub shift: f64,
    /// Pixels kept by the rejection step.
    pub inliers: usize,
    /// Root-mean-square residual over the inliers.
    pub residual_rms: f64,
}

impl AffineFit {
    /// Applies the fit to a monocular map. Pixels whose transformed value
    /// is not a positive finite depth become invalid.
    pub fn apply(&self, mono: &DepthMap) -> DepthMap {
        let values = mono
            .values()
            .iter()
            .map(|&v| {
                if v.is_nan() {
                    return f64::NAN;
                }
                let mapped = self.scale * v + self.shift;
                if mapped.is_finite() && mapped > 0.0 {
                    mapped
                } else {
                    f64::NAN
                }
            })
            .collect();
        DepthMap {
            width: mono.width(),
            height: mono.height(),
            values,
        }
    }
}

const MIN_OVERLAP: usize = 10;

fn fit_pairs(pairs: &[(f64, f64)], fit_shift: bool) -> Result<(f64, f64), FusionError> {
    let n = pairs.len() as f64;
    let (scale, shift) = if fit_shift {
        let mean_m = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_v = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut var = 0.0;
        for &(m, v) in pairs {
            cov += (m - mean_m) * (v - mean_v);
            var += (m - mean_m) * (m - mean_m);
        }
        // constant monocular input leaves the scale unobservable
        let floor = 1e-12 * (1.0 + mean_m * mean_m);
        if var < floor * n {
            return Err(FusionError::DegenerateFit);
        }
        let scale = cov / var;
        (scale, mean_v - scale * mean_m)
    } else {
        let mut num = 0.0;
        let mut den = 0.0;
        for &(m, v) in pairs {
            num += m * v;
            den += m * m;
        }
        if den < 1e-12 * n {
            return Err(FusionError::DegenerateFit);
        }
        (num / den, 0.0)
    };
    if !scale.is_finite() || !shift.is_finite() {
        return Err(FusionError::DegenerateFit);
    }
    Ok((scale, shift))
}

/// [`align_scale_opts`] with the shift term enabled.
pub fn align_scale(
    mono: &DepthMap,
    mvs: &DepthMap,
    mvs_conf: &ConfidenceMap,
    conf_floor: f64,
) -> Result<AffineFit, FusionError> {
    align_scale_opts(mono, mvs, mvs_conf, conf_floor, true)
}

/// Robustly fits `d_mvs ≈ scale · d_mono + shift` over pixels valid in
/// both maps whose MVS confidence is at least `conf_floor`: an ordinary
/// least-squares pass, then one refit after discarding residuals larger
/// than three times the median absolute residual. Needs at least ten
/// qualifying pixels at each stage. With `fit_shift` false the shift is
/// pinned to zero and only the scale is estimated.
pub fn align_scale_opts(
    mono: &DepthMap,
    mvs: &DepthMap,
    mvs_conf: &ConfidenceMap,
    conf_floor: f64,
    fit_shift: bool,
) -> Result<AffineFit, FusionError> {
    mono.same_shape(mvs)?;
    if mvs_conf.width() != mvs.width() || mvs_conf.height() != mvs.height() {
        return Err(FusionError::DimensionMismatch(
            mvs.width(),
            mvs.height(),
            mvs_conf.width(),
            mvs_conf.height(),
        ));
    }
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for ((m, v), c) in mono
        .values()
        .iter()
        .zip(mvs.values())
        .zip(mvs_conf.values())
    {
        if !m.is_nan() && !v.is_nan() && *c >= conf_floor {
            pairs.push((*m, *v));
        }
    }
    if pairs.len() < MIN_OVERLAP {
        return Err(FusionError::InsufficientOverlap {
            count: pairs.len(),
            needed: MIN_OVERLAP,
        });
    }
    let (scale, shift) = fit_pairs(&pairs, fit_shift)?;

    let mut abs_res: Vec<f64> = pairs
        .iter()
        .map(|&(m, v)| (v - (scale * m + shift)).abs())
        .collect();
    let median = crate::viewgraph::median_in_place(&mut abs_res);
    // the epsilon keeps a perfect fit from rejecting its own inliers
    let cutoff = 3.0 * median + 1e-12;
    let kept: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|&(m, v)| (v - (scale * m + shift)).abs() <= cutoff)
        .collect();
    if kept.len() < MIN_OVERLAP {
        return Err(FusionError::InsufficientOverlap {
            count: kept.len(),
            needed: MIN_OVERLAP,
        });
    }
    let (scale, shift) = fit_pairs(&kept, fit_shift)?;
    let rms = (kept
        .iter()
        .map(|&(m, v)| {
            let r = v - (scale * m + shift);
            r * r
        })
        .sum::<f64>()
        / kept.len() as f64)
        .sqrt();
    Ok(AffineFit {
        scale,
        shift,
        inliers: kept.len(),
        residual_rms: rms,
    })
}

/// Confidence-weighted squared depth error between a prediction and a
/// target, plus a quadratic penalty on the weights themselves:
/// `Σ w (d − d̂)² + reg_lambda Σ w²`, both sums running over pixels valid
/// in both maps. The loss is left unnormalized so it is exactly zero iff
/// every weighted residual vanishes and the regularizer is off.
pub fn confidence_weighted_loss(
    pred: &DepthMap,
    target: &DepthMap,
    weights: &ConfidenceMap,
    reg_lambda: f64,
) -> Result<f64, FusionError> {
    pred.same_shape(target)?;
    if pred.width() != weights.width() || pred.height() != weights.height() {
        return Err(FusionError::DimensionMismatch(
            pred.width(),
            pred.height(),
            weights.width(),
            weights.height(),
        ));
    }
    let mut data = 0.0;
    let mut reg = 0.0;
    for ((p, t), w) in pred
        .values()
        .iter()
        .zip(target.values())
        .zip(weights.values())
    {
        if p.is_nan() || t.is_nan() {
            continue;
        }
        data += w * (p - t) * (p - t);
        reg += w * w;
    }
    Ok(data + reg_lambda * reg)
}

/// Decides a [`PixelClass`] for every pixel. `mono` is expected to already
/// be metric (see [`AffineFit::apply`]); `mono_conf` defaults to full
/// confidence when absent.
pub fn classify_pixels(
    mvs: &DepthMap,
    mono: &DepthMap,
    mono_conf: Option<&ConfidenceMap>,
    cfg: &FusionConfig,
) -> Result<ProvenanceMask, FusionError> {
    mvs.same_shape(mono)?;
    if let Some(c) = mono_conf {
        if c.width() != mvs.width() || c.height() != mvs.height() {
            return Err(FusionError::DimensionMismatch(
                mvs.width(),
                mvs.height(),
                c.width(),
                c.height(),
            ));
        }
    }
    let mut valid_depths: Vec<f64> = mvs.values().iter().copied().filter(|v| !v.is_nan()).collect();
    if valid_depths.is_empty() {
        // the far/near split needs a median MVS depth to compare against
        return Err(FusionError::EmptyValidSet);
    }
    let median = crate::viewgraph::median_in_place(&mut valid_depths);

    let mut classes = Vec::with_capacity(mvs.len());
    for idx in 0..mvs.len() {
        let d_mvs = mvs.values()[idx];
        let d_mono = mono.values()[idx];
        let class = match (d_mvs.is_nan(), d_mono.is_nan()) {
            (true, true) => PixelClass::Invalid,
            (true, false) => PixelClass::Mono,
            (false, true) => PixelClass::Mvs,
            (false, false) => {
                let far = d_mvs * cfg.sigma > median;
                if far {
                    PixelClass::Mono
                } else {
                    let c = mono_conf.map_or(1.0, |m| m.values()[idx]);
                    if c > cfg.tau {
                        PixelClass::Blend
                    } else {
                        PixelClass::Mvs
                    }
                }
            }
        };
        classes.push(class);
    }
    Ok(ProvenanceMask {
        width: mvs.width(),
        height: mvs.height(),
        classes,
    })
}

/// Realizes a provenance mask into a fused depth map. Missing confidence
/// maps count as confidence 1 everywhere; a blend whose two confidences
/// are both zero falls back to the plain average.
pub fn fuse_with_mask(
    mvs: &DepthMap,
    mono: &DepthMap,
    mvs_conf: Option<&ConfidenceMap>,
    mono_conf: Option<&ConfidenceMap>,
    mask: &ProvenanceMask,
) -> Result<DepthMap, FusionError> {
    mvs.same_shape(mono)?;
    if mask.width() != mvs.width() || mask.height() != mvs.height() {
        return Err(FusionError::DimensionMismatch(
            mvs.width(),
            mvs.height(),
            mask.width(),
            mask.height(),
        ));
    }
    for conf in [mvs_conf, mono_conf].into_iter().flatten() {
        if conf.width() != mvs.width() || conf.height() != mvs.height() {
            return Err(FusionError::DimensionMismatch(
                mvs.width(),
                mvs.height(),
                conf.width(),
                conf.height(),
            ));
        }
    }
    let mut values = Vec::with_capacity(mvs.len());
    for idx in 0..mvs.len() {
        let value = match mask.classes[idx] {
            PixelClass::Invalid => f64::NAN,
            PixelClass::Mvs => mvs.values()[idx],
            PixelClass::Mono => mono.values()[idx],
            PixelClass::Blend => {
                let (dv, dm) = (mvs.values()[idx], mono.values()[idx]);
                let cv = mvs_conf.map_or(1.0, |c| c.values()[idx]);
                let cm = mono_conf.map_or(1.0, |c| c.values()[idx]);
                if cv + cm > 0.0 {
                    (cv * dv + cm * dm) / (cv + cm)
                } else {
                    0.5 * (dv + dm)
                }
            }
        };
        values.push(value);
    }
    Ok(DepthMap {
        width: mvs.width(),
        height: mvs.height(),
        values,
    })
}

/// Classifies every pixel with [`classify_pixels`] and fuses accordingly,
/// returning the fused map together with the mask that produced it.
pub fn fuse(
    mvs: &DepthMap,
    mono: &DepthMap,
    mvs_conf: Option<&ConfidenceMap>,
    mono_conf: Option<&ConfidenceMap>,
    cfg: &FusionConfig,
) -> Result<(DepthMap, ProvenanceMask), FusionError> {
    let mask = classify_pixels(mvs, mono, mono_conf, cfg)?;
    let fused = fuse_with_mask(mvs, mono, mvs_conf, mono_conf, &mask)?;
    Ok((fused, mask))
}

/// Depth error summary over pixels valid in both maps.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DepthErrorStats {
    /// Root-mean-square error.
    pub rmse: f64,
    /// Mean of `|pred - truth| / truth`.
    pub abs_rel: f64,
    /// Jointly valid pixels over total pixels.
    pub valid_fraction: f64,
}

/// Compares a predicted depth map against a reference over pixels valid in
/// both. Errors with [`FusionError::EmptyValidSet`] when they never overlap.
pub fn depth_error_stats(
    pred: &DepthMap,
    truth: &DepthMap,
) -> Result<DepthErrorStats, FusionError> {
    pred.same_shape(truth)?;
    let mut count = 0usize;
    let mut sq = 0.0;
    let mut rel = 0.0;
    for (p, t) in pred.values().iter().zip(truth.values()) {
        if p.is_nan() || t.is_nan() {
            continue;
        }
        count += 1;
        sq += (p - t) * (p - t);
        rel += (p - t).abs() / t;
    }
    if count == 0 {
        return Err(FusionError::EmptyValidSet);
    }
    Ok(DepthErrorStats {
        rmse: (sq / count as f64).sqrt(),
        abs_rel: rel / count as f64,
        valid_fraction: count as f64 / pred.len() as f64,
    })
}

// ---------------------------------------------------------------------------
// binary formats

const DFMP_MAGIC: &[u8; 4] = b"DFMP";
const PMSK_MAGIC: &[u8; 4] = b"PMSK";
const KIND_DEPTH: u8 = 0;
const KIND_CONFIDENCE: u8 = 1;

fn write_dfmp(width: u32, height: u32, kind: u8, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 4 * values.len());
    out.extend_from_slice(DFMP_MAGIC);
    let mut b4 = [0u8; 4];
    LittleEndian::write_u32(&mut b4, width);
    out.extend_from_slice(&b4);
    LittleEndian::write_u32(&mut b4, height);
    out.extend_from_slice(&b4);
    out.push(kind);
    for &v in values {
        // clamp instead of overflowing to infinity on absurd depths
        let f = if v.is_nan() {
            f32::NAN
        } else {
            v.clamp(-f32::MAX as f64, f32::MAX as f64) as f32
        };
        LittleEndian::write_f32(&mut b4, f);
        out.extend_from_slice(&b4);
    }
    out
}

fn read_dfmp(bytes: &[u8], expected_kind: u8) -> Result<(u32, u32, Vec<f64>), FusionError> {
    if bytes.len() < 13 {
        return Err(FusionError::Length {
            expected: 13,
            got: bytes.len(),
        });
    }
    if &bytes[..4] != DFMP_MAGIC {
        return Err(FusionError::BadMagic { expected: "DFMP" });
    }
    let width = LittleEndian::read_u32(&bytes[4..8]);
    let height = LittleEndian::read_u32(&bytes[8..12]);
    let kind = bytes[12];
    if kind != KIND_DEPTH && kind != KIND_CONFIDENCE {
        return Err(FusionError::WrongKind {
            expected: expected_kind,
            got: kind,
        });
    }
    if kind != expected_kind {
        return Err(FusionError::WrongKind {
            expected: expected_kind,
            got: kind,
        });
    }
    let count = (width as u64) * (height as u64);
    let expected = 13 + 4 * count;
    if bytes.len() as u64 != expected {
        return Err(FusionError::Length {
            expected,
            got: bytes.len(),
        });
    }
    let mut values = Vec::with_capacity(count as usize);
    for k in 0..count as usize {
        let v = LittleEndian::read_f32(&bytes[13 + 4 * k..17 + 4 * k]);
        values.push(v as f64);
    }
    Ok((width, height, values))
}

/// Serializes a depth map (`DFMP`, kind 0).
pub fn write_depth_map(map: &DepthMap) -> Vec<u8> {
    write_dfmp(map.width, map.height, KIND_DEPTH, &map.values)
}

/// Parses and validates a depth map blob.
pub fn read_depth_map(bytes: &[u8]) -> Result<DepthMap, FusionError> {
    let (width, height, values) = read_dfmp(bytes, KIND_DEPTH)?;
    DepthMap::from_values(width, height, values)
}

/// Serializes a confidence map (`DFMP`, kind 1).
pub fn write_confidence_map(map: &ConfidenceMap) -> Vec<u8> {
    write_dfmp(map.width, map.height, KIND_CONFIDENCE, &map.values)
}

/// Parses and validates a confidence map blob.
pub fn read_confidence_map(bytes: &[u8]) -> Result<ConfidenceMap, FusionError> {
    let (width, height, values) = read_dfmp(bytes, KIND_CONFIDENCE)?;
    ConfidenceMap::from_values(width, height, values)
}

/// Serializes a provenance mask (`PMSK`).
pub fn write_provenance_mask(mask: &ProvenanceMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + mask.classes.len());
    out.extend_from_slice(PMSK_MAGIC);
    let mut b4 = [0u8; 4];
    LittleEndian::write_u32(&mut b4, mask.width);
    out.extend_from_slice(&b4);
    LittleEndian::write_u32(&mut b4, mask.height);
    out.extend_from_slice(&b4);
    out.extend(mask.classes.iter().map(|&c| c as u8));
    out
}

/// Parses and validates a provenance mask blob.
pub fn read_provenance_mask(bytes: &[u8]) -> Result<ProvenanceMask, FusionError> {
    if bytes.len() < 12 {
        return Err(FusionError::Length {
            expected: 12,
            got: bytes.len(),
        });
    }
    if &bytes[..4] != PMSK_MAGIC {
        return Err(FusionError::BadMagic { expected: "PMSK" });
    }
    let width = LittleEndian::read_u32(&bytes[4..8]);
    let height = LittleEndian::read_u32(&bytes[8..12]);
    if width == 0 || height == 0 {
        return Err(FusionError::EmptyDimensions(width, height));
    }
    let count = (width as u64) * (height as u64);
    let expected = 12 + count;
    if bytes.len() as u64 != expected {
        return Err(FusionError::Length {
            expected,
            got: bytes.len(),
        });
    }
    let mut classes = Vec::with_capacity(count as usize);
    for (offset, &b) in bytes[12..].iter().enumerate() {
        classes.push(PixelClass::from_u8(b).ok_or(FusionError::BadValue {
            index: offset,
            value: b as f64,
            why: "pixel class must be 0..=3",
        })?);
    }
    Ok(ProvenanceMask {
        width,
        height,
        classes,
    })
}
