//! Rotation algebra on SO(3), represented by unit quaternions.
//!
//! Quaternions are stored as `(w, x, y, z)` with `w` the scalar part, kept
//! unit-norm and sign-canonical at all times: `w >= 0`, and when `w == 0`
//! the first nonzero vector component is positive. Canonicalization makes
//! the double cover invisible to callers, so two `Rotation` values compare
//! equal exactly when they are the same rotation.
//!
//! Distances come in two flavors used by the optimization layers:
//! [`geodesic_distance`] is the rotation angle between two elements, and
//! [`quat_distance`] is the sign-resolved chordal distance on the quaternion
//! sphere. They are related by `d_q = 2 sin(gamma / 4)`.

use thiserror::Error;

/// Unit-norm tolerance enforced after every constructor and operation.
pub const EPS_UNIT: f64 = 1e-9;

/// Guard band around the cut locus at angle pi where [`Rotation::log_map`]
/// refuses to pick an axis.
pub const EPS_ANGLE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum So3Error {
    /// Input quaternion has no usable direction.
    #[error("quaternion norm {0:.3e} is too small to normalize")]
    ZeroNorm(f64),
    /// Input contained NaN or infinity.
    #[error("quaternion component is not finite")]
    NotFinite,
    /// The rotation angle is inside the guard band around pi, where the
    /// rotation axis is numerically unidentifiable.
    #[error("rotation angle {angle} rad is within {margin:.1e} of the cut locus at pi")]
    CutLocus { angle: f64, margin: f64 },
    /// Matrix passed to [`Rotation::from_matrix`] is not close to a rotation.
    #[error("matrix is not a rotation (trace-based reconstruction failed)")]
    NotARotation,
}

/// A rotation in SO(3) as a sign-canonical unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

/// Axis-angle form of a rotation: unit axis and angle in `[0, pi]`.
///
/// The identity rotation maps to angle 0 with axis `(0, 0, 1)` by convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    pub axis: [f64; 3],
    pub angle: f64,
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a rotation from quaternion components, normalizing and
    /// canonicalizing. Rejects non-finite input and norms below [`EPS_UNIT`].
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Rotation, So3Error> {
        if !(w.is_finite() && x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(So3Error::NotFinite);
        }
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < EPS_UNIT {
            return Err(So3Error::ZeroNorm(norm));
        }
        Ok(Rotation::normalized(w, x, y, z))
    }

    /// Internal constructor: renormalizes a near-unit quaternion and applies
    /// the sign convention. Callers guarantee the norm is bounded away from 0.
    ///
    /// Quaternions already unit to within 1e-12 are left untouched, which
    /// makes canonicalization exactly idempotent at the bit level.
    fn normalized(w: f64, x: f64, y: f64, z: f64) -> Rotation {
        let n2 = w * w + x * x + y * y + z * z;
        let (mut w, mut x, mut y, mut z) = if (n2 - 1.0).abs() > 1e-12 {
            let norm = n2.sqrt();
            (w / norm, x / norm, y / norm, z / norm)
        } else {
            (w, x, y, z)
        };
        let flip = if w != 0.0 {
            w < 0.0
        } else if x != 0.0 {
            x < 0.0
        } else if y != 0.0 {
            y < 0.0
        } else {
            z < 0.0
        };
        if flip {
            w = -w;
            x = -x;
            y = -y;
            z = -z;
        }
        // Clear negative zeros so equal rotations are bitwise equal.
        Rotation {
            w: w + 0.0,
            x: x + 0.0,
            y: y + 0.0,
            z: z + 0.0,
        }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Rotation, So3Error> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !n.is_finite() || !angle.is_finite() {
            return Err(So3Error::NotFinite);
        }
        if n < EPS_UNIT {
            return Err(So3Error::ZeroNorm(n));
        }
        let half = 0.5 * angle;
        let s = half.sin() / n;
        Ok(Rotation::normalized(
            half.cos(),
            axis[0] * s,
            axis[1] * s,
            axis[2] * s,
        ))
    }

    /// Rotation about the x axis.
    pub fn rot_x(angle: f64) -> Rotation {
        Rotation::normalized((0.5 * angle).cos(), (0.5 * angle).sin(), 0.0, 0.0)
    }

    /// Rotation about the y axis.
    pub fn rot_y(angle: f64) -> Rotation {
        Rotation::normalized((0.5 * angle).cos(), 0.0, (0.5 * angle).sin(), 0.0)
    }

    /// Rotation about the z axis.
    pub fn rot_z(angle: f64) -> Rotation {
        Rotation::normalized((0.5 * angle).cos(), 0.0, 0.0, (0.5 * angle).sin())
    }

    pub fn wxyz(&self) -> (f64, f64, f64, f64) {
        (self.w, self.x, self.y, self.z)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Composition `self ∘ other`: the rotation that applies `other` first,
    /// then `self`. Matches the product of the rotation matrices.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let (aw, ax, ay, az) = (self.w, self.x, self.y, self.z);
        let (bw, bx, by, bz) = (other.w, other.x, other.y, other.z);
        Rotation::normalized(
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )
    }

    pub fn inverse(&self) -> Rotation {
        Rotation::normalized(self.w, -self.x, -self.y, -self.z)
    }

    /// Rotation angle in `[0, pi]` relative to the identity.
    ///
    /// Uses the `atan2` form so the identity maps to exactly zero; see
    /// [`geodesic_distance`] for why the arccos form is avoided.
    pub fn angle(&self) -> f64 {
        let s = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * s.atan2(self.w.abs())
    }

    /// Applies the rotation to a 3-vector.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        // v' = v + 2 w (u x v) + 2 u x (u x v), u = (x, y, z)
        let u = [self.x, self.y, self.z];
        let uv = cross(u, v);
        let uuv = cross(u, uv);
        [
            v[0] + 2.0 * (self.w * uv[0] + uuv[0]),
            v[1] + 2.0 * (self.w * uv[1] + uuv[1]),
            v[2] + 2.0 * (self.w * uv[2] + uuv[2]),
        ]
    }

    /// Exponential map from a tangent vector (axis times angle, radians).
    /// Total: vectors of any magnitude are accepted and wrap.
    pub fn exp_map(v: [f64; 3]) -> Rotation {
        let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let half = 0.5 * theta;
        // sin(theta/2)/theta, stable as theta -> 0.
        let k = if theta < 1e-6 {
            0.5 - theta * theta / 48.0
        } else {
            half.sin() / theta
        };
        Rotation::normalized(half.cos(), v[0] * k, v[1] * k, v[2] * k)
    }

    /// Logarithm map to the tangent space at the identity. Errors inside the
    /// guard band of [`EPS_ANGLE`] around pi, where the axis is undefined
    /// up to sign.
    pub fn log_map(&self) -> Result<[f64; 3], So3Error> {
        let s = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        let angle = 2.0 * s.atan2(self.w);
        if angle > std::f64::consts::PI - EPS_ANGLE {
            return Err(So3Error::CutLocus {
                angle,
                margin: EPS_ANGLE,
            });
        }
        // angle/sin(angle/2) with a series fallback near the identity.
        let k = if s < 1e-9 {
            2.0 / self.w
        } else {
            angle / s
        };
        Ok([self.x * k, self.y * k, self.z * k])
    }

    pub fn to_axis_angle(&self) -> AxisAngle {
        let s = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        if s < 1e-12 {
            return AxisAngle {
                axis: [0.0, 0.0, 1.0],
                angle: 0.0,
            };
        }
        AxisAngle {
            axis: [self.x / s, self.y / s, self.z / s],
            angle: 2.0 * s.atan2(self.w),
        }
    }

    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Result<Rotation, So3Error> {
        for row in m {
            for v in row {
                if !v.is_finite() {
                    return Err(So3Error::NotFinite);
                }
            }
        }
        // Shepperd's method: pick the largest of the four squared components.
        let trace = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            w = (m[2][1] - m[1][2]) / s;
            x = 0.25 * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = 0.25 * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = 0.25 * s;
        }
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(So3Error::NotARotation);
        }
        Ok(Rotation::normalized(w, x, y, z))
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Uniformly distributed random rotation (four normal deviates,
    /// normalized).
    pub fn sample_uniform<R: rand::Rng>(rng: &mut R) -> Rotation {
        use rand_distr::{Distribution, StandardNormal};
        loop {
            let w: f64 = StandardNormal.sample(rng);
            let x: f64 = StandardNormal.sample(rng);
            let y: f64 = StandardNormal.sample(rng);
            let z: f64 = StandardNormal.sample(rng);
            let n2 = w * w + x * x + y * y + z * z;
            if n2 > 1e-12 {
                return Rotation::normalized(w, x, y, z);
            }
        }
    }
}

impl std::fmt::Display for Rotation {
    /// Formats as `qw qx qy qz` with 17 significant digits, enough to
    /// round-trip the exact f64 values through text.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:.16e} {:.16e} {:.16e} {:.16e}",
            self.w, self.x, self.y, self.z
        )
    }
}

/// Angle of the relative rotation between `a` and `b`, in `[0, pi]`.
///
/// Computed as `4 atan2(2 sin(angle/4), 2 cos(angle/4))` from the two
/// quaternion chord lengths, collapsing the double cover. Unlike the
/// `2 acos(|<q_a, q_b>|)` form, this stays fully accurate at both ends of
/// the range: identical rotations give exactly zero instead of a residual
/// on the order of the arccos resolution floor.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    let dm = (a.w - b.w).powi(2) + (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2);
    let dp = (a.w + b.w).powi(2) + (a.x + b.x).powi(2) + (a.y + b.y).powi(2) + (a.z + b.z).powi(2);
    let (near, far) = if dm <= dp { (dm, dp) } else { (dp, dm) };
    4.0 * near.sqrt().atan2(far.sqrt())
}

/// Chordal distance on the quaternion sphere with the sign ambiguity
/// resolved: `min(|q_a - q_b|, |q_a + q_b|)`. Lies in `[0, sqrt(2)]` and
/// equals `2 sin(geodesic / 4)`.
pub fn quat_distance(a: &Rotation, b: &Rotation) -> f64 {
    let dm = (a.w - b.w).powi(2) + (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2);
    let dp = (a.w + b.w).powi(2) + (a.x + b.x).powi(2) + (a.y + b.y).powi(2) + (a.z + b.z).powi(2);
    dm.min(dp).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn canonical_sign_flips_negative_scalar() {
        let r = Rotation::from_wxyz(-0.5, 0.5, 0.5, 0.5).unwrap();
        let (w, x, y, z) = r.wxyz();
        assert!(w > 0.0);
        assert_eq!((w, x, y, z), (0.5, -0.5, -0.5, -0.5));
    }

    #[test]
    fn canonical_tie_break_on_zero_scalar() {
        let r = Rotation::from_wxyz(0.0, 0.0, -1.0, 0.0).unwrap();
        assert_eq!(r.wxyz(), (0.0, 0.0, 1.0, 0.0));
        // Negative zero in the scalar slot must not survive.
        assert_eq!(r.wxyz().0.to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn double_cover_collapses_to_equality() {
        let q = Rotation::from_wxyz(0.3, -0.4, 0.5, 0.6).unwrap();
        let neg = Rotation::from_wxyz(-0.3, 0.4, -0.5, -0.6).unwrap();
        assert_eq!(q, neg);
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(matches!(
            Rotation::from_wxyz(0.0, 0.0, 0.0, 0.0),
            Err(So3Error::ZeroNorm(_))
        ));
        assert!(matches!(
            Rotation::from_wxyz(f64::NAN, 0.0, 0.0, 1.0),
            Err(So3Error::NotFinite)
        ));
    }

    #[test]
    fn compose_z_rotations_adds_angles() {
        let a = Rotation::rot_z(10f64.to_radians());
        let b = Rotation::rot_z(20f64.to_radians());
        let c = a.compose(&b);
        assert!((c.angle() - 30f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let r = Rotation::from_wxyz(0.1, 0.7, -0.3, 0.2).unwrap();
        let i = r.compose(&r.inverse());
        assert!(quat_distance(&i, &Rotation::IDENTITY) < 1e-12);
    }

    #[test]
    fn exp_log_round_trip_small_angle() {
        let v = [1e-8, -2e-8, 0.5e-8];
        let r = Rotation::exp_map(v);
        let back = r.log_map().unwrap();
        for k in 0..3 {
            assert!((back[k] - v[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn log_map_errors_inside_cut_locus_band() {
        let near_pi = Rotation::exp_map([PI - 1e-7, 0.0, 0.0]);
        assert!(matches!(
            near_pi.log_map(),
            Err(So3Error::CutLocus { .. })
        ));
        let outside = Rotation::exp_map([PI - 2e-6, 0.0, 0.0]);
        assert!(outside.log_map().is_ok());
    }

    #[test]
    fn quat_distance_matches_sine_relation() {
        for deg in [0.0f64, 1.0, 17.0, 90.0, 179.0] {
            let r = Rotation::rot_y(deg.to_radians());
            let gamma = geodesic_distance(&r, &Rotation::IDENTITY);
            let dq = quat_distance(&r, &Rotation::IDENTITY);
            assert!((dq - 2.0 * (gamma / 4.0).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_axis_angle_convention() {
        let aa = Rotation::IDENTITY.to_axis_angle();
        assert_eq!(aa.axis, [0.0, 0.0, 1.0]);
        assert_eq!(aa.angle, 0.0);
    }

    #[test]
    fn display_round_trips_exact_bits() {
        let r = Rotation::from_wxyz(0.3, -0.4, 0.51, 0.62).unwrap();
        let text = r.to_string();
        let parts: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse().unwrap())
            .collect();
        let back = Rotation::from_wxyz(parts[0], parts[1], parts[2], parts[3]).unwrap();
        assert_eq!(r, back);
        assert_eq!(r.as_array(), back.as_array());
    }
}
