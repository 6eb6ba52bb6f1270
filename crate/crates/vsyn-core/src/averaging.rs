//! Robust rotation averaging over a view graph.
//!
//! Given a graph whose vertices carry initial absolute rotations (usually
//! from a spanning tree) and whose edges carry relative measurements, the
//! solver refines the absolutes so that `R_j ∘ R_i⁻¹` matches the
//! measurements in a robust L1 sense:
//!
//! ```text
//! minimize  Σ_edges w_e · γ(rel_e, R_j ∘ R_i⁻¹)
//! ```
//!
//! with `γ` the geodesic angle and the sum over non-outlier edges. The L1
//! norm is handled by iteratively reweighted least squares: every tangent
//! residual is weighted by `1 / max(ε, γ)`, which turns each vertex visit
//! into a Weiszfeld step toward the geodesic median of its neighbors'
//! implied rotations.
//!
//! Absolute rotations are only determined up to a global right factor (a
//! change of world frame). [`gauge_align`] removes that freedom before any
//! comparison against reference rotations.

use thiserror::Error;

use crate::so3::{geodesic_distance, Rotation, EPS_ANGLE};
use crate::viewgraph::{GraphError, ViewGraph};

#[derive(Debug, Error)]
pub enum AveragingError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("gauge fit is degenerate: leading eigenvalue is not isolated")]
    DegenerateGauge,
}

/// Knobs for [`robust_average`].
#[derive(Debug, Clone, Copy)]
pub struct AveragingConfig {
    /// Maximum number of full sweeps.
    pub max_iters: usize,
    /// Stop once no vertex moved by more than this angle (radians) in a sweep.
    pub step_tolerance: f64,
    /// Floor for IRLS residuals; keeps weights finite near zero residual.
    pub irls_epsilon: f64,
    /// Vertex anchor strength used by the regularized objective [`l_mra`].
    pub beta: f64,
    /// Fraction of the tangent step applied per vertex visit.
    pub damping: f64,
}

impl Default for AveragingConfig {
    fn default() -> AveragingConfig {
        AveragingConfig {
            max_iters: 100,
            step_tolerance: 1e-10,
            irls_epsilon: 1e-3,
            beta: 0.1,
            damping: 1.0,
        }
    }
}

/// Outcome of a [`robust_average`] run.
#[derive(Debug, Clone)]
pub struct AveragingResult {
    pub graph: ViewGraph,
    pub iterations: usize,
    pub converged: bool,
    /// Final value of the edge consistency objective.
    pub objective: f64,
}

/// Weighted L1 consistency of the absolutes with the edge measurements:
/// `Σ w_e · γ(rel_e, R_j ∘ R_i⁻¹)` over non-outlier edges.
///
/// Errors with [`GraphError::NotInitialized`] if an endpoint of a counted
/// edge has no absolute rotation.
pub fn consistency_objective(g: &ViewGraph) -> Result<f64, AveragingError> {
    let mut total = 0.0;
    for e in g.edges() {
        if e.outlier {
            continue;
        }
        let ri = g.absolute(e.i).ok_or(GraphError::NotInitialized { id: e.i })?;
        let rj = g.absolute(e.j).ok_or(GraphError::NotInitialized { id: e.j })?;
        let fitted = rj.compose(&ri.inverse());
        total += e.weight * geodesic_distance(&e.rel, &fitted);
    }
    Ok(total)
}

/// Consistency objective plus an anchor pulling every vertex toward its
/// rotation in `reference`:
///
/// ```text
/// L(g) = Σ_edges w_e · γ(rel_e, R_j R_i⁻¹)  +  β · Σ_vertices γ(R_i, R̃_i)
/// ```
///
/// Both graphs must declare the same vertex ids and carry absolutes.
pub fn l_mra(g: &ViewGraph, reference: &ViewGraph, beta: f64) -> Result<f64, AveragingError> {
    if !g.same_vertex_set(reference) {
        return Err(GraphError::MismatchedGraphs.into());
    }
    let mut total = consistency_objective(g)?;
    for v in g.vertices() {
        let est = v.absolute.ok_or(GraphError::NotInitialized { id: v.id })?;
        let anchor = reference
            .absolute(v.id)
            .ok_or(GraphError::NotInitialized { id: v.id })?;
        total += beta * geodesic_distance(&est, &anchor);
    }
    Ok(total)
}

/// Log map that never fails: rotations on the cut locus are pulled just
/// inside it. Outlier edges routinely produce residuals near π, and the
/// solver must keep going through them.
fn saturating_log(r: &Rotation) -> [f64; 3] {
    let aa = r.to_axis_angle();
    let angle = aa.angle.min(std::f64::consts::PI - EPS_ANGLE);
    [aa.axis[0] * angle, aa.axis[1] * angle, aa.axis[2] * angle]
}

/// Robust IRLS rotation averaging with damped Gauss-Seidel sweeps.
///
/// Vertices are visited in ascending id order. Each visit takes a Weiszfeld
/// step toward the geodesic median of the rotations implied by the incident
/// non-outlier edges, using the neighbors' latest values. After each sweep
/// the candidate assignment is accepted only if the objective did not
/// increase; otherwise the sweep is retried with the step halved, up to
/// eight times. The run converges when the largest vertex update in an
/// accepted sweep falls below `step_tolerance`.
///
/// Every vertex must already carry an absolute rotation.
pub fn robust_average(
    g: &ViewGraph,
    cfg: &AveragingConfig,
) -> Result<AveragingResult, AveragingError> {
    if g.vertex_count() == 0 {
        return Err(GraphError::Empty.into());
    }
    for v in g.vertices() {
        if v.absolute.is_none() {
            return Err(GraphError::NotInitialized { id: v.id }.into());
        }
    }
    let ids = g.sorted_ids();
    let adjacency = g.adjacency();
    let mut current = g.clone();
    let mut objective = consistency_objective(&current)?;
    let mut iterations = 0;
    let mut converged = false;

    'outer: for _ in 0..cfg.max_iters {
        iterations += 1;
        let mut step = cfg.damping;
        for _attempt in 0..=8 {
            let (candidate, max_move) = sweep(&current, &ids, &adjacency, cfg, step);
            let cand_obj = consistency_objective(&candidate)?;
            if cand_obj <= objective {
                current = candidate;
                objective = cand_obj;
                if max_move < cfg.step_tolerance {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            step *= 0.5;
            if _attempt == 8 {
                // No step length reduces the objective; the sweep direction
                // is exhausted, which is as converged as L1 sweeps get.
                converged = true;
                break 'outer;
            }
        }
    }

    Ok(AveragingResult {
        graph: current,
        iterations,
        converged,
        objective,
    })
}

/// One Gauss-Seidel sweep; returns the updated graph and the largest
/// rotation angle any vertex moved by.
fn sweep(
    g: &ViewGraph,
    ids: &[u32],
    adjacency: &std::collections::BTreeMap<u32, Vec<(u32, usize)>>,
    cfg: &AveragingConfig,
    step: f64,
) -> (ViewGraph, f64) {
    let mut out = g.clone();
    let mut max_move: f64 = 0.0;
    for &id in ids {
        let r = out.absolute(id).unwrap();
        let mut num = [0.0f64; 3];
        let mut den = 0.0f64;
        for &(nbr, idx) in &adjacency[&id] {
            let e = &out.edges()[idx];
            if e.outlier {
                continue;
            }
            // rel oriented id -> nbr estimates R_nbr ∘ R_id⁻¹, so the edge
            // implies R_id = rel(nbr -> id) ∘ R_nbr.
            let implied = out.oriented_rel(idx, nbr, id).compose(&out.absolute(nbr).unwrap());
            let v = saturating_log(&implied.compose(&r.inverse()));
            let residual = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let w = e.weight / residual.max(cfg.irls_epsilon);
            num[0] += w * v[0];
            num[1] += w * v[1];
            num[2] += w * v[2];
            den += w;
        }
        if den == 0.0 {
            continue;
        }
        let delta = [
            step * num[0] / den,
            step * num[1] / den,
            step * num[2] / den,
        ];
        let moved = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
        max_move = max_move.max(moved);
        let update = Rotation::exp_map(delta);
        out.set_absolute(id, Some(update.compose(&r))).unwrap();
    }
    (out, max_move)
}

/// Chordal alignment objective: `Σ_i ‖R̂_i ∘ G − R_i‖²_F` written in terms of
/// the geodesic angle per vertex (`‖A − B‖²_F = 8 sin²(γ/2)`).
pub fn chordal_alignment_objective(
    est: &ViewGraph,
    reference: &ViewGraph,
    gauge: &Rotation,
) -> Result<f64, AveragingError> {
    if !est.same_vertex_set(reference) {
        return Err(GraphError::MismatchedGraphs.into());
    }
    let mut total = 0.0;
    for v in est.vertices() {
        let e = v.absolute.ok_or(GraphError::NotInitialized { id: v.id })?;
        let t = reference
            .absolute(v.id)
            .ok_or(GraphError::NotInitialized { id: v.id })?;
        let gamma = geodesic_distance(&e.compose(gauge), &t);
        let s = (0.5 * gamma).sin();
        total += 8.0 * s * s;
    }
    Ok(total)
}

/// Finds the global rotation `G` minimizing the chordal misfit
/// `Σ_i ‖R̂_i ∘ G − R_i‖²_F` and returns `est` with every absolute replaced
/// by `R̂_i ∘ G`, plus the gauge itself.
///
/// Writing `q_i` for the quaternion of `R̂_i⁻¹ ∘ R_i`, the optimal gauge is
/// the principal eigenvector of `Σ q_i q_iᵀ`; the outer products are
/// insensitive to the quaternion double cover, so no sign bookkeeping is
/// needed.
pub fn gauge_align(
    est: &ViewGraph,
    reference: &ViewGraph,
) -> Result<(ViewGraph, Rotation), AveragingError> {
    if !est.same_vertex_set(reference) {
        return Err(GraphError::MismatchedGraphs.into());
    }
    if est.vertex_count() == 0 {
        return Err(GraphError::Empty.into());
    }
    let mut m = [[0.0f64; 4]; 4];
    for v in est.vertices() {
        let e = v.absolute.ok_or(GraphError::NotInitialized { id: v.id })?;
        let t = reference
            .absolute(v.id)
            .ok_or(GraphError::NotInitialized { id: v.id })?;
        let q = e.inverse().compose(&t).as_array();
        for a in 0..4 {
            for b in 0..4 {
                m[a][b] += q[a] * q[b];
            }
        }
    }
    let (eigenvalues, eigenvectors) = jacobi_eigen_4x4(m);
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
    let (top, second) = (order[0], order[1]);
    let scale = eigenvalues[top].abs().max(1.0);
    if (eigenvalues[top] - eigenvalues[second]).abs() < 1e-9 * scale {
        return Err(AveragingError::DegenerateGauge);
    }
    let v = eigenvectors[top];
    let gauge = Rotation::from_wxyz(v[0], v[1], v[2], v[3])
        .map_err(|_| AveragingError::DegenerateGauge)?;

    let mut aligned = est.clone();
    for v in est.vertices() {
        let r = v.absolute.unwrap();
        aligned.set_absolute(v.id, Some(r.compose(&gauge)))?;
    }
    Ok((aligned, gauge))
}

/// Cyclic Jacobi eigendecomposition of a symmetric 4x4 matrix. Returns
/// `(eigenvalues, eigenvectors)` with `eigenvectors[k]` the unit eigenvector
/// for `eigenvalues[k]`.
fn jacobi_eigen_4x4(mut a: [[f64; 4]; 4]) -> ([f64; 4], [[f64; 4]; 4]) {
    // columns of v accumulate the rotations: a = v · diag · vᵀ
    let mut v = [[0.0f64; 4]; 4];
    for k in 0..4 {
        v[k][k] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..4 {
            for q in (p + 1)..4 {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..4 {
            for q in (p + 1)..4 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..4 {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = [a[0][0], a[1][1], a[2][2], a[3][3]];
    let mut eigenvectors = [[0.0f64; 4]; 4];
    for k in 0..4 {
        for row in 0..4 {
            eigenvectors[k][row] = v[row][k];
        }
    }
    (eigenvalues, eigenvectors)
}

/// Summary statistics over per-vertex angular errors, in radians.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub rms: f64,
    pub max: f64,
}

impl ErrorStats {
    pub fn from_values(values: &mut [f64]) -> Option<ErrorStats> {
        if values.is_empty() {
            return None;
        }
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let rms = (values.iter().map(|v| v * v).sum::<f64>() / count as f64).sqrt();
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let median = crate::viewgraph::median_in_place(values);
        Some(ErrorStats {
            count,
            mean,
            median,
            rms,
            max,
        })
    }
}

/// Per-vertex geodesic errors between two graphs over the same vertex set.
/// No gauge is removed here; call [`gauge_align`] first when the estimate
/// lives in an arbitrary world frame.
pub fn pose_error_stats(est: &ViewGraph, reference: &ViewGraph) -> Result<ErrorStats, AveragingError> {
    if !est.same_vertex_set(reference) {
        return Err(GraphError::MismatchedGraphs.into());
    }
    if est.vertex_count() == 0 {
        return Err(GraphError::Empty.into());
    }
    let mut errors = Vec::with_capacity(est.vertex_count());
    for v in est.vertices() {
        let e = v.absolute.ok_or(GraphError::NotInitialized { id: v.id })?;
        let t = reference
            .absolute(v.id)
            .ok_or(GraphError::NotInitialized { id: v.id })?;
        errors.push(geodesic_distance(&e, &t));
    }
    Ok(ErrorStats::from_values(&mut errors).unwrap())
}
