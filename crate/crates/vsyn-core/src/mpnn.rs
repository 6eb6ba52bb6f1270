//! Message-passing refinement of absolute rotations.
//!
//! A small message-passing network predicts a per-vertex correction on top
//! of the current absolute rotations of a view graph. The network is
//! trained per graph, self-supervised, by minimizing a differentiable
//! surrogate of the regularized consistency objective:
//!
//! ```text
//! loss(θ) = Σ_edges w_e · d_Q(q(rel_e), q̂_j ⊗ q̂_i⁻¹)  +  β · Σ_k d_Q(q̂_k, q̃_k)
//! ```
//!
//! where `q̃_k` are the input rotations, `q̂_k = δ_k(θ) ⊗ q̃_k` the corrected
//! ones, and `d_Q(a, b) = min(‖a − b‖, ‖a + b‖)` the double-cover aware
//! quaternion distance. Only non-outlier edges participate.
//!
//! # Architecture
//!
//! With hidden width `H` (at least 4) and `T` message rounds, for vertex `k`:
//!
//! 1. `h⁰_k = [q̃_k; 0, …, 0] ∈ R^H`.
//! 2. Per round: each neighbor `n` sends `m = relu(W_m · [h_n; h_k; q_e] + b_m)`
//!    with `q_e` the residual `q(R̃_k⁻¹ ∘ rel(n→k) ∘ R̃_n)`; messages are
//!    averaged into `s_k` (zero when there are no neighbors) and the state
//!    becomes `h_k ← relu(W_u · [h_k; s_k] + b_u)`.
//! 3. Readout: `u_k = (1, 0, 0, 0) + W_r · h_k + b_r`, normalized to the unit
//!    correction `δ_k = u_k / ‖u_k‖`.
//!
//! The differentiable path works on raw quaternion 4-vectors: canonical sign
//! flips are not differentiable, so no canonicalization happens between the
//! readout and the loss. Gradients are hand-written reverse mode and checked
//! against central differences in the tests.
//!
//! # Parameter blob
//!
//! [`write_params`] serializes to `"MPNN"`, `u32 H`, `u32 T` (little
//! endian), then all tensors as little-endian `f64` in a fixed order:
//! message weight (row-major `H×(2H+4)`), message bias, update weight
//! (`H×2H`), update bias, readout weight (`4×H`), readout bias.
//! [`read_params`] validates the magic, dimensions, exact length, and
//! finiteness of every value.

use std::collections::HashMap;

use byteorder::{ByteOrder, LittleEndian};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::averaging::{l_mra, AveragingError};
use crate::so3::Rotation;
use crate::viewgraph::{GraphError, ViewGraph};

/// Largest accepted hidden width when deserializing.
pub const MAX_HIDDEN: u32 = 512;
/// Largest accepted round count when deserializing.
pub const MAX_ROUNDS: u32 = 64;

const MAGIC: &[u8; 4] = b"MPNN";

#[derive(Debug, Error)]
pub enum MpnnError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Averaging(#[from] AveragingError),
    #[error("hidden width {hidden} is too small; the state embeds a quaternion and needs at least 4")]
    HiddenTooSmall { hidden: u32 },
    #[error("bad magic; expected `MPNN`")]
    BadMagic,
    #[error("parameter blob length mismatch: expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
    #[error("{field} = {value} exceeds the supported maximum {max}")]
    Oversized {
        field: &'static str,
        value: u32,
        max: u32,
    },
    #[error("parameter blob contains non-finite values")]
    NonFinite,
    #[error("training diverged at step {step} with loss {loss}")]
    Divergence { step: usize, loss: f64 },
}

/// Dense affine layer `y = W x + b` with a row-major weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Affine {
    pub(crate) fn seeded(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Affine {
        // classic fan-in scaling keeps pre-activations O(1)
        let bound = 1.0 / (cols as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        Affine {
            rows,
            cols,
            weight: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
            bias: (0..rows).map(|_| dist.sample(rng)).collect(),
        }
    }

    fn zeros(rows: usize, cols: usize) -> Affine {
        Affine {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, weight: Vec<f64>, bias: Vec<f64>) -> Affine {
        assert_eq!(weight.len(), rows * cols);
        assert_eq!(bias.len(), rows);
        Affine {
            rows,
            cols,
            weight,
            bias,
        }
    }

    pub(crate) fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for c in 0..self.cols {
                acc += row[c] * x[c];
            }
            out[r] = acc;
        }
    }

    /// Accumulates parameter and input gradients for `dout = dL/dy`.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        dout: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        dx: &mut [f64],
    ) {
        for r in 0..self.rows {
            let g = dout[r];
            db[r] += g;
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            let drow = &mut dw[r * self.cols..(r + 1) * self.cols];
            for c in 0..self.cols {
                drow[c] += g * x[c];
                dx[c] += row[c] * g;
            }
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub(crate) fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weight);
        out.extend_from_slice(&self.bias);
    }

    pub(crate) fn read_flat(&self, flat: &[f64]) -> Affine {
        let nw = self.rows * self.cols;
        Affine {
            rows: self.rows,
            cols: self.cols,
            weight: flat[..nw].to_vec(),
            bias: flat[nw..nw + self.rows].to_vec(),
        }
    }
}

/// All learnable parameters of the refiner.
#[derive(Debug, Clone, PartialEq)]
pub struct MpnnParams {
    hidden: usize,
    rounds: usize,
    message: Affine,
    update: Affine,
    readout: Affine,
}

impl MpnnParams {
    /// Fresh parameters with entries drawn from `U[-1/√fan_in, 1/√fan_in]`
    /// using a deterministic generator.
    pub fn seeded(hidden: u32, rounds: u32, seed: u64) -> Result<MpnnParams, MpnnError> {
        if hidden < 4 {
            return Err(MpnnError::HiddenTooSmall { hidden });
        }
        let h = hidden as usize;
        let t = rounds as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(MpnnParams {
            hidden: h,
            rounds: t,
            message: Affine::seeded(h, 2 * h + 4, &mut rng),
            update: Affine::seeded(h, 2 * h, &mut rng),
            readout: Affine::seeded(4, h, &mut rng),
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.message.len() + self.update.len() + self.readout.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Parameters flattened in serialization order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for layer in [&self.message, &self.update, &self.readout] {
            out.extend_from_slice(&layer.weight);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Copy of `self` with parameters replaced from a flat vector laid out
    /// as [`MpnnParams::to_flat`]. Panics if the length differs.
    pub fn with_flat(&self, flat: &[f64]) -> MpnnParams {
        assert_eq!(flat.len(), self.len(), "flat parameter length mismatch");
        let mut out = self.clone();
        let mut at = 0;
        for layer in [&mut out.message, &mut out.update, &mut out.readout] {
            let (w, b) = (layer.weight.len(), layer.bias.len());
            layer.weight.copy_from_slice(&flat[at..at + w]);
            at += w;
            layer.bias.copy_from_slice(&flat[at..at + b]);
            at += b;
        }
        out
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub hidden: u32,
    pub rounds: u32,
    pub iters: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Weight of the anchor term pulling corrections toward the identity.
    pub beta_reg: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            hidden: 8,
            rounds: 2,
            iters: 500,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            beta_reg: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MpnnParams,
    /// Loss evaluated before each update; `trace[0]` is the initial loss.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub graph: ViewGraph,
    /// Whether the trained correction was applied or the input kept.
    pub applied: bool,
    pub objective_before: f64,
    pub objective_after: f64,
    pub trace: Vec<f64>,
    /// The trained parameters, whether or not they were applied.
    pub params: MpnnParams,
}

// ---------------------------------------------------------------------------
// quaternion helpers on raw 4-vectors (w, x, y, z)

fn qmul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Reverse-mode step through `p = a ⊗ b`: given `dp`, returns `(da, db)`.
fn qmul_backward(a: [f64; 4], b: [f64; 4], dp: [f64; 4]) -> ([f64; 4], [f64; 4]) {
    let da = [
        b[0] * dp[0] + b[1] * dp[1] + b[2] * dp[2] + b[3] * dp[3],
        -b[1] * dp[0] + b[0] * dp[1] - b[3] * dp[2] + b[2] * dp[3],
        -b[2] * dp[0] + b[3] * dp[1] + b[0] * dp[2] - b[1] * dp[3],
        -b[3] * dp[0] - b[2] * dp[1] + b[1] * dp[2] + b[0] * dp[3],
    ];
    let db = [
        a[0] * dp[0] + a[1] * dp[1] + a[2] * dp[2] + a[3] * dp[3],
        -a[1] * dp[0] + a[0] * dp[1] + a[3] * dp[2] - a[2] * dp[3],
        -a[2] * dp[0] - a[3] * dp[1] + a[0] * dp[2] + a[1] * dp[3],
        -a[3] * dp[0] + a[2] * dp[1] - a[1] * dp[2] + a[0] * dp[3],
    ];
    (da, db)
}

fn qconj(a: [f64; 4]) -> [f64; 4] {
    [a[0], -a[1], -a[2], -a[3]]
}

fn qnorm(a: [f64; 4]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3]).sqrt()
}

/// `min(‖a − b‖, ‖a + b‖)` and, when requested, its gradient with respect
/// to `b`. The gradient is `s/‖s‖` for the active branch and zero at the
/// (measure-zero) origin of that branch.
fn quat_dist4(a: [f64; 4], b: [f64; 4]) -> (f64, [f64; 4]) {
    let diff = [b[0] - a[0], b[1] - a[1], b[2] - a[2], b[3] - a[3]];
    let sum = [b[0] + a[0], b[1] + a[1], b[2] + a[2], b[3] + a[3]];
    let (nd, ns) = (qnorm(diff), qnorm(sum));
    let (d, s) = if nd <= ns { (nd, diff) } else { (ns, sum) };
    if d < 1e-15 {
        (d, [0.0; 4])
    } else {
        (d, [s[0] / d, s[1] / d, s[2] / d, s[3] / d])
    }
}

// ---------------------------------------------------------------------------
// problem assembly

/// Graph flattened into dense indices with all constants precomputed.
struct Problem {
    ids: Vec<u32>,
    /// `q̃` per vertex.
    tilde: Vec<[f64; 4]>,
    /// Per vertex: `(dense neighbor index, edge residual feature)` in
    /// ascending neighbor id order, non-outlier edges only.
    nbrs: Vec<Vec<(usize, [f64; 4])>>,
    /// Non-outlier edges as `(dense i, dense j, q(rel), weight)`.
    edges: Vec<(usize, usize, [f64; 4], f64)>,
}

fn build_problem(g: &ViewGraph) -> Result<Problem, MpnnError> {
    if g.vertex_count() == 0 {
        return Err(GraphError::Empty.into());
    }
    let ids = g.sorted_ids();
    let pos: HashMap<u32, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut tilde = Vec::with_capacity(ids.len());
    let mut rot = Vec::with_capacity(ids.len());
    for &id in &ids {
        let r = g
            .absolute(id)
            .ok_or(GraphError::NotInitialized { id })?;
        tilde.push(r.as_array());
        rot.push(r);
    }
    let adjacency = g.adjacency();
    let mut nbrs: Vec<Vec<(usize, [f64; 4])>> = vec![Vec::new(); ids.len()];
    for (k, &id) in ids.iter().enumerate() {
        for &(nbr, eidx) in &adjacency[&id] {
            if g.edges()[eidx].outlier {
                continue;
            }
            let n = pos[&nbr];
            // residual of the measurement against the current absolutes;
            // exactly the identity when the edge is already consistent
            let feat = rot[k]
                .inverse()
                .compose(&g.oriented_rel(eidx, nbr, id))
                .compose(&rot[n]);
            nbrs[k].push((n, feat.as_array()));
        }
    }
    let mut edges = Vec::new();
    for e in g.edges() {
        if e.outlier {
            continue;
        }
        edges.push((pos[&e.i], pos[&e.j], e.rel.as_array(), e.weight));
    }
    Ok(Problem {
        ids,
        tilde,
        nbrs,
        edges,
    })
}

// ---------------------------------------------------------------------------
// forward / backward

/// Everything the backward pass needs to replay the computation.
struct Tape {
    /// `h[t][k]`: hidden state before round `t`; `h[T][k]` is the final state.
    h: Vec<Vec<Vec<f64>>>,
    /// `msg_z[t][k][n]`: pre-activation of the message from the n-th neighbor.
    msg_z: Vec<Vec<Vec<Vec<f64>>>>,
    /// `s[t][k]`: averaged message.
    s: Vec<Vec<Vec<f64>>>,
    /// `upd_z[t][k]`: pre-activation of the state update.
    upd_z: Vec<Vec<Vec<f64>>>,
    /// Readout output plus the identity offset, before normalization.
    u: Vec<[f64; 4]>,
    delta: Vec<[f64; 4]>,
    qhat: Vec<[f64; 4]>,
}

fn forward_tape(p: &MpnnParams, prob: &Problem) -> Tape {
    let v = prob.tilde.len();
    let hdim = p.hidden;
    let mut h0 = vec![vec![0.0; hdim]; v];
    for k in 0..v {
        h0[k][..4].copy_from_slice(&prob.tilde[k]);
    }
    let mut h = vec![h0];
    let mut msg_z = Vec::with_capacity(p.rounds);
    let mut s_all = Vec::with_capacity(p.rounds);
    let mut upd_z_all = Vec::with_capacity(p.rounds);

    for t in 0..p.rounds {
        let prev = &h[t];
        let mut next = vec![vec![0.0; hdim]; v];
        let mut round_z = Vec::with_capacity(v);
        let mut round_s = Vec::with_capacity(v);
        let mut round_uz = Vec::with_capacity(v);
        for k in 0..v {
            let mut s = vec![0.0; hdim];
            let mut zs = Vec::with_capacity(prob.nbrs[k].len());
            for &(n, feat) in &prob.nbrs[k] {
                let mut input = Vec::with_capacity(2 * hdim + 4);
                input.extend_from_slice(&prev[n]);
                input.extend_from_slice(&prev[k]);
                input.extend_from_slice(&feat);
                let mut z = vec![0.0; hdim];
                p.message.apply(&input, &mut z);
                for c in 0..hdim {
                    s[c] += z[c].max(0.0);
                }
                zs.push(z);
            }
            let deg = prob.nbrs[k].len();
            if deg > 0 {
                for c in 0..hdim {
                    s[c] /= deg as f64;
                }
            }
            let mut input = Vec::with_capacity(2 * hdim);
            input.extend_from_slice(&prev[k]);
            input.extend_from_slice(&s);
            let mut z = vec![0.0; hdim];
            p.update.apply(&input, &mut z);
            for c in 0..hdim {
                next[k][c] = z[c].max(0.0);
            }
            zs.shrink_to_fit();
            round_z.push(zs);
            round_s.push(s);
            round_uz.push(z);
        }
        msg_z.push(round_z);
        s_all.push(round_s);
        upd_z_all.push(round_uz);
        h.push(next);
    }

    let mut u = Vec::with_capacity(v);
    let mut delta = Vec::with_capacity(v);
    let mut qhat = Vec::with_capacity(v);
    let last = &h[p.rounds];
    for k in 0..v {
        let mut r = [0.0; 4];
        p.readout.apply(&last[k], &mut r);
        let uk = [1.0 + r[0], r[1], r[2], r[3]];
        let n = qnorm(uk);
        let d = [uk[0] / n, uk[1] / n, uk[2] / n, uk[3] / n];
        u.push(uk);
        delta.push(d);
        qhat.push(qmul(d, prob.tilde[k]));
    }

    Tape {
        h,
        msg_z,
        s: s_all,
        upd_z: upd_z_all,
        u,
        delta,
        qhat,
    }
}

fn loss_and_grad_internal(p: &MpnnParams, prob: &Problem, beta_reg: f64) -> (f64, Vec<f64>) {
    let tape = forward_tape(p, prob);
    let v = prob.tilde.len();
    let hdim = p.hidden;

    let mut loss = 0.0;
    let mut dqhat = vec![[0.0f64; 4]; v];
    for &(i, j, qrel, w) in &prob.edges {
        let c = qconj(tape.qhat[i]);
        let fitted = qmul(tape.qhat[j], c);
        let (d, dd_dfitted) = quat_dist4(qrel, fitted);
        loss += w * d;
        let dp = [
            w * dd_dfitted[0],
            w * dd_dfitted[1],
            w * dd_dfitted[2],
            w * dd_dfitted[3],
        ];
        let (dj, dc) = qmul_backward(tape.qhat[j], c, dp);
        for t in 0..4 {
            dqhat[j][t] += dj[t];
        }
        let di = qconj(dc);
        for t in 0..4 {
            dqhat[i][t] += di[t];
        }
    }
    for k in 0..v {
        let (d, dd) = quat_dist4(prob.tilde[k], tape.qhat[k]);
        loss += beta_reg * d;
        for t in 0..4 {
            dqhat[k][t] += beta_reg * dd[t];
        }
    }

    // readout backward
    let mut dmsg_w = vec![0.0; p.message.weight.len()];
    let mut dmsg_b = vec![0.0; p.message.bias.len()];
    let mut dupd_w = vec![0.0; p.update.weight.len()];
    let mut dupd_b = vec![0.0; p.update.bias.len()];
    let mut dro_w = vec![0.0; p.readout.weight.len()];
    let mut dro_b = vec![0.0; p.readout.bias.len()];

    let mut dh = vec![vec![0.0; hdim]; v];
    let last = &tape.h[p.rounds];
    for k in 0..v {
        // q̂ = δ ⊗ q̃; q̃ is constant
        let (ddelta, _) = qmul_backward(tape.delta[k], prob.tilde[k], dqhat[k]);
        // δ = u/‖u‖  ⇒  du = (dδ − δ ⟨δ, dδ⟩) / ‖u‖
        let n = qnorm(tape.u[k]);
        let dot = tape.delta[k][0] * ddelta[0]
            + tape.delta[k][1] * ddelta[1]
            + tape.delta[k][2] * ddelta[2]
            + tape.delta[k][3] * ddelta[3];
        let du = [
            (ddelta[0] - tape.delta[k][0] * dot) / n,
            (ddelta[1] - tape.delta[k][1] * dot) / n,
            (ddelta[2] - tape.delta[k][2] * dot) / n,
            (ddelta[3] - tape.delta[k][3] * dot) / n,
        ];
        // the identity offset has zero derivative, so du flows straight
        // into the affine readout
        p.readout
            .backward(&last[k], &du, &mut dro_w, &mut dro_b, &mut dh[k]);
    }

    // rounds in reverse
    let mut scratch_upd = vec![0.0; 2 * hdim];
    let mut scratch_msg = vec![0.0; 2 * hdim + 4];
    for t in (0..p.rounds).rev() {
        let prev = &tape.h[t];
        let mut dh_prev = vec![vec![0.0; hdim]; v];
        for k in 0..v {
            // relu mask for the state update
            let mut dz = vec![0.0; hdim];
            for c in 0..hdim {
                dz[c] = if tape.upd_z[t][k][c] > 0.0 { dh[k][c] } else { 0.0 };
            }
            let mut input = Vec::with_capacity(2 * hdim);
            input.extend_from_slice(&prev[k]);
            input.extend_from_slice(&tape.s[t][k]);
            scratch_upd.iter_mut().for_each(|x| *x = 0.0);
            p.update
                .backward(&input, &dz, &mut dupd_w, &mut dupd_b, &mut scratch_upd);
            for c in 0..hdim {
                dh_prev[k][c] += scratch_upd[c];
            }
            let ds = &scratch_upd[hdim..2 * hdim];
            let deg = prob.nbrs[k].len();
            if deg == 0 {
                continue;
            }
            let inv_deg = 1.0 / deg as f64;
            for (slot, &(n, feat)) in prob.nbrs[k].iter().enumerate() {
                let z = &tape.msg_z[t][k][slot];
                let mut dzm = vec![0.0; hdim];
                for c in 0..hdim {
                    dzm[c] = if z[c] > 0.0 { ds[c] * inv_deg } else { 0.0 };
                }
                let mut input = Vec::with_capacity(2 * hdim + 4);
                input.extend_from_slice(&prev[n]);
                input.extend_from_slice(&prev[k]);
                input.extend_from_slice(&feat);
                scratch_msg.iter_mut().for_each(|x| *x = 0.0);
                p.message
                    .backward(&input, &dzm, &mut dmsg_w, &mut dmsg_b, &mut scratch_msg);
                for c in 0..hdim {
                    dh_prev[n][c] += scratch_msg[c];
                    dh_prev[k][c] += scratch_msg[hdim + c];
                }
                // the feature slice is constant; its gradient is dropped
            }
        }
        dh = dh_prev;
    }

    let mut grad = Vec::with_capacity(p.len());
    grad.extend_from_slice(&dmsg_w);
    grad.extend_from_slice(&dmsg_b);
    grad.extend_from_slice(&dupd_w);
    grad.extend_from_slice(&dupd_b);
    grad.extend_from_slice(&dro_w);
    grad.extend_from_slice(&dro_b);
    (loss, grad)
}

/// Surrogate loss and its gradient with respect to every parameter, flat in
/// serialization order.
pub fn loss_and_gradients(
    params: &MpnnParams,
    g: &ViewGraph,
    beta_reg: f64,
) -> Result<(f64, Vec<f64>), MpnnError> {
    let prob = build_problem(g)?;
    Ok(loss_and_grad_internal(params, &prob, beta_reg))
}

/// Runs the network and returns a copy of the graph whose absolutes are the
/// corrected rotations. No training happens here.
pub fn forward(params: &MpnnParams, g: &ViewGraph) -> Result<ViewGraph, MpnnError> {
    let prob = build_problem(g)?;
    let tape = forward_tape(params, &prob);
    let mut out = g.clone();
    for (k, &id) in prob.ids.iter().enumerate() {
        let q = tape.qhat[k];
        let r = Rotation::from_wxyz(q[0], q[1], q[2], q[3]).map_err(|_| MpnnError::NonFinite)?;
        out.set_absolute(id, Some(r))?;
    }
    Ok(out)
}

/// Trains fresh parameters on one graph with Adam. Deterministic for a
/// given `(graph, config, seed)` triple.
pub fn train(g: &ViewGraph, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome, MpnnError> {
    let prob = build_problem(g)?;
    let base = MpnnParams::seeded(cfg.hidden, cfg.rounds, seed)?;
    let n = base.len();
    let mut theta = base.to_flat();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut params = base.clone();
    for step in 1..=cfg.iters {
        params = params.with_flat(&theta);
        let (loss, grad) = loss_and_grad_internal(&params, &prob, cfg.beta_reg);
        if !loss.is_finite() {
            return Err(MpnnError::Divergence { step, loss });
        }
        trace.push(loss);
        let b1t = 1.0 - cfg.adam_beta1.powi(step as i32);
        let b2t = 1.0 - cfg.adam_beta2.powi(step as i32);
        for p in 0..n {
            m[p] = cfg.adam_beta1 * m[p] + (1.0 - cfg.adam_beta1) * grad[p];
            v[p] = cfg.adam_beta2 * v[p] + (1.0 - cfg.adam_beta2) * grad[p] * grad[p];
            let mhat = m[p] / b1t;
            let vhat = v[p] / b2t;
            theta[p] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_epsilon);
        }
    }
    params = params.with_flat(&theta);
    Ok(TrainOutcome { params, trace })
}

/// Trains on the graph and applies the learned correction, keeping the
/// result only when it actually lowers the regularized objective
/// (consistency plus `beta_reg` times the deviation from the input).
/// Otherwise the input graph is returned untouched.
pub fn refine(g: &ViewGraph, cfg: &TrainConfig, seed: u64) -> Result<RefineOutcome, MpnnError> {
    let outcome = train(g, cfg, seed)?;
    let candidate = forward(&outcome.params, g)?;
    let before = l_mra(g, g, cfg.beta_reg)?;
    let after = l_mra(&candidate, g, cfg.beta_reg)?;
    if after < before {
        Ok(RefineOutcome {
            graph: candidate,
            applied: true,
            objective_before: before,
            objective_after: after,
            trace: outcome.trace,
            params: outcome.params,
        })
    } else {
        Ok(RefineOutcome {
            graph: g.clone(),
            applied: false,
            objective_before: before,
            objective_after: before,
            trace: outcome.trace,
            params: outcome.params,
        })
    }
}

// ---------------------------------------------------------------------------
// serialization

/// Serializes parameters to the binary blob format.
pub fn write_params(p: &MpnnParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * p.len());
    out.extend_from_slice(MAGIC);
    let mut buf4 = [0u8; 4];
    LittleEndian::write_u32(&mut buf4, p.hidden as u32);
    out.extend_from_slice(&buf4);
    LittleEndian::write_u32(&mut buf4, p.rounds as u32);
    out.extend_from_slice(&buf4);
    let mut buf8 = [0u8; 8];
    for value in p.to_flat() {
        LittleEndian::write_f64(&mut buf8, value);
        out.extend_from_slice(&buf8);
    }
    out
}

/// Parses and validates a parameter blob produced by [`write_params`].
pub fn read_params(bytes: &[u8]) -> Result<MpnnParams, MpnnError> {
    if bytes.len() < 12 {
        return Err(MpnnError::Length {
            expected: 12,
            got: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(MpnnError::BadMagic);
    }
    let hidden = LittleEndian::read_u32(&bytes[4..8]);
    let rounds = LittleEndian::read_u32(&bytes[8..12]);
    if hidden < 4 {
        return Err(MpnnError::HiddenTooSmall { hidden });
    }
    if hidden > MAX_HIDDEN {
        return Err(MpnnError::Oversized {
            field: "hidden width",
            value: hidden,
            max: MAX_HIDDEN,
        });
    }
    if rounds > MAX_ROUNDS {
        return Err(MpnnError::Oversized {
            field: "round count",
            value: rounds,
            max: MAX_ROUNDS,
        });
    }
    let h = hidden as usize;
    let count = h * (2 * h + 4) + h + h * (2 * h) + h + 4 * h + 4;
    let expected = 12 + 8 * count;
    if bytes.len() != expected {
        return Err(MpnnError::Length {
            expected,
            got: bytes.len(),
        });
    }
    let mut flat = Vec::with_capacity(count);
    for k in 0..count {
        let v = LittleEndian::read_f64(&bytes[12 + 8 * k..20 + 8 * k]);
        if !v.is_finite() {
            return Err(MpnnError::NonFinite);
        }
        flat.push(v);
    }
    let template = MpnnParams {
        hidden: h,
        rounds: rounds as usize,
        message: Affine::zeros(h, 2 * h + 4),
        update: Affine::zeros(h, 2 * h),
        readout: Affine::zeros(4, h),
    };
    Ok(template.with_flat(&flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::quat_distance;

    fn ring_graph(n: u32) -> ViewGraph {
        let mut g = ViewGraph::new();
        let abs: Vec<Rotation> = (0..n)
            .map(|k| Rotation::rot_z(0.3 * k as f64).compose(&Rotation::rot_x(0.05 * k as f64)))
            .collect();
        for id in 0..n {
            g.add_vertex(id, Some(abs[id as usize])).unwrap();
        }
        for id in 0..n {
            let j = (id + 1) % n;
            let rel = abs[j as usize].compose(&abs[id as usize].inverse());
            g.add_edge(id.min(j), id.max(j), if id < j { rel } else { rel.inverse() }, 1.0)
                .unwrap();
        }
        // a couple of chords so message passing sees varied degrees
        let rel = abs[2].compose(&abs[0].inverse());
        g.add_edge(0, 2, rel, 1.0).unwrap();
        g
    }

    #[test]
    fn raw_product_matches_rotation_compose() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = Rotation::sample_uniform(&mut rng);
            let b = Rotation::sample_uniform(&mut rng);
            let raw = qmul(a.as_array(), b.as_array());
            let composed = a.compose(&b).as_array();
            // compose canonicalizes, so compare up to the double cover
            let d = (0..4).map(|k| (raw[k] - composed[k]).powi(2)).sum::<f64>();
            let s = (0..4).map(|k| (raw[k] + composed[k]).powi(2)).sum::<f64>();
            assert!(d.min(s) < 1e-24);
        }
    }

    #[test]
    fn zero_readout_is_the_identity_correction() {
        let g = ring_graph(6);
        let params = MpnnParams::seeded(8, 2, 7).unwrap();
        let mut flat = params.to_flat();
        let n = flat.len();
        let ro = 4 * params.hidden() + 4;
        for v in flat[n - ro..].iter_mut() {
            *v = 0.0;
        }
        let frozen = params.with_flat(&flat);
        let out = forward(&frozen, &g).unwrap();
        for v in g.vertices() {
            let a = v.absolute.unwrap();
            let b = out.absolute(v.id).unwrap();
            assert_eq!(a.as_array(), b.as_array(), "vertex {}", v.id);
        }
    }

    #[test]
    fn hidden_width_below_four_is_rejected() {
        assert!(matches!(
            MpnnParams::seeded(3, 2, 0),
            Err(MpnnError::HiddenTooSmall { hidden: 3 })
        ));
    }

    #[test]
    fn params_round_trip_through_blob() {
        let params = MpnnParams::seeded(8, 3, 11).unwrap();
        let blob = write_params(&params);
        let back = read_params(&blob).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn blob_validation_rejects_malformed_input() {
        let params = MpnnParams::seeded(4, 1, 0).unwrap();
        let blob = write_params(&params);

        let mut bad_magic = blob.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_params(&bad_magic), Err(MpnnError::BadMagic)));

        let truncated = &blob[..blob.len() - 3];
        assert!(matches!(read_params(truncated), Err(MpnnError::Length { .. })));

        let mut nan = blob.clone();
        let tail = nan.len() - 8;
        nan[tail..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(read_params(&nan), Err(MpnnError::NonFinite)));

        let mut huge = blob.clone();
        huge[4..8].copy_from_slice(&10_000u32.to_le_bytes());
        assert!(matches!(read_params(&huge), Err(MpnnError::Oversized { .. })));

        assert!(matches!(read_params(b"MPN"), Err(MpnnError::Length { .. })));
    }

    #[test]
    fn training_is_deterministic() {
        let g = ring_graph(6);
        let cfg = TrainConfig {
            iters: 25,
            ..TrainConfig::default()
        };
        let a = train(&g, &cfg, 42).unwrap();
        let b = train(&g, &cfg, 42).unwrap();
        assert_eq!(a.trace.len(), 25);
        for (x, y) in a.trace.iter().zip(&b.trace) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a.params.to_flat().iter().zip(b.params.to_flat()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn refine_keeps_input_when_training_cannot_beat_it() {
        // a perfectly consistent graph cannot be improved, so the guard
        // must hand back the input bit for bit
        let g = ring_graph(6);
        let cfg = TrainConfig {
            iters: 40,
            ..TrainConfig::default()
        };
        let out = refine(&g, &cfg, 1).unwrap();
        assert!(!out.applied);
        for v in g.vertices() {
            assert_eq!(
                v.absolute.unwrap().as_array(),
                out.graph.absolute(v.id).unwrap().as_array()
            );
        }
        assert!((out.objective_after - out.objective_before).abs() < 1e-15);
    }

    #[test]
    fn forward_change_grows_with_readout_scale() {
        let g = ring_graph(6);
        let params = MpnnParams::seeded(8, 2, 9).unwrap();
        let small = forward(&params, &g).unwrap();
        let mut flat = params.to_flat();
        let n = flat.len();
        let ro = 4 * params.hidden() + 4;
        for v in flat[n - ro..].iter_mut() {
            *v *= 10.0;
        }
        let big_params = params.with_flat(&flat);
        let big = forward(&big_params, &g).unwrap();
        let total = |out: &ViewGraph| -> f64 {
            g.vertices()
                .iter()
                .map(|v| quat_distance(&v.absolute.unwrap(), &out.absolute(v.id).unwrap()))
                .sum()
        };
        assert!(total(&big) > total(&small));
        assert!(total(&small) > 0.0);
    }
}
