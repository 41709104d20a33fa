//! Stealthy false-data-injection attack synthesis.
//!
//! The measurement system is linearized about an operating point,
//! discretized and stacked over a horizon of `t_f` samples, giving
//! `Y_f = H x + G u_f + e`. A residual monitor cannot see attack energy that
//! lies in the range space of `H`, so the attacker maximizes the in-range
//! energy of a support-constrained attack while keeping the out-of-range
//! leakage below a budget tied to the monitor threshold:
//!
//! ```text
//! maximize ||U1_T' e_T||^2   subject to   ||U2_T' e_T||^2 <= alpha
//! ```
//!
//! where `[U1 U2]` is the orthogonal factor of the SVD of `H` and `T` the
//! attacked rows. The problem as stated is unbounded whenever the support
//! subspace intersects the range space, so a magnitude cap `gamma` closes
//! the model: a perfectly stealthy direction (exact null of `U2_T U2_T'`)
//! is returned scaled to `||e|| = gamma`; otherwise the top generalized
//! eigenvector of `(A, B)` with `A = U1_T U1_T'`, `B = U2_T U2_T'` is scaled
//! until the leakage constraint is active, then capped at `gamma`.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3, Vector6};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::measurement::{measurement_jacobian, CHANNELS};
use crate::robot::{input_matrix, mass_matrix, RobotParams};

/// Discrete linear model about an operating point plus its stacked horizon
/// matrices.
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    /// 3x3 state transition of the Euler-discretized `[theta, v, omega]` map.
    pub a: Matrix3<f64>,
    /// 3x2 input map (includes the sampling time).
    pub b: SMatrix<f64, 3, 2>,
    /// 6x3 measurement Jacobian at the operating point.
    pub c: SMatrix<f64, 6, 3>,
    /// Sampling time (s).
    pub t_s: f64,
    /// Horizon in samples; the stack covers `t_f + 1` measurement instants.
    pub t_f: usize,
    /// Stacked observability matrix, `(t_f + 1) * 6` rows by 3 columns.
    pub h: DMatrix<f64>,
    /// Stacked input matrix, `(t_f + 1) * 6` rows by `2 t_f` columns.
    pub g: DMatrix<f64>,
}

impl LinearizedModel {
    pub fn new(x0: &Vector3<f64>, params: &RobotParams, t_s: f64, t_f: usize) -> Self {
        let (a, b, c) = linearize(x0, params, t_s);
        let (h, g) = stack(&a, &b, &c, t_f);
        Self { a, b, c, t_s, t_f, h, g }
    }

    /// Rows of the stack covering one measurement instant.
    pub fn block_rows(&self) -> usize {
        CHANNELS
    }
}

/// Analytic linearization of the Euler-discretized dynamics and of the
/// measurement map at `x0 = [theta0, v0, omega0]`.
pub fn linearize(
    x0: &Vector3<f64>,
    params: &RobotParams,
    t_s: f64,
) -> (Matrix3<f64>, SMatrix<f64, 3, 2>, SMatrix<f64, 6, 3>) {
    let (v0, omega0) = (x0[1], x0[2]);
    let d = params.offset;
    let m = params.mass;
    let j_eff = m * d * d + params.inertia;
    // Jacobian of [omega; d w^2 + ...; -m d w v / (m d^2 + J) + ...].
    let cont = Matrix3::new(
        0.0,
        0.0,
        1.0,
        0.0,
        0.0,
        2.0 * d * omega0,
        0.0,
        -m * d * omega0 / j_eff,
        -m * d * v0 / j_eff,
    );
    let a = Matrix3::identity() + cont * t_s;
    let m_inv_b = mass_matrix(params)
        .try_inverse()
        .expect("mass matrix is diagonal positive")
        * input_matrix(params);
    let mut b = SMatrix::<f64, 3, 2>::zeros();
    b.fixed_view_mut::<2, 2>(1, 0).copy_from(&(m_inv_b * t_s));
    let c = measurement_jacobian(x0, params);
    (a, b, c)
}

/// Stack the linear model over `t_f` forward samples:
/// `H = [C; CA; ...; CA^t_f]` and `G` lower block-triangular with blocks
/// `C A^(j-1-i) B`. The one-step input map `B` already carries the sampling
/// time, so the stacked identity
/// `Y_f = H x_k + G [u_k; ...; u_(k+t_f-1)]` holds exactly for the
/// discretized system (checked against a step-by-step rollout in tests).
pub fn stack(
    a: &Matrix3<f64>,
    b: &SMatrix<f64, 3, 2>,
    c: &SMatrix<f64, 6, 3>,
    t_f: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let blocks = t_f + 1;
    let mut h = DMatrix::zeros(blocks * CHANNELS, 3);
    let mut g = DMatrix::zeros(blocks * CHANNELS, 2 * t_f);
    let mut a_pow = Matrix3::identity();
    // Powers of A reused for both stacks.
    let mut powers = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        powers.push(a_pow);
        a_pow = a * a_pow;
    }
    for j in 0..blocks {
        let block = c * powers[j];
        h.view_mut((j * CHANNELS, 0), (CHANNELS, 3)).copy_from(&block);
        for i in 0..j.min(t_f) {
            // y_{k+j} accumulates C A^{j-1-i} B u_{k+i}.
            let gb = c * powers[j - 1 - i] * b;
            g.view_mut((j * CHANNELS, 2 * i), (CHANNELS, 2)).copy_from(&gb);
        }
    }
    (h, g)
}

/// Orthogonal split of the stacked observation matrix: `U1` spans the range
/// of `H`, `U2` its orthogonal complement.
#[derive(Debug, Clone)]
pub struct SvdSplit {
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// Right factor of the thin SVD, `H = U1 * diag(singular_values) * v_t`.
    pub v_t: DMatrix<f64>,
}

impl SvdSplit {
    pub fn rows(&self) -> usize {
        self.u1.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u1.ncols()
    }
}

/// Compute the SVD split, rejecting rank-deficient stacks.
pub fn svd_split(h: &DMatrix<f64>) -> Result<SvdSplit> {
    let m = h.nrows();
    let n = h.ncols();
    if m <= n {
        return Err(Error::InvalidParameter(format!(
            "stacked matrix must be tall, got {m}x{n}"
        )));
    }
    let svd = h.clone().svd(true, true);
    let u1 = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let singular_values = svd.singular_values.clone();
    let sigma_min = singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(sigma_min > 1e-10) {
        return Err(Error::RankDeficient { sigma_min });
    }
    // Orthogonal complement from the spectral decomposition of the
    // projector I - U1 U1': its unit eigenvalues span null(H').
    let projector = DMatrix::identity(m, m) - &u1 * u1.transpose();
    let eig = nalgebra::SymmetricEigen::new(projector);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
    });
    let mut u2 = DMatrix::zeros(m, m - n);
    for (col, &idx) in order.iter().take(m - n).enumerate() {
        u2.set_column(col, &eig.eigenvectors.column(idx));
    }
    Ok(SvdSplit { u1, u2, singular_values, v_t })
}

/// Support, leakage budget and magnitude cap of one attack synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// 0-indexed rows of the stacked measurement the attacker controls.
    pub support: Vec<usize>,
    /// Residual (leakage) budget `alpha >= 0`.
    pub alpha: f64,
    /// Euclidean magnitude cap `gamma > 0`.
    pub gamma: f64,
}

impl AttackConfig {
    pub fn new(support: Vec<usize>, alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
        }
        let mut sorted = support.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != support.len() {
            return Err(Error::InvalidParameter("attack support has duplicates".into()));
        }
        Ok(Self { support: sorted, alpha, gamma })
    }
}

/// Which branch produced the attack vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackBranch {
    /// The support subspace intersects range(H); leakage is exactly zero.
    NullSpace,
    /// Generalized-eigenvector solution with the leakage constraint active
    /// (before the magnitude cap).
    GeneralizedEigen,
}

/// Synthesized attack with its diagnostics.
#[derive(Debug, Clone)]
pub struct AttackSolution {
    /// Stacked attack vector, zero off the support.
    pub e: DVector<f64>,
    /// Achieved in-range energy `||U1' e||^2`.
    pub objective: f64,
    /// Achieved leakage `||U2' e||`.
    pub leak: f64,
    pub branch: AttackBranch,
}

const NULL_EIGENVALUE_TOL: f64 = 1e-12;
const OBJECTIVE_TOL: f64 = 1e-9;
const REGULARIZATION: f64 = 1e-12;

/// Solve the support-constrained stealthy attack problem.
pub fn generate_attack(split: &SvdSplit, config: &AttackConfig) -> Result<AttackSolution> {
    let m = split.rows();
    if config.support.is_empty() {
        return Err(Error::NoEffectiveAttack { support: vec![] });
    }
    if config.support.iter().any(|&i| i >= m) {
        return Err(Error::InvalidParameter(format!(
            "support index out of range (m = {m})"
        )));
    }
    let t = &config.support;
    let k = t.len();
    let u1_t = DMatrix::from_fn(k, split.rank(), |i, j| split.u1[(t[i], j)]);
    let u2_t = DMatrix::from_fn(k, m - split.rank(), |i, j| split.u2[(t[i], j)]);
    let a = &u1_t * u1_t.transpose();
    let b = &u2_t * u2_t.transpose();

    let eig_b = nalgebra::SymmetricEigen::new(b.clone());
    let b_scale = eig_b.eigenvalues.iter().cloned().fold(0.0f64, f64::max).max(1.0);
    let null_cols: Vec<usize> = (0..k)
        .filter(|&i| eig_b.eigenvalues[i] <= NULL_EIGENVALUE_TOL * b_scale)
        .collect();

    // Branch 1: a perfectly stealthy direction exists.
    if !null_cols.is_empty() {
        let basis = DMatrix::from_fn(k, null_cols.len(), |i, j| {
            eig_b.eigenvectors[(i, null_cols[j])]
        });
        let reduced = basis.transpose() * &a * &basis;
        let eig_a = nalgebra::SymmetricEigen::new(reduced);
        let (best, lambda) = top_eigenpair(&eig_a);
        if lambda > OBJECTIVE_TOL {
            let mut direction = &basis * best;
            direction /= direction.norm();
            let e_t = direction * config.gamma;
            return Ok(finish(split, t, e_t, AttackBranch::NullSpace));
        }
    }

    // Branch 2: trade in-range energy against leakage.
    let b_reg = &b + DMatrix::identity(k, k) * (REGULARIZATION * b_scale);
    let chol = nalgebra::Cholesky::new(b_reg)
        .ok_or(Error::CovarianceNotPd { context: "regularized leakage form" })?;
    let l = chol.l();
    // C = L^-1 A L^-T, symmetric; its top eigenpair solves A v = lambda B v.
    let x = l.solve_lower_triangular(&a).expect("forward solve");
    let c_mat = l
        .solve_lower_triangular(&x.transpose())
        .expect("forward solve")
        .transpose();
    let c_sym = (&c_mat + c_mat.transpose()) * 0.5;
    let eig_c = nalgebra::SymmetricEigen::new(c_sym);
    let (w, lambda) = top_eigenpair(&eig_c);
    if lambda <= OBJECTIVE_TOL {
        return Err(Error::NoEffectiveAttack { support: t.clone() });
    }
    let mut v = l
        .transpose()
        .solve_upper_triangular(&w)
        .expect("back substitution");
    v /= v.norm();
    let leak_energy = (v.transpose() * &b * &v)[(0, 0)].max(0.0);
    let mut e_t = if leak_energy > 0.0 && config.alpha > 0.0 {
        // Scale so the leakage constraint is active, then cap.
        &v * (config.alpha / leak_energy).sqrt()
    } else {
        &v * config.gamma
    };
    if e_t.norm() > config.gamma {
        e_t *= config.gamma / e_t.norm();
    }
    let solution = finish(split, t, e_t, AttackBranch::GeneralizedEigen);
    if solution.objective <= OBJECTIVE_TOL * config.alpha.max(OBJECTIVE_TOL) {
        return Err(Error::NoEffectiveAttack { support: t.clone() });
    }
    Ok(solution)
}

fn top_eigenpair(eig: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>) -> (DVector<f64>, f64) {
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    (eig.eigenvectors.column(best).into_owned(), eig.eigenvalues[best])
}

fn finish(split: &SvdSplit, support: &[usize], e_t: DVector<f64>, branch: AttackBranch) -> AttackSolution {
    // Canonical sign: largest-magnitude entry positive, for determinism.
    let mut e_t = e_t;
    let mut max_idx = 0;
    for i in 1..e_t.len() {
        if e_t[i].abs() > e_t[max_idx].abs() {
            max_idx = i;
        }
    }
    if e_t[max_idx] < 0.0 {
        e_t = -e_t;
    }
    let mut e = DVector::zeros(split.rows());
    for (i, &row) in support.iter().enumerate() {
        e[row] = e_t[i];
    }
    let objective = (split.u1.transpose() * &e).norm_squared();
    let leak = (split.u2.transpose() * &e).norm();
    AttackSolution { e, objective, leak, branch }
}

/// Pre-cap optimum of the leakage-constrained problem on a support:
/// `alpha * lambda_max(A, B + reg I)`, or infinity when a perfectly stealthy
/// direction exists. Used to rank candidate supports.
pub fn support_objective(split: &SvdSplit, support: &[usize], alpha: f64) -> Result<f64> {
    let config = AttackConfig::new(support.to_vec(), alpha, 1.0)?;
    let m = split.rows();
    if support.iter().any(|&i| i >= m) {
        return Err(Error::InvalidParameter("support index out of range".into()));
    }
    let t = &config.support;
    let k = t.len();
    let u1_t = DMatrix::from_fn(k, split.rank(), |i, j| split.u1[(t[i], j)]);
    let u2_t = DMatrix::from_fn(k, m - split.rank(), |i, j| split.u2[(t[i], j)]);
    let a = &u1_t * u1_t.transpose();
    let b = &u2_t * u2_t.transpose();
    let eig_b = nalgebra::SymmetricEigen::new(b.clone());
    let b_scale = eig_b.eigenvalues.iter().cloned().fold(0.0f64, f64::max).max(1.0);
    let has_null = (0..k).any(|i| eig_b.eigenvalues[i] <= NULL_EIGENVALUE_TOL * b_scale);
    if has_null {
        return Ok(f64::INFINITY);
    }
    let b_reg = &b + DMatrix::identity(k, k) * (REGULARIZATION * b_scale);
    let chol = nalgebra::Cholesky::new(b_reg)
        .ok_or(Error::CovarianceNotPd { context: "regularized leakage form" })?;
    let l = chol.l();
    let x = l.solve_lower_triangular(&a).expect("forward solve");
    let c_mat = l
        .solve_lower_triangular(&x.transpose())
        .expect("forward solve")
        .transpose();
    let eig_c = nalgebra::SymmetricEigen::new((&c_mat + c_mat.transpose()) * 0.5);
    let (_, lambda) = top_eigenpair(&eig_c);
    Ok(alpha * lambda.max(0.0))
}

/// Expand base measurement channels into stacked rows: channel `i` attacked
/// at every instant of the horizon.
pub fn expand_channel_support(channels: &[usize], t_f: usize) -> Vec<usize> {
    let mut rows = Vec::with_capacity(channels.len() * (t_f + 1));
    for j in 0..=t_f {
        for &ch in channels {
            rows.push(j * CHANNELS + ch);
        }
    }
    rows.sort_unstable();
    rows
}

/// Greedily pick `count` base channels maximizing the achievable pre-cap
/// objective; ties resolve to the lower channel index.
pub fn greedy_channel_support(
    split: &SvdSplit,
    t_f: usize,
    count: usize,
    alpha: f64,
) -> Result<Vec<usize>> {
    let count = count.min(CHANNELS);
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < count {
        let mut best: Option<(usize, f64)> = None;
        for ch in 0..CHANNELS {
            if chosen.contains(&ch) {
                continue;
            }
            let mut candidate = chosen.clone();
            candidate.push(ch);
            candidate.sort_unstable();
            let value = support_objective(split, &expand_channel_support(&candidate, t_f), alpha)?;
            let improved = match best {
                None => true,
                Some((_, best_val)) => value > best_val,
            };
            if improved {
                best = Some((ch, value));
            }
        }
        chosen.push(best.expect("at least one candidate").0);
        chosen.sort_unstable();
    }
    Ok(chosen)
}

/// How the synthesized attack is rolled out over time.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    /// Replay the base per-step pattern unchanged.
    Constant,
    /// Scale the base pattern linearly from zero over `ramp (s)`.
    Ramp,
    /// Re-linearize and re-solve at each step's operating point.
    RecomputePerStep,
}

/// Per-step attack vector under the given schedule. `t_since_start` is the
/// time elapsed since attack activation; `ramp` the ramp window in seconds.
pub fn attack_schedule(
    t_since_start: f64,
    base_e: &Vector6<f64>,
    mode: AttackMode,
    ramp: f64,
) -> Vector6<f64> {
    match mode {
        AttackMode::Constant | AttackMode::RecomputePerStep => *base_e,
        AttackMode::Ramp => {
            let scale = if ramp <= 0.0 {
                1.0
            } else {
                (t_since_start / ramp).clamp(0.0, 1.0)
            };
            base_e * scale
        }
    }
}

/// First per-step block of a stacked attack vector. The stacked solution is
/// nearly constant across blocks for the slowly varying plant, so the first
/// block serves as the base pattern for constant and ramp schedules.
pub fn first_block(e: &DVector<f64>) -> Vector6<f64> {
    let mut out = Vector6::zeros();
    for i in 0..CHANNELS.min(e.len()) {
        out[i] = e[i];
    }
    out
}
