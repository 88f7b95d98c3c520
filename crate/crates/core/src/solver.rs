//! Least squares with per-point linear matrix inequalities, solved by ADMM.
//!
//! The problem is
//!
//! ```text
//! minimize    |Aθ - b|² + λ|θ|²
//! subject to  C_i(θ) ⪯ -τ_i I,   i = 1..m
//! ```
//!
//! where each `C_i` maps `θ` to a symmetric `n × n` matrix (the symmetrised
//! Jacobian of the field at constraint point `i`). Introducing
//! `M_i = -C_i(θ) - τ_i I ⪰ 0` splits it into a ridge step with a fixed,
//! pre-factored system matrix and independent projections of small blocks
//! onto the PSD cone.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::features::{FeatureMap, VanishingProjector};

/// Regression data plus per-point constraint operators.
///
/// `constraint_ops[i]` is an `n² × D` matrix; column `j` is the column-major
/// `vec` of the symmetric basis matrix multiplying `θ_j`.
#[derive(Debug, Clone)]
pub struct ConstrainedLSQProblem {
    pub design: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub lambda: f64,
    pub dim: usize,
    pub constraint_points: Vec<DVector<f64>>,
    pub constraint_ops: Vec<DMatrix<f64>>,
    pub tau: Vec<f64>,
}

impl ConstrainedLSQProblem {
    pub fn new(
        design: DMatrix<f64>,
        targets: DVector<f64>,
        lambda: f64,
        dim: usize,
        constraint_points: Vec<DVector<f64>>,
        constraint_ops: Vec<DMatrix<f64>>,
        tau: Vec<f64>,
    ) -> Result<Self> {
        check_dim(design.nrows(), targets.len())?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ridge weight must be positive, got {lambda}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        check_dim(constraint_ops.len(), tau.len())?;
        check_dim(constraint_ops.len(), constraint_points.len())?;
        for op in &constraint_ops {
            check_dim(dim * dim, op.nrows())?;
            check_dim(design.ncols(), op.ncols())?;
        }
        if let Some(t) = tau.iter().find(|t| !(**t >= 0.0)) {
            return Err(Error::InvalidArgument(format!("margin must be >= 0, got {t}")));
        }
        Ok(Self {
            design,
            targets,
            lambda,
            dim,
            constraint_points,
            constraint_ops,
            tau,
        })
    }

    pub fn num_params(&self) -> usize {
        self.design.ncols()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraint_ops.len()
    }

    /// Basis matrix `j` of constraint `i`.
    pub fn basis(&self, i: usize, j: usize) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_column_slice(n, n, self.constraint_ops[i].column(j).as_slice())
    }

    /// `C_i(θ)`.
    pub fn constraint_value(&self, i: usize, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let v = &self.constraint_ops[i] * theta;
        DMatrix::from_column_slice(n, n, v.as_slice())
    }

    /// Adjoint `C_i*(M)` under the Frobenius inner product.
    pub fn constraint_adjoint(&self, i: usize, m: &DMatrix<f64>) -> DVector<f64> {
        let flat = DVector::from_column_slice(m.as_slice());
        self.constraint_ops[i].tr_mul(&flat)
    }

    /// `|Aθ - b|² + λ|θ|²`.
    pub fn objective(&self, theta: &DVector<f64>) -> f64 {
        (&self.design * theta - &self.targets).norm_squared() + self.lambda * theta.norm_squared()
    }

    /// `max_i λ_max(C_i(θ) + τ_i I)`; `-∞` without constraints.
    pub fn max_constraint_violation(&self, theta: &DVector<f64>) -> f64 {
        (0..self.num_constraints())
            .map(|i| max_eigenvalue(&self.constraint_value(i, theta)) + self.tau[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Closed-form minimiser ignoring the constraints.
    pub fn ridge_solution(&self) -> Result<DVector<f64>> {
        let mut h = self.design.tr_mul(&self.design);
        for i in 0..h.nrows() {
            h[(i, i)] += self.lambda;
        }
        let rhs = self.design.tr_mul(&self.targets);
        Ok(Cholesky::new(h)
            .ok_or_else(|| Error::Conditioning("AᵀA + λI is not positive definite".into()))?
            .solve(&rhs))
    }
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => f64::NEG_INFINITY,
        1 => m[(0, 0)],
        2 => {
            let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            0.5 * (a + d) + (0.25 * (a - d) * (a - d) + b * b).sqrt()
        }
        _ => SymmetricEigen::new(symmetrize(m)).eigenvalues.max(),
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Builds the regression over `f(x) = Φ(x)ᵀ L θ` from `(x, ẋ)` pairs, with
/// contraction constraints `½(J_f + J_fᵀ)(c) ⪯ -τ I` at each of `cpoints`.
pub fn assemble_problem(
    map: &FeatureMap,
    proj: &VanishingProjector,
    pairs: &[(DVector<f64>, DVector<f64>)],
    cpoints: &[DVector<f64>],
    lambda: f64,
    tau: f64,
) -> Result<ConstrainedLSQProblem> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    let n = map.dim();
    let fd = map.feature_dim();
    check_dim(fd, proj.feature_dim())?;

    let mut design = DMatrix::zeros(pairs.len() * n, fd);
    let mut targets = DVector::zeros(pairs.len() * n);
    for (t, (x, xdot)) in pairs.iter().enumerate() {
        check_dim(n, xdot.len())?;
        let phi = map.eval(x)?;
        design.rows_mut(t * n, n).copy_from(&phi.transpose());
        targets.rows_mut(t * n, n).copy_from(xdot);
    }
    let design = proj.apply_right(&design);

    let constraint_ops = cpoints
        .iter()
        .map(|c| Ok(proj.apply_right(&map.symmetric_jacobian_columns(c)?)))
        .collect::<Result<Vec<_>>>()?;

    ConstrainedLSQProblem::new(
        design,
        targets,
        lambda,
        n,
        cpoints.to_vec(),
        constraint_ops,
        vec![tau; cpoints.len()],
    )
}

/// Frobenius-nearest PSD matrix: eigenvalues clamped at zero.
pub fn psd_project(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::InvalidArgument("PSD projection needs a square matrix".into()));
    }
    let sym = symmetrize(m);
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite matrix in PSD projection".into()));
    }
    if sym.nrows() == 2 {
        return Ok(psd_project_2x2(&sym));
    }
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("eigendecomposition did not converge".into()))?;
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(symmetrize(m));
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&clamped) * q.transpose())
}

fn psd_project_2x2(m: &DMatrix<f64>) -> DMatrix<f64> {
    let [a, b, d] = psd_project_sym2(m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    DMatrix::from_row_slice(2, 2, &[a, b, b, d])
}

/// Projection of the symmetric `[[a, b], [b, d]]`, as `[a', b', d']`.
fn psd_project_sym2(a: f64, b: f64, d: f64) -> [f64; 3] {
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (hi, lo) = (mean + rad, mean - rad);
    if lo >= 0.0 {
        return [a, b, d];
    }
    if hi <= 0.0 {
        return [0.0; 3];
    }
    // rank one: hi · u uᵀ with u the top eigenvector
    let (ux, uy) = if (a - lo).abs() >= (d - lo).abs() {
        (a - lo, b)
    } else {
        (b, d - lo)
    };
    let norm2 = ux * ux + uy * uy;
    if norm2 == 0.0 {
        return [hi, 0.0, hi];
    }
    let s = hi / norm2;
    [s * ux * ux, s * ux * uy, s * uy * uy]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ADMMSettings {
    pub rho: f64,
    pub max_iters: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Weight of the squared slack penalty; `0` keeps the constraints hard.
    pub slack_weight: f64,
    /// Residual balancing: double or halve `rho` when one residual exceeds
    /// the other by more than a factor of 10.
    pub adaptive_rho: bool,
    /// Over-relaxation factor in `(0, 2)`; `1` is the plain iteration.
    pub relaxation: f64,
    /// Run the iteration on a whitened objective with per-block normalised
    /// constraints. Convergence is still judged in the original units.
    pub precondition: bool,
}

impl Default for ADMMSettings {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 20_000,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            slack_weight: 0.0,
            adaptive_rho: true,
            relaxation: 1.6,
            precondition: true,
        }
    }
}

impl ADMMSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.eps_abs >= 0.0 && self.eps_rel >= 0.0) {
            return Err(Error::InvalidArgument("tolerances must be >= 0".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "relaxation must lie in (0, 2), got {}",
                self.relaxation
            )));
        }
        if !(self.slack_weight >= 0.0) {
            return Err(Error::InvalidArgument("slack_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics, recorded on request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub augmented_lagrangian: f64,
    /// `sqrt(|M⁺ - M|² + |r⁺|²)`, non-increasing for fixed `rho` and no
    /// relaxation.
    pub fixed_point_residual: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub theta: DVector<f64>,
    pub iters: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    /// `max_i λ_max(C_i(θ) + τ_i I)` of the hard constraints.
    pub max_constraint_violation: f64,
    /// Slack values when slack mode is on.
    pub slacks: Vec<f64>,
    pub rho: f64,
    pub history: Vec<IterationRecord>,
}

/// Solves the constrained problem with default history settings.
pub fn admm_solve(p: &ConstrainedLSQProblem, s: &ADMMSettings) -> Result<SolveReport> {
    AdmmSolver::new(p, s)?.run(false)
}

/// Same as [`admm_solve`], also recording per-iteration diagnostics.
pub fn admm_solve_with_history(
    p: &ConstrainedLSQProblem,
    s: &ADMMSettings,
) -> Result<SolveReport> {
    AdmmSolver::new(p, s)?.run(true)
}

struct AdmmSolver<'a> {
    problem: &'a ConstrainedLSQProblem,
    settings: ADMMSettings,
    /// Upper-triangular `R` with `RᵀR` the objective Hessian over two; the
    /// iteration runs in `φ = R x`, where the objective is `|φ|² - q̃ᵀφ`.
    r: DMatrix<f64>,
    q_scaled: DVector<f64>,
    /// Stacked, block-scaled constraint operators in `φ`: `m n² × nx`.
    ops: DMatrix<f64>,
    /// Stacked, block-scaled `vec(τ_i I)`.
    offset: DVector<f64>,
    /// Per-block scale `d_i`; block `i` of the iteration is `d_i` times the
    /// original constraint.
    block_scale: Vec<f64>,
    /// `|2Aᵀb|`, for the dual tolerance.
    linear_norm: f64,
    nx: usize,
}

impl<'a> AdmmSolver<'a> {
    fn new(problem: &'a ConstrainedLSQProblem, settings: &ADMMSettings) -> Result<Self> {
        settings.validate()?;
        let d = problem.num_params();
        let m = problem.num_constraints();
        let n = problem.dim;
        let nn = n * n;
        let slack = settings.slack_weight > 0.0 && m > 0;
        let nx = if slack { d + m } else { d };

        // objective ½xᵀPx - qᵀx with P = blockdiag(2(AᵀA + λI), 2w I)
        let mut half_p = DMatrix::zeros(nx, nx);
        half_p
            .view_mut((0, 0), (d, d))
            .copy_from(&problem.design.tr_mul(&problem.design));
        for i in 0..d {
            half_p[(i, i)] += problem.lambda;
        }
        for i in d..nx {
            half_p[(i, i)] = settings.slack_weight;
        }
        let mut linear = DVector::zeros(nx);
        linear
            .rows_mut(0, d)
            .copy_from(&(problem.design.tr_mul(&problem.targets) * 2.0));

        let mut raw = DMatrix::zeros(m * nn, nx);
        let mut offset = DVector::zeros(m * nn);
        for (i, op) in problem.constraint_ops.iter().enumerate() {
            raw.view_mut((i * nn, 0), (nn, d)).copy_from(op);
            for k in 0..n {
                offset[i * nn + k * n + k] = problem.tau[i];
                if slack {
                    raw[(i * nn + k * n + k, d + i)] = -1.0;
                }
            }
        }

        let (r, q_scaled, mut ops) = if settings.precondition {
            let chol = Cholesky::new(half_p).ok_or_else(|| {
                Error::Conditioning("objective Hessian is not positive definite".into())
            })?;
            let r = chol.l().transpose();
            // q̃ = R⁻ᵀq and C̃ = C R⁻¹, via triangular solves with Rᵀ
            let rt = r.transpose();
            let q_scaled = rt
                .solve_lower_triangular(&linear)
                .ok_or_else(|| Error::Conditioning("singular Cholesky factor".into()))?;
            let ops = if m > 0 {
                rt.solve_lower_triangular(&raw.transpose())
                    .ok_or_else(|| Error::Conditioning("singular Cholesky factor".into()))?
                    .transpose()
            } else {
                raw
            };
            (r, q_scaled, ops)
        } else {
            (DMatrix::identity(nx, nx), linear.clone(), raw)
        };

        let mut block_scale = vec![1.0; m];
        if settings.precondition {
            for (i, scale) in block_scale.iter_mut().enumerate() {
                let norm = ops.rows(i * nn, nn).norm();
                if norm > 0.0 {
                    *scale = 1.0 / norm;
                }
                ops.rows_mut(i * nn, nn).scale_mut(*scale);
                offset.rows_mut(i * nn, nn).scale_mut(*scale);
            }
        }

        Ok(Self {
            problem,
            settings: *settings,
            r,
            q_scaled,
            ops,
            offset,
            block_scale,
            linear_norm: linear.norm(),
            nx,
        })
    }

    /// Hessian of the iteration's objective in `φ`.
    fn hessian(&self) -> DMatrix<f64> {
        if self.settings.precondition {
            DMatrix::identity(self.nx, self.nx) * 2.0
        } else {
            let p = self.problem;
            let d = p.num_params();
            let mut h = DMatrix::zeros(self.nx, self.nx);
            h.view_mut((0, 0), (d, d))
                .copy_from(&(p.design.tr_mul(&p.design) * 2.0));
            for i in 0..d {
                h[(i, i)] += 2.0 * p.lambda;
            }
            for i in d..self.nx {
                h[(i, i)] = 2.0 * self.settings.slack_weight;
            }
            h
        }
    }

    fn factor(&self, rho: f64) -> Result<Cholesky<f64, Dyn>> {
        let mut h = self.hessian();
        if self.ops.nrows() > 0 {
            h += self.ops.tr_mul(&self.ops) * rho;
        }
        Cholesky::new(h).ok_or_else(|| {
            Error::Conditioning("ADMM system matrix is not positive definite".into())
        })
    }

    fn to_x(&self, phi: &DVector<f64>) -> DVector<f64> {
        if self.settings.precondition {
            self.r
                .solve_upper_triangular(phi)
                .expect("Cholesky factor is non-singular")
        } else {
            phi.clone()
        }
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        let d = self.problem.num_params();
        let theta = x.rows(0, d).into_owned();
        let slack: f64 = x.rows(d, self.nx - d).norm_squared();
        self.problem.objective(&theta) + self.settings.slack_weight * slack
    }

    fn run(&self, record: bool) -> Result<SolveReport> {
        let p = self.problem;
        let n = p.dim;
        let nn = n * n;
        let m = p.num_constraints();
        let mut rho = self.settings.rho;
        let mut chol = self.factor(rho)?;

        if m == 0 {
            let phi = chol.solve(&self.q_scaled);
            return Ok(self.report(self.to_x(&phi), 0, true, 0.0, 0.0, rho, Vec::new()));
        }

        let len = m * nn;
        let mut phi = DVector::zeros(self.nx);
        let mut big_m = DVector::zeros(len);
        let mut u = DVector::zeros(len);
        let mut cx = DVector::zeros(len);
        let eps_dual = self.settings.eps_abs + self.settings.eps_rel * self.linear_norm;

        let mut history = Vec::new();
        let mut best: Option<(f64, DVector<f64>, f64, f64)> = None;
        let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);

        for iter in 1..=self.settings.max_iters {
            // φ-update: (H + ρ CᵀC) φ = q + ρ Cᵀ(-τ - M - U)
            let rhs = &self.q_scaled - self.ops.tr_mul(&(&self.offset + &big_m + &u)) * rho;
            phi = chol.solve(&rhs);
            self.ops.mul_to(&phi, &mut cx);
            let prev = big_m.clone();
            let alpha = self.settings.relaxation;
            let cr = if alpha == 1.0 {
                cx.clone()
            } else {
                &cx * alpha - (&prev + &self.offset) * (1.0 - alpha)
            };

            // M-update: blockwise projection of -C(φ) - τI - U
            if n == 2 {
                let t = |k: usize| -cr[k] - self.offset[k] - u[k];
                for k in (0..len).step_by(4) {
                    let (a, b, d) = (t(k), 0.5 * (t(k + 1) + t(k + 2)), t(k + 3));
                    if !(a.is_finite() && b.is_finite() && d.is_finite()) {
                        return Err(Error::Numerical("non-finite ADMM iterate".into()));
                    }
                    let [pa, pb, pd] = psd_project_sym2(a, b, d);
                    big_m[k] = pa;
                    big_m[k + 1] = pb;
                    big_m[k + 2] = pb;
                    big_m[k + 3] = pd;
                }
            } else {
                for i in 0..m {
                    let r = i * nn..(i + 1) * nn;
                    let target =
                        DVector::from_iterator(nn, r.map(|k| -cr[k] - self.offset[k] - u[k]));
                    let proj = psd_project(&DMatrix::from_column_slice(n, n, target.as_slice()))?;
                    big_m.rows_mut(i * nn, nn).copy_from_slice(proj.as_slice());
                }
            }

            // U-update
            let u_prev = u.clone();
            u += &big_m + &cr + &self.offset;
            let resid = &big_m + &cx + &self.offset;

            // residuals in the original units
            primal = 0.0;
            let (mut m_norm, mut c_norm) = (0.0f64, 0.0f64);
            for i in 0..m {
                let inv = 1.0 / self.block_scale[i];
                primal = primal.max(resid.rows(i * nn, nn).norm() * inv);
                m_norm = m_norm.max(big_m.rows(i * nn, nn).norm() * inv);
                c_norm = c_norm.max(cx.rows(i * nn, nn).norm() * inv);
            }
            // ρ C̃ᵀ ΔM̃ is a gradient in φ; Rᵀ maps it back to x
            let s_phi = self.ops.tr_mul(&(&big_m - &prev)) * rho;
            dual = self.r.tr_mul(&s_phi).norm();

            let eps_pri = self.settings.eps_abs + self.settings.eps_rel * m_norm.max(c_norm);
            if record {
                // L_ρ(φ, M, U_prev) = g + ρ/2 |r + U_prev|² - ρ/2 |U_prev|²
                let lagr = self.objective(&self.to_x(&phi))
                    + 0.5 * rho * (&resid + &u_prev).norm_squared()
                    - 0.5 * rho * u_prev.norm_squared();
                history.push(IterationRecord {
                    primal_residual: primal,
                    dual_residual: dual,
                    augmented_lagrangian: lagr,
                    fixed_point_residual: ((&big_m - &prev).norm_squared() + resid.norm_squared())
                        .sqrt(),
                    rho,
                });
            }

            if primal <= eps_pri && dual <= eps_dual {
                return Ok(self.report(self.to_x(&phi), iter, true, primal, dual, rho, history));
            }

            let score = (primal / eps_pri).max(dual / eps_dual);
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, phi.clone(), primal, dual));
            }

            if self.settings.adaptive_rho && iter % 10 == 0 {
                let (rp, rd) = (primal / eps_pri, dual / eps_dual);
                let scale = if rp > 10.0 * rd {
                    2.0
                } else if rd > 10.0 * rp {
                    0.5
                } else {
                    1.0
                };
                if scale != 1.0 {
                    rho *= scale;
                    u /= scale;
                    chol = self.factor(rho)?;
                }
            }
        }

        let iters = self.settings.max_iters;
        let (bphi, bp, bd) = match best {
            Some((_, bphi, bp, bd)) => (bphi, bp, bd),
            None => (phi, primal, dual),
        };
        Ok(self.report(self.to_x(&bphi), iters, false, bp, bd, rho, history))
    }


    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        x: DVector<f64>,
        iters: usize,
        converged: bool,
        primal: f64,
        dual: f64,
        rho: f64,
        history: Vec<IterationRecord>,
    ) -> SolveReport {
        let d = self.problem.num_params();
        let theta = x.rows(0, d).into_owned();
        let slacks = x.rows(d, self.nx - d).iter().map(|s| s.max(0.0)).collect();
        SolveReport {
            objective: self.objective(&x),
            max_constraint_violation: self.problem.max_constraint_violation(&theta),
            theta,
            iters,
            converged,
            primal_residual: primal,
            dual_residual: dual,
            slacks,
            rho,
            history,
        }
    }
}
