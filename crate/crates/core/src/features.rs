//! Random matrix-valued feature maps.
//!
//! With frequencies `w_j ~ N(0, σ⁻² I)` and phases `b_j ~ U[0, 2π)`:
//!
//! * Gaussian separable: `Φ(x) = φ(x) ⊗ I`, `φ_j(x) = √(2/s) cos(w_jᵀx + b_j)`.
//!   Rows are feature-major: block `j` (rows `j·n .. j·n + n`) is `φ_j(x) I`.
//! * curl-free: row `j` of `Φ(x)` is `√(2/s) sin(w_jᵀx + b_j) w_jᵀ`.
//!
//! In both cases `Φ(x)ᵀΦ(y)` is an unbiased estimate of the exact kernel.
//! A field is parameterised as `f(x) = Φ(x)ᵀ L θ`, where `L` projects out the
//! range of `Φ(Z)` so the field vanishes on the equilibria `Z`.

use nalgebra::{DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{KernelKind, KernelVariant};

/// Sampled random-feature parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub kind: KernelKind,
    /// `s × n`, one frequency per row.
    pub freqs: DMatrix<f64>,
    pub phases: DVector<f64>,
}

impl FeatureMap {
    pub fn new(kind: KernelKind, freqs: DMatrix<f64>, phases: DVector<f64>) -> Result<Self> {
        check_dim(freqs.nrows(), phases.len())?;
        if freqs.nrows() == 0 || freqs.ncols() == 0 {
            return Err(Error::InvalidArgument("empty feature map".into()));
        }
        Ok(Self { kind, freqs, phases })
    }

    /// Number of random frequencies `s`.
    pub fn num_features(&self) -> usize {
        self.freqs.nrows()
    }

    /// State dimension `n`.
    pub fn dim(&self) -> usize {
        self.freqs.ncols()
    }

    /// Rows of `Φ(x)`: `s·n` (Gaussian separable) or `s` (curl-free).
    pub fn feature_dim(&self) -> usize {
        match self.kind.variant {
            KernelVariant::GaussianSeparable => self.num_features() * self.dim(),
            KernelVariant::CurlFree => self.num_features(),
        }
    }

    fn scale(&self) -> f64 {
        (2.0 / self.num_features() as f64).sqrt()
    }

    /// `w_jᵀx + b_j` for every frequency.
    fn arguments(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.freqs * x + &self.phases
    }

    /// `Φ(x)`, a `feature_dim × n` matrix.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x.len())?;
        let n = self.dim();
        let c = self.scale();
        let args = self.arguments(x);
        let mut phi = DMatrix::zeros(self.feature_dim(), n);
        match self.kind.variant {
            KernelVariant::GaussianSeparable => {
                for (j, a) in args.iter().enumerate() {
                    let v = c * a.cos();
                    for k in 0..n {
                        phi[(j * n + k, k)] = v;
                    }
                }
            }
            KernelVariant::CurlFree => {
                for (j, a) in args.iter().enumerate() {
                    let v = c * a.sin();
                    for k in 0..n {
                        phi[(j, k)] = v * self.freqs[(j, k)];
                    }
                }
            }
        }
        Ok(phi)
    }

    /// `f(x) = Φ(x)ᵀ η` without forming `Φ(x)`.
    pub fn apply(&self, x: &DVector<f64>, eta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.feature_dim(), eta.len())?;
        let n = self.dim();
        let c = self.scale();
        let args = self.arguments(x);
        let mut f = DVector::zeros(n);
        match self.kind.variant {
            KernelVariant::GaussianSeparable => {
                for (j, a) in args.iter().enumerate() {
                    let v = c * a.cos();
                    for k in 0..n {
                        f[k] += v * eta[j * n + k];
                    }
                }
            }
            KernelVariant::CurlFree => {
                for (j, a) in args.iter().enumerate() {
                    let v = c * a.sin() * eta[j];
                    for k in 0..n {
                        f[k] += v * self.freqs[(j, k)];
                    }
                }
            }
        }
        Ok(f)
    }

    /// Jacobian of `x ↦ Φ(x)ᵀ η`.
    pub fn jacobian(&self, x: &DVector<f64>, eta: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.feature_dim(), eta.len())?;
        let n = self.dim();
        let c = self.scale();
        let args = self.arguments(x);
        let mut jac = DMatrix::zeros(n, n);
        match self.kind.variant {
            KernelVariant::GaussianSeparable => {
                // J = Θᵀ Jφ with Θ the s × n reshape of η, Jφ row j = -c sin(.) w_jᵀ
                for (j, a) in args.iter().enumerate() {
                    let g = -c * a.sin();
                    for r in 0..n {
                        let t = eta[j * n + r] * g;
                        for k in 0..n {
                            jac[(r, k)] += t * self.freqs[(j, k)];
                        }
                    }
                }
            }
            KernelVariant::CurlFree => {
                for (j, a) in args.iter().enumerate() {
                    let t = c * a.cos() * eta[j];
                    for r in 0..n {
                        let wr = t * self.freqs[(j, r)];
                        for k in 0..n {
                            jac[(r, k)] += wr * self.freqs[(j, k)];
                        }
                    }
                }
            }
        }
        Ok(jac)
    }

    /// Symmetrised per-coordinate Jacobians at `x`, as an `n² × feature_dim`
    /// matrix whose column `m` is `vec(½(J_m + J_mᵀ))` (column-major), where
    /// `J_m` is the Jacobian of the `m`-th column of `Φ(x)ᵀ`.
    pub fn symmetric_jacobian_columns(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x.len())?;
        let n = self.dim();
        let c = self.scale();
        let args = self.arguments(x);
        let mut cols = DMatrix::zeros(n * n, self.feature_dim());
        match self.kind.variant {
            KernelVariant::GaussianSeparable => {
                // J_(j,r) = e_r gᵀ with g = -c sin(.) w_j
                for (j, a) in args.iter().enumerate() {
                    let g = -c * a.sin();
                    for r in 0..n {
                        let m = j * n + r;
                        for k in 0..n {
                            let half = 0.5 * g * self.freqs[(j, k)];
                            // entries (r, k) and (k, r), column-major index col * n + row
                            cols[(k * n + r, m)] += half;
                            cols[(r * n + k, m)] += half;
                        }
                    }
                }
            }
            KernelVariant::CurlFree => {
                for (j, a) in args.iter().enumerate() {
                    let t = c * a.cos();
                    for r in 0..n {
                        for k in 0..n {
                            cols[(k * n + r, j)] = t * self.freqs[(j, r)] * self.freqs[(j, k)];
                        }
                    }
                }
            }
        }
        Ok(cols)
    }

    /// `Φ(X) = [Φ(x_1) … Φ(x_l)]`, a `feature_dim × n·l` matrix.
    pub fn eval_many(&self, points: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut out = DMatrix::zeros(self.feature_dim(), n * points.len());
        for (i, p) in points.iter().enumerate() {
            out.columns_mut(i * n, n).copy_from(&self.eval(p)?);
        }
        Ok(out)
    }
}

/// Draws `s` frequencies and phases for `kind` in dimension `n`.
///
/// Uses ChaCha20 seeded from `seed`; the stream order is all frequencies
/// (row by row) followed by all phases.
pub fn sample_feature_map(kind: KernelKind, s: usize, n: usize, seed: u64) -> Result<FeatureMap> {
    if s == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "feature count and dimension must be positive (s = {s}, n = {n})"
        )));
    }
    let kind = KernelKind::new(kind.variant, kind.sigma)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / kind.sigma)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut freqs = DMatrix::zeros(s, n);
    for j in 0..s {
        for k in 0..n {
            freqs[(j, k)] = normal.sample(&mut rng);
        }
    }
    let phases = DVector::from_fn(s, |_, _| rng.random_range(0.0..std::f64::consts::TAU));
    FeatureMap::new(kind, freqs, phases)
}

/// `Φ(x)` for `map`.
pub fn eval_features(map: &FeatureMap, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    map.eval(x)
}

/// Jacobian of `f(x) = Φ(x)ᵀ θ`.
pub fn eval_feature_jacobians(
    map: &FeatureMap,
    x: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    map.jacobian(x, theta)
}

/// Orthogonal projector `L = I - QQᵀ` onto the complement of `range Φ(Z)`.
///
/// Only the orthonormal basis `Q` is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct VanishingProjector {
    basis: DMatrix<f64>,
    equilibria: Vec<DVector<f64>>,
}

impl VanishingProjector {
    /// The identity projector (no equilibria).
    pub fn identity(feature_dim: usize) -> Self {
        Self {
            basis: DMatrix::zeros(feature_dim, 0),
            equilibria: Vec::new(),
        }
    }

    /// Rebuilds a projector from a stored orthonormal basis.
    pub fn from_basis(basis: DMatrix<f64>, equilibria: Vec<DVector<f64>>) -> Self {
        Self { basis, equilibria }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn equilibria(&self) -> &[DVector<f64>] {
        &self.equilibria
    }

    pub fn feature_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// `L v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.basis.ncols() == 0 {
            return v.clone();
        }
        v - &self.basis * (self.basis.transpose() * v)
    }

    /// `M L` for a matrix with `feature_dim` columns.
    pub fn apply_right(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.basis.ncols() == 0 {
            return m.clone();
        }
        m - (m * &self.basis) * self.basis.transpose()
    }

    /// The dense `feature_dim × feature_dim` matrix `L`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.feature_dim();
        DMatrix::identity(d, d) - &self.basis * self.basis.transpose()
    }
}

/// Builds the projector that zeroes `Φ` on `equilibria`.
///
/// The basis of `range Φ(Z)` comes from an SVD; directions with negligible
/// singular values are dropped (with a warning) so rank-deficient `Φ(Z)` only
/// projects out the achieved range.
pub fn build_vanishing_projector(
    map: &FeatureMap,
    equilibria: &[DVector<f64>],
) -> Result<VanishingProjector> {
    let fd = map.feature_dim();
    if equilibria.is_empty() {
        return Ok(VanishingProjector::identity(fd));
    }
    let cols = map.dim() * equilibria.len();
    if fd <= cols {
        return Err(Error::InvalidArgument(format!(
            "feature dimension {fd} must exceed n·|Z| = {cols}"
        )));
    }
    let phi_z = map.eval_many(equilibria)?;
    let svd = SVD::try_new(phi_z, true, false, 5.0 * f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD of Φ(Z) did not converge".into()))?;
    let u = svd.u.as_ref().expect("requested U");
    let smax = svd.singular_values.max();
    let tol = fd.max(cols) as f64 * f64::EPSILON * smax;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    if keep.len() < cols {
        log::warn!(
            "Φ(Z) is rank deficient ({} of {cols}); projecting out the achieved range only",
            keep.len()
        );
    }
    let mut basis = DMatrix::zeros(fd, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.set_column(c, &u.column(i));
    }
    Ok(VanishingProjector {
        basis,
        equilibria: equilibria.to_vec(),
    })
}

/// Potential of a curl-free field `f = Φ(x)ᵀ L θ`, normalised so `f = -∇V`:
/// `V(x) = √(2/s) Σ_j η_j cos(w_jᵀx + b_j)` with `η = L θ`.
pub fn potential_from_features(
    map: &FeatureMap,
    proj: &VanishingProjector,
    theta: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<f64> {
    check_dim(map.feature_dim(), theta.len())?;
    check_dim(map.feature_dim(), proj.feature_dim())?;
    potential_from_eta(map, &proj.apply(theta), x)
}

pub(crate) fn potential_from_eta(map: &FeatureMap, eta: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    if map.kind.variant != KernelVariant::CurlFree {
        return Err(Error::InvalidArgument(
            "potential is only defined for curl-free feature maps".into(),
        ));
    }
    check_dim(map.dim(), x.len())?;
    let args = map.arguments(x);
    Ok(map.scale() * args.iter().zip(eta.iter()).map(|(a, e)| e * a.cos()).sum::<f64>())
}
