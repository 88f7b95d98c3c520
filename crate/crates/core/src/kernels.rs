//! Exact matrix-valued kernels.
//!
//! Two kernels are supported, both built on the scalar Gaussian
//! `k(x, y) = exp(-|x - y|² / 2σ²)`:
//!
//! * Gaussian separable: `K(x, y) = k(x, y) I`
//! * curl-free: `K(x, y) = (1/σ²) k(x, y) [I - (x - y)(x - y)ᵀ / σ²]`, the
//!   negated Hessian of `k`, whose RKHS fields are gradients of potentials.
//!
//! The vanishing kernel `K^Z(x, y) = K(x, y) - K(x, Z) K(Z, Z)⁻¹ K(Z, y)`
//! generates fields that are exactly zero on the point set `Z`.
//!
//! Everything here scales with the number of data points and serves as the
//! reference the random-feature pathway is checked against.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Ridge added to `K(Z, Z)` before inversion.
pub const EQUILIBRIUM_REGULARIZATION: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    GaussianSeparable,
    CurlFree,
}

impl std::fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelVariant::GaussianSeparable => "gaussian_separable",
            KernelVariant::CurlFree => "curl_free",
        })
    }
}

impl std::str::FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_separable" => Ok(KernelVariant::GaussianSeparable),
            "curl_free" => Ok(KernelVariant::CurlFree),
            other => Err(Error::InvalidArgument(format!("unknown kernel '{other}'"))),
        }
    }
}

/// A kernel family together with its bandwidth (same units as the states).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelKind {
    pub variant: KernelVariant,
    pub sigma: f64,
}

impl KernelKind {
    pub fn new(variant: KernelVariant, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be positive, got {sigma}"
            )));
        }
        Ok(Self { variant, sigma })
    }

    pub fn gaussian_separable(sigma: f64) -> Result<Self> {
        Self::new(KernelVariant::GaussianSeparable, sigma)
    }

    pub fn curl_free(sigma: f64) -> Result<Self> {
        Self::new(KernelVariant::CurlFree, sigma)
    }

    /// Scalar Gaussian `k(x, y)`.
    pub fn scalar(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let r2 = (x - y).norm_squared();
        (-r2 / (2.0 * self.sigma * self.sigma)).exp()
    }

    fn eval_unchecked(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let d = x - y;
        let s2 = self.sigma * self.sigma;
        let k = (-d.norm_squared() / (2.0 * s2)).exp();
        match self.variant {
            KernelVariant::GaussianSeparable => DMatrix::identity(n, n) * k,
            KernelVariant::CurlFree => {
                (DMatrix::identity(n, n) - &d * d.transpose() / s2) * (k / s2)
            }
        }
    }
}

/// `K(x, y)` as an `n × n` matrix.
pub fn eval_kernel(kind: &KernelKind, x: &DVector<f64>, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_dim(x.len(), y.len())?;
    Ok(kind.eval_unchecked(x, y))
}

/// Block matrix with `(i, j)` block `K(xs[i], ys[j])`.
fn block_gram(kind: &KernelKind, xs: &[DVector<f64>], ys: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(xs.len() * n, ys.len() * n);
    for (i, x) in xs.iter().enumerate() {
        for (j, y) in ys.iter().enumerate() {
            g.view_mut((i * n, j * n), (n, n))
                .copy_from(&kind.eval_unchecked(x, y));
        }
    }
    g
}

fn common_dim(sets: &[&[DVector<f64>]]) -> Result<Option<usize>> {
    let mut dim = None;
    for p in sets.iter().flat_map(|s| s.iter()) {
        match dim {
            None => dim = Some(p.len()),
            Some(d) => check_dim(d, p.len())?,
        }
    }
    Ok(dim)
}

/// The kernel restricted to fields vanishing on `equilibria`, with the
/// factorisation of `K(Z, Z) + εI` cached.
#[derive(Debug, Clone)]
pub struct VanishingKernel {
    kind: KernelKind,
    equilibria: Vec<DVector<f64>>,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl VanishingKernel {
    pub fn new(kind: KernelKind, equilibria: &[DVector<f64>]) -> Result<Self> {
        let factor = match common_dim(&[equilibria])? {
            None => None,
            Some(n) => {
                let mut kzz = block_gram(&kind, equilibria, equilibria, n);
                for i in 0..kzz.nrows() {
                    kzz[(i, i)] += EQUILIBRIUM_REGULARIZATION;
                }
                Some(Cholesky::new(kzz).ok_or_else(|| {
                    Error::Conditioning("K(Z, Z) is singular after regularization".into())
                })?)
            }
        };
        Ok(Self {
            kind,
            equilibria: equilibria.to_vec(),
            factor,
        })
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn equilibria(&self) -> &[DVector<f64>] {
        &self.equilibria
    }

    /// `K^Z(X, Y)` as a block matrix.
    pub fn gram(&self, xs: &[DVector<f64>], ys: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let Some(n) = common_dim(&[xs, ys, &self.equilibria])? else {
            return Ok(DMatrix::zeros(0, 0));
        };
        let mut g = block_gram(&self.kind, xs, ys, n);
        if let Some(factor) = &self.factor {
            let kxz = block_gram(&self.kind, xs, &self.equilibria, n);
            let kzy = block_gram(&self.kind, &self.equilibria, ys, n);
            g -= kxz * factor.solve(&kzy);
        }
        Ok(g)
    }

    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.gram(std::slice::from_ref(x), std::slice::from_ref(y))
    }
}

/// `K^Z(x, y)`; equals [`eval_kernel`] when `equilibria` is empty.
pub fn eval_vanishing_kernel(
    kind: &KernelKind,
    equilibria: &[DVector<f64>],
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_dim(x.len(), y.len())?;
    VanishingKernel::new(*kind, equilibria)?.eval(x, y)
}

/// Block Gram matrix of `K^Z` between `xs` and `ys` (`|xs|·n × |ys|·n`).
pub fn gram_matrix(
    kind: &KernelKind,
    xs: &[DVector<f64>],
    ys: &[DVector<f64>],
    equilibria: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    VanishingKernel::new(*kind, equilibria)?.gram(xs, ys)
}

/// A kernel expansion `f(x) = Σᵢ K^Z(x, xᵢ) αᵢ`.
#[derive(Debug, Clone)]
pub struct ExactModel {
    pub kernel: VanishingKernel,
    pub anchors: Vec<DVector<f64>>,
    pub alphas: Vec<DVector<f64>>,
}

impl ExactModel {
    pub fn kind(&self) -> &KernelKind {
        self.kernel.kind()
    }

    pub fn equilibria(&self) -> &[DVector<f64>] {
        self.kernel.equilibria()
    }
}

/// Kernel ridge regression: solves `(G + λI) α = vec(Ẋ)` with `G = K^Z(X, X)`.
pub fn exact_ridge_fit(
    kind: &KernelKind,
    equilibria: &[DVector<f64>],
    xs: &[DVector<f64>],
    xdots: &[DVector<f64>],
    lambda: f64,
) -> Result<ExactModel> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("no training points".into()));
    }
    check_dim(xs.len(), xdots.len())?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge weight must be positive, got {lambda}"
        )));
    }
    let n = xs[0].len();
    common_dim(&[xs, xdots, equilibria])?;

    let kernel = VanishingKernel::new(*kind, equilibria)?;
    let mut g = kernel.gram(xs, xs)?;
    // symmetrise away the round-off of the Z correction
    g = (&g + g.transpose()) * 0.5;
    for i in 0..g.nrows() {
        g[(i, i)] += lambda;
    }
    let rhs = DVector::from_iterator(xs.len() * n, xdots.iter().flat_map(|v| v.iter().copied()));
    let alpha = Cholesky::new(g)
        .ok_or_else(|| Error::Conditioning("G + λI is not positive definite".into()))?
        .solve(&rhs);
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::Conditioning("non-finite ridge coefficients".into()));
    }
    let alphas = alpha
        .as_slice()
        .chunks(n)
        .map(DVector::from_column_slice)
        .collect();
    Ok(ExactModel {
        kernel,
        anchors: xs.to_vec(),
        alphas,
    })
}

/// `Σᵢ K^Z(x, xᵢ) αᵢ`.
pub fn exact_field_eval(model: &ExactModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    let n = x.len();
    if model.anchors.is_empty() {
        return Ok(DVector::zeros(n));
    }
    check_dim(model.anchors[0].len(), n)?;
    let row = model.kernel.gram(std::slice::from_ref(x), &model.anchors)?;
    let alpha = DVector::from_iterator(
        model.alphas.len() * n,
        model.alphas.iter().flat_map(|a| a.iter().copied()),
    );
    Ok(row * alpha)
}

/// Potential `V` of a curl-free expansion without equilibria, normalised so
/// that `f = -∇V`: `V(x) = Σᵢ ∇ₓk(x, xᵢ)ᵀ αᵢ` with `∇ₓk = -k (x - xᵢ) / σ²`.
pub fn exact_potential_eval(model: &ExactModel, x: &DVector<f64>) -> Result<f64> {
    let kind = model.kind();
    if kind.variant != KernelVariant::CurlFree {
        return Err(Error::InvalidArgument(
            "potential is only defined for the curl-free kernel".into(),
        ));
    }
    if !model.equilibria().is_empty() {
        return Err(Error::InvalidArgument(
            "potential of the vanishing kernel expansion is not supported".into(),
        ));
    }
    let s2 = kind.sigma * kind.sigma;
    let mut v = 0.0;
    for (anchor, alpha) in model.anchors.iter().zip(&model.alphas) {
        check_dim(anchor.len(), x.len())?;
        let d = x - anchor;
        let grad_k = &d * (-kind.scalar(x, anchor) / s2);
        v += grad_k.dot(alpha);
    }
    Ok(v)
}
