//! Learned vector fields, contraction diagnostics and rollouts.

mod export;
mod integrator;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::features::{potential_from_eta, FeatureMap, VanishingProjector};
use crate::kernels::KernelVariant;
use crate::solver::max_eigenvalue;

pub use export::{export_field_grid, FieldGrid};
pub use integrator::{rollout, rollout_sampled, IntegratorSettings, RolloutResult};

/// An autonomous system `ẋ = f(x)`.
///
/// Implementations may assume `x.len() == self.dim()`; the public entry
/// points check it.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `V` with `f = -∇V`, when the field is a gradient flow.
    fn potential(&self, _x: &DVector<f64>) -> Option<f64> {
        None
    }
}

/// `f(x) = Φ(x)ᵀ L θ`.
#[derive(Debug, Clone)]
pub struct TrainedField {
    map: FeatureMap,
    proj: VanishingProjector,
    theta: DVector<f64>,
    tau: f64,
    eta: DVector<f64>,
}

impl TrainedField {
    pub fn new(
        map: FeatureMap,
        proj: VanishingProjector,
        theta: DVector<f64>,
        tau: f64,
    ) -> Result<Self> {
        check_dim(map.feature_dim(), theta.len())?;
        check_dim(map.feature_dim(), proj.feature_dim())?;
        let eta = proj.apply(&theta);
        Ok(Self {
            map,
            proj,
            theta,
            tau,
            eta,
        })
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn projector(&self) -> &VanishingProjector {
        &self.proj
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn equilibria(&self) -> &[DVector<f64>] {
        self.proj.equilibria()
    }
}

impl VectorField for TrainedField {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.map.apply(x, &self.eta).expect("state dimension")
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.map.jacobian(x, &self.eta).expect("state dimension")
    }

    fn potential(&self, x: &DVector<f64>) -> Option<f64> {
        match self.map.kind.variant {
            KernelVariant::CurlFree => potential_from_eta(&self.map, &self.eta, x).ok(),
            KernelVariant::GaussianSeparable => None,
        }
    }
}

/// `f(x) = A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub matrix: DMatrix<f64>,
}

impl LinearField {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidArgument("linear field needs a square matrix".into()));
        }
        Ok(Self { matrix })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(n, n),
        }
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn potential(&self, x: &DVector<f64>) -> Option<f64> {
        // V = -½ xᵀAx for symmetric A
        let asym = (&self.matrix - self.matrix.transpose()).amax();
        (asym == 0.0).then(|| -0.5 * x.dot(&(&self.matrix * x)))
    }
}

pub fn field_eval<F: VectorField + ?Sized>(f: &F, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(f.dim(), x.len())?;
    Ok(f.eval(x))
}

pub fn field_jacobian<F: VectorField + ?Sized>(f: &F, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_dim(f.dim(), x.len())?;
    Ok(f.jacobian(x))
}

/// `λ_max(½(J + Jᵀ))` at `x`.
pub fn max_contraction_eigenvalue<F: VectorField + ?Sized>(f: &F, x: &DVector<f64>) -> Result<f64> {
    let j = field_jacobian(f, x)?;
    Ok(max_eigenvalue(&((&j + j.transpose()) * 0.5)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_vanishing_projector, sample_feature_map};
    use crate::kernels::KernelKind;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn trained(kind: KernelKind, z: &[DVector<f64>], seed: u64) -> TrainedField {
        let map = sample_feature_map(kind, 30, 2, seed).unwrap();
        let proj = build_vanishing_projector(&map, z).unwrap();
        let theta = DVector::from_fn(map.feature_dim(), |i, _| ((i * 7 + 3) % 11) as f64 - 5.0);
        TrainedField::new(map, proj, theta, 0.0).unwrap()
    }

    #[test]
    fn field_vanishes_at_equilibria() {
        let z = vec![v(&[0.0, 0.0]), v(&[3.0, -1.0])];
        for kind in [KernelKind::curl_free(2.0).unwrap(), KernelKind::gaussian_separable(2.0).unwrap()] {
            let f = trained(kind, &z, 5);
            for p in &z {
                assert!(field_eval(&f, p).unwrap().norm() <= 1e-8);
            }
            assert!(field_eval(&f, &v(&[1.0, 1.0])).unwrap().norm() > 1e-3);
        }
    }

    #[test]
    fn zero_theta_gives_zero_field() {
        let map = sample_feature_map(KernelKind::curl_free(1.0).unwrap(), 10, 2, 0).unwrap();
        let proj = VanishingProjector::identity(map.feature_dim());
        let f = TrainedField::new(map, proj, DVector::zeros(10), 0.0).unwrap();
        assert_eq!(field_eval(&f, &v(&[0.3, 0.1])).unwrap(), DVector::zeros(2));
        assert!(field_eval(&f, &v(&[0.3])).is_err());
    }

    #[test]
    fn contraction_eigenvalue_examples() {
        let f = LinearField::new(DMatrix::from_diagonal(&v(&[-2.0, -1.0]))).unwrap();
        assert_abs_diff_eq!(max_contraction_eigenvalue(&f, &v(&[5.0, 5.0])).unwrap(), -1.0);
        let f = LinearField::new(DMatrix::from_row_slice(2, 2, &[-3.0, 1.0, 1.0, -3.0])).unwrap();
        assert_abs_diff_eq!(max_contraction_eigenvalue(&f, &v(&[0.0, 0.0])).unwrap(), -2.0, epsilon = 1e-14);
        // only the symmetric part matters
        let f = LinearField::new(DMatrix::from_row_slice(2, 2, &[-1.0, 5.0, -5.0, -1.0])).unwrap();
        assert_abs_diff_eq!(max_contraction_eigenvalue(&f, &v(&[0.0, 0.0])).unwrap(), -1.0, epsilon = 1e-14);
    }

    #[test]
    fn trained_jacobian_matches_finite_differences() {
        let f = trained(KernelKind::gaussian_separable(1.5).unwrap(), &[v(&[0.0, 0.0])], 2);
        let x = v(&[0.4, -0.7]);
        let j = field_jacobian(&f, &x).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut e = DVector::zeros(2);
            e[k] = h;
            let col = (f.eval(&(&x + &e)) - f.eval(&(&x - &e))) / (2.0 * h);
            assert!((col - j.column(k)).norm() <= 1e-6 * (1.0 + j.norm()));
        }
    }

    #[test]
    fn potential_only_for_curl_free() {
        let cf = trained(KernelKind::curl_free(2.0).unwrap(), &[v(&[0.0, 0.0])], 1);
        let gs = trained(KernelKind::gaussian_separable(2.0).unwrap(), &[v(&[0.0, 0.0])], 1);
        assert!(cf.potential(&v(&[1.0, 0.0])).is_some());
        assert!(gs.potential(&v(&[1.0, 0.0])).is_none());
        let lin = LinearField::new(DMatrix::from_diagonal(&v(&[-1.0, -2.0]))).unwrap();
        assert_abs_diff_eq!(lin.potential(&v(&[1.0, 1.0])).unwrap(), 1.5);
    }
}
