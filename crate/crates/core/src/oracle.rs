//! Gaussian-likelihood ground truth: the exact GP log marginal likelihood
//! and the collapsed inducing-point bound, plus the closed-form optimal
//! variational distribution for the Gaussian case. These functions exist to
//! validate the uncollapsed bound and the shared kernel machinery.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::kernels::{KernelError, KernelSpec};
use crate::numerics::{
    cholesky_psd, logdet_from_chol, solve_lower, solve_lower_vec, JitterPolicy, NumericsError,
    PsdMatrix,
};
use crate::real::{cst, Real};
use crate::svgp::VariationalGaussian;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("noise variance must be strictly positive")]
    NonPositiveNoise,
    #[error("instance has {rows} rows but {labels} labels")]
    LabelMismatch { rows: usize, labels: usize },
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// A GP regression problem: inputs, targets, kernel, observation noise.
#[derive(Debug, Clone)]
pub struct RegressionInstance<T: Real> {
    pub x: DMatrix<T>,
    pub y: DVector<T>,
    pub kernel: KernelSpec<T>,
    pub noise_variance: T,
}

impl<T: Real> RegressionInstance<T> {
    pub fn new(
        x: DMatrix<T>,
        y: DVector<T>,
        kernel: KernelSpec<T>,
        noise_variance: T,
    ) -> Result<Self> {
        if !(noise_variance > T::zero()) {
            return Err(OracleError::NonPositiveNoise);
        }
        if x.nrows() != y.len() {
            return Err(OracleError::LabelMismatch {
                rows: x.nrows(),
                labels: y.len(),
            });
        }
        Ok(Self {
            x,
            y,
            kernel,
            noise_variance,
        })
    }
}

/// Exact log marginal likelihood log N(y | 0, K_ff + σ²I) via Cholesky.
pub fn exact_lml<T: Real>(inst: &RegressionInstance<T>) -> Result<T> {
    let n = inst.x.nrows();
    let mut k = inst.kernel.gram(&inst.x).into_matrix();
    for i in 0..n {
        k[(i, i)] += inst.noise_variance;
    }
    let chol = cholesky_psd(&PsdMatrix::new(k)?, JitterPolicy::default())?;
    let alpha = solve_lower_vec(&chol.factor, &inst.y)?;
    let half = cst::<T>(0.5);
    Ok(-half * alpha.norm_squared()
        - half * logdet_from_chol(&chol.factor)
        - half * cst::<T>(n as f64) * cst::<T>(2.0 * std::f64::consts::PI).ln())
}

/// Collapsed inducing-point lower bound on the log marginal likelihood:
/// log N(y | 0, Q_nn + σ²I) − tr(K_nn − Q_nn)/(2σ²), evaluated through the
/// rank-M structure in O(NM²) time; no N×N matrix is ever formed.
pub fn titsias_bound<T: Real>(inst: &RegressionInstance<T>, z: &DMatrix<T>) -> Result<T> {
    let n = inst.x.nrows();
    let s2 = inst.noise_variance;
    let half = cst::<T>(0.5);

    let kmm = inst.kernel.gram(z);
    let chol = cholesky_psd(&kmm, JitterPolicy::default())?;
    let kmn = inst.kernel.cross_cov(&inst.x, z)?.transpose(); // M×N
    let v = solve_lower(&chol.factor, &kmn)?;

    // trace term over the diagonal only
    let kdiag = inst.kernel.diag(&inst.x);
    let mut trace = T::zero();
    for i in 0..n {
        trace += kdiag[i] - v.column(i).norm_squared();
    }

    // Woodbury: Sigma = σ²I + VᵀV
    let m = z.nrows();
    let mut aw = &v * v.transpose() / s2;
    for i in 0..m {
        aw[(i, i)] += T::one();
    }
    let chol_w = cholesky_psd(&PsdMatrix::new(aw)?, JitterPolicy::default())?;
    let w = &v * &inst.y;
    let lw_w = solve_lower_vec(&chol_w.factor, &w)?;
    let quad = inst.y.norm_squared() / s2 - lw_w.norm_squared() / (s2 * s2);
    let logdet = cst::<T>(n as f64) * s2.ln() + logdet_from_chol(&chol_w.factor);

    Ok(-half * quad
        - half * logdet
        - half * cst::<T>(n as f64) * cst::<T>(2.0 * std::f64::consts::PI).ln()
        - trace / (cst::<T>(2.0) * s2))
}

/// The (m*, S*) at which the uncollapsed bound attains the collapsed value:
/// S* = K_mm Σ⁻¹ K_mm and m* = σ⁻² K_mm Σ⁻¹ K_mn y with Σ = K_mm + σ⁻² K_mn K_nm.
///
/// Uses the same jittered K_mm that the model side would use, so the two
/// bounds agree to numerical precision.
pub fn optimal_q_gaussian<T: Real>(
    inst: &RegressionInstance<T>,
    z: &DMatrix<T>,
) -> Result<VariationalGaussian<T>> {
    let m = z.nrows();
    let s2 = inst.noise_variance;

    let kmm = inst.kernel.gram(z);
    let chol = cholesky_psd(&kmm, JitterPolicy::default())?;
    let mut kmm_j = kmm.into_matrix();
    for i in 0..m {
        kmm_j[(i, i)] += chol.jitter;
    }

    let knm = inst.kernel.cross_cov(&inst.x, z)?;
    let sigma = &kmm_j + knm.transpose() * &knm / s2;
    let chol_sigma = cholesky_psd(&PsdMatrix::new(sigma)?, JitterPolicy::default())?;
    // Σ⁻¹ K_mm
    let inv_sigma_kmm = crate::numerics::solve_chol(&chol_sigma.factor, &kmm_j)?;
    let s_star = &kmm_j * &inv_sigma_kmm;
    // symmetrize against roundoff before factorizing
    let s_star = (&s_star + s_star.transpose()) * cst::<T>(0.5);
    let l_s = cholesky_psd(&PsdMatrix::new(s_star)?, JitterPolicy::default())?.factor;

    let kmn_y = knm.transpose() * &inst.y;
    let m_star = &kmm_j * crate::numerics::solve_chol_vec(&chol_sigma.factor, &kmn_y)? / s2;

    Ok(VariationalGaussian { m: m_star, l_s })
}
