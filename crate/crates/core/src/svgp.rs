//! The inducing-point variational GP: marginal posteriors, KL term, evidence
//! lower bound, hand-derived gradients, and prediction.
//!
//! With Z the inducing inputs, q(u) = N(m, S) and A = K_nm K_mm⁻¹, the
//! marginals of q(f) are mu = A m and var_i = k_ii + a_iᵀ(S − K_mm)a_i; the
//! objective is scale·Σ E_q[log p(y_i|f_i)] − KL[q(u)‖p(u)]. Only the N
//! marginals are ever formed, never an N×N covariance.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::kernels::{KernelError, KernelSpec};
use crate::likelihoods::{predictive_prob, Likelihood, LikelihoodError};
use crate::numerics::{
    cholesky_psd, inverse_from_chol, logdet_from_chol, solve_lower, solve_lower_transpose,
    CholeskyOutcome, JitterPolicy, LowerTriangular, NumericsError,
};
use crate::real::{cst, Real};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SvgpError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("inducing inputs contain duplicate rows ({0} and {1})")]
    DuplicateInducingRows(usize, usize),
    #[error("need at least one inducing point")]
    NoInducingPoints,
    #[error("a pure White kernel cannot drive a classifier")]
    WhiteOnlyKernel,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, SvgpError>;

/// Inducing input locations Z (M×D). Duplicate rows are rejected: they make
/// K_mm singular beyond what jitter can repair.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingInputs<T: Real> {
    z: DMatrix<T>,
}

impl<T: Real> InducingInputs<T> {
    pub fn new(z: DMatrix<T>) -> Result<Self> {
        if z.nrows() == 0 {
            return Err(SvgpError::NoInducingPoints);
        }
        for i in 0..z.nrows() {
            for j in (i + 1)..z.nrows() {
                if (0..z.ncols()).all(|d| z[(i, d)] == z[(j, d)]) {
                    return Err(SvgpError::DuplicateInducingRows(i, j));
                }
            }
        }
        Ok(Self { z })
    }

    pub fn m(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.z
    }
}

/// q(u) = N(m, S) with S = L_S·L_Sᵀ, positive definite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalGaussian<T: Real> {
    pub m: DVector<T>,
    pub l_s: LowerTriangular<T>,
}

impl<T: Real> VariationalGaussian<T> {
    pub fn covariance(&self) -> DMatrix<T> {
        self.l_s.reconstruct()
    }
}

/// Per-point latent marginals of q(f). Variances are clamped at 1e-12 from
/// below; `clamped` counts how many entries the clamp touched.
#[derive(Debug, Clone)]
pub struct MarginalMoments<T: Real> {
    pub mu: DVector<T>,
    pub var: DVector<T>,
    pub clamped: usize,
}

/// One prediction. For a Bernoulli model `value` is the class-1 probability
/// and (`mean`, `variance`) are the latent marginals; for a Gaussian model
/// `value` is the predictive mean and `variance` includes the noise.
#[derive(Debug, Clone, Copy)]
pub struct Prediction<T: Real> {
    pub value: T,
    pub mean: T,
    pub variance: T,
}

/// ELBO value split into its parts, plus the clamp counter.
#[derive(Debug, Clone, Copy)]
pub struct ElboParts<T: Real> {
    pub value: T,
    pub data_term: T,
    pub kl: T,
    pub clamped: usize,
}

/// Gradients of the ELBO in the free parameterization: `l_s` holds the
/// lower-triangular gradient with the diagonal already chain-ruled through
/// the log reparameterization; `z` is identically zero when the model has
/// `freeze_inducing` set.
#[derive(Debug, Clone)]
pub struct ElboGradients<T: Real> {
    pub m: DVector<T>,
    pub l_s: DMatrix<T>,
    pub z: DMatrix<T>,
    pub kernel: Vec<T>,
    pub likelihood: Vec<T>,
    pub value: T,
}

/// The full trainable state of a sparse variational GP.
#[derive(Debug, Clone, PartialEq)]
pub struct SvgpModel<T: Real> {
    pub kernel: KernelSpec<T>,
    pub inducing: InducingInputs<T>,
    pub q: VariationalGaussian<T>,
    pub likelihood: Likelihood<T>,
    pub freeze_inducing: bool,
}

const VAR_CLAMP: f64 = 1e-12;

impl<T: Real> SvgpModel<T> {
    /// Builds a model with q at the prior: m = 0, L_S = Cholesky(K_mm), so
    /// the KL term starts at zero.
    pub fn init(
        kernel: KernelSpec<T>,
        inducing: InducingInputs<T>,
        likelihood: Likelihood<T>,
        freeze_inducing: bool,
    ) -> Result<Self> {
        if matches!(likelihood, Likelihood::Bernoulli(_)) && kernel.is_white_only() {
            return Err(SvgpError::WhiteOnlyKernel);
        }
        let kmm = kernel.gram(inducing.as_matrix());
        let chol = cholesky_psd(&kmm, JitterPolicy::default())?;
        let m = DVector::from_element(inducing.m(), T::zero());
        Ok(Self {
            kernel,
            inducing,
            q: VariationalGaussian {
                m,
                l_s: chol.factor,
            },
            likelihood,
            freeze_inducing,
        })
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.m()
    }

    fn kmm_chol(&self) -> Result<CholeskyOutcome<T>> {
        let kmm = self.kernel.gram(self.inducing.as_matrix());
        Ok(cholesky_psd(&kmm, JitterPolicy::default())?)
    }

    fn check_dim(&self, x: &DMatrix<T>) -> Result<()> {
        if x.ncols() != self.inducing.dim() {
            return Err(SvgpError::DimensionMismatch {
                expected: self.inducing.dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Latent marginals of q(f) at the rows of X.
    pub fn q_marginals(&self, x: &DMatrix<T>) -> Result<MarginalMoments<T>> {
        self.check_dim(x)?;
        let chol = self.kmm_chol()?;
        let l = &chol.factor;
        let knm = self.kernel.cross_cov(x, self.inducing.as_matrix())?;
        let kdiag = self.kernel.diag(x);

        // v = L⁻¹ K_mn, a-columns = L⁻ᵀ v, p = L_Sᵀ a
        let v = solve_lower(l, &knm.transpose())?;
        let acols = solve_lower_transpose(l, &v)?;
        let p = self.q.l_s.as_matrix().transpose() * &acols;

        let n = x.nrows();
        let mut mu = DVector::<T>::zeros(n);
        let mut var = DVector::<T>::zeros(n);
        let clamp = cst::<T>(VAR_CLAMP);
        let mut clamped = 0usize;
        for i in 0..n {
            let a_i = acols.column(i);
            mu[i] = a_i.dot(&self.q.m);
            let raw = kdiag[i] - v.column(i).norm_squared() + p.column(i).norm_squared();
            if raw < clamp {
                clamped += 1;
                var[i] = clamp;
            } else {
                var[i] = raw;
            }
        }
        Ok(MarginalMoments { mu, var, clamped })
    }

    /// Dense covariance of q(f) over the rows of X. Materializes an N×N
    /// matrix; meant for validation at small N only.
    pub fn q_full_covariance(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_dim(x)?;
        let chol = self.kmm_chol()?;
        let kmm_j = self.jittered_kmm(&chol);
        let b = inverse_from_chol(&chol.factor)?;
        let knm = self.kernel.cross_cov(x, self.inducing.as_matrix())?;
        let a = &knm * &b;
        let knn = self.kernel.gram(x).into_matrix();
        let s = self.q.covariance();
        Ok(knn + &a * (s - kmm_j) * a.transpose())
    }

    fn jittered_kmm(&self, chol: &CholeskyOutcome<T>) -> DMatrix<T> {
        let mut kmm = self.kernel.gram(self.inducing.as_matrix()).into_matrix();
        for i in 0..kmm.nrows() {
            kmm[(i, i)] += chol.jitter;
        }
        kmm
    }

    /// KL[q(u) ‖ p(u)] with p(u) = N(0, K_mm).
    pub fn kl_qu_pu(&self) -> Result<T> {
        let chol = self.kmm_chol()?;
        self.kl_from_chol(&chol)
    }

    fn kl_from_chol(&self, chol: &CholeskyOutcome<T>) -> Result<T> {
        let l = &chol.factor;
        let m_dim = cst::<T>(self.num_inducing() as f64);
        // tr(K_mm⁻¹ S) = ‖L⁻¹ L_S‖_F²
        let w = solve_lower(l, self.q.l_s.as_matrix())?;
        let tr_bs = w.iter().map(|&v| v * v).sum::<T>();
        let lm = solve_lower(
            l,
            &DMatrix::from_column_slice(self.q.m.len(), 1, self.q.m.as_slice()),
        )?;
        let quad = lm.iter().map(|&v| v * v).sum::<T>();
        let logdet_k = logdet_from_chol(l);
        let logdet_s = logdet_from_chol(&self.q.l_s);
        Ok(cst::<T>(0.5) * (tr_bs + quad - m_dim + logdet_k - logdet_s))
    }

    /// Evidence lower bound on a (mini)batch. `scale` is N_total/|batch|
    /// (1 for a full batch); the KL term is never scaled.
    pub fn elbo(&self, x: &DMatrix<T>, y: &DVector<T>, scale: T) -> Result<T> {
        Ok(self.elbo_parts(x, y, scale)?.value)
    }

    /// ELBO with its data/KL decomposition and the variance-clamp counter.
    pub fn elbo_parts(&self, x: &DMatrix<T>, y: &DVector<T>, scale: T) -> Result<ElboParts<T>> {
        if y.len() != x.nrows() {
            return Err(SvgpError::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        let marg = self.q_marginals(x)?;
        let mut data = T::zero();
        for i in 0..x.nrows() {
            data += self
                .likelihood
                .variational_expectation(y[i], marg.mu[i], marg.var[i])?;
        }
        let chol = self.kmm_chol()?;
        let kl = self.kl_from_chol(&chol)?;
        Ok(ElboParts {
            value: scale * data - kl,
            data_term: scale * data,
            kl,
            clamped: marg.clamped,
        })
    }

    /// Gradients of the ELBO with respect to every free parameter.
    pub fn elbo_gradients(
        &self,
        x: &DMatrix<T>,
        y: &DVector<T>,
        scale: T,
    ) -> Result<ElboGradients<T>> {
        self.check_dim(x)?;
        if y.len() != x.nrows() {
            return Err(SvgpError::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        let n = x.nrows();
        let m_ind = self.num_inducing();
        let half = cst::<T>(0.5);
        let two = cst::<T>(2.0);

        let chol = self.kmm_chol()?;
        let l = &chol.factor;
        let b = inverse_from_chol(l)?;
        let knm = self.kernel.cross_cov(x, self.inducing.as_matrix())?;
        let kdiag = self.kernel.diag(x);
        let a = &knm * &b;
        let s = self.q.covariance();
        let a_s = &a * &s;

        let mu = &a * &self.q.m;
        let clamp = cst::<T>(VAR_CLAMP);
        let mut var = DVector::<T>::zeros(n);
        for i in 0..n {
            let aka = knm.row(i).dot(&a.row(i));
            let asa = a.row(i).dot(&a_s.row(i));
            var[i] = (kdiag[i] - aka + asa).max(clamp);
        }

        // per-point likelihood derivatives and the ELBO value itself
        let mut d1 = DVector::<T>::zeros(n);
        let mut d2 = DVector::<T>::zeros(n);
        let mut data = T::zero();
        let mut lik_grads = vec![T::zero(); self.likelihood.n_params()];
        for i in 0..n {
            let (g1, g2) = self.likelihood.expectation_grads(y[i], mu[i], var[i])?;
            d1[i] = g1;
            d2[i] = g2;
            data += self
                .likelihood
                .variational_expectation(y[i], mu[i], var[i])?;
            for (acc, g) in lik_grads
                .iter_mut()
                .zip(self.likelihood.param_grads(y[i], mu[i], var[i]))
            {
                *acc += scale * g;
            }
        }
        let kl = self.kl_from_chol(&chol)?;
        let value = scale * data - kl;

        let bm = &b * &self.q.m;

        // gradient w.r.t. m
        let at_d1 = a.transpose() * &d1;
        let grad_m = &at_d1 * scale - &bm;

        // gradient w.r.t. L_S (diagonal in log space)
        let s_inv = inverse_from_chol(&self.q.l_s)?;
        let mut ad2 = a.clone();
        for i in 0..n {
            let r = ad2.row(i) * d2[i];
            ad2.set_row(i, &r);
        }
        let at_d2_a = a.transpose() * &ad2;
        let g_s = &at_d2_a * scale - (&b - &s_inv) * half;
        let mut grad_ls = (&g_s * self.q.l_s.as_matrix()) * two;
        for i in 0..m_ind {
            for j in (i + 1)..m_ind {
                grad_ls[(i, j)] = T::zero();
            }
        }
        for j in 0..m_ind {
            grad_ls[(j, j)] *= self.q.l_s.as_matrix()[(j, j)];
        }

        // adjoints of the kernel matrices
        let bsb = &b * &s * &b;
        let c = &bsb - &b;
        let m2 = &a_s * &b; // rows are c_iᵀ = a_iᵀ S B

        // d(data)/dK_nm
        let knm_c = &knm * &c;
        let mut g_knm = DMatrix::<T>::zeros(n, m_ind);
        for i in 0..n {
            for j in 0..m_ind {
                g_knm[(i, j)] = scale * (d1[i] * bm[j] + two * d2[i] * knm_c[(i, j)]);
            }
        }

        // d(data)/dK_mm
        let mut m2d = m2.clone();
        for i in 0..n {
            let r = m2d.row(i) * d2[i];
            m2d.set_row(i, &r);
        }
        let at_d2_m2 = a.transpose() * &m2d;
        let g_kmm_data =
            (&at_d2_a - &at_d2_m2 - at_d2_m2.transpose() - &at_d1 * bm.transpose()) * scale;
        // d(KL)/dK_mm
        let g_kmm_kl = (&b - &bsb - &bm * bm.transpose()) * half;
        let g_kmm = g_kmm_data - g_kmm_kl;

        // chain rule into kernel log-hyperparameters
        let gram_grads = self.kernel.gram_grads(self.inducing.as_matrix());
        let cross_grads = self.kernel.cross_grads(x, self.inducing.as_matrix())?;
        let diag_grads = self.kernel.diag_grads(x);
        let mut kernel_grads = vec![T::zero(); self.kernel.n_params()];
        for (p, acc) in kernel_grads.iter_mut().enumerate() {
            let mut g = g_kmm.iter().zip(gram_grads[p].iter()).map(|(&u, &v)| u * v).sum::<T>();
            g += g_knm
                .iter()
                .zip(cross_grads[p].iter())
                .map(|(&u, &v)| u * v)
                .sum::<T>();
            g += (0..n).map(|i| scale * d2[i] * diag_grads[p][i]).sum::<T>();
            *acc = g;
        }

        // chain rule into inducing locations
        let z = self.inducing.as_matrix();
        let d = z.ncols();
        let mut grad_z = DMatrix::<T>::zeros(m_ind, d);
        if !self.freeze_inducing {
            for mi in 0..m_ind {
                let mut acc = DVector::<T>::zeros(d);
                for j in 0..m_ind {
                    let w = g_kmm[(j, mi)] + g_kmm[(mi, j)];
                    if w != T::zero() {
                        acc += self.kernel.input_grad(z, j, z, mi) * w;
                    }
                }
                for i in 0..n {
                    let w = g_knm[(i, mi)];
                    if w != T::zero() {
                        acc += self.kernel.input_grad(x, i, z, mi) * w;
                    }
                }
                for dd in 0..d {
                    grad_z[(mi, dd)] = acc[dd];
                }
            }
        }

        Ok(ElboGradients {
            m: grad_m,
            l_s: grad_ls,
            z: grad_z,
            kernel: kernel_grads,
            likelihood: lik_grads,
            value,
        })
    }

    /// Predictions at the rows of X. Always defined, trained or not.
    pub fn predict(&self, x: &DMatrix<T>) -> Result<Vec<Prediction<T>>> {
        let marg = self.q_marginals(x)?;
        let mut out = Vec::with_capacity(x.nrows());
        for i in 0..x.nrows() {
            let (mu, var) = (marg.mu[i], marg.var[i]);
            let pred = match &self.likelihood {
                Likelihood::Bernoulli(_) => Prediction {
                    value: predictive_prob(mu, var)?,
                    mean: mu,
                    variance: var,
                },
                Likelihood::Gaussian(g) => Prediction {
                    value: mu,
                    mean: mu,
                    variance: var + g.noise_variance(),
                },
            };
            out.push(pred);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihoods::BernoulliProbit;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bernoulli() -> Likelihood<f64> {
        Likelihood::Bernoulli(BernoulliProbit::default())
    }

    fn random_model(
        rng: &mut ChaCha8Rng,
        m: usize,
        d: usize,
        lik: Likelihood<f64>,
    ) -> SvgpModel<f64> {
        let z = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-2.0..2.0));
        let kernel = KernelSpec::rbf(0.9, 1.4).unwrap();
        let mut model = SvgpModel::init(
            kernel,
            InducingInputs::new(z).unwrap(),
            lik,
            false,
        )
        .unwrap();
        // randomize q
        model.q.m = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let mut l = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            l[(i, i)] = rng.gen_range(0.3..1.5);
            for j in 0..i {
                l[(i, j)] = rng.gen_range(-0.4..0.4);
            }
        }
        model.q.l_s = LowerTriangular::new(l).unwrap();
        model
    }

    #[test]
    fn marginals_at_prior_recover_prior() {
        // Z = X, m = 0, S = K_mm: mu = 0 and var = diag K_nn
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let z = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-2.0..2.0));
        let x = z.clone();
        let kernel = KernelSpec::rbf(1.0, 2.0).unwrap();
        let model = SvgpModel::init(
            kernel,
            InducingInputs::new(z).unwrap(),
            bernoulli(),
            false,
        )
        .unwrap();
        let marg = model.q_marginals(&x).unwrap();
        for i in 0..4 {
            assert_relative_eq!(marg.mu[i], 0.0, epsilon = 1e-10);
            assert_relative_eq!(marg.var[i], 2.0, max_relative = 1e-6);
        }
    }

    #[test]
    fn scalar_marginals_by_hand() {
        // M=1, D=1, RBF(l=1,s2=1), z=x=0, m=2, S=0.25 -> mu=2, var=0.25
        let z = DMatrix::from_row_slice(1, 1, &[0.0]);
        let x = z.clone();
        let kernel = KernelSpec::rbf(1.0, 1.0).unwrap();
        let mut model = SvgpModel::init(
            kernel,
            InducingInputs::new(z).unwrap(),
            bernoulli(),
            false,
        )
        .unwrap();
        model.q.m = DVector::from_column_slice(&[2.0]);
        model.q.l_s =
            LowerTriangular::new(DMatrix::from_row_slice(1, 1, &[0.5])).unwrap();
        let marg = model.q_marginals(&x).unwrap();
        assert_relative_eq!(marg.mu[0], 2.0, max_relative = 1e-9);
        assert_relative_eq!(marg.var[0], 0.25, max_relative = 1e-6);
    }

    #[test]
    fn far_point_reverts_to_prior() {
        let z = DMatrix::from_row_slice(2, 1, &[0.0, 0.5]);
        let kernel = KernelSpec::rbf(1.0, 1.7).unwrap();
        let mut model = SvgpModel::init(
            kernel,
            InducingInputs::new(z).unwrap(),
            bernoulli(),
            false,
        )
        .unwrap();
        model.q.m = DVector::from_column_slice(&[3.0, -2.0]);
        let x = DMatrix::from_row_slice(1, 1, &[60.0]);
        let marg = model.q_marginals(&x).unwrap();
        assert_relative_eq!(marg.mu[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(marg.var[0], 1.7, max_relative = 1e-9);
        // prediction is 0.5 out there
        let preds = model.predict(&x).unwrap();
        assert_relative_eq!(preds[0].value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn kl_zero_at_prior_and_scalar_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z = DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-2.0..2.0));
        let model = SvgpModel::init(
            KernelSpec::rbf(1.0, 2.0).unwrap(),
            InducingInputs::new(z).unwrap(),
            bernoulli(),
            false,
        )
        .unwrap();
        assert!(model.kl_qu_pu().unwrap().abs() <= 1e-10);

        // scalar: K=1, S=2, m=0 -> (2 - 1 - ln 2)/2
        let z = DMatrix::from_row_slice(1, 1, &[0.0]);
        let mut model = SvgpModel::init(
            KernelSpec::rbf(1.0, 1.0).unwrap(),
            InducingInputs::new(z).unwrap(),
            bernoulli(),
            false,
        )
        .unwrap();
        model.q.l_s =
            LowerTriangular::new(DMatrix::from_row_slice(1, 1, &[2.0_f64.sqrt()])).unwrap();
        assert_relative_eq!(
            model.kl_qu_pu().unwrap(),
            0.5 * (2.0 - 1.0 - 2.0_f64.ln()),
            max_relative = 1e-9
        );
    }

    #[test]
    fn kl_strictly_positive_off_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let model = random_model(&mut rng, 4, 2, bernoulli());
            assert!(model.kl_qu_pu().unwrap() > 0.0);
        }
    }

    #[test]
    fn elbo_decomposes_into_data_minus_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let model = random_model(&mut rng, 4, 2, bernoulli());
        let x = DMatrix::from_fn(7, 2, |_, _| rng.gen_range(-2.0..2.0));
        let y = DVector::from_fn(7, |_, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
        let parts = model.elbo_parts(&x, &y, 1.0).unwrap();
        let marg = model.q_marginals(&x).unwrap();
        let mut data = 0.0;
        for i in 0..7 {
            data += model
                .likelihood
                .variational_expectation(y[i], marg.mu[i], marg.var[i])
                .unwrap();
        }
        let kl = model.kl_qu_pu().unwrap();
        assert_relative_eq!(parts.value, data - kl, max_relative = 1e-12);
        assert_relative_eq!(parts.data_term, data, max_relative = 1e-12);
        assert_relative_eq!(parts.kl, kl, max_relative = 1e-12);
        assert_relative_eq!(model.elbo(&x, &y, 1.0).unwrap(), parts.value);
    }

    #[test]
    fn kl_invariant_under_inducing_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let model = random_model(&mut rng, 4, 2, bernoulli());
        let kl = model.kl_qu_pu().unwrap();

        // permute inducing points and (m, S) consistently
        let perm = [2usize, 0, 3, 1];
        let z = model.inducing.as_matrix();
        let zp = DMatrix::from_fn(4, 2, |i, j| z[(perm[i], j)]);
        let mp = DVector::from_fn(4, |i, _| model.q.m[perm[i]]);
        let s = model.q.covariance();
        let sp = DMatrix::from_fn(4, 4, |i, j| s[(perm[i], perm[j])]);
        let lp = cholesky_psd(
            &crate::numerics::PsdMatrix::new(sp).unwrap(),
            JitterPolicy::default(),
        )
        .unwrap()
        .factor;
        let permuted = SvgpModel {
            kernel: model.kernel.clone(),
            inducing: InducingInputs::new(zp).unwrap(),
            q: VariationalGaussian { m: mp, l_s: lp },
            likelihood: model.likelihood.clone(),
            freeze_inducing: false,
        };
        assert_relative_eq!(kl, permuted.kl_qu_pu().unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn dense_covariance_diagonal_matches_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let model = random_model(&mut rng, 5, 2, bernoulli());
        let x = DMatrix::from_fn(8, 2, |_, _| rng.gen_range(-2.0..2.0));
        let marg = model.q_marginals(&x).unwrap();
        let cov = model.q_full_covariance(&x).unwrap();
        for i in 0..8 {
            assert_relative_eq!(cov[(i, i)], marg.var[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn variances_stay_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..10 {
            let model = random_model(&mut rng, 6, 3, bernoulli());
            let x = DMatrix::from_fn(30, 3, |_, _| rng.gen_range(-3.0..3.0));
            let marg = model.q_marginals(&x).unwrap();
            assert!(marg.var.iter().all(|&v| v >= VAR_CLAMP));
            assert_eq!(marg.clamped, 0, "no clamping expected on benign instances");
        }
    }

    #[test]
    fn frozen_inducing_gradient_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let mut model = random_model(&mut rng, 4, 2, bernoulli());
        model.freeze_inducing = true;
        let x = DMatrix::from_fn(10, 2, |_, _| rng.gen_range(-2.0..2.0));
        let y = DVector::from_fn(10, |_, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
        let g = model.elbo_gradients(&x, &y, 1.0).unwrap();
        assert!(g.z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_inducing_rows_rejected() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(
            InducingInputs::new(z),
            Err(SvgpError::DuplicateInducingRows(0, 1))
        ));
    }

    #[test]
    fn white_only_classifier_rejected() {
        let z = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let r = SvgpModel::init(
            KernelSpec::white(1.0).unwrap(),
            InducingInputs::new(z).unwrap(),
            bernoulli(),
            false,
        );
        assert!(matches!(r, Err(SvgpError::WhiteOnlyKernel)));
    }

    #[test]
    fn untrained_model_predicts_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let z = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let model = SvgpModel::init(
            KernelSpec::rbf(1.0, 2.0).unwrap(),
            InducingInputs::new(z).unwrap(),
            bernoulli(),
            false,
        )
        .unwrap();
        let x = DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-1.0..1.0));
        for p in model.predict(&x).unwrap() {
            assert_relative_eq!(p.value, 0.5, epsilon = 1e-12);
        }
    }
}
