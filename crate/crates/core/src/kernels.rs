//! Covariance functions (RBF, Matérn-3/2, White, sums) with Gram / cross /
//! diagonal evaluation and hyperparameter gradients.
//!
//! Hyperparameters are stored in log space so that exponentiated values are
//! strictly positive under unconstrained gradient ascent.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numerics::PsdMatrix;
use crate::real::{cst, Real};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum KernelError {
    #[error("hyperparameter must be strictly positive")]
    NonPositiveHyperparameter,
    #[error("sum kernel needs at least two children")]
    SumTooSmall,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("hyperparameter vector has wrong length: expected {expected}, found {found}")]
    ParamLengthMismatch { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, KernelError>;

/// Kernel specification. `White` contributes only to the Gram diagonal and
/// `diag`, never to cross-covariances: data points and inducing points live
/// in distinct index spaces.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec<T: Real> {
    Rbf {
        log_lengthscale: T,
        log_signal_variance: T,
    },
    Matern32 {
        log_lengthscale: T,
        log_signal_variance: T,
    },
    White {
        log_noise_variance: T,
    },
    Sum(Vec<KernelSpec<T>>),
}

fn sq_dist_rows<T: Real>(a: &DMatrix<T>, i: usize, b: &DMatrix<T>, j: usize) -> T {
    let mut d2 = T::zero();
    for d in 0..a.ncols() {
        let diff = a[(i, d)] - b[(j, d)];
        d2 += diff * diff;
    }
    d2
}

impl<T: Real> KernelSpec<T> {
    pub fn rbf(lengthscale: T, signal_variance: T) -> Result<Self> {
        if !(lengthscale > T::zero()) || !(signal_variance > T::zero()) {
            return Err(KernelError::NonPositiveHyperparameter);
        }
        Ok(Self::Rbf {
            log_lengthscale: lengthscale.ln(),
            log_signal_variance: signal_variance.ln(),
        })
    }

    pub fn matern32(lengthscale: T, signal_variance: T) -> Result<Self> {
        if !(lengthscale > T::zero()) || !(signal_variance > T::zero()) {
            return Err(KernelError::NonPositiveHyperparameter);
        }
        Ok(Self::Matern32 {
            log_lengthscale: lengthscale.ln(),
            log_signal_variance: signal_variance.ln(),
        })
    }

    pub fn white(noise_variance: T) -> Result<Self> {
        if !(noise_variance > T::zero()) {
            return Err(KernelError::NonPositiveHyperparameter);
        }
        Ok(Self::White {
            log_noise_variance: noise_variance.ln(),
        })
    }

    pub fn sum(terms: Vec<KernelSpec<T>>) -> Result<Self> {
        if terms.len() < 2 {
            return Err(KernelError::SumTooSmall);
        }
        Ok(Self::Sum(terms))
    }

    /// True when the kernel has no component other than White.
    pub fn is_white_only(&self) -> bool {
        match self {
            Self::White { .. } => true,
            Self::Sum(terms) => terms.iter().all(|t| t.is_white_only()),
            _ => false,
        }
    }

    /// Kernel value as a function of the squared distance. `same_point`
    /// selects the White diagonal contribution.
    fn value(&self, d2: T, same_point: bool) -> T {
        let half = cst::<T>(0.5);
        match self {
            Self::Rbf {
                log_lengthscale,
                log_signal_variance,
            } => {
                let l = log_lengthscale.exp();
                let s2 = log_signal_variance.exp();
                s2 * (-half * d2 / (l * l)).exp()
            }
            Self::Matern32 {
                log_lengthscale,
                log_signal_variance,
            } => {
                let l = log_lengthscale.exp();
                let s2 = log_signal_variance.exp();
                let t = cst::<T>(3.0).sqrt() * d2.sqrt() / l;
                s2 * (T::one() + t) * (-t).exp()
            }
            Self::White { log_noise_variance } => {
                if same_point {
                    log_noise_variance.exp()
                } else {
                    T::zero()
                }
            }
            Self::Sum(terms) => terms.iter().map(|t| t.value(d2, same_point)).sum(),
        }
    }

    /// 2·dk/d(d²) of the radial part; the White component never depends on
    /// the inputs. Used for gradients with respect to input locations:
    /// ∂k(x,z)/∂z = dk_dd2_times2 · (z − x).
    fn dk_dd2_times2(&self, d2: T) -> T {
        match self {
            Self::Rbf {
                log_lengthscale,
                log_signal_variance,
            } => {
                let l = log_lengthscale.exp();
                let s2 = log_signal_variance.exp();
                let half = cst::<T>(0.5);
                -(s2 * (-half * d2 / (l * l)).exp()) / (l * l)
            }
            Self::Matern32 {
                log_lengthscale,
                log_signal_variance,
            } => {
                let l = log_lengthscale.exp();
                let s2 = log_signal_variance.exp();
                let t = cst::<T>(3.0).sqrt() * d2.sqrt() / l;
                -cst::<T>(3.0) * s2 * (-t).exp() / (l * l)
            }
            Self::White { .. } => T::zero(),
            Self::Sum(terms) => terms.iter().map(|t| t.dk_dd2_times2(d2)).sum(),
        }
    }

    /// Pushes ∂k/∂θ for every log-hyperparameter, in `log_params` order.
    fn push_grads(&self, d2: T, same_point: bool, out: &mut Vec<T>) {
        match self {
            Self::Rbf {
                log_lengthscale,
                log_signal_variance,
            } => {
                let l = log_lengthscale.exp();
                let k = self.value(d2, same_point);
                // d/dlog l of s2*exp(-d2/(2 l^2)) = k * d2 / l^2
                out.push(k * d2 / (l * l));
                out.push(k);
                let _ = log_signal_variance;
            }
            Self::Matern32 {
                log_lengthscale,
                log_signal_variance,
            } => {
                let l = log_lengthscale.exp();
                let s2 = log_signal_variance.exp();
                let t = cst::<T>(3.0).sqrt() * d2.sqrt() / l;
                out.push(s2 * t * t * (-t).exp());
                out.push(self.value(d2, same_point));
            }
            Self::White { log_noise_variance } => {
                out.push(if same_point {
                    log_noise_variance.exp()
                } else {
                    T::zero()
                });
            }
            Self::Sum(terms) => {
                for t in terms {
                    t.push_grads(d2, same_point, out);
                }
            }
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Self::Rbf { .. } | Self::Matern32 { .. } => 2,
            Self::White { .. } => 1,
            Self::Sum(terms) => terms.iter().map(|t| t.n_params()).sum(),
        }
    }

    /// Log-space hyperparameters, depth-first. Per node the order is
    /// `[log_lengthscale, log_signal_variance]` (RBF, Matérn) or
    /// `[log_noise_variance]` (White).
    pub fn log_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        self.collect_log_params(&mut out);
        out
    }

    fn collect_log_params(&self, out: &mut Vec<T>) {
        match self {
            Self::Rbf {
                log_lengthscale,
                log_signal_variance,
            }
            | Self::Matern32 {
                log_lengthscale,
                log_signal_variance,
            } => {
                out.push(*log_lengthscale);
                out.push(*log_signal_variance);
            }
            Self::White { log_noise_variance } => out.push(*log_noise_variance),
            Self::Sum(terms) => {
                for t in terms {
                    t.collect_log_params(out);
                }
            }
        }
    }

    pub fn set_log_params(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(KernelError::ParamLengthMismatch {
                expected: self.n_params(),
                found: params.len(),
            });
        }
        let mut it = params.iter().copied();
        self.assign_log_params(&mut it);
        Ok(())
    }

    fn assign_log_params(&mut self, it: &mut impl Iterator<Item = T>) {
        match self {
            Self::Rbf {
                log_lengthscale,
                log_signal_variance,
            }
            | Self::Matern32 {
                log_lengthscale,
                log_signal_variance,
            } => {
                *log_lengthscale = it.next().unwrap();
                *log_signal_variance = it.next().unwrap();
            }
            Self::White { log_noise_variance } => *log_noise_variance = it.next().unwrap(),
            Self::Sum(terms) => {
                for t in terms {
                    t.assign_log_params(it);
                }
            }
        }
    }

    /// Names matching the `log_params` order, for diagnostics.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_names("", &mut out);
        out
    }

    fn collect_names(&self, prefix: &str, out: &mut Vec<String>) {
        match self {
            Self::Rbf { .. } => {
                out.push(format!("{prefix}rbf.log_lengthscale"));
                out.push(format!("{prefix}rbf.log_signal_variance"));
            }
            Self::Matern32 { .. } => {
                out.push(format!("{prefix}matern32.log_lengthscale"));
                out.push(format!("{prefix}matern32.log_signal_variance"));
            }
            Self::White { .. } => out.push(format!("{prefix}white.log_noise_variance")),
            Self::Sum(terms) => {
                for (i, t) in terms.iter().enumerate() {
                    t.collect_names(&format!("{prefix}sum[{i}]."), out);
                }
            }
        }
    }

    /// k(x, x2). Exactly equal vectors are treated as the same point for the
    /// White contribution.
    pub fn eval(&self, x: &DVector<T>, x2: &DVector<T>) -> Result<T> {
        if x.len() != x2.len() {
            return Err(KernelError::DimensionMismatch {
                expected: x.len(),
                found: x2.len(),
            });
        }
        let d2 = (x - x2).norm_squared();
        Ok(self.value(d2, x == x2))
    }

    /// Gram matrix over rows of X; White contributes on the diagonal only.
    pub fn gram(&self, x: &DMatrix<T>) -> PsdMatrix<T> {
        let n = x.nrows();
        let mut k = DMatrix::<T>::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.value(T::zero(), true);
            for j in (i + 1)..n {
                let v = self.value(sq_dist_rows(x, i, x, j), false);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        PsdMatrix::new(k).expect("gram matrix is symmetric by construction")
    }

    /// Cross-covariance K_nm between rows of X and rows of Z. White
    /// contributes zero everywhere.
    pub fn cross_cov(&self, x: &DMatrix<T>, z: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x.ncols() != z.ncols() {
            return Err(KernelError::DimensionMismatch {
                expected: x.ncols(),
                found: z.ncols(),
            });
        }
        let mut k = DMatrix::<T>::zeros(x.nrows(), z.nrows());
        for i in 0..x.nrows() {
            for j in 0..z.nrows() {
                k[(i, j)] = self.value(sq_dist_rows(x, i, z, j), false);
            }
        }
        Ok(k)
    }

    /// Diagonal of the Gram matrix, White included.
    pub fn diag(&self, x: &DMatrix<T>) -> DVector<T> {
        DVector::from_element(x.nrows(), self.value(T::zero(), true))
    }

    /// ∂(gram)/∂θ for every log-hyperparameter.
    pub fn gram_grads(&self, x: &DMatrix<T>) -> Vec<DMatrix<T>> {
        let n = x.nrows();
        let p = self.n_params();
        let mut out = vec![DMatrix::<T>::zeros(n, n); p];
        let mut buf = Vec::with_capacity(p);
        for i in 0..n {
            for j in i..n {
                buf.clear();
                self.push_grads(
                    if i == j {
                        T::zero()
                    } else {
                        sq_dist_rows(x, i, x, j)
                    },
                    i == j,
                    &mut buf,
                );
                for (g, &v) in out.iter_mut().zip(buf.iter()) {
                    g[(i, j)] = v;
                    g[(j, i)] = v;
                }
            }
        }
        out
    }

    /// ∂(cross_cov)/∂θ for every log-hyperparameter.
    pub fn cross_grads(&self, x: &DMatrix<T>, z: &DMatrix<T>) -> Result<Vec<DMatrix<T>>> {
        if x.ncols() != z.ncols() {
            return Err(KernelError::DimensionMismatch {
                expected: x.ncols(),
                found: z.ncols(),
            });
        }
        let p = self.n_params();
        let mut out = vec![DMatrix::<T>::zeros(x.nrows(), z.nrows()); p];
        let mut buf = Vec::with_capacity(p);
        for i in 0..x.nrows() {
            for j in 0..z.nrows() {
                buf.clear();
                self.push_grads(sq_dist_rows(x, i, z, j), false, &mut buf);
                for (g, &v) in out.iter_mut().zip(buf.iter()) {
                    g[(i, j)] = v;
                }
            }
        }
        Ok(out)
    }

    /// ∂(diag)/∂θ for every log-hyperparameter.
    pub fn diag_grads(&self, x: &DMatrix<T>) -> Vec<DVector<T>> {
        let mut buf = Vec::with_capacity(self.n_params());
        self.push_grads(T::zero(), true, &mut buf);
        buf.iter()
            .map(|&v| DVector::from_element(x.nrows(), v))
            .collect()
    }

    /// ∂k(x_i, z_m)/∂z_m as a D-vector.
    pub fn input_grad(&self, x: &DMatrix<T>, i: usize, z: &DMatrix<T>, m: usize) -> DVector<T> {
        let d2 = sq_dist_rows(x, i, z, m);
        let c = self.dk_dd2_times2(d2);
        DVector::from_fn(x.ncols(), |d, _| c * (z[(m, d)] - x[(i, d)]))
    }
}
