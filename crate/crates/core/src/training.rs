//! Stochastic gradient ascent on the ELBO: seeded minibatch sampling, Adam
//! and SGD over one concatenated parameter vector, the epoch loop, and the
//! training trace.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::real::{cst, Real};
use crate::svgp::{ElboGradients, InducingInputs, SvgpError, SvgpModel};

#[derive(Error, Debug)]
pub enum TrainError {
    #[error("batch size {batch} exceeds dataset size {n}")]
    BatchTooLarge { batch: usize, n: usize },
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("learning rate must be positive")]
    BadLearningRate,
    #[error("Adam betas must lie in (0, 1)")]
    BadBetas,
    #[error("shape mismatch between parameters ({params}) and gradients ({grads})")]
    ShapeMismatch { params: usize, grads: usize },
    #[error("numeric failure at step {step}: {source}")]
    Numeric { step: u64, source: SvgpError },
    #[error("parameter update produced an invalid model at step {step}: {what}")]
    InvalidUpdate { step: u64, what: String },
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Optimizer choice. The ELBO is maximized: updates move parameters in the
/// ascent direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer<T: Real> {
    Adam { lr: T, beta1: T, beta2: T, eps: T },
    Sgd { lr: T },
}

impl<T: Real> Optimizer<T> {
    pub fn adam_default() -> Self {
        Self::Adam {
            lr: cst(0.01),
            beta1: cst(0.9),
            beta2: cst(0.999),
            eps: cst(1e-8),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig<T: Real> {
    pub optimizer: Optimizer<T>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub freeze_inducing: bool,
    pub train_hyperparams: bool,
    /// Full-batch ELBO logging cadence in steps; 0 logs once per epoch.
    pub elbo_eval_every: usize,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::adam_default(),
            batch_size: 100,
            epochs: 50,
            seed: 0,
            freeze_inducing: false,
            train_hyperparams: false,
            elbo_eval_every: 0,
        }
    }
}

/// First/second-moment accumulators for Adam.
#[derive(Debug, Clone)]
pub struct AdamState<T: Real> {
    pub step: u64,
    pub m1: DVector<T>,
    pub m2: DVector<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            step: 0,
            m1: DVector::zeros(dim),
            m2: DVector::zeros(dim),
        }
    }
}

/// One bias-corrected Adam ascent step: params += lr·m̂/(√v̂ + eps).
pub fn adam_step<T: Real>(
    state: &mut AdamState<T>,
    params: &mut DVector<T>,
    grads: &DVector<T>,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
) -> Result<()> {
    if params.len() != grads.len() || state.m1.len() != params.len() {
        return Err(TrainError::ShapeMismatch {
            params: params.len(),
            grads: grads.len(),
        });
    }
    state.step += 1;
    let t = cst::<T>(state.step as f64);
    let bc1 = T::one() - beta1.powf(t);
    let bc2 = T::one() - beta2.powf(t);
    for i in 0..params.len() {
        state.m1[i] = beta1 * state.m1[i] + (T::one() - beta1) * grads[i];
        state.m2[i] = beta2 * state.m2[i] + (T::one() - beta2) * grads[i] * grads[i];
        let mhat = state.m1[i] / bc1;
        let vhat = state.m2[i] / bc2;
        params[i] += lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// A seeded permutation of 0..n chunked into batches; the final short chunk
/// is kept. Deterministic given (seed, epoch).
pub fn minibatches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Per-logging-step training telemetry.
#[derive(Debug, Clone)]
pub struct TraceRecord<T: Real> {
    pub step: u64,
    pub elbo: T,
    pub kl: T,
    pub clamps: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainTrace<T: Real> {
    pub records: Vec<TraceRecord<T>>,
}

impl<T: Real> TrainTrace<T> {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step\telbo\tkl\tclamps\tseconds")?;
        for r in &self.records {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", r.step, r.elbo, r.kl, r.clamps, r.seconds)?;
        }
        Ok(())
    }
}

/// Which blocks of the model are free, and their sizes. Packing order is
/// m, L_S (lower triangle row-major, diagonal in log space), Z, kernel
/// log-hyperparameters, likelihood log-hyperparameters.
struct ParamLayout {
    m: usize,
    d: usize,
    include_z: bool,
    n_kernel: usize,
    n_lik: usize,
    include_hyper: bool,
}

impl ParamLayout {
    fn of<T: Real>(model: &SvgpModel<T>, train_hyperparams: bool) -> Self {
        Self {
            m: model.num_inducing(),
            d: model.inducing.dim(),
            include_z: !model.freeze_inducing,
            n_kernel: model.kernel.n_params(),
            n_lik: model.likelihood.n_params(),
            include_hyper: train_hyperparams,
        }
    }

    fn len(&self) -> usize {
        let mut n = self.m + self.m * (self.m + 1) / 2;
        if self.include_z {
            n += self.m * self.d;
        }
        if self.include_hyper {
            n += self.n_kernel + self.n_lik;
        }
        n
    }
}

fn pack_params<T: Real>(model: &SvgpModel<T>, layout: &ParamLayout) -> DVector<T> {
    let mut v = Vec::with_capacity(layout.len());
    v.extend(model.q.m.iter().copied());
    let ls = model.q.l_s.as_matrix();
    for i in 0..layout.m {
        for j in 0..=i {
            v.push(if i == j { ls[(i, j)].ln() } else { ls[(i, j)] });
        }
    }
    if layout.include_z {
        let z = model.inducing.as_matrix();
        for i in 0..layout.m {
            for d in 0..layout.d {
                v.push(z[(i, d)]);
            }
        }
    }
    if layout.include_hyper {
        v.extend(model.kernel.log_params());
        v.extend(model.likelihood.log_params());
    }
    DVector::from_vec(v)
}

fn unpack_params<T: Real>(
    model: &mut SvgpModel<T>,
    layout: &ParamLayout,
    v: &DVector<T>,
    step: u64,
) -> Result<()> {
    let mut k = 0usize;
    for i in 0..layout.m {
        model.q.m[i] = v[k];
        k += 1;
    }
    let mut ls = DMatrix::<T>::zeros(layout.m, layout.m);
    for i in 0..layout.m {
        for j in 0..=i {
            ls[(i, j)] = if i == j { v[k].exp() } else { v[k] };
            k += 1;
        }
    }
    model.q.l_s = crate::numerics::LowerTriangular::new(ls).map_err(|e| {
        TrainError::InvalidUpdate {
            step,
            what: e.to_string(),
        }
    })?;
    if layout.include_z {
        let mut z = DMatrix::<T>::zeros(layout.m, layout.d);
        for i in 0..layout.m {
            for d in 0..layout.d {
                z[(i, d)] = v[k];
                k += 1;
            }
        }
        model.inducing = InducingInputs::new(z).map_err(|e| TrainError::InvalidUpdate {
            step,
            what: e.to_string(),
        })?;
    }
    if layout.include_hyper {
        let kp: Vec<T> = v.iter().skip(k).take(layout.n_kernel).copied().collect();
        k += layout.n_kernel;
        model
            .kernel
            .set_log_params(&kp)
            .expect("layout and kernel agree");
        let lp: Vec<T> = v.iter().skip(k).take(layout.n_lik).copied().collect();
        model.likelihood.set_log_params(&lp);
    }
    Ok(())
}

fn pack_grads<T: Real>(g: &ElboGradients<T>, layout: &ParamLayout) -> DVector<T> {
    let mut v = Vec::with_capacity(layout.len());
    v.extend(g.m.iter().copied());
    for i in 0..layout.m {
        for j in 0..=i {
            v.push(g.l_s[(i, j)]);
        }
    }
    if layout.include_z {
        for i in 0..layout.m {
            for d in 0..layout.d {
                v.push(g.z[(i, d)]);
            }
        }
    }
    if layout.include_hyper {
        v.extend(g.kernel.iter().copied());
        v.extend(g.likelihood.iter().copied());
    }
    DVector::from_vec(v)
}

/// Full ELBO as a function of the packed parameter vector; shared by the
/// finite-difference validation suites.
pub fn elbo_of_packed<T: Real>(
    model: &SvgpModel<T>,
    train_hyperparams: bool,
    v: &DVector<T>,
    x: &DMatrix<T>,
    y: &DVector<T>,
    scale: T,
) -> Result<T> {
    let layout = ParamLayout::of(model, train_hyperparams);
    let mut m = model.clone();
    unpack_params(&mut m, &layout, v, 0)?;
    m.elbo(x, y, scale)
        .map_err(|e| TrainError::Numeric { step: 0, source: e })
}

/// Packs the current parameters of `model` (used with [`elbo_of_packed`]
/// and [`pack_gradients`] by validation code).
pub fn packed_params<T: Real>(model: &SvgpModel<T>, train_hyperparams: bool) -> DVector<T> {
    let layout = ParamLayout::of(model, train_hyperparams);
    pack_params(model, &layout)
}

/// Flattens an [`ElboGradients`] in the packing order of [`packed_params`].
pub fn pack_gradients<T: Real>(
    model: &SvgpModel<T>,
    train_hyperparams: bool,
    g: &ElboGradients<T>,
) -> DVector<T> {
    let layout = ParamLayout::of(model, train_hyperparams);
    pack_grads(g, &layout)
}

fn validate<T: Real>(cfg: &TrainConfig<T>, n: usize) -> Result<()> {
    if cfg.batch_size == 0 {
        return Err(TrainError::ZeroBatch);
    }
    if cfg.batch_size > n {
        return Err(TrainError::BatchTooLarge {
            batch: cfg.batch_size,
            n,
        });
    }
    match cfg.optimizer {
        Optimizer::Adam {
            lr, beta1, beta2, ..
        } => {
            if !(lr > T::zero()) {
                return Err(TrainError::BadLearningRate);
            }
            if !(beta1 > T::zero() && beta1 < T::one() && beta2 > T::zero() && beta2 < T::one()) {
                return Err(TrainError::BadBetas);
            }
        }
        Optimizer::Sgd { lr } => {
            if !(lr > T::zero()) {
                return Err(TrainError::BadLearningRate);
            }
        }
    }
    Ok(())
}

fn gather_rows<T: Real>(x: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

/// Runs epochs × batches steps of gradient ascent on the ELBO. Fully
/// deterministic given `cfg.seed`. Errors carry the step index at which the
/// numeric failure occurred.
pub fn train<T: Real>(
    model: &SvgpModel<T>,
    x: &DMatrix<T>,
    y: &DVector<T>,
    cfg: &TrainConfig<T>,
) -> Result<(SvgpModel<T>, TrainTrace<T>)> {
    let n = x.nrows();
    validate(cfg, n)?;
    let mut model = model.clone();
    model.freeze_inducing = cfg.freeze_inducing;
    let mut trace = TrainTrace::default();
    if cfg.epochs == 0 {
        return Ok((model, trace));
    }

    let layout = ParamLayout::of(&model, cfg.train_hyperparams);
    let mut params = pack_params(&model, &layout);
    let mut adam = AdamState::new(params.len());
    let start = Instant::now();
    let mut step: u64 = 0;
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let eval_every = if cfg.elbo_eval_every == 0 {
        steps_per_epoch
    } else {
        cfg.elbo_eval_every
    };

    let log = |model: &SvgpModel<T>, step: u64, trace: &mut TrainTrace<T>, start: &Instant| {
        if let Ok(parts) = model.elbo_parts(x, y, T::one()) {
            trace.records.push(TraceRecord {
                step,
                elbo: parts.value,
                kl: parts.kl,
                clamps: parts.clamped,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    };
    log(&model, 0, &mut trace, &start);

    for epoch in 0..cfg.epochs {
        for batch in minibatches(n, cfg.batch_size, cfg.seed, epoch) {
            let xb = gather_rows(x, &batch);
            let yb = DVector::from_fn(batch.len(), |i, _| y[batch[i]]);
            let scale = cst::<T>(n as f64) / cst::<T>(batch.len() as f64);
            let grads = model
                .elbo_gradients(&xb, &yb, scale)
                .map_err(|e| TrainError::Numeric { step, source: e })?;
            let gvec = pack_grads(&grads, &layout);
            match cfg.optimizer {
                Optimizer::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => adam_step(&mut adam, &mut params, &gvec, lr, beta1, beta2, eps)?,
                Optimizer::Sgd { lr } => {
                    if params.len() != gvec.len() {
                        return Err(TrainError::ShapeMismatch {
                            params: params.len(),
                            grads: gvec.len(),
                        });
                    }
                    params += gvec * lr;
                }
            }
            step += 1;
            unpack_params(&mut model, &layout, &params, step)?;
            if step.is_multiple_of(eval_every as u64) {
                log(&model, step, &mut trace, &start);
            }
        }
    }
    if trace.records.last().map(|r| r.step) != Some(step) {
        log(&model, step, &mut trace, &start);
    }
    Ok((model, trace))
}
