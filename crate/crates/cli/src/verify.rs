//! The `verify` subcommand: self-contained equivalence checks between the
//! uncollapsed bound, the collapsed bound, the exact marginal likelihood and
//! finite-difference gradients, on fixed-seed random instances.

use std::process::ExitCode;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svgp_core::kernels::KernelSpec;
use svgp_core::likelihoods::{BernoulliProbit, GaussianLik, Likelihood};
use svgp_core::oracle::{exact_lml, optimal_q_gaussian, titsias_bound, RegressionInstance};
use svgp_core::svgp::{InducingInputs, SvgpModel};
use svgp_core::training::{elbo_of_packed, pack_gradients, packed_params};

struct Check {
    name: &'static str,
    gap: f64,
    tolerance: f64,
}

fn random_instance(seed: u64, n: usize, d: usize) -> RegressionInstance<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0..2.0));
    let y = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
    let kernel = KernelSpec::rbf(rng.gen_range(0.5..1.5), rng.gen_range(0.5..2.0)).unwrap();
    RegressionInstance::new(x, y, kernel, rng.gen_range(0.05..0.5)).unwrap()
}

/// Model sharing the instance's kernel with q set to the collapsed optimum.
fn model_at_optimal_q(inst: &RegressionInstance<f64>, z: &DMatrix<f64>) -> SvgpModel<f64> {
    let q = optimal_q_gaussian(inst, z).unwrap();
    let mut model = SvgpModel::init(
        inst.kernel.clone(),
        InducingInputs::new(z.clone()).unwrap(),
        Likelihood::Gaussian(GaussianLik::new(inst.noise_variance).unwrap()),
        false,
    )
    .unwrap();
    model.q = q;
    model
}

fn titsias_vs_exact() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let inst = random_instance(seed, 25, 3);
        let exact = exact_lml(&inst).unwrap();
        let bound = titsias_bound(&inst, &inst.x.clone()).unwrap();
        worst = worst.max((exact - bound).abs());
    }
    Check {
        name: "titsias_bound(Z=X) == exact_lml",
        gap: worst,
        tolerance: 1e-8,
    }
}

fn elbo_at_optimal_q_vs_titsias() -> Check {
    let mut worst = 0.0f64;
    for seed in 10..20 {
        let inst = random_instance(seed, 30, 3);
        let z = DMatrix::from_fn(8, 3, |i, j| inst.x[(i * 3, j)]);
        let titsias = titsias_bound(&inst, &z).unwrap();
        let model = model_at_optimal_q(&inst, &z);
        let elbo = model.elbo(&inst.x, &inst.y, 1.0).unwrap();
        worst = worst.max((elbo - titsias).abs());
    }
    Check {
        name: "elbo(optimal q) == titsias_bound",
        gap: worst,
        tolerance: 1e-6,
    }
}

fn bound_ordering() -> Check {
    // worst signed violation of elbo <= titsias <= exact
    let mut worst = 0.0f64;
    for seed in 20..30 {
        let inst = random_instance(seed, 25, 2);
        let z = DMatrix::from_fn(6, 2, |i, j| inst.x[(i * 4, j)]);
        let exact = exact_lml(&inst).unwrap();
        let titsias = titsias_bound(&inst, &z).unwrap();
        let elbo = model_at_optimal_q(&inst, &z)
            .elbo(&inst.x, &inst.y, 1.0)
            .unwrap();
        worst = worst.max(elbo - titsias).max(titsias - exact);
    }
    Check {
        name: "elbo <= titsias <= exact",
        gap: worst,
        tolerance: 1e-8,
    }
}

fn gradient_fd(bernoulli: bool) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 15;
    let d = 2;
    let x = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0..2.0));
    let y = if bernoulli {
        DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { 0.0 })
    } else {
        DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
    };
    let z = DMatrix::from_fn(4, d, |_, _| rng.gen_range(-2.0..2.0));
    let likelihood = if bernoulli {
        Likelihood::Bernoulli(BernoulliProbit::default())
    } else {
        Likelihood::Gaussian(GaussianLik::new(0.3).unwrap())
    };
    let mut model = SvgpModel::init(
        KernelSpec::rbf(1.0, 1.5).unwrap(),
        InducingInputs::new(z).unwrap(),
        likelihood,
        false,
    )
    .unwrap();
    for v in model.q.m.iter_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }

    let grads = model.elbo_gradients(&x, &y, 1.0).unwrap();
    let analytic: DVector<f64> = pack_gradients(&model, true, &grads);
    let params: DVector<f64> = packed_params(&model, true);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus[k] += h;
        minus[k] -= h;
        let f_plus = elbo_of_packed(&model, true, &plus, &x, &y, 1.0).unwrap();
        let f_minus = elbo_of_packed(&model, true, &minus, &x, &y, 1.0).unwrap();
        let fd = (f_plus - f_minus) / (2.0 * h);
        let denom = analytic[k].abs().max(1e-3);
        worst = worst.max((analytic[k] - fd).abs() / denom);
    }
    Check {
        name: if bernoulli {
            "elbo gradients vs finite differences (bernoulli)"
        } else {
            "elbo gradients vs finite differences (gaussian)"
        },
        gap: worst,
        tolerance: 1e-4,
    }
}

fn kl_zero_at_prior() -> Check {
    let mut worst = 0.0f64;
    for seed in 40..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-2.0..2.0));
        let model = SvgpModel::init(
            KernelSpec::rbf(1.0, 1.0).unwrap(),
            InducingInputs::new(z).unwrap(),
            Likelihood::Bernoulli(BernoulliProbit::default()),
            false,
        )
        .unwrap();
        let kl: f64 = model.kl_qu_pu().unwrap();
        worst = worst.max(kl.abs());
    }
    Check {
        name: "KL[q||p] == 0 at the prior",
        gap: worst,
        tolerance: 1e-10,
    }
}

pub fn cmd_verify() -> ExitCode {
    let checks = [
        titsias_vs_exact(),
        elbo_at_optimal_q_vs_titsias(),
        bound_ordering(),
        gradient_fd(false),
        gradient_fd(true),
        kl_zero_at_prior(),
    ];
    let mut all_ok = true;
    for c in &checks {
        let ok = c.gap <= c.tolerance;
        all_ok &= ok;
        println!(
            "{} {:<50} gap={:.3e} tol={:.0e}",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            c.gap,
            c.tolerance
        );
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
