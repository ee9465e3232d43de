//! Solver-level properties: step-size descent safety, shared-decoder
//! identity, budget accounting ratios, inner-loop overfitting sanity, and
//! posterior Monte-Carlo convergence.

use pjrm_core::decoder::decoder_infer;
use pjrm_core::gmm::gmm_push;
use pjrm_core::grid::Tensor3;
use pjrm_core::poststack::{add_noise, data_misfit_gradient, ricker_wavelet, PoststackOperator, SurveyData};
use pjrm_core::solver::{
    default_step_size_from_norm, initialize_state, inner_training_epoch, pjrm_strong_solve,
    pjrm_weak_solve, SolverConfig,
};
use pjrm_core::{Grid2D, StreamRng};

fn quadratic_value(
    op: &PoststackOperator,
    x: &Grid2D<f64>,
    y: &Grid2D<f64>,
    g: &Grid2D<f64>,
    sigma: f64,
    gamma: f64,
) -> f64 {
    let mut r = op.apply_forward(x).unwrap();
    r.add_scaled(y, -1.0).unwrap();
    let rn = r.norm();
    let mut p = x.clone();
    p.add_scaled(g, -1.0).unwrap();
    let pn = p.norm();
    rn * rn / (2.0 * sigma * sigma) + pn * pn / (2.0 * gamma * gamma)
}

// The line-3 quadratic never increases under one gradient step with the
// default step size, across random operators, scales, and states.
#[test]
fn default_step_never_increases_outer_quadratic() {
    let mut seed_rng = StreamRng::new(12345, 0);
    for case in 0..100 {
        let nz = 8 + (seed_rng.next_u64() % 17) as usize;
        let nx = 3 + (seed_rng.next_u64() % 8) as usize;
        let hw = 2 + (seed_rng.next_u64() % 5) as usize;
        let w = ricker_wavelet(15.0, 0.01 + 0.01 * seed_rng.next_uniform(), hw).unwrap();
        let dz = 2.0 + 10.0 * seed_rng.next_uniform();
        let scale = 0.2 + 2.0 * seed_rng.next_uniform();
        let op = PoststackOperator::new(nz, nx, w, dz, scale).unwrap();
        let sigma = 0.1 + 1.9 * seed_rng.next_uniform();
        let gamma = 0.1 + 1.9 * seed_rng.next_uniform();

        let mut x = Grid2D::<f64>::zeros(nz, nx);
        let mut y = Grid2D::<f64>::zeros(nz, nx);
        let mut g = Grid2D::<f64>::zeros(nz, nx);
        let mut rng = StreamRng::new(777, case as u64);
        rng.fill_normal(x.as_mut_slice());
        rng.fill_normal(y.as_mut_slice());
        rng.fill_normal(g.as_mut_slice());

        let mut nrng = StreamRng::new(778, case as u64);
        let norm = op
            .operator_norm(pjrm_core::solver::POWER_ITERS_STEP_SIZE, &mut nrng)
            .unwrap();
        let tau = default_step_size_from_norm(norm, sigma, gamma);

        let before = quadratic_value(&op, &x, &y, &g, sigma, gamma);
        let data = SurveyData {
            grid: y.clone(),
            survey_index: 1,
            noise_sigma: sigma,
        };
        let mut grad = data_misfit_gradient(&op, &x, &data, sigma).unwrap();
        let mut prox = x.clone();
        prox.add_scaled(&g, -1.0).unwrap();
        prox.scale(1.0 / (gamma * gamma));
        grad.add_scaled(&prox, 1.0).unwrap();
        let mut x2 = x.clone();
        x2.add_scaled(&grad, -tau).unwrap();
        let after = quadratic_value(&op, &x2, &y, &g, sigma, gamma);
        assert!(
            after <= before * (1.0 + 1e-12),
            "case {case}: {before} -> {after} (tau {tau})"
        );
    }
}

fn desk_like_problem(
    n: usize,
    seed: u64,
) -> (SolverConfig, Vec<PoststackOperator>, Vec<SurveyData<f32>>) {
    let (nz, nx) = (24usize, 12usize);
    let w = ricker_wavelet(15.0, 0.02, 4).unwrap();
    let ops: Vec<_> = (0..n)
        .map(|_| PoststackOperator::new(nz, nx, w.clone(), 8.0, 1.0).unwrap())
        .collect();
    let mut truth = Grid2D::<f32>::filled(nz, nx, 3.0);
    for i in nz / 2..nz {
        for j in 0..nx {
            truth.set(i, j, 4.2);
        }
    }
    let data: Vec<_> = (0..n)
        .map(|i| {
            let clean = ops[i].apply_forward(&truth).unwrap();
            add_noise(&clean, 0.002, i + 1, &mut StreamRng::new(seed, 50 + i as u64))
        })
        .collect();
    let mut cfg = SolverConfig::new(n, 0.002, seed);
    cfg.maxiter1 = 4;
    cfg.maxiter2 = 5;
    cfg.posterior_samples = 4;
    cfg.decoder_layers = 2;
    cfg.decoder_channels = 6;
    cfg.gmm_components = 2;
    (cfg, ops, data)
}

// One theta serves every survey in joint mode: perturbing it moves the
// decoded output of all surveys (differential probe), and the result carries
// exactly one parameter buffer.
#[test]
fn joint_mode_shares_one_decoder() {
    let (cfg, ops, data) = desk_like_problem(2, 31);
    let r = pjrm_weak_solve(&cfg, &ops, &data).unwrap();
    assert_eq!(r.theta.len(), 1);
    assert_eq!(r.phi.len(), 2);

    let (c, h, w) = r.theta[0].spec().latent_shape();
    let z = Tensor3::<f32>::filled(c, h, w, 0.3);
    let decode = |theta: &pjrm_core::decoder::DecoderParams<f32>| -> Vec<Grid2D<f32>> {
        (0..2)
            .map(|i| {
                let latent = gmm_push(&r.phi[i], &z, 0).unwrap();
                decoder_infer(theta, &latent).unwrap()
            })
            .collect()
    };
    let base = decode(&r.theta[0]);
    let mut poked = r.theta[0].clone();
    poked.params_mut()[0] += 0.05;
    let moved = decode(&poked);
    for i in 0..2 {
        let mut diff = 0.0f64;
        for (&a, &b) in base[i].as_slice().iter().zip(moved[i].as_slice()) {
            diff += ((a - b) as f64).abs();
        }
        assert!(diff > 0.0, "survey {i} output did not react to theta");
    }
}

// For equal network-update budgets the strong formulation spends exactly
// maxiter2 times more operator calls than the weak formulation.
#[test]
fn strong_uses_maxiter2_times_more_operator_calls() {
    let (cfg, ops, data) = desk_like_problem(2, 32);
    let weak = pjrm_weak_solve(&cfg, &ops, &data).unwrap();
    let mut strong_cfg = cfg.clone();
    strong_cfg.formulation = pjrm_core::solver::Formulation::Strong;
    let strong = pjrm_strong_solve(&strong_cfg, &ops, &data).unwrap();
    assert_eq!(weak.forward_op_calls, 2 * 2 * cfg.maxiter1 as u64);
    assert_eq!(
        strong.forward_op_calls,
        weak.forward_op_calls * cfg.maxiter2 as u64
    );
}

// With the estimates frozen, the inner loop alone must be able to overfit a
// single fixed target: 5000 epochs reduce the proximity loss at least 10x.
#[test]
fn inner_loop_overfits_fixed_target() {
    let (mut cfg, ops, data) = desk_like_problem(1, 33);
    cfg.decoder_channels = 8;
    cfg.gamma = Some(0.5);
    cfg.lr = 0.01;
    let root = StreamRng::new(cfg.seed, 0);
    let mut st = initialize_state(&cfg, &ops, &data, &root).unwrap();
    // fixed smooth target inside the decoder's output range
    let (nz, nx) = ops[0].dims();
    let mut target = Grid2D::<f32>::zeros(nz, nx);
    for i in 0..nz {
        for j in 0..nx {
            let v = 3.5
                + 0.8 * ((i as f32) / nz as f32 * 3.0).sin()
                + 0.4 * ((j as f32) / nx as f32 * 2.0).cos();
            target.set(i, j, v);
        }
    }
    st.x[0] = target;

    let mut first = 0.0;
    let mut last = 0.0;
    let epochs = 5000usize;
    for e in 0..epochs {
        let loss = inner_training_epoch(&mut st, &cfg, 0, e).unwrap();
        if e < 10 {
            first += loss / 10.0;
        }
        if e >= epochs - 100 {
            last += loss / 100.0;
        }
    }
    assert!(
        last < first / 10.0,
        "proximity loss went {first} -> {last}, less than 10x"
    );
}

// Doubling the posterior sample count moves the mean map by no more than
// 3 sigma / sqrt(S) per pixel.
#[test]
fn posterior_mean_converges_with_sample_count() {
    let (cfg, ops, data) = desk_like_problem(1, 34);
    let r = pjrm_weak_solve(&cfg, &ops, &data).unwrap();
    let theta = &r.theta[0];
    let phi = &r.phi[0];
    let s = 256usize;
    let all = pjrm_core::decoder::sample_posterior(
        theta,
        phi,
        &mut StreamRng::new(99, 0),
        2 * s,
    )
    .unwrap();
    let (nz, nx) = ops[0].dims();
    let n = nz * nx;
    let mut mean_s = vec![0.0f64; n];
    let mut var_s = vec![0.0f64; n];
    for g in &all[..s] {
        for (m, &v) in mean_s.iter_mut().zip(g.as_slice()) {
            *m += v as f64 / s as f64;
        }
    }
    for g in &all[..s] {
        for ((vv, m), &v) in var_s.iter_mut().zip(&mean_s).zip(g.as_slice()) {
            let d = v as f64 - *m;
            *vv += d * d / s as f64;
        }
    }
    let mut mean_2s = vec![0.0f64; n];
    for g in &all {
        for (m, &v) in mean_2s.iter_mut().zip(g.as_slice()) {
            *m += v as f64 / (2 * s) as f64;
        }
    }
    for i in 0..n {
        let bound = 3.0 * var_s[i].sqrt() / (s as f64).sqrt() + 1e-9;
        assert!(
            (mean_2s[i] - mean_s[i]).abs() <= bound,
            "pixel {i}: moved {} > {bound}",
            (mean_2s[i] - mean_s[i]).abs()
        );
    }
}

// gamma -> infinity turns the outer step into a pure data-misfit step.
#[test]
fn outer_step_reduces_to_landweber_for_huge_gamma() {
    let (mut cfg, ops, data) = desk_like_problem(1, 35);
    cfg.gamma = Some(1e9);
    cfg.tau = Some(1e-7);
    let root = StreamRng::new(cfg.seed, 0);
    let mut st = initialize_state(&cfg, &ops, &data, &root).unwrap();
    st.tau = 1e-7;
    let x0 = st.x[0].clone();
    pjrm_core::solver::outer_gradient_step(&mut st, 0, &ops[0], &data[0], &cfg, 0).unwrap();

    let grad = data_misfit_gradient(&ops[0], &x0, &data[0], cfg.sigma).unwrap();
    let mut landweber = x0.clone();
    landweber.add_scaled(&grad, -1e-7).unwrap();
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&a, &b) in st.x[0].as_slice().iter().zip(landweber.as_slice()) {
        num += ((a - b) as f64).powi(2);
        den += (b as f64).powi(2);
    }
    assert!(num.sqrt() / den.sqrt() < 1e-6);
}
