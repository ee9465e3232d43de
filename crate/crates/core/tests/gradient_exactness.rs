//! End-to-end gradient exactness against central finite differences:
//! data-misfit term, outer-step functional, and the full strong-formulation
//! chain through operator, decoder, and mixture encoder.

use pjrm_core::decoder::{decoder_backward, decoder_forward, decoder_infer, DecoderParams, LatentSpec};
use pjrm_core::gmm::{gmm_backward, gmm_push, GmmParams};
use pjrm_core::poststack::{data_misfit_gradient, ricker_wavelet, PoststackOperator, SurveyData};
use pjrm_core::rng::sample_standard_normal;
use pjrm_core::verify::{finite_difference_gradient, rel_l2_error};
use pjrm_core::{Grid2D, Real, StreamRng};

fn misfit_value<T: Real>(
    op: &PoststackOperator,
    x: &Grid2D<T>,
    y: &Grid2D<T>,
    sigma: f64,
) -> f64 {
    let mut r = op.apply_forward(x).unwrap();
    r.add_scaled(y, T::from_f64(-1.0)).unwrap();
    let n = r.norm();
    n * n / (2.0 * sigma * sigma)
}

fn small_op(nz: usize, nx: usize) -> PoststackOperator {
    let w = ricker_wavelet(15.0, 0.015, 5).unwrap();
    PoststackOperator::new(nz, nx, w, 10.0, 1.0).unwrap()
}

#[test]
fn data_misfit_gradient_matches_fd_in_f64() {
    let (nz, nx) = (16usize, 8usize);
    let op = small_op(nz, nx);
    let sigma = 0.3;
    for seed in 0..5u64 {
        let mut x = Grid2D::<f64>::zeros(nz, nx);
        let mut y = Grid2D::<f64>::zeros(nz, nx);
        StreamRng::new(seed, 1).fill_normal(x.as_mut_slice());
        StreamRng::new(seed, 2).fill_normal(y.as_mut_slice());
        let data = SurveyData {
            grid: y.clone(),
            survey_index: 1,
            noise_sigma: sigma,
        };
        let analytic = data_misfit_gradient(&op, &x, &data, sigma).unwrap();
        let mut probe = |v: &[f64]| {
            let g = Grid2D::from_vec(nz, nx, v.to_vec())?;
            Ok(misfit_value(&op, &g, &y, sigma))
        };
        let fd = finite_difference_gradient(&mut probe, x.as_slice(), 1e-5).unwrap();
        let rel = rel_l2_error(&fd, analytic.as_slice());
        assert!(rel < 1e-7, "seed {seed}: rel {rel}");
    }
}

#[test]
fn data_misfit_gradient_matches_fd_in_f32() {
    let (nz, nx) = (16usize, 8usize);
    let op = small_op(nz, nx);
    let sigma = 0.5;
    let mut x = Grid2D::<f32>::zeros(nz, nx);
    let mut y = Grid2D::<f32>::zeros(nz, nx);
    StreamRng::new(3, 1).fill_normal(x.as_mut_slice());
    StreamRng::new(3, 2).fill_normal(y.as_mut_slice());
    let data = SurveyData {
        grid: y.clone(),
        survey_index: 1,
        noise_sigma: sigma,
    };
    let analytic = data_misfit_gradient(&op, &x, &data, sigma).unwrap();
    let mut probe = |v: &[f32]| {
        let g = Grid2D::from_vec(nz, nx, v.to_vec())?;
        Ok(misfit_value(&op, &g, &y, sigma) as f32)
    };
    // the functional is quadratic, so the central difference is exact up to
    // f32 rounding; a large step keeps the rounding term small
    let fd = finite_difference_gradient(&mut probe, x.as_slice(), 2e-2).unwrap();
    let rel = rel_l2_error(&fd, analytic.as_slice());
    assert!(rel < 1e-3, "rel {rel}");
}

// Alg. 1 line 3: gradient of the full bracketed functional with a frozen
// latent draw.
#[test]
fn outer_step_functional_gradient_matches_fd() {
    let (nz, nx) = (16usize, 8usize);
    let op = small_op(nz, nx);
    let (sigma, gamma) = (0.4, 0.8);
    let spec = LatentSpec::new(3, 4, 2, vec![3, 3], vec![(2.0, 2.0), (2.0, 2.0)], 16, 8).unwrap();
    let mut rng = StreamRng::new(11, 0);
    let theta = DecoderParams::<f64>::init(spec, 2.0, 4.0, &mut rng).unwrap();
    let mut phi = GmmParams::new(2, 3, 4, 2).unwrap();
    StreamRng::new(11, 1).fill_normal(phi.params_mut());
    let z = sample_standard_normal(&mut StreamRng::new(11, 2), 3, 4, 2).unwrap();
    let decoded = decoder_infer(&theta, &gmm_push(&phi, &z, 1).unwrap()).unwrap();

    let mut x = Grid2D::<f64>::zeros(nz, nx);
    let mut y = Grid2D::<f64>::zeros(nz, nx);
    StreamRng::new(11, 3).fill_normal(x.as_mut_slice());
    StreamRng::new(11, 4).fill_normal(y.as_mut_slice());
    let data = SurveyData {
        grid: y.clone(),
        survey_index: 1,
        noise_sigma: sigma,
    };

    // analytic: A^T(Ax - y)/sigma^2 + (x - decoded)/gamma^2
    let mut analytic = data_misfit_gradient(&op, &x, &data, sigma).unwrap();
    let mut prox = x.clone();
    prox.add_scaled(&decoded, -1.0).unwrap();
    prox.scale(1.0 / (gamma * gamma));
    analytic.add_scaled(&prox, 1.0).unwrap();

    let mut probe = |v: &[f64]| {
        let g = Grid2D::from_vec(nz, nx, v.to_vec())?;
        let mut p = g.clone();
        p.add_scaled(&decoded, -1.0)?;
        let pn = p.norm();
        Ok(misfit_value(&op, &g, &y, sigma) + pn * pn / (2.0 * gamma * gamma))
    };
    let fd = finite_difference_gradient(&mut probe, x.as_slice(), 1e-5).unwrap();
    let rel = rel_l2_error(&fd, analytic.as_slice());
    assert!(rel < 1e-6, "rel {rel}");
}

// Full strong-formulation chain: d/d(theta,phi) of |A G(q(z)) - y|^2 with
// frozen z and component, via apply_adjoint -> decoder_backward ->
// gmm_backward.
#[test]
fn strong_chain_gradient_matches_fd() {
    let (nz, nx) = (12usize, 6usize);
    let op = small_op(nz, nx);
    let spec = LatentSpec::new(3, 3, 2, vec![3, 3], vec![(2.0, 1.5), (2.0, 2.0)], 12, 6).unwrap();
    let mut rng = StreamRng::new(21, 0);
    let theta = DecoderParams::<f64>::init(spec.clone(), 2.0, 4.0, &mut rng).unwrap();
    let mut phi = GmmParams::new(2, 3, 3, 2).unwrap();
    StreamRng::new(21, 1).fill_normal(phi.params_mut());
    let z = sample_standard_normal(&mut StreamRng::new(21, 2), 3, 3, 2).unwrap();
    let k = 0usize;
    let mut y = Grid2D::<f64>::zeros(nz, nx);
    StreamRng::new(21, 3).fill_normal(y.as_mut_slice());

    // analytic gradients
    let latent = gmm_push(&phi, &z, k).unwrap();
    let (gx, cache) = decoder_forward(&theta, &latent).unwrap();
    let mut r = op.apply_forward(&gx).unwrap();
    r.add_scaled(&y, -1.0).unwrap();
    let mut grad_out = op.apply_adjoint(&r).unwrap();
    grad_out.scale(2.0);
    let (g_theta, g_latent) = decoder_backward(&theta, cache, &grad_out).unwrap();
    let g_phi = gmm_backward(&phi, &z, k, &g_latent).unwrap();

    let loss = |th: &DecoderParams<f64>, ph: &GmmParams<f64>| -> pjrm_core::Result<f64> {
        let lat = gmm_push(ph, &z, k)?;
        let out = decoder_infer(th, &lat)?;
        let mut rr = op.apply_forward(&out)?;
        rr.add_scaled(&y, -1.0)?;
        let n = rr.norm();
        Ok(n * n)
    };

    let theta_t = theta.clone();
    let phi_t = phi.clone();
    let mut probe_theta = move |p: &[f64]| {
        let mut th = theta_t.clone();
        th.params_mut().copy_from_slice(p);
        loss(&th, &phi_t)
    };
    let fd_theta = finite_difference_gradient(&mut probe_theta, theta.params(), 1e-6).unwrap();
    let rel_t = rel_l2_error(&fd_theta, &g_theta);
    assert!(rel_t < 1e-5, "theta chain rel {rel_t}");

    let theta_t2 = theta.clone();
    let phi_t2 = phi.clone();
    let mut probe_phi = move |p: &[f64]| {
        let mut ph = phi_t2.clone();
        ph.params_mut().copy_from_slice(p);
        loss(&theta_t2, &ph)
    };
    let fd_phi = finite_difference_gradient(&mut probe_phi, phi.params(), 1e-6).unwrap();
    let rel_p = rel_l2_error(&fd_phi, &g_phi);
    assert!(rel_p < 1e-5, "phi chain rel {rel_p}");
}
