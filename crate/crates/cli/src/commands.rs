//! Subcommand implementations: simulate, invert, analyze, the adjoint and
//! gradient checks, and the full repro pipeline.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use pjrm_core::analysis::analyze_pair;
use pjrm_core::decoder::{
    decoder_backward, decoder_forward, decoder_infer, DecoderParams, LatentSpec,
};
use pjrm_core::gmm::{gmm_backward, gmm_push, GmmParams};
use pjrm_core::poststack::{
    data_misfit_gradient, ricker_wavelet, PoststackOperator, SurveyData,
};
use pjrm_core::rng::sample_standard_normal;
use pjrm_core::scenario::{plume_mask, simulate_surveys};
use pjrm_core::solver::{solve, InversionResult, Mode};
use pjrm_core::verify::{finite_difference_gradient, rel_l2_error};
use pjrm_core::{Grid2D, Real, StreamRng};

use crate::config::{Precision, RunConfig};
use crate::container::{read_grid, write_grid, write_named_grids, Element};
use crate::csvout::{read_kv_csv, write_kv_csv, write_metrics_csv, write_trace_csv};
use crate::pgm::{robust_clip, write_pgm};

// Scenario-side stream labels (solver labels live in pjrm-core).
const STREAM_BACKGROUND: u64 = 0xB6;
const STREAM_NOISE: u64 = 0xA0;

fn truth_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("truth_{i:02}.pjrm"))
}

fn survey_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("survey_{i:02}.pjrm"))
}

fn mask_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("mask_{i:02}.pjrm"))
}

fn sample_path(dir: &Path, i: usize, s: usize) -> PathBuf {
    dir.join(format!("survey{i:02}_sample{s:03}.pjrm"))
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    match cfg.precision {
        Precision::F32 => simulate_t::<f32>(cfg, out),
        Precision::F64 => simulate_t::<f64>(cfg, out),
    }
}

fn simulate_t<T: Element>(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let root = StreamRng::new(cfg.seed, 0);
    let model = cfg.earth_model::<T>(&mut root.derive(STREAM_BACKGROUND))?;
    let schedule = cfg.schedule();
    let op = cfg.operator()?;
    let (truths, surveys) = simulate_surveys(
        &model,
        &schedule,
        &op,
        cfg.noise_sigma,
        &root.derive(STREAM_NOISE),
    )?;
    for (idx, (truth, survey)) in truths.iter().zip(surveys.iter()).enumerate() {
        let i = idx + 1;
        write_grid(&truth_path(out, i), truth)?;
        write_grid(&survey_path(out, i), &survey.grid)?;
        let mask = plume_mask(
            &schedule,
            i,
            cfg.plume_mask_threshold,
            cfg.grid_nz,
            cfg.grid_nx,
        )?;
        let mask_grid: Grid2D<T> = mask.map(|b| if b { T::one() } else { T::zero() });
        write_grid(&mask_path(out, i), &mask_grid)?;
    }
    std::fs::write(out.join("scenario.cfg"), cfg.canonical_text())?;
    println!(
        "simulated {} surveys on a {}x{} grid into {}",
        cfg.num_surveys,
        cfg.grid_nz,
        cfg.grid_nx,
        out.display()
    );
    Ok(())
}

pub fn invert(cfg: &RunConfig, surveys_dir: &Path, out: &Path) -> Result<()> {
    match cfg.precision {
        Precision::F32 => invert_t::<f32>(cfg, surveys_dir, out),
        Precision::F64 => invert_t::<f64>(cfg, surveys_dir, out),
    }
}

fn decoder_records<T: Element>(theta: &DecoderParams<T>) -> Vec<(String, Grid2D<T>)> {
    let spec = theta.spec();
    let layers = spec.num_layers();
    let ch = spec.channels();
    let mut records = Vec::new();
    for l in 0..layers {
        let (c_in, c_out) = (ch[l], ch[l + 1]);
        records.push((
            format!("layer{l}/mix"),
            Grid2D::from_vec(c_in, c_out, theta.mix(l).to_vec()).expect("layout"),
        ));
        records.push((
            format!("layer{l}/norm_scale"),
            Grid2D::from_vec(1, c_out, theta.norm_scale(l).to_vec()).expect("layout"),
        ));
        records.push((
            format!("layer{l}/norm_shift"),
            Grid2D::from_vec(1, c_out, theta.norm_shift(l).to_vec()).expect("layout"),
        ));
    }
    records.push((
        "final_mix".to_string(),
        Grid2D::from_vec(1, ch[layers], theta.final_mix().to_vec()).expect("layout"),
    ));
    records
}

fn gmm_records<T: Element>(phi: &GmmParams<T>) -> Vec<(String, Grid2D<T>)> {
    let (c, h, w) = phi.latent_shape();
    let mut records = Vec::new();
    for k in 0..phi.components() {
        records.push((
            format!("mean{k}"),
            Grid2D::from_vec(c, h * w, phi.mean(k).to_vec()).expect("layout"),
        ));
    }
    for k in 0..phi.components() {
        records.push((
            format!("log_std{k}"),
            Grid2D::from_vec(c, h * w, phi.log_std(k).to_vec()).expect("layout"),
        ));
    }
    records
}

fn write_result<T: Element>(cfg: &RunConfig, result: &InversionResult<T>, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for (idx, survey_samples) in result.samples.iter().enumerate() {
        for (s, grid) in survey_samples.iter().enumerate() {
            write_grid(&sample_path(out, idx + 1, s + 1), grid)?;
        }
    }
    for (j, theta) in result.theta.iter().enumerate() {
        write_named_grids(
            &out.join(format!("theta_{:02}.ckpt", j + 1)),
            &decoder_records(theta),
        )?;
    }
    for (i, phi) in result.phi.iter().enumerate() {
        write_named_grids(
            &out.join(format!("phi_{:02}.ckpt", i + 1)),
            &gmm_records(phi),
        )?;
    }
    write_trace_csv(&out.join("trace.csv"), &result.trace)?;
    let mut prov = vec![(
        "forward_op_calls".to_string(),
        result.forward_op_calls.to_string(),
    )];
    for (i, r) in result.data_residuals.iter().enumerate() {
        prov.push((format!("data_residual_{}", i + 1), format!("{r}")));
    }
    write_kv_csv(&out.join("provenance.csv"), &prov)?;
    std::fs::write(out.join("invert.cfg"), cfg.canonical_text())?;
    Ok(())
}

fn invert_t<T: Element>(cfg: &RunConfig, surveys_dir: &Path, out: &Path) -> Result<()> {
    cfg.validate()?;
    let mut data = Vec::with_capacity(cfg.num_surveys);
    for i in 1..=cfg.num_surveys {
        let path = survey_path(surveys_dir, i);
        let grid: Grid2D<T> = read_grid(&path)
            .with_context(|| format!("reading survey panel {}", path.display()))?;
        data.push(SurveyData {
            grid,
            survey_index: i,
            noise_sigma: cfg.noise_sigma,
        });
    }
    let ops = cfg.operators()?;
    let solver_cfg = cfg.solver_config();
    let result = solve(&solver_cfg, &ops, &data)?;
    write_result(cfg, &result, out)?;
    println!(
        "inverted {} surveys ({} mode, {} formulation): {} forward-op calls, residuals {:?}",
        cfg.num_surveys,
        if matches!(cfg.mode, Mode::Joint) { "joint" } else { "independent" },
        match cfg.formulation {
            pjrm_core::solver::Formulation::Weak => "weak",
            pjrm_core::solver::Formulation::Strong => "strong",
        },
        result.forward_op_calls,
        result.data_residuals,
    );
    Ok(())
}

pub fn analyze(cfg: &RunConfig, results_dir: &Path, truth_dir: &Path, out: &Path) -> Result<()> {
    match cfg.precision {
        Precision::F32 => analyze_t::<f32>(cfg, results_dir, truth_dir, out),
        Precision::F64 => analyze_t::<f64>(cfg, results_dir, truth_dir, out),
    }
}

fn read_samples<T: Element>(dir: &Path, survey: usize, count: usize) -> Result<Vec<Grid2D<T>>> {
    (1..=count)
        .map(|s| {
            let p = sample_path(dir, survey, s);
            read_grid(&p).with_context(|| format!("reading posterior sample {}", p.display()))
        })
        .collect()
}

fn analyze_t<T: Element>(
    cfg: &RunConfig,
    results_dir: &Path,
    truth_dir: &Path,
    out: &Path,
) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let n = cfg.num_surveys;
    let s = cfg.posterior_samples;
    let samples_first = read_samples::<T>(results_dir, 1, s)?;
    let samples_last = read_samples::<T>(results_dir, n, s)?;
    let truth_first: Grid2D<T> = read_grid(&truth_path(truth_dir, 1))?;
    let truth_last: Grid2D<T> = read_grid(&truth_path(truth_dir, n))?;
    let mask_grid: Grid2D<T> = read_grid(&mask_path(truth_dir, n))?;
    let mask = mask_grid.map(|v| v.as_f64() > 0.5);

    let prov = read_kv_csv(&results_dir.join("provenance.csv"))?;
    let mut forward_op_calls = 0u64;
    let mut residuals = vec![0.0f64; n];
    for (k, v) in &prov {
        if k == "forward_op_calls" {
            forward_op_calls = v.parse().context("bad forward_op_calls")?;
        } else if let Some(idx) = k.strip_prefix("data_residual_") {
            let idx: usize = idx.parse().context("bad residual index")?;
            ensure!(idx >= 1 && idx <= n, "residual index out of range");
            residuals[idx - 1] = v.parse().context("bad residual value")?;
        }
    }

    let tl = analyze_pair(
        &samples_first,
        &samples_last,
        &truth_first,
        &truth_last,
        &mask,
        residuals,
        forward_op_calls,
    )?;

    let mut true_diff = truth_last.clone();
    true_diff.add_scaled(&truth_first, T::from_f64(-1.0))?;

    write_grid(&out.join("mean_diff.pjrm"), &tl.mean_diff)?;
    write_grid(&out.join("std_diff.pjrm"), &tl.std_diff)?;
    write_grid(&out.join("error.pjrm"), &tl.error)?;
    write_grid(&out.join("true_diff.pjrm"), &true_diff)?;
    write_metrics_csv(&out.join("metrics.csv"), &tl.metrics)?;

    // renders share the truth window for the two change maps
    let (lo, hi) = robust_clip(&true_diff);
    write_pgm(&out.join("mean_diff.pgm"), &tl.mean_diff, lo, hi)?;
    write_pgm(&out.join("true_diff.pgm"), &true_diff, lo, hi)?;
    let (elo, ehi) = robust_clip(&tl.error);
    write_pgm(&out.join("error.pgm"), &tl.error, elo, ehi)?;
    let (_, shi) = robust_clip(&tl.std_diff);
    let shi = if shi > 0.0 { shi } else { 1.0 };
    write_pgm(&out.join("std_diff.pgm"), &tl.std_diff, 0.0, shi)?;

    println!(
        "rmse_timelapse {} | mean std in/out plume {} / {} | pearson(std,|err|) {}{}",
        tl.metrics.rmse_timelapse,
        tl.metrics.mean_std_in_plume,
        tl.metrics.mean_std_out_plume,
        tl.metrics.pearson_r_std_vs_abs_error,
        if tl.metrics.pearson_degenerate {
            " (degenerate)"
        } else {
            ""
        }
    );
    Ok(())
}

pub fn repro(cfg: &RunConfig, out: &Path) -> Result<()> {
    let truth = out.join("truth");
    let inversion = out.join("inversion");
    let analysis = out.join("analysis");
    simulate(cfg, &truth)?;
    invert(cfg, &truth, &inversion)?;
    analyze(cfg, &inversion, &truth, &analysis)?;
    Ok(())
}

/// Dot-product test over 100 random (x, y) pairs on grids spanning 8x8 to
/// 398x103, in both precisions. Returns false (exit 1) past tolerance.
pub fn check_adjoint(seed: u64) -> Result<bool> {
    const TOL_F32: f64 = 1e-5;
    const TOL_F64: f64 = 1e-10;
    let mut sizes = vec![(8usize, 8usize), (398usize, 103usize)];
    let mut size_rng = StreamRng::new(seed, 7001);
    while sizes.len() < 100 {
        let nz = 8 + (size_rng.next_u64() % 391) as usize;
        let nx = 8 + (size_rng.next_u64() % 96) as usize;
        sizes.push((nz, nx));
    }

    fn one_pair<T: Real>(op: &PoststackOperator, rng: &mut StreamRng) -> f64 {
        let (nz, nx) = op.dims();
        let mut x = Grid2D::<T>::zeros(nz, nx);
        let mut y = Grid2D::<T>::zeros(nz, nx);
        rng.fill_normal(x.as_mut_slice());
        rng.fill_normal(y.as_mut_slice());
        let ax = op.apply_forward(&x).expect("dims fixed");
        let aty = op.apply_adjoint(&y).expect("dims fixed");
        let lhs = ax.dot(&y).expect("dims fixed");
        let rhs = x.dot(&aty).expect("dims fixed");
        (lhs - rhs).abs() / (ax.norm() * y.norm() + 1e-30)
    }

    let mut max32 = 0.0f64;
    let mut max64 = 0.0f64;
    for (pair, &(nz, nx)) in sizes.iter().enumerate() {
        let dz = 3200.0 / nz as f64;
        let op = PoststackOperator::for_grid(nz, nx, dz, 15.0, 3000.0, 1.0)?;
        let mut rng = StreamRng::new(seed, 8000 + pair as u64);
        let r32 = one_pair::<f32>(&op, &mut rng);
        let r64 = one_pair::<f64>(&op, &mut rng);
        max32 = max32.max(r32);
        max64 = max64.max(r64);
        println!("pair {pair:03} {nz:3}x{nx:3}  f32 {r32:.3e}  f64 {r64:.3e}");
    }
    println!("max relative dot-product mismatch: f32 {max32:.3e} (tol {TOL_F32:.0e}), f64 {max64:.3e} (tol {TOL_F64:.0e})");
    if max32 >= TOL_F32 || max64 >= TOL_F64 {
        eprintln!("adjoint check FAILED: f32 {max32:.3e}, f64 {max64:.3e}");
        return Ok(false);
    }
    println!("adjoint check ok");
    Ok(true)
}

fn grad_spec() -> LatentSpec {
    LatentSpec::new(
        4,
        8,
        4,
        vec![4, 4],
        vec![(1.5, 1.5), (16.0 / 12.0, 8.0 / 6.0)],
        16,
        8,
    )
    .expect("static spec")
}

/// Central-finite-difference verification of every analytic gradient, in
/// 64-bit on tiny instances. Returns false (exit 1) past tolerance.
pub fn check_grad(seed: u64) -> Result<bool> {
    let mut ok = true;
    let report = |name: &str, rel: f64, tol: f64, pass_state: &mut bool| {
        let pass = rel < tol;
        println!(
            "check {name}: rel {rel:.3e} (tol {tol:.0e}) [{}]",
            if pass { "ok" } else { "FAIL" }
        );
        if !pass {
            eprintln!("gradient check FAILED: {name} rel {rel:.3e} >= {tol:.0e}");
            *pass_state = false;
        }
    };

    // (a) data-misfit gradient on a 16x8 grid
    {
        let (nz, nx) = (16usize, 8usize);
        let w = ricker_wavelet(15.0, 0.015, 5)?;
        let op = PoststackOperator::new(nz, nx, w, 10.0, 1.0)?;
        let sigma = 0.3;
        let mut x = Grid2D::<f64>::zeros(nz, nx);
        let mut y = Grid2D::<f64>::zeros(nz, nx);
        StreamRng::new(seed, 1).fill_normal(x.as_mut_slice());
        StreamRng::new(seed, 2).fill_normal(y.as_mut_slice());
        let data = SurveyData {
            grid: y.clone(),
            survey_index: 1,
            noise_sigma: sigma,
        };
        let analytic = data_misfit_gradient(&op, &x, &data, sigma)?;
        let mut probe = |v: &[f64]| {
            let g = Grid2D::from_vec(nz, nx, v.to_vec())?;
            let mut r = op.apply_forward(&g)?;
            r.add_scaled(&y, -1.0)?;
            let n = r.norm();
            Ok(n * n / (2.0 * sigma * sigma))
        };
        let fd = finite_difference_gradient(&mut probe, x.as_slice(), 1e-5)?;
        report(
            "(a) data-misfit gradient",
            rel_l2_error(&fd, analytic.as_slice()),
            1e-6,
            &mut ok,
        );
    }

    // (b) decoder backward, every parameter block plus the latent
    {
        let spec = grad_spec();
        let mut rng = StreamRng::new(seed, 3);
        let theta = DecoderParams::<f64>::init(spec, 1.0, 2.0, &mut rng)?;
        let z = sample_standard_normal(&mut StreamRng::new(seed, 4), 4, 8, 4)?;
        let c = sample_standard_normal::<f64>(&mut StreamRng::new(seed, 5), 1, 16, 8)?;
        let grad_out = Grid2D::from_vec(16, 8, c.as_slice().to_vec())?;
        let (_, cache) = decoder_forward(&theta, &z)?;
        let (g_theta, g_latent) = decoder_backward(&theta, cache, &grad_out)?;
        let theta_t = theta.clone();
        let zc = z.clone();
        let cc = c.clone();
        let mut probe = move |p: &[f64]| {
            let mut th = theta_t.clone();
            th.params_mut().copy_from_slice(p);
            let out = decoder_infer(&th, &zc)?;
            Ok(out
                .as_slice()
                .iter()
                .zip(cc.as_slice())
                .map(|(&a, &b)| a * b)
                .sum())
        };
        let fd = finite_difference_gradient(&mut probe, theta.params(), 1e-6)?;
        let mut worst = 0.0f64;
        let mut worst_block = String::new();
        for b in theta.layout().blocks() {
            let rel = rel_l2_error(
                &fd[b.offset..b.offset + b.len],
                &g_theta[b.offset..b.offset + b.len],
            );
            if rel > worst {
                worst = rel;
                worst_block = b.name.clone();
            }
        }
        report(
            &format!("(b) decoder blocks (worst: {worst_block})"),
            worst,
            1e-6,
            &mut ok,
        );
        let th2 = theta.clone();
        let cc2 = c.clone();
        let mut probe_z = move |zv: &[f64]| {
            let zt = pjrm_core::Tensor3::from_vec(4, 8, 4, zv.to_vec())?;
            let out = decoder_infer(&th2, &zt)?;
            Ok(out
                .as_slice()
                .iter()
                .zip(cc2.as_slice())
                .map(|(&a, &b)| a * b)
                .sum())
        };
        let fd_z = finite_difference_gradient(&mut probe_z, z.as_slice(), 1e-6)?;
        report(
            "(b) decoder latent gradient",
            rel_l2_error(&fd_z, g_latent.as_slice()),
            1e-6,
            &mut ok,
        );
    }

    // (c) mixture-encoder backward with a frozen component draw
    {
        let mut phi = GmmParams::<f64>::new(2, 2, 3, 2)?;
        StreamRng::new(seed, 6).fill_normal(phi.params_mut());
        let z = sample_standard_normal(&mut StreamRng::new(seed, 7), 2, 3, 2)?;
        let c = sample_standard_normal::<f64>(&mut StreamRng::new(seed, 8), 2, 3, 2)?;
        let k = 1usize;
        let latent = gmm_push(&phi, &z, k)?;
        let mut grad_latent = latent.clone();
        for (g, &cv) in grad_latent.as_mut_slice().iter_mut().zip(c.as_slice()) {
            *g += cv;
        }
        let analytic = gmm_backward(&phi, &z, k, &grad_latent)?;
        let template = phi.clone();
        let zc = z.clone();
        let cc = c.clone();
        let mut probe = move |p: &[f64]| {
            let mut ph = template.clone();
            ph.params_mut().copy_from_slice(p);
            let lat = gmm_push(&ph, &zc, k)?;
            let mut s = 0.0;
            for (&l, &cv) in lat.as_slice().iter().zip(cc.as_slice()) {
                s += cv * l + 0.5 * l * l;
            }
            Ok(s)
        };
        let fd = finite_difference_gradient(&mut probe, phi.params(), 1e-6)?;
        report(
            "(c) mixture-encoder gradient",
            rel_l2_error(&fd, &analytic),
            1e-6,
            &mut ok,
        );
    }

    // (d) full strong-formulation chain: operator -> decoder -> encoder
    {
        let (nz, nx) = (12usize, 6usize);
        let w = ricker_wavelet(15.0, 0.015, 5)?;
        let op = PoststackOperator::new(nz, nx, w, 10.0, 1.0)?;
        let spec = LatentSpec::new(3, 3, 2, vec![3, 3], vec![(2.0, 1.5), (2.0, 2.0)], 12, 6)?;
        let mut rng = StreamRng::new(seed, 9);
        let theta = DecoderParams::<f64>::init(spec, 2.0, 4.0, &mut rng)?;
        let mut phi = GmmParams::new(2, 3, 3, 2)?;
        StreamRng::new(seed, 10).fill_normal(phi.params_mut());
        let z = sample_standard_normal(&mut StreamRng::new(seed, 11), 3, 3, 2)?;
        let k = 0usize;
        let mut y = Grid2D::<f64>::zeros(nz, nx);
        StreamRng::new(seed, 12).fill_normal(y.as_mut_slice());

        let latent = gmm_push(&phi, &z, k)?;
        let (gx, cache) = decoder_forward(&theta, &latent)?;
        let mut r = op.apply_forward(&gx)?;
        r.add_scaled(&y, -1.0)?;
        let mut grad_out = op.apply_adjoint(&r)?;
        grad_out.scale(2.0);
        let (g_theta, g_latent) = decoder_backward(&theta, cache, &grad_out)?;
        let g_phi = gmm_backward(&phi, &z, k, &g_latent)?;

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
        let fd_theta = finite_difference_gradient(&mut probe_theta, theta.params(), 1e-6)?;
        report(
            "(d) strong chain, decoder params",
            rel_l2_error(&fd_theta, &g_theta),
            1e-5,
            &mut ok,
        );
        let theta_t2 = theta.clone();
        let phi_t2 = phi.clone();
        let mut probe_phi = move |p: &[f64]| {
            let mut ph = phi_t2.clone();
            ph.params_mut().copy_from_slice(p);
            loss(&theta_t2, &ph)
        };
        let fd_phi = finite_difference_gradient(&mut probe_phi, phi.params(), 1e-6)?;
        report(
            "(d) strong chain, encoder params",
            rel_l2_error(&fd_phi, &g_phi),
            1e-5,
            &mut ok,
        );
    }

    if ok {
        println!("gradient check ok");
    }
    Ok(ok)
}
