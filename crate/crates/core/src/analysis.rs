//! Posterior analysis: time-lapse means, uncertainty maps, error maps, and
//! scalar metrics.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::grid::Grid2D;
use crate::real::Real;
use crate::solver::InversionResult;

/// Scalar summary of one time-lapse reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// RMSE of the posterior-mean difference against the true difference.
    pub rmse_timelapse: f64,
    pub mean_std_in_plume: f64,
    pub mean_std_out_plume: f64,
    /// Pearson correlation between the uncertainty map and |error|, over all
    /// pixels; 0 with `pearson_degenerate` set when either map is constant.
    pub pearson_r_std_vs_abs_error: f64,
    pub pearson_degenerate: bool,
    /// Relative data residuals per survey, from the solver.
    pub data_residuals: Vec<f64>,
    pub forward_op_calls: u64,
}

#[derive(Debug, Clone)]
pub struct TimeLapseResult<T> {
    /// `mean(samples_last) - mean(samples_first)`, pixel-wise.
    pub mean_diff: Grid2D<T>,
    /// Pixel-wise std of per-draw differences.
    pub std_diff: Grid2D<T>,
    /// `mean_diff - true_diff`.
    pub error: Grid2D<T>,
    pub metrics: MetricsRecord,
}

fn check_sample_sets<T: Real>(a: &[Grid2D<T>], b: &[Grid2D<T>]) -> Result<(usize, usize)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CoreError::ShapeMismatch {
            expected: (a.len(), 1),
            got: (b.len(), 1),
        });
    }
    let dims = a[0].dims();
    for g in a.iter().chain(b.iter()) {
        if g.dims() != dims {
            return Err(CoreError::ShapeMismatch {
                expected: dims,
                got: g.dims(),
            });
        }
    }
    Ok(dims)
}

/// Difference of posterior means, `mean(b) - mean(a)`.
pub fn time_lapse_mean<T: Real>(
    samples_a: &[Grid2D<T>],
    samples_b: &[Grid2D<T>],
) -> Result<Grid2D<T>> {
    let (nz, nx) = check_sample_sets(samples_a, samples_b)?;
    let s = samples_a.len();
    let inv = 1.0 / s as f64;
    let mut out = Grid2D::zeros(nz, nx);
    let o = out.as_mut_slice();
    for (ga, gb) in samples_a.iter().zip(samples_b.iter()) {
        for ((v, &a), &b) in o.iter_mut().zip(ga.as_slice()).zip(gb.as_slice()) {
            *v += T::from_f64((b.as_f64() - a.as_f64()) * inv);
        }
    }
    Ok(out)
}

/// Pixel-wise population std of `{samples_b[s] - samples_a[s]}`, pairing by
/// draw index. Needs at least two draws.
pub fn time_lapse_std<T: Real>(
    samples_a: &[Grid2D<T>],
    samples_b: &[Grid2D<T>],
) -> Result<Grid2D<T>> {
    let (nz, nx) = check_sample_sets(samples_a, samples_b)?;
    let s = samples_a.len();
    if s < 2 {
        return Err(CoreError::InvalidArg {
            name: "samples",
            why: "need at least 2 draws for a std",
        });
    }
    let n = nz * nx;
    let inv = 1.0 / s as f64;
    let mut mean = alloc::vec![0.0f64; n];
    for (ga, gb) in samples_a.iter().zip(samples_b.iter()) {
        for ((m, &a), &b) in mean.iter_mut().zip(ga.as_slice()).zip(gb.as_slice()) {
            *m += (b.as_f64() - a.as_f64()) * inv;
        }
    }
    let mut var = alloc::vec![0.0f64; n];
    for (ga, gb) in samples_a.iter().zip(samples_b.iter()) {
        for ((v, m), (&a, &b)) in var
            .iter_mut()
            .zip(mean.iter())
            .zip(ga.as_slice().iter().zip(gb.as_slice()))
        {
            let d = (b.as_f64() - a.as_f64()) - *m;
            *v += d * d * inv;
        }
    }
    let data: Vec<T> = var.iter().map(|&v| T::from_f64(libm::sqrt(v))).collect();
    Grid2D::from_vec(nz, nx, data)
}

fn pearson(x: &[f64], y: &[f64]) -> (f64, bool) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y.iter()) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return (0.0, true);
    }
    ((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0), false)
}

/// Metrics for the first-to-last time-lapse pair of an inversion result.
pub fn compute_metrics<T: Real>(
    result: &InversionResult<T>,
    truth_first: &Grid2D<T>,
    truth_last: &Grid2D<T>,
    mask: &Grid2D<bool>,
) -> Result<MetricsRecord> {
    build_time_lapse(result, truth_first, truth_last, mask).map(|t| t.metrics)
}

/// Full time-lapse analysis (maps + metrics) for the first-to-last pair.
pub fn build_time_lapse<T: Real>(
    result: &InversionResult<T>,
    truth_first: &Grid2D<T>,
    truth_last: &Grid2D<T>,
    mask: &Grid2D<bool>,
) -> Result<TimeLapseResult<T>> {
    let samples_a = result.samples.first().ok_or(CoreError::EmptyShape)?;
    let samples_b = result.samples.last().ok_or(CoreError::EmptyShape)?;
    analyze_pair(
        samples_a,
        samples_b,
        truth_first,
        truth_last,
        mask,
        result.data_residuals.clone(),
        result.forward_op_calls,
    )
}

/// Time-lapse analysis from persisted pieces (no live solver state needed).
#[allow(clippy::too_many_arguments)]
pub fn analyze_pair<T: Real>(
    samples_a: &[Grid2D<T>],
    samples_b: &[Grid2D<T>],
    truth_first: &Grid2D<T>,
    truth_last: &Grid2D<T>,
    mask: &Grid2D<bool>,
    data_residuals: Vec<f64>,
    forward_op_calls: u64,
) -> Result<TimeLapseResult<T>> {
    let mean_diff = time_lapse_mean(samples_a, samples_b)?;
    let std_diff = time_lapse_std(samples_a, samples_b)?;
    truth_first.same_dims(&mean_diff)?;
    truth_last.same_dims(&mean_diff)?;
    mask.same_dims(&mean_diff)?;

    let mut error = mean_diff.clone();
    for ((e, &tl), &tf) in error
        .as_mut_slice()
        .iter_mut()
        .zip(truth_last.as_slice())
        .zip(truth_first.as_slice())
    {
        *e -= tl - tf;
    }

    let n = error.len() as f64;
    let rmse = libm::sqrt(error.as_slice().iter().map(|v| {
        let d = v.as_f64();
        d * d
    }).sum::<f64>() / n);

    let mut in_sum = 0.0;
    let mut in_count = 0usize;
    let mut out_sum = 0.0;
    let mut out_count = 0usize;
    for (&s, &inside) in std_diff.as_slice().iter().zip(mask.as_slice()) {
        if inside {
            in_sum += s.as_f64();
            in_count += 1;
        } else {
            out_sum += s.as_f64();
            out_count += 1;
        }
    }
    let mean_std_in = if in_count > 0 { in_sum / in_count as f64 } else { 0.0 };
    let mean_std_out = if out_count > 0 { out_sum / out_count as f64 } else { 0.0 };

    let stds: Vec<f64> = std_diff.as_slice().iter().map(|v| v.as_f64()).collect();
    let abs_err: Vec<f64> = error.as_slice().iter().map(|v| v.as_f64().abs()).collect();
    let (r, degenerate) = pearson(&stds, &abs_err);

    Ok(TimeLapseResult {
        mean_diff,
        std_diff,
        error,
        metrics: MetricsRecord {
            rmse_timelapse: rmse,
            mean_std_in_plume: mean_std_in,
            mean_std_out_plume: mean_std_out,
            pearson_r_std_vs_abs_error: r,
            pearson_degenerate: degenerate,
            data_residuals,
            forward_op_calls,
        },
    })
}
