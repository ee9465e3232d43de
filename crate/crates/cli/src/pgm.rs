//! Binary 8-bit grayscale (P5) renders of grid maps.

use std::fs;
use std::io::Write;
use std::path::Path;

use pjrm_core::{Grid2D, Real};

/// Linear map of `[clip_lo, clip_hi]` to `[0, 255]`, clipped, rounded
/// half-up.
pub fn write_pgm<T: Real>(
    path: &Path,
    grid: &Grid2D<T>,
    clip_lo: f64,
    clip_hi: f64,
) -> anyhow::Result<()> {
    anyhow::ensure!(clip_lo < clip_hi, "clip_lo must be below clip_hi");
    let (nz, nx) = grid.dims();
    let mut out = Vec::with_capacity(32 + grid.len());
    out.extend_from_slice(format!("P5\n{nx} {nz}\n255\n").as_bytes());
    let span = clip_hi - clip_lo;
    for &v in grid.as_slice() {
        let t = ((v.as_f64() - clip_lo) / span).clamp(0.0, 1.0);
        let px = (t * 255.0 + 0.5).floor().min(255.0) as u8;
        out.push(px);
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Default render window: median +- 3 robust stds (1.4826 * MAD). Falls back
/// to a unit window around the median for constant maps.
pub fn robust_clip<T: Real>(grid: &Grid2D<T>) -> (f64, f64) {
    let mut vals: Vec<f64> = grid.as_slice().iter().map(|v| v.as_f64()).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite map"));
    let med = vals[vals.len() / 2];
    let mut dev: Vec<f64> = vals.iter().map(|v| (v - med).abs()).collect();
    dev.sort_by(|a, b| a.partial_cmp(b).expect("finite map"));
    let rstd = 1.4826 * dev[dev.len() / 2];
    if rstd > 0.0 {
        (med - 3.0 * rstd, med + 3.0 * rstd)
    } else {
        (med - 0.5, med + 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_at_clip_lo_renders_black() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let g = Grid2D::<f32>::filled(3, 4, -1.0);
        write_pgm(&p, &g, -1.0, 1.0).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n4 3\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert!(bytes[header.len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn midpoint_rounds_half_up_to_128() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.pgm");
        let g = Grid2D::<f64>::filled(2, 2, 0.5);
        write_pgm(&p, &g, 0.0, 1.0).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes[bytes.len() - 4..].iter().all(|&b| b == 128));
    }

    #[test]
    fn robust_clip_is_symmetric_about_median() {
        let vals: Vec<f64> = (0..100).map(|i| (i as f64 * 0.7).sin()).collect();
        let g = Grid2D::from_vec(10, 10, vals).unwrap();
        let (lo, hi) = robust_clip(&g);
        assert!(lo < hi);
        let med_gap = (hi + lo) / 2.0;
        assert!((med_gap - robust_clip(&g).0 - (hi - lo) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_map_still_gets_a_window() {
        let g = Grid2D::<f32>::filled(4, 4, 2.0);
        let (lo, hi) = robust_clip(&g);
        assert!(lo < hi);
    }
}
