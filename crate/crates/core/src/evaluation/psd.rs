//! Isotropic power spectral density on periodic grids.

use crate::systems::StateLayout;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PsdError {
    #[error("power spectra need a periodic 2-d grid; layout is {h}x{w}")]
    NonPeriodicGrid { h: usize, w: usize },
    #[error("no fields provided")]
    NoFields,
    #[error("field has {got} entries, layout expects {expected}")]
    FieldLength { expected: usize, got: usize },
}

/// Binned isotropic spectrum with percentile bands over the sample set.
#[derive(Debug, Clone)]
pub struct PsdSummary {
    pub wavenumber: Vec<f64>,
    pub median: Vec<f64>,
    pub p5: Vec<f64>,
    pub p95: Vec<f64>,
}

fn signed_freq(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Isotropic PSD of single-channel fields on a periodic `[h, w]` grid:
/// per-field shell-binned power at integer wavenumbers, then median and
/// 5th/95th percentiles across fields.
pub fn psd2d(fields: &[&[f64]], layout: &StateLayout) -> Result<PsdSummary, PsdError> {
    let (h, w) = (layout.height, layout.width);
    if !layout.is_grid() {
        return Err(PsdError::NonPeriodicGrid { h, w });
    }
    if fields.is_empty() {
        return Err(PsdError::NoFields);
    }
    let n = h * w;
    for f in fields {
        if f.len() != n {
            return Err(PsdError::FieldLength {
                expected: n,
                got: f.len(),
            });
        }
    }
    let kmax = h.min(w) / 2;
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);

    // per-field, per-shell mean power
    let mut per_field: Vec<Vec<f64>> = Vec::with_capacity(fields.len());
    for field in fields {
        let mut buf: Vec<Complex<f64>> = field.iter().map(|&v| Complex::new(v, 0.0)).collect();
        for r in 0..h {
            row_fft.process(&mut buf[r * w..(r + 1) * w]);
        }
        let mut col = vec![Complex::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                col[r] = buf[r * w + c];
            }
            col_fft.process(&mut col);
            for r in 0..h {
                buf[r * w + c] = col[r];
            }
        }
        let norm = 1.0 / (n as f64 * n as f64);
        let mut power = vec![0.0; kmax + 1];
        let mut count = vec![0usize; kmax + 1];
        for iy in 0..h {
            for ix in 0..w {
                let ky = signed_freq(iy, h);
                let kx = signed_freq(ix, w);
                let shell = (kx * kx + ky * ky).sqrt().round() as usize;
                if shell <= kmax {
                    power[shell] += buf[iy * w + ix].norm_sqr() * norm;
                    count[shell] += 1;
                }
            }
        }
        for k in 0..=kmax {
            if count[k] > 0 {
                power[k] /= count[k] as f64;
            }
        }
        per_field.push(power);
    }

    let mut median = Vec::with_capacity(kmax + 1);
    let mut p5 = Vec::with_capacity(kmax + 1);
    let mut p95 = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        let mut vals: Vec<f64> = per_field.iter().map(|p| p[k]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        median.push(percentile(&vals, 0.5));
        p5.push(percentile(&vals, 0.05));
        p95.push(percentile(&vals, 0.95));
    }
    Ok(PsdSummary {
        wavenumber: (0..=kmax).map(|k| k as f64).collect(),
        median,
        p5,
        p95,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize) -> StateLayout {
        StateLayout {
            channels: 1,
            height: h,
            width: w,
        }
    }

    #[test]
    fn pure_sine_peaks_at_its_wavenumber() {
        let (h, w) = (16, 16);
        let k0 = 3.0;
        let field: Vec<f64> = (0..h * w)
            .map(|i| {
                let x = (i % w) as f64 / w as f64;
                (2.0 * std::f64::consts::PI * k0 * x).sin()
            })
            .collect();
        let s = psd2d(&[&field], &grid(h, w)).unwrap();
        let peak = s
            .median
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 3);
        // power concentrated: everything else negligible
        for (k, &p) in s.median.iter().enumerate() {
            if k != 3 {
                assert!(p < 1e-20, "leak at k={k}: {p}");
            }
        }
    }

    #[test]
    fn white_noise_spectrum_is_flat() {
        use rand::Rng;
        let (h, w) = (32, 32);
        let mut rng = crate::rng::stream(5, 0);
        let fields: Vec<Vec<f64>> = (0..64)
            .map(|_| (0..h * w).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let refs: Vec<&[f64]> = fields.iter().map(|f| f.as_slice()).collect();
        let s = psd2d(&refs, &grid(h, w)).unwrap();
        // compare shells 1..kmax (k=0 is the mean); flat within sampling error
        let vals = &s.median[1..];
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        for &v in vals {
            assert!(
                (v - mean).abs() / mean < 0.35,
                "white-noise shell deviates: {v} vs mean {mean}"
            );
        }
    }

    #[test]
    fn psd_is_translation_invariant() {
        let (h, w) = (8, 8);
        let field: Vec<f64> = (0..64).map(|i| ((i * 13 % 64) as f64 * 0.37).sin()).collect();
        let mut shifted = vec![0.0; 64];
        for r in 0..h {
            for c in 0..w {
                shifted[((r + 3) % h) * w + (c + 5) % w] = field[r * w + c];
            }
        }
        let a = psd2d(&[&field], &grid(h, w)).unwrap();
        let b = psd2d(&[&shifted], &grid(h, w)).unwrap();
        for (x, y) in a.median.iter().zip(&b.median) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn non_grid_layout_rejected() {
        let field = vec![0.0; 8];
        assert!(matches!(
            psd2d(&[&field], &grid(8, 1)),
            Err(PsdError::NonPeriodicGrid { .. })
        ));
    }
}
