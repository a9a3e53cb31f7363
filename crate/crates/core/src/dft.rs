//! 2-D DFT helpers for the frequency-ring watermark.
//!
//! Forward transform is unnormalized (so a unit-variance white-noise grid
//! has E|F(u,v)|² = h·w at every bin); the inverse applies the 1/(h·w)
//! factor. Frequencies are indexed with the signed convention: bin u maps
//! to u for u ≤ h/2 and to u − h above.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Signed frequency of bin index `i` on an axis of length `n`.
pub fn signed_freq(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Centered radius of bin `(u, v)`.
pub fn bin_radius(u: usize, v: usize, h: usize, w: usize) -> f64 {
    let fu = signed_freq(u, h) as f64;
    let fv = signed_freq(v, w) as f64;
    (fu * fu + fv * fv).sqrt()
}

/// The conjugate partner of bin `(u, v)` for a real signal.
pub fn mirror_bin(u: usize, v: usize, h: usize, w: usize) -> (usize, usize) {
    ((h - u) % h, (w - v) % w)
}

/// All bins whose centered radius lies in `[r_in, r_out]`, in row-major
/// order.
pub fn ring_bins(h: usize, w: usize, r_in: f64, r_out: f64) -> Vec<(usize, usize)> {
    let mut bins = Vec::new();
    for u in 0..h {
        for v in 0..w {
            let r = bin_radius(u, v, h, w);
            if r >= r_in && r <= r_out {
                bins.push((u, v));
            }
        }
    }
    bins
}

/// Unnormalized forward 2-D DFT of a real `h x w` grid.
pub fn fft2(data: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
    assert_eq!(data.len(), h * w);
    let mut buf: Vec<Complex<f64>> = data.iter().map(|&x| Complex::new(x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for v in 0..w {
        for u in 0..h {
            col[u] = buf[u * w + v];
        }
        col_fft.process(&mut col);
        for u in 0..h {
            buf[u * w + v] = col[u];
        }
    }
    buf
}

/// Inverse 2-D DFT with 1/(h·w) normalization; returns the real part and
/// the largest imaginary residue (which conjugate symmetry should force to
/// the rounding floor).
pub fn ifft2(freq: &[Complex<f64>], h: usize, w: usize) -> (Vec<f64>, f64) {
    assert_eq!(freq.len(), h * w);
    let mut buf = freq.to_vec();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_inverse(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_inverse(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for v in 0..w {
        for u in 0..h {
            col[u] = buf[u * w + v];
        }
        col_fft.process(&mut col);
        for u in 0..h {
            buf[u * w + v] = col[u];
        }
    }
    let norm = 1.0 / (h * w) as f64;
    let mut max_imag: f64 = 0.0;
    let real = buf
        .iter()
        .map(|c| {
            max_imag = max_imag.max((c.im * norm).abs());
            c.re * norm
        })
        .collect();
    (real, max_imag)
}

/// Round-trip guard used by embedding: fails when the inverse transform is
/// not numerically real.
pub fn ifft2_real(freq: &[Complex<f64>], h: usize, w: usize) -> Result<Vec<f64>> {
    let (real, max_imag) = ifft2(freq, h, w);
    if max_imag >= 1e-10 {
        return Err(Error::NonFinite(format!(
            "inverse DFT imaginary residue {max_imag:e} exceeds 1e-10"
        )));
    }
    Ok(real)
}
