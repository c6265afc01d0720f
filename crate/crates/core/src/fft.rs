//! Thin wrappers over `rustfft` for the transforms used by the norm engines.

use num_complex::Complex64;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

/// In-place forward transform `X_k = Σ x_j e^{-2πijk/n}`.
pub fn forward(buf: &mut [Complex64]) {
    FftPlanner::new().plan_fft_forward(buf.len()).process(buf);
}

/// In-place unnormalized inverse transform `x_j = Σ X_k e^{2πijk/n}`.
pub fn inverse(buf: &mut [Complex64]) {
    FftPlanner::new().plan_fft_inverse(buf.len()).process(buf);
}

/// Linear convolution of two coefficient vectors.
pub fn convolve(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        let mut out = vec![Complex64::new(0.0, 0.0); len];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let n = len.next_power_of_two();
    let mut fa = a.to_vec();
    fa.resize(n, Complex64::new(0.0, 0.0));
    let mut fb = b.to_vec();
    fb.resize(n, Complex64::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut fa);
    fa.truncate(len);
    fa
}

/// Repeated circular convolution with a fixed kernel at a fixed length.
pub struct Convolver {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    kernel: Vec<Complex64>,
}

impl Convolver {
    /// `kernel` is zero-padded to `len`, which must be at least its length.
    pub fn new(kernel: &[Complex64], len: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let mut k = kernel.to_vec();
        k.resize(len, Complex64::new(0.0, 0.0));
        fwd.process(&mut k);
        let scale = 1.0 / len as f64;
        k.iter_mut().for_each(|v| *v *= scale);
        Convolver { len, fwd, inv, kernel: k }
    }

    /// Circular convolution of `x` (zero-padded to the plan length) with
    /// the kernel.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut buf = x.to_vec();
        buf.resize(self.len, Complex64::new(0.0, 0.0));
        self.fwd.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel) {
            *b *= k;
        }
        self.inv.process(&mut buf);
        buf
    }
}
