//! Square 2-D FFTs built from `rustfft` row transforms.

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

/// Forward/inverse plans for an `n × n` transform. Unnormalized in both
/// directions, like `rustfft`.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft(n, FftDirection::Forward),
            inverse: planner.plan_fft(n, FftDirection::Inverse),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn plan(&self, dir: FftDirection) -> &Arc<dyn Fft<f64>> {
        match dir {
            FftDirection::Forward => &self.forward,
            FftDirection::Inverse => &self.inverse,
        }
    }

    /// Full in-place transform of a row-major `n × n` buffer.
    pub fn process(&self, data: &mut [Complex64], dir: FftDirection, scratch: &mut Scratch) {
        self.process_rows(data, self.n, dir, scratch);
        self.process_columns(data, dir, scratch);
    }

    /// Transforms only the first `rows` rows in place.
    pub fn process_rows(
        &self,
        data: &mut [Complex64],
        rows: usize,
        dir: FftDirection,
        scratch: &mut Scratch,
    ) {
        let plan = self.plan(dir);
        scratch.ensure(plan.get_inplace_scratch_len(), self.n);
        plan.process_with_scratch(&mut data[..rows * self.n], &mut scratch.fft);
    }

    /// Transforms every column in place (via a transpose into scratch).
    pub fn process_columns(&self, data: &mut [Complex64], dir: FftDirection, scratch: &mut Scratch) {
        let n = self.n;
        let plan = self.plan(dir);
        scratch.ensure(plan.get_inplace_scratch_len(), n);
        let t = &mut scratch.transpose;
        for r in 0..n {
            for c in 0..n {
                t[c * n + r] = data[r * n + c];
            }
        }
        plan.process_with_scratch(t, &mut scratch.fft);
        for r in 0..n {
            for c in 0..n {
                data[r * n + c] = t[c * n + r];
            }
        }
    }
}

/// Per-call working memory for [`Fft2`].
#[derive(Default)]
pub struct Scratch {
    fft: Vec<Complex64>,
    transpose: Vec<Complex64>,
    pub(crate) buffer: Vec<Complex64>,
}

impl Scratch {
    fn ensure(&mut self, fft_len: usize, n: usize) {
        if self.fft.len() < fft_len {
            self.fft.resize(fft_len, Complex64::new(0.0, 0.0));
        }
        if self.transpose.len() != n * n {
            self.transpose.resize(n * n, Complex64::new(0.0, 0.0));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft2(x: &[Complex64], n: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for k in 0..n {
            for l in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..n {
                    for c in 0..n {
                        let ph = -2.0 * std::f64::consts::PI * ((k * r + l * c) as f64) / n as f64;
                        acc += x[r * n + c] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[k * n + l] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft() {
        let n = 6;
        let x: Vec<Complex64> = (0..n * n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
            .collect();
        let mut y = x.clone();
        let plan = Fft2::new(n);
        let mut s = Scratch::default();
        plan.process(&mut y, FftDirection::Forward, &mut s);
        let want = naive_dft2(&x, n);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).norm() < 1e-10);
        }
        plan.process(&mut y, FftDirection::Inverse, &mut s);
        for (a, b) in y.iter().zip(&x) {
            assert!((a / (n * n) as f64 - b).norm() < 1e-12);
        }
    }
}
