use std::fmt;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use super::{NumericsError, C64};

/// Unnormalised forward DFT, `X[k] = sum_n v[n] exp(-2 pi i k n / N)`.
pub fn fft_forward(v: &[C64]) -> Vec<C64> {
    let mut buf = v.to_vec();
    if buf.is_empty() {
        return buf;
    }
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Inverse of [`fft_forward`], including the `1/N` normalisation.
pub fn fft_inverse(v: &[C64]) -> Vec<C64> {
    let mut buf = v.to_vec();
    if buf.is_empty() {
        return buf;
    }
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|x| *x *= scale);
    buf
}

/// Precomputed Γ-weighted DFT along the time axis.
///
/// The weights are `gamma[n] = alpha^(n / nt)` for `n = 0..nt`, so
/// `forward(v) = F (Γ v)` and `inverse(z) = Γ⁻¹ F⁻¹ z`.
#[derive(Clone)]
pub struct WeightedDftPlan {
    nt: usize,
    alpha: f64,
    gamma: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for WeightedDftPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightedDftPlan")
            .field("nt", &self.nt)
            .field("alpha", &self.alpha)
            .field("gamma", &self.gamma)
            .finish()
    }
}

impl WeightedDftPlan {
    pub fn new(nt: usize, alpha: f64) -> Result<Self, NumericsError> {
        if nt == 0 {
            return Err(NumericsError::InvalidArgument("nt must be positive".into()));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(NumericsError::InvalidArgument(format!(
                "alpha must lie in (0, 1], got {alpha}"
            )));
        }
        let gamma = (0..nt)
            .map(|n| alpha.powf(n as f64 / nt as f64))
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            nt,
            alpha,
            gamma,
            forward: planner.plan_fft_forward(nt),
            inverse: planner.plan_fft_inverse(nt),
        })
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// In-place `v <- F Γ v`.
    pub fn forward_in_place(&self, v: &mut [C64]) {
        assert_eq!(v.len(), self.nt, "weighted transform length mismatch");
        for (x, g) in v.iter_mut().zip(&self.gamma) {
            *x *= *g;
        }
        self.forward.process(v);
    }

    /// In-place `v <- Γ⁻¹ F⁻¹ v`.
    pub fn inverse_in_place(&self, v: &mut [C64]) {
        assert_eq!(v.len(), self.nt, "weighted transform length mismatch");
        self.inverse.process(v);
        let n = self.nt as f64;
        for (x, g) in v.iter_mut().zip(&self.gamma) {
            *x /= *g * n;
        }
    }

    pub fn forward(&self, v: &[C64]) -> Vec<C64> {
        let mut out = v.to_vec();
        self.forward_in_place(&mut out);
        out
    }

    pub fn inverse(&self, v: &[C64]) -> Vec<C64> {
        let mut out = v.to_vec();
        self.inverse_in_place(&mut out);
        out
    }
}
