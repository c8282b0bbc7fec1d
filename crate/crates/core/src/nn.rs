//! Parameterized layers with hand-written backward passes.

use crate::linalg::{self, Scalar};

/// Affine map `y = x W + b` with `W` stored `[d_in × d_out]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub d_in: usize,
    pub d_out: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: vec![T::zero(); d_in * d_out],
            bias: vec![T::zero(); d_out],
            d_in,
            d_out,
        }
    }

    /// Applies the map to `rows` stacked inputs.
    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), rows * self.d_in);
        let mut y = linalg::matmul(x, &self.weight, rows, self.d_in, self.d_out);
        linalg::add_row_bias(&mut y, &self.bias);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[T], dy: &[T], rows: usize, grad: &mut Linear<T>) -> Vec<T> {
        linalg::matmul_tn_acc(x, dy, &mut grad.weight, rows, self.d_in, self.d_out);
        linalg::col_sum_acc(dy, &mut grad.bias);
        linalg::matmul_nt(dy, &self.weight, rows, self.d_out, self.d_in)
    }

    /// Parameter gradients only; skips the input gradient.
    pub fn backward_params(&self, x: &[T], dy: &[T], rows: usize, grad: &mut Linear<T>) {
        linalg::matmul_tn_acc(x, dy, &mut grad.weight, rows, self.d_in, self.d_out);
        linalg::col_sum_acc(dy, &mut grad.bias);
    }

    pub fn param_count(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }
}

pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Saved normalized activations and inverse deviations of one LayerNorm call.
#[derive(Debug, Clone, Default)]
pub struct LnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn identity(d: usize) -> Self {
        Self {
            weight: vec![T::one(); d],
            bias: vec![T::zero(); d],
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            weight: vec![T::zero(); d],
            bias: vec![T::zero(); d],
        }
    }

    pub fn forward(&self, x: &[T], cache: Option<&mut LnCache<T>>) -> Vec<T> {
        let d = self.weight.len();
        let rows = x.len() / d;
        let eps = T::from_f64(LN_EPS);
        let inv_d = T::one() / T::from_f64(d as f64);
        let mut y = vec![T::zero(); x.len()];
        let mut xhat_all = Vec::new();
        let mut rstd_all = Vec::new();
        let keep = cache.is_some();
        if keep {
            xhat_all.reserve(x.len());
            rstd_all.reserve(rows);
        }
        for (xr, yr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
            let mean = xr.iter().copied().sum::<T>() * inv_d;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rstd = T::one() / (var + eps).sqrt();
            for i in 0..d {
                let h = (xr[i] - mean) * rstd;
                yr[i] = h * self.weight[i] + self.bias[i];
                if keep {
                    xhat_all.push(h);
                }
            }
            if keep {
                rstd_all.push(rstd);
            }
        }
        if let Some(c) = cache {
            c.xhat = xhat_all;
            c.rstd = rstd_all;
        }
        y
    }

    pub fn backward(&self, dy: &[T], cache: &LnCache<T>, grad: &mut LayerNorm<T>) -> Vec<T> {
        let d = self.weight.len();
        let inv_d = T::one() / T::from_f64(d as f64);
        let mut dx = vec![T::zero(); dy.len()];
        let mut dh = vec![T::zero(); d];
        for (r, (dyr, dxr)) in dy.chunks_exact(d).zip(dx.chunks_exact_mut(d)).enumerate() {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let mut mean_dh = T::zero();
            let mut mean_dh_xh = T::zero();
            for i in 0..d {
                grad.weight[i] += dyr[i] * xh[i];
                grad.bias[i] += dyr[i];
                dh[i] = dyr[i] * self.weight[i];
                mean_dh += dh[i];
                mean_dh_xh += dh[i] * xh[i];
            }
            mean_dh *= inv_d;
            mean_dh_xh *= inv_d;
            let rstd = cache.rstd[r];
            for i in 0..d {
                dxr[i] = rstd * (dh[i] - mean_dh - xh[i] * mean_dh_xh);
            }
        }
        dx
    }
}
