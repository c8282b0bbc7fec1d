//! Learning-rate schedule, Adam with decoupled weight decay, and stochastic
//! weight averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::model::ModelWeights;

/// Piecewise-linear schedule: ramp from 0 to `lr_peak` during warmup, hold
/// until `plateau_end`, decay linearly to `lr_floor` over `decay_epochs`,
/// then stay at the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub warmup_epochs: f64,
    pub plateau_end_epoch: f64,
    pub decay_epochs: f64,
    pub lr_peak: f64,
    pub lr_floor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            warmup_epochs: 5.0,
            plateau_end_epoch: 50.0,
            decay_epochs: 50.0,
            lr_peak: 1e-4,
            lr_floor: 1e-7,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_epochs < self.plateau_end_epoch) || self.warmup_epochs < 0.0 {
            return Err(Error::Config("need 0 <= warmup < plateau end".into()));
        }
        if !(self.lr_floor < self.lr_peak) || self.decay_epochs < 0.0 {
            return Err(Error::Config(
                "need lr_floor < lr_peak and decay >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: f64) -> f64 {
        let epoch = epoch.max(0.0);
        let decay_end = self.plateau_end_epoch + self.decay_epochs;
        if epoch < self.warmup_epochs {
            self.lr_peak * epoch / self.warmup_epochs
        } else if epoch <= self.plateau_end_epoch {
            self.lr_peak
        } else if epoch < decay_end {
            let frac = (epoch - self.plateau_end_epoch) / self.decay_epochs;
            self.lr_peak + (self.lr_floor - self.lr_peak) * frac
        } else {
            self.lr_floor
        }
    }
}

pub fn lr_at(epoch: f64, schedule: &LrSchedule) -> f64 {
    schedule.lr_at(epoch)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments for a list of parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_shapes(lens: impl IntoIterator<Item = usize>) -> Self {
        let lens: Vec<usize> = lens.into_iter().collect();
        Self {
            m: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }
}

/// One Adam update followed by decoupled decay `p ← p − lr·wd·p`.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Vec<T>],
    grads: &[&Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::Shape(format!(
                "tensor {i}: {} params, {} grads, {} moments",
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64(ADAM_BETA1), T::from_f64(ADAM_BETA2));
    let bc1 = T::from_f64(1.0 - ADAM_BETA1.powi(t));
    let bc2 = T::from_f64(1.0 - ADAM_BETA2.powi(t));
    let lr_t = T::from_f64(lr);
    let decay = T::from_f64(lr * weight_decay);
    let eps = T::from_f64(ADAM_EPS);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr_t * m_hat / (v_hat.sqrt() + eps);
            let pj = p[j];
            p[j] = pj - decay * pj;
        }
    }
    Ok(())
}

/// Running arithmetic mean of weight snapshots, kept in f64.
#[derive(Debug, Clone)]
pub struct SwaState {
    pub avg: Option<ModelWeights<f64>>,
    pub n_models: usize,
    pub start_epoch: usize,
    pub interval: usize,
}

impl SwaState {
    pub fn new(start_epoch: usize, interval: usize) -> Self {
        Self {
            avg: None,
            n_models: 0,
            start_epoch,
            interval: interval.max(1),
        }
    }

    /// Whether the snapshot after completing `epoch` (1-based) is averaged.
    pub fn due(&self, epoch: usize) -> bool {
        epoch >= self.start_epoch && (epoch - self.start_epoch).is_multiple_of(self.interval)
    }

    pub fn weights(&self) -> Option<ModelWeights<f32>> {
        self.avg.as_ref().map(|w| w.cast())
    }
}

/// `avg ← avg + (snapshot − avg)/(n + 1)`.
pub fn swa_update<T: Scalar>(state: &mut SwaState, snapshot: &ModelWeights<T>) -> Result<()> {
    match &mut state.avg {
        None => {
            state.avg = Some(snapshot.cast());
        }
        Some(avg) => {
            if avg.cfg != snapshot.cfg {
                let (expected, found) = (avg.cfg.layout(), snapshot.cfg.layout());
                let bad = expected
                    .iter()
                    .zip(
                        found
                            .iter()
                            .chain(std::iter::repeat(&(String::new(), vec![]))),
                    )
                    .find(|(a, b)| a != b)
                    .map(|(a, b)| (a.0.clone(), a.1.clone(), b.1.clone()))
                    .unwrap_or_else(|| ("<model config>".into(), vec![], vec![]));
                return Err(Error::ShapeMismatch {
                    name: bad.0,
                    expected: bad.1,
                    found: bad.2,
                });
            }
            let k = 1.0 / (state.n_models + 1) as f64;
            for (a, s) in avg.slots_mut().into_iter().zip(snapshot.slots()) {
                for (x, y) in a.iter_mut().zip(s) {
                    *x += (y.as_f64() - *x) * k;
                }
            }
        }
    }
    state.n_models += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_anchor_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0.0), 0.0);
        assert_eq!(s.lr_at(5.0), 1e-4);
        assert_eq!(s.lr_at(50.0), 1e-4);
        assert_eq!(s.lr_at(100.0), 1e-7);
        assert_eq!(s.lr_at(130.0), 1e-7);
        // midpoint of the decay segment: (1e-4 + 1e-7) / 2
        assert!((s.lr_at(75.0) - 5.005e-5).abs() < 1e-15);
        assert!((s.lr_at(2.5) - 5e-5).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_continuous_and_piecewise_linear() {
        let s = LrSchedule::default();
        for &b in &[5.0, 50.0, 100.0] {
            let h = 1e-9;
            assert!(
                (s.lr_at(b - h) - s.lr_at(b + h)).abs() < 1e-12,
                "jump at {b}"
            );
        }
        // second differences vanish away from the breakpoints
        for i in 0..1300 {
            let e = i as f64 * 0.1 + 0.05;
            if [5.0, 50.0, 100.0].iter().any(|b| (e - b).abs() < 0.2) {
                continue;
            }
            let d2 = s.lr_at(e + 0.01) - 2.0 * s.lr_at(e) + s.lr_at(e - 0.01);
            assert!(d2.abs() < 1e-15, "curvature at {e}");
        }
    }

    #[test]
    fn adam_closed_form_first_step() {
        let mut p = vec![0.5f64, -0.2, 1.0];
        let g = vec![0.3, -2.0, 1e-3];
        let mut st = AdamState::for_shapes([3]);
        let before = p.clone();
        adam_step(&mut [&mut p], &[&g], &mut st, 1e-3, 0.0).unwrap();
        for i in 0..3 {
            // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε)
            let expect = before[i] - 1e-3 * g[i] / (g[i].abs() + 1e-8);
            assert!((p[i] - expect).abs() < 1e-15);
            assert!(((before[i] - p[i]) / 1e-3 - g[i].signum()).abs() < 1e-4);
        }
    }

    #[test]
    fn adam_zero_grad_and_decay_only() {
        let mut p = vec![0.5f64, -0.2];
        let mut st = AdamState::for_shapes([2]);
        adam_step(&mut [&mut p], &[&vec![0.0, 0.0]], &mut st, 1e-2, 0.0).unwrap();
        assert_eq!(p, vec![0.5, -0.2]);
        adam_step(&mut [&mut p], &[&vec![0.0, 0.0]], &mut st, 1e-2, 0.1).unwrap();
        assert_eq!(p, vec![0.5 - 0.5 * 1e-3, -0.2 + 0.2 * 1e-3]);
        let mut q = vec![1.0f64];
        assert!(adam_step(&mut [&mut q], &[&vec![0.0, 1.0]], &mut st, 1e-2, 0.0).is_err());
    }

    #[test]
    fn swa_due_epochs() {
        let s = SwaState::new(50, 5);
        let due: Vec<usize> = (1..=130).filter(|&e| s.due(e)).collect();
        assert_eq!(due.first(), Some(&50));
        assert_eq!(due.len(), 17);
        assert!(due.windows(2).all(|w| w[1] - w[0] == 5));
    }
}
