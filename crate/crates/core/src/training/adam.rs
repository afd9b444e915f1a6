//! Bias-corrected Adam.
//!
//! ```text
//! m = β₁ m + (1 - β₁) g
//! v = β₂ v + (1 - β₂) g²
//! θ -= lr · (m / (1 - β₁ᵗ)) / (sqrt(v / (1 - β₂ᵗ)) + eps)
//! ```
//!
//! Embedding rows are updated lazily: a row absent from the batch keeps
//! its parameters and moments untouched.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Moment accumulators, one slot per parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(slot_sizes: impl IntoIterator<Item = usize>) -> Self {
        let (first, second): (Vec<_>, Vec<_>) = slot_sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        AdamState {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
            step: 0,
            first,
            second,
        }
    }

    pub fn for_params(params: &[Matrix]) -> Self {
        AdamState::new(params.iter().map(Matrix::len))
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Advance the step counter; call once per optimizer step before updates.
    pub fn tick(&mut self) {
        self.step += 1;
    }

    /// Update `params` in place from `grads`, which live at `offset` within `slot`.
    pub fn update(&mut self, slot: usize, offset: usize, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if self.step == 0 {
            return Err(Error::State("Adam update before the first tick".into()));
        }
        let first = self
            .first
            .get_mut(slot)
            .ok_or_else(|| Error::Shape(format!("no Adam slot {slot}")))?;
        let second = &mut self.second[slot];
        let end = offset + params.len();
        if grads.len() != params.len() || end > first.len() {
            return Err(Error::Shape(format!("Adam slot {slot}: update range out of bounds")));
        }
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut first[offset..end])
            .zip(&mut second[offset..end])
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// One dense Adam step over every parameter matrix.
pub fn adam_step(params: &mut [Matrix], grads: &[Matrix], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape("parameter and gradient counts differ".into()));
    }
    state.tick();
    for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("slot {slot}: gradient shape differs from parameter")));
        }
        state.update(slot, 0, p.as_mut_slice(), g.as_slice(), lr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params() {
        let mut p = vec![Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap()];
        let before = p.clone();
        let mut s = AdamState::for_params(&p);
        adam_step(&mut p, &[Matrix::zeros(1, 3)], &mut s, 0.001).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Matrix::from_vec(1, 1, vec![1.0]).unwrap()];
        let mut s = AdamState::for_params(&p);
        adam_step(&mut p, &[Matrix::from_vec(1, 1, vec![1.0]).unwrap()], &mut s, 0.001).unwrap();
        // m̂ = 1, v̂ = 1, update = lr / (1 + 1e-8)
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((p[0].get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = vec![Matrix::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap()];
            let mut s = AdamState::for_params(&p);
            for k in 0..50 {
                let g = Matrix::from_vec(2, 2, vec![(k as f64).sin(), 0.5, -0.25, (k as f64).cos()]).unwrap();
                adam_step(&mut p, &[g], &mut s, 0.01).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert!(a[0].as_slice().iter().zip(b[0].as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn update_requires_tick_and_bounds() {
        let mut s = AdamState::new([4]);
        let mut p = [0.0; 2];
        assert!(s.update(0, 0, &mut p, &[1.0, 1.0], 0.1).is_err());
        s.tick();
        assert!(s.update(0, 3, &mut p, &[1.0, 1.0], 0.1).is_err());
        assert!(s.update(1, 0, &mut p, &[1.0, 1.0], 0.1).is_err());
        s.update(0, 2, &mut p, &[1.0, 1.0], 0.1).unwrap();
    }
}
