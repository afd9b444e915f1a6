//! Domain-aware pruner.
//!
//! For every backbone layer `l` a single affine map reads the domain
//! embedding and the layer input, `v_in = W_p^l [e_d; h^l] + b_p^l`, and
//! turns it into per-neuron weighting factors `π^l`:
//!
//! | method        | `v_out`          | `π`                          |
//! |---------------|------------------|------------------------------|
//! | Binarization  | `σ(α v_in)`      | `sign(v_out - ε)` ∈ {0, 1}   |
//! | Scaling       | `β σ(v_in)`      | `v_out` ∈ (0, β)             |
//! | Fusion        | `β σ(α v_in)`    | `v_out · sign(v_out - ε)`    |
//!
//! with `sign(x) = 1` for `x > 0` and `0` otherwise. `α` is annealed upward
//! during training so that `σ(α v)` approaches a step function.
//!
//! Gradients through `sign` use the straight-through estimator: the
//! threshold is the identity on `v_out` in the backward pass, while the
//! sigmoid (with its `α` and `β`) is differentiated exactly.
//!
//! Sparsity of layer `l` is the fraction of exactly-zero factors. The
//! regularizer
//!
//! ```text
//! R_s = 1/L Σ_l λ^l |r^l - r*|,   r* = (r_min + r_max) / 2
//! λ^l = 0 inside [r_min, r_max], λ̂ |r^l - r*| outside
//! ```
//!
//! only acts on layers whose ratio leaves the boundary.
//!
//! Per layer the pruner costs `O(N_l)` outputs per domain context, against
//! `O(N_l N_{l+1})` for per-domain weight copies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Dense, DenseGrads, Gate, GateBackprop};
use crate::error::{Error, Result};
use crate::numerics::{matvec, Matrix};

pub type PrunerGrads = DenseGrads;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Binarization,
    Scaling,
    Fusion,
}

impl FactorKind {
    /// Whether factors can be exactly zero, i.e. whether the sparsity
    /// regularizer has anything to control.
    pub fn prunes(self) -> bool {
        !matches!(self, FactorKind::Scaling)
    }
}

/// A factor formulation with its current parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorMethod {
    Binarization { alpha: f64, epsilon: f64 },
    Scaling { beta: f64 },
    Fusion { alpha: f64, beta: f64, epsilon: f64 },
}

impl FactorMethod {
    pub fn new(kind: FactorKind, alpha: f64, beta: f64, epsilon: f64) -> Result<Self> {
        let m = match kind {
            FactorKind::Binarization => FactorMethod::Binarization { alpha, epsilon },
            FactorKind::Scaling => FactorMethod::Scaling { beta },
            FactorKind::Fusion => FactorMethod::Fusion { alpha, beta, epsilon },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn kind(&self) -> FactorKind {
        match self {
            FactorMethod::Binarization { .. } => FactorKind::Binarization,
            FactorMethod::Scaling { .. } => FactorKind::Scaling,
            FactorMethod::Fusion { .. } => FactorKind::Fusion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (alpha, beta, epsilon) = match *self {
            FactorMethod::Binarization { alpha, epsilon } => (alpha, 1.0, epsilon),
            FactorMethod::Scaling { beta } => (1.0, beta, 1.0),
            FactorMethod::Fusion { alpha, beta, epsilon } => (alpha, beta, epsilon),
        };
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
        }
        if !(beta >= 1.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 1, got {beta}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
        }
        Ok(())
    }

    /// `(v_out, π, dv_out/dv_in)` for one pre-activation.
    pub fn apply(&self, v_in: f64) -> (f64, f64, f64) {
        let step = |v: f64, eps: f64| if v - eps > 0.0 { 1.0 } else { 0.0 };
        match *self {
            FactorMethod::Binarization { alpha, epsilon } => {
                let s = crate::numerics::sigmoid_scalar(alpha * v_in);
                (s, step(s, epsilon), alpha * s * (1.0 - s))
            }
            FactorMethod::Scaling { beta } => {
                let s = crate::numerics::sigmoid_scalar(v_in);
                let v = beta * s;
                // v_out · sign(|v_out|) is v_out for any positive v_out
                (v, v * step(v, 0.0), beta * s * (1.0 - s))
            }
            FactorMethod::Fusion { alpha, beta, epsilon } => {
                let s = crate::numerics::sigmoid_scalar(alpha * v_in);
                let v = beta * s;
                (v, v * step(v, epsilon), beta * alpha * s * (1.0 - s))
            }
        }
    }
}

/// Factors of one layer for one sample, with the forward values the
/// backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorVector {
    pub pi: Vec<f64>,
    pub v_out: Vec<f64>,
    pub v_in: Vec<f64>,
    input: Vec<f64>,
    dv: Vec<f64>,
    spent: bool,
}

impl FactorVector {
    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Fraction of exactly-zero factors.
    pub fn sparsity_ratio(&self) -> f64 {
        sparsity_ratio(&self.pi)
    }
}

/// Gradients of one `factors_backward` call.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGrads {
    pub layer: Dense,
    pub e_d: Vec<f64>,
    pub h: Vec<f64>,
}

/// Per-layer pruner parameters: `W_p^l` is `N_l x (len(e_d) + N_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunerState {
    layers: Vec<Dense>,
    domain_width: usize,
}

impl PrunerState {
    /// Glorot-uniform weights and zero biases for the given gate widths.
    pub fn new<R: Rng + ?Sized>(domain_width: usize, gate_widths: &[usize], rng: &mut R) -> Self {
        let layers = gate_widths
            .iter()
            .map(|&n| Dense {
                weight: Matrix::glorot(n, domain_width + n, rng),
                bias: vec![0.0; n],
            })
            .collect();
        PrunerState { layers, domain_width }
    }

    pub fn from_layers(domain_width: usize, layers: Vec<Dense>) -> Result<Self> {
        for (l, d) in layers.iter().enumerate() {
            if d.inputs() != domain_width + d.outputs() || d.bias.len() != d.outputs() {
                return Err(Error::Shape(format!("pruner layer {l} has shape {:?}", d.weight.shape())));
            }
        }
        Ok(PrunerState { layers, domain_width })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn domain_width(&self) -> usize {
        self.domain_width
    }

    pub fn zero_grads(&self) -> PrunerGrads {
        DenseGrads::zeros_like(&self.layers)
    }

    pub fn compute_factors(&self, e_d: &[f64], h: &[f64], layer: usize, method: &FactorMethod) -> Result<FactorVector> {
        let dense = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::Shape(format!("pruner has no layer {layer}")))?;
        if e_d.len() != self.domain_width || h.len() != dense.outputs() {
            return Err(Error::Shape(format!(
                "pruner layer {layer} expects [{}; {}] input, got [{}; {}]",
                self.domain_width,
                dense.outputs(),
                e_d.len(),
                h.len()
            )));
        }
        let input: Vec<f64> = e_d.iter().chain(h).copied().collect();
        let mut v_in = matvec(&dense.weight, &input)?;
        for (v, b) in v_in.iter_mut().zip(&dense.bias) {
            *v += b;
        }
        let n = v_in.len();
        let (mut v_out, mut pi, mut dv) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for &v in &v_in {
            let (o, p, d) = method.apply(v);
            v_out.push(o);
            pi.push(p);
            dv.push(d);
        }
        Ok(FactorVector {
            pi,
            v_out,
            v_in,
            input,
            dv,
            spent: false,
        })
    }

    /// Straight-through backward of [`compute_factors`](Self::compute_factors),
    /// adding `dL/dW_p^l` into `grads` and returning `(dL/de_d, dL/dh^l)`.
    pub fn accumulate_backward(
        &self,
        layer: usize,
        grad_pi: &[f64],
        fv: &mut FactorVector,
        grads: &mut Dense,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if fv.spent {
            return Err(Error::State("factor vector was already backpropagated".into()));
        }
        let dense = &self.layers[layer];
        if grad_pi.len() != fv.len() || fv.len() != dense.outputs() || grads.weight.shape() != dense.weight.shape() {
            return Err(Error::Shape(format!("pruner layer {layer}: gradient shape mismatch")));
        }
        fv.spent = true;
        let grad_v_in: Vec<f64> = grad_pi.iter().zip(&fv.dv).map(|(g, d)| g * d).collect();
        let grad_input = crate::numerics::matvec_backward(&dense.weight, &fv.input, &grad_v_in, &mut grads.weight)?;
        for (gb, g) in grads.bias.iter_mut().zip(&grad_v_in) {
            *gb += g;
        }
        let mut grad_e_d = grad_input;
        let grad_h = grad_e_d.split_off(self.domain_width);
        Ok((grad_e_d, grad_h))
    }

    pub fn factors_backward(&self, layer: usize, grad_pi: &[f64], fv: &mut FactorVector) -> Result<FactorGrads> {
        let dense = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::Shape(format!("pruner has no layer {layer}")))?;
        let mut g = Dense::zeros(dense.outputs(), dense.inputs());
        let (e_d, h) = self.accumulate_backward(layer, grad_pi, fv, &mut g)?;
        Ok(FactorGrads { layer: g, e_d, h })
    }
}

/// Gate that computes factors with the pruner during a backbone forward.
pub struct PrunerForward<'a> {
    pruner: &'a PrunerState,
    method: FactorMethod,
    e_d: &'a [f64],
    pub factors: Vec<FactorVector>,
}

impl<'a> PrunerForward<'a> {
    pub fn new(pruner: &'a PrunerState, method: FactorMethod, e_d: &'a [f64]) -> Self {
        PrunerForward {
            pruner,
            method,
            e_d,
            factors: Vec::with_capacity(pruner.layers.len()),
        }
    }
}

impl Gate for PrunerForward<'_> {
    fn factors(&mut self, layer: usize, h: &[f64]) -> Result<Option<Vec<f64>>> {
        let fv = self.pruner.compute_factors(self.e_d, h, layer, &self.method)?;
        let pi = fv.pi.clone();
        self.factors.push(fv);
        Ok(Some(pi))
    }
}

/// Backward counterpart of [`PrunerForward`]. `extra[l]` is added to every
/// entry of `dL/dπ^l` before it enters the pruner (the sparsity term).
pub struct PrunerBackprop<'a> {
    pub pruner: &'a PrunerState,
    pub factors: &'a mut [FactorVector],
    pub grads: &'a mut PrunerGrads,
    pub grad_e_d: &'a mut [f64],
    pub extra: &'a [f64],
}

impl GateBackprop for PrunerBackprop<'_> {
    fn backprop(&mut self, layer: usize, grad_factors: &[f64]) -> Result<Option<Vec<f64>>> {
        let shift = self.extra.get(layer).copied().unwrap_or(0.0);
        let g: Vec<f64> = grad_factors.iter().map(|x| x + shift).collect();
        let fv = self
            .factors
            .get_mut(layer)
            .ok_or_else(|| Error::State(format!("no cached factors for layer {layer}")))?;
        let (de_d, dh) = self.pruner.accumulate_backward(layer, &g, fv, &mut self.grads.0[layer])?;
        for (a, b) in self.grad_e_d.iter_mut().zip(&de_d) {
            *a += b;
        }
        Ok(Some(dh))
    }
}

/// Fraction of exactly-zero entries; for 0/1 factors this is `1 - ||π||₁ / N`.
pub fn sparsity_ratio(pi: &[f64]) -> f64 {
    if pi.is_empty() {
        return 0.0;
    }
    pi.iter().filter(|&&x| x == 0.0).count() as f64 / pi.len() as f64
}

/// Target band `[r_min, r_max]` for per-layer sparsity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityBoundary {
    pub r_min: f64,
    pub r_max: f64,
}

impl SparsityBoundary {
    pub fn new(r_min: f64, r_max: f64) -> Result<Self> {
        let b = SparsityBoundary { r_min, r_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.r_min && self.r_min < self.r_max && self.r_max <= 1.0) {
            return Err(Error::Config(format!(
                "sparsity boundary needs 0 <= r_min < r_max <= 1, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }

    pub fn target(&self) -> f64 {
        (self.r_min + self.r_max) / 2.0
    }

    pub fn contains(&self, r: f64) -> bool {
        self.r_min <= r && r <= self.r_max
    }

    /// Dynamic weight `λ^l`.
    pub fn layer_weight(&self, r: f64, lambda_hat: f64) -> f64 {
        if self.contains(r) {
            0.0
        } else {
            lambda_hat * (r - self.target()).abs()
        }
    }
}

/// `R_s` over per-layer ratios.
pub fn sparsity_loss(ratios: &[f64], boundary: &SparsityBoundary, lambda_hat: f64) -> f64 {
    if ratios.is_empty() {
        return 0.0;
    }
    let target = boundary.target();
    ratios
        .iter()
        .map(|&r| boundary.layer_weight(r, lambda_hat) * (r - target).abs())
        .sum::<f64>()
        / ratios.len() as f64
}

/// `dR_s/dr^l` per layer, differentiating through `λ^l` as well:
/// `2 λ̂ (r^l - r*) / L` outside the boundary, zero inside.
pub fn sparsity_loss_grad(ratios: &[f64], boundary: &SparsityBoundary, lambda_hat: f64) -> Vec<f64> {
    let l = ratios.len() as f64;
    let target = boundary.target();
    ratios
        .iter()
        .map(|&r| {
            if boundary.contains(r) {
                0.0
            } else {
                2.0 * lambda_hat * (r - target) / l
            }
        })
        .collect()
}

/// Surrogate `dR_s/dπ_i` for one factor of a layer with `width` neurons,
/// when the layer ratio is averaged over `batch` samples. Treats
/// `r^l = 1 - Σπ / N_l`, so a positive `dR_s/dr^l` pushes factors up.
pub fn gradient_through_sparsity(grad_ratio: f64, width: usize, batch: usize) -> f64 {
    if width == 0 || batch == 0 {
        return 0.0;
    }
    -grad_ratio / (width as f64 * batch as f64)
}

/// Linear ramp from `start` to `end` over `total_steps`, flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
}

impl LinearSchedule {
    pub fn at(&self, step: usize, total_steps: usize) -> f64 {
        if step >= total_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * (step as f64 / total_steps as f64)
    }
}

pub const ALPHA_INIT: f64 = 0.1;
pub const ALPHA_MAX: f64 = 5.0;
pub const LAMBDA_INIT: f64 = 0.01;
pub const LAMBDA_MAX: f64 = 1.0;
pub const BETA: f64 = 2.0;
pub const EPSILON: f64 = 0.25;
pub const R_MIN: f64 = 0.15;
pub const R_MAX: f64 = 0.25;

/// `α` with the default ramp 0.1 → 5.
pub fn alpha_schedule(step: usize, total_steps: usize) -> f64 {
    LinearSchedule {
        start: ALPHA_INIT,
        end: ALPHA_MAX,
    }
    .at(step, total_steps)
}

/// `λ̂` with the default ramp 0.01 → 1.
pub fn lambda_schedule(step: usize, total_steps: usize) -> f64 {
    LinearSchedule {
        start: LAMBDA_INIT,
        end: LAMBDA_MAX,
    }
    .at(step, total_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, sigmoid_scalar};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fusion(alpha: f64) -> FactorMethod {
        FactorMethod::Fusion {
            alpha,
            beta: BETA,
            epsilon: EPSILON,
        }
    }

    #[test]
    fn fusion_at_zero_is_one() {
        for alpha in [0.1, 1.0, 5.0] {
            let (v, pi, _) = fusion(alpha).apply(0.0);
            assert_eq!(v, 1.0);
            assert_eq!(pi, 1.0);
        }
    }

    #[test]
    fn binarization_prunes_below_threshold() {
        let m = FactorMethod::Binarization {
            alpha: 5.0,
            epsilon: EPSILON,
        };
        let (v, pi, _) = m.apply(-1.0);
        assert!((v - 1.0 / (1.0 + 5f64.exp())).abs() < 1e-17);
        assert!((v - 0.006692850924284856).abs() < 1e-15);
        assert_eq!(pi, 0.0);
        assert_eq!(m.apply(1.0).1, 1.0);
    }

    #[test]
    fn scaling_at_zero_is_exactly_one() {
        let (v, pi, _) = FactorMethod::Scaling { beta: 2.0 }.apply(0.0);
        assert_eq!(v, 1.0);
        assert_eq!(pi, 1.0);
    }

    #[test]
    fn threshold_at_epsilon_is_zero() {
        // sign(0) = 0, so v_out == ε prunes.
        let m = FactorMethod::Fusion {
            alpha: 1.0,
            beta: 1.0,
            epsilon: 0.5,
        };
        assert_eq!(m.apply(0.0), (0.5, 0.0, 0.25));
    }

    #[test]
    fn method_validation() {
        assert!(FactorMethod::new(FactorKind::Fusion, 0.1, 0.5, 0.25).is_err());
        assert!(FactorMethod::new(FactorKind::Binarization, 0.1, 2.0, 0.0).is_err());
        assert!(FactorMethod::new(FactorKind::Binarization, 0.0, 2.0, 0.1).is_err());
        assert!(FactorMethod::new(FactorKind::Scaling, 0.1, 1.0, 0.25).is_ok());
    }

    #[test]
    fn sparsity_ratio_cases() {
        assert_eq!(sparsity_ratio(&[1.0, 0.0, 0.0, 1.0]), 0.5);
        assert_eq!(sparsity_ratio(&[1.0; 7]), 0.0);
        assert_eq!(sparsity_ratio(&[0.0, 0.9, 1.4, 0.0]), 0.5);
    }

    #[test]
    fn sparsity_loss_cases() {
        let b = SparsityBoundary::new(0.15, 0.25).unwrap();
        assert_eq!(sparsity_loss(&[0.2], &b, 0.5), 0.0);
        assert_eq!(sparsity_loss(&[0.2, 0.15, 0.25], &b, 1.0), 0.0);

        // r = 0.5 against r* = 0.2 (boundary [0.1, 0.3]), λ̂ = 0.01
        let b2 = SparsityBoundary::new(0.1, 0.3).unwrap();
        assert!((b2.layer_weight(0.5, 0.01) - 0.003).abs() < 1e-15);
        assert!((sparsity_loss(&[0.5], &b2, 0.01) - 0.0009).abs() < 1e-15);
        // averaged over layers
        assert!((sparsity_loss(&[0.5, 0.2], &b2, 0.01) - 0.00045).abs() < 1e-15);
    }

    #[test]
    fn boundary_validation() {
        assert!(SparsityBoundary::new(0.3, 0.2).is_err());
        assert!(SparsityBoundary::new(-0.1, 0.2).is_err());
        assert!(SparsityBoundary::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn schedules() {
        assert_eq!(alpha_schedule(0, 100), 0.1);
        assert_eq!(alpha_schedule(100, 100), 5.0);
        assert!((alpha_schedule(50, 100) - 2.55).abs() < 1e-12);
        assert_eq!(alpha_schedule(150, 100), 5.0);
        assert_eq!(lambda_schedule(0, 100), 0.01);
        assert_eq!(lambda_schedule(100, 100), 1.0);
        for s in 0..200 {
            assert!(lambda_schedule(s + 1, 100) >= lambda_schedule(s, 100));
            assert!(alpha_schedule(s + 1, 100) >= alpha_schedule(s, 100));
        }
    }

    #[test]
    fn sparsity_gradient_signs() {
        let b = SparsityBoundary::new(0.15, 0.25).unwrap();
        let g = sparsity_loss_grad(&[0.2, 0.6, 0.0], &b, 1.0);
        assert_eq!(g[0], 0.0);
        // too sparse: dR/dπ < 0, so descent raises factors
        assert!(gradient_through_sparsity(g[1], 8, 1) < 0.0);
        // too dense: factors are pushed down
        assert!(gradient_through_sparsity(g[2], 8, 1) > 0.0);
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        // Single layer, π continuous, r(π) = 1 - Σπ/N.
        let b = SparsityBoundary::new(0.15, 0.25).unwrap();
        let lambda = 0.7;
        for pi0 in [vec![0.9, 0.1, 0.8, 0.95, 0.3], vec![0.2, 0.1, 0.0, 0.3, 0.25]] {
            let n = pi0.len();
            let pm = Matrix::from_vec(1, n, pi0).unwrap();
            let err = grad_check(&[pm], 1e-6, |p| {
                let pi = p[0].as_slice();
                let r = 1.0 - pi.iter().sum::<f64>() / n as f64;
                let loss = sparsity_loss(&[r], &b, lambda);
                let dr = sparsity_loss_grad(&[r], &b, lambda)[0];
                let g = vec![gradient_through_sparsity(dr, n, 1); n];
                Ok((loss, vec![Matrix::from_vec(1, n, g)?]))
            })
            .unwrap();
            assert!(err <= 1e-6, "{err}");
        }
    }

    fn pruner_params(p: &PrunerState) -> Vec<Matrix> {
        p.layers()
            .iter()
            .flat_map(|d| [d.weight.clone(), Matrix::from_vec(1, d.bias.len(), d.bias.clone()).unwrap()])
            .collect()
    }

    /// loss = Σ c ⊙ π for one layer; gradients w.r.t. W_p, b_p, e_d and h.
    fn check_factor_grads(method: FactorMethod, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pruner = PrunerState::new(3, &[4], &mut rng);
        let e_d: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut params = pruner_params(&pruner);
        params.push(Matrix::from_vec(1, 3, e_d).unwrap());
        params.push(Matrix::from_vec(1, 4, h).unwrap());
        grad_check(&params, 1e-6, |p| {
            let pr = PrunerState::from_layers(
                3,
                vec![Dense {
                    weight: p[0].clone(),
                    bias: p[1].as_slice().to_vec(),
                }],
            )?;
            let mut fv = pr.compute_factors(p[2].as_slice(), p[3].as_slice(), 0, &method)?;
            let loss = fv.pi.iter().zip(&c).map(|(a, b)| a * b).sum();
            let g = pr.factors_backward(0, &c, &mut fv)?;
            Ok((
                loss,
                vec![
                    g.layer.weight,
                    Matrix::from_vec(1, 4, g.layer.bias)?,
                    Matrix::from_vec(1, 3, g.e_d)?,
                    Matrix::from_vec(1, 4, g.h)?,
                ],
            ))
        })
        .unwrap()
    }

    #[test]
    fn scaling_backward_matches_finite_differences() {
        for seed in 0..20 {
            let err = check_factor_grads(FactorMethod::Scaling { beta: 2.0 }, seed);
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn fusion_backward_away_from_kink() {
        // With Glorot weights, inputs in [-1, 1] and α = 0.3, v_out stays far above ε.
        for seed in 0..20 {
            let err = check_factor_grads(fusion(0.3), seed);
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pruner = PrunerState::new(2, &[3], &mut rng);
        let mut fv = pruner.compute_factors(&[0.3, -0.2], &[0.1, 0.5, -0.9], 0, &fusion(2.0)).unwrap();
        let g = pruner.factors_backward(0, &[0.0; 3], &mut fv).unwrap();
        assert_eq!(g.layer, Dense::zeros(3, 5));
        assert!(g.e_d.iter().chain(&g.h).all(|&x| x == 0.0));
        assert!(matches!(pruner.factors_backward(0, &[0.0; 3], &mut fv), Err(Error::State(_))));
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pruner = PrunerState::new(2, &[3], &mut rng);
        assert!(matches!(
            pruner.compute_factors(&[0.3], &[0.1, 0.5, -0.9], 0, &fusion(2.0)),
            Err(Error::Shape(_))
        ));
        assert!(pruner.compute_factors(&[0.3, 0.0], &[0.1, 0.5], 0, &fusion(2.0)).is_err());
        assert!(pruner.compute_factors(&[0.3, 0.0], &[0.1, 0.5, 0.0], 1, &fusion(2.0)).is_err());
    }

    proptest! {
        #[test]
        fn factor_ranges(v in -30.0f64..30.0, alpha in 0.1f64..5.0) {
            let (_, b, _) = FactorMethod::Binarization { alpha, epsilon: EPSILON }.apply(v);
            prop_assert!(b == 0.0 || b == 1.0);
            let (_, f, _) = fusion(alpha).apply(v);
            prop_assert!(f == 0.0 || (f > EPSILON && f <= BETA));
            let (_, s, _) = FactorMethod::Scaling { beta: BETA }.apply(v);
            prop_assert!(s > 0.0 && s < BETA);
        }

        #[test]
        fn annealing_moves_toward_step(v in -10.0f64..10.0, a1 in 0.1f64..5.0, d in 0.0f64..5.0) {
            prop_assume!(v != 0.0);
            let a2 = a1 + d;
            let limit = if v > 0.0 { 1.0 } else { 0.0 };
            let gap = |a: f64| (sigmoid_scalar(a * v) - limit).abs();
            prop_assert!(gap(a2) <= gap(a1));
        }

        #[test]
        fn loss_is_zero_inside_boundary(rs in proptest::collection::vec(0.15f64..=0.25, 1..6), lambda in 0.0f64..10.0) {
            let b = SparsityBoundary::new(0.15, 0.25).unwrap();
            prop_assert_eq!(sparsity_loss(&rs, &b, lambda), 0.0);
            prop_assert!(sparsity_loss_grad(&rs, &b, lambda).iter().all(|&g| g == 0.0));
        }
    }
}
