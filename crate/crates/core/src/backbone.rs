//! Fully-connected tanh backbone with a gate hook in front of every layer.
//!
//! Layer `l` maps its input `h^l` to `tanh(W^l (h^l ⊙ π^l) + b^l)`; the last
//! layer is the scalar output head and has no activation. `h^1 = [e_d; e_a]`,
//! so the input embeddings are gated too. Biases are never gated.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{sigmoid_scalar, Matrix, TapeNode};

/// Supplies the factor vector `π^l` for a layer input, or `None` to leave
/// the layer ungated.
pub trait Gate {
    fn factors(&mut self, layer: usize, h: &[f64]) -> Result<Option<Vec<f64>>>;
}

/// Backward counterpart of [`Gate`]: receives `dL/dπ^l` and returns the
/// extra `dL/dh^l` arising from the gate's own dependence on `h^l`.
pub trait GateBackprop {
    fn backprop(&mut self, layer: usize, grad_factors: &[f64]) -> Result<Option<Vec<f64>>>;
}

/// The plain DNN: no layer is gated.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ungated;

impl Gate for Ungated {
    fn factors(&mut self, _: usize, _: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

impl GateBackprop for Ungated {
    fn backprop(&mut self, _: usize, _: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

/// Constant, input-independent factors per layer.
#[derive(Debug, Clone)]
pub struct FixedFactors(pub Vec<Vec<f64>>);

impl Gate for FixedFactors {
    fn factors(&mut self, layer: usize, _: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(self.0.get(layer).cloned())
    }
}

impl GateBackprop for FixedFactors {
    fn backprop(&mut self, _: usize, _: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

/// Affine map `out x in` plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Dense {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn add_assign(&mut self, other: &Dense) -> Result<()> {
        self.weight.add_assign(&other.weight)?;
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneState {
    layers: Vec<Dense>,
}

/// Gradient buffers for a stack of [`Dense`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads(pub Vec<Dense>);

pub type BackboneGrads = DenseGrads;

impl DenseGrads {
    pub fn zeros_like(layers: &[Dense]) -> Self {
        DenseGrads(layers.iter().map(|l| Dense::zeros(l.outputs(), l.inputs())).collect())
    }

    pub fn add_assign(&mut self, other: &DenseGrads) -> Result<()> {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    pre_gate: Vec<f64>,
    factors: Option<Vec<f64>>,
    gate: Option<TapeNode>,
    gated: Vec<f64>,
    affine: TapeNode,
    act: Option<TapeNode>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    domain_width: usize,
    spent: bool,
}

impl ForwardCache {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// `h^l`, the layer input before gating.
    pub fn pre_gate(&self, layer: usize) -> &[f64] {
        &self.layers[layer].pre_gate
    }

    /// `h^l ⊙ π^l` (equal to `h^l` for an ungated layer).
    pub fn gated(&self, layer: usize) -> &[f64] {
        &self.layers[layer].gated
    }

    pub fn factors(&self, layer: usize) -> Option<&[f64]> {
        self.layers[layer].factors.as_deref()
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub logit: f64,
    pub p_ctr: f64,
    pub cache: ForwardCache,
}

#[derive(Debug, Clone)]
pub struct BackboneBackward {
    /// `dL/dπ^l` for each gated layer.
    pub grad_factors: Vec<Option<Vec<f64>>>,
    pub grad_e_d: Vec<f64>,
    pub grad_e_a: Vec<f64>,
}

impl BackboneState {
    /// Glorot-uniform weights, zero biases. `hidden` lists hidden widths;
    /// a scalar head is appended.
    pub fn new<R: Rng + ?Sized>(input_width: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_width;
        for &width in hidden.iter().chain(std::iter::once(&1)) {
            layers.push(Dense {
                weight: Matrix::glorot(width, fan_in, rng),
                bias: vec![0.0; width],
            });
            fan_in = width;
        }
        BackboneState { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Shape("backbone needs at least the output head".into()));
        };
        if last.outputs() != 1 {
            return Err(Error::Shape("output head must produce one logit".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape("consecutive layer widths disagree".into()));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.outputs()) {
            return Err(Error::Shape("bias length differs from layer width".into()));
        }
        Ok(BackboneState { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Number of gated layers `L` (hidden layers plus the head).
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Input width `N_l` of every layer, i.e. the length of each `π^l`.
    pub fn gate_widths(&self) -> Vec<usize> {
        self.layers.iter().map(Dense::inputs).collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn zero_grads(&self) -> BackboneGrads {
        DenseGrads::zeros_like(&self.layers)
    }

    pub fn forward(&self, e_d: &[f64], e_a: &[f64], gate: &mut dyn Gate) -> Result<Forward> {
        if e_d.len() + e_a.len() != self.input_width() {
            return Err(Error::Shape(format!(
                "backbone input is {} wide, got {}+{}",
                self.input_width(),
                e_d.len(),
                e_a.len()
            )));
        }
        let mut h: Vec<f64> = e_d.iter().chain(e_a).copied().collect();
        let mut caches = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        let mut logit = 0.0;
        for (l, layer) in self.layers.iter().enumerate() {
            let factors = gate.factors(l, &h)?;
            let (gated, gate_node) = match &factors {
                Some(pi) => {
                    if pi.len() != h.len() {
                        return Err(Error::Shape(format!(
                            "layer {l}: factor vector has {} entries for {} neurons",
                            pi.len(),
                            h.len()
                        )));
                    }
                    let (g, node) = TapeNode::hadamard(&h, pi)?;
                    (g, Some(node))
                }
                None => (h.clone(), None),
            };
            let (mut z, affine) = TapeNode::matvec(&layer.weight, &gated)?;
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            let (next, act) = if l == last {
                logit = z[0];
                (Vec::new(), None)
            } else {
                let (out, node) = TapeNode::tanh(&z);
                (out, Some(node))
            };
            caches.push(LayerCache {
                pre_gate: std::mem::replace(&mut h, next),
                factors,
                gate: gate_node,
                gated,
                affine,
                act,
            });
        }
        Ok(Forward {
            logit,
            p_ctr: sigmoid_scalar(logit),
            cache: ForwardCache {
                layers: caches,
                domain_width: e_d.len(),
                spent: false,
            },
        })
    }

    /// Backpropagates `dL/dlogit`, adding parameter gradients into `grads`.
    pub fn backward(
        &self,
        grad_logit: f64,
        cache: &mut ForwardCache,
        gate: &mut dyn GateBackprop,
        grads: &mut BackboneGrads,
    ) -> Result<BackboneBackward> {
        if cache.spent {
            return Err(Error::State("forward cache was already consumed".into()));
        }
        if cache.layers.len() != self.layers.len() || grads.0.len() != self.layers.len() {
            return Err(Error::State("forward cache does not belong to this backbone".into()));
        }
        cache.spent = true;

        let mut grad_factors = vec![None; self.layers.len()];
        let mut upstream = vec![grad_logit];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let lc = &mut cache.layers[l];
            let grad_z = match &mut lc.act {
                Some(node) => node.backward_unary(&upstream)?,
                None => upstream,
            };
            let g = &mut grads.0[l];
            for (gb, gz) in g.bias.iter_mut().zip(&grad_z) {
                *gb += gz;
            }
            let grad_gated = lc.affine.backward_matvec(&layer.weight, &grad_z, &mut g.weight)?;
            upstream = match &mut lc.gate {
                Some(node) => {
                    let (mut grad_h, grad_pi) = node.backward_hadamard(&grad_gated)?;
                    if let Some(extra) = gate.backprop(l, &grad_pi)? {
                        if extra.len() != grad_h.len() {
                            return Err(Error::Shape(format!("layer {l}: gate returned wrong gradient width")));
                        }
                        for (a, b) in grad_h.iter_mut().zip(&extra) {
                            *a += b;
                        }
                    }
                    grad_factors[l] = Some(grad_pi);
                    grad_h
                }
                None => grad_gated,
            };
        }
        let grad_e_a = upstream.split_off(cache.domain_width);
        Ok(BackboneBackward {
            grad_factors,
            grad_e_d: upstream,
            grad_e_a,
        })
    }
}
