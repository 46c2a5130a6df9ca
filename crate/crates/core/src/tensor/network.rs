//! Fully-connected networks: architecture, parameters, forward and backward
//! passes.
//!
//! Weight matrix `W⁽ˡ⁾` has shape `m_l × m_{l−1}`; entry `(i, j)` connects
//! node `j` of layer `l−1` to node `i` of layer `l`. Layer `l` computes
//! `z⁽ˡ⁾ = W⁽ˡ⁾ a⁽ˡ⁻¹⁾ + b⁽ˡ⁾` and `a⁽ˡ⁾ = σ_l(z⁽ˡ⁾)`, with `a⁽⁰⁾` the input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::matrix::Matrix;
use crate::error::{invalid, DpganError, Result};
use crate::Scalar;

/// Architecture of a fully-connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    widths: Vec<usize>,
    activations: Vec<Activation>,
    bias: bool,
}

impl NetworkSpec {
    /// `widths` lists `m_0 … m_H`; `activations[l-1]` is applied at layer `l`.
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>, bias: bool) -> Result<Self> {
        if widths.len() < 2 {
            return Err(invalid("widths", "need an input and at least one layer"));
        }
        if let Some(i) = widths.iter().position(|&w| w == 0) {
            return Err(invalid("widths", format!("layer {i} has width 0")));
        }
        if activations.len() != widths.len() - 1 {
            return Err(DpganError::DimensionMismatch {
                context: "NetworkSpec activations",
                expected: widths.len() - 1,
                actual: activations.len(),
            });
        }
        for a in &activations {
            if let Activation::LeakyRelu(s) = a {
                if !s.is_finite() {
                    return Err(invalid("activations", "leaky-relu slope must be finite"));
                }
            }
        }
        Ok(Self {
            widths,
            activations,
            bias,
        })
    }

    /// Same activation on every hidden layer, a separate one on the output.
    pub fn with_hidden(widths: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        let h = widths.len().saturating_sub(1);
        let mut acts = vec![hidden; h.saturating_sub(1)];
        acts.push(output);
        Self::new(widths, acts, true)
    }

    /// One activation everywhere.
    pub fn uniform(widths: Vec<usize>, act: Activation) -> Result<Self> {
        let h = widths.len().saturating_sub(1);
        Self::new(widths, vec![act; h], true)
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    /// Number of non-input layers, `H`.
    #[inline]
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    #[inline]
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    #[inline]
    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    #[inline]
    pub fn has_bias(&self) -> bool {
        self.bias
    }

    #[inline]
    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    #[inline]
    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 })
            .sum()
    }

    /// A critic computes a scalar.
    pub fn validate_critic(&self) -> Result<()> {
        if self.output_width() != 1 {
            return Err(invalid(
                "discriminator",
                format!("output width must be 1, got {}", self.output_width()),
            ));
        }
        Ok(())
    }

    /// A generator ends in a sigmoid so its samples are bounded.
    pub fn validate_generator(&self) -> Result<()> {
        if self.activations.last() != Some(&Activation::Sigmoid) {
            return Err(invalid("generator", "output activation must be sigmoid"));
        }
        Ok(())
    }
}

fn visit<'a, T>(weights: &'a [Matrix<T>], biases: &'a [Vec<T>]) -> impl Iterator<Item = &'a T> + 'a
where
    T: Scalar,
{
    weights
        .iter()
        .zip(biases)
        .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()))
}

fn visit_mut<'a, T>(
    weights: &'a mut [Matrix<T>],
    biases: &'a mut [Vec<T>],
) -> impl Iterator<Item = &'a mut T> + 'a
where
    T: Scalar,
{
    weights
        .iter_mut()
        .zip(biases.iter_mut())
        .flat_map(|(w, b)| w.as_mut_slice().iter_mut().chain(b.iter_mut()))
}

fn zero_layers<T: Scalar>(spec: &NetworkSpec) -> (Vec<Matrix<T>>, Vec<Vec<T>>) {
    let weights = spec
        .widths
        .windows(2)
        .map(|w| Matrix::zeros(w[1], w[0]))
        .collect();
    let biases = spec
        .widths
        .windows(2)
        .map(|w| vec![T::zero(); if spec.bias { w[1] } else { 0 }])
        .collect();
    (weights, biases)
}

/// Weights and biases of one network. Biases are empty vectors when the
/// architecture has them disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let (weights, biases) = zero_layers(spec);
        Self { weights, biases }
    }

    /// Weights uniform on `[−scale, scale]`, biases zero.
    pub fn uniform<R: Rng + ?Sized>(spec: &NetworkSpec, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        for w in &mut p.weights {
            for v in w.as_mut_slice() {
                *v = T::of(rng.random_range(-1.0..=1.0) * scale);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.as_slice().len() + b.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view in layer order, weights (row-major) before biases.
    pub fn values(&self) -> impl Iterator<Item = &T> + '_ {
        visit(&self.weights, &self.biases)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        visit_mut(&mut self.weights, &mut self.biases)
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.values().copied().collect()
    }

    pub fn from_flat(spec: &NetworkSpec, flat: &[T]) -> Result<Self> {
        let mut p = Self::zeros(spec);
        if flat.len() != p.len() {
            return Err(DpganError::DimensionMismatch {
                context: "ParameterSet::from_flat",
                expected: p.len(),
                actual: flat.len(),
            });
        }
        for (dst, src) in p.values_mut().zip(flat) {
            *dst = *src;
        }
        Ok(p)
    }

    pub fn max_abs(&self) -> T {
        self.values().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// True when the layer shapes agree with `spec`.
    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        self.weights.len() == spec.depth()
            && self.biases.len() == spec.depth()
            && spec.widths.windows(2).enumerate().all(|(l, w)| {
                self.weights[l].rows() == w[1]
                    && self.weights[l].cols() == w[0]
                    && self.biases[l].len() == if spec.bias { w[1] } else { 0 }
            })
    }
}

/// Gradient of a scalar cost with respect to every parameter of a network,
/// together with its Euclidean norm over all entries (weights and biases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet<T> {
    weights: Vec<Matrix<T>>,
    biases: Vec<Vec<T>>,
    norm: T,
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let (weights, biases) = zero_layers(spec);
        Self {
            weights,
            biases,
            norm: T::zero(),
        }
    }

    pub fn from_parts(weights: Vec<Matrix<T>>, biases: Vec<Vec<T>>) -> Self {
        let mut g = Self {
            weights,
            biases,
            norm: T::zero(),
        };
        g.refresh_norm();
        g
    }

    /// Rebuilds a gradient from its flat layout, shaped like `like`.
    pub fn from_flat_like(like: &GradientSet<T>, flat: &[T]) -> Result<Self> {
        if flat.len() != like.len() {
            return Err(DpganError::DimensionMismatch {
                context: "GradientSet::from_flat_like",
                expected: like.len(),
                actual: flat.len(),
            });
        }
        let mut g = like.clone();
        for (dst, src) in visit_mut(&mut g.weights, &mut g.biases).zip(flat) {
            *dst = *src;
        }
        g.refresh_norm();
        Ok(g)
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.norm
    }

    pub fn weight(&self, layer: usize) -> &Matrix<T> {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        &self.biases[layer]
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> impl Iterator<Item = &T> + '_ {
        visit(&self.weights, &self.biases)
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.values().copied().collect()
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| *v == T::zero())
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &GradientSet<T>, scale: T) {
        for (a, b) in visit_mut(&mut self.weights, &mut self.biases).zip(other.values()) {
            *a = *a + scale * *b;
        }
        self.refresh_norm();
    }

    /// Adds `scale · params` entrywise (used for L2 terms).
    pub fn add_scaled_params(&mut self, params: &ParameterSet<T>, scale: T) {
        for (a, b) in visit_mut(&mut self.weights, &mut self.biases).zip(params.values()) {
            *a = *a + scale * *b;
        }
        self.refresh_norm();
    }

    pub fn scale(&mut self, s: T) {
        for a in visit_mut(&mut self.weights, &mut self.biases) {
            *a = *a * s;
        }
        self.refresh_norm();
    }

    fn refresh_norm(&mut self) {
        let ss: T = self.values().map(|v| *v * *v).sum();
        self.norm = ss.sqrt();
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Matrix<T>], &mut [Vec<T>]) {
        (&mut self.weights, &mut self.biases)
    }

    pub(crate) fn finish(&mut self) {
        self.refresh_norm();
    }
}

/// Intermediate values recorded by [`forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace<T> {
    /// `z⁽ˡ⁾` for `l = 1..=H` (index `l − 1`).
    pub pre_activations: Vec<Vec<T>>,
    /// `a⁽ˡ⁾` for `l = 0..=H`; entry 0 is the input.
    pub post_activations: Vec<Vec<T>>,
}

impl<T: Scalar> ActivationTrace<T> {
    pub fn input(&self) -> &[T] {
        &self.post_activations[0]
    }

    pub fn output(&self) -> &[T] {
        self.post_activations.last().expect("trace has an input")
    }
}

fn check_params<T: Scalar>(spec: &NetworkSpec, params: &ParameterSet<T>) -> Result<()> {
    if !params.matches(spec) {
        return Err(DpganError::DimensionMismatch {
            context: "parameters vs architecture",
            expected: spec.param_count(),
            actual: params.len(),
        });
    }
    Ok(())
}

fn check_input(spec: &NetworkSpec, len: usize) -> Result<()> {
    if len != spec.input_width() {
        return Err(DpganError::DimensionMismatch {
            context: "network input",
            expected: spec.input_width(),
            actual: len,
        });
    }
    Ok(())
}

/// Runs the network on `input`, recording every `z⁽ˡ⁾` and `a⁽ˡ⁾`.
pub fn forward<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParameterSet<T>,
    input: &[T],
) -> Result<(Vec<T>, ActivationTrace<T>)> {
    check_params(spec, params)?;
    check_input(spec, input.len())?;
    let h = spec.depth();
    let mut pre = Vec::with_capacity(h);
    let mut post = Vec::with_capacity(h + 1);
    post.push(input.to_vec());
    for l in 0..h {
        let w = &params.weights[l];
        let mut z = vec![T::zero(); w.rows()];
        w.matvec_into(&post[l], &mut z);
        for (zi, bi) in z.iter_mut().zip(&params.biases[l]) {
            *zi = *zi + *bi;
        }
        let act = spec.activations[l];
        let a: Vec<T> = z.iter().map(|&zi| act.apply(zi)).collect();
        pre.push(z);
        post.push(a);
    }
    let out = post[h].clone();
    Ok((
        out,
        ActivationTrace {
            pre_activations: pre,
            post_activations: post,
        },
    ))
}

/// Forward pass without keeping the trace.
pub fn predict<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParameterSet<T>,
    input: &[T],
) -> Result<Vec<T>> {
    check_params(spec, params)?;
    check_input(spec, input.len())?;
    let mut a = input.to_vec();
    for (l, act) in spec.activations.iter().enumerate() {
        let w = &params.weights[l];
        let mut z = vec![T::zero(); w.rows()];
        w.matvec_into(&a, &mut z);
        for (zi, bi) in z.iter_mut().zip(&params.biases[l]) {
            *zi = *zi + *bi;
        }
        for zi in &mut z {
            *zi = act.apply(*zi);
        }
        a = z;
    }
    Ok(a)
}

/// Everything one backward sweep produces.
#[derive(Debug, Clone)]
pub struct Backprop<T> {
    pub grads: GradientSet<T>,
    /// Error vectors `δ⁽ˡ⁾` for `l = 1..=H` (index `l − 1`).
    pub deltas: Vec<Vec<T>>,
    /// `∂C/∂a⁽⁰⁾`.
    pub input_grad: Vec<T>,
}

/// Core sweep: accumulates `scale · ∂C/∂W⁽ˡ⁾` into `weights`/`biases` and
/// returns the error vectors and the input gradient.
pub(crate) fn backprop_into<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParameterSet<T>,
    trace: &ActivationTrace<T>,
    output_grad: &[T],
    scale: T,
    weights: &mut [Matrix<T>],
    biases: &mut [Vec<T>],
    want_deltas: bool,
) -> (Vec<Vec<T>>, Vec<T>) {
    let h = spec.depth();
    let mut kept = Vec::new();
    // δ⁽ᴴ⁾ = ∇_a C ⊙ σ′(z⁽ᴴ⁾)
    let mut delta: Vec<T> = output_grad
        .iter()
        .zip(&trace.pre_activations[h - 1])
        .map(|(g, &z)| *g * spec.activations[h - 1].derivative(z))
        .collect();
    for l in (0..h).rev() {
        // ∂C/∂W⁽ˡ⁾_{jk} = a⁽ˡ⁻¹⁾_k δ⁽ˡ⁾_j
        weights[l].add_outer(scale, &delta, &trace.post_activations[l]);
        for (b, d) in biases[l].iter_mut().zip(&delta) {
            *b = *b + scale * *d;
        }
        let back = params.weights[l].transpose_matvec(&delta);
        let next = if l > 0 {
            // δ⁽ˡ⁾ = (W⁽ˡ⁺¹⁾ᵀ δ⁽ˡ⁺¹⁾) ⊙ σ′(z⁽ˡ⁾)
            let act = spec.activations[l - 1];
            back.iter()
                .zip(&trace.pre_activations[l - 1])
                .map(|(b, &z)| *b * act.derivative(z))
                .collect()
        } else {
            back
        };
        if want_deltas {
            kept.push(std::mem::replace(&mut delta, next));
        } else {
            delta = next;
        }
    }
    kept.reverse();
    (kept, delta)
}

fn check_trace<T: Scalar>(
    spec: &NetworkSpec,
    trace: &ActivationTrace<T>,
    output_grad: &[T],
) -> Result<()> {
    let ok = trace.pre_activations.len() == spec.depth()
        && trace.post_activations.len() == spec.depth() + 1
        && trace
            .post_activations
            .iter()
            .zip(&spec.widths)
            .all(|(a, &w)| a.len() == w);
    if !ok {
        return Err(invalid("trace", "does not match the architecture"));
    }
    if output_grad.len() != spec.output_width() {
        return Err(DpganError::DimensionMismatch {
            context: "output gradient",
            expected: spec.output_width(),
            actual: output_grad.len(),
        });
    }
    Ok(())
}

/// Gradient of `C` with respect to all parameters given `∇_a C` at the output.
pub fn backward<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParameterSet<T>,
    trace: &ActivationTrace<T>,
    output_grad: &[T],
) -> Result<GradientSet<T>> {
    Ok(backward_full(spec, params, trace, output_grad)?.grads)
}

/// Like [`backward`] but also returns the error vectors and the input gradient.
pub fn backward_full<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParameterSet<T>,
    trace: &ActivationTrace<T>,
    output_grad: &[T],
) -> Result<Backprop<T>> {
    check_params(spec, params)?;
    check_trace(spec, trace, output_grad)?;
    let mut grads = GradientSet::zeros(spec);
    let (w, b) = grads.parts_mut();
    let (deltas, input_grad) =
        backprop_into(spec, params, trace, output_grad, T::one(), w, b, true);
    grads.finish();
    Ok(Backprop {
        grads,
        deltas,
        input_grad,
    })
}

/// `∂C/∂input` only; parameter gradients are not materialised.
pub fn input_gradient<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParameterSet<T>,
    trace: &ActivationTrace<T>,
    output_grad: &[T],
) -> Result<Vec<T>> {
    check_params(spec, params)?;
    check_trace(spec, trace, output_grad)?;
    let h = spec.depth();
    let mut delta: Vec<T> = output_grad
        .iter()
        .zip(&trace.pre_activations[h - 1])
        .map(|(g, &z)| *g * spec.activations[h - 1].derivative(z))
        .collect();
    for l in (0..h).rev() {
        let back = params.weights[l].transpose_matvec(&delta);
        delta = if l > 0 {
            let act = spec.activations[l - 1];
            back.iter()
                .zip(&trace.pre_activations[l - 1])
                .map(|(b, &z)| *b * act.derivative(z))
                .collect()
        } else {
            back
        };
    }
    Ok(delta)
}
