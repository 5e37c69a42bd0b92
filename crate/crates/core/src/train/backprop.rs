use crate::error::{Error, Result};
use crate::network::{LayerKind, Network, Params, Trace};
use crate::tensor::{
    conv2d_backward_input, conv2d_backward_kernels, pool2d_backward, ConvGeometry, Real, Tensor,
};

/// Parameter gradients, congruent with the owning network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Option<Params<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Gradients {
            layers: (0..net.layers().len())
                .map(|id| {
                    net.params(id).map(|p| Params {
                        weight: Tensor::zeros(p.weight.shape()).expect("valid shape"),
                        bias: Tensor::zeros(p.bias.shape()).expect("valid shape"),
                    })
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                for (x, &y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                    *x += y;
                }
                for (x, &y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                    *x += y;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for p in self.layers.iter_mut().flatten() {
            p.weight.data_mut().iter_mut().for_each(|v| *v *= factor);
            p.bias.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|p| p.weight.is_finite() && p.bias.is_finite())
    }

    pub fn is_congruent(&self, net: &Network<T>) -> bool {
        self.layers.len() == net.layers().len()
            && self.layers.iter().enumerate().all(|(id, g)| {
                match (g, net.params(id)) {
                    (None, None) => true,
                    (Some(g), Some(p)) => {
                        g.weight.shape() == p.weight.shape() && g.bias.shape() == p.bias.shape()
                    }
                    _ => false,
                }
            })
    }

    /// Iterates `(layer, is_bias, flat index, value)` over every parameter gradient.
    pub fn iter(&self) -> impl Iterator<Item = (usize, bool, usize, T)> + '_ {
        self.layers.iter().enumerate().flat_map(|(id, p)| {
            p.iter().flat_map(move |p| {
                let w = p.weight.data().iter().enumerate().map(move |(i, &v)| (id, false, i, v));
                let b = p.bias.data().iter().enumerate().map(move |(i, &v)| (id, true, i, v));
                w.chain(b)
            })
        })
    }
}

/// How the backward pass treats relu layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReluBackward {
    /// The true derivative: δ masked by the forward activation.
    Gradient,
    /// Only the sign of the backward signal matters: relu(δ).
    Deconvnet,
    /// Both: relu(δ) masked by the forward activation.
    Guided,
}

fn check_trace<T: Real>(net: &Network<T>, trace: &Trace<T>) -> Result<()> {
    let ok = trace.outputs.len() == net.layers().len()
        && net
            .layers()
            .iter()
            .zip(&trace.outputs)
            .all(|(l, o)| l.output_shape == o.shape());
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("trace was not produced by this network"))
    }
}

/// Propagates `logit_grad` from the logits layer back to the input.
///
/// Parameter gradients are accumulated into `grads` when given; the gradient
/// with respect to the network input is returned when `want_input` is set.
pub fn backprop<T: Real>(
    net: &Network<T>,
    trace: &Trace<T>,
    logit_grad: &[T],
    relu: ReluBackward,
    mut grads: Option<&mut Gradients<T>>,
    want_input: bool,
) -> Result<Option<Tensor<T>>> {
    check_trace(net, trace)?;
    if logit_grad.len() != net.n_classes() {
        return Err(Error::ShapeMismatch {
            op: "backprop",
            left: vec![logit_grad.len()],
            right: vec![net.n_classes()],
        });
    }
    let layers = net.layers();
    let mut deltas: Vec<Option<Vec<T>>> = vec![None; layers.len()];
    deltas[net.logits_layer()] = Some(logit_grad.to_vec());

    fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
        match slot {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    for id in (1..layers.len()).rev() {
        let Some(delta) = deltas[id].take() else {
            continue;
        };
        let layer = &layers[id];
        let src = layer.inputs[0];
        let need_src = want_input || src != 0;
        match &layer.kind {
            LayerKind::Input | LayerKind::Softmax => {}
            LayerKind::Conv {
                kernel_h,
                kernel_w,
                in_channels,
                out_channels,
                stride,
                padding,
            } => {
                let x = &trace.outputs[src];
                let p = net.params(id).expect("conv owns parameters");
                let geo = ConvGeometry::new(
                    x.shape(),
                    &[*kernel_h, *kernel_w, *in_channels, *out_channels],
                    *stride,
                    *padding,
                )?;
                if let Some(g) = grads.as_deref_mut() {
                    let gp = g.layers[id].as_mut().expect("congruent gradients");
                    conv2d_backward_kernels(&geo, x.data(), &delta, gp.weight.data_mut());
                    let db = gp.bias.data_mut();
                    for px in delta.chunks_exact(*out_channels) {
                        for (b, &d) in db.iter_mut().zip(px) {
                            *b += d;
                        }
                    }
                }
                if need_src {
                    let dx = conv2d_backward_input(&geo, &delta, p.weight.data());
                    accumulate(&mut deltas[src], dx);
                }
            }
            LayerKind::Dense { inputs, outputs } => {
                let x = trace.outputs[src].data();
                let p = net.params(id).expect("dense owns parameters");
                let w = p.weight.data();
                if let Some(g) = grads.as_deref_mut() {
                    let gp = g.layers[id].as_mut().expect("congruent gradients");
                    let gw = gp.weight.data_mut();
                    for (j, &a) in x.iter().enumerate() {
                        if a == T::zero() {
                            continue;
                        }
                        for (gwk, &d) in gw[j * outputs..(j + 1) * outputs].iter_mut().zip(&delta) {
                            *gwk += a * d;
                        }
                    }
                    for (b, &d) in gp.bias.data_mut().iter_mut().zip(&delta) {
                        *b += d;
                    }
                }
                if need_src {
                    let dx: Vec<T> = (0..*inputs)
                        .map(|j| {
                            w[j * outputs..(j + 1) * outputs]
                                .iter()
                                .zip(&delta)
                                .map(|(&wk, &d)| wk * d)
                                .sum()
                        })
                        .collect();
                    accumulate(&mut deltas[src], dx);
                }
            }
            LayerKind::Pool { mode } => {
                let dx = pool2d_backward(
                    trace.outputs[src].shape(),
                    &delta,
                    *mode,
                    trace.switches[id].as_deref(),
                )?;
                accumulate(&mut deltas[src], dx);
            }
            LayerKind::Relu => {
                let y = trace.outputs[id].data();
                let dx = delta
                    .iter()
                    .zip(y)
                    .map(|(&d, &a)| {
                        let active = a > T::zero();
                        match relu {
                            ReluBackward::Gradient if active => d,
                            ReluBackward::Gradient => T::zero(),
                            ReluBackward::Deconvnet => d.max(T::zero()),
                            ReluBackward::Guided if active => d.max(T::zero()),
                            ReluBackward::Guided => T::zero(),
                        }
                    })
                    .collect();
                accumulate(&mut deltas[src], dx);
            }
            LayerKind::Dropout { .. } => {
                let dx = match &trace.dropout_masks[id] {
                    Some(mask) => delta.iter().zip(mask).map(|(&d, &m)| d * m).collect(),
                    None => delta,
                };
                accumulate(&mut deltas[src], dx);
            }
            LayerKind::Flatten => accumulate(&mut deltas[src], delta),
            LayerKind::Concat => {
                let total_c = *layer.output_shape.last().expect("non-empty");
                let mut offset = 0;
                for &i in &layer.inputs {
                    let c = *layers[i].output_shape.last().expect("non-empty");
                    let part: Vec<T> = delta
                        .chunks_exact(total_c)
                        .flat_map(|px| px[offset..offset + c].iter().copied())
                        .collect();
                    accumulate(&mut deltas[i], part);
                    offset += c;
                }
            }
        }
    }
    if !want_input {
        return Ok(None);
    }
    let dx = deltas[0]
        .take()
        .unwrap_or_else(|| vec![T::zero(); trace.outputs[0].len()]);
    Ok(Some(Tensor::new(net.input_shape(), dx)?))
}

/// Gradients of the categorical cross-entropy of `target` with respect to every
/// weight and bias. Softmax and cross-entropy are fused: the signal entering the
/// logits is `p − onehot(target)`.
pub fn backward<T: Real>(net: &Network<T>, trace: &Trace<T>, target: usize) -> Result<Gradients<T>> {
    let logit_grad = logit_gradient(&trace.probabilities, target)?;
    let mut grads = Gradients::zeros_like(net);
    backprop(net, trace, &logit_grad, ReluBackward::Gradient, Some(&mut grads), false)?;
    Ok(grads)
}

/// `p − onehot(target)`.
pub fn logit_gradient<T: Real>(probabilities: &[T], target: usize) -> Result<Vec<T>> {
    if target >= probabilities.len() {
        return Err(Error::invalid(format!(
            "target class {target} out of range for {} classes",
            probabilities.len()
        )));
    }
    Ok(probabilities
        .iter()
        .enumerate()
        .map(|(k, &p)| if k == target { p - T::one() } else { p })
        .collect())
}
