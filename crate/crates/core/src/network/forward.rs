use rand::{Rng as _, RngCore};

use super::{LayerKind, Network};
use crate::error::{Error, Result};
use crate::tensor::{self, conv2d_with, pool2d, ConvGeometry, Real, Tensor};

/// Forward-pass mode. Dropout is only active in training, with inverted
/// scaling so inference needs no rescale.
pub enum Mode<'a> {
    Infer,
    Train(&'a mut dyn RngCore),
}

/// Everything a forward pass produced, indexed by layer id.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<T> {
    pub outputs: Vec<Tensor<T>>,
    pub switches: Vec<Option<Vec<usize>>>,
    /// Per-element dropout multipliers (0 or 1/(1-rate)); `None` at inference.
    pub dropout_masks: Vec<Option<Vec<T>>>,
    pub logits: Vec<T>,
    pub probabilities: Vec<T>,
}

impl<T> Trace<T> {
    pub fn input(&self) -> &Tensor<T> {
        &self.outputs[0]
    }

    pub fn predicted_class(&self) -> usize
    where
        T: PartialOrd + Copy,
    {
        argmax(&self.probabilities)
    }
}

pub(crate) fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> Network<T> {
    pub fn forward(&self, input: &Tensor<T>, mut mode: Mode<'_>) -> Result<Trace<T>> {
        if input.shape() != self.input_shape() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: input.shape().to_vec(),
                right: self.input_shape().to_vec(),
            });
        }
        let n = self.layers.len();
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(n);
        let mut switches = vec![None; n];
        let mut dropout_masks = vec![None; n];
        for (id, layer) in self.layers.iter().enumerate() {
            let out = match &layer.kind {
                LayerKind::Input => input.clone(),
                LayerKind::Conv {
                    kernel_h,
                    kernel_w,
                    in_channels,
                    out_channels,
                    stride,
                    padding,
                } => {
                    let x = &outputs[layer.inputs[0]];
                    let p = self.params[id].as_ref().expect("conv owns parameters");
                    let geo = ConvGeometry::new(
                        x.shape(),
                        &[*kernel_h, *kernel_w, *in_channels, *out_channels],
                        *stride,
                        *padding,
                    )?;
                    conv2d_with(&geo, x.data(), p.weight.data(), Some(p.bias.data()))
                }
                LayerKind::Dense { .. } => {
                    let x = &outputs[layer.inputs[0]];
                    let p = self.params[id].as_ref().expect("dense owns parameters");
                    let y = tensor::dense_forward(
                        x.data(),
                        &p.weight,
                        p.bias.data(),
                        tensor::Activation::Identity,
                    )?;
                    Tensor::new(&layer.output_shape, y)?
                }
                LayerKind::Pool { mode: pool_mode } => {
                    let pooled = pool2d(&outputs[layer.inputs[0]], *pool_mode)?;
                    switches[id] = pooled.switches;
                    pooled.output
                }
                LayerKind::Relu => {
                    let mut y = outputs[layer.inputs[0]].clone();
                    tensor::relu_in_place(y.data_mut());
                    y
                }
                LayerKind::Softmax => {
                    let p = tensor::softmax(outputs[layer.inputs[0]].data())?;
                    Tensor::new(&layer.output_shape, p)?
                }
                LayerKind::Concat => concat(&layer.inputs, &outputs, &layer.output_shape)?,
                LayerKind::Flatten => outputs[layer.inputs[0]].reshape(&layer.output_shape)?,
                LayerKind::Dropout { rate } => {
                    let x = &outputs[layer.inputs[0]];
                    match &mut mode {
                        Mode::Infer => x.clone(),
                        Mode::Train(rng) => {
                            let keep = T::lit(1.0 / (1.0 - rate));
                            let mask: Vec<T> = (0..x.len())
                                .map(|_| {
                                    if *rate > 0.0 && rng.random::<f64>() < *rate {
                                        T::zero()
                                    } else {
                                        keep
                                    }
                                })
                                .collect();
                            let y: Vec<T> =
                                x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                            dropout_masks[id] = Some(mask);
                            Tensor::new(x.shape(), y)?
                        }
                    }
                }
            };
            outputs.push(out);
        }
        let logits = outputs[self.logits_layer()].data().to_vec();
        let probabilities = outputs[n - 1].data().to_vec();
        Ok(Trace {
            outputs,
            switches,
            dropout_masks,
            logits,
            probabilities,
        })
    }

    /// Class probabilities at inference.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.forward(input, Mode::Infer)?.probabilities)
    }
}

fn concat<T: Real>(inputs: &[usize], outputs: &[Tensor<T>], shape: &[usize]) -> Result<Tensor<T>> {
    let total_c = *shape.last().expect("non-empty");
    let pixels: usize = shape[..shape.len() - 1].iter().product();
    let mut data = vec![T::zero(); pixels * total_c];
    let mut offset = 0;
    for &i in inputs {
        let x = &outputs[i];
        let c = *x.shape().last().expect("non-empty");
        for (p, chunk) in x.data().chunks_exact(c).enumerate() {
            data[p * total_c + offset..][..c].copy_from_slice(chunk);
        }
        offset += c;
    }
    Tensor::new(shape, data)
}
