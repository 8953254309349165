//! Layer graphs, parameter storage, and exact forward/backward passes.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{self, ConvGeometry};
use crate::tensor::{Activation, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputStream {
    Ram,
    Screen,
}

impl fmt::Display for InputStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputStream::Ram => "ram",
            InputStream::Screen => "screen",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerKind {
    Input {
        stream: InputStream,
        shape: Vec<usize>,
    },
    Dense {
        units: usize,
        activation: Activation,
        bias: bool,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    },
    Dropout {
        p: f64,
    },
    Concat,
}

/// One node of a network graph. `inputs` index earlier layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
}

impl LayerSpec {
    pub fn input(name: &str, stream: InputStream, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Input {
                stream,
                shape: shape.to_vec(),
            },
            inputs: vec![],
        }
    }

    pub fn dense(name: &str, from: usize, units: usize, activation: Activation) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Dense {
                units,
                activation,
                bias: true,
            },
            inputs: vec![from],
        }
    }

    pub fn dense_no_bias(name: &str, from: usize, units: usize, activation: Activation) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Dense {
                units,
                activation,
                bias: false,
            },
            inputs: vec![from],
        }
    }

    pub fn conv2d(
        name: &str,
        from: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    ) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv2d {
                filters,
                kernel,
                stride,
                activation,
            },
            inputs: vec![from],
        }
    }

    pub fn dropout(name: &str, from: usize, p: f64) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Dropout { p },
            inputs: vec![from],
        }
    }

    pub fn concat(name: &str, from: &[usize]) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Concat,
            inputs: from.to_vec(),
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match self.kind {
            LayerKind::Dense { activation, .. } | LayerKind::Conv2d { activation, .. } => {
                Some(activation)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
}

/// Location of one parameter tensor inside a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub layer: usize,
    pub layer_name: String,
    pub role: ParamRole,
    pub shape: Vec<usize>,
}

/// Batched inputs; each tensor carries a leading batch axis.
#[derive(Debug, Clone)]
pub struct NetInputs<T: Scalar> {
    pub ram: Option<Tensor<T>>,
    pub screen: Option<Tensor<T>>,
}

impl<T: Scalar> NetInputs<T> {
    pub fn ram(ram: Tensor<T>) -> Self {
        Self {
            ram: Some(ram),
            screen: None,
        }
    }

    fn stream(&self, stream: InputStream) -> Option<&Tensor<T>> {
        match stream {
            InputStream::Ram => self.ram.as_ref(),
            InputStream::Screen => self.screen.as_ref(),
        }
    }
}

/// Every layer's output from one forward call, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations<T: Scalar> {
    batch: usize,
    mode: Mode,
    outputs: Vec<Vec<T>>,
    masks: Vec<Option<Tensor<T>>>,
    output_dim: usize,
}

impl<T: Scalar> Activations<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn layer_output(&self, layer: usize) -> &[T] {
        &self.outputs[layer]
    }

    /// Network output as `[batch, output_dim]`.
    pub fn output(&self) -> Tensor<T> {
        let data = self.outputs.last().cloned().unwrap_or_default();
        Tensor::new(vec![self.batch, self.output_dim], data).expect("output shape is validated")
    }
}

/// Per-parameter gradients, ordered like [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Scalar> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn is_zero(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data().iter().all(|v| *v == T::zero()))
    }
}

/// A feed-forward layer graph with its parameters: `Q(state, ·; θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar = f32> {
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Option<LayerParams<T>>>,
    needs_grad: Vec<bool>,
    output_dim: usize,
}

fn width(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Validates `specs`, infers every layer's per-sample shape, and allocates
/// parameters: weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn make_network<T: Scalar, R: Rng + ?Sized>(
    specs: Vec<LayerSpec>,
    rng: &mut R,
) -> Result<Network<T>> {
    let shapes = infer_shapes(&specs)?;
    let mut params = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let p = match &spec.kind {
            LayerKind::Dense { units, bias, .. } => {
                let fan_in = width(&shapes[spec.inputs[0]]);
                Some(LayerParams {
                    weight: uniform_init(&[*units, fan_in], fan_in, rng),
                    bias: bias.then(|| Tensor::zeros(&[*units])),
                })
            }
            LayerKind::Conv2d {
                filters, kernel, ..
            } => {
                let channels = shapes[spec.inputs[0]][0];
                let fan_in = channels * kernel * kernel;
                Some(LayerParams {
                    weight: uniform_init(&[*filters, channels, *kernel, *kernel], fan_in, rng),
                    bias: Some(Tensor::zeros(&[*filters])),
                })
            }
            _ => None,
        };
        debug_assert!(p.is_none() || i > 0);
        params.push(p);
    }
    let mut needs_grad = vec![false; specs.len()];
    for i in 0..specs.len() {
        needs_grad[i] = params[i].is_some() || specs[i].inputs.iter().any(|&j| needs_grad[j]);
    }
    let output_dim = width(shapes.last().expect("validated non-empty"));
    Ok(Network {
        layers: specs,
        shapes,
        params,
        needs_grad,
        output_dim,
    })
}

fn uniform_init<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let limit = 1.0 / (fan_in as f64).sqrt();
    let n = width(shape);
    let data = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("init shape is positive")
}

fn infer_shapes(specs: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    if specs.is_empty() {
        return Err(Error::NoOutputLayer);
    }
    let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(specs.len());
    let mut seen_streams = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        if let Some(&bad) = spec.inputs.iter().find(|&&j| j >= i) {
            return Err(Error::layer(
                i,
                format!("input {bad} does not precede layer `{}`", spec.name),
            ));
        }
        let single_input = |kind: &str| -> Result<&Vec<usize>> {
            match spec.inputs.as_slice() {
                [j] => Ok(&shapes[*j]),
                _ => Err(Error::layer(
                    i,
                    format!("{kind} layer `{}` takes exactly one input", spec.name),
                )),
            }
        };
        let shape = match &spec.kind {
            LayerKind::Input { stream, shape } => {
                if !spec.inputs.is_empty() {
                    return Err(Error::layer(i, "input layer cannot have upstream layers"));
                }
                if shape.is_empty() || shape.contains(&0) {
                    return Err(Error::layer(
                        i,
                        format!("input shape {shape:?} must have positive extents"),
                    ));
                }
                if seen_streams.contains(stream) {
                    return Err(Error::layer(i, format!("duplicate `{stream}` input layer")));
                }
                seen_streams.push(*stream);
                shape.clone()
            }
            LayerKind::Dense { units, .. } => {
                single_input("dense")?;
                if *units == 0 {
                    return Err(Error::layer(i, "dense layer needs at least one unit"));
                }
                vec![*units]
            }
            LayerKind::Conv2d {
                filters,
                kernel,
                stride,
                ..
            } => {
                let upstream = single_input("conv2d")?;
                let dims: [usize; 3] = upstream.as_slice().try_into().map_err(|_| {
                    Error::layer(
                        i,
                        format!(
                            "conv2d `{}` needs a [channels, h, w] input, got {upstream:?}",
                            spec.name
                        ),
                    )
                })?;
                if *filters == 0 {
                    return Err(Error::layer(i, "conv2d needs at least one filter"));
                }
                let geo = ConvGeometry::from_shapes(
                    &[*filters, dims[0], *kernel, *kernel],
                    dims,
                    *stride,
                )
                .map_err(|e| Error::layer(i, format!("conv2d `{}`: {e}", spec.name)))?;
                vec![*filters, geo.out_height, geo.out_width]
            }
            LayerKind::Dropout { p } => {
                let upstream = single_input("dropout")?;
                if !(0.0..1.0).contains(p) {
                    return Err(Error::layer(
                        i,
                        format!("drop probability {p} outside [0, 1)"),
                    ));
                }
                upstream.clone()
            }
            LayerKind::Concat => {
                if spec.inputs.is_empty() {
                    return Err(Error::layer(i, "concat needs at least one input"));
                }
                let mut total = 0;
                for &j in &spec.inputs {
                    if shapes[j].len() != 1 {
                        return Err(Error::layer(
                            i,
                            format!(
                                "concat `{}` input {j} has shape {:?}, expected rank 1",
                                spec.name, shapes[j]
                            ),
                        ));
                    }
                    total += shapes[j][0];
                }
                vec![total]
            }
        };
        shapes.push(shape);
    }

    let mut consumed = vec![false; specs.len()];
    for spec in specs {
        for &j in &spec.inputs {
            consumed[j] = true;
        }
    }
    let terminals: Vec<usize> = (0..specs.len()).filter(|&i| !consumed[i]).collect();
    let last = specs.len() - 1;
    if terminals != [last] {
        let dangling = terminals
            .iter()
            .find(|&&t| t != last)
            .copied()
            .unwrap_or(last);
        return Err(Error::layer(
            dangling,
            "layer output is never consumed; graph must end in one output layer",
        ));
    }
    if specs[last].activation() == Some(Activation::Rectify) {
        return Err(Error::layer(last, "output layer must have no activation"));
    }
    Ok(shapes)
}

impl<T: Scalar> Network<T> {
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Per-sample output shape of each layer.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layer_params(&self, layer: usize) -> Option<&LayerParams<T>> {
        self.params.get(layer).and_then(|p| p.as_ref())
    }

    pub fn input_streams(&self) -> Vec<InputStream> {
        self.layers
            .iter()
            .filter_map(|l| match &l.kind {
                LayerKind::Input { stream, .. } => Some(*stream),
                _ => None,
            })
            .collect()
    }

    pub fn input_shape(&self, stream: InputStream) -> Option<&[usize]> {
        self.layers
            .iter()
            .zip(&self.shapes)
            .find_map(|(l, s)| match &l.kind {
                LayerKind::Input { stream: st, .. } if *st == stream => Some(s.as_slice()),
                _ => None,
            })
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.params
            .iter()
            .flatten()
            .flat_map(|p| std::iter::once(&p.weight).chain(p.bias.as_ref()))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params
            .iter_mut()
            .flatten()
            .flat_map(|p| std::iter::once(&mut p.weight).chain(p.bias.as_mut()))
            .collect()
    }

    pub fn param_slots(&self) -> Vec<ParamSlot> {
        let mut slots = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            if let Some(p) = p {
                slots.push(ParamSlot {
                    layer: i,
                    layer_name: self.layers[i].name.clone(),
                    role: ParamRole::Weight,
                    shape: p.weight.shape().to_vec(),
                });
                if let Some(b) = &p.bias {
                    slots.push(ParamSlot {
                        layer: i,
                        layer_name: self.layers[i].name.clone(),
                        role: ParamRole::Bias,
                        shape: b.shape().to_vec(),
                    });
                }
            }
        }
        slots
    }

    /// Total scalars across weights and biases.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Same graph with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: p.weight.cast(),
                        bias: p.bias.as_ref().map(Tensor::cast),
                    })
                })
                .collect(),
            needs_grad: self.needs_grad.clone(),
            output_dim: self.output_dim,
        }
    }

    /// Replaces every parameter tensor, in [`Network::params`] order.
    pub fn set_params(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        let slots = self.param_slots();
        if values.len() != slots.len() {
            return Err(Error::Shape(format!(
                "network has {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter().zip(&values) {
            if v.shape() != slot.shape.as_slice() {
                return Err(Error::layer(
                    slot.layer,
                    format!(
                        "`{}` {:?} expects shape {:?}, got {:?}",
                        slot.layer_name,
                        slot.role,
                        slot.shape,
                        v.shape()
                    ),
                ));
            }
        }
        for (dst, v) in self.params_mut().into_iter().zip(values) {
            *dst = v;
        }
        Ok(())
    }

    fn batch_of(&self, inputs: &NetInputs<T>) -> Result<usize> {
        let mut batch = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if let LayerKind::Input { stream, .. } = &layer.kind {
                let t = inputs.stream(*stream).ok_or(Error::MissingInput(*stream))?;
                let expected = &self.shapes[i];
                if t.rank() != expected.len() + 1 || &t.shape()[1..] != expected.as_slice() {
                    return Err(Error::layer(
                        i,
                        format!(
                            "`{stream}` input {:?} does not match [batch, {expected:?}]",
                            t.shape()
                        ),
                    ));
                }
                match batch {
                    None => batch = Some(t.shape()[0]),
                    Some(b) if b != t.shape()[0] => {
                        return Err(Error::Shape(format!(
                            "input batch sizes differ: {b} vs {}",
                            t.shape()[0]
                        )))
                    }
                    _ => {}
                }
            }
        }
        batch.ok_or_else(|| Error::Shape("network has no input layer".into()))
    }

    /// Runs every layer on a batch. Evaluation mode never draws from `rng`.
    pub fn forward<R: RngCore + ?Sized>(
        &self,
        inputs: &NetInputs<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Activations<T>> {
        let batch = self.batch_of(inputs)?;
        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut mask = None;
            let out = match &layer.kind {
                LayerKind::Input { stream, .. } => inputs
                    .stream(*stream)
                    .expect("checked in batch_of")
                    .data()
                    .to_vec(),
                LayerKind::Dense { activation, .. } => {
                    let p = self.params[i].as_ref().expect("dense has params");
                    layers::dense_forward(
                        &p.weight,
                        p.bias.as_ref(),
                        &outputs[layer.inputs[0]],
                        batch,
                        *activation,
                    )
                }
                LayerKind::Conv2d {
                    stride, activation, ..
                } => {
                    let p = self.params[i].as_ref().expect("conv has params");
                    let geo = self.conv_geometry(i, *stride);
                    let bias = p.bias.as_ref().expect("conv has bias");
                    layers::conv_forward(
                        &geo,
                        p.weight.data(),
                        bias.data(),
                        &outputs[layer.inputs[0]],
                        batch,
                        *activation,
                    )
                }
                LayerKind::Dropout { p } => {
                    let upstream = &outputs[layer.inputs[0]];
                    let x = Tensor::new(vec![upstream.len()], upstream.clone())?;
                    let (y, m) = layers::dropout_apply(&x, *p, mode, rng);
                    mask = m;
                    y.into_data()
                }
                LayerKind::Concat => {
                    let parts: Vec<(&[T], usize)> = layer
                        .inputs
                        .iter()
                        .map(|&j| (outputs[j].as_slice(), width(&self.shapes[j])))
                        .collect();
                    layers::concat_forward(&parts, batch)
                }
            };
            outputs.push(out);
            masks.push(mask);
        }
        Ok(Activations {
            batch,
            mode,
            outputs,
            masks,
            output_dim: self.output_dim,
        })
    }

    /// Evaluation-mode forward returning the `[batch, output_dim]` Q-values.
    pub fn predict(&self, inputs: &NetInputs<T>) -> Result<Tensor<T>> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(inputs, Mode::Eval, &mut unused)?.output())
    }

    fn conv_geometry(&self, layer: usize, stride: usize) -> ConvGeometry {
        let up = &self.shapes[self.layers[layer].inputs[0]];
        let kshape = self.params[layer]
            .as_ref()
            .expect("conv has params")
            .weight
            .shape();
        ConvGeometry::from_shapes(kshape, [up[0], up[1], up[2]], stride)
            .expect("validated at construction")
    }

    /// Reverse-mode gradients of `sum(output_grad ⊙ output)` with respect
    /// to every parameter.
    pub fn backward(&self, acts: &Activations<T>, output_grad: &Tensor<T>) -> Result<Gradients<T>> {
        let batch = acts.batch;
        if acts.outputs.len() != self.layers.len() {
            return Err(Error::StaleActivations(format!(
                "{} layer outputs for a {}-layer network",
                acts.outputs.len(),
                self.layers.len()
            )));
        }
        for (i, (out, shape)) in acts.outputs.iter().zip(&self.shapes).enumerate() {
            if out.len() != batch * width(shape) {
                return Err(Error::StaleActivations(format!(
                    "layer {i} output has {} values, expected {}",
                    out.len(),
                    batch * width(shape)
                )));
            }
            let is_dropout = matches!(self.layers[i].kind, LayerKind::Dropout { p } if p > 0.0);
            if is_dropout && acts.mode == Mode::Train && acts.masks[i].is_none() {
                return Err(Error::StaleActivations(format!(
                    "layer {i} dropout mask missing"
                )));
            }
        }
        if output_grad.shape() != [batch, self.output_dim] {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match [{batch}, {}]",
                output_grad.shape(),
                self.output_dim
            )));
        }

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.layers.len()];
        let mut param_grads: Vec<Option<LayerParams<T>>> = vec![None; self.layers.len()];
        *grads.last_mut().expect("non-empty") = Some(output_grad.data().to_vec());

        for i in (0..self.layers.len()).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let layer = &self.layers[i];
            let upstream_needs: Vec<bool> =
                layer.inputs.iter().map(|&j| self.needs_grad[j]).collect();
            match &layer.kind {
                LayerKind::Input { .. } => {}
                LayerKind::Dense { activation, .. } => {
                    let p = self.params[i].as_ref().expect("dense has params");
                    let j = layer.inputs[0];
                    let g = layers::dense_backward(
                        &p.weight,
                        &acts.outputs[j],
                        &acts.outputs[i],
                        &gy,
                        batch,
                        *activation,
                        upstream_needs[0],
                    );
                    param_grads[i] = Some(LayerParams {
                        weight: Tensor::new(p.weight.shape().to_vec(), g.weight)?,
                        bias: match &p.bias {
                            Some(b) => Some(Tensor::new(b.shape().to_vec(), g.bias)?),
                            None => None,
                        },
                    });
                    if let Some(gx) = g.input {
                        accumulate(&mut grads[j], gx);
                    }
                }
                LayerKind::Conv2d {
                    stride, activation, ..
                } => {
                    let p = self.params[i].as_ref().expect("conv has params");
                    let j = layer.inputs[0];
                    let geo = self.conv_geometry(i, *stride);
                    let g = layers::conv_backward(
                        &geo,
                        p.weight.data(),
                        &acts.outputs[j],
                        &acts.outputs[i],
                        &gy,
                        batch,
                        *activation,
                        upstream_needs[0],
                    );
                    param_grads[i] = Some(LayerParams {
                        weight: Tensor::new(p.weight.shape().to_vec(), g.kernels)?,
                        bias: Some(Tensor::new(vec![geo.filters], g.biases)?),
                    });
                    if let Some(gx) = g.input {
                        accumulate(&mut grads[j], gx);
                    }
                }
                LayerKind::Dropout { p } => {
                    if upstream_needs[0] {
                        let gx: Vec<T> = match (&acts.masks[i], acts.mode) {
                            (Some(mask), _) => {
                                gy.iter().zip(mask.data()).map(|(&g, &m)| g * m).collect()
                            }
                            (None, Mode::Eval) => {
                                let keep = T::from_f64(1.0 - p);
                                gy.iter().map(|&g| g * keep).collect()
                            }
                            (None, Mode::Train) => gy,
                        };
                        accumulate(&mut grads[layer.inputs[0]], gx);
                    }
                }
                LayerKind::Concat => {
                    let total = width(&self.shapes[i]);
                    let mut offset = 0;
                    for (k, &j) in layer.inputs.iter().enumerate() {
                        let w = width(&self.shapes[j]);
                        if upstream_needs[k] {
                            let mut gx = Vec::with_capacity(batch * w);
                            for b in 0..batch {
                                gx.extend_from_slice(
                                    &gy[b * total + offset..b * total + offset + w],
                                );
                            }
                            accumulate(&mut grads[j], gx);
                        }
                        offset += w;
                    }
                }
            }
        }

        let mut tensors = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            if let Some(p) = p {
                match param_grads[i].take() {
                    Some(g) => {
                        tensors.push(g.weight);
                        tensors.extend(g.bias);
                    }
                    None => {
                        tensors.push(Tensor::zeros(p.weight.shape()));
                        if let Some(b) = &p.bias {
                            tensors.push(Tensor::zeros(b.shape()));
                        }
                    }
                }
            }
        }
        Ok(Gradients { tensors })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a = *a + v),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn mlp(inputs: usize, hidden: usize, out: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::input("ram", InputStream::Ram, &[inputs]),
            LayerSpec::dense("hidden", 0, hidden, Activation::Rectify),
            LayerSpec::dense("output", 1, out, Activation::None),
        ]
    }

    #[test]
    fn empty_specs_have_no_output_layer() {
        let err = make_network::<f64, _>(vec![], &mut rng()).unwrap_err();
        assert_eq!(err.to_string(), "no output layer");
    }

    #[test]
    fn input_only_network_has_no_params() {
        let net: Network<f64> = make_network(
            vec![LayerSpec::input("ram", InputStream::Ram, &[128])],
            &mut rng(),
        )
        .unwrap();
        assert_eq!(net.param_count(), 0);
        assert_eq!(net.output_dim(), 128);
    }

    #[test]
    fn rectified_output_layer_rejected() {
        let mut specs = mlp(4, 3, 2);
        specs[2] = LayerSpec::dense("output", 1, 2, Activation::Rectify);
        assert!(matches!(
            make_network::<f64, _>(specs, &mut rng()),
            Err(Error::Layer { layer: 2, .. })
        ));
    }

    #[test]
    fn dangling_layer_named_in_error() {
        let mut specs = mlp(4, 3, 2);
        specs.insert(2, LayerSpec::dense("unused", 1, 5, Activation::Rectify));
        specs[3].inputs = vec![1];
        assert!(matches!(
            make_network::<f64, _>(specs, &mut rng()),
            Err(Error::Layer { layer: 2, .. })
        ));
    }

    #[test]
    fn concat_rejects_rank3_input() {
        let specs = vec![
            LayerSpec::input("screen", InputStream::Screen, &[1, 4, 4]),
            LayerSpec::input("ram", InputStream::Ram, &[3]),
            LayerSpec::concat("concat", &[0, 1]),
            LayerSpec::dense("output", 2, 2, Activation::None),
        ];
        assert!(matches!(
            make_network::<f64, _>(specs, &mut rng()),
            Err(Error::Layer { layer: 2, .. })
        ));
    }

    #[test]
    fn conv_that_does_not_fit_names_layer() {
        let specs = vec![
            LayerSpec::input("screen", InputStream::Screen, &[1, 3, 3]),
            LayerSpec::conv2d("conv1", 0, 2, 5, 1, Activation::Rectify),
            LayerSpec::dense("output", 1, 2, Activation::None),
        ];
        let err = make_network::<f64, _>(specs, &mut rng()).unwrap_err();
        assert!(matches!(err, Error::Layer { layer: 1, .. }), "{err}");
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let net: Network<f64> = make_network(mlp(16, 8, 3), &mut rng()).unwrap();
        let p = net.layer_params(1).unwrap();
        assert!(p.weight.data().iter().all(|w| w.abs() <= 0.25));
        assert!(p.bias.as_ref().unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_params_give_zero_output() {
        let mut net: Network<f64> = make_network(mlp(128, 128, 4), &mut rng()).unwrap();
        for p in net.params_mut() {
            p.fill(0.0);
        }
        let q = net
            .predict(&NetInputs::ram(Tensor::zeros(&[1, 128])))
            .unwrap();
        assert_eq!(q.data(), &[0.0; 4]);
    }

    #[test]
    fn missing_stream_is_reported() {
        let net: Network<f64> = make_network(mlp(4, 3, 2), &mut rng()).unwrap();
        let inputs = NetInputs {
            ram: None,
            screen: Some(Tensor::zeros(&[1, 1, 2, 2])),
        };
        assert!(matches!(
            net.predict(&inputs),
            Err(Error::MissingInput(InputStream::Ram))
        ));
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net: Network<f64> = make_network(mlp(4, 3, 2), &mut rng()).unwrap();
        let x = Tensor::from_f64_slice(&[1, 4], &[0.1, 0.5, 0.9, 0.3]).unwrap();
        let acts = net
            .forward(&NetInputs::ram(x), Mode::Eval, &mut rng())
            .unwrap();
        let g = net.backward(&acts, &Tensor::zeros(&[1, 2])).unwrap();
        assert!(g.is_zero());
        assert_eq!(g.tensors.len(), 4);
    }

    #[test]
    fn single_dense_layer_gradient_is_input() {
        let specs = vec![
            LayerSpec::input("ram", InputStream::Ram, &[3]),
            LayerSpec::dense("output", 0, 2, Activation::None),
        ];
        let net: Network<f64> = make_network(specs, &mut rng()).unwrap();
        let x = Tensor::from_f64_slice(&[1, 3], &[0.2, -1.0, 3.0]).unwrap();
        let acts = net
            .forward(&NetInputs::ram(x), Mode::Eval, &mut rng())
            .unwrap();
        let g = net
            .backward(
                &acts,
                &Tensor::from_f64_slice(&[1, 2], &[1.0, 0.0]).unwrap(),
            )
            .unwrap();
        assert_eq!(g.tensors[0].data(), &[0.2, -1.0, 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.tensors[1].data(), &[1.0, 0.0]);
    }

    #[test]
    fn stale_activations_rejected() {
        let small: Network<f64> = make_network(mlp(4, 3, 2), &mut rng()).unwrap();
        let big: Network<f64> = make_network(mlp(4, 5, 2), &mut rng()).unwrap();
        let x = Tensor::zeros(&[1, 4]);
        let acts = small
            .forward(&NetInputs::ram(x), Mode::Eval, &mut rng())
            .unwrap();
        assert!(matches!(
            big.backward(&acts, &Tensor::zeros(&[1, 2])),
            Err(Error::StaleActivations(_))
        ));
    }

    #[test]
    fn set_params_checks_shapes() {
        let mut net: Network<f64> = make_network(mlp(4, 3, 2), &mut rng()).unwrap();
        let mut values: Vec<Tensor<f64>> = net.params().into_iter().cloned().collect();
        values[2] = Tensor::zeros(&[3, 3]);
        let err = net.set_params(values).unwrap_err();
        assert!(err.to_string().contains("output"), "{err}");
    }

    #[test]
    fn train_forward_deterministic_given_seed() {
        let specs = vec![
            LayerSpec::input("ram", InputStream::Ram, &[8]),
            LayerSpec::dense("hidden", 0, 16, Activation::Rectify),
            LayerSpec::dropout("drop", 1, 0.5),
            LayerSpec::dense("output", 2, 3, Activation::None),
        ];
        let net: Network<f32> = make_network(specs, &mut rng()).unwrap();
        let x = Tensor::filled(&[2, 8], 0.5f32);
        let a = net
            .forward(
                &NetInputs::ram(x.clone()),
                Mode::Train,
                &mut ChaCha8Rng::seed_from_u64(5),
            )
            .unwrap();
        let b = net
            .forward(
                &NetInputs::ram(x),
                Mode::Train,
                &mut ChaCha8Rng::seed_from_u64(5),
            )
            .unwrap();
        for i in 0..net.layers().len() {
            assert_eq!(a.layer_output(i), b.layer_output(i));
        }
    }
}
