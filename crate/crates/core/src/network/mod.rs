//! Layer graphs, the three gait architectures, initialization and the forward pass.

mod forward;
mod io;

pub use forward::{Mode, Trace};
pub use io::{load_model, load_model_expecting, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{pool_output_shape, ConvGeometry, Padding, PoolMode, Real, Tensor};

/// What a layer computes, with its kind-specific parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Input,
    Conv {
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: Padding,
    },
    Pool {
        mode: PoolMode,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Softmax,
    Concat,
    Flatten,
    Dropout {
        rate: f64,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::Pool { .. } => "pool",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Softmax => "softmax",
            LayerKind::Concat => "concat",
            LayerKind::Flatten => "flatten",
            LayerKind::Dropout { .. } => "dropout",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Dense { .. })
    }

    /// Weight and bias shapes of a parameterized layer.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerKind::Conv {
                kernel_h,
                kernel_w,
                in_channels,
                out_channels,
                ..
            } => Some((
                vec![kernel_h, kernel_w, in_channels, out_channels],
                vec![out_channels],
            )),
            LayerKind::Dense { inputs, outputs } => Some((vec![inputs, outputs], vec![outputs])),
            _ => None,
        }
    }

    /// Glorot fan-in and fan-out.
    fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerKind::Conv {
                kernel_h,
                kernel_w,
                in_channels,
                out_channels,
                ..
            } => {
                let area = kernel_h * kernel_w;
                Some((area * in_channels, area * out_channels))
            }
            LayerKind::Dense { inputs, outputs } => Some((inputs, outputs)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    /// Predecessor layer ids; more than one only for concat.
    pub inputs: Vec<usize>,
    pub output_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Single,
    Parallel,
    Quadruplet,
    Custom,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::Single,
        Architecture::Parallel,
        Architecture::Quadruplet,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Architecture::Single => "single",
            Architecture::Parallel => "parallel",
            Architecture::Quadruplet => "quadruplet",
            Architecture::Custom => "custom",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Architecture::Single),
            "parallel" => Ok(Architecture::Parallel),
            "quadruplet" => Ok(Architecture::Quadruplet),
            "custom" => Ok(Architecture::Custom),
            other => Err(Error::invalid(format!(
                "unknown architecture {other:?} (expected single, parallel or quadruplet)"
            ))),
        }
    }
}

/// Hyperparameters the architectures leave open. Every value can be overridden.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub single_channels: Vec<usize>,
    pub single_kernel: (usize, usize),
    /// Kernel shapes of the two streams in each parallel stage.
    pub parallel_kernels: [(usize, usize); 2],
    /// Channels per stream in stage one and stage two.
    pub parallel_channels: [usize; 2],
    /// Channels per conv block in each quadruplet stream.
    pub quadruplet_channels: Vec<usize>,
    pub temporal_kernel: (usize, usize),
    pub spatial_kernel: (usize, usize),
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            single_channels: vec![16, 32, 64, 64],
            single_kernel: (3, 3),
            parallel_kernels: [(3, 3), (5, 5)],
            parallel_channels: [16, 32],
            quadruplet_channels: vec![8, 16, 16],
            temporal_kernel: (5, 1),
            spatial_kernel: (1, 5),
            hidden: 128,
            dropout: 0.5,
        }
    }
}

fn infer_shape(kind: &LayerKind, inputs: &[&[usize]]) -> Result<Vec<usize>> {
    let single = || -> Result<&[usize]> {
        match inputs {
            [s] => Ok(s),
            _ => Err(Error::invalid(format!(
                "{} layer takes exactly one input, got {}",
                kind.name(),
                inputs.len()
            ))),
        }
    };
    match kind {
        LayerKind::Input => Err(Error::invalid("input layer may only appear first")),
        LayerKind::Conv {
            kernel_h,
            kernel_w,
            in_channels,
            out_channels,
            stride,
            padding,
        } => {
            if *out_channels == 0 {
                return Err(Error::invalid("conv layer needs at least one output channel"));
            }
            let geo = ConvGeometry::new(
                single()?,
                &[*kernel_h, *kernel_w, *in_channels, *out_channels],
                *stride,
                *padding,
            )?;
            Ok(geo.output_shape().to_vec())
        }
        LayerKind::Pool { .. } => match *single()? {
            [h, w, c] => Ok(pool_output_shape(h, w, c).to_vec()),
            ref s => Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "pooling needs [H, W, C]".into(),
            }),
        },
        LayerKind::Dense { inputs: n_in, outputs } => {
            let s = single()?;
            if *outputs == 0 {
                return Err(Error::invalid("dense layer needs at least one output"));
            }
            if s != [*n_in] {
                return Err(Error::ShapeMismatch {
                    op: "dense",
                    left: s.to_vec(),
                    right: vec![*n_in, *outputs],
                });
            }
            Ok(vec![*outputs])
        }
        LayerKind::Relu | LayerKind::Softmax => Ok(single()?.to_vec()),
        LayerKind::Dropout { rate } => {
            if !(0.0..1.0).contains(rate) {
                return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
            }
            Ok(single()?.to_vec())
        }
        LayerKind::Flatten => Ok(vec![single()?.iter().product()]),
        LayerKind::Concat => {
            let first = inputs
                .first()
                .ok_or_else(|| Error::invalid("concat needs at least one input"))?;
            let rank = first.len();
            let mut out = first.to_vec();
            out[rank - 1] = 0;
            for s in inputs {
                if s.len() != rank || s[..rank - 1] != first[..rank - 1] {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        left: first.to_vec(),
                        right: s.to_vec(),
                    });
                }
                out[rank - 1] += s[rank - 1];
            }
            Ok(out)
        }
    }
}

/// Incremental construction of a layer graph with shape inference.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    layers: Vec<Layer>,
}

impl GraphBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        GraphBuilder {
            layers: vec![Layer {
                kind: LayerKind::Input,
                inputs: vec![],
                output_shape: input_shape.to_vec(),
            }],
        }
    }

    pub fn input(&self) -> usize {
        0
    }

    pub fn shape(&self, id: usize) -> &[usize] {
        &self.layers[id].output_shape
    }

    pub fn add(&mut self, kind: LayerKind, inputs: &[usize]) -> Result<usize> {
        let id = self.layers.len();
        let mut shapes = Vec::with_capacity(inputs.len());
        for &i in inputs {
            let layer = self
                .layers
                .get(i)
                .ok_or_else(|| Error::invalid(format!("layer {id} refers to unknown layer {i}")))?;
            shapes.push(layer.output_shape.as_slice());
        }
        let output_shape = infer_shape(&kind, &shapes)?;
        self.layers.push(Layer {
            kind,
            inputs: inputs.to_vec(),
            output_shape,
        });
        Ok(id)
    }

    pub fn conv(
        &mut self,
        from: usize,
        kernel: (usize, usize),
        out_channels: usize,
        padding: Padding,
    ) -> Result<usize> {
        let in_channels = *self.layers[from]
            .output_shape
            .last()
            .expect("shapes are non-empty");
        self.add(
            LayerKind::Conv {
                kernel_h: kernel.0,
                kernel_w: kernel.1,
                in_channels,
                out_channels,
                stride: 1,
                padding,
            },
            &[from],
        )
    }

    pub fn relu(&mut self, from: usize) -> Result<usize> {
        self.add(LayerKind::Relu, &[from])
    }

    pub fn pool(&mut self, from: usize, mode: PoolMode) -> Result<usize> {
        self.add(LayerKind::Pool { mode }, &[from])
    }

    pub fn concat(&mut self, from: &[usize]) -> Result<usize> {
        self.add(LayerKind::Concat, from)
    }

    pub fn flatten(&mut self, from: usize) -> Result<usize> {
        self.add(LayerKind::Flatten, &[from])
    }

    pub fn dense(&mut self, from: usize, outputs: usize) -> Result<usize> {
        let inputs = self.layers[from].output_shape.iter().product();
        self.add(LayerKind::Dense { inputs, outputs }, &[from])
    }

    pub fn dropout(&mut self, from: usize, rate: f64) -> Result<usize> {
        self.add(LayerKind::Dropout { rate }, &[from])
    }

    pub fn softmax(&mut self, from: usize) -> Result<usize> {
        self.add(LayerKind::Softmax, &[from])
    }

    /// Conv → relu → pool.
    pub fn conv_block(
        &mut self,
        from: usize,
        kernel: (usize, usize),
        channels: usize,
        mode: PoolMode,
    ) -> Result<usize> {
        let c = self.conv(from, kernel, channels, Padding::Same)?;
        let r = self.relu(c)?;
        self.pool(r, mode)
    }

    /// Flatten → dense → relu → dropout → dense → softmax.
    pub fn classifier_head(
        &mut self,
        from: usize,
        hidden: usize,
        dropout: f64,
        n_classes: usize,
    ) -> Result<usize> {
        let f = self.flatten(from)?;
        let d = self.dense(f, hidden)?;
        let r = self.relu(d)?;
        let drop = self.dropout(r, dropout)?;
        let logits = self.dense(drop, n_classes)?;
        self.softmax(logits)
    }

    /// Finishes the graph with zero-valued parameters.
    pub fn finish<T: Real>(self, arch: Architecture, seed: u64) -> Result<Network<T>> {
        Network::from_layers(arch, seed, self.layers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    arch: Architecture,
    seed: u64,
    layers: Vec<Layer>,
    params: Vec<Option<Params<T>>>,
}

impl<T: Real> Network<T> {
    /// Validates a topologically ordered layer list and allocates zero parameters.
    /// Output shapes stored in `layers` are recomputed.
    pub fn from_layers(arch: Architecture, seed: u64, layers: Vec<Layer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::invalid("empty layer list"));
        };
        if first.kind != LayerKind::Input || !first.inputs.is_empty() {
            return Err(Error::invalid("layer 0 must be the input layer"));
        }
        if first.output_shape.len() != 3 || first.output_shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape: first.output_shape.clone(),
                reason: "network input must be [H, W, C]".into(),
            });
        }
        let mut builder = GraphBuilder::new(&first.output_shape);
        for (id, layer) in layers.iter().enumerate().skip(1) {
            if layer.inputs.is_empty() || layer.inputs.iter().any(|&i| i >= id) {
                return Err(Error::invalid(format!(
                    "layer {id} must depend only on earlier layers"
                )));
            }
            if layer.kind == LayerKind::Concat && layer.inputs.len() < 2 {
                return Err(Error::invalid(format!("concat layer {id} needs two inputs")));
            }
            builder.add(layer.kind.clone(), &layer.inputs)?;
        }
        let layers = builder.layers;
        let softmax_count = layers.iter().filter(|l| l.kind == LayerKind::Softmax).count();
        let last = layers.last().expect("non-empty");
        if softmax_count != 1 || last.kind != LayerKind::Softmax {
            return Err(Error::invalid("network must end in its only softmax layer"));
        }
        if last.output_shape.len() != 1 || last.output_shape[0] < 2 {
            return Err(Error::invalid("softmax output must be a vector of at least 2 classes"));
        }
        let mut consumed = vec![false; layers.len()];
        for l in &layers {
            for &i in &l.inputs {
                consumed[i] = true;
            }
        }
        if let Some(dangling) = (0..layers.len() - 1).find(|&i| !consumed[i]) {
            return Err(Error::invalid(format!("layer {dangling} has no consumer")));
        }
        let params = layers
            .iter()
            .map(|l| {
                l.kind.param_shapes().map(|(w, b)| Params {
                    weight: Tensor::zeros(&w).expect("validated shape"),
                    bias: Tensor::zeros(&b).expect("validated shape"),
                })
            })
            .collect();
        Ok(Network {
            arch,
            seed,
            layers,
            params,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.layers[0].output_shape
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().expect("non-empty").output_shape[0]
    }

    /// Id of the layer producing the pre-softmax logits.
    pub fn logits_layer(&self) -> usize {
        self.layers.last().expect("non-empty").inputs[0]
    }

    pub fn params(&self, layer: usize) -> Option<&Params<T>> {
        self.params[layer].as_ref()
    }

    pub fn params_mut(&mut self, layer: usize) -> Option<&mut Params<T>> {
        self.params[layer].as_mut()
    }

    pub fn parameterized_layers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.layers.len()).filter(|&i| self.params[i].is_some())
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Layer census as the architectures are described: conv, pool and dense layers.
    pub fn stacked_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| {
                matches!(
                    l.kind,
                    LayerKind::Conv { .. } | LayerKind::Pool { .. } | LayerKind::Dense { .. }
                )
            })
            .count()
    }

    /// Same graph and values at another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            arch: self.arch,
            seed: self.seed,
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| Params {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
        }
    }

    /// Glorot-uniform weights in ±√(6/(fan_in + fan_out)), zero biases.
    pub fn init_parameters(&mut self, seed: u64) {
        let mut rng = rng::rng(seed);
        for (layer, params) in self.layers.iter().zip(self.params.iter_mut()) {
            let (Some(p), Some((fan_in, fan_out))) = (params.as_mut(), layer.kind.fans()) else {
                continue;
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in p.weight.data_mut() {
                *w = T::lit(rng.random_range(-limit..limit));
            }
            p.bias.data_mut().fill(T::zero());
        }
        self.seed = seed;
    }

    pub fn ensure_classes(&self, expected: usize) -> Result<()> {
        if self.n_classes() != expected {
            return Err(Error::ClassCountMismatch {
                expected,
                found: self.n_classes(),
            });
        }
        Ok(())
    }
}

/// Number of pooling stages along the deepest path.
fn pool_depth(arch: Architecture, cfg: &ArchConfig) -> usize {
    match arch {
        Architecture::Single => cfg.single_channels.len(),
        Architecture::Parallel => 4,
        Architecture::Quadruplet => cfg.quadruplet_channels.len(),
        Architecture::Custom => 0,
    }
}

/// Smallest spatial extent for which every pooling stage still sees at least two cells.
pub fn minimum_extent(arch: Architecture, cfg: &ArchConfig) -> usize {
    match pool_depth(arch, cfg) {
        0 => 1,
        d => (1 << (d - 1)) + 1,
    }
}

/// Builds one of the three architectures with zero parameters; call
/// [`Network::init_parameters`] before training.
pub fn build_architecture<T: Real>(
    arch: Architecture,
    input_shape: &[usize],
    n_classes: usize,
    cfg: &ArchConfig,
) -> Result<Network<T>> {
    let &[h, w, c] = input_shape else {
        return Err(Error::InvalidShape {
            shape: input_shape.to_vec(),
            reason: "network input must be [H, W, C]".into(),
        });
    };
    if c == 0 {
        return Err(Error::InvalidShape {
            shape: input_shape.to_vec(),
            reason: "extents must be positive".into(),
        });
    }
    if n_classes < 2 {
        return Err(Error::invalid("at least two classes are required"));
    }
    let min = minimum_extent(arch, cfg);
    if h < min || w < min {
        return Err(Error::InputTooSmall {
            arch: arch.to_string(),
            input: input_shape.to_vec(),
            min_h: min,
            min_w: min,
        });
    }
    let mut g = GraphBuilder::new(input_shape);
    let features = match arch {
        Architecture::Single => {
            let mut x = g.input();
            for &ch in &cfg.single_channels {
                x = g.conv_block(x, cfg.single_kernel, ch, PoolMode::Avg)?;
            }
            x
        }
        Architecture::Parallel => {
            let mut x = g.input();
            for &ch in &cfg.parallel_channels {
                let mut streams = Vec::with_capacity(2);
                for &kernel in &cfg.parallel_kernels {
                    let a = g.conv_block(x, kernel, ch, PoolMode::Avg)?;
                    streams.push(g.conv_block(a, kernel, ch, PoolMode::Avg)?);
                }
                x = g.concat(&streams)?;
            }
            x
        }
        Architecture::Quadruplet => {
            let streams = [
                (cfg.temporal_kernel, PoolMode::Max),
                (cfg.temporal_kernel, PoolMode::Max),
                (cfg.spatial_kernel, PoolMode::Avg),
                (cfg.spatial_kernel, PoolMode::Avg),
            ];
            let mut ends = Vec::with_capacity(4);
            for (kernel, mode) in streams {
                let mut x = g.input();
                for &ch in &cfg.quadruplet_channels {
                    x = g.conv_block(x, kernel, ch, mode)?;
                }
                ends.push(x);
            }
            g.concat(&ends)?
        }
        Architecture::Custom => {
            return Err(Error::invalid("custom networks are assembled with GraphBuilder"))
        }
    };
    g.classifier_head(features, cfg.hidden, cfg.dropout, n_classes)?;
    g.finish(arch, 0)
}
