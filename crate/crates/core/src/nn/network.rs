use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::init::glorot_uniform;
use super::layers::{self, conv_output_len};
use super::loss::softmax;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::imaging::{Canvas, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    LeakyRelu {
        negative_slope: f32,
    },
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>, usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
                in_channels * kernel * kernel,
                out_channels * kernel * kernel,
            )),
            LayerSpec::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs], inputs, outputs)),
            _ => None,
        }
    }
}

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match *self {
            ActShape::Image { c, h, w } => c * h * w,
            ActShape::Flat(f) => f,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn batched(&self, n: usize) -> Vec<usize> {
        match *self {
            ActShape::Image { c, h, w } => vec![n, c, h, w],
            ActShape::Flat(f) => vec![n, f],
        }
    }
}

fn next_shape(spec: &LayerSpec, input: ActShape) -> Result<ActShape> {
    let bad = || Error::Shape(format!("layer {spec:?} cannot take input {input:?}"));
    match (*spec, input) {
        (
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            },
            ActShape::Image { c, h, w },
        ) if c == in_channels => Ok(ActShape::Image {
            c: out_channels,
            h: conv_output_len(h, kernel, stride, padding).ok_or_else(bad)?,
            w: conv_output_len(w, kernel, stride, padding).ok_or_else(bad)?,
        }),
        (LayerSpec::MaxPool2d { size, stride }, ActShape::Image { c, h, w }) => Ok(ActShape::Image {
            c,
            h: conv_output_len(h, size, stride, 0).ok_or_else(bad)?,
            w: conv_output_len(w, size, stride, 0).ok_or_else(bad)?,
        }),
        (LayerSpec::Dense { inputs, outputs }, ActShape::Flat(f)) if f == inputs => Ok(ActShape::Flat(outputs)),
        (LayerSpec::LeakyRelu { .. } | LayerSpec::Softmax, s) => Ok(s),
        (LayerSpec::Flatten, s) => Ok(ActShape::Flat(s.len())),
        _ => Err(bad()),
    }
}

/// Canonical layer names: `conv1`, `conv2`, ... and `fc1`, `fc2`, ... for
/// parameterized layers, the kind name otherwise.
pub fn layer_names(specs: &[LayerSpec]) -> Vec<String> {
    let (mut conv, mut fc) = (0, 0);
    specs
        .iter()
        .map(|s| match s {
            LayerSpec::Conv2d { .. } => {
                conv += 1;
                format!("conv{conv}")
            }
            LayerSpec::Dense { .. } => {
                fc += 1;
                format!("fc{fc}")
            }
            LayerSpec::MaxPool2d { .. } => "pool".into(),
            LayerSpec::LeakyRelu { .. } => "leaky_relu".into(),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Softmax => "softmax".into(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub name: String,
    pub params: Option<Params>,
    pub trainable: bool,
}

/// Parameter gradients aligned with the network's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Option<Params>>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                        *x += y;
                    }
                    for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                        *x += y;
                    }
                }
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for p in self.layers.iter_mut().flatten() {
            p.weight.data_mut().iter_mut().for_each(|v| *v *= factor);
            p.bias.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

enum Cache {
    Conv(Tensor),
    Pool(Vec<usize>, Vec<usize>),
    Dense(Tensor),
    Leaky(Tensor),
    Flatten(Vec<usize>),
}

/// Anything that maps a stimulus image to class probabilities.
pub trait Classifier: Sync {
    fn canvas(&self) -> Canvas;
    fn predict(&self, image: &ImageBuffer) -> Result<Vec<f32>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: ActShape,
    layers: Vec<Layer>,
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases drawn from
    /// one seeded stream, in layer order.
    pub fn new(input: [usize; 3], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .zip(layer_names(specs))
            .map(|(spec, name)| Layer {
                spec: *spec,
                name,
                params: spec.param_shapes().map(|(ws, bs, fan_in, fan_out)| Params {
                    weight: glorot_uniform(&ws, fan_in, fan_out, &mut rng),
                    bias: Tensor::zeros(&bs),
                }),
                trainable: true,
            })
            .collect();
        Self::from_layers(input, layers)
    }

    /// Assembles a network from explicit layers, checking that shapes chain
    /// and that parameter tensors match their specs.
    pub fn from_layers(input: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let input = ActShape::Image {
            c: input[0],
            h: input[1],
            w: input[2],
        };
        let mut shape = input;
        for (i, layer) in layers.iter().enumerate() {
            shape = next_shape(&layer.spec, shape)?;
            if matches!(layer.spec, LayerSpec::Softmax) && i + 1 != layers.len() {
                return Err(Error::Shape("softmax may only be the final layer".into()));
            }
            match (layer.spec.param_shapes(), &layer.params) {
                (None, None) => {}
                (Some((ws, bs, _, _)), Some(p)) if p.weight.shape() == ws && p.bias.shape() == bs => {}
                _ => {
                    return Err(Error::Shape(format!(
                        "parameters of layer {i} ({}) do not match its spec",
                        layer.name
                    )))
                }
            }
        }
        Ok(Self { input, layers })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self.input {
            ActShape::Image { c, h, w } => [c, h, w],
            ActShape::Flat(_) => unreachable!("network input is always an image"),
        }
    }

    pub fn output_len(&self) -> usize {
        self.layers
            .iter()
            .try_fold(self.input, |s, l| next_shape(&l.spec, s))
            .map(|s| s.len())
            .unwrap_or(0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Indices of layers that own parameters, bottom to top.
    pub fn param_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].spec.has_params())
            .collect()
    }

    /// Opens the top `k` parameterized layers for training and freezes the rest.
    pub fn set_trainable_top(&mut self, k: usize) {
        let param_layers = self.param_layers();
        let cut = param_layers.len().saturating_sub(k);
        for (rank, &i) in param_layers.iter().enumerate() {
            self.layers[i].trainable = rank >= cut;
        }
    }

    pub fn set_all_trainable(&mut self) {
        self.layers.iter_mut().for_each(|l| l.trainable = true);
    }

    pub fn trainable_mask(&self) -> Vec<bool> {
        self.layers.iter().map(|l| l.trainable).collect()
    }

    fn check_batch(&self, x: &Tensor) -> Result<usize> {
        let n = x.shape().first().copied().unwrap_or(0);
        if x.shape() != self.input.batched(n).as_slice() {
            return Err(Error::Shape(format!(
                "input {:?} does not match network input {:?}",
                x.shape(),
                self.input
            )));
        }
        Ok(n)
    }

    fn run(&self, x: &Tensor, mut caches: Option<&mut Vec<Cache>>) -> Result<Tensor> {
        self.check_batch(x)?;
        let mut act = x.clone();
        for layer in &self.layers {
            act = match (layer.spec, &layer.params) {
                (LayerSpec::Conv2d { stride, padding, .. }, Some(p)) => {
                    let y = layers::conv2d_forward(&act, &p.weight, &p.bias, stride, padding)?;
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Conv(act));
                    }
                    y
                }
                (LayerSpec::Dense { .. }, Some(p)) => {
                    let y = layers::dense_forward(&act, &p.weight, &p.bias)?;
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Dense(act));
                    }
                    y
                }
                (LayerSpec::MaxPool2d { size, stride }, _) => {
                    let (y, arg) = layers::maxpool_forward(&act, size, stride)?;
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Pool(act.shape().to_vec(), arg));
                    }
                    y
                }
                (LayerSpec::LeakyRelu { negative_slope }, _) => {
                    let y = layers::leaky_relu_forward(&act, negative_slope);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Leaky(act));
                    }
                    y
                }
                (LayerSpec::Flatten, _) => {
                    let shape = act.shape().to_vec();
                    let n = shape[0];
                    let f = act.len() / n.max(1);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(Cache::Flatten(shape));
                    }
                    act.reshape(&[n, f])?
                }
                // Training works on logits; the final softmax is applied in `forward`.
                (LayerSpec::Softmax, _) => break,
                _ => return Err(Error::Shape(format!("layer {} is missing parameters", layer.name))),
            };
        }
        Ok(act)
    }

    /// Pre-softmax outputs for a batch.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, None)
    }

    /// Class probabilities for a batch (applies the final softmax if present).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = self.run(x, None)?;
        if matches!(self.layers.last().map(|l| l.spec), Some(LayerSpec::Softmax)) {
            let k = out.shape()[1];
            for row in out.data_mut().chunks_mut(k) {
                let p = softmax(row);
                row.copy_from_slice(&p);
            }
        }
        Ok(out)
    }

    /// Runs the batch forward, then back-propagates `loss_grad(logits)` and
    /// returns parameter gradients of trainable layers together with the
    /// logits. Back-propagation stops below the lowest trainable layer.
    pub fn forward_backward<F>(&self, x: &Tensor, loss_grad: F) -> Result<(Tensor, Gradients)>
    where
        F: FnOnce(&Tensor) -> Result<Tensor>,
    {
        let mut caches = Vec::with_capacity(self.layers.len());
        let logits = self.run(x, Some(&mut caches))?;
        let upstream = loss_grad(&logits)?;
        let grads = self.backward(caches, upstream)?;
        Ok((logits, grads))
    }

    fn backward(&self, caches: Vec<Cache>, mut upstream: Tensor) -> Result<Gradients> {
        let mut grads: Vec<Option<Params>> = vec![None; self.layers.len()];
        let Some(lowest) = self
            .layers
            .iter()
            .position(|l| l.trainable && l.spec.has_params())
        else {
            return Ok(Gradients { layers: grads });
        };
        for (i, cache) in caches.into_iter().enumerate().rev() {
            if i < lowest {
                break;
            }
            let layer = &self.layers[i];
            let want_input = i > lowest;
            upstream = match (cache, layer.spec, &layer.params) {
                (Cache::Conv(input), LayerSpec::Conv2d { stride, padding, .. }, Some(p)) => {
                    let g = layers::conv2d_backward(&input, &p.weight, &p.bias, stride, padding, &upstream, want_input)?;
                    if layer.trainable {
                        grads[i] = Some(Params {
                            weight: g.weight,
                            bias: g.bias,
                        });
                    }
                    match g.input {
                        Some(t) => t,
                        None => break,
                    }
                }
                (Cache::Dense(input), LayerSpec::Dense { .. }, Some(p)) => {
                    let g = layers::dense_backward(&input, &p.weight, &upstream, want_input)?;
                    if layer.trainable {
                        grads[i] = Some(Params {
                            weight: g.weight,
                            bias: g.bias,
                        });
                    }
                    match g.input {
                        Some(t) => t,
                        None => break,
                    }
                }
                (Cache::Pool(shape, arg), _, _) => layers::maxpool_backward(&shape, &arg, &upstream)?,
                (Cache::Leaky(input), LayerSpec::LeakyRelu { negative_slope }, _) => {
                    layers::leaky_relu_backward(&input, &upstream, negative_slope)?
                }
                (Cache::Flatten(shape), _, _) => upstream.reshape(&shape)?,
                _ => return Err(Error::Shape(format!("missing forward cache for layer {i}"))),
            };
        }
        Ok(Gradients { layers: grads })
    }
}

/// Maps 8-bit samples to `[-1, 1]` (mid-grey near zero) in channel-major order.
pub fn image_to_input(image: &ImageBuffer) -> Vec<f32> {
    let (w, h) = (image.width(), image.height());
    let plane = w * h;
    let mut out = vec![0f32; 3 * plane];
    for (i, px) in image.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = (px[c] as f32 - 127.5) / 127.5;
        }
    }
    out
}

impl Classifier for Network {
    fn canvas(&self) -> Canvas {
        let [_, h, w] = self.input_shape();
        Canvas {
            width: w as u32,
            height: h as u32,
        }
    }

    fn predict(&self, image: &ImageBuffer) -> Result<Vec<f32>> {
        let [c, h, w] = self.input_shape();
        if c != 3 || image.width() != w || image.height() != h {
            return Err(Error::Shape(format!(
                "image {}x{} does not match network input {w}x{h}",
                image.width(),
                image.height()
            )));
        }
        let x = Tensor::from_vec(&[1, c, h, w], image_to_input(image))?;
        let out = self.forward(&x)?;
        out.ensure_finite("prediction")?;
        Ok(out.into_data())
    }
}

/// Layer plan of the reference network.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimpleNetPlan {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    /// Zero-based conv blocks followed by 2×2 max pooling.
    pub pool_after: Vec<usize>,
    pub dense_units: Vec<usize>,
    pub negative_slope: f32,
}

impl Default for SimpleNetPlan {
    fn default() -> Self {
        Self {
            conv_channels: vec![32, 64, 96, 96, 64],
            kernel: 3,
            pool_after: vec![0, 1, 4],
            dense_units: vec![512, 256],
            negative_slope: 0.01,
        }
    }
}

pub const MIN_SIMPLENET_CANVAS: u32 = 32;

pub fn simplenet_specs(canvas: Canvas, plan: &SimpleNetPlan, n_classes: usize) -> Result<Vec<LayerSpec>> {
    if canvas.width < MIN_SIMPLENET_CANVAS || canvas.height < MIN_SIMPLENET_CANVAS {
        return Err(Error::InvalidArgument(format!(
            "canvas {}x{} is smaller than {MIN_SIMPLENET_CANVAS}x{MIN_SIMPLENET_CANVAS}",
            canvas.width, canvas.height
        )));
    }
    if plan.kernel % 2 == 0 || plan.conv_channels.is_empty() || n_classes == 0 {
        return Err(Error::InvalidArgument(format!("unusable network plan {plan:?}")));
    }
    let slope = plan.negative_slope;
    let mut specs = Vec::new();
    let mut c = 3;
    let (mut h, mut w) = (canvas.height as usize, canvas.width as usize);
    for (i, &out) in plan.conv_channels.iter().enumerate() {
        specs.push(LayerSpec::Conv2d {
            in_channels: c,
            out_channels: out,
            kernel: plan.kernel,
            stride: 1,
            padding: plan.kernel / 2,
        });
        specs.push(LayerSpec::LeakyRelu { negative_slope: slope });
        c = out;
        if plan.pool_after.contains(&i) {
            if h < 2 || w < 2 {
                return Err(Error::InvalidArgument("canvas too small for the pooling chain".into()));
            }
            specs.push(LayerSpec::MaxPool2d { size: 2, stride: 2 });
            h /= 2;
            w /= 2;
        }
    }
    specs.push(LayerSpec::Flatten);
    let mut f = c * h * w;
    for &units in &plan.dense_units {
        specs.push(LayerSpec::Dense {
            inputs: f,
            outputs: units,
        });
        specs.push(LayerSpec::LeakyRelu { negative_slope: slope });
        f = units;
    }
    specs.push(LayerSpec::Dense {
        inputs: f,
        outputs: n_classes,
    });
    specs.push(LayerSpec::Softmax);
    Ok(specs)
}

/// Five conv blocks (pooling after blocks 1, 2 and 5), three dense layers and
/// a softmax, all with leaky ReLU activations.
pub fn build_simplenet(canvas: Canvas, plan: &SimpleNetPlan, n_classes: usize, seed: u64) -> Result<Network> {
    let specs = simplenet_specs(canvas, plan, n_classes)?;
    Network::new([3, canvas.height as usize, canvas.width as usize], &specs, seed)
}
