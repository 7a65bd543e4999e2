use rand::Rng;

use super::layer::{Cache, ConvLayer, DenseLayer, Layer, MaxPool};
use super::spec::LayerSpec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A sequential network with a fixed input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar = f64> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

/// Per-layer, per-parameter gradient buffers aligned with [`Network::layers`].
pub type Gradients<T> = Vec<Vec<Tensor<T>>>;

impl<T: Scalar> Network<T> {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        let net = Network { input_shape, layers };
        net.layer_input_shapes()?;
        Ok(net)
    }

    /// Conv filters are He-normal scaled by `conv_gain`, dense weights are
    /// LeCun-normal and biases start at zero.
    pub fn init<R: Rng + ?Sized>(
        input_shape: Vec<usize>,
        specs: &[LayerSpec],
        conv_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            let layer = match *spec {
                LayerSpec::Conv {
                    in_channels,
                    filters,
                    kernel,
                    stride,
                    pad,
                } => {
                    let fan_in = (in_channels * kernel * kernel) as f64;
                    let w = Tensor::randn(&[filters, in_channels, kernel, kernel], conv_gain * (2.0 / fan_in).sqrt(), rng);
                    Layer::Conv(ConvLayer::new(w, Tensor::zeros(&[filters]), stride, pad)?)
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let w = Tensor::randn(&[outputs, inputs], (1.0 / inputs as f64).sqrt(), rng);
                    Layer::Dense(DenseLayer::new(w, Tensor::zeros(&[outputs]))?)
                }
                LayerSpec::BasisConv { .. } => {
                    return Err(Error::InvalidArgument(
                        "basis_conv layers are created by compressing a conv layer".into(),
                    ))
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { size, stride } => Layer::MaxPool(MaxPool { size, stride }),
                LayerSpec::Flatten => Layer::Flatten,
            };
            layers.push(layer);
        }
        Network::new(input_shape, layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Replaces layer `index`; the new layer must keep the output shape.
    pub fn replace_layer(&mut self, index: usize, layer: Layer<T>) -> Result<Layer<T>> {
        if index >= self.layers.len() {
            return Err(Error::Plan(format!("layer index {index} out of range ({} layers)", self.layers.len())));
        }
        let shapes = self.layer_input_shapes()?;
        let new_out = layer.spec().output_shape(&shapes[index])?;
        if new_out != shapes[index + 1] {
            return Err(Error::dim(
                format!("layer {index} output"),
                format!("{:?}", shapes[index + 1]),
                format!("{new_out:?}"),
            ));
        }
        Ok(std::mem::replace(&mut self.layers[index], layer))
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Input shape of every layer followed by the network output shape.
    pub fn layer_input_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.spec().output_shape(shapes.last().expect("non-empty")).map_err(|e| match e {
                Error::Dimension { axis, expected, actual } => Error::Dimension {
                    axis: format!("layer {i}: {axis}"),
                    expected,
                    actual,
                },
                other => other,
            })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.layer_input_shapes()?.pop().expect("non-empty"))
    }

    pub fn num_outputs(&self) -> usize {
        self.output_shape().map(|s| s.iter().product()).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != &self.input_shape[..] {
            return Err(Error::dim(
                "network input",
                format!("{:?}", self.input_shape),
                format!("{:?}", x.shape()),
            ));
        }
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        if x.shape() != &self.input_shape[..] {
            return Err(Error::dim(
                "network input",
                format!("{:?}", self.input_shape),
                format!("{:?}", x.shape()),
            ));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward_cached(&h)?;
            caches.push(cache);
            h = y;
        }
        Ok((h, caches))
    }

    /// Parameter gradients for every layer given the output gradient.
    pub fn backward(&self, caches: &[Cache<T>], grad_out: &Tensor<T>) -> Result<Gradients<T>> {
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut g = grad_out.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let (gx, gp) = layer.backward(cache, &g)?;
            grads[i] = gp;
            g = gx;
        }
        Ok(grads)
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.layers
            .iter()
            .map(|l| l.params().into_iter().map(|t| Tensor::zeros(t.shape())).collect())
            .collect()
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let params = l.params().into_iter().map(|t| t.cast::<U>()).collect();
                Layer::from_parts(&l.spec(), params).expect("same structure")
            })
            .collect();
        Network {
            input_shape: self.input_shape.clone(),
            layers,
        }
    }
}

/// Named architectures used by the command line.
pub mod presets {
    use super::LayerSpec;

    /// Three 3x3 conv blocks (16, 32, 64 filters) with 2x2 pooling, then a
    /// dense classifier. Input `[1, 28, 28]`.
    pub fn mnist_reference(classes: usize) -> (Vec<usize>, Vec<LayerSpec>) {
        let specs = vec![
            LayerSpec::conv(1, 16, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::conv(16, 32, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::conv(32, 64, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::Flatten,
            LayerSpec::dense(64 * 3 * 3, classes),
        ];
        (vec![1, 28, 28], specs)
    }

    /// Two small conv blocks for `[1, 12, 12]` inputs.
    pub fn tiny(classes: usize) -> (Vec<usize>, Vec<LayerSpec>) {
        let specs = vec![
            LayerSpec::conv(1, 8, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::conv(8, 16, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::Flatten,
            LayerSpec::dense(16 * 3 * 3, classes),
        ];
        (vec![1, 12, 12], specs)
    }

    /// Three-channel variant of [`mnist_reference`] for `[3, 32, 32]` inputs.
    pub fn cifar_reference(classes: usize) -> (Vec<usize>, Vec<LayerSpec>) {
        let specs = vec![
            LayerSpec::conv(3, 32, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::conv(32, 64, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::conv(64, 64, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::Flatten,
            LayerSpec::dense(64 * 4 * 4, classes),
        ];
        (vec![3, 32, 32], specs)
    }

    pub fn by_name(name: &str, classes: usize) -> Option<(Vec<usize>, Vec<LayerSpec>)> {
        match name {
            "mnist" | "mnist-reference" => Some(mnist_reference(classes)),
            "tiny" => Some(tiny(classes)),
            "cifar" | "cifar-reference" => Some(cifar_reference(classes)),
            _ => None,
        }
    }

    pub const NAMES: &[&str] = &["mnist-reference", "tiny", "cifar-reference"];
}
