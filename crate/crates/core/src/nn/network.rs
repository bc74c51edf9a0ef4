use rayon::prelude::*;

use super::{shape_err, softmax_cross_entropy, Layer, LayerCache, LayerSpec, NnError, Rng, Scalar, Tensor};

/// A feed-forward stack of layers with a fixed input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f64> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

/// Per-layer forward caches for one sample.
#[derive(Debug, Clone)]
pub struct NetCache<T> {
    layers: Vec<LayerCache<T>>,
}

/// Parameter gradients, one tensor per parameter in [`Network::params`]
/// order (weight then bias for each parameterized layer).
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T = f64> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn add_assign(&mut self, other: &Grads<T>) -> Result<(), NnError> {
        if self.tensors.len() != other.tensors.len() {
            return shape_err("gradient sets have different lengths");
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            t.scale(s);
        }
    }

    /// All components concatenated, as `f64`.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_f64()))
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|&v| v == T::zero()))
    }
}

impl<T: Scalar> Network<T> {
    /// Builds a network with freshly initialized parameters.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec], rng: &mut Rng) -> Result<Self, NnError> {
        let layers = specs.iter().map(|&s| Layer::init(s, rng)).collect();
        Self::from_layers(input_shape, layers)
    }

    /// Assembles a network from existing layers, checking that shapes compose.
    pub fn from_layers(input_shape: &[usize], layers: Vec<Layer<T>>) -> Result<Self, NnError> {
        let mut shape = input_shape.to_vec();
        for (i, l) in layers.iter().enumerate() {
            shape = l.spec.output_shape(&shape).map_err(|e| NnError::Shape(format!("layer {i}: {e}")))?;
            if let Some((ws, bs)) = l.spec.param_shapes() {
                if l.weight.shape() != ws.as_slice() || l.bias.shape() != bs.as_slice() {
                    return shape_err(format!("layer {i}: parameter shapes do not match {:?}", l.spec));
                }
            }
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
        })
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

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Output shape of every layer, in order.
    pub fn layer_output_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                shape = l.spec.output_shape(&shape).expect("validated at construction");
                shape.clone()
            })
            .collect()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layer_output_shapes().pop().unwrap_or_else(|| self.input_shape.clone())
    }

    /// Elements in the input plus every layer output for one sample.
    pub fn activation_count(&self) -> usize {
        self.input_shape.iter().product::<usize>()
            + self
                .layer_output_shapes()
                .iter()
                .map(|s| s.iter().product::<usize>())
                .sum::<usize>()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .filter(|l| l.has_params())
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .filter(|l| l.has_params())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            tensors: self.params().iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, NetCache<T>), NnError> {
        if x.shape() != self.input_shape.as_slice() {
            return shape_err(format!(
                "network input must be {:?}, got {:?}",
                self.input_shape,
                x.shape()
            ));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            let (y, c) = l.forward(&cur)?;
            caches.push(c);
            cur = y;
        }
        Ok((cur, NetCache { layers: caches }))
    }

    /// Backpropagates `dout` through the cached forward pass. The input
    /// gradient is computed only when `need_input_grad` is set.
    pub fn backward(
        &self,
        cache: &NetCache<T>,
        dout: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor<T>>, Grads<T>), NnError> {
        if cache.layers.len() != self.layers.len() {
            return shape_err("cache was produced by a different network");
        }
        let mut grads: Vec<Tensor<T>> = Vec::new();
        let mut cur = dout.clone();
        let mut dx = None;
        for (i, (l, c)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let need = i > 0 || need_input_grad;
            let (d, p) = l.backward(c, &cur, need)?;
            if let Some((dw, db)) = p {
                grads.push(db);
                grads.push(dw);
            }
            match d {
                Some(d) if i > 0 => cur = d,
                d => dx = d,
            }
        }
        grads.reverse();
        Ok((dx, Grads { tensors: grads }))
    }

    /// `p <- p - lr * g` over every parameter.
    pub fn apply_sgd(&mut self, grads: &Grads<T>, lr: T) -> Result<(), NnError> {
        let mut params = self.params_mut();
        sgd_step(&mut params, &grads.tensors, lr)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }
}

/// Plain SGD: `p <- p - lr * g`, no momentum or weight decay.
pub fn sgd_step<T: Scalar>(params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: T) -> Result<(), NnError> {
    if params.len() != grads.len() {
        return shape_err(format!("{} parameters but {} gradients", params.len(), grads.len()));
    }
    for (p, g) in params.iter().zip(grads) {
        p.same_shape(g)?;
    }
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv = *pv - lr * gv;
        }
    }
    Ok(())
}

/// Runs `per_sample` over `items` in parallel chunks and folds the results
/// strictly in ascending item order, so the reduction is identical to a
/// sequential loop regardless of thread count.
pub(crate) fn ordered_reduce<I, R, F, G>(items: &[I], per_sample: F, mut fold: G) -> Result<(), NnError>
where
    I: Sync,
    R: Send,
    F: Fn(&I) -> Result<R, NnError> + Sync,
    G: FnMut(R) -> Result<(), NnError>,
{
    let chunk = rayon::current_num_threads().max(1);
    for part in items.chunks(chunk) {
        let results: Vec<Result<R, NnError>> = part.par_iter().map(&per_sample).collect();
        for r in results {
            fold(r?)?;
        }
    }
    Ok(())
}

/// One SGD step of a plain classifier on a batch of `(input, label)`
/// samples. Gradients are averaged over the batch. Returns the mean loss.
pub fn train_step<T: Scalar>(net: &mut Network<T>, batch: &[(Tensor<T>, usize)], lr: T) -> Result<f64, NnError> {
    if batch.is_empty() {
        return shape_err("empty batch");
    }
    let mut total = net.zero_grads();
    let mut loss = 0.0;
    {
        let net_ref = &*net;
        ordered_reduce(
            batch,
            |(x, y)| {
                let (logits, cache) = net_ref.forward(x)?;
                let (l, dl) = softmax_cross_entropy(&logits, *y)?;
                let (_, g) = net_ref.backward(&cache, &dl, false)?;
                Ok((l, g))
            },
            |(l, g)| {
                loss += l.to_f64();
                total.add_assign(&g)
            },
        )?;
    }
    let n = batch.len() as f64;
    total.scale(T::from_f64(1.0 / n));
    net.apply_sgd(&total, lr)?;
    Ok(loss / n)
}
