//! Multi-resolution CNN.
//!
//! A shared fine network maps each Boundary cell's fine occupancy block to
//! one scalar. That scalar, squashed by a sigmoid, replaces the cell's entry
//! in the coarse occupancy grid, and the coarse network classifies the
//! result. Backward runs the coarse network back to its input, reads the
//! input gradient at each Boundary cell through the prefix-sum block
//! address, and backpropagates it through the fine network. Fine-network
//! gradients from all Boundary cells are summed in ascending cell order.

use rayon::prelude::*;
use thiserror::Error;

use crate::multires::MultiResGrid;
use crate::nn::{
    ordered_reduce, softmax_cross_entropy, Grads, LayerSpec, NetCache, Network, NnError, Rng, Scalar,
    Tensor,
};
use crate::voxel::CellState;

#[derive(Debug, Error, PartialEq)]
pub enum MrcnnError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("stale or mismatched cache: {0}")]
    Cache(String),
    #[error("shape error: {0}")]
    Shape(String),
}

/// Bounded squashing applied to the fine-network output before embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbedActivation {
    #[default]
    Sigmoid,
}

impl EmbedActivation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            EmbedActivation::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            EmbedActivation::Sigmoid => y * (T::one() - y),
        }
    }
}

/// Default coarse classifier: conv(16) + relu + pool(2) + conv(32) + relu +
/// flatten + dense(classes). Every coarse dim must be even.
pub fn coarse_cnn_specs(dims: [usize; 3], classes: usize) -> Vec<LayerSpec> {
    let pooled: usize = dims.iter().map(|d| d / 2).product();
    vec![
        LayerSpec::conv(1, 16, 3, 1),
        LayerSpec::Relu,
        LayerSpec::MaxPool3d { window: 2 },
        LayerSpec::conv(16, 32, 3, 1),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::dense(32 * pooled, classes),
    ]
}

/// Default fine network: conv(8) + relu + flatten + dense(1).
pub fn fine_cnn_specs(fine_factor: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(1, 8, 3, 1),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::dense(8 * fine_factor.pow(3), 1),
    ]
}

/// Coarse network (θ1) plus shared fine network (θ2).
#[derive(Debug, Clone, PartialEq)]
pub struct MrcnnModel<T = f64> {
    pub coarse_net: Network<T>,
    pub fine_net: Network<T>,
    pub activation: EmbedActivation,
}

/// Forward-pass state needed by [`embed_backward`].
#[derive(Debug, Clone)]
pub struct EmbedCache<T> {
    /// Coarse input with fine outputs embedded at Boundary cells.
    pub x1: Tensor<T>,
    /// `(coarse flat index, fine block ordinal)`, ascending.
    pub boundary: Vec<(usize, usize)>,
    /// Embedded (post-activation) value per Boundary cell.
    pub embedded: Vec<T>,
    fine_caches: Vec<NetCache<T>>,
    coarse_cache: NetCache<T>,
    fingerprint: u64,
}

/// θ1 and θ2 gradients, plus optional gradients w.r.t. each fine block input.
#[derive(Debug, Clone, PartialEq)]
pub struct MrcnnGrads<T> {
    pub coarse: Grads<T>,
    pub fine: Grads<T>,
    pub fine_blocks: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> MrcnnModel<T> {
    pub fn new(coarse_net: Network<T>, fine_net: Network<T>) -> Result<Self, MrcnnError> {
        let ci = coarse_net.input_shape();
        if ci.len() != 4 || ci[0] != 1 {
            return Err(MrcnnError::Shape(format!("coarse net input must be [1, D, H, W], got {ci:?}")));
        }
        let fi = fine_net.input_shape();
        if fi.len() != 4 || fi[0] != 1 || fi[1] != fi[2] || fi[2] != fi[3] {
            return Err(MrcnnError::Shape(format!("fine net input must be [1, F, F, F], got {fi:?}")));
        }
        if fine_net.output_shape() != [1] {
            return Err(MrcnnError::Shape(format!(
                "fine net must output a scalar, got {:?}",
                fine_net.output_shape()
            )));
        }
        let co = coarse_net.output_shape();
        if co.len() != 1 || co[0] < 2 {
            return Err(MrcnnError::Shape(format!("coarse net must output >= 2 logits, got {co:?}")));
        }
        Ok(Self {
            coarse_net,
            fine_net,
            activation: EmbedActivation::Sigmoid,
        })
    }

    /// Default architectures for the given coarse dims, fine factor and
    /// class count.
    pub fn with_default_architecture(
        coarse_dims: [usize; 3],
        fine_factor: usize,
        classes: usize,
        rng: &mut Rng,
    ) -> Result<Self, MrcnnError> {
        let coarse = Network::new(
            &[1, coarse_dims[0], coarse_dims[1], coarse_dims[2]],
            &coarse_cnn_specs(coarse_dims, classes),
            rng,
        )?;
        let f = fine_factor;
        let fine = Network::new(&[1, f, f, f], &fine_cnn_specs(f), rng)?;
        Self::new(coarse, fine)
    }

    pub fn fine_factor(&self) -> usize {
        self.fine_net.input_shape()[1]
    }

    pub fn coarse_dims(&self) -> [usize; 3] {
        let s = self.coarse_net.input_shape();
        [s[1], s[2], s[3]]
    }

    pub fn classes(&self) -> usize {
        self.coarse_net.output_shape()[0]
    }

    /// Order-sensitive checksum over every parameter bit pattern.
    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.coarse_net.params().into_iter().chain(self.fine_net.params()) {
            for v in t.data() {
                h ^= v.to_f64().to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    fn check_grid(&self, mr: &MultiResGrid) -> Result<(), MrcnnError> {
        if mr.fine_factor != self.fine_factor() {
            return Err(MrcnnError::Shape(format!(
                "grid fine factor {} does not match fine net input {}",
                mr.fine_factor,
                self.fine_factor()
            )));
        }
        if mr.coarse.spec.dims != self.coarse_dims() {
            return Err(MrcnnError::Shape(format!(
                "grid dims {:?} do not match coarse net input {:?}",
                mr.coarse.spec.dims,
                self.coarse_dims()
            )));
        }
        Ok(())
    }
}

/// Occupancy tensor `[1, D, H, W]`: Boundary and Inside are 1, Outside 0.
pub fn occupancy_tensor<T: Scalar>(cells: &[CellState], dims: [usize; 3]) -> Tensor<T> {
    let data = cells.iter().map(|c| T::from_f64(c.occupancy())).collect();
    Tensor::from_vec(&[1, dims[0], dims[1], dims[2]], data).expect("cell count matches dims")
}

/// Coarse input before embedding: Outside 0, Inside 1, Boundary 0 (to be
/// overwritten).
fn base_encoding<T: Scalar>(mr: &MultiResGrid) -> Tensor<T> {
    let [d0, d1, d2] = mr.coarse.spec.dims;
    let data = mr
        .coarse
        .cells
        .iter()
        .map(|c| match c {
            CellState::Inside => T::one(),
            _ => T::zero(),
        })
        .collect();
    Tensor::from_vec(&[1, d0, d1, d2], data).expect("cell count matches dims")
}

/// Forward pass: fine network on every Boundary block (in parallel), embed,
/// then the coarse network.
pub fn embed_forward<T: Scalar>(
    model: &MrcnnModel<T>,
    mr: &MultiResGrid,
) -> Result<(Tensor<T>, EmbedCache<T>), MrcnnError> {
    model.check_grid(mr)?;
    let f = mr.fine_factor;
    let boundary: Vec<(usize, usize)> = mr.boundary_blocks().collect();
    let fine: Vec<(T, NetCache<T>)> = boundary
        .par_iter()
        .map(|&(_, b)| -> Result<_, NnError> {
            let x2 = occupancy_tensor(mr.block(b), [f, f, f]);
            let (out, cache) = model.fine_net.forward(&x2)?;
            Ok((model.activation.apply(out.data()[0]), cache))
        })
        .collect::<Result<_, _>>()?;

    let mut x1 = base_encoding::<T>(mr);
    let mut embedded = Vec::with_capacity(fine.len());
    let mut fine_caches = Vec::with_capacity(fine.len());
    for (&(v, _), (e, c)) in boundary.iter().zip(fine) {
        x1.data_mut()[v] = e;
        embedded.push(e);
        fine_caches.push(c);
    }
    let (logits, coarse_cache) = model.coarse_net.forward(&x1)?;
    Ok((
        logits,
        EmbedCache {
            x1,
            boundary,
            embedded,
            fine_caches,
            coarse_cache,
            fingerprint: model.fingerprint(),
        },
    ))
}

fn check_cache<T: Scalar>(model: &MrcnnModel<T>, cache: &EmbedCache<T>) -> Result<(), MrcnnError> {
    if cache.fingerprint != model.fingerprint() {
        return Err(MrcnnError::Cache("model parameters changed since the forward pass".into()));
    }
    if cache.x1.shape()[1..] != model.coarse_dims() {
        return Err(MrcnnError::Cache("cache was produced for different coarse dims".into()));
    }
    Ok(())
}

/// Routes a coarse input gradient `dx1` into the fine network: for each
/// Boundary cell in ascending order, `dv = dx1[cell] * act'(embedded)` is
/// backpropagated and the fine parameter gradients are summed.
pub fn fine_backward<T: Scalar>(
    model: &MrcnnModel<T>,
    cache: &EmbedCache<T>,
    dx1: &Tensor<T>,
    with_block_grads: bool,
) -> Result<(Grads<T>, Option<Vec<Tensor<T>>>), MrcnnError> {
    check_cache(model, cache)?;
    if dx1.shape() != cache.x1.shape() {
        return Err(MrcnnError::Shape("dx1 does not match the embedded input".into()));
    }
    let mut total = model.fine_net.zero_grads();
    let mut blocks = Vec::new();
    let items: Vec<usize> = (0..cache.boundary.len()).collect();
    ordered_reduce(
        &items,
        |&b| {
            let (v, _) = cache.boundary[b];
            let dv = dx1.data()[v] * model.activation.derivative_from_output(cache.embedded[b]);
            let dout = Tensor::from_vec(&[1], vec![dv])?;
            model.fine_net.backward(&cache.fine_caches[b], &dout, with_block_grads)
        },
        |(dx2, g)| {
            if let Some(dx2) = dx2 {
                blocks.push(dx2);
            }
            total.add_assign(&g)
        },
    )?;
    Ok((total, with_block_grads.then_some(blocks)))
}

/// Backward pass through the coarse network and then, via the Boundary
/// cells, through the shared fine network.
pub fn embed_backward<T: Scalar>(
    model: &MrcnnModel<T>,
    cache: &EmbedCache<T>,
    dlogits: &Tensor<T>,
    with_block_grads: bool,
) -> Result<MrcnnGrads<T>, MrcnnError> {
    check_cache(model, cache)?;
    let (dx1, coarse) = model.coarse_net.backward(&cache.coarse_cache, dlogits, true)?;
    let dx1 = dx1.expect("input gradient requested");
    let (fine, fine_blocks) = fine_backward(model, cache, &dx1, with_block_grads)?;
    Ok(MrcnnGrads {
        coarse,
        fine,
        fine_blocks,
    })
}

/// One SGD step on θ1 and θ2 over a batch of labelled grids. Per-sample
/// gradients are averaged in ascending sample order. Returns the mean loss.
pub fn train_step<T: Scalar>(
    model: &mut MrcnnModel<T>,
    batch: &[(&MultiResGrid, usize)],
    lr: T,
) -> Result<f64, MrcnnError> {
    if batch.is_empty() {
        return Err(MrcnnError::Shape("empty batch".into()));
    }
    let mut g1 = model.coarse_net.zero_grads();
    let mut g2 = model.fine_net.zero_grads();
    let mut loss = 0.0;
    {
        let m = &*model;
        let per_sample = |(mr, y): &(&MultiResGrid, usize)| -> Result<_, NnError> {
            let run = || -> Result<_, MrcnnError> {
                let (logits, cache) = embed_forward(m, mr)?;
                let (l, dl) = softmax_cross_entropy(&logits, *y)?;
                let g = embed_backward(m, &cache, &dl, false)?;
                Ok((l, g))
            };
            run().map_err(|e| match e {
                MrcnnError::Nn(e) => e,
                other => NnError::Shape(other.to_string()),
            })
        };
        ordered_reduce(batch, per_sample, |(l, g)| {
            loss += l.to_f64();
            g1.add_assign(&g.coarse)?;
            g2.add_assign(&g.fine)
        })?;
    }
    let inv = T::from_f64(1.0 / batch.len() as f64);
    g1.scale(inv);
    g2.scale(inv);
    model.coarse_net.apply_sgd(&g1, lr)?;
    model.fine_net.apply_sgd(&g2, lr)?;
    Ok(loss / batch.len() as f64)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<T: Scalar>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn predict<T: Scalar>(model: &MrcnnModel<T>, mr: &MultiResGrid) -> Result<usize, MrcnnError> {
    let (logits, _) = embed_forward(model, mr)?;
    Ok(argmax(logits.data()))
}
