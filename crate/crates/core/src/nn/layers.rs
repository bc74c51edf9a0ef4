use super::{shape_err, NnError, Rng, Scalar, Tensor};

/// Layer description; parameters live in [`Layer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv3d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool3d {
        window: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize, pad: usize) -> Self {
        LayerSpec::Conv3d {
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            pad,
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    /// Weight and bias shapes, `None` for parameter-free layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv3d {
                in_ch, out_ch, kernel, ..
            } => Some((vec![out_ch, in_ch, kernel, kernel, kernel], vec![out_ch])),
            LayerSpec::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            _ => None,
        }
    }

    /// Output shape for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match *self {
            LayerSpec::Conv3d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                if input.len() != 4 || input[0] != in_ch {
                    return shape_err(format!("conv3d expects [{in_ch}, D, H, W], got {input:?}"));
                }
                let mut out = vec![out_ch];
                for &n in &input[1..] {
                    out.push(conv_out_len(n, kernel, stride, pad)?);
                }
                Ok(out)
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool3d { window } => {
                if input.len() != 4 || window == 0 || input[1..].iter().any(|&n| n < window) {
                    return shape_err(format!("maxpool3d window {window} does not fit input {input:?}"));
                }
                Ok(vec![input[0], input[1] / window, input[2] / window, input[3] / window])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return shape_err(format!("dense expects [{inputs}], got {input:?}"));
                }
                Ok(vec![outputs])
            }
        }
    }

    /// Fan-in and fan-out used by the initializer.
    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv3d {
                in_ch, out_ch, kernel, ..
            } => (in_ch * kernel.pow(3), out_ch * kernel.pow(3)),
            LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
            _ => (0, 0),
        }
    }
}

fn conv_out_len(n: usize, k: usize, s: usize, p: usize) -> Result<usize, NnError> {
    if s == 0 || k == 0 {
        return shape_err("conv3d kernel and stride must be positive");
    }
    let padded = n + 2 * p;
    if padded < k || !(padded - k).is_multiple_of(s) {
        return shape_err(format!(
            "conv3d: (len {n} + 2*pad {p} - kernel {k}) is not a non-negative multiple of stride {s}"
        ));
    }
    Ok((padded - k) / s + 1)
}

/// Output positions `o` in `[lo, hi)` for which `o*s + koff - p` is a valid
/// input index.
#[inline]
fn valid_range(n_in: usize, n_out: usize, s: usize, p: usize, koff: usize) -> (usize, usize) {
    let lo = if p > koff { (p - koff).div_ceil(s) } else { 0 };
    let top = n_in + p;
    if top <= koff {
        return (0, 0);
    }
    let hi = ((top - koff - 1) / s + 1).min(n_out);
    (lo.min(hi), hi)
}

struct ConvGeom {
    c_in: usize,
    c_out: usize,
    k: usize,
    s: usize,
    p: usize,
    inp: [usize; 3],
    out: [usize; 3],
}

fn conv_geom<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> Result<ConvGeom, NnError> {
    let ws = w.shape();
    if ws.len() != 5 || ws[2] != ws[3] || ws[3] != ws[4] {
        return shape_err(format!("conv3d weight must be [O, C, k, k, k], got {ws:?}"));
    }
    if b.shape() != [ws[0]] {
        return shape_err(format!("conv3d bias must be [{}], got {:?}", ws[0], b.shape()));
    }
    let spec = LayerSpec::Conv3d {
        in_ch: ws[1],
        out_ch: ws[0],
        kernel: ws[2],
        stride,
        pad,
    };
    let out = spec.output_shape(x.shape())?;
    let xs = x.shape();
    Ok(ConvGeom {
        c_in: ws[1],
        c_out: ws[0],
        k: ws[2],
        s: stride,
        p: pad,
        inp: [xs[1], xs[2], xs[3]],
        out: [out[1], out[2], out[3]],
    })
}

/// 3D cross-correlation of `x: [C, D, H, W]` with `w: [O, C, k, k, k]`.
pub fn conv3d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, NnError> {
    let g = conv_geom(x, w, b, stride, pad)?;
    let [d, h, wd] = g.inp;
    let [od_n, oh_n, ow_n] = g.out;
    let out_vol = od_n * oh_n * ow_n;
    let k = g.k;
    let mut out = vec![T::zero(); g.c_out * out_vol];
    let xd = x.data();
    let wv = w.data();
    for o in 0..g.c_out {
        let oslab = &mut out[o * out_vol..(o + 1) * out_vol];
        oslab.fill(b.data()[o]);
        for c in 0..g.c_in {
            let xslab = &xd[c * d * h * wd..(c + 1) * d * h * wd];
            for kd in 0..k {
                let (d0, d1) = valid_range(d, od_n, g.s, g.p, kd);
                for kh in 0..k {
                    let (h0, h1) = valid_range(h, oh_n, g.s, g.p, kh);
                    for kw in 0..k {
                        let (w0, w1) = valid_range(wd, ow_n, g.s, g.p, kw);
                        if w0 >= w1 {
                            continue;
                        }
                        let wt = wv[(((o * g.c_in + c) * k + kd) * k + kh) * k + kw];
                        for od in d0..d1 {
                            let id = od * g.s + kd - g.p;
                            for oh in h0..h1 {
                                let ih = oh * g.s + kh - g.p;
                                let orow = &mut oslab[(od * oh_n + oh) * ow_n..][w0..w1];
                                let irow = &xslab[(id * h + ih) * wd..(id * h + ih + 1) * wd];
                                if g.s == 1 {
                                    let irow = &irow[w0 + kw - g.p..w1 + kw - g.p];
                                    for (ov, &iv) in orow.iter_mut().zip(irow) {
                                        *ov += wt * iv;
                                    }
                                } else {
                                    for (j, ov) in orow.iter_mut().enumerate() {
                                        *ov += wt * irow[(w0 + j) * g.s + kw - g.p];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[g.c_out, od_n, oh_n, ow_n], out)
}

/// Gradients of [`conv3d_forward`] given the upstream gradient `dout`.
/// Returns `(dx, dw, db)`; `dx` is skipped when `need_dx` is false.
pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
    dout: &Tensor<T>,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>), NnError> {
    let g = conv_geom(x, w, b, stride, pad)?;
    let [d, h, wd] = g.inp;
    let [od_n, oh_n, ow_n] = g.out;
    if dout.shape() != [g.c_out, od_n, oh_n, ow_n] {
        return shape_err(format!("conv3d dout shape {:?} does not match output", dout.shape()));
    }
    let out_vol = od_n * oh_n * ow_n;
    let in_vol = d * h * wd;
    let k = g.k;
    let xd = x.data();
    let wv = w.data();
    let go = dout.data();
    let mut dx = vec![T::zero(); if need_dx { g.c_in * in_vol } else { 0 }];
    let mut dw = vec![T::zero(); wv.len()];
    let mut db = vec![T::zero(); g.c_out];
    for o in 0..g.c_out {
        let gslab = &go[o * out_vol..(o + 1) * out_vol];
        let mut acc = T::zero();
        for &v in gslab {
            acc += v;
        }
        db[o] = acc;
        for c in 0..g.c_in {
            let xslab = &xd[c * in_vol..(c + 1) * in_vol];
            for kd in 0..k {
                let (d0, d1) = valid_range(d, od_n, g.s, g.p, kd);
                for kh in 0..k {
                    let (h0, h1) = valid_range(h, oh_n, g.s, g.p, kh);
                    for kw in 0..k {
                        let (w0, w1) = valid_range(wd, ow_n, g.s, g.p, kw);
                        if w0 >= w1 {
                            continue;
                        }
                        let widx = (((o * g.c_in + c) * k + kd) * k + kh) * k + kw;
                        let wt = wv[widx];
                        let mut gw = T::zero();
                        for od in d0..d1 {
                            let id = od * g.s + kd - g.p;
                            for oh in h0..h1 {
                                let ih = oh * g.s + kh - g.p;
                                let grow = &gslab[(od * oh_n + oh) * ow_n..][w0..w1];
                                let ibase = (id * h + ih) * wd;
                                for (j, &gv) in grow.iter().enumerate() {
                                    let iw = (w0 + j) * g.s + kw - g.p;
                                    gw += gv * xslab[ibase + iw];
                                    if need_dx {
                                        dx[c * in_vol + ibase + iw] += wt * gv;
                                    }
                                }
                            }
                        }
                        dw[widx] = gw;
                    }
                }
            }
        }
    }
    let dx = if need_dx {
        Some(Tensor::from_vec(x.shape(), dx)?)
    } else {
        None
    };
    Ok((dx, Tensor::from_vec(w.shape(), dw)?, Tensor::from_vec(b.shape(), db)?))
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dout: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    x.same_shape(dout)?;
    let data = x
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Non-overlapping max pooling (stride = window). Returns the output and,
/// per output element, the flat input index of the selected maximum. Ties
/// select the first element in window scan order (lowest flat index).
pub fn maxpool3d_forward<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<(Tensor<T>, Vec<u32>), NnError> {
    let out_shape = LayerSpec::MaxPool3d { window }.output_shape(x.shape())?;
    let [c_n, d, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [_, od_n, oh_n, ow_n] = [out_shape[0], out_shape[1], out_shape[2], out_shape[3]];
    let xd = x.data();
    let mut out = Vec::with_capacity(out_shape.iter().product());
    let mut arg = Vec::with_capacity(out.capacity());
    for c in 0..c_n {
        for od in 0..od_n {
            for oh in 0..oh_n {
                for ow in 0..ow_n {
                    let mut best = usize::MAX;
                    for a in 0..window {
                        for b in 0..window {
                            for e in 0..window {
                                let idx = ((c * d + od * window + a) * h + oh * window + b) * w + ow * window + e;
                                if best == usize::MAX || xd[idx] > xd[best] {
                                    best = idx;
                                }
                            }
                        }
                    }
                    out.push(xd[best]);
                    arg.push(best as u32);
                }
            }
        }
    }
    Ok((Tensor::from_vec(&out_shape, out)?, arg))
}

pub fn maxpool3d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[u32],
    dout: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if argmax.len() != dout.len() {
        return shape_err("maxpool3d gradient does not match the cached argmax");
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(dout.data()) {
        dx.data_mut()[i as usize] += g;
    }
    Ok(dx)
}

/// `y = W x + b` for `x: [in]`, `W: [out, in]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n_out, n_in) = dense_dims(x, w, b)?;
    let xd = x.data();
    let out = (0..n_out)
        .map(|o| {
            let row = &w.data()[o * n_in..(o + 1) * n_in];
            let mut acc = b.data()[o];
            for (&wv, &xv) in row.iter().zip(xd) {
                acc += wv * xv;
            }
            acc
        })
        .collect();
    Tensor::from_vec(&[n_out], out)
}

/// Returns `(dx, dw, db)` for [`dense_forward`].
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    dout: &Tensor<T>,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>), NnError> {
    let (n_out, n_in) = dense_dims(x, w, b)?;
    if dout.shape() != [n_out] {
        return shape_err(format!("dense dout must be [{n_out}], got {:?}", dout.shape()));
    }
    let xd = x.data();
    let mut dw = vec![T::zero(); n_out * n_in];
    let mut dx = vec![T::zero(); if need_dx { n_in } else { 0 }];
    for o in 0..n_out {
        let g = dout.data()[o];
        let row = &mut dw[o * n_in..(o + 1) * n_in];
        for (dwv, &xv) in row.iter_mut().zip(xd) {
            *dwv = g * xv;
        }
        if need_dx {
            let wrow = &w.data()[o * n_in..(o + 1) * n_in];
            for (d, &wv) in dx.iter_mut().zip(wrow) {
                *d += g * wv;
            }
        }
    }
    let dx = if need_dx {
        Some(Tensor::from_vec(&[n_in], dx)?)
    } else {
        None
    };
    Ok((dx, Tensor::from_vec(w.shape(), dw)?, dout.clone()))
}

fn dense_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize), NnError> {
    let ws = w.shape();
    if ws.len() != 2 || x.shape() != [ws[1]] || b.shape() != [ws[0]] {
        return shape_err(format!(
            "dense: incompatible x {:?}, w {ws:?}, b {:?}",
            x.shape(),
            b.shape()
        ));
    }
    Ok((ws[0], ws[1]))
}

/// A layer and its parameters (empty for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T = f64> {
    pub spec: LayerSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// What a layer keeps from its forward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Input(Tensor<T>),
    Pool { input_shape: Vec<usize>, argmax: Vec<u32> },
    Shape(Vec<usize>),
}

impl<T: Scalar> Layer<T> {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(spec: LayerSpec, rng: &mut Rng) -> Self {
        match spec.param_shapes() {
            Some((ws, bs)) => {
                let (fi, fo) = spec.fans();
                let limit = (6.0 / (fi + fo) as f64).sqrt();
                let n: usize = ws.iter().product();
                let data = (0..n).map(|_| T::from_f64(rng.uniform(-limit, limit))).collect();
                Self {
                    spec,
                    weight: Tensor::from_vec(&ws, data).expect("shape"),
                    bias: Tensor::zeros(&bs),
                }
            }
            None => Self {
                spec,
                weight: Tensor::zeros(&[0]),
                bias: Tensor::zeros(&[0]),
            },
        }
    }

    pub fn has_params(&self) -> bool {
        self.spec.param_shapes().is_some()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LayerCache<T>), NnError> {
        match self.spec {
            LayerSpec::Conv3d { stride, pad, .. } => {
                let y = conv3d_forward(x, &self.weight, &self.bias, stride, pad)?;
                Ok((y, LayerCache::Input(x.clone())))
            }
            LayerSpec::Relu => Ok((relu_forward(x), LayerCache::Input(x.clone()))),
            LayerSpec::MaxPool3d { window } => {
                let (y, argmax) = maxpool3d_forward(x, window)?;
                Ok((
                    y,
                    LayerCache::Pool {
                        input_shape: x.shape().to_vec(),
                        argmax,
                    },
                ))
            }
            LayerSpec::Flatten => {
                let y = x.clone().reshape(&[x.len()])?;
                Ok((y, LayerCache::Shape(x.shape().to_vec())))
            }
            LayerSpec::Dense { .. } => {
                let y = dense_forward(x, &self.weight, &self.bias)?;
                Ok((y, LayerCache::Input(x.clone())))
            }
        }
    }

    /// Returns the input gradient (if requested) and, for parameterized
    /// layers, `(dW, dB)`.
    #[allow(clippy::type_complexity)]
    pub fn backward(
        &self,
        cache: &LayerCache<T>,
        dout: &Tensor<T>,
        need_dx: bool,
    ) -> Result<(Option<Tensor<T>>, Option<(Tensor<T>, Tensor<T>)>), NnError> {
        match (self.spec, cache) {
            (LayerSpec::Conv3d { stride, pad, .. }, LayerCache::Input(x)) => {
                let (dx, dw, db) = conv3d_backward(x, &self.weight, &self.bias, stride, pad, dout, need_dx)?;
                Ok((dx, Some((dw, db))))
            }
            (LayerSpec::Relu, LayerCache::Input(x)) => Ok((Some(relu_backward(x, dout)?), None)),
            (LayerSpec::MaxPool3d { .. }, LayerCache::Pool { input_shape, argmax }) => {
                Ok((Some(maxpool3d_backward(input_shape, argmax, dout)?), None))
            }
            (LayerSpec::Flatten, LayerCache::Shape(s)) => Ok((Some(dout.clone().reshape(s)?), None)),
            (LayerSpec::Dense { .. }, LayerCache::Input(x)) => {
                let (dx, dw, db) = dense_backward(x, &self.weight, &self.bias, dout, need_dx)?;
                Ok((dx, Some((dw, db))))
            }
            _ => shape_err("layer cache does not match layer kind"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let w = Tensor::filled(&[1, 1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv3d_forward(&x, &w, &b, 1, 0).unwrap(), x);
    }

    #[test]
    fn ones_kernel_sums() {
        let x = Tensor::filled(&[1, 3, 3, 3], 1.0);
        let w = Tensor::filled(&[1, 1, 3, 3, 3], 1.0);
        let y = conv3d_forward(&x, &w, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[27.0]);
        // With padding 1 the corner output sees 2×2×2 ones.
        let y = conv3d_forward(&x, &w, &Tensor::zeros(&[1]), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 3]);
        assert_eq!(y.data()[0], 8.0);
        assert_eq!(y.data()[13], 27.0);
    }

    #[test]
    fn strided_conv_matches_naive() {
        let mut rng = Rng::new(3);
        let x = Tensor::from_vec(&[2, 5, 5, 5], (0..250).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let w = Tensor::from_vec(&[3, 2, 3, 3, 3], (0..162).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let y = conv3d_forward(&x, &w, &b, 2, 1).unwrap();
        assert_eq!(y.shape(), &[3, 3, 3, 3]);
        let at = |c: usize, d: i64, h: i64, ww: i64| -> f64 {
            if d < 0 || h < 0 || ww < 0 || d >= 5 || h >= 5 || ww >= 5 {
                0.0
            } else {
                x.data()[((c * 5 + d as usize) * 5 + h as usize) * 5 + ww as usize]
            }
        };
        for o in 0..3 {
            for od in 0..3 {
                for oh in 0..3 {
                    for ow in 0..3 {
                        let mut acc = b.data()[o];
                        for c in 0..2 {
                            for kd in 0..3 {
                                for kh in 0..3 {
                                    for kw in 0..3 {
                                        let wt = w.data()[(((o * 2 + c) * 3 + kd) * 3 + kh) * 3 + kw];
                                        acc += wt
                                            * at(
                                                c,
                                                (od * 2 + kd) as i64 - 1,
                                                (oh * 2 + kh) as i64 - 1,
                                                (ow * 2 + kw) as i64 - 1,
                                            );
                                    }
                                }
                            }
                        }
                        let got = y.data()[((o * 3 + od) * 3 + oh) * 3 + ow];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::<f64>::zeros(&[2, 4, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3, 3]);
        assert!(matches!(
            conv3d_forward(&x, &w, &Tensor::zeros(&[1]), 1, 0),
            Err(NnError::Shape(_))
        ));
        let w = Tensor::zeros(&[1, 2, 3, 3, 3]);
        assert!(conv3d_forward(&x, &w, &Tensor::zeros(&[1]), 2, 0).is_err());
    }

    #[test]
    fn relu_values() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_constant_routes_to_first() {
        let x = Tensor::filled(&[1, 4, 4, 4], 3.0);
        let (y, arg) = maxpool3d_forward(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 3.0));
        let dx = maxpool3d_backward(x.shape(), &arg, &Tensor::filled(&[1, 2, 2, 2], 1.0)).unwrap();
        for od in 0..2 {
            for oh in 0..2 {
                for ow in 0..2 {
                    let first = (od * 2 * 4 + oh * 2) * 4 + ow * 2;
                    assert_eq!(dx.data()[first], 1.0);
                }
            }
        }
        assert_eq!(dx.data().iter().sum::<f64>(), 8.0);
        assert!(maxpool3d_forward(&Tensor::<f64>::zeros(&[1, 1, 4, 4]), 2).is_err());
    }

    #[test]
    fn dense_shape_errors() {
        let x = Tensor::<f64>::zeros(&[3]);
        let w = Tensor::zeros(&[2, 4]);
        assert!(dense_forward(&x, &w, &Tensor::zeros(&[2])).is_err());
    }
}
