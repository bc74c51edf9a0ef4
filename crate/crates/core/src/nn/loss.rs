use super::{NnError, Scalar, Tensor};

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let d = logits.data();
    let mut m = d[0];
    for &v in d {
        if v > m {
            m = v;
        }
    }
    let exps: Vec<T> = d.iter().map(|&v| (v - m).exp()).collect();
    let mut z = T::zero();
    for &e in &exps {
        z += e;
    }
    let p = exps.into_iter().map(|e| e / z).collect();
    Tensor::from_vec(logits.shape(), p).expect("same shape")
}

/// Categorical cross-entropy `-log softmax(logits)[label]` and its gradient
/// `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>), NnError> {
    let k = logits.len();
    if logits.shape().len() != 1 || k < 2 {
        return super::shape_err(format!("logits must be a vector of length >= 2, got {:?}", logits.shape()));
    }
    if label >= k {
        return Err(NnError::Index { index: label, len: k });
    }
    let d = logits.data();
    let mut m = d[0];
    for &v in d {
        if v > m {
            m = v;
        }
    }
    let mut z = T::zero();
    for &v in d {
        z += (v - m).exp();
    }
    let log_z = z.ln() + m;
    let loss = log_z - d[label];
    let mut grad = softmax(logits);
    grad.data_mut()[label] += -T::one();
    Ok((loss, grad))
}
