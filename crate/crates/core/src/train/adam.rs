use super::TrainError;
use crate::engine::{Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// One Adam update. `weight_decay[i]` is applied to tensor `i` as
/// `w <- w - lr * decay * w` before the moment update.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    weight_decay: &[f64],
) -> Result<(), TrainError> {
    let k = params.len();
    if grads.len() != k || state.m.len() != k || weight_decay.len() != k {
        return Err(TrainError::Shape(format!(
            "{k} parameters, {} gradients, {} moments, {} decay factors",
            grads.len(),
            state.m.len(),
            weight_decay.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr_t, eps) = (T::lit(lr), T::lit(EPSILON));
    for (i, w) in params.iter_mut().enumerate() {
        let g = &grads[i];
        if g.shape() != w.shape() || state.m[i].shape() != w.shape() {
            return Err(TrainError::Shape(format!(
                "parameter {i} has shape {:?}, gradient {:?}",
                w.shape(),
                g.shape()
            )));
        }
        let decay = T::one() - lr_t * T::lit(weight_decay[i]);
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, wj) in w.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *wj = *wj * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
