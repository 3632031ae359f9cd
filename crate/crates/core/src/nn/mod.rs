//! Minimal tape autodiff, layers and optimizer used by the encoders and fusion network.

mod graph;
mod layers;
mod optim;
mod params;

pub use graph::{Graph, Var};
pub use layers::{AttentionBlock, AttnPool, FeedForward, Linear, MultiHeadAttention, Norm, NORM_EPS};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Grads, Mat, ParamId, ParamSet};

/// Central-difference gradient of `loss` with respect to every parameter scalar.
pub fn numeric_grads(params: &ParamSet, h: f64, mut loss: impl FnMut(&ParamSet) -> f64) -> Grads {
    let mut work = params.clone();
    let mut out = params.zeros_like();
    for id in params.ids() {
        for k in 0..params.value(id).len() {
            let orig = params.value(id).as_slice().expect("standard layout")[k];
            work.value_mut(id).as_slice_mut().unwrap()[k] = orig + h;
            let up = loss(&work);
            work.value_mut(id).as_slice_mut().unwrap()[k] = orig - h;
            let down = loss(&work);
            work.value_mut(id).as_slice_mut().unwrap()[k] = orig;
            out.0[id.index()].as_slice_mut().unwrap()[k] = (up - down) / (2.0 * h);
        }
    }
    out
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all entries.
pub fn max_relative_error(analytic: &Grads, numeric: &Grads, floor: f64) -> f64 {
    analytic
        .0
        .iter()
        .zip(&numeric.0)
        .flat_map(|(a, n)| a.iter().zip(n.iter()).map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor)))
        .fold(0.0, f64::max)
}
