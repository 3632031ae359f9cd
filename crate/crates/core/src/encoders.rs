//! Per-modality encoders: GRU over lab matrices, sinusoidal time MLP, note projection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Linear, Mat, ParamId, ParamSet, Var};

pub const DEFAULT_TIME_FREQS: usize = 8;
pub const DEFAULT_OMEGA_MAX: f64 = 10000.0;

/// `[sin(t/ω_0), cos(t/ω_0), …]` for `k` geometric frequencies up to `omega_max`.
pub fn time_features(times: &[f64], k: usize, omega_max: f64) -> Mat {
    let omegas: Vec<f64> = (0..k)
        .map(|i| if k == 1 { 1.0 } else { omega_max.powf(i as f64 / (k - 1) as f64) })
        .collect();
    Mat::from_shape_fn((times.len(), 2 * k), |(t, j)| {
        let x = times[t] / omegas[j / 2];
        if j % 2 == 0 {
            x.sin()
        } else {
            x.cos()
        }
    })
}

#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl GruParams {
    pub fn new(ps: &mut ParamSet, name: &str, n_in: usize, d: usize, rng: &mut impl Rng) -> Self {
        let wx = ps.add_glorot(format!("{name}.wx"), n_in, 3 * d, rng);
        let wh = ps.add_glorot(format!("{name}.wh"), d, 3 * d, rng);
        let b = ps.add_const(format!("{name}.b"), 1, 3 * d, 0.0);
        GruParams { wx, wh, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (wx, wh, b) = (g.param(self.wx), g.param(self.wh), g.param(self.b));
        g.gru(x, wx, wh, b)
    }
}

/// One-hidden-layer MLP over sin/cos time features.
#[derive(Clone, Copy, Debug)]
pub struct TimeEmbed {
    pub hidden: Linear,
    pub out: Linear,
    pub freqs: usize,
    pub omega_max: f64,
}

impl TimeEmbed {
    pub fn new(ps: &mut ParamSet, name: &str, freqs: usize, omega_max: f64, d: usize, rng: &mut impl Rng) -> Self {
        TimeEmbed {
            hidden: Linear::new(ps, &format!("{name}.hidden"), 2 * freqs, d, true, rng),
            out: Linear::new(ps, &format!("{name}.out"), d, d, true, rng),
            freqs,
            omega_max,
        }
    }

    pub fn forward(&self, g: &mut Graph, times: &[f64]) -> Var {
        let f = g.input(time_features(times, self.freqs, self.omega_max));
        let h = self.hidden.forward(g, f);
        let h = g.tanh(h);
        self.out.forward(g, h)
    }
}

/// `tanh(Linear(concat(seq, broadcast(rag))))`, or `tanh(Linear(seq))` without a RAG vector.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub lin: Linear,
}

impl Projection {
    pub fn new(ps: &mut ParamSet, name: &str, n_in: usize, d: usize, rng: &mut impl Rng) -> Self {
        Projection {
            lin: Linear::new(ps, name, n_in, d, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, seq: Var, rag: Option<Var>) -> Var {
        let x = match rag {
            Some(r) => {
                let rows = g.value(seq).nrows();
                let b = g.broadcast_rows(r, rows);
                g.concat_cols(&[seq, b])
            }
            None => seq,
        };
        let y = self.lin.forward(g, x);
        g.tanh(y)
    }
}

/// Stacks per-visit note vectors into a T×D matrix. Missing notes become zero rows.
pub fn note_matrix(notes: &[Option<Vec<f64>>], dim: usize) -> Result<(Mat, Vec<bool>)> {
    let mut m = Mat::zeros((notes.len(), dim));
    let mut present = Vec::with_capacity(notes.len());
    for (t, n) in notes.iter().enumerate() {
        match n {
            Some(v) => {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
                }
                m.row_mut(t).assign(&ndarray::ArrayView1::from(v.as_slice()));
                present.push(true);
            }
            None => present.push(false),
        }
    }
    Ok((m, present))
}

pub fn check_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Evaluates a GRU without recording gradients.
pub fn gru_forward(ps: &ParamSet, gru: &GruParams, ts: &Mat) -> Result<Mat> {
    check_finite(ts, "time-series input")?;
    let mut g = Graph::new(ps);
    let x = g.input(ts.clone());
    let h = gru.forward(&mut g, x);
    Ok(g.value(h).clone())
}

pub fn time_embed(ps: &ParamSet, te: &TimeEmbed, times: &[f64]) -> Mat {
    let mut g = Graph::new(ps);
    let h = te.forward(&mut g, times);
    g.value(h).clone()
}

/// Projects T×D note vectors, with an optional D-dimensional RAG vector broadcast along T.
pub fn encode_notes(ps: &ParamSet, proj: &Projection, notes: &Mat, rag: Option<&[f64]>) -> Result<Mat> {
    let n_in = ps.value(proj.lin.w).nrows();
    let want = notes.ncols() + rag.map_or(0, <[f64]>::len);
    if want != n_in {
        return Err(Error::DimensionMismatch { expected: n_in, actual: want });
    }
    let mut g = Graph::new(ps);
    let x = g.input(notes.clone());
    let r = rag.map(|r| g.input(Mat::from_shape_vec((1, r.len()), r.to_vec()).expect("row")));
    let h = proj.forward(&mut g, x, r);
    Ok(g.value(h).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RagInjection {
    TextOnly,
    #[default]
    Symmetric,
}
