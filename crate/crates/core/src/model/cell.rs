//! GRU and LSTM cells: parameters, one-step forward evaluation and the local
//! reverse-mode step used by backpropagation through time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{diag_acc, Matrix, OpClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

/// Logistic function, evaluated without overflow for large negative inputs.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &[f64], kind: Activation) -> Vec<f64> {
    match kind {
        Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        Activation::Tanh => x.iter().map(|v| v.tanh()).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::config(format!("unknown cell kind {other:?}"))),
        }
    }
}

/// Update gate `z`, reset gate `r` and candidate `h̃` weights of one GRU layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

/// Forget/input/output gates and memory candidate of one LSTM layer.
/// The peephole weights `v_*` are diagonal and stored as vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub u_f: Matrix,
    pub u_i: Matrix,
    pub u_c: Matrix,
    pub u_o: Matrix,
    pub v_f: Vec<f64>,
    pub v_i: Vec<f64>,
    pub v_o: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl GruLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Matrix::zeros(hidden, input);
        let u = || Matrix::zeros(hidden, hidden);
        GruLayer {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_z.rows()
    }

    pub fn input(&self) -> usize {
        self.w_z.cols()
    }
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Matrix::zeros(hidden, input);
        let u = || Matrix::zeros(hidden, hidden);
        let v = || vec![0.0; hidden];
        LstmLayer {
            w_f: w(),
            w_i: w(),
            w_c: w(),
            w_o: w(),
            u_f: u(),
            u_i: u(),
            u_c: u(),
            u_o: u(),
            v_f: v(),
            v_i: v(),
            v_o: v(),
            b_f: v(),
            b_i: v(),
            b_c: v(),
            b_o: v(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input(&self) -> usize {
        self.w_f.cols()
    }
}

/// Intermediate values of one GRU step, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub h_cand: Vec<f64>,
    /// `r ⊙ h_prev`
    pub rh: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub c_cand: Vec<f64>,
    pub c: Vec<f64>,
    pub o: Vec<f64>,
    /// `tanh(c)`
    pub tc: Vec<f64>,
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::shape(format!(
            "{what} has length {got}, expected {want}"
        )));
    }
    Ok(())
}

fn affine(w: &Matrix, x: &[f64], u: &Matrix, h: &[f64], b: &[f64]) -> Vec<f64> {
    let mut a = b.to_vec();
    w.matvec_acc(x, &mut a, OpClass::Input);
    u.matvec_acc(h, &mut a, OpClass::Recurrent);
    a
}

/// One GRU step:
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_cell_forward(p: &GruLayer, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruCache)> {
    check_len("GRU input", x.len(), p.input())?;
    check_len("GRU hidden state", h_prev.len(), p.hidden())?;
    let mut z = affine(&p.w_z, x, &p.u_z, h_prev, &p.b_z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut r = affine(&p.w_r, x, &p.u_r, h_prev, &p.b_r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut h_cand = affine(&p.w_h, x, &p.u_h, &rh, &p.b_h);
    h_cand.iter_mut().for_each(|v| *v = v.tanh());
    let h: Vec<f64> = (0..h_prev.len())
        .map(|j| (1.0 - z[j]) * h_prev[j] + z[j] * h_cand[j])
        .collect();
    Ok((
        h,
        GruCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            h_cand,
            rh,
        },
    ))
}

/// One peephole-LSTM step:
/// `f = σ(W_f x + U_f h + V_f ⊙ c + b_f)`, `i = σ(W_i x + U_i h + V_i ⊙ c + b_i)`,
/// `c̃ = tanh(W_c x + U_c h + b_c)`, `c' = f ⊙ c + i ⊙ c̃`,
/// `o = σ(W_o x + U_o h + V_o ⊙ c' + b_o)`, `h' = o ⊙ tanh(c')`.
pub fn lstm_cell_forward(
    p: &LstmLayer,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, LstmCache)> {
    check_len("LSTM input", x.len(), p.input())?;
    check_len("LSTM hidden state", h_prev.len(), p.hidden())?;
    check_len("LSTM memory", c_prev.len(), p.hidden())?;
    let mut f = affine(&p.w_f, x, &p.u_f, h_prev, &p.b_f);
    diag_acc(&p.v_f, c_prev, &mut f);
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut i = affine(&p.w_i, x, &p.u_i, h_prev, &p.b_i);
    diag_acc(&p.v_i, c_prev, &mut i);
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut c_cand = affine(&p.w_c, x, &p.u_c, h_prev, &p.b_c);
    c_cand.iter_mut().for_each(|v| *v = v.tanh());
    let c: Vec<f64> = (0..c_prev.len())
        .map(|j| f[j] * c_prev[j] + i[j] * c_cand[j])
        .collect();
    let mut o = affine(&p.w_o, x, &p.u_o, h_prev, &p.b_o);
    diag_acc(&p.v_o, &c, &mut o);
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tc).map(|(a, b)| a * b).collect();
    Ok((
        h,
        c.clone(),
        LstmCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            f,
            i,
            c_cand,
            c,
            o,
            tc,
        },
    ))
}

/// Accumulates one gate's parameter gradients given the pre-activation gradient `da`,
/// and propagates into `dx` and `dh`.
#[allow(clippy::too_many_arguments)]
fn gate_backward(
    da: &[f64],
    w: &Matrix,
    u: &Matrix,
    x: &[f64],
    h: &[f64],
    gw: &mut Matrix,
    gu: &mut Matrix,
    gb: &mut [f64],
    dx: &mut [f64],
    dh: &mut [f64],
) {
    gw.add_outer(da, x);
    gu.add_outer(da, h);
    gb.iter_mut().zip(da).for_each(|(g, d)| *g += d);
    w.matvec_t_acc(da, dx);
    u.matvec_t_acc(da, dh);
}

/// Reverse step of [`gru_cell_forward`]: given `dh` (gradient w.r.t. the step output),
/// accumulates parameter gradients into `grad` and input/previous-state gradients into
/// `dx` / `dh_prev`.
pub(crate) fn gru_cell_backward(
    p: &GruLayer,
    cache: &GruCache,
    dh: &[f64],
    grad: &mut GruLayer,
    dx: &mut [f64],
    dh_prev: &mut [f64],
) {
    let n = dh.len();
    let mut da_z = vec![0.0; n];
    let mut da_h = vec![0.0; n];
    for j in 0..n {
        let z = cache.z[j];
        dh_prev[j] += dh[j] * (1.0 - z);
        let dz = dh[j] * (cache.h_cand[j] - cache.h_prev[j]);
        da_z[j] = dz * z * (1.0 - z);
        let dhc = dh[j] * z;
        da_h[j] = dhc * (1.0 - cache.h_cand[j] * cache.h_cand[j]);
    }
    // Candidate path: the recurrent input is r ⊙ h_prev.
    let mut d_rh = vec![0.0; n];
    gate_backward(
        &da_h,
        &p.w_h,
        &p.u_h,
        &cache.x,
        &cache.rh,
        &mut grad.w_h,
        &mut grad.u_h,
        &mut grad.b_h,
        dx,
        &mut d_rh,
    );
    let mut da_r = vec![0.0; n];
    for j in 0..n {
        dh_prev[j] += d_rh[j] * cache.r[j];
        let dr = d_rh[j] * cache.h_prev[j];
        da_r[j] = dr * cache.r[j] * (1.0 - cache.r[j]);
    }
    gate_backward(
        &da_z,
        &p.w_z,
        &p.u_z,
        &cache.x,
        &cache.h_prev,
        &mut grad.w_z,
        &mut grad.u_z,
        &mut grad.b_z,
        dx,
        dh_prev,
    );
    gate_backward(
        &da_r,
        &p.w_r,
        &p.u_r,
        &cache.x,
        &cache.h_prev,
        &mut grad.w_r,
        &mut grad.u_r,
        &mut grad.b_r,
        dx,
        dh_prev,
    );
}

/// Reverse step of [`lstm_cell_forward`]. `dc` is the memory gradient flowing back from the
/// next step; `dc_prev` receives this step's contribution to the previous memory.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_cell_backward(
    p: &LstmLayer,
    cache: &LstmCache,
    dh: &[f64],
    dc: &[f64],
    grad: &mut LstmLayer,
    dx: &mut [f64],
    dh_prev: &mut [f64],
    dc_prev: &mut [f64],
) {
    let n = dh.len();
    let mut da_o = vec![0.0; n];
    let mut dct = vec![0.0; n];
    for j in 0..n {
        let o = cache.o[j];
        let tc = cache.tc[j];
        da_o[j] = dh[j] * tc * o * (1.0 - o);
        dct[j] = dc[j] + dh[j] * o * (1.0 - tc * tc);
        // Output peephole reads the new memory c.
        grad.v_o[j] += da_o[j] * cache.c[j];
        dct[j] += da_o[j] * p.v_o[j];
    }
    let mut da_f = vec![0.0; n];
    let mut da_i = vec![0.0; n];
    let mut da_c = vec![0.0; n];
    for j in 0..n {
        let (f, i, cc) = (cache.f[j], cache.i[j], cache.c_cand[j]);
        da_f[j] = dct[j] * cache.c_prev[j] * f * (1.0 - f);
        da_i[j] = dct[j] * cc * i * (1.0 - i);
        da_c[j] = dct[j] * i * (1.0 - cc * cc);
        dc_prev[j] += dct[j] * f + da_f[j] * p.v_f[j] + da_i[j] * p.v_i[j];
        grad.v_f[j] += da_f[j] * cache.c_prev[j];
        grad.v_i[j] += da_i[j] * cache.c_prev[j];
    }
    let (x, h) = (&cache.x, &cache.h_prev);
    gate_backward(
        &da_f,
        &p.w_f,
        &p.u_f,
        x,
        h,
        &mut grad.w_f,
        &mut grad.u_f,
        &mut grad.b_f,
        dx,
        dh_prev,
    );
    gate_backward(
        &da_i,
        &p.w_i,
        &p.u_i,
        x,
        h,
        &mut grad.w_i,
        &mut grad.u_i,
        &mut grad.b_i,
        dx,
        dh_prev,
    );
    gate_backward(
        &da_c,
        &p.w_c,
        &p.u_c,
        x,
        h,
        &mut grad.w_c,
        &mut grad.u_c,
        &mut grad.b_c,
        dx,
        dh_prev,
    );
    gate_backward(
        &da_o,
        &p.w_o,
        &p.u_o,
        x,
        h,
        &mut grad.w_o,
        &mut grad.u_o,
        &mut grad.b_o,
        dx,
        dh_prev,
    );
}
