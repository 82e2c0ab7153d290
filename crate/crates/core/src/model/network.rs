use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{Matrix, OpClass};
use crate::model::cell::{
    gru_cell_forward, lstm_cell_forward, CellKind, GruCache, GruLayer, LstmCache, LstmLayer,
};

/// One recurrent layer of either cell type.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Gru(GruLayer),
    Lstm(LstmLayer),
}

impl Layer {
    pub fn zeros(kind: CellKind, input: usize, hidden: usize) -> Self {
        match kind {
            CellKind::Gru => Layer::Gru(GruLayer::zeros(input, hidden)),
            CellKind::Lstm => Layer::Lstm(LstmLayer::zeros(input, hidden)),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            Layer::Gru(_) => CellKind::Gru,
            Layer::Lstm(_) => CellKind::Lstm,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            Layer::Gru(l) => l.hidden(),
            Layer::Lstm(l) => l.hidden(),
        }
    }

    pub fn input(&self) -> usize {
        match self {
            Layer::Gru(l) => l.input(),
            Layer::Lstm(l) => l.input(),
        }
    }

    /// Parameter blocks in their declared (serialization) order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        match self {
            Layer::Gru(l) => vec![
                l.w_z.as_slice(),
                l.w_r.as_slice(),
                l.w_h.as_slice(),
                l.u_z.as_slice(),
                l.u_r.as_slice(),
                l.u_h.as_slice(),
                &l.b_z,
                &l.b_r,
                &l.b_h,
            ],
            Layer::Lstm(l) => vec![
                l.w_f.as_slice(),
                l.w_i.as_slice(),
                l.w_c.as_slice(),
                l.w_o.as_slice(),
                l.u_f.as_slice(),
                l.u_i.as_slice(),
                l.u_c.as_slice(),
                l.u_o.as_slice(),
                &l.v_f,
                &l.v_i,
                &l.v_o,
                &l.b_f,
                &l.b_i,
                &l.b_c,
                &l.b_o,
            ],
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Gru(l) => vec![
                l.w_z.as_mut_slice(),
                l.w_r.as_mut_slice(),
                l.w_h.as_mut_slice(),
                l.u_z.as_mut_slice(),
                l.u_r.as_mut_slice(),
                l.u_h.as_mut_slice(),
                &mut l.b_z,
                &mut l.b_r,
                &mut l.b_h,
            ],
            Layer::Lstm(l) => vec![
                l.w_f.as_mut_slice(),
                l.w_i.as_mut_slice(),
                l.w_c.as_mut_slice(),
                l.w_o.as_mut_slice(),
                l.u_f.as_mut_slice(),
                l.u_i.as_mut_slice(),
                l.u_c.as_mut_slice(),
                l.u_o.as_mut_slice(),
                &mut l.v_f,
                &mut l.v_i,
                &mut l.v_o,
                &mut l.b_f,
                &mut l.b_i,
                &mut l.b_c,
                &mut l.b_o,
            ],
        }
    }

    /// Which of [`Layer::blocks`] are biases.
    pub fn bias_block_mask(&self) -> Vec<bool> {
        match self {
            Layer::Gru(_) => [vec![false; 6], vec![true; 3]].concat(),
            Layer::Lstm(_) => [vec![false; 11], vec![true; 4]].concat(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// `fan_in + fan_out` per block for initialization; `None` for biases.
    /// Peepholes count as diagonal H×H matrices.
    fn init_fans(&self) -> Vec<Option<usize>> {
        let (i, h) = (self.input(), self.hidden());
        let (gates, diag) = match self {
            Layer::Gru(_) => (3, 0),
            Layer::Lstm(_) => (4, 3),
        };
        let mut v = vec![Some(i + h); gates];
        v.extend(vec![Some(2 * h); gates + diag]);
        v.extend(vec![None; gates]);
        v
    }
}

/// Stacked recurrent layers plus a dense head mapping the last layer's final
/// hidden state to a full next-step feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub cell: CellKind,
    pub lookback: usize,
    pub features: usize,
    pub layers: Vec<Layer>,
    /// `features × hidden_of_last_layer`
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

/// Per-step, per-layer cell caches from one forward pass.
#[derive(Clone, Debug)]
pub enum StepCache {
    Gru(GruCache),
    Lstm(LstmCache),
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `steps[t][layer]`
    pub steps: Vec<Vec<StepCache>>,
    /// Final hidden state of the last layer (input to the head).
    pub last_hidden: Vec<f64>,
}

/// Closed-form multiply-accumulate count of one k-step forward pass plus head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FlopBreakdown {
    pub input: u64,
    pub recurrent: u64,
    pub peephole: u64,
    pub head: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.input + self.recurrent + self.peephole + self.head
    }
}

impl Network {
    /// Uniform ±√(6/(fan_in+fan_out)) weights per block from a seeded generator; zero biases.
    pub fn new(
        cell: CellKind,
        features: usize,
        hidden: usize,
        layer_count: usize,
        lookback: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Network::zeros(cell, features, &vec![hidden; layer_count], lookback)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let fans = layer.init_fans();
            for (block, fan) in layer.blocks_mut().into_iter().zip(fans) {
                if let Some(fan) = fan {
                    uniform_fill(&mut rng, block, (6.0 / fan as f64).sqrt());
                }
            }
        }
        let h_last = net.head_w.cols();
        let bound = (6.0 / (h_last + features) as f64).sqrt();
        uniform_fill(&mut rng, net.head_w.as_mut_slice(), bound);
        Ok(net)
    }

    pub fn zeros(
        cell: CellKind,
        features: usize,
        hidden_sizes: &[usize],
        lookback: usize,
    ) -> Result<Self> {
        if features == 0 || lookback == 0 || hidden_sizes.is_empty() {
            return Err(Error::config(
                "network needs at least one feature, one lookback step and one layer",
            ));
        }
        if hidden_sizes.contains(&0) {
            return Err(Error::config("hidden width must be at least 1"));
        }
        let mut layers = Vec::with_capacity(hidden_sizes.len());
        let mut input = features;
        for &h in hidden_sizes {
            layers.push(Layer::zeros(cell, input, h));
            input = h;
        }
        Ok(Network {
            cell,
            lookback,
            features,
            layers,
            head_w: Matrix::zeros(features, input),
            head_b: vec![0.0; features],
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::hidden).collect()
    }

    /// Checks that layer widths chain and every block has a consistent shape.
    pub fn validate(&self) -> Result<()> {
        let mut input = self.features;
        for (idx, layer) in self.layers.iter().enumerate() {
            if layer.kind() != self.cell {
                return Err(Error::Internal(format!(
                    "layer {idx} has the wrong cell kind"
                )));
            }
            if layer.input() != input {
                return Err(Error::Internal(format!(
                    "layer {idx} expects input width {}, previous layer provides {input}",
                    layer.input()
                )));
            }
            let (i, h) = (layer.input(), layer.hidden());
            let ok = match layer {
                Layer::Gru(l) => {
                    [&l.w_z, &l.w_r, &l.w_h].iter().all(|m| m.shape() == (h, i))
                        && [&l.u_z, &l.u_r, &l.u_h].iter().all(|m| m.shape() == (h, h))
                        && [&l.b_z, &l.b_r, &l.b_h].iter().all(|b| b.len() == h)
                }
                Layer::Lstm(l) => {
                    [&l.w_f, &l.w_i, &l.w_c, &l.w_o]
                        .iter()
                        .all(|m| m.shape() == (h, i))
                        && [&l.u_f, &l.u_i, &l.u_c, &l.u_o]
                            .iter()
                            .all(|m| m.shape() == (h, h))
                        && [&l.v_f, &l.v_i, &l.v_o, &l.b_f, &l.b_i, &l.b_c, &l.b_o]
                            .iter()
                            .all(|b| b.len() == h)
                }
            };
            if !ok {
                return Err(Error::Internal(format!(
                    "layer {idx} has inconsistent block shapes"
                )));
            }
            input = h;
        }
        if self.head_w.shape() != (self.features, input) || self.head_b.len() != self.features {
            return Err(Error::Internal(
                "head shape does not match the last layer".into(),
            ));
        }
        Ok(())
    }

    fn check_window(&self, window: &Matrix) -> Result<()> {
        if window.shape() != (self.lookback, self.features) {
            return Err(Error::shape(format!(
                "window is {}x{}, network expects {}x{}",
                window.rows(),
                window.cols(),
                self.lookback,
                self.features
            )));
        }
        Ok(())
    }

    /// Zero-initialized stacked pass over the window; returns the normalized next-step prediction.
    pub fn forward(&self, window: &Matrix) -> Result<Vec<f64>> {
        self.forward_traced(window).map(|(p, _)| p)
    }

    pub fn forward_traced(&self, window: &Matrix) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_window(window)?;
        let mut h: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.hidden()]).collect();
        let mut c = h.clone();
        let mut steps = Vec::with_capacity(self.lookback);
        for t in 0..self.lookback {
            let mut input = window.row(t).to_vec();
            let mut caches = Vec::with_capacity(self.layers.len());
            for (l, layer) in self.layers.iter().enumerate() {
                match layer {
                    Layer::Gru(p) => {
                        let (h_new, cache) = gru_cell_forward(p, &input, &h[l])?;
                        h[l] = h_new;
                        caches.push(StepCache::Gru(cache));
                    }
                    Layer::Lstm(p) => {
                        let (h_new, c_new, cache) = lstm_cell_forward(p, &input, &h[l], &c[l])?;
                        h[l] = h_new;
                        c[l] = c_new;
                        caches.push(StepCache::Lstm(cache));
                    }
                }
                input.clone_from(&h[l]);
            }
            steps.push(caches);
        }
        let last_hidden = h.pop().unwrap_or_default();
        let mut pred = self.head_b.clone();
        self.head_w
            .matvec_acc(&last_hidden, &mut pred, OpClass::Head);
        Ok((pred, ForwardTrace { steps, last_hidden }))
    }

    /// Recursive multistep forecast: each prediction is appended to the window
    /// (dropping the oldest row) and fed back. Returns `m × N` normalized rows.
    pub fn forecast(&self, window: &Matrix, m: usize) -> Result<Matrix> {
        if m < 1 {
            return Err(Error::config("forecast horizon must be at least 1"));
        }
        self.check_window(window)?;
        let n = self.features;
        let mut buf = window.as_slice().to_vec();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            let w = Matrix::from_vec(self.lookback, n, buf.clone())?;
            let pred = self.forward(&w)?;
            buf.drain(..n);
            buf.extend_from_slice(&pred);
            out.extend(pred);
        }
        Matrix::from_vec(m, n, out)
    }

    /// Exact number of scalar parameters, biases and head included.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum::<usize>()
            + self.head_w.rows() * self.head_w.cols()
            + self.head_b.len()
    }

    pub fn flops(&self) -> FlopBreakdown {
        let k = self.lookback as u64;
        let mut f = FlopBreakdown::default();
        for layer in &self.layers {
            let g = layer.kind().gates() as u64;
            let (i, h) = (layer.input() as u64, layer.hidden() as u64);
            f.input += k * g * h * i;
            f.recurrent += k * g * h * h;
            if layer.kind() == CellKind::Lstm {
                f.peephole += k * 3 * h;
            }
        }
        f.head = (self.head_w.rows() * self.head_w.cols()) as u64;
        f
    }

    /// Multiply-accumulates for one k-step forecast.
    pub fn flop_count_per_forecast(&self) -> u64 {
        self.flops().total()
    }

    /// All parameter blocks in declared order: each layer's blocks, then head weights and bias.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.layers.iter().flat_map(Layer::blocks).collect();
        v.push(self.head_w.as_slice());
        v.push(&self.head_b);
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.layers.iter_mut().flat_map(Layer::blocks_mut).collect();
        v.push(self.head_w.as_mut_slice());
        v.push(&mut self.head_b);
        v
    }

    /// Bias flags aligned with [`Network::blocks`].
    pub fn bias_block_mask(&self) -> Vec<bool> {
        let mut v: Vec<bool> = self
            .layers
            .iter()
            .flat_map(Layer::bias_block_mask)
            .collect();
        v.push(false);
        v.push(true);
        v
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "flat parameter vector has {} entries, network has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// A network of the same architecture with every parameter zero.
    pub fn zeros_like(&self) -> Network {
        Network::zeros(
            self.cell,
            self.features,
            &self.hidden_sizes(),
            self.lookback,
        )
        .expect("architecture of an existing network is valid")
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }
}

fn uniform_fill(rng: &mut ChaCha8Rng, block: &mut [f64], bound: f64) {
    for v in block {
        *v = rng.gen_range(-bound..=bound);
    }
}
