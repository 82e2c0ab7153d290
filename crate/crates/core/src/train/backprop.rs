//! Exact gradients by reverse accumulation through time, and the central-difference
//! oracle used to check them.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::matrix::{norm2, Matrix};
use crate::model::{gru_cell_backward, lstm_cell_backward, Layer, Network, StepCache};
use crate::train::loss::mse_slices;

/// Partial derivatives of the loss, one block per parameter block of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Layer>,
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        let z = net.zeros_like();
        GradientSet {
            layers: z.layers,
            head_w: z.head_w,
            head_b: z.head_b,
        }
    }

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

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub(crate) fn from_flat(net: &Network, flat: &[f64]) -> Result<Self> {
        let mut g = GradientSet::zeros_like(net);
        let mut offset = 0;
        for block in g.blocks_mut() {
            let n = block.len();
            let src = flat
                .get(offset..offset + n)
                .ok_or_else(|| Error::shape("flat gradient too short"))?;
            block.copy_from_slice(src);
            offset += n;
        }
        if offset != flat.len() {
            return Err(Error::shape("flat gradient too long"));
        }
        Ok(g)
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .map(|b| norm2(b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Zeroes every bias block.
    pub fn zero_biases(&mut self, net: &Network) {
        for (block, is_bias) in self.blocks_mut().into_iter().zip(net.bias_block_mask()) {
            if is_bias {
                block.fill(0.0);
            }
        }
    }
}

fn check_sample(net: &Network, s: &Sample, idx: usize) -> Result<()> {
    if s.input.shape() != (net.lookback, net.features)
        || s.target.rows() == 0
        || s.target.cols() != net.features
    {
        return Err(Error::shape(format!(
            "sample {idx} is {}x{} -> {}x{}, network expects {}x{} -> (>=1)x{}",
            s.input.rows(),
            s.input.cols(),
            s.target.rows(),
            s.target.cols(),
            net.lookback,
            net.features,
            net.features
        )));
    }
    Ok(())
}

/// Batch-mean MSE of single-step predictions against each sample's first target row.
pub fn batch_loss(net: &Network, batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let mut total = 0.0;
    for (idx, s) in batch.iter().enumerate() {
        check_sample(net, s, idx)?;
        let pred = net.forward(&s.input)?;
        total += mse_slices(&pred, s.target.row(0));
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::numeric("in batch loss"));
    }
    Ok(loss)
}

/// Loss and exact gradient of [`batch_loss`], reverse-accumulated across all
/// k steps and L layers and averaged over the batch.
pub fn backprop(net: &Network, batch: &[Sample]) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let n = net.features as f64;
    let mut grad = GradientSet::zeros_like(net);
    let mut total = 0.0;

    for (idx, sample) in batch.iter().enumerate() {
        check_sample(net, sample, idx)?;
        let (pred, trace) = net.forward_traced(&sample.input)?;
        let target = sample.target.row(0);
        let loss = mse_slices(&pred, target);
        if !loss.is_finite() {
            return Err(Error::numeric(format!("in loss of sample {idx}")));
        }
        total += loss;

        let dpred: Vec<f64> = pred
            .iter()
            .zip(target)
            .map(|(p, t)| 2.0 * (p - t) / n * scale)
            .collect();
        grad.head_w.add_outer(&dpred, &trace.last_hidden);
        grad.head_b
            .iter_mut()
            .zip(&dpred)
            .for_each(|(g, d)| *g += d);

        let mut dh: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.hidden()]).collect();
        let mut dc = dh.clone();
        net.head_w
            .matvec_t_acc(&dpred, dh.last_mut().expect("at least one layer"));

        for t in (0..net.lookback).rev() {
            let mut from_above: Option<Vec<f64>> = None;
            for l in (0..net.layers.len()).rev() {
                let mut dh_out = std::mem::take(&mut dh[l]);
                if let Some(a) = from_above.take() {
                    dh_out.iter_mut().zip(&a).for_each(|(d, v)| *d += v);
                }
                let layer = &net.layers[l];
                let mut dx = vec![0.0; layer.input()];
                let mut dh_prev = vec![0.0; layer.hidden()];
                match (layer, &trace.steps[t][l], &mut grad.layers[l]) {
                    (Layer::Gru(p), StepCache::Gru(cache), Layer::Gru(g)) => {
                        gru_cell_backward(p, cache, &dh_out, g, &mut dx, &mut dh_prev);
                    }
                    (Layer::Lstm(p), StepCache::Lstm(cache), Layer::Lstm(g)) => {
                        let mut dc_prev = vec![0.0; layer.hidden()];
                        lstm_cell_backward(
                            p,
                            cache,
                            &dh_out,
                            &dc[l],
                            g,
                            &mut dx,
                            &mut dh_prev,
                            &mut dc_prev,
                        );
                        dc[l] = dc_prev;
                    }
                    _ => return Err(Error::Internal("cache and layer kinds disagree".into())),
                }
                dh[l] = dh_prev;
                if l > 0 {
                    from_above = Some(dx);
                }
            }
        }
        if !grad.is_finite() {
            return Err(Error::numeric(format!("in gradient of sample {idx}")));
        }
    }
    Ok((total * scale, grad))
}

/// Central differences `(J(θ+ε) − J(θ−ε)) / 2ε`, one coordinate at a time.
/// Costs two full batch evaluations per parameter; meant for small networks.
pub fn finite_diff_grad(net: &Network, batch: &[Sample], epsilon: f64) -> Result<GradientSet> {
    if !(epsilon > 0.0) {
        return Err(Error::config("finite-difference epsilon must be positive"));
    }
    let mut probe = net.clone();
    let base = net.to_flat();
    let mut theta = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        theta[i] = base[i] + epsilon;
        probe.set_flat(&theta)?;
        let plus = batch_loss(&probe, batch)?;
        theta[i] = base[i] - epsilon;
        probe.set_flat(&theta)?;
        let minus = batch_loss(&probe, batch)?;
        theta[i] = base[i];
        out.push((plus - minus) / (2.0 * epsilon));
    }
    GradientSet::from_flat(net, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CellKind;

    fn batch(net: &Network, n: usize, seed: u64) -> Vec<Sample> {
        let mut x = seed as f64;
        let mut next = || {
            x = (x * 9301.0 + 49297.0) % 233280.0;
            x / 233280.0 - 0.5
        };
        (0..n)
            .map(|_| Sample {
                input: Matrix::from_fn(net.lookback, net.features, |_, _| next()),
                target: Matrix::from_fn(1, net.features, |_, _| next()),
            })
            .collect()
    }

    #[test]
    fn zero_everything_is_stationary() {
        let net = Network::zeros(CellKind::Gru, 2, &[3], 2).unwrap();
        let b: Vec<Sample> = (0..3)
            .map(|_| Sample {
                input: Matrix::zeros(2, 2),
                target: Matrix::zeros(1, 2),
            })
            .collect();
        let (loss, g) = backprop(&net, &b).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(finite_diff_grad(&net, &b, 1e-5)
            .unwrap()
            .to_flat()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_is_mean_invariant() {
        let net = Network::new(CellKind::Lstm, 2, 3, 2, 3, 4).unwrap();
        let b = batch(&net, 4, 1);
        let doubled: Vec<Sample> = b.iter().chain(&b).cloned().collect();
        let (l1, g1) = backprop(&net, &b).unwrap();
        let (l2, g2) = backprop(&net, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_finite_differences() {
        for (cell, seed) in [(CellKind::Gru, 1), (CellKind::Lstm, 2)] {
            let net = Network::new(cell, 2, 3, 2, 3, seed).unwrap();
            let b = batch(&net, 3, seed);
            let (_, g) = backprop(&net, &b).unwrap();
            let fd = finite_diff_grad(&net, &b, 1e-5).unwrap();
            for (a, e) in g.to_flat().iter().zip(fd.to_flat()) {
                if a.abs() > 1e-8 {
                    assert!(((a - e) / a).abs() < 1e-4, "{a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn shape_and_empty_errors() {
        let net = Network::zeros(CellKind::Gru, 2, &[3], 2).unwrap();
        assert!(matches!(backprop(&net, &[]), Err(Error::EmptyInput(_))));
        let bad = [Sample {
            input: Matrix::zeros(3, 2),
            target: Matrix::zeros(1, 2),
        }];
        assert!(matches!(backprop(&net, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn overflow_reports_sample() {
        let mut net = Network::zeros(CellKind::Gru, 1, &[1], 1).unwrap();
        net.head_b[0] = f64::MAX;
        let b = [
            Sample {
                input: Matrix::zeros(1, 1),
                target: Matrix::from_vec(1, 1, vec![f64::MAX]).unwrap(),
            },
            Sample {
                input: Matrix::zeros(1, 1),
                target: Matrix::from_vec(1, 1, vec![-f64::MAX]).unwrap(),
            },
        ];
        match backprop(&net, &b) {
            Err(Error::Numeric { context }) => assert!(context.contains("sample 1"), "{context}"),
            other => panic!("{other:?}"),
        }
    }
}
