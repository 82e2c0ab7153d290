//! Structured pruning of recurrent hidden units.
//!
//! Units are ranked per layer (L1 magnitude of the parameters that produce the
//! unit, or a seeded random draw) and then physically removed: the unit's rows
//! leave every gate block of its layer, its column leaves the layer's recurrent
//! blocks, and its column leaves the next layer's input blocks (or the head).
//! The compacted network computes exactly what the original computes with the
//! removed units' activations forced to zero, using strictly fewer operations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{drop_indices, Matrix};
use crate::model::{FlopBreakdown, GruLayer, Layer, LstmLayer, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMethod {
    L1,
    Random,
}

impl std::str::FromStr for PruneMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(PruneMethod::L1),
            "random" => Ok(PruneMethod::Random),
            other => Err(Error::config(format!(
                "unknown prune method {other:?} (l1 or random)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSpec {
    pub method: PruneMethod,
    /// Fraction of each layer's units to remove, in `[0, 1)`.
    pub amount: f64,
    /// Only used by [`PruneMethod::Random`].
    pub seed: u64,
}

impl Default for PruneSpec {
    fn default() -> Self {
        PruneSpec {
            method: PruneMethod::L1,
            amount: 0.05,
            seed: 0,
        }
    }
}

impl PruneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amount >= 0.0 && self.amount < 1.0) {
            return Err(Error::config(format!(
                "prune amount {} must lie in [0, 1)",
                self.amount
            )));
        }
        Ok(())
    }

    /// `floor(amount · hidden)`.
    pub fn removal_count(&self, hidden: usize) -> usize {
        // The nudge keeps products like 0.29 · 100 = 28.999… at their exact value.
        (self.amount * hidden as f64 + 1e-9).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub method: PruneMethod,
    pub amount: f64,
    pub seed: u64,
    /// Removed unit indices per layer, strictly increasing, in original numbering.
    pub removed: Vec<Vec<usize>>,
    pub hidden_before: Vec<usize>,
    pub hidden_after: Vec<usize>,
    pub params_before: usize,
    pub params_after: usize,
    pub flops_before: FlopBreakdown,
    pub flops_after: FlopBreakdown,
}

impl PruneReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn abs_sum(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Per-unit `Σ|w|` over every parameter producing that unit's activation:
/// row `u` of each input and recurrent block, the `u`-th bias of each gate and,
/// for LSTM, the `u`-th peephole entries.
pub fn unit_l1_scores(layer: &Layer) -> Vec<f64> {
    let rows = |ms: &[&Matrix], u: usize| ms.iter().map(|m| abs_sum(m.row(u))).sum::<f64>();
    let entries = |vs: &[&Vec<f64>], u: usize| vs.iter().map(|v| v[u].abs()).sum::<f64>();
    match layer {
        Layer::Gru(l) => (0..l.hidden())
            .map(|u| {
                rows(&[&l.w_z, &l.w_r, &l.w_h, &l.u_z, &l.u_r, &l.u_h], u)
                    + entries(&[&l.b_z, &l.b_r, &l.b_h], u)
            })
            .collect(),
        Layer::Lstm(l) => (0..l.hidden())
            .map(|u| {
                rows(
                    &[
                        &l.w_f, &l.w_i, &l.w_c, &l.w_o, &l.u_f, &l.u_i, &l.u_c, &l.u_o,
                    ],
                    u,
                ) + entries(&[&l.v_f, &l.v_i, &l.v_o, &l.b_f, &l.b_i, &l.b_c, &l.b_o], u)
            })
            .collect(),
    }
}

/// Sorted unit indices to remove from one layer.
///
/// L1 takes the `floor(amount·H)` lowest scores (ties to the lower index);
/// Random draws that many units uniformly from a generator keyed by
/// `(spec.seed, layer)`.
pub fn select_prune_units(scores: &[f64], spec: &PruneSpec, layer: usize) -> Result<Vec<usize>> {
    spec.validate()?;
    let h = scores.len();
    let count = spec.removal_count(h);
    if count >= h {
        return Err(Error::config(format!(
            "pruning {count} of {h} units would empty the layer"
        )));
    }
    let mut picked = match spec.method {
        PruneMethod::L1 => {
            let mut order: Vec<usize> = (0..h).collect();
            order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
            order.truncate(count);
            order
        }
        PruneMethod::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(layer as u64);
            rand::seq::index::sample(&mut rng, h, count).into_vec()
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

/// Physically removes the listed units (per layer, original numbering).
pub fn compact(net: &Network, removed: &[Vec<usize>]) -> Result<Network> {
    if removed.len() != net.layers.len() {
        return Err(Error::Internal(
            "one removal list per layer is required".into(),
        ));
    }
    for (l, r) in removed.iter().enumerate() {
        let h = net.layers[l].hidden();
        if r.windows(2).any(|w| w[0] >= w[1]) || r.last().is_some_and(|&u| u >= h) {
            return Err(Error::Internal(format!(
                "layer {l} removal set {r:?} is not strictly increasing within 0..{h}"
            )));
        }
        if r.len() >= h {
            return Err(Error::Internal(format!("layer {l} would lose every unit")));
        }
    }
    let mut layers = Vec::with_capacity(net.layers.len());
    let no_cols: Vec<usize> = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        let rows = &removed[l];
        let in_cols = if l == 0 { &no_cols } else { &removed[l - 1] };
        let w = |m: &Matrix| m.without(rows, in_cols);
        let u = |m: &Matrix| m.without(rows, rows);
        let v = |b: &Vec<f64>| drop_indices(b, rows);
        layers.push(match layer {
            Layer::Gru(p) => Layer::Gru(GruLayer {
                w_z: w(&p.w_z),
                w_r: w(&p.w_r),
                w_h: w(&p.w_h),
                u_z: u(&p.u_z),
                u_r: u(&p.u_r),
                u_h: u(&p.u_h),
                b_z: v(&p.b_z),
                b_r: v(&p.b_r),
                b_h: v(&p.b_h),
            }),
            Layer::Lstm(p) => Layer::Lstm(LstmLayer {
                w_f: w(&p.w_f),
                w_i: w(&p.w_i),
                w_c: w(&p.w_c),
                w_o: w(&p.w_o),
                u_f: u(&p.u_f),
                u_i: u(&p.u_i),
                u_c: u(&p.u_c),
                u_o: u(&p.u_o),
                v_f: v(&p.v_f),
                v_i: v(&p.v_i),
                v_o: v(&p.v_o),
                b_f: v(&p.b_f),
                b_i: v(&p.b_i),
                b_c: v(&p.b_c),
                b_o: v(&p.b_o),
            }),
        });
    }
    let last = removed.last().expect("at least one layer");
    let out = Network {
        cell: net.cell,
        lookback: net.lookback,
        features: net.features,
        layers,
        head_w: net.head_w.without(&[], last),
        head_b: net.head_b.clone(),
    };
    out.validate()?;
    Ok(out)
}

/// Fills the cost fields of a report from the two networks.
pub fn sparsity_report(
    before: &Network,
    after: &Network,
    spec: &PruneSpec,
    removed: Vec<Vec<usize>>,
) -> PruneReport {
    PruneReport {
        method: spec.method,
        amount: spec.amount,
        seed: spec.seed,
        removed,
        hidden_before: before.hidden_sizes(),
        hidden_after: after.hidden_sizes(),
        params_before: before.param_count(),
        params_after: after.param_count(),
        flops_before: before.flops(),
        flops_after: after.flops(),
    }
}

/// Ranks, selects and removes units in every layer. The input network is left untouched.
pub fn prune_network(net: &Network, spec: &PruneSpec) -> Result<(Network, PruneReport)> {
    spec.validate()?;
    let removed = net
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let scores = match spec.method {
                PruneMethod::L1 => unit_l1_scores(layer),
                PruneMethod::Random => vec![0.0; layer.hidden()],
            };
            select_prune_units(&scores, spec, l)
        })
        .collect::<Result<Vec<_>>>()?;
    let pruned = compact(net, &removed)?;
    let report = sparsity_report(net, &pruned, spec, removed);
    Ok((pruned, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CellKind;

    fn l1(amount: f64) -> PruneSpec {
        PruneSpec {
            method: PruneMethod::L1,
            amount,
            seed: 0,
        }
    }

    #[test]
    fn zero_rows_score_zero() {
        let layer = Layer::zeros(CellKind::Lstm, 2, 3);
        assert_eq!(unit_l1_scores(&layer), vec![0.0; 3]);
    }

    #[test]
    fn abs_values_are_summed() {
        let mut l = GruLayer::zeros(2, 2);
        l.w_z = Matrix::from_rows(&[[1.0, -2.0], [0.5, 0.5]]).unwrap();
        let scores = unit_l1_scores(&Layer::Gru(l.clone()));
        assert_eq!(scores, vec![3.0, 1.0]);
        l.w_z.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
        assert_eq!(unit_l1_scores(&Layer::Gru(l)), scores);
    }

    #[test]
    fn l1_selection_examples() {
        let s = [0.1, 5.0, 0.3, 2.0];
        assert_eq!(select_prune_units(&s, &l1(0.25), 0).unwrap(), vec![0]);
        assert_eq!(select_prune_units(&s, &l1(0.5), 0).unwrap(), vec![0, 2]);
        assert_eq!(
            select_prune_units(&[1.0; 64], &l1(0.05), 0).unwrap().len(),
            3
        );
        assert_eq!(
            select_prune_units(&[1.0, 1.0, 1.0], &l1(0.34), 0).unwrap(),
            vec![0]
        );
    }

    #[test]
    fn removal_count_is_floor() {
        assert_eq!(l1(0.05).removal_count(64), 3);
        assert_eq!(l1(0.1).removal_count(64), 6);
        assert_eq!(l1(0.2).removal_count(64), 12);
        assert_eq!(l1(0.29).removal_count(100), 29);
        assert_eq!(l1(0.2).removal_count(10), 2);
    }

    #[test]
    fn invalid_amounts() {
        assert!(select_prune_units(&[1.0; 4], &l1(1.0), 0).is_err());
        assert!(select_prune_units(&[1.0; 4], &l1(-0.1), 0).is_err());
        assert!(matches!(
            select_prune_units(&[1.0], &l1(0.99), 0),
            Ok(v) if v.is_empty()
        ));
    }

    #[test]
    fn random_is_seeded() {
        let spec = PruneSpec {
            method: PruneMethod::Random,
            amount: 0.25,
            seed: 7,
        };
        let a = select_prune_units(&[0.0; 16], &spec, 0).unwrap();
        assert_eq!(a, select_prune_units(&[0.0; 16], &spec, 0).unwrap());
        assert_eq!(a.len(), 4);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn amount_zero_is_identity() {
        let net = Network::new(CellKind::Gru, 3, 5, 2, 4, 1).unwrap();
        let (p, rep) = prune_network(&net, &l1(0.0)).unwrap();
        assert_eq!(p, net);
        assert!(rep.removed.iter().all(Vec::is_empty));
        assert_eq!(rep.params_before, rep.params_after);
        assert_eq!(rep.flops_before, rep.flops_after);
    }

    #[test]
    fn compaction_shrinks_shapes() {
        let net = Network::new(CellKind::Lstm, 3, 8, 2, 4, 1).unwrap();
        let (p, rep) = prune_network(&net, &l1(0.25)).unwrap();
        assert_eq!(p.hidden_sizes(), vec![6, 6]);
        assert_eq!(rep.params_after, p.param_count());
        assert!(rep.params_after < rep.params_before);
        assert_eq!(p.head_w.shape(), (3, 6));
        assert_eq!(p.layers[1].input(), 6);
    }

    #[test]
    fn bad_removal_sets_are_internal_errors() {
        let net = Network::new(CellKind::Gru, 2, 3, 1, 2, 1).unwrap();
        assert!(matches!(compact(&net, &[vec![3]]), Err(Error::Internal(_))));
        assert!(matches!(
            compact(&net, &[vec![1, 1]]),
            Err(Error::Internal(_))
        ));
        assert!(matches!(compact(&net, &[]), Err(Error::Internal(_))));
    }
}
