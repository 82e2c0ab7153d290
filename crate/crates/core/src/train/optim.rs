//! First-order gradient descent and limited-memory BFGS.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, norm2};
use crate::model::Network;
use crate::train::backprop::GradientSet;

/// `weight ← weight − α · gradient` on every parameter block.
pub fn gd_step(net: &mut Network, grads: &GradientSet, learning_rate: f64) {
    for (w, g) in net.blocks_mut().into_iter().zip(grads.blocks()) {
        gd_step_slice(w, g, learning_rate);
    }
}

pub fn gd_step_slice(params: &mut [f64], grads: &[f64], learning_rate: f64) {
    axpy(-learning_rate, grads, params);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    /// Number of (s, y) curvature pairs kept.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    /// Step shrink factor per backtrack.
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iters: 100,
            tol: 1e-6,
            c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start and after every accepted step; non-increasing.
    pub trace: Vec<f64>,
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Inverse-Hessian-times-gradient estimate from the stored pairs (two-loop recursion).
fn two_loop(history: &VecDeque<Pair>, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for p in history.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        axpy(-a, &p.y, &mut q);
        alphas.push(a);
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (p, a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        axpy(a - b, &p.s, &mut q);
    }
    q
}

/// Minimizes `objective` (returning value and gradient) from `start`.
///
/// Search directions come from the two-loop recursion over the last
/// `opts.memory` curvature pairs; steps are accepted by Armijo backtracking.
/// Pairs failing the curvature condition `sᵀy > 0` are discarded.
pub fn lbfgs_minimize<F>(
    mut objective: F,
    start: Vec<f64>,
    opts: &LbfgsOptions,
) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if opts.memory < 1 {
        return Err(Error::config("L-BFGS memory must be at least 1"));
    }
    let mut x = start;
    let (mut fx, mut g) = objective(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("in L-BFGS objective at the starting point"));
    }
    let mut trace = vec![fx];
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut gnorm = norm2(&g);

    while iterations < opts.max_iters {
        if gnorm < opts.tol {
            break;
        }
        let mut d: Vec<f64> = if history.is_empty() {
            // No curvature yet: steepest descent with a unit-length first trial step.
            let s = 1.0 / gnorm.max(1.0);
            g.iter().map(|v| -v * s).collect()
        } else {
            two_loop(&history, &g).into_iter().map(|v| -v).collect()
        };
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            let s = 1.0 / gnorm.max(1.0);
            d = g.iter().map(|v| -v * s).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let mut xn = x.clone();
            axpy(step, &d, &mut xn);
            match objective(&xn) {
                Ok((fnew, gnew))
                    if fnew.is_finite()
                        && gnew.iter().all(|v| v.is_finite())
                        && fnew <= fx + opts.c1 * step * slope =>
                {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
                Ok(_) | Err(Error::Numeric { .. }) => step *= opts.backtrack,
                Err(e) => return Err(e),
            }
        }
        let Some((xn, fnew, gnew)) = accepted else {
            return Err(Error::Stall {
                iterations,
                best: x,
                best_value: fx,
            });
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back(Pair {
                s,
                y,
                rho: 1.0 / sy,
            });
        }
        x = xn;
        fx = fnew;
        g = gnew;
        gnorm = norm2(&g);
        trace.push(fx);
        iterations += 1;
    }

    Ok(LbfgsOutcome {
        converged: gnorm < opts.tol,
        x,
        value: fx,
        grad_norm: gnorm,
        iterations,
        trace,
    })
}
