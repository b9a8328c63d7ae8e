//! Independent oracles shared by the integration tests. Nothing here calls the
//! library routine it is used to check.
#![allow(dead_code)]

use chrono::NaiveDate;
use rand::Rng;
use sharpefolio::autodiff::{Graph, Mode, ParameterSet, Tensor};
use sharpefolio::models::ModelConfig;
use sharpefolio::rng::{self, site};
use sharpefolio::training::sharpe_loss;

pub const DAYS: f64 = 252.0;

pub fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// `|a - b| <= tol * max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Brute-force versions of the nine metrics.
pub mod oracle {
    use super::DAYS;

    fn mean(x: &[f64]) -> f64 {
        let mut s = 0.0;
        for v in x {
            s += v;
        }
        s / x.len() as f64
    }

    fn pop_std(x: &[f64]) -> f64 {
        let m = mean(x);
        let mut ss = 0.0;
        for v in x {
            ss += (v - m) * (v - m);
        }
        (ss / x.len() as f64).sqrt()
    }

    pub fn sharpe(r: &[f64]) -> Option<f64> {
        let sd = pop_std(r);
        (r.len() >= 2 && sd > 0.0).then(|| mean(r) / sd * DAYS.sqrt())
    }

    pub fn cumulative(r: &[f64]) -> f64 {
        let mut w = 1.0;
        for v in r {
            w *= 1.0 + v;
        }
        w - 1.0
    }

    /// Through the log of wealth rather than the compounded product.
    pub fn annual_return(r: &[f64]) -> f64 {
        let log_wealth: f64 = r.iter().map(|v| v.ln_1p()).sum();
        (log_wealth * DAYS / r.len() as f64).exp_m1()
    }

    pub fn annual_vol(r: &[f64]) -> f64 {
        pop_std(r) * DAYS.sqrt()
    }

    pub fn downside(r: &[f64]) -> f64 {
        let mut ss = 0.0;
        for v in r {
            if *v < 0.0 {
                ss += v * v;
            }
        }
        (ss / r.len() as f64).sqrt() * DAYS.sqrt()
    }

    pub fn sortino(r: &[f64]) -> Option<f64> {
        let d = downside(r);
        (d > 0.0).then(|| annual_return(r) / d)
    }

    /// Quadratic scan over every (peak, trough) pair.
    pub fn max_drawdown(r: &[f64]) -> f64 {
        let mut wealth = vec![1.0];
        for v in r {
            let last = *wealth.last().unwrap();
            wealth.push(last * (1.0 + v));
        }
        let mut worst: f64 = 0.0;
        for t in 1..wealth.len() {
            for s in 0..=t {
                worst = worst.max(1.0 - wealth[t] / wealth[s]);
            }
        }
        worst
    }

    pub fn pct_positive(r: &[f64]) -> f64 {
        r.iter().filter(|v| **v > 0.0).count() as f64 / r.len() as f64
    }

    pub fn profit_over_loss(r: &[f64]) -> Option<f64> {
        let pos: Vec<f64> = r.iter().copied().filter(|v| *v > 0.0).collect();
        let neg: Vec<f64> = r.iter().copied().filter(|v| *v < 0.0).collect();
        (!pos.is_empty() && !neg.is_empty()).then(|| mean(&pos) / mean(&neg).abs())
    }
}

/// Exact two-sided Mann-Whitney p-value for untied data by enumerating every
/// assignment of the pooled ranks to the first sample.
pub fn exact_mw_p(rank_a: &[usize], n: usize) -> f64 {
    let n1 = rank_a.len();
    let u_of = |ranks: &[usize]| ranks.iter().sum::<usize>() as f64 - (n1 * (n1 + 1)) as f64 / 2.0;
    let mu = (n1 * (n - n1)) as f64 / 2.0;
    let observed = (u_of(rank_a) - mu).abs();
    let (mut extreme, mut total) = (0usize, 0usize);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let ranks: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| i + 1).collect();
        total += 1;
        if (u_of(&ranks) - mu).abs() >= observed - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

/// Every subset of `0..n` of size `k`, as sorted index lists.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..(1 << n))
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

/// Daily Sharpe (mean over population std) of fixed weights.
pub fn daily_sharpe(rows: &[Vec<f64>], w: &[f64]) -> f64 {
    let port: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum())
        .collect();
    let n = port.len() as f64;
    let m = port.iter().sum::<f64>() / n;
    let v = port.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / n;
    m / v.sqrt()
}

/// Best daily Sharpe over the 0.01 grid of the box-constrained 3-simplex.
pub fn grid_mvo(rows: &[Vec<f64>], floor: f64, cap: f64) -> (f64, [f64; 3]) {
    let (lo, hi) = ((floor * 100.0).round() as i64, (cap * 100.0).round() as i64);
    let mut best = (f64::NEG_INFINITY, [0.0; 3]);
    for a in lo..=hi {
        for b in lo..=hi {
            let c = 100 - a - b;
            if c < lo || c > hi {
                continue;
            }
            let w = [a as f64 / 100.0, b as f64 / 100.0, c as f64 / 100.0];
            let s = daily_sharpe(rows, &w);
            if s > best.0 {
                best = (s, w);
            }
        }
    }
    best
}

pub fn random_tensor<R: Rng>(r: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
}

/// Sharpe loss of `model` on `(x, y)` in eval mode.
pub fn model_loss(model: &ModelConfig, params: &ParameterSet, x: &Tensor, y: &Tensor) -> f64 {
    let mut g = Graph::new();
    let mut unused = rng::stream(0, site::DROPOUT);
    let xv = g.constant(x.clone()).unwrap();
    let yv = g.constant(y.clone()).unwrap();
    let w = model.forward(&mut g, params, xv, Mode::Eval, &mut unused).unwrap();
    let l = sharpe_loss(&mut g, w, yv).unwrap();
    g.value(l).item().unwrap()
}

pub struct GradCheck {
    pub checked: usize,
    pub failures: Vec<String>,
    pub worst_rel: f64,
}

/// Compares the tape gradient of every parameter value with a central finite
/// difference. An entry passes when its relative error is below `rel_tol` or
/// its absolute error is below `abs_floor`.
pub fn grad_check(
    model: &ModelConfig,
    params: &ParameterSet,
    x: &Tensor,
    y: &Tensor,
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> GradCheck {
    let mut p = params.clone();
    p.zero_grads();
    let mut g = Graph::new();
    let mut unused = rng::stream(0, site::DROPOUT);
    let xv = g.constant(x.clone()).unwrap();
    let yv = g.constant(y.clone()).unwrap();
    let w = model.forward(&mut g, &p, xv, Mode::Eval, &mut unused).unwrap();
    let l = sharpe_loss(&mut g, w, yv).unwrap();
    g.backward(l, &mut p).unwrap();

    let names: Vec<String> = p.names().map(String::from).collect();
    let mut out = GradCheck {
        checked: 0,
        failures: Vec::new(),
        worst_rel: 0.0,
    };
    for name in names {
        let analytic = p.grad(&name).unwrap().data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            plus.get_mut(&name).unwrap().data_mut()[i] += h;
            let mut minus = params.clone();
            minus.get_mut(&name).unwrap().data_mut()[i] -= h;
            let numeric = (model_loss(model, &plus, x, y) - model_loss(model, &minus, x, y)) / (2.0 * h);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
            out.checked += 1;
            if abs >= abs_floor {
                out.worst_rel = out.worst_rel.max(rel);
            }
            if !(rel < rel_tol || abs < abs_floor) {
                out.failures.push(format!("{name}[{i}]: tape {a:e}, numeric {numeric:e}, rel {rel:e}"));
            }
        }
    }
    out
}
