//! Exhaustive cut-set statistics for small graphs: the counts `N_k` of vertex
//! subsets with boundary at most `k`, the growth exponents `α`, and the
//! cross-cut statistic `β^K`.
//!
//! Everything here enumerates subsets and is only meant for toy instances.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::graphs::{degree_stats, walk_subsets, Graph};

pub const COUNT_MAX_N: usize = 22;
pub const BETA_MAX_N: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CutMetricsError {
    #[error("graph has {n} vertices, enumeration limit is {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("graph must be connected")]
    NotConnected,
    #[error("K must be positive and finite, got {0}")]
    BadK(f64),
}

fn guard(g: &Graph, limit: usize) -> Result<(), CutMetricsError> {
    if g.n() > limit {
        Err(CutMetricsError::TooLarge { n: g.n(), limit })
    } else {
        Ok(())
    }
}

/// Histogram of `|∂S|` over all `2^n` subsets.
pub fn boundary_histogram(g: &Graph) -> Result<Vec<u64>, CutMetricsError> {
    guard(g, COUNT_MAX_N)?;
    let mut hist = vec![0u64; g.m() + 1];
    let universe = if g.n() == 0 { 0 } else { (1u64 << g.n()) - 1 };
    walk_subsets(&g.adjacency_masks(), universe, |_, _, b| hist[b] += 1);
    Ok(hist)
}

fn cumulative(hist: &[u64]) -> Vec<u64> {
    hist.iter()
        .scan(0u64, |acc, &c| {
            *acc += c;
            Some(*acc)
        })
        .collect()
}

fn n_at(cum: &[u64], k: i64) -> u64 {
    if k < 0 {
        0
    } else {
        cum[(k as usize).min(cum.len() - 1)]
    }
}

/// `N_k = |{S ⊆ V : |∂S| ≤ k}|`, counting both `∅` and `V`.
pub fn count_nk(g: &Graph, k: i64) -> Result<u64, CutMetricsError> {
    let cum = cumulative(&boundary_histogram(g)?);
    Ok(n_at(&cum, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaExponents {
    pub alpha_lb: f64,
    pub alpha_ub: f64,
    /// Largest `k` used for the lower (`d_min`) and upper (`d_max`) maxima.
    pub k_max_lb: usize,
    pub k_max_ub: usize,
}

/// `max_k ln(N_{k·d}) / k` for `d = d_min` and `d = d_max`, over
/// `k ∈ [1, ceil(|E| / d)]`. Past that range `N` is saturated at `2^n`.
pub fn alpha_exponents(g: &Graph) -> Result<AlphaExponents, CutMetricsError> {
    guard(g, COUNT_MAX_N)?;
    if g.n() < 2 || !g.is_connected() {
        return Err(CutMetricsError::NotConnected);
    }
    let cum = cumulative(&boundary_histogram(g)?);
    let deg = degree_stats(g);
    let m = g.m();
    let exponent = |d: usize| -> (f64, usize) {
        let k_max = m.div_ceil(d);
        let best = (1..=k_max)
            .map(|k| (n_at(&cum, (k * d) as i64) as f64).ln() / k as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        (best, k_max)
    };
    let (alpha_lb, k_max_lb) = exponent(deg.d_min);
    let (alpha_ub, k_max_ub) = exponent(deg.d_max);
    Ok(AlphaExponents {
        alpha_lb,
        alpha_ub,
        k_max_lb,
        k_max_ub,
    })
}

/// Literal `β^K`: over proper nonempty `S` with `|∂S| / (|S| d_min) ≤ K`, the
/// largest number of `S₁ ⊆ S` with `|E(S₁, S∖S₁)| / (|S| d_min) ≥ (K−3)/K`.
pub fn beta_metric(g: &Graph, k: f64) -> Result<u64, CutMetricsError> {
    guard(g, BETA_MAX_N)?;
    if !(k > 0.0 && k.is_finite()) {
        return Err(CutMetricsError::BadK(k));
    }
    let d_min = degree_stats(g).d_min;
    if g.n() < 2 || d_min == 0 {
        return Err(CutMetricsError::NotConnected);
    }
    let n = g.n();
    let full = (1u64 << n) - 1;
    let masks = g.adjacency_masks();
    let threshold = (k - 3.0) / k;
    let mut qualifying = Vec::new();
    walk_subsets(&masks, full, |s, size, b| {
        if s != 0 && s != full && (b as f64) <= k * (size as f64) * d_min as f64 {
            qualifying.push((s, size));
        }
    });
    let mut best = 0u64;
    for (s, size) in qualifying {
        let scale = size as f64 * d_min as f64;
        let mut count = 0u64;
        walk_subsets(&masks, s, |_, _, cross| {
            if cross as f64 >= threshold * scale {
                count += 1;
            }
        });
        best = best.max(count);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutMetricsReport {
    pub nk_table: BTreeMap<usize, u64>,
    pub alpha_lb: f64,
    pub alpha_ub: f64,
    /// `None` when the graph is above the `β` enumeration limit.
    pub beta: Option<u64>,
    pub k_used: f64,
    pub k_range_used: (usize, usize),
    pub log_base: &'static str,
}

pub fn cut_metrics_report(g: &Graph, k: f64) -> Result<CutMetricsReport, CutMetricsError> {
    let hist = boundary_histogram(g)?;
    let alpha = alpha_exponents(g)?;
    let beta = if g.n() <= BETA_MAX_N {
        Some(beta_metric(g, k)?)
    } else {
        None
    };
    let nk_table = cumulative(&hist).into_iter().enumerate().collect();
    Ok(CutMetricsReport {
        nk_table,
        alpha_lb: alpha.alpha_lb,
        alpha_ub: alpha.alpha_ub,
        beta,
        k_used: k,
        k_range_used: (1, alpha.k_max_lb.max(alpha.k_max_ub)),
        log_base: "e",
    })
}
