//! Overlap between top-k dimension sets of different runs, with significance
//! testing and family-wise error control.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{ln_binomial, log_sum_exp};
use crate::rng;
use crate::subset::SubsetSample;

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_PERMUTATIONS: usize = 10_000;

/// Overlap count `|A ∩ B|` and its share of `k`.
pub fn topk_overlap(a: &SubsetSample, b: &SubsetSample) -> Result<(usize, f64)> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!("set sizes differ ({} vs {})", a.len(), b.len())));
    }
    let m = a.indices().iter().filter(|d| b.contains(**d)).count();
    let pct = if a.is_empty() { 0.0 } else { m as f64 / a.len() as f64 };
    Ok((m, pct))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    /// Hypergeometric tail.
    Exact,
    /// Monte Carlo estimate from random k-subsets.
    Permutation { n_perm: usize },
}

fn check_bounds(m: usize, k: usize, d: usize) -> Result<()> {
    if !(m <= k && k <= d) {
        return Err(Error::Domain(format!("need 0 <= m <= k <= D, got m={m}, k={k}, D={d}")));
    }
    Ok(())
}

/// `P(|A ∩ B| >= m)` for independent uniform k-subsets of a D-set.
pub fn hypergeometric_tail(m: usize, k: usize, d: usize) -> Result<f64> {
    check_bounds(m, k, d)?;
    if m == 0 {
        return Ok(1.0);
    }
    let (k64, d64) = (k as u64, d as u64);
    let denom = ln_binomial(d64, k64);
    let lo = m.max((2 * k).saturating_sub(d));
    if lo > k {
        return Ok(0.0);
    }
    let terms: Vec<f64> = (lo..=k)
        .map(|j| ln_binomial(k64, j as u64) + ln_binomial(d64 - k64, (k - j) as u64) - denom)
        .collect();
    Ok(log_sum_exp(&terms).exp().min(1.0))
}

/// Fraction of `n_perm` random k-subsets that overlap a fixed k-subset in at
/// least `m` elements.
pub fn permutation_tail<R: Rng + ?Sized>(m: usize, k: usize, d: usize, n_perm: usize, rng: &mut R) -> Result<f64> {
    check_bounds(m, k, d)?;
    if n_perm == 0 {
        return Err(Error::Domain("n_perm must be at least 1".into()));
    }
    let hits = (0..n_perm)
        .filter(|_| index::sample(rng, d, k).iter().filter(|&i| i < k).count() >= m)
        .count();
    Ok(hits as f64 / n_perm as f64)
}

pub fn overlap_pvalue<R: Rng + ?Sized>(m: usize, k: usize, d: usize, method: PValueMethod, rng: &mut R) -> Result<f64> {
    match method {
        PValueMethod::Exact => hypergeometric_tail(m, k, d),
        PValueMethod::Permutation { n_perm } => permutation_tail(m, k, d, n_perm, rng),
    }
}

/// Holm's step-down procedure. Returns reject flags in input order.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("p-value {p} outside [0, 1]")));
    }
    let t = p_values.len();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut reject = vec![false; t];
    for (i, &idx) in order.iter().enumerate() {
        if p_values[idx] <= alpha / (t - i) as f64 {
            reject[idx] = true;
        } else {
            break;
        }
    }
    Ok(reject)
}

/// Top-k dimensions of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSelection {
    pub name: String,
    /// Size of the dimension universe.
    pub universe: usize,
    /// Dimensions in selection order.
    pub dims: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapResult {
    pub run_a: String,
    pub run_b: String,
    pub k: usize,
    pub universe: usize,
    pub m: usize,
    pub pct: f64,
    pub p_raw: f64,
    pub reject: bool,
}

/// Scores every unordered pair of runs and applies Holm's procedure across
/// all pairs. Pair `i` draws from RNG stream `i` of `seed`.
pub fn overlap_matrix(
    runs: &[RunSelection],
    k: usize,
    alpha: f64,
    method: PValueMethod,
    seed: u64,
) -> Result<Vec<OverlapResult>> {
    if let Some(first) = runs.first() {
        if let Some(r) = runs.iter().find(|r| r.universe != first.universe) {
            return Err(Error::Domain(format!(
                "run {:?} has |D|={} but run {:?} has |D|={}",
                r.name, r.universe, first.name, first.universe
            )));
        }
    }
    let mut tops = Vec::with_capacity(runs.len());
    for r in runs {
        if r.dims.len() < k {
            return Err(Error::Domain(format!(
                "run {:?} selected {} dims, fewer than k={k}",
                r.name,
                r.dims.len()
            )));
        }
        tops.push(SubsetSample::from_unsorted(r.dims[..k].to_vec(), r.universe)?);
    }
    let pairs: Vec<(usize, usize)> = (0..runs.len())
        .flat_map(|i| (i + 1..runs.len()).map(move |j| (i, j)))
        .collect();
    let scored: Vec<(usize, f64, f64)> = pairs
        .par_iter()
        .enumerate()
        .map(|(pi, &(i, j))| {
            let (m, pct) = topk_overlap(&tops[i], &tops[j])?;
            let mut r = rng::stream(seed, pi as u64);
            let p = overlap_pvalue(m, k, runs[i].universe, method, &mut r)?;
            Ok((m, pct, p))
        })
        .collect::<Result<_>>()?;
    let p_values: Vec<f64> = scored.iter().map(|s| s.2).collect();
    let reject = holm_bonferroni(&p_values, alpha)?;
    Ok(pairs
        .iter()
        .zip(scored)
        .zip(reject)
        .map(|((&(i, j), (m, pct, p_raw)), reject)| OverlapResult {
            run_a: runs[i].name.clone(),
            run_b: runs[j].name.clone(),
            k,
            universe: runs[i].universe,
            m,
            pct,
            p_raw,
            reject,
        })
        .collect())
}

/// Symmetric matrix TSV: both `(a, b)` and `(b, a)` for every pair.
pub fn overlap_tsv(results: &[OverlapResult]) -> String {
    let mut out = String::from("run_a\trun_b\tm\tpct\tp_raw\treject\n");
    for r in results {
        for (a, b) in [(&r.run_a, &r.run_b), (&r.run_b, &r.run_a)] {
            out.push_str(&format!("{a}\t{b}\t{}\t{}\t{}\t{}\n", r.m, r.pct, r.p_raw, r.reject));
        }
    }
    out
}
