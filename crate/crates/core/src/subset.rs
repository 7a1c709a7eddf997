//! Distributions over subsets of representation dimensions.
//!
//! Two families are supported, both parameterized by one real `phi_d` per
//! dimension with weight `w_d = exp(phi_d)`:
//!
//! - **Poisson sampling**: each dimension is an independent coin with heads
//!   probability `w_d / (1 + w_d)`.
//! - **Conditional Poisson sampling**: a size `k` is drawn uniformly from a
//!   support (default `1..=|D|`), then a size-`k` subset with probability
//!   proportional to `prod_{d in C} w_d`. The normalizer is the elementary
//!   symmetric polynomial `e_k(w)`, computed by an `O(k|D|)` dynamic program.
//!
//! All arithmetic on subset probabilities happens in log space.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_add_exp, sigmoid, softplus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Poisson,
    CondPoisson,
}

impl std::str::FromStr for FamilyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "poisson" => Ok(FamilyKind::Poisson),
            "cond_poisson" | "cond-poisson" => Ok(FamilyKind::CondPoisson),
            other => Err(format!("unknown family {other:?}")),
        }
    }
}

/// A subset of `{0, .., |D|-1}`, stored as strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubsetSample(Vec<usize>);

impl SubsetSample {
    /// Validates that `indices` are strictly increasing and below `dim`.
    pub fn new(indices: Vec<usize>, dim: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("subset indices must be strictly increasing".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(Error::Domain(format!("index {last} out of range for |D|={dim}")));
            }
        }
        Ok(SubsetSample(indices))
    }

    /// Sorts and de-duplicates before validating.
    pub fn from_unsorted(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        SubsetSample::new(indices, dim)
    }

    pub fn full(dim: usize) -> Self {
        SubsetSample((0..dim).collect())
    }

    pub fn empty() -> Self {
        SubsetSample(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, d: usize) -> bool {
        self.0.binary_search(&d).is_ok()
    }

    /// Membership indicator of length `dim`.
    pub fn mask(&self, dim: usize) -> Vec<bool> {
        let mut m = vec![false; dim];
        for &d in &self.0 {
            m[d] = true;
        }
        m
    }

    /// Enumerates all `2^dim` subsets in binary-counting order.
    pub fn enumerate_all(dim: usize) -> impl Iterator<Item = SubsetSample> {
        assert!(dim < 31, "enumeration limited to small universes");
        (0u32..(1u32 << dim)).map(move |bits| {
            SubsetSample((0..dim).filter(|&d| bits >> d & 1 == 1).collect())
        })
    }
}

/// Variational parameters of a subset family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetFamilyParams {
    pub kind: FamilyKind,
    pub phi: Vec<f64>,
    /// Support of the uniform size distribution; only used by conditional
    /// Poisson.
    pub sizes: Vec<usize>,
}

impl SubsetFamilyParams {
    pub fn new(kind: FamilyKind, phi: Vec<f64>) -> Result<Self> {
        let d = phi.len();
        match kind {
            FamilyKind::Poisson => Self::poisson(phi),
            FamilyKind::CondPoisson => Self::cond_poisson_with_sizes(phi, (1..=d).collect()),
        }
    }

    pub fn poisson(phi: Vec<f64>) -> Result<Self> {
        validate_phi(&phi)?;
        Ok(SubsetFamilyParams {
            kind: FamilyKind::Poisson,
            phi,
            sizes: Vec::new(),
        })
    }

    /// Conditional Poisson with sizes uniform over `1..=|D|`.
    pub fn cond_poisson(phi: Vec<f64>) -> Result<Self> {
        let d = phi.len();
        Self::cond_poisson_with_sizes(phi, (1..=d).collect())
    }

    pub fn cond_poisson_with_sizes(phi: Vec<f64>, mut sizes: Vec<usize>) -> Result<Self> {
        validate_phi(&phi)?;
        sizes.sort_unstable();
        sizes.dedup();
        if sizes.is_empty() {
            return Err(Error::Domain("size support is empty".into()));
        }
        if sizes.iter().any(|&k| k > phi.len()) {
            return Err(Error::Domain(format!("size support exceeds |D|={}", phi.len())));
        }
        Ok(SubsetFamilyParams {
            kind: FamilyKind::CondPoisson,
            phi,
            sizes,
        })
    }

    pub fn dim(&self) -> usize {
        self.phi.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.phi.iter().map(|p| p.exp()).collect()
    }

    pub fn log_prob(&self, c: &SubsetSample) -> Result<f64> {
        check_in_range(c, self.dim())?;
        Ok(self.prepare().log_prob(c))
    }

    pub fn entropy(&self) -> f64 {
        match self.kind {
            FamilyKind::Poisson => poisson_entropy_unchecked(&self.phi),
            FamilyKind::CondPoisson => ExpectationTable::new(&self.phi).family_entropy(&self.sizes),
        }
    }

    /// Gradient of [`entropy`](Self::entropy) with respect to `phi`.
    pub fn grad_entropy(&self) -> Vec<f64> {
        match self.kind {
            FamilyKind::Poisson => self
                .phi
                .iter()
                .map(|&p| {
                    let s = sigmoid(p);
                    -s * (1.0 - s) * p
                })
                .collect(),
            FamilyKind::CondPoisson => {
                ExpectationTable::new(&self.phi).family_entropy_grad(&self.phi, &self.sizes)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SubsetSample {
        self.prepare().sample(rng)
    }

    /// Precomputes the tables needed for repeated sampling, scoring and
    /// log-probabilities under fixed parameters.
    pub fn prepare(&self) -> PreparedFamily<'_> {
        let inner = match self.kind {
            FamilyKind::Poisson => Prepared::Poisson {
                probs: self.phi.iter().map(|&p| sigmoid(p)).collect(),
                log_norm: self.phi.iter().map(|&p| softplus(p)).sum(),
            },
            FamilyKind::CondPoisson => {
                let prefix = log_esp_prefix_table(&self.phi);
                let suffix = log_esp_suffix_table(&self.phi);
                Prepared::CondPoisson {
                    inclusion: (0..=self.dim()).map(|_| OnceLock::new()).collect(),
                    prefix,
                    suffix,
                }
            }
        };
        PreparedFamily { params: self, inner }
    }
}

fn validate_phi(phi: &[f64]) -> Result<()> {
    if phi.is_empty() {
        return Err(Error::Domain("|D| must be at least 1".into()));
    }
    if phi.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("phi must be finite".into()));
    }
    Ok(())
}

fn check_in_range(c: &SubsetSample, dim: usize) -> Result<()> {
    match c.indices().last() {
        Some(&d) if d >= dim => Err(Error::Domain(format!("index {d} out of range for |D|={dim}"))),
        _ => Ok(()),
    }
}

fn require_kind(params: &SubsetFamilyParams, kind: FamilyKind) -> Result<()> {
    if params.kind == kind {
        Ok(())
    } else {
        Err(Error::Domain(format!("expected a {kind:?} family, got {:?}", params.kind)))
    }
}

pub struct PreparedFamily<'a> {
    params: &'a SubsetFamilyParams,
    inner: Prepared,
}

enum Prepared {
    Poisson {
        probs: Vec<f64>,
        log_norm: f64,
    },
    CondPoisson {
        /// `prefix[j][i] = log e_i(w_0, .., w_{j-1})`
        prefix: Vec<Vec<f64>>,
        /// `suffix[j][i] = log e_i(w_j, .., w_{D-1})`
        suffix: Vec<Vec<f64>>,
        /// First-order inclusion probabilities per size, filled on demand.
        inclusion: Vec<OnceLock<Vec<f64>>>,
    },
}

impl PreparedFamily<'_> {
    pub fn params(&self) -> &SubsetFamilyParams {
        self.params
    }

    /// Log-probability of `c`; `-inf` when `c` lies outside the support.
    /// Indices must be in range.
    pub fn log_prob(&self, c: &SubsetSample) -> f64 {
        let phi = &self.params.phi;
        let sum_phi: f64 = c.indices().iter().map(|&d| phi[d]).sum();
        match &self.inner {
            Prepared::Poisson { log_norm, .. } => sum_phi - log_norm,
            Prepared::CondPoisson { prefix, .. } => {
                let k = c.len();
                if self.params.sizes.binary_search(&k).is_err() {
                    return f64::NEG_INFINITY;
                }
                -(self.params.sizes.len() as f64).ln() + sum_phi - prefix[phi.len()][k]
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SubsetSample {
        match &self.inner {
            Prepared::Poisson { probs, .. } => SubsetSample(
                probs
                    .iter()
                    .enumerate()
                    .filter_map(|(d, &p)| (rng.random::<f64>() < p).then_some(d))
                    .collect(),
            ),
            Prepared::CondPoisson { suffix, .. } => {
                let sizes = &self.params.sizes;
                let k = sizes[rng.random_range(0..sizes.len())];
                sample_fixed_size(&self.params.phi, suffix, k, rng)
            }
        }
    }

    /// Probability that dimension `d` is in a sample, per dimension.
    /// For conditional Poisson this is conditional on size `k`.
    pub fn inclusion_probs(&self, k: usize) -> &[f64] {
        match &self.inner {
            Prepared::Poisson { probs, .. } => probs,
            Prepared::CondPoisson {
                prefix,
                suffix,
                inclusion,
            } => inclusion[k].get_or_init(|| inclusion_for_size(&self.params.phi, prefix, suffix, k)),
        }
    }

    /// Adds `scale * grad_phi log q(c)` into `out`.
    pub fn add_score(&self, c: &SubsetSample, scale: f64, out: &mut [f64]) {
        let probs = self.inclusion_probs(c.len());
        for (o, p) in out.iter_mut().zip(probs) {
            *o -= scale * p;
        }
        for &d in c.indices() {
            out[d] += scale;
        }
    }
}

// ---------------------------------------------------------------------------
// Poisson sampling
// ---------------------------------------------------------------------------

fn poisson_entropy_unchecked(phi: &[f64]) -> f64 {
    phi.iter().map(|&p| softplus(p) - sigmoid(p) * p).sum()
}

/// `log q(C)` under Poisson sampling.
pub fn poisson_log_prob(params: &SubsetFamilyParams, c: &SubsetSample) -> Result<f64> {
    require_kind(params, FamilyKind::Poisson)?;
    params.log_prob(c)
}

/// Closed-form entropy `log Z - sum_d w_d/(1+w_d) log w_d`.
pub fn poisson_entropy(params: &SubsetFamilyParams) -> Result<f64> {
    require_kind(params, FamilyKind::Poisson)?;
    Ok(poisson_entropy_unchecked(&params.phi))
}

pub fn poisson_sample<R: Rng + ?Sized>(params: &SubsetFamilyParams, rng: &mut R) -> Result<SubsetSample> {
    require_kind(params, FamilyKind::Poisson)?;
    Ok(params.sample(rng))
}

// ---------------------------------------------------------------------------
// Conditional Poisson sampling
// ---------------------------------------------------------------------------

/// `log e_i(w_0..w_{j-1})` for every `j <= D`, `i <= D`, with `w = exp(log_w)`.
fn log_esp_prefix_table(log_w: &[f64]) -> Vec<Vec<f64>> {
    let d = log_w.len();
    let mut table = vec![vec![f64::NEG_INFINITY; d + 1]; d + 1];
    table[0][0] = 0.0;
    for j in 1..=d {
        let lw = log_w[j - 1];
        table[j][0] = 0.0;
        for i in 1..=j {
            table[j][i] = log_add_exp(table[j - 1][i], lw + table[j - 1][i - 1]);
        }
    }
    table
}

/// `log e_i(w_j..w_{D-1})` for every `j <= D`.
fn log_esp_suffix_table(log_w: &[f64]) -> Vec<Vec<f64>> {
    let d = log_w.len();
    let mut table = vec![vec![f64::NEG_INFINITY; d + 1]; d + 1];
    table[d][0] = 0.0;
    for j in (0..d).rev() {
        let lw = log_w[j];
        table[j][0] = 0.0;
        for i in 1..=(d - j) {
            table[j][i] = log_add_exp(table[j + 1][i], lw + table[j + 1][i - 1]);
        }
    }
    table
}

/// `log e_k(w)` for `w = exp(log_weights)`, in `O(k|D|)`.
pub fn log_cp_partition(log_weights: &[f64], k: usize) -> Result<f64> {
    let d = log_weights.len();
    if k > d {
        return Err(Error::Domain(format!("k={k} exceeds |D|={d}")));
    }
    let mut row = vec![f64::NEG_INFINITY; k + 1];
    row[0] = 0.0;
    for (j, &lw) in log_weights.iter().enumerate() {
        for i in (1..=k.min(j + 1)).rev() {
            row[i] = log_add_exp(row[i], lw + row[i - 1]);
        }
    }
    Ok(row[k])
}

/// Elementary symmetric polynomial `e_k(w)`, the conditional Poisson
/// normalizer. Evaluated in log space; only the final value is exponentiated.
pub fn cp_partition(weights: &[f64], k: usize) -> Result<f64> {
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::Domain("weights must be positive and finite".into()));
    }
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    Ok(log_cp_partition(&log_w, k)?.exp())
}

/// `log q(C)` under conditional Poisson; `-inf` when `|C|` is outside the
/// size support.
pub fn cp_log_prob(params: &SubsetFamilyParams, c: &SubsetSample) -> Result<f64> {
    require_kind(params, FamilyKind::CondPoisson)?;
    params.log_prob(c)
}

/// Entropy of the fixed-size conditional Poisson design `q(C | |C| = k)`.
pub fn cp_entropy_fixed_k(weights: &[f64], k: usize) -> Result<f64> {
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::Domain("weights must be positive and finite".into()));
    }
    if k > weights.len() {
        return Err(Error::Domain(format!("k={k} exceeds |D|={}", weights.len())));
    }
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    Ok(ExpectationTable::new(&log_w).entropy_at(k))
}

/// Entropy of the full conditional Poisson family, including the size
/// distribution.
pub fn cp_family_entropy(params: &SubsetFamilyParams) -> Result<f64> {
    require_kind(params, FamilyKind::CondPoisson)?;
    Ok(params.entropy())
}

pub fn cp_sample<R: Rng + ?Sized>(params: &SubsetFamilyParams, rng: &mut R) -> Result<SubsetSample> {
    require_kind(params, FamilyKind::CondPoisson)?;
    Ok(params.sample(rng))
}

/// Draws a size-`k` subset with probability proportional to the product of
/// its weights, scanning dimensions in order.
pub fn cp_sample_fixed_size<R: Rng + ?Sized>(
    params: &SubsetFamilyParams,
    k: usize,
    rng: &mut R,
) -> Result<SubsetSample> {
    if k > params.dim() {
        return Err(Error::Domain(format!("k={k} exceeds |D|={}", params.dim())));
    }
    let suffix = log_esp_suffix_table(&params.phi);
    Ok(sample_fixed_size(&params.phi, &suffix, k, rng))
}

fn sample_fixed_size<R: Rng + ?Sized>(
    log_w: &[f64],
    suffix: &[Vec<f64>],
    k: usize,
    rng: &mut R,
) -> SubsetSample {
    let d = log_w.len();
    let mut out = Vec::with_capacity(k);
    let mut need = k;
    for j in 0..d {
        if need == 0 {
            break;
        }
        if d - j == need {
            out.extend(j..d);
            break;
        }
        let p = (log_w[j] + suffix[j + 1][need - 1] - suffix[j][need]).exp();
        if rng.random::<f64>() < p {
            out.push(j);
            need -= 1;
        }
    }
    SubsetSample(out)
}

fn inclusion_for_size(log_w: &[f64], prefix: &[Vec<f64>], suffix: &[Vec<f64>], k: usize) -> Vec<f64> {
    let d = log_w.len();
    if k == 0 {
        return vec![0.0; d];
    }
    let log_z = prefix[d][k];
    (0..d)
        .map(|j| {
            // size-(k-1) subsets of the other dimensions, split between the
            // prefix before j and the suffix after j
            let after = d - j - 1;
            let lo = (k - 1).saturating_sub(after);
            let hi = j.min(k - 1);
            let mut acc = f64::NEG_INFINITY;
            for i in lo..=hi {
                acc = log_add_exp(acc, prefix[j][i] + suffix[j + 1][k - 1 - i]);
            }
            (log_w[j] + acc - log_z).exp().min(1.0)
        })
        .collect()
}

/// Log elementary symmetric polynomials paired with the conditional mean of
/// `sum_{d in C} log w_d` (the expectation-semiring component, kept in
/// normalized form so it stays well scaled).
struct ExpectationTable {
    /// `log_e[j][i] = log e_i(w_0..w_{j-1})`
    log_e: Vec<Vec<f64>>,
    /// `mean[j][i] = E[sum_{d in C} log w_d]` over size-`i` subsets of the
    /// first `j` dimensions
    mean: Vec<Vec<f64>>,
}

impl ExpectationTable {
    fn new(log_w: &[f64]) -> Self {
        let d = log_w.len();
        let log_e = log_esp_prefix_table(log_w);
        let mut mean = vec![vec![0.0; d + 1]; d + 1];
        for j in 1..=d {
            let lw = log_w[j - 1];
            for i in 1..=j {
                let with = lw + log_e[j - 1][i - 1] - log_e[j][i];
                let b = with.exp();
                let a = if i == j {
                    0.0
                } else {
                    (log_e[j - 1][i] - log_e[j][i]).exp()
                };
                let keep = if i == j { 0.0 } else { a * mean[j - 1][i] };
                mean[j][i] = keep + b * (mean[j - 1][i - 1] + lw);
            }
        }
        ExpectationTable { log_e, mean }
    }

    fn entropy_at(&self, k: usize) -> f64 {
        let d = self.log_e.len() - 1;
        self.log_e[d][k] - self.mean[d][k]
    }

    fn family_entropy(&self, sizes: &[usize]) -> f64 {
        let m = sizes.len() as f64;
        m.ln() + sizes.iter().map(|&k| self.entropy_at(k)).sum::<f64>() / m
    }

    /// Reverse-mode derivative of [`family_entropy`](Self::family_entropy).
    fn family_entropy_grad(&self, log_w: &[f64], sizes: &[usize]) -> Vec<f64> {
        let d = log_w.len();
        let m = sizes.len() as f64;
        let mut g_log_e = vec![vec![0.0; d + 1]; d + 1];
        let mut g_mean = vec![vec![0.0; d + 1]; d + 1];
        for &k in sizes {
            g_log_e[d][k] += 1.0 / m;
            g_mean[d][k] -= 1.0 / m;
        }
        let mut grad = vec![0.0; d];
        for j in (1..=d).rev() {
            let lw = log_w[j - 1];
            for i in 1..=j {
                let ge = g_log_e[j][i];
                let gm = g_mean[j][i];
                if ge == 0.0 && gm == 0.0 {
                    continue;
                }
                let b = (lw + self.log_e[j - 1][i - 1] - self.log_e[j][i]).exp();
                let (a, c) = if i == j {
                    (0.0, 0.0)
                } else {
                    let a = (self.log_e[j - 1][i] - self.log_e[j][i]).exp();
                    let delta = self.mean[j - 1][i] - self.mean[j - 1][i - 1] - lw;
                    (a, a * b * delta)
                };
                if i < j {
                    g_log_e[j - 1][i] += ge * a + gm * c;
                    g_mean[j - 1][i] += gm * a;
                }
                g_log_e[j - 1][i - 1] += ge * b - gm * c;
                g_mean[j - 1][i - 1] += gm * b;
                grad[j - 1] += ge * b + gm * (b - c);
            }
        }
        grad
    }
}

/// Gradient of the family entropy with respect to `phi`.
pub fn family_grad_phi_entropy(params: &SubsetFamilyParams) -> Vec<f64> {
    params.grad_entropy()
}
