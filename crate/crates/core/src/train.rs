//! Joint training of a probe and a subset distribution.
//!
//! The objective is the variational lower bound
//!
//! ```text
//! ELBO = mean_n E_{C ~ q}[log p(pi_n | h_n, C)] + entropy_scale * H(q)
//! ```
//!
//! estimated with `M` Monte Carlo subsets per row. Probe gradients are the
//! plain Monte Carlo average; subset-family gradients use the score-function
//! estimator without a baseline, plus the analytic entropy gradient. The
//! uniform prior over subsets only adds a constant and is left out of both the
//! gradients and the reported bounds.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{holdout_rows, ReprDataset, Split};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::probe::{elasticnet_grad, Arch, CheckpointHeader, ProbeParams, DEFAULT_HIDDEN};
use crate::rng;
use crate::subset::{FamilyKind, PreparedFamily, SubsetFamilyParams};

const INIT_STREAM: u64 = 3;
const TRAIN_STREAM: u64 = 1;
const HOLDOUT_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Monte Carlo subsets per row.
    pub mc_samples: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Smallest holdout-bound gain that counts as an improvement.
    pub min_delta: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l1: f64,
    pub l2: f64,
    pub entropy_scale: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub family: FamilyKind,
    /// Size support of the conditional Poisson family; `None` means
    /// `1..=|D|`.
    pub sizes: Option<Vec<usize>>,
    /// Train on the full representation only, with no subset distribution.
    pub full_set_mode: bool,
    pub arch: Arch,
    pub hidden: usize,
    /// Fraction of training rows held out for early stopping.
    pub holdout_fraction: f64,
    /// Half-width of the uniform probe initialization.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mc_samples: 5,
            max_epochs: 2000,
            patience: 50,
            min_delta: 1e-4,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l1: 1e-5,
            l2: 1e-5,
            entropy_scale: 0.01,
            batch_size: None,
            seed: 0,
            family: FamilyKind::Poisson,
            sizes: None,
            full_set_mode: false,
            arch: Arch::Linear,
            hidden: DEFAULT_HIDDEN,
            holdout_fraction: 0.1,
            init_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Domain(msg.to_string()));
        if self.mc_samples < 1 {
            return bad("mc_samples must be at least 1");
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be at least 1");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if !(self.entropy_scale >= 0.0) {
            return bad("entropy_scale must be non-negative");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.l1 >= 0.0 && self.l2 >= 0.0) {
            return bad("l1 and l2 must be non-negative");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad("holdout_fraction must lie in (0, 1)");
        }
        if !(self.init_scale >= 0.0) {
            return bad("init_scale must be non-negative");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    fn initial_family(&self, dim: usize) -> Result<SubsetFamilyParams> {
        let phi = vec![0.0; dim];
        match (self.family, &self.sizes) {
            (FamilyKind::Poisson, _) => SubsetFamilyParams::poisson(phi),
            (FamilyKind::CondPoisson, None) => SubsetFamilyParams::cond_poisson(phi),
            (FamilyKind::CondPoisson, Some(s)) => SubsetFamilyParams::cond_poisson_with_sizes(phi, s.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub bound_train: f64,
    pub bound_holdout: f64,
    pub best_so_far: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedProbe {
    pub theta: ProbeParams,
    pub phi: SubsetFamilyParams,
    pub full_set_mode: bool,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub config: TrainConfig,
}

impl TrainedProbe {
    /// Training log as `epoch  bound_train  bound_holdout  best_so_far`.
    pub fn log_tsv(&self) -> String {
        let mut out = String::from("epoch\tbound_train\tbound_holdout\tbest_so_far\n");
        for r in &self.log {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.epoch, r.bound_train, r.bound_holdout, r.best_so_far
            ));
        }
        out
    }

    pub fn checkpoint_header(&self, config_hash: &str) -> CheckpointHeader {
        CheckpointHeader {
            arch: self.theta.arch(),
            input_dim: self.theta.input_dim(),
            hidden: self.theta.hidden(),
            classes: self.theta.classes().to_vec(),
            seed: self.config.seed,
            config_hash: config_hash.to_string(),
            family: (!self.full_set_mode).then(|| self.phi.clone()),
        }
    }
}

/// Where subsets come from during estimation.
#[derive(Clone, Copy)]
enum Sampler<'a> {
    Family(&'a PreparedFamily<'a>),
    FullSet,
}

struct Estimate {
    mean_ll: f64,
    grad_theta: Vec<f64>,
    /// Score-function part of the subset-family gradient.
    grad_phi: Vec<f64>,
}

fn estimate<R: Rng + ?Sized>(
    theta: &ProbeParams,
    sampler: Sampler<'_>,
    ds: &ReprDataset,
    rows: &[usize],
    m: usize,
    rng: &mut R,
    with_grads: bool,
) -> Estimate {
    let scale = 1.0 / (rows.len() * m) as f64;
    let mut grad_theta = if with_grads { vec![0.0; theta.n_params()] } else { Vec::new() };
    let mut grad_phi = match (with_grads, sampler) {
        (true, Sampler::Family(f)) => vec![0.0; f.params().dim()],
        _ => Vec::new(),
    };
    let mut total = 0.0;
    for &r in rows {
        let x = ds.row(r);
        let y = ds.label_index(r);
        for _ in 0..m {
            match sampler {
                Sampler::Family(f) => {
                    let c = f.sample(rng);
                    let ll = if with_grads {
                        theta.log_prob_and_grad(x, Some(c.indices()), y, scale, &mut grad_theta)
                    } else {
                        theta.log_probs_on(x, Some(c.indices()))[y]
                    };
                    if with_grads {
                        f.add_score(&c, ll * scale, &mut grad_phi);
                    }
                    total += ll;
                }
                Sampler::FullSet => {
                    total += if with_grads {
                        theta.log_prob_and_grad(x, None, y, scale, &mut grad_theta)
                    } else {
                        theta.log_probs_on(x, None)[y]
                    };
                }
            }
        }
    }
    Estimate {
        mean_ll: total * scale,
        grad_theta,
        grad_phi,
    }
}

fn check_inputs(theta: &ProbeParams, dim: Option<usize>, ds: &ReprDataset, rows: &[usize], m: usize) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset("batch is empty".into()));
    }
    if m < 1 {
        return Err(Error::Domain("at least one Monte Carlo sample is required".into()));
    }
    if theta.input_dim() != ds.dim() || dim.is_some_and(|d| d != ds.dim()) {
        return Err(Error::Shape(format!(
            "probe, family and dataset dimensions disagree ({}, {:?}, {})",
            theta.input_dim(),
            dim,
            ds.dim()
        )));
    }
    if theta.classes() != ds.classes() {
        return Err(Error::Shape("probe classes differ from dataset classes".into()));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= ds.n_rows()) {
        return Err(Error::Shape(format!("row {r} out of range")));
    }
    Ok(())
}

/// Monte Carlo estimate of the bound on `rows`.
pub fn elbo_estimate<R: Rng + ?Sized>(
    theta: &ProbeParams,
    phi: &SubsetFamilyParams,
    ds: &ReprDataset,
    rows: &[usize],
    m: usize,
    entropy_scale: f64,
    rng: &mut R,
) -> Result<f64> {
    check_inputs(theta, Some(phi.dim()), ds, rows, m)?;
    let prepared = phi.prepare();
    let est = estimate(theta, Sampler::Family(&prepared), ds, rows, m, rng, false);
    Ok(est.mean_ll + entropy_scale * phi.entropy())
}

/// Mean log-likelihood of `rows` with every dimension visible.
pub fn full_set_log_likelihood(theta: &ProbeParams, ds: &ReprDataset, rows: &[usize]) -> Result<f64> {
    check_inputs(theta, None, ds, rows, 1)?;
    Ok(estimate(theta, Sampler::FullSet, ds, rows, 1, &mut rng::seeded(0), false).mean_ll)
}

/// Monte Carlo estimate of the bound's gradient with respect to the probe
/// parameters (penalty not included).
pub fn grad_theta_estimate<R: Rng + ?Sized>(
    theta: &ProbeParams,
    phi: &SubsetFamilyParams,
    ds: &ReprDataset,
    rows: &[usize],
    m: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_inputs(theta, Some(phi.dim()), ds, rows, m)?;
    let prepared = phi.prepare();
    Ok(estimate(theta, Sampler::Family(&prepared), ds, rows, m, rng, true).grad_theta)
}

/// Score-function estimate of the bound's gradient with respect to `phi`,
/// plus `entropy_scale` times the exact entropy gradient.
pub fn grad_phi_estimate<R: Rng + ?Sized>(
    theta: &ProbeParams,
    phi: &SubsetFamilyParams,
    ds: &ReprDataset,
    rows: &[usize],
    m: usize,
    entropy_scale: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_inputs(theta, Some(phi.dim()), ds, rows, m)?;
    let prepared = phi.prepare();
    let mut g = estimate(theta, Sampler::Family(&prepared), ds, rows, m, rng, true).grad_phi;
    if entropy_scale != 0.0 {
        for (gi, hi) in g.iter_mut().zip(phi.grad_entropy()) {
            *gi += entropy_scale * hi;
        }
    }
    Ok(g)
}

/// Rows used for training: the `train` split when splits are present,
/// otherwise every row.
pub fn training_rows(ds: &ReprDataset) -> Vec<usize> {
    match ds.splits() {
        Some(_) => ds.rows_in(Split::Train),
        None => ds.all_rows(),
    }
}

/// Trains a probe and, unless `full_set_mode` is set, a subset distribution.
///
/// A `holdout_fraction` share of the training rows is set aside; the bound on
/// those rows is evaluated after every epoch with the same random subsets each
/// time, and the parameters of the best epoch are returned.
pub fn train_probe(ds: &ReprDataset, config: &TrainConfig) -> Result<TrainedProbe> {
    config.validate()?;
    let rows = training_rows(ds);
    if rows.is_empty() {
        return Err(Error::EmptyDataset("no training rows".into()));
    }
    let (fit, hold) = holdout_rows(&rows, config.holdout_fraction, config.seed);
    if fit.is_empty() || hold.is_empty() {
        return Err(Error::EmptyDataset(
            "too few training rows to carve out a holdout set".into(),
        ));
    }
    let mut theta = ProbeParams::zeros(config.arch, ds.dim(), config.hidden, ds.classes().to_vec())?;
    theta.init_uniform(&mut rng::stream(config.seed, INIT_STREAM), config.init_scale);
    let mut phi = config.initial_family(ds.dim())?;

    let mut adam_theta = Adam::new(theta.n_params(), config.adam());
    let mut adam_phi = Adam::new(phi.dim(), config.adam());
    let mut train_rng = rng::stream(config.seed, TRAIN_STREAM);
    let mut order = fit.clone();
    let batch_size = config.batch_size.unwrap_or(fit.len()).min(fit.len());

    let mut best = f64::NEG_INFINITY;
    let mut best_params = (theta.clone(), phi.clone());
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        if config.batch_size.is_some() {
            order.shuffle(&mut train_rng);
        }
        let mut bound_sum = 0.0;
        for batch in order.chunks(batch_size) {
            let (bound, grad_theta, grad_phi) = if config.full_set_mode {
                let est = estimate(&theta, Sampler::FullSet, ds, batch, 1, &mut train_rng, true);
                (est.mean_ll, est.grad_theta, None)
            } else {
                let prepared = phi.prepare();
                let est = estimate(
                    &theta,
                    Sampler::Family(&prepared),
                    ds,
                    batch,
                    config.mc_samples,
                    &mut train_rng,
                    true,
                );
                let mut g_phi = est.grad_phi;
                let mut bound = est.mean_ll;
                if config.entropy_scale != 0.0 {
                    bound += config.entropy_scale * phi.entropy();
                    for (g, h) in g_phi.iter_mut().zip(phi.grad_entropy()) {
                        *g += config.entropy_scale * h;
                    }
                }
                (bound, est.grad_theta, Some(g_phi))
            };
            if !bound.is_finite() {
                return Err(Error::Numeric(format!("training diverged at epoch {epoch}")));
            }
            bound_sum += bound * batch.len() as f64;

            // Adam minimizes: descend on -(bound - penalty).
            let mut g_theta: Vec<f64> = grad_theta.iter().map(|g| -g).collect();
            elasticnet_grad(&theta, config.l1, config.l2, &mut g_theta)?;
            adam_theta.step(theta.values_mut(), &g_theta);
            if let Some(g_phi) = grad_phi {
                let g: Vec<f64> = g_phi.iter().map(|g| -g).collect();
                adam_phi.step(&mut phi.phi, &g);
            }
            if theta.values().iter().chain(&phi.phi).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("training diverged at epoch {epoch}")));
            }
        }
        let bound_train = bound_sum / fit.len() as f64;
        let bound_holdout = holdout_bound(&theta, &phi, ds, &hold, config)?;
        if !bound_holdout.is_finite() {
            return Err(Error::Numeric(format!("training diverged at epoch {epoch}")));
        }
        if bound_holdout > best + config.min_delta {
            best = bound_holdout;
            best_params = (theta.clone(), phi.clone());
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        log.push(EpochRecord {
            epoch,
            bound_train,
            bound_holdout,
            best_so_far: best,
        });
        if since_best >= config.patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    Ok(TrainedProbe {
        theta: best_params.0,
        phi: best_params.1,
        full_set_mode: config.full_set_mode,
        log,
        best_epoch,
        stop_reason,
        config: config.clone(),
    })
}

/// Holdout bound with a fixed random stream, so successive epochs are
/// compared on the same subsets.
fn holdout_bound(
    theta: &ProbeParams,
    phi: &SubsetFamilyParams,
    ds: &ReprDataset,
    hold: &[usize],
    config: &TrainConfig,
) -> Result<f64> {
    if config.full_set_mode {
        return full_set_log_likelihood(theta, ds, hold);
    }
    let mut r = rng::stream(config.seed, HOLDOUT_STREAM);
    elbo_estimate(theta, phi, ds, hold, config.mc_samples, config.entropy_scale, &mut r)
}
