//! Latent-sentiment generative model of (word, gender, sentiment):
//!
//! `p(w, g, s) = p(w | s, g) p(s | g) p(g)` with
//! `p(w | s, g) ∝ exp(m_w + η_{w,s,g})`, `p(s | g) ∝ exp(σ_{s,g})` and
//! `p(g) ∝ exp(φ_g)`. Sentiment is latent and marginalized out. Training
//! minimizes the cross-entropy against observed (word, gender) frequencies
//! plus `α·KL(q(s|w) ‖ p(s|w))` towards a sentiment lexicon and
//! `β·(‖η‖₁ + ‖σ‖₁ + ‖φ‖₁)`.
//!
//! The word prior `m` is fixed to the log marginal word frequency and is
//! not trained, so that `η_{w,s,g}` reads as a deviation from the
//! background distribution.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::DiscreteJoint;
use crate::dataset::{CooccurrenceCounts, SentimentAxis, SentimentLexicon};
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, softmax};
use crate::optim::{Adam, AdamConfig};
use crate::rng;

/// How the latent sentiment inventory is built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentimentMode {
    /// `{neg, neu, pos}`, tied to the lexicon axes.
    #[default]
    Lexicon,
    /// A single sentiment `all`. The posterior regularizer is then zero.
    Collapsed,
}

impl SentimentMode {
    pub fn inventory(self) -> Vec<String> {
        match self {
            SentimentMode::Lexicon => vec!["neg".into(), "neu".into(), "pos".into()],
            SentimentMode::Collapsed => vec!["all".into()],
        }
    }
}

const LEXICON_AXES: [SentimentAxis; 3] = [SentimentAxis::Neg, SentimentAxis::Neu, SentimentAxis::Pos];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenderedObjectiveConfig {
    /// Posterior-regularizer weight.
    pub alpha: f64,
    /// L1 weight.
    pub beta: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Stop once the objective changes by less than this between epochs.
    pub tolerance: f64,
    pub seed: u64,
    /// Half-width of the uniform initialization of η, σ and φ.
    pub init_scale: f64,
    pub sentiments: SentimentMode,
    /// Grid for averaged reporting.
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
}

impl Default for GenderedObjectiveConfig {
    fn default() -> Self {
        GenderedObjectiveConfig {
            alpha: 1.0,
            beta: 1e-4,
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 3000,
            tolerance: 1e-10,
            seed: 0,
            init_scale: 0.01,
            sentiments: SentimentMode::Lexicon,
            alpha_grid: vec![1e-5, 1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0],
            beta_grid: vec![0.0, 1e-5, 1e-4, 1e-3, 1e-2],
        }
    }
}

impl GenderedObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.alpha, self.beta]
            .into_iter()
            .chain(self.alpha_grid.iter().copied())
            .chain(self.beta_grid.iter().copied());
        for w in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Domain(format!("regularizer weights must be finite and >= 0, got {w}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Domain("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) || !(self.tolerance >= 0.0) {
            return Err(Error::Domain("init_scale and tolerance must be >= 0".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenderedModelParams {
    pub words: Vec<String>,
    pub sentiments: Vec<String>,
    pub genders: Vec<String>,
    /// Word prior logits, length `|W|`.
    pub m: Vec<f64>,
    /// Deviations, indexed `(w·|S| + s)·|G| + g`.
    pub eta: Vec<f64>,
    /// Sentiment logits, indexed `s·|G| + g`.
    pub sigma: Vec<f64>,
    pub phi_g: Vec<f64>,
}

impl GenderedModelParams {
    pub fn zeros(words: Vec<String>, sentiments: Vec<String>, genders: Vec<String>) -> Self {
        let (nw, ns, ng) = (words.len(), sentiments.len(), genders.len());
        GenderedModelParams {
            m: vec![0.0; nw],
            eta: vec![0.0; nw * ns * ng],
            sigma: vec![0.0; ns * ng],
            phi_g: vec![0.0; ng],
            words,
            sentiments,
            genders,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.words.len(), self.sentiments.len(), self.genders.len())
    }

    pub fn eta_at(&self, w: usize, s: usize, g: usize) -> f64 {
        let (_, ns, ng) = self.dims();
        self.eta[(w * ns + s) * ng + g]
    }

    /// `p(w | s, g)` over the vocabulary.
    pub fn word_given_sent_gender(&self, s: usize, g: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.words.len()).map(|w| self.m[w] + self.eta_at(w, s, g)).collect();
        softmax(&logits)
    }

    /// `p(s | g)`.
    pub fn sent_given_gender(&self, g: usize) -> Vec<f64> {
        let (_, ns, ng) = self.dims();
        softmax(&(0..ns).map(|s| self.sigma[s * ng + g]).collect::<Vec<_>>())
    }

    /// `p(g)`.
    pub fn gender_prior(&self) -> Vec<f64> {
        softmax(&self.phi_g)
    }

    /// `p(w, g) = Σ_s p(w | s, g) p(s | g) p(g)`, rows are words.
    pub fn marginal_word_gender(&self) -> DiscreteJoint {
        let lj = LogJoint::new(self);
        let (nw, _, ng) = self.dims();
        let mut p = vec![0.0; nw * ng];
        for w in 0..nw {
            for g in 0..ng {
                p[w * ng + g] = lj.log_wg(w, g).exp();
            }
        }
        let sum: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= sum);
        DiscreteJoint::new(self.words.clone(), self.genders.clone(), p).expect("normalized by construction")
    }

    /// `p(s | w) ∝ Σ_g p(w | s, g) p(s | g) p(g)`.
    pub fn sentiment_posterior(&self, w: usize) -> Vec<f64> {
        let lj = LogJoint::new(self);
        let (_, ns, ng) = self.dims();
        let per_s: Vec<f64> = (0..ns)
            .map(|s| log_sum_exp(&(0..ng).map(|g| lj.get(w, s, g)).collect::<Vec<_>>()))
            .collect();
        softmax(&per_s)
    }

    pub fn n_free(&self) -> usize {
        self.eta.len() + self.sigma.len() + self.phi_g.len()
    }

    /// η, σ and φ concatenated, in the order used by [`objective_grad`].
    pub fn free_values(&self) -> Vec<f64> {
        self.eta.iter().chain(&self.sigma).chain(&self.phi_g).copied().collect()
    }

    pub fn set_free_values(&mut self, v: &[f64]) {
        let (a, b) = (self.eta.len(), self.eta.len() + self.sigma.len());
        self.eta.copy_from_slice(&v[..a]);
        self.sigma.copy_from_slice(&v[a..b]);
        self.phi_g.copy_from_slice(&v[b..]);
    }
}

/// `J_{w,s,g} = log p(w | s, g) + log p(s | g) + log p(g)`, plus the
/// normalized pieces needed for gradients.
struct LogJoint {
    dims: (usize, usize, usize),
    /// `log p(w | s, g)`, indexed like η.
    log_w: Vec<f64>,
    /// `log p(s | g)`, indexed like σ.
    log_s: Vec<f64>,
    log_g: Vec<f64>,
}

impl LogJoint {
    fn new(p: &GenderedModelParams) -> Self {
        let (nw, ns, ng) = p.dims();
        let mut log_w = vec![0.0; nw * ns * ng];
        let mut col = vec![0.0; nw];
        for s in 0..ns {
            for g in 0..ng {
                for (w, c) in col.iter_mut().enumerate() {
                    *c = p.m[w] + p.eta_at(w, s, g);
                }
                let z = log_sum_exp(&col);
                for (w, c) in col.iter().enumerate() {
                    log_w[(w * ns + s) * ng + g] = c - z;
                }
            }
        }
        let mut log_s = vec![0.0; ns * ng];
        for g in 0..ng {
            let z = log_sum_exp(&(0..ns).map(|s| p.sigma[s * ng + g]).collect::<Vec<_>>());
            for s in 0..ns {
                log_s[s * ng + g] = p.sigma[s * ng + g] - z;
            }
        }
        let zg = log_sum_exp(&p.phi_g);
        LogJoint {
            dims: (nw, ns, ng),
            log_w,
            log_s,
            log_g: p.phi_g.iter().map(|v| v - zg).collect(),
        }
    }

    fn get(&self, w: usize, s: usize, g: usize) -> f64 {
        let (_, ns, ng) = self.dims;
        self.log_w[(w * ns + s) * ng + g] + self.log_s[s * ng + g] + self.log_g[g]
    }

    fn log_wg(&self, w: usize, g: usize) -> f64 {
        let (_, ns, _) = self.dims;
        log_sum_exp(&(0..ns).map(|s| self.get(w, s, g)).collect::<Vec<_>>())
    }
}

/// Observed word–gender frequencies and lexicon targets.
#[derive(Clone, Debug, PartialEq)]
pub struct GenderedData {
    pub words: Vec<String>,
    pub sentiments: Vec<String>,
    pub genders: Vec<String>,
    /// `p̃(w, g)`, indexed `w·|G| + g`.
    pub p_tilde: Vec<f64>,
    /// `q(s | w)` for words covered by the lexicon.
    pub q: Vec<Option<Vec<f64>>>,
    /// Log marginal word frequencies used as the fixed prior `m`.
    pub log_freq: Vec<f64>,
}

impl GenderedData {
    /// Builds the training target from (word, gender) counts. Inventories are
    /// sorted. A word with zero total count gets prior mass `0.5 / N`.
    pub fn new(counts: &CooccurrenceCounts, lex: Option<&SentimentLexicon>, mode: SentimentMode) -> Result<Self> {
        let total = counts.total();
        if total == 0 {
            return Err(Error::EmptyDataset("word-gender counts are all zero".into()));
        }
        let words = counts.words();
        let genders = counts.groups();
        let n = total as f64;
        let mut p_tilde = Vec::with_capacity(words.len() * genders.len());
        let mut log_freq = Vec::with_capacity(words.len());
        for w in &words {
            let mut cw = 0u64;
            for g in &genders {
                let c = counts.get(w, g);
                cw += c;
                p_tilde.push(c as f64 / n);
            }
            log_freq.push(if cw > 0 { (cw as f64 / n).ln() } else { (0.5 / n).ln() });
        }
        let q = words
            .iter()
            .map(|w| match (mode, lex.and_then(|l| l.get(w))) {
                (SentimentMode::Lexicon, Some(t)) => Some(LEXICON_AXES.iter().map(|a| t.get(*a)).collect()),
                _ => None,
            })
            .collect();
        Ok(GenderedData {
            words,
            sentiments: mode.inventory(),
            genders,
            p_tilde,
            q,
            log_freq,
        })
    }

    pub fn coverage(&self) -> usize {
        self.q.iter().filter(|q| q.is_some()).count()
    }

    fn check(&self, p: &GenderedModelParams) -> Result<()> {
        if p.words != self.words || p.genders != self.genders || p.sentiments != self.sentiments {
            return Err(Error::Shape("model inventories do not match the data".into()));
        }
        Ok(())
    }
}

/// Objective value split into its terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub cross_entropy: f64,
    pub posterior_kl: f64,
    pub l1: f64,
    pub total: f64,
}

/// `L(θ) + α·KL + β·L1`.
pub fn objective(params: &GenderedModelParams, data: &GenderedData, alpha: f64, beta: f64) -> Result<ObjectiveTerms> {
    data.check(params)?;
    Ok(objective_and_grad(params, data, alpha, beta, None))
}

fn objective_and_grad(
    p: &GenderedModelParams,
    data: &GenderedData,
    alpha: f64,
    beta: f64,
    grad: Option<&mut [f64]>,
) -> ObjectiveTerms {
    let (nw, ns, ng) = p.dims();
    let lj = LogJoint::new(p);
    // dO/dJ_{w,s,g}, indexed like η
    let mut d_j = vec![0.0; nw * ns * ng];
    let mut ce = 0.0;
    let mut kl = 0.0;
    let mut buf = vec![0.0; ns];
    for w in 0..nw {
        for g in 0..ng {
            let pt = data.p_tilde[w * ng + g];
            if pt == 0.0 {
                continue;
            }
            for (s, b) in buf.iter_mut().enumerate() {
                *b = lj.get(w, s, g);
            }
            let lse = log_sum_exp(&buf);
            ce -= pt * lse;
            for s in 0..ns {
                d_j[(w * ns + s) * ng + g] -= pt * (buf[s] - lse).exp();
            }
        }
        if let (Some(q), true) = (&data.q[w], alpha > 0.0) {
            let all: Vec<f64> = (0..ns).flat_map(|s| (0..ng).map(move |g| (s, g))).map(|(s, g)| lj.get(w, s, g)).collect();
            let z = log_sum_exp(&all);
            for s in 0..ns {
                let row = &all[s * ng..(s + 1) * ng];
                let zs = log_sum_exp(row);
                if q[s] > 0.0 {
                    kl += q[s] * (q[s].ln() - (zs - z));
                }
                for g in 0..ng {
                    let joint_post = (row[g] - z).exp();
                    let cond_post = (row[g] - zs).exp();
                    d_j[(w * ns + s) * ng + g] += alpha * (joint_post - q[s] * cond_post);
                }
            }
        }
    }
    let l1: f64 = p.eta.iter().chain(&p.sigma).chain(&p.phi_g).map(|v| v.abs()).sum();
    let terms = ObjectiveTerms {
        cross_entropy: ce,
        posterior_kl: kl,
        l1,
        total: ce + alpha * kl + beta * l1,
    };

    if let Some(grad) = grad {
        let (ge, rest) = grad.split_at_mut(p.eta.len());
        let (gs, gp) = rest.split_at_mut(p.sigma.len());
        // through log p(w | s, g)
        let mut e_sg = vec![0.0; ns * ng];
        for w in 0..nw {
            for s in 0..ns {
                for g in 0..ng {
                    e_sg[s * ng + g] += d_j[(w * ns + s) * ng + g];
                }
            }
        }
        for w in 0..nw {
            for s in 0..ns {
                for g in 0..ng {
                    let i = (w * ns + s) * ng + g;
                    ge[i] = d_j[i] - lj.log_w[i].exp() * e_sg[s * ng + g];
                }
            }
        }
        // through log p(s | g)
        for g in 0..ng {
            let tot: f64 = (0..ns).map(|s| e_sg[s * ng + g]).sum();
            for s in 0..ns {
                gs[s * ng + g] = e_sg[s * ng + g] - lj.log_s[s * ng + g].exp() * tot;
            }
        }
        // through log p(g)
        let per_g: Vec<f64> = (0..ng).map(|g| (0..ns).map(|s| e_sg[s * ng + g]).sum()).collect();
        let tot: f64 = per_g.iter().sum();
        for g in 0..ng {
            gp[g] = per_g[g] - lj.log_g[g].exp() * tot;
        }
        if beta > 0.0 {
            let vals = p.eta.iter().chain(&p.sigma).chain(&p.phi_g);
            for (gi, v) in grad.iter_mut().zip(vals) {
                *gi += beta * if *v > 0.0 { 1.0 } else if *v < 0.0 { -1.0 } else { 0.0 };
            }
        }
    }
    terms
}

/// Gradient of [`objective`] with respect to η, σ and φ, concatenated in that
/// order. Where a parameter is exactly 0 the L1 subgradient 0 is used.
pub fn objective_grad(params: &GenderedModelParams, data: &GenderedData, alpha: f64, beta: f64) -> Result<Vec<f64>> {
    data.check(params)?;
    let mut g = vec![0.0; params.n_free()];
    objective_and_grad(params, data, alpha, beta, Some(&mut g));
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenderedEpoch {
    pub epoch: usize,
    pub terms: ObjectiveTerms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedGenderedModel {
    pub params: GenderedModelParams,
    pub log: Vec<GenderedEpoch>,
    pub alpha: f64,
    pub beta: f64,
}

impl TrainedGenderedModel {
    pub fn log_tsv(&self) -> String {
        let mut out = String::from("epoch\tobjective\tcross_entropy\tposterior_kl\tl1\n");
        for e in &self.log {
            let t = e.terms;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.epoch, t.total, t.cross_entropy, t.posterior_kl, t.l1
            ));
        }
        out
    }
}

/// Full-batch Adam on the objective with the weights `cfg.alpha`, `cfg.beta`.
pub fn train_gendered_model<R: Rng + ?Sized>(
    data: &GenderedData,
    cfg: &GenderedObjectiveConfig,
    rng: &mut R,
) -> Result<TrainedGenderedModel> {
    train_with_weights(data, cfg, cfg.alpha, cfg.beta, rng)
}

fn train_with_weights<R: Rng + ?Sized>(
    data: &GenderedData,
    cfg: &GenderedObjectiveConfig,
    alpha: f64,
    beta: f64,
    rng: &mut R,
) -> Result<TrainedGenderedModel> {
    cfg.validate()?;
    let mut params = GenderedModelParams::zeros(data.words.clone(), data.sentiments.clone(), data.genders.clone());
    params.m.clone_from(&data.log_freq);
    let mut theta: Vec<f64> = (0..params.n_free())
        .map(|_| if cfg.init_scale > 0.0 { rng.random_range(-cfg.init_scale..=cfg.init_scale) } else { 0.0 })
        .collect();
    params.set_free_values(&theta);
    let mut adam = Adam::new(theta.len(), cfg.adam());
    let mut grad = vec![0.0; theta.len()];
    let mut log = Vec::new();
    let mut prev = f64::INFINITY;
    for epoch in 0..cfg.max_epochs {
        let terms = objective_and_grad(&params, data, alpha, beta, Some(&mut grad));
        if !terms.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("objective diverged at epoch {epoch}")));
        }
        log.push(GenderedEpoch { epoch, terms });
        if (prev - terms.total).abs() < cfg.tolerance {
            break;
        }
        prev = terms.total;
        adam.step(&mut theta, &grad);
        params.set_free_values(&theta);
    }
    Ok(TrainedGenderedModel {
        params,
        log,
        alpha,
        beta,
    })
}

/// One trained cell of the α × β grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub alpha: f64,
    pub beta: f64,
    pub model: TrainedGenderedModel,
}

/// Trains every (α, β) pair of the configured grid. Cell `i` (α-major)
/// initializes from stream `i` of `cfg.seed`.
pub fn train_grid(data: &GenderedData, cfg: &GenderedObjectiveConfig) -> Result<Vec<GridCell>> {
    cfg.validate()?;
    let pairs: Vec<(f64, f64)> = cfg
        .alpha_grid
        .iter()
        .flat_map(|&a| cfg.beta_grid.iter().map(move |&b| (a, b)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Domain("hyperparameter grid is empty".into()));
    }
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(alpha, beta))| {
            let model = train_with_weights(data, cfg, alpha, beta, &mut rng::stream(cfg.seed, i as u64))?;
            Ok(GridCell { alpha, beta, model })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedWord {
    pub word: String,
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub gender: String,
    pub sentiment: String,
    pub words: Vec<RankedWord>,
    /// True when `top_n` exceeded the vocabulary and was clipped.
    pub clipped: bool,
}

fn index_of(list: &[String], name: &str, what: &str) -> Result<usize> {
    list.iter()
        .position(|x| x == name)
        .ok_or_else(|| Error::Domain(format!("unknown {what} {name:?}")))
}

/// Words ranked by `η_{w,s,g}`, descending, ties in word order.
pub fn deviation_ranking(params: &GenderedModelParams, gender: &str, sentiment: &str, top_n: usize) -> Result<Ranking> {
    let g = index_of(&params.genders, gender, "gender")?;
    let s = index_of(&params.sentiments, sentiment, "sentiment")?;
    let mut order: Vec<usize> = (0..params.words.len()).collect();
    order.sort_by(|&a, &b| params.eta_at(b, s, g).total_cmp(&params.eta_at(a, s, g)).then(a.cmp(&b)));
    let clipped = top_n > order.len();
    Ok(Ranking {
        gender: gender.to_string(),
        sentiment: sentiment.to_string(),
        words: order
            .into_iter()
            .take(top_n)
            .map(|w| RankedWord {
                word: params.words[w].clone(),
                deviation: params.eta_at(w, s, g),
            })
            .collect(),
        clipped,
    })
}

/// Rankings averaged over grid cells: words are ordered by mean reciprocal
/// rank across cells (ties in word order) and carry their mean deviation.
pub fn averaged_ranking(cells: &[GridCell], gender: &str, sentiment: &str, top_n: usize) -> Result<Ranking> {
    let first = &cells.first().ok_or_else(|| Error::Domain("no grid cells".into()))?.model.params;
    let nw = first.words.len();
    let mut mrr = vec![0.0; nw];
    let mut mean_dev = vec![0.0; nw];
    for cell in cells {
        let full = deviation_ranking(&cell.model.params, gender, sentiment, nw)?;
        for (rank, rw) in full.words.iter().enumerate() {
            let w = index_of(&first.words, &rw.word, "word")?;
            mrr[w] += 1.0 / (rank + 1) as f64 / cells.len() as f64;
            mean_dev[w] += rw.deviation / cells.len() as f64;
        }
    }
    let mut order: Vec<usize> = (0..nw).collect();
    order.sort_by(|&a, &b| mrr[b].total_cmp(&mrr[a]).then(a.cmp(&b)));
    Ok(Ranking {
        gender: gender.to_string(),
        sentiment: sentiment.to_string(),
        clipped: top_n > nw,
        words: order
            .into_iter()
            .take(top_n)
            .map(|w| RankedWord {
                word: first.words[w].clone(),
                deviation: mean_dev[w],
            })
            .collect(),
    })
}

pub fn rankings_tsv(rankings: &[Ranking]) -> String {
    let mut out = String::from("gender\tsentiment\trank\tword\tdeviation\n");
    for r in rankings {
        for (i, w) in r.words.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.gender, r.sentiment, i + 1, w.word, w.deviation));
        }
    }
    out
}
