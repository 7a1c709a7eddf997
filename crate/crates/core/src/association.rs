//! Association and bias measures over counts, embeddings and distributions.
//!
//! All logarithms are natural.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    non_empty, parse_f64, parse_tsv, CooccurrenceCounts, EmbeddingSet, EntityCounts, SentimentAxis,
    SentimentLexicon,
};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_MIN_COUNT: u64 = 3;

/// Tolerance for "sums to one".
const NORM_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// PMI
// ---------------------------------------------------------------------------

/// PMI values keyed by (word, group), plus what was left out.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PmiTable {
    pub values: BTreeMap<(String, String), f64>,
    /// Words below the minimum count in at least one group.
    pub dropped_words: Vec<String>,
    /// (word, group) cells with a zero count, where the log is undefined.
    pub skipped: Vec<(String, String)>,
}

impl PmiTable {
    pub fn get(&self, word: &str, group: &str) -> Option<f64> {
        self.values.get(&(word.to_string(), group.to_string())).copied()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("word\tgroup\tpmi\n");
        for ((w, g), v) in &self.values {
            out.push_str(&format!("{w}\t{g}\t{v}\n"));
        }
        out
    }
}

/// Plug-in PMI `ln p(w,g) / (p(w) p(g))` from co-occurrence counts.
///
/// Probabilities use the whole table. A word is reported only if its count
/// reaches `min_count` in every group. `smoothing` adds λ to every cell of the
/// word × group grid before normalizing (0 disables it).
pub fn pmi(counts: &CooccurrenceCounts, min_count: u64, smoothing: f64) -> Result<PmiTable> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::Domain(format!("smoothing must be a finite λ >= 0, got {smoothing}")));
    }
    if counts.total() == 0 {
        return Err(Error::EmptyDataset("co-occurrence table has zero total count".into()));
    }
    let words = counts.words();
    let groups = counts.groups();
    let cell = |w: &str, g: &str| counts.get(w, g) as f64 + smoothing;
    let total: f64 = words.iter().flat_map(|w| groups.iter().map(move |g| (w, g))).map(|(w, g)| cell(w, g)).sum();
    let word_tot: BTreeMap<&str, f64> = words
        .iter()
        .map(|w| (w.as_str(), groups.iter().map(|g| cell(w, g)).sum()))
        .collect();
    let group_tot: BTreeMap<&str, f64> = groups
        .iter()
        .map(|g| (g.as_str(), words.iter().map(|w| cell(w, g)).sum()))
        .collect();

    let mut out = PmiTable::default();
    for w in &words {
        if groups.iter().any(|g| counts.get(w, g) < min_count) {
            out.dropped_words.push(w.clone());
            continue;
        }
        for g in &groups {
            let c = cell(w, g);
            if c == 0.0 {
                out.skipped.push((w.clone(), g.clone()));
                continue;
            }
            let v = (c * total / (word_tot[w.as_str()] * group_tot[g.as_str()])).ln();
            out.values.insert((w.clone(), g.clone()), v);
        }
    }
    Ok(out)
}

/// Entity-level PMI `ln e(w,g) / (e(w) e(g) / E)`, where `e` counts entities
/// (not tokens) and `E` is the number of entities.
///
/// A word is reported only if it occurs with at least `min_count` entities of
/// every group. Zero cells are listed in `skipped`.
pub fn pmi_entity(ec: &EntityCounts, min_count: u64) -> Result<PmiTable> {
    let e_total = ec.entity_group.len();
    if e_total == 0 {
        return Err(Error::EmptyDataset("no entities".into()));
    }
    let mut e_group: BTreeMap<&str, u64> = BTreeMap::new();
    for g in ec.entity_group.values() {
        *e_group.entry(g).or_insert(0) += 1;
    }
    let mut e_wg: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let mut e_w: BTreeMap<&str, u64> = BTreeMap::new();
    for (w, e) in &ec.presence {
        let g = ec
            .entity_group
            .get(e)
            .ok_or_else(|| Error::Data(format!("entity {e:?} has no group")))?;
        *e_wg.entry((w, g)).or_insert(0) += 1;
        *e_w.entry(w).or_insert(0) += 1;
    }

    let mut out = PmiTable::default();
    for (&w, &ew) in &e_w {
        let count = |g: &str| e_wg.get(&(w, g)).copied().unwrap_or(0);
        if e_group.keys().any(|g| count(g) < min_count) {
            out.dropped_words.push(w.to_string());
            continue;
        }
        for (&g, &eg) in &e_group {
            let c = count(g);
            if c == 0 {
                out.skipped.push((w.to_string(), g.to_string()));
                continue;
            }
            let v = (c as f64 * e_total as f64 / (ew as f64 * eg as f64)).ln();
            out.values.insert((w.to_string(), g.to_string()), v);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// WEAT
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatResult {
    /// Test statistic `S = Σ_X s − Σ_Y s`.
    pub statistic: f64,
    /// Effect size `d`.
    pub effect_size: f64,
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    dot / (norm(u) * norm(v))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_weat(e: &EmbeddingSet) -> Result<()> {
    if e.x.is_empty() || e.x.len() != e.y.len() {
        return Err(Error::Domain(format!(
            "target sets need equal non-zero sizes, got |X|={} and |Y|={}",
            e.x.len(),
            e.y.len()
        )));
    }
    if e.a.is_empty() || e.b.is_empty() {
        return Err(Error::Domain("attribute sets A and B must be non-empty".into()));
    }
    let all = e.x.iter().chain(&e.y).chain(&e.a).chain(&e.b);
    let dim = e.x[0].len();
    for v in all {
        if v.len() != dim {
            return Err(Error::Domain(format!("vector of length {} in a {dim}-dim query", v.len())));
        }
        if norm(v) == 0.0 {
            return Err(Error::Domain("zero-norm vector".into()));
        }
    }
    Ok(())
}

/// Association `s(w, A, B)` of every target word, X first then Y.
fn target_associations(e: &EmbeddingSet) -> Vec<f64> {
    let mean_cos = |w: &[f64], set: &[Vec<f64>]| set.iter().map(|a| cosine(w, a)).sum::<f64>() / set.len() as f64;
    e.x.iter()
        .chain(&e.y)
        .map(|w| mean_cos(w, &e.a) - mean_cos(w, &e.b))
        .collect()
}

/// `Σ_{i∈X'} s_i − Σ_{i∉X'} s_i`, summed in pool order.
fn partition_statistic(s: &[f64], in_x: &[bool]) -> f64 {
    s.iter()
        .zip(in_x)
        .map(|(v, &x)| if x { *v } else { -*v })
        .sum()
}

pub fn weat(e: &EmbeddingSet) -> Result<WeatResult> {
    check_weat(e)?;
    let s = target_associations(e);
    let n = e.x.len();
    let in_x: Vec<bool> = (0..2 * n).map(|i| i < n).collect();
    let statistic = partition_statistic(&s, &in_x);
    let mean_x = s[..n].iter().sum::<f64>() / n as f64;
    let mean_y = s[n..].iter().sum::<f64>() / n as f64;
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let std = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
    if std == 0.0 {
        return Err(Error::Undefined("all target associations are equal, effect size undefined".into()));
    }
    Ok(WeatResult {
        statistic,
        effect_size: (mean_x - mean_y) / std,
    })
}

/// One-sided permutation p-value of the WEAT statistic over random
/// equal-size re-partitions of `X ∪ Y`: `(1 + #{S_i >= S}) / (n_perm + 1)`.
/// Replica `i` draws from stream `i` of `seed`.
pub fn weat_pvalue(e: &EmbeddingSet, n_perm: usize, seed: u64) -> Result<f64> {
    check_weat(e)?;
    if n_perm == 0 {
        return Err(Error::Domain("n_perm must be at least 1".into()));
    }
    let s = target_associations(e);
    let n = e.x.len();
    let observed_mask: Vec<bool> = (0..2 * n).map(|i| i < n).collect();
    let observed = partition_statistic(&s, &observed_mask);
    // partitions that tie with the observed one up to rounding count as hits
    let tol = 1e-12 * s.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    let hits = (0..n_perm)
        .into_par_iter()
        .filter(|&i| {
            let mut mask = observed_mask.clone();
            mask.shuffle(&mut rng::stream(seed, i as u64));
            partition_statistic(&s, &mask) >= observed - tol
        })
        .count();
    Ok((1 + hits) as f64 / (n_perm + 1) as f64)
}

// ---------------------------------------------------------------------------
// Lexicon and HONEST scores
// ---------------------------------------------------------------------------

/// Mean lexicon value on `axis` over the tokens found in the lexicon, and
/// the share of tokens found.
pub fn lexicon_mean_score<S: AsRef<str>>(
    tokens: &[S],
    lex: &SentimentLexicon,
    axis: SentimentAxis,
) -> Result<(f64, f64)> {
    let hits: Vec<f64> = tokens
        .iter()
        .filter_map(|t| lex.get(t.as_ref()).map(|e| e.get(axis)))
        .collect();
    if hits.is_empty() {
        return Err(Error::Undefined("no token is covered by the lexicon".into()));
    }
    let score = hits.iter().sum::<f64>() / hits.len() as f64;
    Ok((score, hits.len() as f64 / tokens.len() as f64))
}

/// Share of completions that fall in `hurt_set`, over `|T|·K` completions.
pub fn honest_score<S: AsRef<str>>(completions: &[Vec<S>], hurt_set: &BTreeSet<String>) -> Result<f64> {
    let k = completions
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Domain("no templates".into()))?;
    if k == 0 {
        return Err(Error::Domain("templates have no completions".into()));
    }
    if let Some((t, c)) = completions.iter().enumerate().find(|(_, c)| c.len() != k) {
        return Err(Error::Domain(format!(
            "template {t} has {} completions, expected K={k}",
            c.len()
        )));
    }
    let hurtful = completions
        .iter()
        .flatten()
        .filter(|w| hurt_set.contains(w.as_ref()))
        .count();
    Ok(hurtful as f64 / (completions.len() * k) as f64)
}

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Domain(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(Error::Domain(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// `Σ_i π_i KL(p_i ‖ m)` with `m = Σ_i π_i p_i`, in nats.
pub fn weighted_jsd(dists: &[Vec<f64>], pi: &[f64]) -> Result<f64> {
    if dists.len() != pi.len() {
        return Err(Error::Domain(format!("{} distributions but {} weights", dists.len(), pi.len())));
    }
    check_distribution(pi, "weight vector")?;
    let support = dists.first().map(Vec::len).unwrap_or(0);
    for (i, p) in dists.iter().enumerate() {
        if p.len() != support {
            return Err(Error::Domain(format!(
                "distribution {i} has support size {}, expected {support}",
                p.len()
            )));
        }
        check_distribution(p, &format!("distribution {i}"))?;
    }
    let mut m = vec![0.0; support];
    for (p, w) in dists.iter().zip(pi) {
        for (mj, pj) in m.iter_mut().zip(p) {
            *mj += w * pj;
        }
    }
    let mut total = 0.0;
    for (p, &w) in dists.iter().zip(pi) {
        if w == 0.0 {
            continue;
        }
        let kl: f64 = p
            .iter()
            .zip(&m)
            .filter(|(pj, _)| **pj > 0.0)
            .map(|(pj, mj)| pj * (pj.ln() - mj.ln()))
            .sum();
        total += w * kl;
    }
    Ok(total.max(0.0))
}

/// Joint distribution over (outcome, group) pairs, row-major by outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    outcomes: Vec<String>,
    groups: Vec<String>,
    p: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(outcomes: Vec<String>, groups: Vec<String>, p: Vec<f64>) -> Result<Self> {
        if p.len() != outcomes.len() * groups.len() {
            return Err(Error::Shape(format!(
                "{} entries for a {}x{} joint",
                p.len(),
                outcomes.len(),
                groups.len()
            )));
        }
        check_distribution(&p, "joint")?;
        Ok(DiscreteJoint { outcomes, groups, p })
    }

    /// Builds the joint `p_g(a) · π_g`.
    pub fn from_conditionals(outcomes: Vec<String>, groups: Vec<String>, dists: &[Vec<f64>], pi: &[f64]) -> Result<Self> {
        if dists.len() != groups.len() || pi.len() != groups.len() {
            return Err(Error::Shape("one distribution and weight per group required".into()));
        }
        let na = outcomes.len();
        let mut p = vec![0.0; na * groups.len()];
        for (g, (d, w)) in dists.iter().zip(pi).enumerate() {
            if d.len() != na {
                return Err(Error::Domain(format!("distribution {g} has support size {}, expected {na}", d.len())));
            }
            for (a, v) in d.iter().enumerate() {
                p[a * groups.len() + g] = v * w;
            }
        }
        DiscreteJoint::new(outcomes, groups, p)
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn get(&self, a: usize, g: usize) -> f64 {
        self.p[a * self.groups.len() + g]
    }

    pub fn outcome_marginal(&self) -> Vec<f64> {
        (0..self.outcomes.len())
            .map(|a| (0..self.groups.len()).map(|g| self.get(a, g)).sum())
            .collect()
    }

    pub fn group_marginal(&self) -> Vec<f64> {
        (0..self.groups.len())
            .map(|g| (0..self.outcomes.len()).map(|a| self.get(a, g)).sum())
            .collect()
    }
}

/// Plug-in mutual information of a joint, in nats, with `0 ln 0 = 0`.
pub fn discrete_mi(joint: &DiscreteJoint) -> f64 {
    let pa = joint.outcome_marginal();
    let pg = joint.group_marginal();
    let mut mi = 0.0;
    for (a, pa_a) in pa.iter().enumerate() {
        for (g, pg_g) in pg.iter().enumerate() {
            let p = joint.get(a, g);
            if p > 0.0 {
                mi += p * (p.ln() - pa_a.ln() - pg_g.ln());
            }
        }
    }
    mi.max(0.0)
}

// ---------------------------------------------------------------------------
// Observational and interventional marginals
// ---------------------------------------------------------------------------

/// A (gender, noun) context with its weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldContext {
    pub gender: usize,
    pub noun: usize,
    pub weight: f64,
}

/// Outcome distributions `p(a | g, n)` for (gender, noun) contexts, plus a
/// weighted set of held contexts. The context weights define `p_N` and `p_G`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    outcomes: Vec<String>,
    genders: Vec<String>,
    nouns: Vec<String>,
    /// Indexed `g * |N| + n`.
    rows: Vec<Option<Vec<f64>>>,
    /// Weights normalized to sum to one.
    contexts: Vec<HeldContext>,
}

impl ConditionalTable {
    pub fn new(
        outcomes: Vec<String>,
        genders: Vec<String>,
        nouns: Vec<String>,
        rows: Vec<Option<Vec<f64>>>,
        mut contexts: Vec<HeldContext>,
    ) -> Result<Self> {
        if rows.len() != genders.len() * nouns.len() {
            return Err(Error::Shape(format!(
                "{} rows for {} genders x {} nouns",
                rows.len(),
                genders.len(),
                nouns.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if let Some(r) = row {
                let (g, n) = (i / nouns.len(), i % nouns.len());
                if r.len() != outcomes.len() {
                    return Err(Error::Shape(format!(
                        "row ({}, {}) has {} outcomes, expected {}",
                        genders[g],
                        nouns[n],
                        r.len(),
                        outcomes.len()
                    )));
                }
                check_distribution(r, &format!("row ({}, {})", genders[g], nouns[n]))?;
            }
        }
        if contexts.is_empty() {
            return Err(Error::Domain("no held contexts".into()));
        }
        let mut total = 0.0;
        for c in &contexts {
            if c.gender >= genders.len() || c.noun >= nouns.len() {
                return Err(Error::Domain(format!("context ({}, {}) out of range", c.gender, c.noun)));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::Domain(format!("context weight {} must be positive", c.weight)));
            }
            if rows[c.gender * nouns.len() + c.noun].is_none() {
                return Err(Error::Domain(format!(
                    "held context ({}, {}) has no row",
                    genders[c.gender], nouns[c.noun]
                )));
            }
            total += c.weight;
        }
        for c in &mut contexts {
            c.weight /= total;
        }
        Ok(ConditionalTable {
            outcomes,
            genders,
            nouns,
            rows,
            contexts,
        })
    }

    /// Builds a table from `(gender, noun, outcome, prob)` rows and
    /// `(gender, noun, weight)` contexts. Inventories are sorted; outcomes
    /// missing from a row get probability 0.
    pub fn from_records(rows: &[(String, String, String, f64)], contexts: &[(String, String, f64)]) -> Result<Self> {
        let sorted = |it: &mut dyn Iterator<Item = &String>| -> Vec<String> {
            it.cloned().collect::<BTreeSet<_>>().into_iter().collect()
        };
        let genders = sorted(&mut rows.iter().map(|r| &r.0).chain(contexts.iter().map(|c| &c.0)));
        let nouns = sorted(&mut rows.iter().map(|r| &r.1).chain(contexts.iter().map(|c| &c.1)));
        let outcomes = sorted(&mut rows.iter().map(|r| &r.2));
        let pos = |list: &[String], v: &String| list.binary_search(v).expect("inventory built from records");
        let mut table: Vec<Option<Vec<f64>>> = vec![None; genders.len() * nouns.len()];
        for (g, n, a, p) in rows {
            let cell = table[pos(&genders, g) * nouns.len() + pos(&nouns, n)].get_or_insert_with(|| vec![0.0; outcomes.len()]);
            cell[pos(&outcomes, a)] += p;
        }
        let held = contexts
            .iter()
            .map(|(g, n, w)| HeldContext {
                gender: pos(&genders, g),
                noun: pos(&nouns, n),
                weight: *w,
            })
            .collect();
        ConditionalTable::new(outcomes, genders, nouns, table, held)
    }

    /// Plug-in table from `(gender, noun, outcome)` observations: each
    /// observed (gender, noun) pair gets its empirical outcome distribution
    /// and is held with weight equal to its count.
    pub fn from_observations<S: AsRef<str>>(obs: &[(S, S, S)]) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::EmptyDataset("no observations".into()));
        }
        let mut cells: BTreeMap<(&str, &str), BTreeMap<&str, f64>> = BTreeMap::new();
        for (g, n, a) in obs {
            *cells
                .entry((g.as_ref(), n.as_ref()))
                .or_default()
                .entry(a.as_ref())
                .or_insert(0.0) += 1.0;
        }
        let mut rows = Vec::new();
        let mut contexts = Vec::new();
        for ((g, n), dist) in &cells {
            let total: f64 = dist.values().sum();
            for (a, c) in dist {
                rows.push((g.to_string(), n.to_string(), a.to_string(), c / total));
            }
            contexts.push((g.to_string(), n.to_string(), total));
        }
        ConditionalTable::from_records(&rows, &contexts)
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn genders(&self) -> &[String] {
        &self.genders
    }

    pub fn nouns(&self) -> &[String] {
        &self.nouns
    }

    pub fn contexts(&self) -> &[HeldContext] {
        &self.contexts
    }

    pub fn row(&self, g: usize, n: usize) -> Option<&[f64]> {
        self.rows[g * self.nouns.len() + n].as_deref()
    }

    /// Noun marginal `p_N` of the held contexts.
    pub fn noun_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.nouns.len()];
        for c in &self.contexts {
            w[c.noun] += c.weight;
        }
        w
    }

    /// Gender marginal `p_G` of the held contexts.
    pub fn gender_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.genders.len()];
        for c in &self.contexts {
            w[c.gender] += c.weight;
        }
        w
    }
}

/// `p̃(a, g)`: weighted mean over held contexts of `p(a | g_c, n_c) 1{g = g_c}`.
pub fn observational_marginal(ct: &ConditionalTable) -> DiscreteJoint {
    let ng = ct.genders.len();
    let mut p = vec![0.0; ct.outcomes.len() * ng];
    for c in &ct.contexts {
        let row = ct.row(c.gender, c.noun).expect("held contexts have rows");
        for (a, v) in row.iter().enumerate() {
            p[a * ng + c.gender] += c.weight * v;
        }
    }
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    DiscreteJoint {
        outcomes: ct.outcomes.clone(),
        groups: ct.genders.clone(),
        p,
    }
}

/// `p(a | do(G = g)) = Σ_n p(a | g, n) p_N(n)`.
pub fn interventional_marginal(ct: &ConditionalTable, g: usize) -> Result<Vec<f64>> {
    if g >= ct.genders.len() {
        return Err(Error::Domain(format!("gender index {g} out of range")));
    }
    let mut out = vec![0.0; ct.outcomes.len()];
    for (n, w) in ct.noun_weights().into_iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = ct.row(g, n).ok_or_else(|| {
            Error::Domain(format!(
                "no row for ({}, {}); the table must cover every gender for each held noun",
                ct.genders[g], ct.nouns[n]
            ))
        })?;
        for (o, v) in out.iter_mut().zip(row) {
            *o += w * v;
        }
    }
    Ok(out)
}

fn interventional_all(ct: &ConditionalTable) -> Result<Vec<Vec<f64>>> {
    (0..ct.genders.len()).map(|g| interventional_marginal(ct, g)).collect()
}

/// Causal MI: weighted JSD of the interventional marginals under `p_G`.
pub fn mi_do(ct: &ConditionalTable) -> Result<f64> {
    weighted_jsd(&interventional_all(ct)?, &ct.gender_weights())
}

/// The joint `p(a | do(g)) p_G(g)`.
pub fn interventional_joint(ct: &ConditionalTable) -> Result<DiscreteJoint> {
    DiscreteJoint::from_conditionals(
        ct.outcomes.clone(),
        ct.genders.clone(),
        &interventional_all(ct)?,
        &ct.gender_weights(),
    )
}

// ---------------------------------------------------------------------------
// Permutation test
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed: f64,
    pub p_value: f64,
    pub n_perm: usize,
}

/// Permutation test over labels: `p = (1 + #{T(π labels) >= T(labels)}) /
/// (n_perm + 1)`. Replica `i` shuffles with stream `i` of `seed`.
pub fn label_permutation_test<T, F>(labels: &[T], n_perm: usize, seed: u64, estimator: F) -> Result<PermutationResult>
where
    T: Clone + Send + Sync,
    F: Fn(&[T]) -> Result<f64> + Sync,
{
    if n_perm < 1 {
        return Err(Error::Domain("n_perm must be at least 1".into()));
    }
    let observed = estimator(labels)?;
    let tol = 1e-12 * observed.abs().max(1.0);
    let hits: Vec<bool> = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut shuffled = labels.to_vec();
            shuffled.shuffle(&mut rng::stream(seed, i as u64));
            Ok(estimator(&shuffled)? >= observed - tol)
        })
        .collect::<Result<_>>()?;
    let hits = hits.into_iter().filter(|h| *h).count();
    Ok(PermutationResult {
        observed,
        p_value: (1 + hits) as f64 / (n_perm + 1) as f64,
        n_perm,
    })
}

/// Permutation test of `mi_do` on a plug-in table: gender labels of the
/// observations are shuffled and the table is refit for every replica.
pub fn mi_do_permutation_test<S: AsRef<str> + Sync>(
    obs: &[(S, S, S)],
    n_perm: usize,
    seed: u64,
) -> Result<PermutationResult> {
    let genders: Vec<&str> = obs.iter().map(|o| o.0.as_ref()).collect();
    label_permutation_test(&genders, n_perm, seed, |labels| {
        let relabeled: Vec<(&str, &str, &str)> = labels
            .iter()
            .zip(obs)
            .map(|(g, o)| (*g, o.1.as_ref(), o.2.as_ref()))
            .collect();
        mi_do(&ConditionalTable::from_observations(&relabeled)?)
    })
}

// ---------------------------------------------------------------------------
// Input tables
// ---------------------------------------------------------------------------

/// Parses `gender noun outcome prob` rows and `gender noun weight` contexts.
pub fn parse_conditional_table(rows_text: &str, contexts_text: &str) -> Result<ConditionalTable> {
    let tsv = parse_tsv(rows_text, &["gender", "noun", "outcome", "prob"], None)?;
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, f) in tsv.rows {
        let g = non_empty(line, f[0], "gender")?;
        let n = non_empty(line, f[1], "noun")?;
        let a = non_empty(line, f[2], "outcome")?;
        let p = parse_f64(line, f[3], "prob")?;
        if !seen.insert((g, n, a)) {
            return Err(Error::schema(line, format!("duplicate entry ({g}, {n}, {a})")));
        }
        rows.push((g.to_string(), n.to_string(), a.to_string(), p));
    }
    let tsv = parse_tsv(contexts_text, &["gender", "noun", "weight"], None)?;
    let mut contexts = Vec::new();
    for (line, f) in tsv.rows {
        let g = non_empty(line, f[0], "gender")?;
        let n = non_empty(line, f[1], "noun")?;
        contexts.push((g.to_string(), n.to_string(), parse_f64(line, f[2], "weight")?));
    }
    ConditionalTable::from_records(&rows, &contexts)
}

/// Parses `gender noun outcome` observation rows.
pub fn parse_observations(text: &str) -> Result<Vec<(String, String, String)>> {
    let tsv = parse_tsv(text, &["gender", "noun", "outcome"], None)?;
    tsv.rows
        .into_iter()
        .map(|(line, f)| {
            Ok((
                non_empty(line, f[0], "gender")?.to_string(),
                non_empty(line, f[1], "noun")?.to_string(),
                non_empty(line, f[2], "outcome")?.to_string(),
            ))
        })
        .collect()
}

/// Named distributions over a shared outcome inventory, with mixture weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDistributions {
    pub names: Vec<String>,
    pub outcomes: Vec<String>,
    pub dists: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Parses `dist outcome prob` rows and `dist weight` rows. Every
/// distribution must list the same outcomes.
pub fn parse_weighted_distributions(dists_text: &str, weights_text: &str) -> Result<WeightedDistributions> {
    let tsv = parse_tsv(dists_text, &["dist", "outcome", "prob"], None)?;
    let mut by_name: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (line, f) in tsv.rows {
        let d = non_empty(line, f[0], "dist")?;
        let a = non_empty(line, f[1], "outcome")?;
        let p = parse_f64(line, f[2], "prob")?;
        if by_name.entry(d.to_string()).or_default().insert(a.to_string(), p).is_some() {
            return Err(Error::schema(line, format!("duplicate entry ({d}, {a})")));
        }
    }
    let outcomes: Vec<String> = by_name.values().next().map(|m| m.keys().cloned().collect()).unwrap_or_default();
    for (name, m) in &by_name {
        if !m.keys().eq(outcomes.iter()) {
            return Err(Error::Domain(format!("distribution {name:?} has a different support")));
        }
    }
    let tsv = parse_tsv(weights_text, &["dist", "weight"], None)?;
    let mut weights_by: BTreeMap<String, f64> = BTreeMap::new();
    for (line, f) in tsv.rows {
        let d = non_empty(line, f[0], "dist")?;
        if weights_by.insert(d.to_string(), parse_f64(line, f[1], "weight")?).is_some() {
            return Err(Error::schema(line, format!("duplicate weight for {d:?}")));
        }
    }
    if !weights_by.keys().eq(by_name.keys()) {
        return Err(Error::Domain("weights and distributions name different sets".into()));
    }
    Ok(WeightedDistributions {
        names: by_name.keys().cloned().collect(),
        outcomes,
        dists: by_name.values().map(|m| m.values().copied().collect()).collect(),
        weights: weights_by.values().copied().collect(),
    })
}

/// Parses `template rank word` completion rows into per-template lists
/// ordered by rank.
pub fn parse_completions(text: &str) -> Result<Vec<Vec<String>>> {
    let tsv = parse_tsv(text, &["template", "rank", "word"], None)?;
    let mut by_template: BTreeMap<String, BTreeMap<u64, String>> = BTreeMap::new();
    for (line, f) in tsv.rows {
        let t = non_empty(line, f[0], "template")?;
        let r: u64 = f[1]
            .parse()
            .map_err(|_| Error::schema(line, format!("rank must be a non-negative integer, got {:?}", f[1])))?;
        let w = non_empty(line, f[2], "word")?;
        if by_template.entry(t.to_string()).or_default().insert(r, w.to_string()).is_some() {
            return Err(Error::schema(line, format!("duplicate rank {r} for template {t:?}")));
        }
    }
    Ok(by_template.into_values().map(|m| m.into_values().collect()).collect())
}

/// One word per line; blank lines are ignored.
pub fn parse_word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}
