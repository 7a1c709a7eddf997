//! Greedy dimension selection and probe evaluation metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ReprDataset;
use crate::error::{Error, Result};
use crate::math::{argmax, entropy_of_counts};
use crate::probe::{GaussianProbe, ProbeParams};
use crate::subset::SubsetSample;
use crate::train::{train_probe, TrainConfig, TrainedProbe};

/// A set of rows of one dataset.
#[derive(Clone, Copy)]
pub struct EvalSet<'a> {
    pub ds: &'a ReprDataset,
    pub rows: &'a [usize],
}

impl<'a> EvalSet<'a> {
    pub fn new(ds: &'a ReprDataset, rows: &'a [usize]) -> Self {
        EvalSet { ds, rows }
    }

    /// Plug-in entropy of the labels, in nats.
    pub fn label_entropy(&self) -> f64 {
        let mut counts = vec![0usize; self.ds.classes().len()];
        for &r in self.rows {
            counts[self.ds.label_index(r)] += 1;
        }
        entropy_of_counts(&counts)
    }

    fn check(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::EmptyDataset("evaluation set is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_log_likelihood: f64,
    pub mi_nats: f64,
    pub mi_bits: f64,
    /// `None` when the labels have zero entropy.
    pub nmi: Option<f64>,
    pub accuracy: f64,
}

/// Metrics from per-row log class probabilities.
pub fn metrics_from<F>(set: EvalSet<'_>, log_probs: F) -> Result<Metrics>
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    set.check()?;
    let per_row: Vec<(f64, bool)> = set
        .rows
        .iter()
        .map(|&r| {
            let lp = log_probs(r);
            let y = set.ds.label_index(r);
            (lp[y], argmax(&lp) == y)
        })
        .collect();
    let n = per_row.len() as f64;
    let mean_ll = per_row.iter().map(|p| p.0).sum::<f64>() / n;
    let accuracy = per_row.iter().filter(|p| p.1).count() as f64 / n;
    let h = set.label_entropy();
    let mi = h + mean_ll;
    Ok(Metrics {
        mean_log_likelihood: mean_ll,
        mi_nats: mi,
        mi_bits: mi / std::f64::consts::LN_2,
        nmi: (h > 0.0).then(|| mi / h),
        accuracy,
    })
}

/// Probe metrics on `set` with only the dimensions in `c` visible.
pub fn evaluate(theta: &ProbeParams, c: &SubsetSample, set: EvalSet<'_>) -> Result<Metrics> {
    check_dims(theta, c, set.ds)?;
    metrics_from(set, |r| theta.log_probs_on(set.ds.row(r), Some(c.indices())))
}

pub fn evaluate_gaussian(model: &GaussianProbe, set: EvalSet<'_>) -> Result<Metrics> {
    if model.classes() != set.ds.classes() {
        return Err(Error::Shape("model classes differ from dataset classes".into()));
    }
    set.check()?;
    metrics_from(set, |r| model.log_probs(set.ds.row(r)).expect("fitted dims are in range"))
}

fn check_dims(theta: &ProbeParams, c: &SubsetSample, ds: &ReprDataset) -> Result<()> {
    if theta.input_dim() != ds.dim() {
        return Err(Error::Shape(format!(
            "probe expects {} dimensions, dataset has {}",
            theta.input_dim(),
            ds.dim()
        )));
    }
    if theta.classes() != ds.classes() {
        return Err(Error::Shape("probe classes differ from dataset classes".into()));
    }
    if c.indices().last().is_some_and(|&d| d >= ds.dim()) {
        return Err(Error::Shape("subset index out of range".into()));
    }
    Ok(())
}

/// MI lower bound `H(P) - mean NLL` in nats and bits.
pub fn mi_lower_bound(theta: &ProbeParams, c: &SubsetSample, set: EvalSet<'_>) -> Result<(f64, f64)> {
    let m = evaluate(theta, c, set)?;
    Ok((m.mi_nats, m.mi_bits))
}

/// MI lower bound divided by the label entropy.
pub fn nmi(theta: &ProbeParams, c: &SubsetSample, set: EvalSet<'_>) -> Result<f64> {
    evaluate(theta, c, set)?
        .nmi
        .ok_or_else(|| Error::Undefined("label entropy is zero, NMI is undefined".into()))
}

pub fn accuracy(theta: &ProbeParams, c: &SubsetSample, set: EvalSet<'_>) -> Result<f64> {
    Ok(evaluate(theta, c, set)?.accuracy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub step: usize,
    pub dim: usize,
    pub dev: Metrics,
    pub test: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Size of the dimension universe.
    pub universe: usize,
    /// Selected dimensions in selection order; prefix `t` is the subset
    /// after step `t`.
    pub dims: Vec<usize>,
    pub steps: Vec<SelectionStep>,
}

impl SelectionReport {
    pub fn prefix(&self, t: usize) -> SubsetSample {
        SubsetSample::from_unsorted(self.dims[..t].to_vec(), self.universe).expect("selected dims are in range")
    }

    /// `step  dim  mi_bits  nmi  accuracy`, using test metrics when present.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\tdim\tmi_bits\tnmi\taccuracy\n");
        for s in &self.steps {
            let m = s.test.as_ref().unwrap_or(&s.dev);
            let nmi = m.nmi.map_or_else(|| "NA".to_string(), |v| v.to_string());
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", s.step, s.dim, m.mi_bits, nmi, m.accuracy));
        }
        out
    }
}

/// Mean log-likelihood of each candidate `C ∪ {d}` given cached first-layer
/// pre-activations for `C`.
fn candidate_scores(theta: &ProbeParams, dev: EvalSet<'_>, cache: &[Vec<f64>], candidates: &[usize]) -> Vec<f64> {
    candidates
        .par_iter()
        .map(|&d| {
            let mut total = 0.0;
            let mut z = Vec::new();
            for (i, &r) in dev.rows.iter().enumerate() {
                z.clone_from(&cache[i]);
                theta.add_input_column(&mut z, d, dev.ds.row(r)[d]);
                total += theta.log_probs_from_first_layer(&z)[dev.ds.label_index(r)];
            }
            total / dev.rows.len() as f64
        })
        .collect()
}

/// Greedily grows a subset one dimension at a time, each time adding the
/// dimension that maximizes the mean dev log-likelihood. Ties go to the
/// lowest index. Metrics are recorded for every prefix on dev and, when
/// given, on `test`.
pub fn greedy_select(
    theta: &ProbeParams,
    dev: EvalSet<'_>,
    test: Option<EvalSet<'_>>,
    k_max: usize,
) -> Result<SelectionReport> {
    if k_max > theta.input_dim() {
        return Err(Error::Domain(format!(
            "k_max={k_max} exceeds |D|={}",
            theta.input_dim()
        )));
    }
    dev.check()?;
    check_dims(theta, &SubsetSample::empty(), dev.ds)?;
    if let Some(t) = test {
        t.check()?;
        check_dims(theta, &SubsetSample::empty(), t.ds)?;
    }
    let mut cache: Vec<Vec<f64>> = dev
        .rows
        .iter()
        .map(|&r| theta.first_layer(dev.ds.row(r), Some(&[])))
        .collect();
    let mut remaining: Vec<usize> = (0..theta.input_dim()).collect();
    let mut chosen = Vec::with_capacity(k_max);
    let mut steps = Vec::with_capacity(k_max);
    for step in 1..=k_max {
        let scores = candidate_scores(theta, dev, &cache, &remaining);
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        let d = remaining.remove(best);
        chosen.push(d);
        for (i, &r) in dev.rows.iter().enumerate() {
            theta.add_input_column(&mut cache[i], d, dev.ds.row(r)[d]);
        }
        let c = SubsetSample::from_unsorted(chosen.clone(), theta.input_dim())?;
        steps.push(SelectionStep {
            step,
            dim: d,
            dev: evaluate(theta, &c, dev)?,
            test: test.map(|t| evaluate(theta, &c, t)).transpose()?,
        });
    }
    Ok(SelectionReport {
        universe: theta.input_dim(),
        dims: chosen,
        steps,
    })
}

/// Copy of `ds` with every column outside `c` set to zero.
pub fn masked_dataset(ds: &ReprDataset, c: &SubsetSample) -> Result<ReprDataset> {
    if c.indices().last().is_some_and(|&d| d >= ds.dim()) {
        return Err(Error::Shape("subset index out of range".into()));
    }
    let keep = c.mask(ds.dim());
    let matrix = ds
        .matrix()
        .chunks(ds.dim())
        .flat_map(|row| row.iter().zip(&keep).map(|(v, k)| if *k { *v } else { 0.0 }))
        .collect();
    ReprDataset::new(
        matrix,
        ds.dim(),
        ds.labels().to_vec(),
        (0..ds.n_rows()).map(|i| ds.lemma(i).to_string()).collect(),
        ds.splits().map(|s| s.to_vec()),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundReport {
    pub dev: Metrics,
    pub test: Option<Metrics>,
}

/// Trains a fresh full-set probe on the representation masked to `c` and
/// evaluates it with the same mask.
pub fn retrained_upper_bound(
    ds: &ReprDataset,
    c: &SubsetSample,
    config: &TrainConfig,
    dev_rows: &[usize],
    test_rows: Option<&[usize]>,
) -> Result<(TrainedProbe, UpperBoundReport)> {
    let masked = masked_dataset(ds, c)?;
    let config = TrainConfig {
        full_set_mode: true,
        ..config.clone()
    };
    let trained = train_probe(&masked, &config)?;
    let dev = evaluate(&trained.theta, c, EvalSet::new(ds, dev_rows))?;
    let test = test_rows
        .map(|rows| evaluate(&trained.theta, c, EvalSet::new(ds, rows)))
        .transpose()?;
    Ok((trained, UpperBoundReport { dev, test }))
}
