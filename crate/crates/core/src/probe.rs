//! Classifiers over masked representations.
//!
//! A probe maps a representation `h` and a subset `C` of its dimensions to a
//! distribution over the class inventory. Dimensions outside `C` are zeroed
//! before the network sees them, so the first layer only ever reads the
//! columns in `C`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{decode_fprb, encode_fprb, ReprDataset};
use crate::error::{Error, Result};
use crate::math::{log_softmax_in_place, log_sum_exp};
use crate::subset::{SubsetFamilyParams, SubsetSample};

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_SHRINKAGE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Linear,
    Mlp1,
    Mlp2,
}

impl Arch {
    fn hidden_layers(self) -> usize {
        match self {
            Arch::Linear => 0,
            Arch::Mlp1 => 1,
            Arch::Mlp2 => 2,
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Arch::Linear),
            "mlp1" => Ok(Arch::Mlp1),
            "mlp2" => Ok(Arch::Mlp2),
            other => Err(format!("unknown probe architecture {other:?}")),
        }
    }
}

/// Placement of one affine layer inside the flat parameter vector: a
/// row-major `outputs x inputs` weight matrix followed by `outputs` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    fn end(&self) -> usize {
        self.bias_offset + self.outputs
    }
}

/// Parameters of a linear or ReLU MLP probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    arch: Arch,
    input_dim: usize,
    hidden: usize,
    classes: Vec<String>,
    values: Vec<f64>,
}

impl ProbeParams {
    /// All-zero parameters. `hidden` is ignored for linear probes.
    pub fn zeros(arch: Arch, input_dim: usize, hidden: usize, classes: Vec<String>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::Domain("a probe needs at least two classes".into()));
        }
        if input_dim == 0 {
            return Err(Error::Domain("input dimension must be positive".into()));
        }
        if arch != Arch::Linear && hidden == 0 {
            return Err(Error::Domain("hidden width must be positive".into()));
        }
        let hidden = if arch == Arch::Linear { 0 } else { hidden };
        let mut p = ProbeParams {
            arch,
            input_dim,
            hidden,
            classes,
            values: Vec::new(),
        };
        let n = p.layer_shapes().last().map(|l| l.end()).unwrap_or(0);
        p.values = vec![0.0; n];
        Ok(p)
    }

    /// Builds parameters from an existing flat vector.
    pub fn from_values(
        arch: Arch,
        input_dim: usize,
        hidden: usize,
        classes: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let mut p = Self::zeros(arch, input_dim, hidden, classes)?;
        if values.len() != p.values.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("probe parameters must be finite".into()));
        }
        p.values = values;
        Ok(p)
    }

    /// Draws every parameter uniformly from `(-half_width, half_width)`.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R, half_width: f64) {
        for v in &mut self.values {
            *v = rng.random_range(-half_width..half_width);
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut widths = vec![self.input_dim];
        widths.extend(std::iter::repeat_n(self.hidden, self.arch.hidden_layers()));
        widths.push(self.classes.len());
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    inputs: w[0],
                    outputs: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset = shape.end();
                shape
            })
            .collect()
    }

    /// `true` for weight entries, `false` for biases.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for l in self.layer_shapes() {
            mask[l.weight_offset..l.bias_offset].fill(true);
        }
        mask
    }

    /// First-layer pre-activations for `x` restricted to `subset` (`None`
    /// reads every column).
    pub fn first_layer(&self, x: &[f64], subset: Option<&[usize]>) -> Vec<f64> {
        let l = self.layer_shapes()[0];
        let w = &self.values[l.weight_offset..l.bias_offset];
        let mut z = self.values[l.bias_offset..l.end()].to_vec();
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &w[o * l.inputs..(o + 1) * l.inputs];
            *zo += match subset {
                Some(idx) => idx.iter().map(|&d| row[d] * x[d]).sum::<f64>(),
                None => row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>(),
            };
        }
        z
    }

    /// Adds the contribution of input column `d` with value `value` to
    /// first-layer pre-activations `z`.
    pub fn add_input_column(&self, z: &mut [f64], d: usize, value: f64) {
        let l = self.layer_shapes()[0];
        let w = &self.values[l.weight_offset..l.bias_offset];
        for (o, zo) in z.iter_mut().enumerate() {
            *zo += w[o * l.inputs + d] * value;
        }
    }

    /// Pre-activations of every layer after the first, given the first.
    fn forward_from(&self, first: Vec<f64>) -> Vec<Vec<f64>> {
        let shapes = self.layer_shapes();
        let mut pre = Vec::with_capacity(shapes.len());
        pre.push(first);
        for l in &shapes[1..] {
            let w = &self.values[l.weight_offset..l.bias_offset];
            let mut z = self.values[l.bias_offset..l.end()].to_vec();
            let prev = pre.last().unwrap();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * l.inputs..(o + 1) * l.inputs];
                *zo += row.iter().zip(prev).map(|(a, &b)| a * b.max(0.0)).sum::<f64>();
            }
            pre.push(z);
        }
        pre
    }

    fn forward(&self, x: &[f64], subset: Option<&[usize]>) -> Vec<Vec<f64>> {
        self.forward_from(self.first_layer(x, subset))
    }

    /// Log class probabilities from first-layer pre-activations.
    pub fn log_probs_from_first_layer(&self, first: &[f64]) -> Vec<f64> {
        let mut out = self.forward_from(first.to_vec()).pop().unwrap_or_default();
        log_softmax_in_place(&mut out);
        out
    }

    /// Log class probabilities for `x` restricted to `subset`. No shape
    /// checks; see [`class_log_probs`] for the checked version.
    pub fn log_probs_on(&self, x: &[f64], subset: Option<&[usize]>) -> Vec<f64> {
        let mut out = self.forward(x, subset).pop().unwrap_or_default();
        log_softmax_in_place(&mut out);
        out
    }

    /// Returns `log p(target | x, subset)` and adds `scale` times its gradient
    /// with respect to the parameters into `grad`.
    pub fn log_prob_and_grad(
        &self,
        x: &[f64],
        subset: Option<&[usize]>,
        target: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let shapes = self.layer_shapes();
        let pre = self.forward(x, subset);
        let mut logp = pre.last().unwrap().clone();
        log_softmax_in_place(&mut logp);
        let result = logp[target];

        // d log p_target / d logits = onehot - softmax
        let mut delta: Vec<f64> = logp.iter().map(|l| -l.exp() * scale).collect();
        delta[target] += scale;

        for li in (0..shapes.len()).rev() {
            let l = shapes[li];
            for (o, &dz) in delta.iter().enumerate() {
                grad[l.bias_offset + o] += dz;
            }
            if li == 0 {
                let gw = &mut grad[l.weight_offset..l.bias_offset];
                for (o, &dz) in delta.iter().enumerate() {
                    if dz == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * l.inputs..(o + 1) * l.inputs];
                    match subset {
                        Some(idx) => {
                            for &d in idx {
                                row[d] += dz * x[d];
                            }
                        }
                        None => {
                            for (g, xi) in row.iter_mut().zip(x) {
                                *g += dz * xi;
                            }
                        }
                    }
                }
                break;
            }
            let prev = &pre[li - 1];
            let w = &self.values[l.weight_offset..l.bias_offset];
            let mut next = vec![0.0; l.inputs];
            {
                let gw = &mut grad[l.weight_offset..l.bias_offset];
                for (o, &dz) in delta.iter().enumerate() {
                    if dz == 0.0 {
                        continue;
                    }
                    let row = &w[o * l.inputs..(o + 1) * l.inputs];
                    let grow = &mut gw[o * l.inputs..(o + 1) * l.inputs];
                    for i in 0..l.inputs {
                        let a = prev[i];
                        if a > 0.0 {
                            grow[i] += dz * a;
                            next[i] += dz * row[i];
                        }
                    }
                }
            }
            delta = next;
        }
        result
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(label)).ok()
    }
}

/// Copy of `h` with every dimension outside `c` set to zero.
pub fn mask(h: &[f64], c: &SubsetSample) -> Result<Vec<f64>> {
    if let Some(&d) = c.indices().last() {
        if d >= h.len() {
            return Err(Error::Shape(format!(
                "subset index {d} out of range for a vector of length {}",
                h.len()
            )));
        }
    }
    let mut out = vec![0.0; h.len()];
    for &d in c.indices() {
        out[d] = h[d];
    }
    Ok(out)
}

/// Log class probabilities of `theta` on `h` masked to `c`.
pub fn class_log_probs(theta: &ProbeParams, h: &[f64], c: &SubsetSample) -> Result<Vec<f64>> {
    if h.len() != theta.input_dim {
        return Err(Error::Shape(format!(
            "probe expects {} inputs, got {}",
            theta.input_dim,
            h.len()
        )));
    }
    if c.indices().last().is_some_and(|&d| d >= h.len()) {
        return Err(Error::Shape("subset index out of range".into()));
    }
    let out = theta.log_probs_on(h, Some(c.indices()));
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite probe output".into()));
    }
    Ok(out)
}

fn check_lambdas(l1: f64, l2: f64) -> Result<()> {
    if !(l1 >= 0.0 && l2 >= 0.0) {
        return Err(Error::Domain(format!(
            "regularization strengths must be non-negative, got {l1} and {l2}"
        )));
    }
    Ok(())
}

/// `l1 * sum |W| + l2 * sum W^2` over weight matrices; biases are not
/// penalized.
pub fn elasticnet_penalty(theta: &ProbeParams, l1: f64, l2: f64) -> Result<f64> {
    check_lambdas(l1, l2)?;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for l in theta.layer_shapes() {
        for w in &theta.values[l.weight_offset..l.bias_offset] {
            abs += w.abs();
            sq += w * w;
        }
    }
    Ok(l1 * abs + l2 * sq)
}

/// Adds the (sub)gradient of [`elasticnet_penalty`] into `out`, using
/// `sign(0) = 0`.
pub fn elasticnet_grad(theta: &ProbeParams, l1: f64, l2: f64, out: &mut [f64]) -> Result<()> {
    check_lambdas(l1, l2)?;
    for l in theta.layer_shapes() {
        for i in l.weight_offset..l.bias_offset {
            let w = theta.values[i];
            let sign = if w > 0.0 {
                1.0
            } else if w < 0.0 {
                -1.0
            } else {
                0.0
            };
            out[i] += l1 * sign + 2.0 * l2 * w;
        }
    }
    Ok(())
}

/// Class-conditional Gaussian classifier on a fixed subset of dimensions.
#[derive(Clone, Debug)]
pub struct GaussianProbe {
    dims: Vec<usize>,
    classes: Vec<String>,
    log_priors: Vec<f64>,
    means: Vec<DVector<f64>>,
    /// Lower Cholesky factor of each class covariance.
    factors: Vec<DMatrix<f64>>,
    log_dets: Vec<f64>,
}

/// Fits one Gaussian per class on `rows` of `ds`, restricted to `c`.
///
/// Covariances are shrunk toward their diagonal:
/// `(1 - shrinkage) * S + shrinkage * diag(S)`, with `S` the unbiased sample
/// covariance. Priors are empirical class frequencies.
pub fn gaussian_probe_fit(
    ds: &ReprDataset,
    rows: &[usize],
    c: &SubsetSample,
    shrinkage: f64,
) -> Result<GaussianProbe> {
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::Domain(format!("shrinkage must lie in [0, 1], got {shrinkage}")));
    }
    if c.indices().last().is_some_and(|&d| d >= ds.dim()) {
        return Err(Error::Shape("subset index out of range".into()));
    }
    let dims = c.indices().to_vec();
    let k = dims.len();
    let n_classes = ds.classes().len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for &r in rows {
        by_class[ds.label_index(r)].push(r);
    }
    if let Some((ci, _)) = by_class.iter().enumerate().find(|(_, m)| m.len() < 2) {
        return Err(Error::Data(format!(
            "class {:?} has fewer than 2 training rows",
            ds.classes()[ci]
        )));
    }
    let total = rows.len() as f64;
    let mut model = GaussianProbe {
        dims: dims.clone(),
        classes: ds.classes().to_vec(),
        log_priors: Vec::with_capacity(n_classes),
        means: Vec::with_capacity(n_classes),
        factors: Vec::with_capacity(n_classes),
        log_dets: Vec::with_capacity(n_classes),
    };
    for (ci, members) in by_class.iter().enumerate() {
        let n = members.len() as f64;
        let mut mean = DVector::zeros(k);
        for &r in members {
            let row = ds.row(r);
            for (j, &d) in dims.iter().enumerate() {
                mean[j] += row[d];
            }
        }
        mean /= n;
        let mut cov = DMatrix::zeros(k, k);
        for &r in members {
            let row = ds.row(r);
            let centered = DVector::from_iterator(k, dims.iter().enumerate().map(|(j, &d)| row[d] - mean[j]));
            cov.ger(1.0, &centered, &centered, 1.0);
        }
        cov /= n - 1.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    cov[(i, j)] *= 1.0 - shrinkage;
                }
            }
        }
        let chol = nalgebra::Cholesky::new(cov).ok_or_else(|| {
            Error::Numeric(format!(
                "covariance of class {:?} is singular after shrinkage",
                ds.classes()[ci]
            ))
        })?;
        let l = chol.unpack();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::Numeric(format!(
                "covariance of class {:?} is singular after shrinkage",
                ds.classes()[ci]
            )));
        }
        model.log_priors.push((n / total).ln());
        model.means.push(mean);
        model.factors.push(l);
        model.log_dets.push(log_det);
    }
    Ok(model)
}

impl GaussianProbe {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Log class-conditional density of `h` (full-length representation).
    pub fn log_density(&self, class: usize, h: &[f64]) -> f64 {
        let k = self.dims.len();
        let diff = DVector::from_iterator(
            k,
            self.dims.iter().enumerate().map(|(j, &d)| h[d] - self.means[class][j]),
        );
        let y = self.factors[class]
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (y.norm_squared() + self.log_dets[class] + k as f64 * (2.0 * std::f64::consts::PI).ln())
    }

    /// Posterior log class probabilities by Bayes' rule.
    pub fn log_probs(&self, h: &[f64]) -> Result<Vec<f64>> {
        if self.dims.last().is_some_and(|&d| d >= h.len()) {
            return Err(Error::Shape("representation shorter than fitted subset".into()));
        }
        let joint: Vec<f64> = (0..self.classes.len())
            .map(|c| self.log_priors[c] + self.log_density(c, h))
            .collect();
        let z = log_sum_exp(&joint);
        Ok(joint.iter().map(|j| j - z).collect())
    }
}

pub fn gaussian_probe_log_probs(model: &GaussianProbe, h: &[f64]) -> Result<Vec<f64>> {
    model.log_probs(h)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PBCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Metadata stored ahead of the parameter blob in a checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub arch: Arch,
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub family: Option<SubsetFamilyParams>,
}

/// Serializes a probe as `magic, version, header length, JSON header`,
/// followed by the parameters as a one-column float32 FPRB blob.
pub fn encode_checkpoint(theta: &ProbeParams, header: &CheckpointHeader) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend(encode_fprb(theta.n_params() as u64, 1, theta.values.iter().map(|&v| v as f32)));
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ProbeParams, CheckpointHeader)> {
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a probe checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    let (n, d, values) = decode_fprb(&bytes[16 + len..])?;
    if d != 1 {
        return Err(Error::Format("checkpoint blob must have one column".into()));
    }
    let theta = ProbeParams::from_values(
        header.arch,
        header.input_dim,
        header.hidden,
        header.classes.clone(),
        values.into_iter().map(f64::from).collect(),
    )?;
    debug_assert_eq!(n, theta.n_params());
    Ok((theta, header))
}
