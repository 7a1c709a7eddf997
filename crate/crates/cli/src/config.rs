//! Run configuration: a JSON file whose keys mirror the command-line flags.
//! Flags override file values, and the resolved configuration is written
//! next to the outputs of every run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use probekit::dataset::{read_text, SentimentAxis};
use probekit::gendered::GenderedObjectiveConfig;
use probekit::{Error, Result, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand this configuration belongs to, e.g. `"bias weat"`.
    pub command: Option<String>,
    /// Input paths by flag name; overlap runs use `run:<name>`.
    pub inputs: BTreeMap<String, PathBuf>,
    pub out: Option<PathBuf>,
    /// Master seed; when set it overrides `train.seed` and `gendered.seed`.
    pub seed: Option<u64>,
    pub train: TrainConfig,
    pub gendered: GenderedObjectiveConfig,
    /// Top-k cutoff for overlap tests.
    pub k: usize,
    /// Greedy selection depth; `None` selects every dimension.
    pub k_max: Option<usize>,
    /// Family-wise error level.
    pub alpha: f64,
    pub n_perm: usize,
    /// Use the hypergeometric tail instead of permutations for overlaps.
    pub exact: bool,
    pub min_count: u64,
    pub smoothing: f64,
    pub axis: SentimentAxis,
    pub top_n: usize,
    /// Train the gendered model over its hyperparameter grid.
    pub grid: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            inputs: BTreeMap::new(),
            out: None,
            seed: None,
            train: TrainConfig::default(),
            gendered: GenderedObjectiveConfig::default(),
            k: probekit::overlap::DEFAULT_K,
            k_max: None,
            alpha: 0.05,
            n_perm: probekit::overlap::DEFAULT_PERMUTATIONS,
            exact: false,
            min_count: probekit::association::DEFAULT_MIN_COUNT,
            smoothing: 0.0,
            axis: SentimentAxis::Neg,
            top_n: 20,
            grid: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => serde_json::from_str(&read_text(p)?)
                .map_err(|e| Error::Format(format!("config {}: {e}", p.display()))),
        }
    }

    /// Claims the configuration for `command`; a file written for another
    /// command is rejected.
    pub fn bind(&mut self, command: &str) -> Result<()> {
        if let Some(c) = &self.command {
            if c != command {
                return Err(Error::Domain(format!("config is for command {c:?}, not {command:?}")));
            }
        }
        self.command = Some(command.to_string());
        Ok(())
    }

    pub fn set_seed(&mut self, flag: Option<u64>) {
        if flag.is_some() {
            self.seed = flag;
        }
        if let Some(s) = self.seed {
            self.train.seed = s;
            self.gendered.seed = s;
        }
    }

    /// Seed for permutation tests.
    pub fn perm_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn input(&mut self, name: &str, flag: Option<&PathBuf>) -> Result<PathBuf> {
        self.optional_input(name, flag)
            .ok_or_else(|| Error::Domain(format!("missing input --{name}")))
    }

    pub fn optional_input(&mut self, name: &str, flag: Option<&PathBuf>) -> Option<PathBuf> {
        if let Some(p) = flag {
            self.inputs.insert(name.to_string(), p.clone());
        }
        self.inputs.get(name).cloned()
    }

    pub fn out_dir(&mut self, flag: Option<&PathBuf>) -> Result<PathBuf> {
        if let Some(p) = flag {
            self.out = Some(p.clone());
        }
        self.out.clone().ok_or_else(|| Error::Domain("missing output directory --out".into()))
    }

    pub fn snapshot(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

/// Overwrites `slot` when a flag was given.
pub fn apply<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
