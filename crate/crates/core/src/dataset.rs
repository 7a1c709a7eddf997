//! On-disk data model: representation matrices, label tables, lexica, count
//! tables, embedding sets and perplexity tables.
//!
//! Representation matrices use the FPRB binary layout (little-endian):
//!
//! | bytes  | content                     |
//! |--------|-----------------------------|
//! | 0..4   | ASCII `FPRB`                |
//! | 4..8   | `u32` version, always 1     |
//! | 8..16  | `u64` row count N           |
//! | 16..20 | `u32` column count d        |
//! | 20..24 | `u32` reserved, always 0    |
//! | 24..   | N·d `f32`, row-major        |
//!
//! Values are stored in single precision and widened to `f64` on load.
//! Every tabular input is a UTF-8 TSV with a fixed header line.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const FPRB_MAGIC: &[u8; 4] = b"FPRB";
pub const FPRB_VERSION: u32 = 1;
const FPRB_HEADER_LEN: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split tag {other:?}")),
        }
    }
}

/// Labeled representation rows.
///
/// The class inventory is the sorted set of distinct labels; `label_index`
/// refers into it.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprDataset {
    dim: usize,
    matrix: Vec<f64>,
    labels: Vec<String>,
    lemmas: Vec<String>,
    splits: Option<Vec<Split>>,
    classes: Vec<String>,
    label_index: Vec<usize>,
}

impl ReprDataset {
    pub fn new(
        matrix: Vec<f64>,
        dim: usize,
        labels: Vec<String>,
        lemmas: Vec<String>,
        splits: Option<Vec<Split>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("dimension must be at least 1".into()));
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset("no rows".into()));
        }
        let n = labels.len();
        if matrix.len() != n * dim {
            return Err(Error::Shape(format!(
                "matrix has {} values, expected {n}x{dim}",
                matrix.len()
            )));
        }
        if lemmas.len() != n {
            return Err(Error::Shape(format!("{} lemmas for {n} rows", lemmas.len())));
        }
        if let Some(s) = &splits {
            if s.len() != n {
                return Err(Error::Shape(format!("{} split tags for {n} rows", s.len())));
            }
        }
        if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        if let Some(i) = lemmas.iter().position(|l| l.is_empty()) {
            return Err(Error::Data(format!("empty lemma at row {i}")));
        }
        if let Some(i) = labels.iter().position(|l| l.is_empty()) {
            return Err(Error::Data(format!("empty label at row {i}")));
        }
        let classes: Vec<String> = labels
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let lookup: HashMap<&str, usize> = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let label_index = labels.iter().map(|l| lookup[l.as_str()]).collect();
        Ok(ReprDataset {
            dim,
            matrix,
            labels,
            lemmas,
            splits,
            classes,
            label_index,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, i: usize) -> usize {
        self.label_index[i]
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn lemma(&self, i: usize) -> &str {
        &self.lemmas[i]
    }

    pub fn splits(&self) -> Option<&[Split]> {
        self.splits.as_deref()
    }

    pub fn split(&self, i: usize) -> Option<Split> {
        self.splits.as_ref().map(|s| s[i])
    }

    /// Row indices tagged with `split`, ascending.
    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        match &self.splits {
            Some(s) => (0..self.n_rows()).filter(|&i| s[i] == split).collect(),
            None => Vec::new(),
        }
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).collect()
    }

    pub fn with_splits(mut self, splits: Vec<Split>) -> Result<Self> {
        if splits.len() != self.n_rows() {
            return Err(Error::Shape(format!(
                "{} split tags for {} rows",
                splits.len(),
                self.n_rows()
            )));
        }
        self.splits = Some(splits);
        Ok(self)
    }

    /// New dataset holding only `rows` (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut matrix = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            matrix.extend_from_slice(self.row(r));
        }
        ReprDataset::new(
            matrix,
            self.dim,
            rows.iter().map(|&r| self.labels[r].clone()).collect(),
            rows.iter().map(|&r| self.lemmas[r].clone()).collect(),
            self.splits
                .as_ref()
                .map(|s| rows.iter().map(|&r| s[r]).collect()),
        )
    }
}

// ---------------------------------------------------------------------------
// FPRB matrices
// ---------------------------------------------------------------------------

pub fn encode_fprb(n_rows: u64, dim: u32, values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(FPRB_HEADER_LEN + (n_rows as usize) * (dim as usize) * 4);
    out.extend_from_slice(FPRB_MAGIC);
    out.extend_from_slice(&FPRB_VERSION.to_le_bytes());
    out.extend_from_slice(&n_rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses an FPRB blob into `(N, d, values)`.
pub fn decode_fprb(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < FPRB_HEADER_LEN {
        return Err(Error::Format(format!(
            "file too short for FPRB header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[0..4] != FPRB_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FPRB_VERSION {
        return Err(Error::Format(format!("unsupported FPRB version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let reserved = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
    if reserved != 0 {
        return Err(Error::Format(format!("reserved field is {reserved}, expected 0")));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Shape(format!("{n}x{d} overflows")))?;
    let body = &bytes[FPRB_HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::Shape(format!(
            "header declares {n}x{d} ({expected} bytes) but payload has {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n, d, values))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| Error::Input {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf)
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads an FPRB matrix and its labels TSV.
pub fn load_representations(matrix_path: &Path, labels_path: &Path) -> Result<ReprDataset> {
    let (n, d, values) = decode_fprb(&read_bytes(matrix_path)?)?;
    if n == 0 {
        return Err(Error::EmptyDataset("matrix has no rows".into()));
    }
    let text = read_text(labels_path)?;
    let table = parse_labels_tsv(&text)?;
    if table.labels.len() != n {
        return Err(Error::Shape(format!(
            "labels file has {} rows but matrix has {n}",
            table.labels.len()
        )));
    }
    ReprDataset::new(
        values.into_iter().map(f64::from).collect(),
        d,
        table.labels,
        table.lemmas,
        table.splits,
    )
}

#[derive(Debug)]
struct LabelTable {
    labels: Vec<String>,
    lemmas: Vec<String>,
    splits: Option<Vec<Split>>,
}

fn parse_labels_tsv(text: &str) -> Result<LabelTable> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::schema(1, "missing header"))?;
    let with_split = match header {
        "row\tlabel\tlemma" => false,
        "row\tlabel\tlemma\tsplit" => true,
        other => {
            return Err(Error::schema(
                1,
                format!("expected header `row\\tlabel\\tlemma[\\tsplit]`, got {other:?}"),
            ))
        }
    };
    let mut out = LabelTable {
        labels: Vec::new(),
        lemmas: Vec::new(),
        splits: with_split.then(Vec::new),
    };
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let fields: Vec<&str> = line.split('\t').collect();
        let want = if with_split { 4 } else { 3 };
        if fields.len() != want {
            return Err(Error::schema(
                line_no,
                format!("expected {want} fields, got {}", fields.len()),
            ));
        }
        let row: usize = fields[0]
            .parse()
            .map_err(|_| Error::schema(line_no, format!("bad row index {:?}", fields[0])))?;
        if row != i {
            return Err(Error::schema(line_no, format!("row index {row}, expected {i}")));
        }
        if fields[1].is_empty() || fields[2].is_empty() {
            return Err(Error::schema(line_no, "empty label or lemma"));
        }
        out.labels.push(fields[1].to_string());
        out.lemmas.push(fields[2].to_string());
        if let Some(splits) = out.splits.as_mut() {
            let s = fields[3].parse().map_err(|e: String| Error::schema(line_no, e))?;
            splits.push(s);
        }
    }
    Ok(out)
}

/// Writes `ds` as an FPRB matrix plus labels TSV. Loading the result gives
/// back an identical dataset, and re-writing it gives identical bytes.
pub fn write_representations(ds: &ReprDataset, matrix_path: &Path, labels_path: &Path) -> Result<()> {
    fs::write(matrix_path, encode_representations(ds))?;
    fs::write(labels_path, encode_labels(ds))?;
    Ok(())
}

pub fn encode_representations(ds: &ReprDataset) -> Vec<u8> {
    encode_fprb(
        ds.n_rows() as u64,
        ds.dim() as u32,
        ds.matrix.iter().map(|&v| v as f32),
    )
}

pub fn encode_labels(ds: &ReprDataset) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("row\tlabel\tlemma");
    if ds.splits.is_some() {
        out.push_str("\tsplit");
    }
    out.push('\n');
    for i in 0..ds.n_rows() {
        out.push_str(&format!("{i}\t{}\t{}", ds.labels[i], ds.lemmas[i]));
        if let Some(s) = &ds.splits {
            out.push('\t');
            out.push_str(s[i].as_str());
        }
        out.push('\n');
    }
    out.into_bytes()
}

// ---------------------------------------------------------------------------
// Splitting and filtering
// ---------------------------------------------------------------------------

/// Assigns whole lemma groups to train/dev/test.
///
/// Lemmas are sorted, shuffled with `seed`, then each is placed in the split
/// whose row fraction is furthest below its target ratio (ties go to the
/// earlier split). Splits with a zero ratio receive nothing.
pub fn lemma_disjoint_split(ds: ReprDataset, ratios: [f64; 3], seed: u64) -> Result<ReprDataset> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Domain(format!("ratios must be non-negative, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("ratios sum to {total}, expected 1")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for i in 0..ds.n_rows() {
        groups.entry(ds.lemma(i)).or_default().push(i);
    }
    let active = ratios.iter().filter(|&&r| r > 0.0).count();
    if groups.len() < active {
        return Err(Error::Infeasible(format!(
            "{} distinct lemmas cannot fill {active} non-empty splits",
            groups.len()
        )));
    }
    let mut order: Vec<&str> = groups.keys().copied().collect();
    order.shuffle(&mut rng::seeded(seed));

    let n = ds.n_rows() as f64;
    let mut filled = [0usize; 3];
    let mut tags = vec![Split::Train; ds.n_rows()];
    for lemma in order {
        let mut best: Option<(usize, f64)> = None;
        for (s, &ratio) in ratios.iter().enumerate() {
            if ratio <= 0.0 {
                continue;
            }
            let deficit = ratio - filled[s] as f64 / n;
            if best.map_or(true, |(_, d)| deficit > d) {
                best = Some((s, deficit));
            }
        }
        let s = best.expect("at least one active split").0;
        let rows = &groups[lemma];
        filled[s] += rows.len();
        for &r in rows {
            tags[r] = Split::ALL[s];
        }
    }
    ds.with_splits(tags)
}

/// Drops rows whose label occurs fewer than `min_count` times across all
/// splits. The class inventory shrinks accordingly.
pub fn filter_rare_values(ds: &ReprDataset, min_count: usize) -> Result<ReprDataset> {
    if ds.splits().is_none() {
        return Err(Error::Domain("dataset has no split tags".into()));
    }
    let mut counts = vec![0usize; ds.classes().len()];
    for i in 0..ds.n_rows() {
        counts[ds.label_index(i)] += 1;
    }
    let keep: Vec<usize> = (0..ds.n_rows())
        .filter(|&i| counts[ds.label_index(i)] >= min_count)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "every label occurs fewer than {min_count} times"
        )));
    }
    ds.select_rows(&keep)
}

/// Splits `rows` into `(fit, holdout)` with `round(fraction * len)` holdout
/// rows drawn uniformly at random. Both keep ascending order.
pub fn holdout_rows(rows: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = rows.to_vec();
    shuffled.shuffle(&mut rng::seeded(seed));
    let mut n_hold = (fraction * rows.len() as f64).round() as usize;
    if fraction > 0.0 && rows.len() >= 2 {
        n_hold = n_hold.clamp(1, rows.len() - 1);
    }
    let mut hold = shuffled[..n_hold].to_vec();
    let mut fit = shuffled[n_hold..].to_vec();
    hold.sort_unstable();
    fit.sort_unstable();
    (fit, hold)
}

// ---------------------------------------------------------------------------
// TSV tables
// ---------------------------------------------------------------------------

pub(crate) struct Tsv<'a> {
    pub(crate) rows: Vec<(usize, Vec<&'a str>)>,
}

pub(crate) fn parse_tsv<'a>(text: &'a str, header: &[&str], min_fields: Option<usize>) -> Result<Tsv<'a>> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| Error::schema(1, "missing header"))?;
    let head_fields: Vec<&str> = head.split('\t').collect();
    match min_fields {
        None if head_fields != header => {
            return Err(Error::schema(
                1,
                format!("expected header {:?}, got {head:?}", header.join("\t")),
            ))
        }
        Some(_) if !head_fields.starts_with(header) => {
            return Err(Error::schema(
                1,
                format!("header must start with {:?}, got {head:?}", header.join("\t")),
            ))
        }
        _ => {}
    }
    let width = head_fields.len();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != width {
            return Err(Error::schema(
                line_no,
                format!("expected {width} fields, got {}", fields.len()),
            ));
        }
        rows.push((line_no, fields));
    }
    Ok(Tsv { rows })
}

pub(crate) fn parse_f64(line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::schema(line, format!("{what}: cannot parse {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::schema(line, format!("{what}: non-finite value")));
    }
    Ok(v)
}

pub(crate) fn non_empty<'a>(line: usize, field: &'a str, what: &str) -> Result<&'a str> {
    if field.is_empty() {
        Err(Error::schema(line, format!("empty {what}")))
    } else {
        Ok(field)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentAxis {
    Pos,
    Neg,
    Neu,
}

impl std::str::FromStr for SentimentAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pos" => Ok(SentimentAxis::Pos),
            "neg" => Ok(SentimentAxis::Neg),
            "neu" => Ok(SentimentAxis::Neu),
            other => Err(format!("unknown sentiment axis {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SentimentTriple {
    pub pos: f64,
    pub neg: f64,
    pub neu: f64,
}

impl SentimentTriple {
    pub fn get(&self, axis: SentimentAxis) -> f64 {
        match axis {
            SentimentAxis::Pos => self.pos,
            SentimentAxis::Neg => self.neg,
            SentimentAxis::Neu => self.neu,
        }
    }
}

/// Word → (pos, neg, neu) sentiment distribution.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SentimentLexicon {
    pub entries: BTreeMap<String, SentimentTriple>,
}

impl SentimentLexicon {
    pub fn get(&self, word: &str) -> Option<&SentimentTriple> {
        self.entries.get(word)
    }
}

pub fn parse_lexicon(text: &str) -> Result<SentimentLexicon> {
    let tsv = parse_tsv(text, &["word", "pos", "neg", "neu"], None)?;
    let mut entries = BTreeMap::new();
    for (line, f) in tsv.rows {
        let word = non_empty(line, f[0], "word")?;
        let pos = parse_f64(line, f[1], "pos")?;
        let neg = parse_f64(line, f[2], "neg")?;
        let neu = parse_f64(line, f[3], "neu")?;
        if pos < 0.0 || neg < 0.0 || neu < 0.0 {
            return Err(Error::schema(line, "negative sentiment mass"));
        }
        let sum = pos + neg + neu;
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::schema(line, format!("sentiment triple sums to {sum}")));
        }
        if entries
            .insert(word.to_string(), SentimentTriple { pos, neg, neu })
            .is_some()
        {
            return Err(Error::schema(line, format!("duplicate word {word:?}")));
        }
    }
    Ok(SentimentLexicon { entries })
}

pub fn load_lexicon(path: &Path) -> Result<SentimentLexicon> {
    parse_lexicon(&read_text(path)?)
}

/// (word, group) co-occurrence counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CooccurrenceCounts {
    pub counts: BTreeMap<(String, String), u64>,
}

impl CooccurrenceCounts {
    pub fn from_triples<'a>(triples: impl IntoIterator<Item = (&'a str, &'a str, u64)>) -> Self {
        let mut counts = BTreeMap::new();
        for (w, g, c) in triples {
            *counts.entry((w.to_string(), g.to_string())).or_insert(0) += c;
        }
        CooccurrenceCounts { counts }
    }

    /// Sorted group inventory.
    pub fn groups(&self) -> Vec<String> {
        self.counts
            .keys()
            .map(|(_, g)| g.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Sorted word inventory.
    pub fn words(&self) -> Vec<String> {
        self.counts
            .keys()
            .map(|(w, _)| w.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn get(&self, word: &str, group: &str) -> u64 {
        self.counts
            .get(&(word.to_string(), group.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

pub fn parse_counts(text: &str) -> Result<CooccurrenceCounts> {
    let tsv = parse_tsv(text, &["word", "group", "count"], None)?;
    let mut counts = BTreeMap::new();
    for (line, f) in tsv.rows {
        let w = non_empty(line, f[0], "word")?;
        let g = non_empty(line, f[1], "group")?;
        let c: u64 = f[2]
            .parse()
            .map_err(|_| Error::schema(line, format!("count must be a non-negative integer, got {:?}", f[2])))?;
        if counts.insert((w.to_string(), g.to_string()), c).is_some() {
            return Err(Error::schema(line, format!("duplicate pair ({w}, {g})")));
        }
    }
    Ok(CooccurrenceCounts { counts })
}

pub fn load_counts(path: &Path) -> Result<CooccurrenceCounts> {
    parse_counts(&read_text(path)?)
}

/// Word presence per entity, with each entity belonging to one group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntityCounts {
    pub presence: BTreeSet<(String, String)>,
    pub entity_group: BTreeMap<String, String>,
}

pub fn parse_entity_counts(text: &str) -> Result<EntityCounts> {
    let tsv = parse_tsv(text, &["word", "entity", "group"], None)?;
    let mut out = EntityCounts::default();
    for (line, f) in tsv.rows {
        let w = non_empty(line, f[0], "word")?;
        let e = non_empty(line, f[1], "entity")?;
        let g = non_empty(line, f[2], "group")?;
        match out.entity_group.get(e) {
            Some(prev) if prev != g => {
                return Err(Error::schema(
                    line,
                    format!("entity {e:?} mapped to both {prev:?} and {g:?}"),
                ))
            }
            _ => {
                out.entity_group.insert(e.to_string(), g.to_string());
            }
        }
        out.presence.insert((w.to_string(), e.to_string()));
    }
    Ok(out)
}

pub fn load_entity_counts(path: &Path) -> Result<EntityCounts> {
    parse_entity_counts(&read_text(path)?)
}

/// Word vectors of a common dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

pub fn parse_embeddings(text: &str) -> Result<Embeddings> {
    let tsv = parse_tsv(text, &["word"], Some(2))?;
    let mut out = Embeddings::default();
    for (line, f) in tsv.rows {
        let w = non_empty(line, f[0], "word")?;
        let v = f[1..]
            .iter()
            .map(|x| parse_f64(line, x, "component"))
            .collect::<Result<Vec<_>>>()?;
        if v.is_empty() {
            return Err(Error::schema(line, "vector has no components"));
        }
        out.dim = v.len();
        if out.vectors.insert(w.to_string(), v).is_some() {
            return Err(Error::schema(line, format!("duplicate word {w:?}")));
        }
    }
    Ok(out)
}

pub fn load_embeddings(path: &Path) -> Result<Embeddings> {
    parse_embeddings(&read_text(path)?)
}

/// Target sets X, Y and attribute sets A, B of a WEAT query.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WordSets {
    pub x: Vec<String>,
    pub y: Vec<String>,
    pub a: Vec<String>,
    pub b: Vec<String>,
}

/// Parses a `set\tword` TSV where `set` is one of `X`, `Y`, `A`, `B`.
pub fn parse_word_sets(text: &str) -> Result<WordSets> {
    let tsv = parse_tsv(text, &["set", "word"], None)?;
    let mut out = WordSets::default();
    for (line, f) in tsv.rows {
        let w = non_empty(line, f[1], "word")?.to_string();
        match f[0] {
            "X" => out.x.push(w),
            "Y" => out.y.push(w),
            "A" => out.a.push(w),
            "B" => out.b.push(w),
            other => return Err(Error::schema(line, format!("unknown set {other:?}"))),
        }
    }
    Ok(out)
}

pub fn load_word_sets(path: &Path) -> Result<WordSets> {
    parse_word_sets(&read_text(path)?)
}

/// Resolved vectors for a WEAT query.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn resolve(emb: &Embeddings, sets: &WordSets) -> Result<Self> {
        let lookup = |words: &[String]| -> Result<Vec<Vec<f64>>> {
            words
                .iter()
                .map(|w| {
                    emb.vectors
                        .get(w)
                        .cloned()
                        .ok_or_else(|| Error::Data(format!("no vector for word {w:?}")))
                })
                .collect()
        };
        Ok(EmbeddingSet {
            x: lookup(&sets.x)?,
            y: lookup(&sets.y)?,
            a: lookup(&sets.a)?,
            b: lookup(&sets.b)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PplRecord {
    pub category: String,
    pub stereotype_id: String,
    pub identity: String,
    pub ppl_probe: f64,
    pub ppl_identity: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PplTable {
    pub records: Vec<PplRecord>,
}

impl PplTable {
    pub fn new(records: Vec<PplRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            if !(r.ppl_probe > 0.0 && r.ppl_probe.is_finite()) {
                return Err(Error::schema(i + 1, "ppl_probe must be a positive real"));
            }
            if !(r.ppl_identity > 0.0 && r.ppl_identity.is_finite()) {
                return Err(Error::schema(i + 1, "ppl_identity must be a positive real"));
            }
            if !seen.insert((&r.category, &r.stereotype_id, &r.identity)) {
                return Err(Error::schema(
                    i + 1,
                    format!(
                        "duplicate (category, stereotype, identity) = ({}, {}, {})",
                        r.category, r.stereotype_id, r.identity
                    ),
                ));
            }
        }
        Ok(PplTable { records })
    }
}

pub fn parse_ppl_table(text: &str) -> Result<PplTable> {
    let tsv = parse_tsv(
        text,
        &["category", "stereotype_id", "identity", "ppl_probe", "ppl_identity"],
        None,
    )?;
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (line, f) in tsv.rows {
        let rec = PplRecord {
            category: non_empty(line, f[0], "category")?.to_string(),
            stereotype_id: non_empty(line, f[1], "stereotype_id")?.to_string(),
            identity: non_empty(line, f[2], "identity")?.to_string(),
            ppl_probe: parse_f64(line, f[3], "ppl_probe")?,
            ppl_identity: parse_f64(line, f[4], "ppl_identity")?,
        };
        lines.push(line);
        records.push(rec);
    }
    // Re-validate with file line numbers in the diagnostics.
    PplTable::new(records).map_err(|e| match e {
        Error::Schema { row, msg } => Error::schema(lines[row - 1], msg),
        other => other,
    })
}

pub fn load_ppl_table(path: &Path) -> Result<PplTable> {
    parse_ppl_table(&read_text(path)?)
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Domain(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
