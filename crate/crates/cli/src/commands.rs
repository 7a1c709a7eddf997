use std::collections::BTreeMap;
use std::path::PathBuf;

use probekit::association::{
    honest_score, interventional_marginal, lexicon_mean_score, mi_do, mi_do_permutation_test, parse_completions,
    parse_conditional_table, parse_observations, parse_weighted_distributions, parse_word_list, pmi, pmi_entity,
    weat, weat_pvalue, weighted_jsd, ConditionalTable, PmiTable,
};
use probekit::dataset::{
    load_counts, load_embeddings, load_entity_counts, load_lexicon, load_ppl_table, load_representations,
    load_word_sets, read_bytes, read_text, EmbeddingSet,
};
use probekit::fairness::sofa_score;
use probekit::gendered::{
    averaged_ranking, deviation_ranking, rankings_tsv, train_gendered_model, train_grid, GenderedData, Ranking,
    SentimentMode,
};
use probekit::overlap::{overlap_matrix, overlap_tsv, PValueMethod, RunSelection};
use probekit::probe::{decode_checkpoint, encode_checkpoint};
use probekit::select::{evaluate, greedy_select, EvalSet, SelectionReport};
use probekit::train::train_probe;
use probekit::{rng, Error, ProbeParams, ReprDataset, Result, Split, SubsetSample};
use serde::Deserialize;

use crate::config::{apply, RunConfig};
use crate::output::{sha256_hex, Outputs};
use crate::{BiasCommand, Cli, Command, DatasetArgs, EvaluateArgs, GenderedArgs, OverlapArgs, SelectArgs, TrainProbeArgs};

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.bind(&command_name(&cli.command))?;
    cfg.set_seed(cli.seed);
    let out_flag = cli.out.as_ref();
    let mut out = Outputs::default();
    match &cli.command {
        Command::Validate(a) => {
            let summary = validate(&mut cfg, a)?;
            print!("{summary}");
            let dir = match out_flag.or(cfg.out.as_ref()) {
                Some(_) => cfg.out_dir(out_flag)?,
                None => return Ok(()),
            };
            out.add("summary.tsv", summary);
            return out.commit(&dir, &cfg);
        }
        Command::TrainProbe(a) => train(&mut cfg, a, &mut out)?,
        Command::Select(a) => select(&mut cfg, a, &mut out)?,
        Command::Evaluate(a) => evaluate_cmd(&mut cfg, a, &mut out)?,
        Command::Overlap(a) => overlap(&mut cfg, a, &mut out)?,
        Command::Bias(b) => bias(&mut cfg, b, &mut out)?,
        Command::GenderedModel(a) => gendered(&mut cfg, a, &mut out)?,
        Command::Sofa(a) => {
            apply(&mut cfg.top_n, a.top_n);
            let table = load_ppl_table(&cfg.input("ppl", a.ppl.as_ref())?)?;
            let report = sofa_score(&table, cfg.top_n)?;
            for w in &report.warnings {
                eprintln!("probekit: warning: {w}");
            }
            out.add_json("sofa.json", &report)?;
            out.add("sofa.tsv", report.to_tsv());
        }
    }
    let dir = cfg.out_dir(out_flag)?;
    out.commit(&dir, &cfg)
}

fn command_name(c: &Command) -> String {
    match c {
        Command::Validate(_) => "validate".into(),
        Command::TrainProbe(_) => "train-probe".into(),
        Command::Select(_) => "select".into(),
        Command::Evaluate(_) => "evaluate".into(),
        Command::Overlap(_) => "overlap".into(),
        Command::Bias(b) => format!(
            "bias {}",
            match b {
                BiasCommand::Pmi { .. } => "pmi",
                BiasCommand::Pmie { .. } => "pmie",
                BiasCommand::Weat { .. } => "weat",
                BiasCommand::Lexicon { .. } => "lexicon",
                BiasCommand::Honest { .. } => "honest",
                BiasCommand::Jsd { .. } => "jsd",
                BiasCommand::Mido { .. } => "mido",
            }
        ),
        Command::GenderedModel(_) => "gendered-model".into(),
        Command::Sofa(_) => "sofa".into(),
    }
}

fn validate(cfg: &mut RunConfig, a: &crate::ValidateArgs) -> Result<String> {
    let mut lines = Vec::new();
    if let (Some(m), Some(l)) = (
        cfg.optional_input("matrix", a.matrix.as_ref()),
        cfg.optional_input("labels", a.labels.as_ref()),
    ) {
        let ds = load_representations(&m, &l)?;
        let splits = match ds.splits() {
            Some(_) => Split::ALL
                .iter()
                .map(|s| format!("{}={}", s.as_str(), ds.rows_in(*s).len()))
                .collect::<Vec<_>>()
                .join(","),
            None => "none".into(),
        };
        lines.push(format!(
            "representations\t{}\tdim={},classes={},splits={splits}",
            ds.n_rows(),
            ds.dim(),
            ds.classes().len()
        ));
    }
    if let Some(p) = cfg.optional_input("lexicon", a.lexicon.as_ref()) {
        lines.push(format!("lexicon\t{}\t", load_lexicon(&p)?.entries.len()));
    }
    if let Some(p) = cfg.optional_input("counts", a.counts.as_ref()) {
        let c = load_counts(&p)?;
        lines.push(format!("counts\t{}\tgroups={},total={}", c.words().len(), c.groups().len(), c.total()));
    }
    if let Some(p) = cfg.optional_input("entities", a.entities.as_ref()) {
        lines.push(format!("entities\t{}\t", load_entity_counts(&p)?.presence.len()));
    }
    let emb = cfg.optional_input("embeddings", a.embeddings.as_ref());
    let sets = cfg.optional_input("word_sets", a.word_sets.as_ref());
    if let Some(p) = &emb {
        let e = load_embeddings(p)?;
        lines.push(format!("embeddings\t{}\tdim={}", e.vectors.len(), e.dim));
        if let Some(s) = &sets {
            EmbeddingSet::resolve(&e, &load_word_sets(s)?)?;
        }
    }
    if let Some(p) = &sets {
        let s = load_word_sets(p)?;
        lines.push(format!(
            "word_sets\t{}\tx={},y={},a={},b={}",
            s.x.len() + s.y.len() + s.a.len() + s.b.len(),
            s.x.len(),
            s.y.len(),
            s.a.len(),
            s.b.len()
        ));
    }
    if let Some(p) = cfg.optional_input("ppl", a.ppl.as_ref()) {
        lines.push(format!("ppl\t{}\t", load_ppl_table(&p)?.records.len()));
    }
    if lines.is_empty() {
        return Err(Error::Domain("validate needs at least one input".into()));
    }
    let mut out = String::from("input\trows\tdetail\n");
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    Ok(out)
}

fn dataset(cfg: &mut RunConfig, a: &DatasetArgs) -> Result<ReprDataset> {
    let m = cfg.input("matrix", a.matrix.as_ref())?;
    let l = cfg.input("labels", a.labels.as_ref())?;
    load_representations(&m, &l)
}

fn train(cfg: &mut RunConfig, a: &TrainProbeArgs, out: &mut Outputs) -> Result<()> {
    let t = &mut cfg.train;
    apply(&mut t.arch, a.arch);
    apply(&mut t.family, a.family);
    apply(&mut t.hidden, a.hidden);
    apply(&mut t.max_epochs, a.max_epochs);
    apply(&mut t.patience, a.patience);
    apply(&mut t.learning_rate, a.learning_rate);
    apply(&mut t.mc_samples, a.mc_samples);
    apply(&mut t.l1, a.l1);
    apply(&mut t.l2, a.l2);
    apply(&mut t.entropy_scale, a.entropy_scale);
    apply(&mut t.holdout_fraction, a.holdout_fraction);
    apply(&mut t.full_set_mode, a.full_set_mode);
    if a.batch_size.is_some() {
        t.batch_size = a.batch_size;
    }
    let ds = dataset(cfg, &a.data)?;
    let trained = train_probe(&ds, &cfg.train)?;
    let config_hash = sha256_hex(&serde_json::to_vec(&cfg.train)?);
    out.add("probe.ckpt", encode_checkpoint(&trained.theta, &trained.checkpoint_header(&config_hash))?);
    out.add("train_log.tsv", trained.log_tsv());
    Ok(())
}

fn load_probe(cfg: &mut RunConfig, flag: Option<&PathBuf>, ds: &ReprDataset) -> Result<ProbeParams> {
    let (theta, _) = decode_checkpoint(&read_bytes(&cfg.input("checkpoint", flag)?)?)?;
    if theta.input_dim() != ds.dim() {
        return Err(Error::Shape(format!(
            "checkpoint expects dim {}, representations have dim {}",
            theta.input_dim(),
            ds.dim()
        )));
    }
    Ok(theta)
}

/// Dev rows for selection and test rows for reporting; without split tags
/// every row is a dev row.
fn selection_rows(ds: &ReprDataset) -> (Vec<usize>, Option<Vec<usize>>) {
    match ds.splits() {
        None => (ds.all_rows(), None),
        Some(_) => {
            let test = ds.rows_in(Split::Test);
            (ds.rows_in(Split::Dev), (!test.is_empty()).then_some(test))
        }
    }
}

fn select(cfg: &mut RunConfig, a: &SelectArgs, out: &mut Outputs) -> Result<()> {
    if a.k_max.is_some() {
        cfg.k_max = a.k_max;
    }
    let ds = dataset(cfg, &a.data)?;
    let theta = load_probe(cfg, a.checkpoint.as_ref(), &ds)?;
    let (dev, test) = selection_rows(&ds);
    if dev.is_empty() {
        return Err(Error::EmptyDataset("no dev rows to select on".into()));
    }
    let report = greedy_select(
        &theta,
        EvalSet::new(&ds, &dev),
        test.as_deref().map(|t| EvalSet::new(&ds, t)),
        cfg.k_max.unwrap_or(ds.dim()),
    )?;
    out.add("selection.tsv", report.to_tsv());
    out.add_json("selection.json", &report)?;
    Ok(())
}

fn parse_dims(text: &str, dim: usize) -> Result<SubsetSample> {
    let dims = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Domain(format!("bad dimension {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    SubsetSample::from_unsorted(dims, dim)
}

fn evaluate_cmd(cfg: &mut RunConfig, a: &EvaluateArgs, out: &mut Outputs) -> Result<()> {
    let ds = dataset(cfg, &a.data)?;
    let theta = load_probe(cfg, a.checkpoint.as_ref(), &ds)?;
    let c = match (&a.dims, cfg.optional_input("selection", a.selection.as_ref())) {
        (Some(d), _) => parse_dims(d, ds.dim())?,
        (None, Some(p)) => {
            apply(&mut cfg.k, a.k);
            let report: SelectionReport = serde_json::from_str(&read_text(&p)?)?;
            if report.dims.len() < cfg.k {
                return Err(Error::Domain(format!("selection has {} dims, fewer than k={}", report.dims.len(), cfg.k)));
            }
            SubsetSample::from_unsorted(report.dims[..cfg.k].to_vec(), ds.dim())?
        }
        (None, None) => SubsetSample::full(ds.dim()),
    };
    let split = match a.split.as_deref() {
        Some("all") => None,
        Some(s) => Some(s.parse::<Split>().map_err(Error::Domain)?),
        None if ds.splits().is_none() => None,
        None => [Split::Test, Split::Dev].into_iter().find(|s| !ds.rows_in(*s).is_empty()),
    };
    let rows = match split {
        Some(s) => ds.rows_in(s),
        None => ds.all_rows(),
    };
    let m = evaluate(&theta, &c, EvalSet::new(&ds, &rows))?;
    let nmi = m.nmi.map_or_else(|| "NA".to_string(), |v| v.to_string());
    out.add(
        "metrics.tsv",
        format!(
            "split\tn_rows\tn_dims\tmean_log_likelihood\tmi_bits\tnmi\taccuracy\n{}\t{}\t{}\t{}\t{}\t{nmi}\t{}\n",
            split.map_or("all", Split::as_str),
            rows.len(),
            c.len(),
            m.mean_log_likelihood,
            m.mi_bits,
            m.accuracy
        ),
    );
    Ok(())
}

#[derive(Deserialize)]
struct SelectionFile {
    universe: usize,
    dims: Vec<usize>,
}

fn overlap(cfg: &mut RunConfig, a: &OverlapArgs, out: &mut Outputs) -> Result<()> {
    apply(&mut cfg.k, a.k);
    apply(&mut cfg.alpha, a.alpha);
    apply(&mut cfg.n_perm, a.n_perm);
    apply(&mut cfg.exact, a.exact);
    if !a.runs.is_empty() {
        cfg.inputs.retain(|k, _| !k.starts_with("run:"));
        for r in &a.runs {
            let (name, path) = r
                .split_once('=')
                .filter(|(n, p)| !n.is_empty() && !p.is_empty())
                .ok_or_else(|| Error::Domain(format!("--run expects NAME=PATH, got {r:?}")))?;
            if cfg.inputs.insert(format!("run:{name}"), path.into()).is_some() {
                return Err(Error::Domain(format!("duplicate run name {name:?}")));
            }
        }
    }
    let mut runs = Vec::new();
    for (key, path) in &cfg.inputs {
        if let Some(name) = key.strip_prefix("run:") {
            let f: SelectionFile = serde_json::from_str(&read_text(path)?)?;
            runs.push(RunSelection {
                name: name.to_string(),
                universe: f.universe,
                dims: f.dims,
            });
        }
    }
    if runs.len() < 2 {
        return Err(Error::Domain("overlap needs at least two --run inputs".into()));
    }
    let method = if cfg.exact {
        PValueMethod::Exact
    } else {
        PValueMethod::Permutation { n_perm: cfg.n_perm }
    };
    let results = overlap_matrix(&runs, cfg.k, cfg.alpha, method, cfg.perm_seed())?;
    out.add("overlap.tsv", overlap_tsv(&results));
    Ok(())
}

fn pmi_outputs(out: &mut Outputs, name: &str, table: &PmiTable) {
    out.add(&format!("{name}.tsv"), table.to_tsv());
    let mut dropped = String::from("word\tgroup\treason\n");
    for w in &table.dropped_words {
        dropped.push_str(&format!("{w}\t*\tbelow_min_count\n"));
    }
    for (w, g) in &table.skipped {
        dropped.push_str(&format!("{w}\t{g}\tzero_count\n"));
    }
    out.add(&format!("{name}_dropped.tsv"), dropped);
}

fn bias(cfg: &mut RunConfig, b: &BiasCommand, out: &mut Outputs) -> Result<()> {
    match b {
        BiasCommand::Pmi {
            counts,
            min_count,
            smoothing,
        } => {
            apply(&mut cfg.min_count, *min_count);
            apply(&mut cfg.smoothing, *smoothing);
            let c = load_counts(&cfg.input("counts", counts.as_ref())?)?;
            pmi_outputs(out, "pmi", &pmi(&c, cfg.min_count, cfg.smoothing)?);
        }
        BiasCommand::Pmie { entities, min_count } => {
            apply(&mut cfg.min_count, *min_count);
            let e = load_entity_counts(&cfg.input("entities", entities.as_ref())?)?;
            pmi_outputs(out, "pmie", &pmi_entity(&e, cfg.min_count)?);
        }
        BiasCommand::Weat {
            embeddings,
            word_sets,
            n_perm,
        } => {
            apply(&mut cfg.n_perm, *n_perm);
            let emb = load_embeddings(&cfg.input("embeddings", embeddings.as_ref())?)?;
            let sets = load_word_sets(&cfg.input("word_sets", word_sets.as_ref())?)?;
            let e = EmbeddingSet::resolve(&emb, &sets)?;
            let r = weat(&e)?;
            let p = if cfg.n_perm == 0 {
                "NA".to_string()
            } else {
                weat_pvalue(&e, cfg.n_perm, cfg.perm_seed())?.to_string()
            };
            out.add(
                "weat.tsv",
                format!(
                    "statistic\teffect_size\tp_value\tn_perm\n{}\t{}\t{p}\t{}\n",
                    r.statistic, r.effect_size, cfg.n_perm
                ),
            );
        }
        BiasCommand::Lexicon { lexicon, tokens, axis } => {
            apply(&mut cfg.axis, *axis);
            let lex = load_lexicon(&cfg.input("lexicon", lexicon.as_ref())?)?;
            let text = read_text(&cfg.input("tokens", tokens.as_ref())?)?;
            let toks: Vec<&str> = text.split_whitespace().collect();
            let (score, coverage) = lexicon_mean_score(&toks, &lex, cfg.axis)?;
            let axis = serde_json::to_value(cfg.axis)?;
            out.add(
                "lexicon.tsv",
                format!(
                    "axis\tscore\tcoverage\tn_tokens\n{}\t{score}\t{coverage}\t{}\n",
                    axis.as_str().unwrap_or_default(),
                    toks.len()
                ),
            );
        }
        BiasCommand::Honest {
            completions,
            hurt_words,
        } => {
            let comps = parse_completions(&read_text(&cfg.input("completions", completions.as_ref())?)?)?;
            let hurt = parse_word_list(&read_text(&cfg.input("hurt_words", hurt_words.as_ref())?)?);
            let score = honest_score(&comps, &hurt)?;
            out.add(
                "honest.tsv",
                format!(
                    "honest\tn_templates\tk\n{score}\t{}\t{}\n",
                    comps.len(),
                    comps.first().map_or(0, Vec::len)
                ),
            );
        }
        BiasCommand::Jsd { dists, weights } => {
            let d = read_text(&cfg.input("dists", dists.as_ref())?)?;
            let w = read_text(&cfg.input("weights", weights.as_ref())?)?;
            let wd = parse_weighted_distributions(&d, &w)?;
            let jsd = weighted_jsd(&wd.dists, &wd.weights)?;
            out.add("jsd.tsv", format!("jsd\tn_dists\tn_outcomes\n{jsd}\t{}\t{}\n", wd.names.len(), wd.outcomes.len()));
        }
        BiasCommand::Mido {
            table,
            contexts,
            observations,
            n_perm,
        } => {
            apply(&mut cfg.n_perm, *n_perm);
            let (ct, test) = match cfg.optional_input("observations", observations.as_ref()) {
                Some(p) => {
                    let obs = parse_observations(&read_text(&p)?)?;
                    let test = mi_do_permutation_test(&obs, cfg.n_perm, cfg.perm_seed())?;
                    (ConditionalTable::from_observations(&obs)?, Some(test))
                }
                None => {
                    let rows = read_text(&cfg.input("table", table.as_ref())?)?;
                    let ctx = read_text(&cfg.input("contexts", contexts.as_ref())?)?;
                    (parse_conditional_table(&rows, &ctx)?, None)
                }
            };
            let value = mi_do(&ct)?;
            let (p, n) = match test {
                Some(t) => (t.p_value.to_string(), t.n_perm.to_string()),
                None => ("NA".into(), "0".into()),
            };
            out.add("mido.tsv", format!("mi_do\tp_value\tn_perm\n{value}\t{p}\t{n}\n"));
            let mut marg = String::from("gender\toutcome\tprob\n");
            for (g, gname) in ct.genders().iter().enumerate() {
                for (a, p) in ct.outcomes().iter().zip(interventional_marginal(&ct, g)?) {
                    marg.push_str(&format!("{gname}\t{a}\t{p}\n"));
                }
            }
            out.add("interventional.tsv", marg);
        }
    }
    Ok(())
}

fn gendered(cfg: &mut RunConfig, a: &GenderedArgs, out: &mut Outputs) -> Result<()> {
    let g = &mut cfg.gendered;
    apply(&mut g.alpha, a.alpha);
    apply(&mut g.beta, a.beta);
    apply(&mut g.max_epochs, a.max_epochs);
    apply(&mut g.learning_rate, a.learning_rate);
    if let Some(c) = a.collapsed {
        g.sentiments = if c { SentimentMode::Collapsed } else { SentimentMode::Lexicon };
    }
    apply(&mut cfg.grid, a.grid);
    apply(&mut cfg.top_n, a.top_n);
    let counts = load_counts(&cfg.input("counts", a.counts.as_ref())?)?;
    let lex = cfg
        .optional_input("lexicon", a.lexicon.as_ref())
        .map(|p| load_lexicon(&p))
        .transpose()?;
    let data = GenderedData::new(&counts, lex.as_ref(), cfg.gendered.sentiments)?;
    let mut rankings: Vec<Ranking> = Vec::new();
    if cfg.grid {
        let cells = train_grid(&data, &cfg.gendered)?;
        let mut grid = String::from("alpha\tbeta\tepochs\tobjective\tcross_entropy\tposterior_kl\tl1\n");
        for c in &cells {
            let last = c.model.log.last().map(|e| e.terms).unwrap_or_default();
            grid.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                c.alpha,
                c.beta,
                c.model.log.len(),
                last.total,
                last.cross_entropy,
                last.posterior_kl,
                last.l1
            ));
        }
        for gender in &data.genders {
            for s in &data.sentiments {
                rankings.push(averaged_ranking(&cells, gender, s, cfg.top_n)?);
            }
        }
        out.add("grid.tsv", grid);
    } else {
        let model = train_gendered_model(&data, &cfg.gendered, &mut rng::seeded(cfg.gendered.seed))?;
        for gender in &data.genders {
            for s in &data.sentiments {
                rankings.push(deviation_ranking(&model.params, gender, s, cfg.top_n)?);
            }
        }
        out.add("train_log.tsv", model.log_tsv());
        out.add_json("model.json", &model.params)?;
    }
    if rankings.iter().any(|r| r.clipped) {
        eprintln!(
            "probekit: warning: top_n={} exceeds the vocabulary of {} words; rankings clipped",
            cfg.top_n,
            data.words.len()
        );
    }
    out.add("rankings.tsv", rankings_tsv(&rankings));
    let coverage: BTreeMap<&str, usize> = [("vocabulary", data.words.len()), ("lexicon_covered", data.coverage())].into();
    out.add_json("coverage.json", &coverage)?;
    Ok(())
}
