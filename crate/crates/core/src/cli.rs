//! Command-line front end. Every subcommand writes its reports plus a
//! `manifest.json` into the output directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cluster::{self, MdsConfig, MdsInit, Pooling};
use crate::corpora::{self, AlignOptions, CorefDoc, DepSentence};
use crate::error::{Error, Result};
use crate::headprobe::{self, coref, CandidateMode, CorefOptions, DepEvalOptions, TypedAccuracy};
use crate::interchange::{self, ExtractSet, HeadId, TokenKind};
use crate::probeclf::{self, AnyProbe, ArcScorer, ProbeKind, RootMode, TrainConfig};
use crate::surface;
use crate::synth::{self, HeadBehavior, SynthSpec};
use crate::{Embeddings, Real};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "attnscope", version, about = "Analysis of transformer attention maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Relative-position, token-category and entropy statistics per head.
    Surface(SurfaceArgs),
    /// Per-layer gradient-importance curves from a gradient report.
    GradReport(GradArgs),
    /// Per-head dependency accuracy with fixed-offset baselines.
    ProbeHeads(ProbeHeadsArgs),
    /// Per-head antecedent accuracy with rule-based baselines.
    ProbeCoref(ProbeCorefArgs),
    /// Train an attention-based dependency probe.
    TrainProbe(TrainArgs),
    /// Evaluate a saved probe.
    EvalProbe(EvalArgs),
    /// Head distances and a 2-D embedding of the heads.
    Cluster(ClusterArgs),
    /// Write a synthetic extract and matching treebank.
    Synth(SynthArgs),
    /// Check input files without analysing them.
    Validate(ValidateArgs),
}

#[derive(Debug, Args, Serialize)]
struct SurfaceArgs {
    #[arg(long)]
    extract: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Largest relative position reported, in tokens.
    #[arg(long, default_value_t = 2)]
    offset_range: usize,
}

#[derive(Debug, Args, Serialize)]
struct GradArgs {
    #[arg(long)]
    grad_report: PathBuf,
    /// Extract whose layer count the report must match.
    #[arg(long)]
    extract: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct AlignArgs {
    /// Prefix of wordpiece continuation tokens.
    #[arg(long, default_value = "##")]
    continuation_marker: String,
    #[arg(long)]
    case_insensitive: bool,
}

impl AlignArgs {
    fn options(&self) -> AlignOptions {
        AlignOptions {
            continuation_marker: self.continuation_marker.clone(),
            case_insensitive: self.case_insensitive,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ProbeHeadsArgs {
    #[arg(long)]
    extract: PathBuf,
    #[arg(long)]
    dep_corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fixed-offset baseline scans [-N, N] without 0.
    #[arg(long, default_value_t = 10)]
    offset_range: usize,
    /// Also score `poss` with a following possessive clitic as the dependent.
    #[arg(long)]
    possessive_clitics: bool,
    #[command(flatten)]
    align: AlignArgs,
}

#[derive(Debug, Args, Serialize)]
struct ProbeCorefArgs {
    #[arg(long)]
    extract: PathBuf,
    #[arg(long)]
    coref_corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Let the argmax range over every word instead of earlier mention heads.
    #[arg(long)]
    all_words: bool,
    #[command(flatten)]
    align: AlignArgs,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// attn, attn-words or distance-words.
    #[arg(long, default_value = "attn")]
    kind: String,
    #[arg(long)]
    extract: Option<PathBuf>,
    #[arg(long)]
    dep_corpus: PathBuf,
    #[arg(long)]
    dev_extract: Option<PathBuf>,
    #[arg(long)]
    dev_dep_corpus: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Attach root words to an extra [CLS] node using the kept [CLS] column.
    #[arg(long)]
    keep_special: bool,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    l2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Full-batch steps that halve until the loss does not increase.
    #[arg(long)]
    full_batch: bool,
    /// Hidden width of the distance-words model.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[command(flatten)]
    align: AlignArgs,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    probe: PathBuf,
    #[arg(long)]
    extract: Option<PathBuf>,
    #[arg(long)]
    dep_corpus: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    keep_special: bool,
    #[command(flatten)]
    align: AlignArgs,
}

#[derive(Debug, Args, Serialize)]
struct ClusterArgs {
    #[arg(long)]
    extract: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sum divergences over tokens instead of averaging.
    #[arg(long)]
    raw_sum_distances: bool,
    /// CSV of `head,tag` labels for the scatter plot.
    #[arg(long)]
    tags: Option<PathBuf>,
    /// Start from random coordinates with this seed instead of classical MDS.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 50)]
    sentences: usize,
    /// Also write a held-out extract and treebank of this many sentences.
    #[arg(long, default_value_t = 0)]
    dev_sentences: usize,
    #[arg(long, default_value_t = 2)]
    min_words: usize,
    #[arg(long, default_value_t = 12)]
    max_words: usize,
    #[arg(long, default_value_t = 0.0)]
    split_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Head behavior as `<layer>-<head>=<behavior>` (1-based), where the
    /// behavior is uniform, offset:<k>, gold:<mass>, sep or noise:<seed>.
    /// Unlisted heads are uniform.
    #[arg(long = "head")]
    head_behaviors: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
struct ValidateArgs {
    #[arg(long)]
    extract: Option<PathBuf>,
    #[arg(long)]
    grad_report: Option<PathBuf>,
    #[arg(long)]
    dep_corpus: Option<PathBuf>,
    #[arg(long)]
    coref_corpus: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Where to write the summary and manifest; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit status: 0 on success, 1 when the run fails,
/// 2 on a usage error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("error code=usage message={first:?}");
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error code={} message={:?}", e.code(), e.to_string());
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Surface(a) => cmd_surface(a),
        Command::GradReport(a) => cmd_grad(a),
        Command::ProbeHeads(a) => cmd_probe_heads(a),
        Command::ProbeCoref(a) => cmd_probe_coref(a),
        Command::TrainProbe(a) => cmd_train(a),
        Command::EvalProbe(a) => cmd_eval(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Validate(a) => cmd_validate(a),
    }
}

#[derive(Serialize)]
struct InputDigest {
    role: String,
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    config: &'a C,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

/// Collects output files and input digests for one run.
struct Run {
    out: PathBuf,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

impl Run {
    fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Run {
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(InputDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.out.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish<C: Serialize>(mut self, subcommand: &str, config: &C) -> Result<()> {
        let manifest = Manifest {
            tool: "attnscope",
            version: VERSION,
            subcommand,
            config,
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.outputs),
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Write(e.to_string()))?;
        text.push('\n');
        let path = self.out.join("manifest.json");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn load_extract(run: &mut Run, role: &str, path: &Path) -> Result<ExtractSet> {
    run.input(role, path)?;
    interchange::load_extract(path)
}

fn load_dep(run: &mut Run, role: &str, path: &Path) -> Result<Vec<DepSentence>> {
    run.input(role, path)?;
    corpora::load_dep_corpus(path)
}

fn load_emb(run: &mut Run, path: &Path) -> Result<Embeddings> {
    run.input("embeddings", path)?;
    corpora::load_embeddings(path)
}

fn cmd_surface(a: SurfaceArgs) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    let set = load_extract(&mut run, "extract", &a.extract)?;
    let r = a.offset_range as isize;
    let mut offsets = Vec::new();
    for off in -r..=r {
        offsets.push((format!("offset{off:+}"), surface::offset_stats::<Real>(&set, off)?));
    }
    run.write("offsets.csv", |w| {
        let rows: Vec<(&str, &[crate::HeadStat])> = offsets.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
        surface::write_stats_csv(&rows, w)
    })?;

    let mut cats = Vec::new();
    for kind in [TokenKind::Cls, TokenKind::Sep, TokenKind::PeriodComma] {
        let c = surface::category_stats::<Real>(&set, kind)?;
        let split = |v: &[(HeadId, Option<Real>)]| {
            v.iter()
                .filter_map(|(h, x)| x.map(|value| surface::HeadStat { head: *h, value }))
                .collect::<Vec<_>>()
        };
        let name = kind.name().to_lowercase();
        cats.push((name.clone(), c.shares.clone()));
        cats.push((format!("{name}_from_{name}"), split(&c.from_same)));
        cats.push((format!("{name}_from_other"), split(&c.from_other)));
    }
    run.write("categories.csv", |w| {
        let rows: Vec<(&str, &[crate::HeadStat])> = cats.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
        surface::write_stats_csv(&rows, w)
    })?;

    let entropy = surface::head_entropy::<Real>(&set)?;
    let cls = match surface::cls_head_entropy::<Real>(&set) {
        Ok(v) => v,
        Err(Error::Empty(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    run.write("entropy.csv", |w| surface::write_stats_csv(&[("entropy", &entropy), ("cls_entropy", &cls)], w))?;

    let mut layers: Vec<(String, Vec<Real>)> = Vec::new();
    for (name, stats) in cats.iter().filter(|(n, _)| !n.contains("_from_")) {
        layers.push((name.clone(), surface::layer_means(stats, set.n_layers)));
    }
    layers.push(("entropy".into(), surface::layer_means(&entropy, set.n_layers)));
    if !cls.is_empty() {
        layers.push(("cls_entropy".into(), surface::layer_means(&cls, set.n_layers)));
    }
    run.write("layers.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["layer", "statistic", "value"]).map_err(Error::csv)?;
        for (name, means) in &layers {
            for (l, v) in means.iter().enumerate() {
                csv.write_record([(l + 1).to_string(), name.clone(), format!("{v:.6}")])
                    .map_err(Error::csv)?;
            }
        }
        csv.flush().map_err(Error::csv)
    })?;
    run.finish("surface", &a)
}

fn cmd_grad(a: GradArgs) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    run.input("grad-report", &a.grad_report)?;
    let report = interchange::load_gradient_report(&a.grad_report)?;
    let layers = match &a.extract {
        Some(p) => Some(load_extract(&mut run, "extract", p)?.n_layers),
        None => None,
    };
    let rows = surface::aggregate_gradients(&report, layers)?;
    run.write("gradients.csv", |w| surface::write_gradient_csv(&rows, w))?;
    run.finish("grad-report", &a)
}

fn cmd_probe_heads(a: ProbeHeadsArgs) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    let set = load_extract(&mut run, "extract", &a.extract)?;
    let corpus = load_dep(&mut run, "dep-corpus", &a.dep_corpus)?;
    let opts = DepEvalOptions {
        align: a.align.options(),
        possessive_clitics: a.possessive_clitics,
    };
    let evals = headprobe::eval_all_heads(&set, &corpus, &opts)?;
    let table = headprobe::relation_table(&evals, &corpus, a.offset_range)?;
    run.write("head_scores.csv", |w| headprobe::write_head_scores(&evals, w))?;
    run.write("relations.csv", |w| headprobe::write_relation_table(&table, w))?;
    run.finish("probe-heads", &a)
}

fn load_coref(run: &mut Run, path: &Path) -> Result<Vec<CorefDoc>> {
    run.input("coref-corpus", path)?;
    corpora::load_coref_corpus(path)
}

fn cmd_probe_coref(a: ProbeCorefArgs) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    let set = load_extract(&mut run, "extract", &a.extract)?;
    let docs = load_coref(&mut run, &a.coref_corpus)?;
    let opts = CorefOptions {
        candidates: if a.all_words { CandidateMode::AllWords } else { CandidateMode::MentionHeads },
        align: a.align.options(),
    };
    let evals = coref::eval_coref_all_heads(&set, &docs, &opts)?;
    let per_head: Vec<(String, TypedAccuracy)> = evals.iter().map(|e| (e.head.to_string(), e.accuracy)).collect();
    run.write("coref_heads.csv", |w| coref::write_coref_table(&per_head, w))?;

    // baselines see the same truncated documents as the heads
    let mut truncated = docs.clone();
    for (doc, seg) in truncated.iter_mut().zip(&set.segments) {
        doc.truncate(seg.n_words());
    }
    let base = coref::coref_baselines(&truncated);
    let mut best: Option<&coref::CorefEval> = None;
    for e in &evals {
        let acc = e.accuracy.overall();
        if best.is_none_or(|b| acc > b.accuracy.overall() || b.accuracy.overall().is_nan() && !acc.is_nan()) {
            best = Some(e);
        }
    }
    let mut rows = Vec::new();
    if let Some(b) = best {
        rows.push((format!("head {}", b.head), b.accuracy));
    }
    rows.push(("nearest".to_string(), base.nearest));
    rows.push(("head-match".to_string(), base.head_match));
    rows.push(("rule-sieve".to_string(), base.rule_sieve));
    run.write("coref.csv", |w| coref::write_coref_table(&rows, w))?;
    run.finish("probe-coref", &a)
}

fn root_mode(keep_special: bool) -> RootMode {
    if keep_special {
        RootMode::ClsNode
    } else {
        RootMode::Exclude
    }
}

/// Builds instances for `kind`: attention from the extract, embeddings
/// when the model reads words.
fn instances(
    kind: ProbeKind,
    extract: Option<&ExtractSet>,
    corpus: &[DepSentence],
    emb: Option<&Embeddings>,
    root: RootMode,
    align: &AlignOptions,
) -> Result<Vec<crate::ParseInstance>> {
    match kind {
        ProbeKind::DistanceWords => {
            let emb = emb.ok_or_else(|| Error::InvalidArgument("distance-words needs --embeddings".into()))?;
            Ok(corpus.iter().map(|s| probeclf::instance_from_sentence(s, Some(emb))).collect())
        }
        ProbeKind::AttnOnly | ProbeKind::AttnWords => {
            let set = extract.ok_or_else(|| Error::InvalidArgument(format!("{} needs --extract", kind.name())))?;
            if kind == ProbeKind::AttnWords && emb.is_none() {
                return Err(Error::InvalidArgument("attn-words needs --embeddings".into()));
            }
            probeclf::build_instances(set, corpus, emb, root, align)
        }
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let kind: ProbeKind = a.kind.parse()?;
    let mut run = Run::new(&a.out)?;
    let extract = match &a.extract {
        Some(p) => Some(load_extract(&mut run, "extract", p)?),
        None => None,
    };
    let corpus = load_dep(&mut run, "dep-corpus", &a.dep_corpus)?;
    let emb = match &a.embeddings {
        Some(p) => Some(load_emb(&mut run, p)?),
        None => None,
    };
    let root = root_mode(a.keep_special);
    let align = a.align.options();
    let train_set = instances(kind, extract.as_ref(), &corpus, emb.as_ref(), root, &align)?;

    let dev = match (&a.dev_extract, &a.dev_dep_corpus) {
        (_, None) => None,
        (dx, Some(dc)) => {
            let dev_extract = match dx {
                Some(p) => Some(load_extract(&mut run, "dev-extract", p)?),
                None => None,
            };
            let dev_corpus = load_dep(&mut run, "dev-dep-corpus", dc)?;
            let inst = instances(kind, dev_extract.as_ref(), &dev_corpus, emb.as_ref(), root, &align)?;
            Some((dev_corpus, inst))
        }
    };

    let config = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        l2: a.l2,
        seed: a.seed,
        adaptive: !a.full_batch,
        batch_size: a.batch_size,
    };
    let n_heads = train_set.first().map_or(0, |i| i.n_heads);
    let dim = emb.as_ref().map_or(0, |e| e.dim);
    let init = match kind {
        ProbeKind::AttnOnly => AnyProbe::AttnOnly(probeclf::AttnOnlyProbe::zeros(n_heads)),
        ProbeKind::AttnWords => AnyProbe::AttnWords(probeclf::AttnWordsProbe::zeros(n_heads, dim)),
        ProbeKind::DistanceWords => AnyProbe::DistanceWords(probeclf::DistanceWordsProbe::new(dim, a.hidden, a.seed)),
    };
    let outcome = probeclf::train(init, &train_set, dev.as_ref().map(|(_, i)| i.as_slice()), &config)?;

    let mut rows = vec![(format!("{} (train)", kind.name()), probeclf::eval_uas(&outcome.probe, &train_set)?)];
    if let Some((dev_corpus, dev_inst)) = &dev {
        rows.push((format!("{} (dev)", kind.name()), probeclf::eval_uas(&outcome.probe, dev_inst)?));
        rows.push(("right-branching (dev)".to_string(), probeclf::right_branching(dev_corpus)?));
    } else {
        rows.push(("right-branching (train)".to_string(), probeclf::right_branching(&corpus)?));
    }
    run.write("train_log.csv", |w| probeclf::write_train_log(&outcome, w))?;
    run.write("uas.csv", |w| probeclf::write_uas_table(&rows, w))?;
    run.write("probe.bin", |w| {
        w.write_all(&probeclf::encode_probe(&outcome.probe)).map_err(|e| Error::Write(e.to_string()))
    })?;
    run.finish("train-probe", &a)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    run.input("probe", &a.probe)?;
    let probe = probeclf::load_probe(&a.probe)?;
    let extract = match &a.extract {
        Some(p) => Some(load_extract(&mut run, "extract", p)?),
        None => None,
    };
    let corpus = load_dep(&mut run, "dep-corpus", &a.dep_corpus)?;
    let emb = match &a.embeddings {
        Some(p) => Some(load_emb(&mut run, p)?),
        None => None,
    };
    let inst = instances(probe.kind(), extract.as_ref(), &corpus, emb.as_ref(), root_mode(a.keep_special), &a.align.options())?;
    if let Some(first) = inst.first() {
        probe.check(first)?;
    }
    let rows = vec![
        (probe.kind().name().to_string(), probeclf::eval_uas(&probe, &inst)?),
        ("right-branching".to_string(), probeclf::right_branching(&corpus)?),
    ];
    run.write("uas.csv", |w| probeclf::write_uas_table(&rows, w))?;
    run.finish("eval-probe", &a)
}

fn cmd_cluster(a: ClusterArgs) -> Result<()> {
    let mut run = Run::new(&a.out)?;
    let set = load_extract(&mut run, "extract", &a.extract)?;
    let tags = match &a.tags {
        Some(p) => {
            run.input("tags", p)?;
            cluster::parse_tags(File::open(p).map_err(|e| Error::io(p, e))?)?
        }
        None => BTreeMap::new(),
    };
    let pooling = if a.raw_sum_distances { Pooling::Sum } else { Pooling::Mean };
    let dist = cluster::head_distances::<Real>(&set, pooling)?;
    let config = MdsConfig {
        max_iterations: a.max_iterations,
        init: a.seed.map_or(MdsInit::Classical, |seed| MdsInit::Random { seed }),
        ..MdsConfig::default()
    };
    let emb = cluster::mds_embed(&dist, 2, &config)?;
    run.write("distances.csv", |w| cluster::write_distance_csv(&dist, w))?;
    run.write("coords.csv", |w| cluster::write_coords_csv(&dist.heads, &emb, &tags, w))?;
    run.write("heads.svg", |w| cluster::write_scatter_svg(&dist.heads, &emb, &tags, w))?;
    run.write("mds.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["normalized_stress", "iterations"]).map_err(Error::csv)?;
        csv.write_record([format!("{:.9e}", emb.stress), emb.iterations.to_string()])
            .map_err(Error::csv)?;
        csv.flush().map_err(Error::csv)
    })?;
    run.finish("cluster", &a)
}

/// Parses `<layer>-<head>=<behavior>`.
fn parse_head_behavior(s: &str) -> Result<(HeadId, HeadBehavior)> {
    let bad = |why: &str| Error::InvalidArgument(format!("bad head behavior {s:?}: {why}"));
    let (head, behavior) = s.split_once('=').ok_or_else(|| bad("expected <layer>-<head>=<behavior>"))?;
    let head: HeadId = head.parse()?;
    let (name, arg) = match behavior.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (behavior, None),
    };
    let num = |what: &str| arg.ok_or_else(|| bad(&format!("{name} needs {what}")));
    let b = match name {
        "uniform" => HeadBehavior::Uniform,
        "sep" => HeadBehavior::SepSink,
        "offset" => HeadBehavior::Offset(num("an offset")?.parse().map_err(|_| bad("offset is not an integer"))?),
        "gold" => HeadBehavior::GoldHead {
            mass: num("a mass")?.parse().map_err(|_| bad("mass is not a number"))?,
        },
        "noise" => HeadBehavior::Noise {
            seed: num("a seed")?.parse().map_err(|_| bad("seed is not an integer"))?,
        },
        _ => return Err(bad("unknown behavior")),
    };
    Ok((head, b))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::uniform(a.layers, a.heads).with_split_rate(a.split_rate, a.seed);
    for s in &a.head_behaviors {
        let (head, b) = parse_head_behavior(s)?;
        if head.layer >= a.layers || head.head >= a.heads {
            return Err(Error::InvalidArgument(format!("head {head} outside {} x {}", a.layers, a.heads)));
        }
        spec = spec.with_head(head, b);
    }
    spec.validate()?;
    let mut run = Run::new(&a.out)?;
    let corpus = synth::random_corpus(a.sentences, a.min_words, a.max_words, a.seed)?;
    let set = synth::generate(&spec, &corpus)?;
    run.write("extract.atnx", |w| {
        w.write_all(&interchange::encode_extract(&set)?).map_err(|e| Error::Write(e.to_string()))
    })?;
    run.write("corpus.conllu", |w| {
        w.write_all(corpora::write_dep_corpus(&corpus).as_bytes()).map_err(|e| Error::Write(e.to_string()))
    })?;
    if a.dev_sentences > 0 {
        let dev_seed = a.seed.wrapping_add(1);
        let dev = synth::random_corpus(a.dev_sentences, a.min_words, a.max_words, dev_seed)?;
        let dev_spec = SynthSpec { seed: dev_seed, ..spec };
        let dev_set = synth::generate(&dev_spec, &dev)?;
        run.write("dev_extract.atnx", |w| {
            w.write_all(&interchange::encode_extract(&dev_set)?).map_err(|e| Error::Write(e.to_string()))
        })?;
        run.write("dev_corpus.conllu", |w| {
            w.write_all(corpora::write_dep_corpus(&dev).as_bytes()).map_err(|e| Error::Write(e.to_string()))
        })?;
    }
    run.finish("synth", &a)
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let mut checks: Vec<(String, String)> = Vec::new();
    let mut digests = Vec::new();
    let mut note = |role: &str, path: &Path, summary: String| -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        digests.push(InputDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        checks.push((role.to_string(), summary));
        Ok(())
    };
    if let Some(p) = &a.extract {
        let set = interchange::load_extract(p)?;
        let summary = format!(
            "{} segments, {} layers x {} heads, {} tokens",
            set.segments.len(),
            set.n_layers,
            set.n_heads,
            set.total_tokens()
        );
        note("extract", p, summary)?;
    }
    if let Some(p) = &a.grad_report {
        let r = interchange::load_gradient_report(p)?;
        note("grad-report", p, format!("{} layers", r.n_layers))?;
    }
    if let Some(p) = &a.dep_corpus {
        let c = corpora::load_dep_corpus(p)?;
        note("dep-corpus", p, format!("{} sentences", c.len()))?;
    }
    if let Some(p) = &a.coref_corpus {
        let c = corpora::load_coref_corpus(p)?;
        note("coref-corpus", p, format!("{} documents", c.len()))?;
    }
    if let Some(p) = &a.embeddings {
        let e: Embeddings = corpora::load_embeddings(p)?;
        note("embeddings", p, format!("{} vectors of dimension {}", e.len(), e.dim))?;
    }
    if checks.is_empty() {
        return Err(Error::InvalidArgument("nothing to validate".into()));
    }
    for (role, summary) in &checks {
        println!("ok {role}: {summary}");
    }
    if let Some(out) = &a.out {
        let mut run = Run::new(out)?;
        run.inputs = digests;
        run.write("validate.csv", |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["input", "summary"]).map_err(Error::csv)?;
            for (role, summary) in &checks {
                csv.write_record([role, summary]).map_err(Error::csv)?;
            }
            csv.flush().map_err(Error::csv)
        })?;
        run.finish("validate", &a)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_behavior_syntax() {
        assert_eq!(parse_head_behavior("1-2=gold:0.9").unwrap(), (HeadId::new(0, 1), HeadBehavior::GoldHead { mass: 0.9 }));
        assert_eq!(parse_head_behavior("2-1=offset:-1").unwrap(), (HeadId::new(1, 0), HeadBehavior::Offset(-1)));
        assert_eq!(parse_head_behavior("1-1=offset:+1").unwrap().1, HeadBehavior::Offset(1));
        assert_eq!(parse_head_behavior("1-1=sep").unwrap().1, HeadBehavior::SepSink);
        assert!(parse_head_behavior("1-1=gold").is_err());
        assert!(parse_head_behavior("0-1=uniform").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["attnscope", "frobnicate"]), 2);
        assert_eq!(run(["attnscope", "surface", "--bogus"]), 2);
        assert_eq!(run(["attnscope", "--help"]), 0);
    }
}
