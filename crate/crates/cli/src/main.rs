//! `fss`: corpus generation, training, search, evaluation and gradient
//! checks from the command line.

mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fss_core::config::RunConfig;
use fss_core::detector::{parse_proposals, proposals_to_string, Proposal};
use fss_core::eval::{build_judgments, evaluate, localization, ClipSegment, MetricReport, ScoredSegment, Summary};
use fss_core::par::Exec;
use fss_core::search::{parse_ranked_lists, parse_score_matrix, ranked_lists_to_string, score_matrix_to_string, Direction};
use fss_core::synth::{self, Corpus, Split};
use fss_core::system::{ground_truth_segments, System, SystemKind};
use fss_core::FssError;

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "fss", version, about = "Fingerspelling search toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides both `seed` and `corpus.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// `section.key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenCorpus {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one system on a corpus and write a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        system: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score matrices without rayon.
        #[arg(long)]
        sequential: bool,
    },
    /// Score a corpus split and write the score matrix, ranked lists and
    /// any localization output into a directory.
    Search {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// fws, fvs or both.
        #[arg(long, default_value = "both")]
        direction: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sequential: bool,
    },
    /// Evaluate ranked lists, a score matrix and/or segment predictions.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Ranked-list files (either direction).
        #[arg(long)]
        ranked: Vec<PathBuf>,
        /// Score matrix file; ranked in the directions given by --direction.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Segment predictions for AP@IoU.
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[arg(long, default_value = "both")]
        direction: String,
        /// Comma-separated subset of map,mf1,p@1,p@10,r@1,r@10,ap@iou
        /// printed to stdout.
        #[arg(long, default_value = "map,mf1,p@1,p@10,r@1,r@10,ap@iou")]
        metrics: String,
        /// Label stored in the report.
        #[arg(long, default_value = "system")]
        system: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes; each maps to its own exit code and `kind=` tag.
#[derive(Debug)]
enum CliError {
    MissingFile(PathBuf),
    Io(PathBuf, std::io::Error),
    Config(String),
    Dimension(String),
    Parse(String),
    Check(String),
    Core(FssError),
}

impl CliError {
    fn kind(&self) -> (&'static str, u8) {
        match self {
            CliError::MissingFile(_) => ("missing_file", 3),
            CliError::Io(..) => ("io", 4),
            CliError::Config(_) => ("config", 5),
            CliError::Dimension(_) => ("dimension_mismatch", 6),
            CliError::Parse(_) => ("parse", 7),
            CliError::Check(_) => ("check_failed", 8),
            CliError::Core(_) => ("runtime", 1),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::MissingFile(p) => format!("no such file: {}", p.display()),
            CliError::Io(p, e) => format!("{}: {e}", p.display()),
            CliError::Config(m) | CliError::Dimension(m) | CliError::Parse(m) | CliError::Check(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

impl From<FssError> for CliError {
    fn from(e: FssError) -> Self {
        match e {
            FssError::Config(m) => CliError::Config(m),
            FssError::Dimension(m) => CliError::Dimension(m),
            e @ FssError::Parse { .. } => CliError::Parse(e.to_string()),
            e => CliError::Core(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingFile(path.to_path_buf()),
        _ => CliError::Io(path.to_path_buf(), e),
    })
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn load_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let base = match &args.config {
        Some(p) => RunConfig::from_toml(&read(p)?)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&args.set)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.corpus.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_corpus(path: &Path) -> CliResult<(Corpus, String)> {
    let text = read(path)?;
    let hash = manifest::sha256(&text);
    Ok((synth::parse(&text)?, hash))
}

fn directions(arg: &str) -> CliResult<Vec<Direction>> {
    match arg {
        "both" => Ok(vec![Direction::Fws, Direction::Fvs]),
        d => Ok(vec![Direction::parse(d)?]),
    }
}

fn exec(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn gen_corpus(cfg: &ConfigArgs, out: &Path) -> CliResult<()> {
    let cfg = load_config(cfg)?;
    let corpus = synth::generate(&cfg.corpus)?;
    let text = synth::to_string(&corpus);
    write(out, &text)?;
    let mut m = Manifest::new("gen-corpus", Some(&cfg));
    m.output(out, &text);
    m.write_beside(out)?;
    println!(
        "wrote {} ({} train, {} dev, {} test clips)",
        out.display(),
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len()
    );
    Ok(())
}

fn train(cfg: &ConfigArgs, system: &str, corpus: &Path, out: &Path, sequential: bool) -> CliResult<()> {
    let cfg = load_config(cfg)?;
    let kind = SystemKind::parse(system)?;
    let (corpus, corpus_hash) = load_corpus(corpus)?;
    let (trained, logs) = System::train(kind, &cfg, &corpus.train, &corpus.dev, exec(sequential))?;
    let text = trained.to_checkpoint(&cfg, corpus.feature_dim(), &logs);
    write(out, &text)?;
    let log_path = out.with_extension("log.json");
    let log_text = serde_json::to_string_pretty(&logs).expect("logs serialize") + "\n";
    write(&log_path, &log_text)?;
    let mut m = Manifest::new("train", Some(&cfg));
    m.input("corpus", &corpus_hash);
    m.output(out, &text);
    m.output(&log_path, &log_text);
    m.write_beside(out)?;
    for (stage, log) in &logs {
        let best = log.best_epoch.map_or("none".to_string(), |e| e.to_string());
        println!("{}: {stage} trained {} epochs, best epoch {best}", kind.name(), log.epochs.len());
    }
    Ok(())
}

fn search(checkpoint: &Path, corpus: &Path, split: &str, direction: &str, out: &Path, sequential: bool) -> CliResult<()> {
    let ckpt_text = read(checkpoint)?;
    let (system, cfg, dim) = System::from_checkpoint(&ckpt_text)?;
    let (corpus, corpus_hash) = load_corpus(corpus)?;
    if corpus.feature_dim() != dim {
        return Err(CliError::Dimension(format!(
            "checkpoint expects {dim}-dimensional features, corpus has {}",
            corpus.feature_dim()
        )));
    }
    let split = Split::parse(split)?;
    let clips = corpus.split(split);
    let vocab = corpus.vocabulary(split);
    let exec = exec(sequential);
    let scores = system.score_matrix(clips, &vocab, exec)?;
    let mut m = Manifest::new("search", Some(&cfg));
    m.input("corpus", &corpus_hash);
    m.input("checkpoint", &manifest::sha256(&ckpt_text));
    m.note("split", split.name());
    let mut emit = |name: String, text: String| -> CliResult<()> {
        let path = out.join(name);
        write(&path, &text)?;
        m.output(&path, &text);
        Ok(())
    };
    emit("scores.tsv".into(), score_matrix_to_string(&scores))?;
    for d in directions(direction)? {
        emit(
            format!("ranked_{}.tsv", d.name()),
            ranked_lists_to_string(d, &scores.rankings(d)),
        )?;
    }
    if let Some(preds) = system.localize(clips, &vocab, exec)? {
        let mut by_clip: BTreeMap<&str, Vec<Proposal>> = BTreeMap::new();
        for p in &preds {
            by_clip.entry(p.clip.as_str()).or_default().push(Proposal {
                segment: p.segment,
                p_det: p.score,
            });
        }
        emit(
            "segments.tsv".into(),
            proposals_to_string(by_clip.iter().map(|(k, v)| (*k, v.as_slice()))),
        )?;
    }
    m.write(&out.join("manifest.json"))?;
    println!(
        "{}: scored {} clips x {} words into {}",
        system.kind().name(),
        clips.len(),
        vocab.len(),
        out.display()
    );
    Ok(())
}

const METRICS: [&str; 7] = ["map", "mf1", "p@1", "p@10", "r@1", "r@10", "ap@iou"];

fn summary_value(s: &Summary, metric: &str) -> f64 {
    match metric {
        "map" => s.map.value,
        "mf1" => s.mf1.value,
        "p@1" => s.p_at_1.value,
        "p@10" => s.p_at_10.value,
        "r@1" => s.r_at_1.value,
        "r@10" => s.r_at_10.value,
        _ => unreachable!("validated metric"),
    }
}

#[allow(clippy::too_many_arguments)]
fn eval(
    corpus: &Path,
    split: &str,
    ranked: &[PathBuf],
    scores: Option<&Path>,
    proposals: Option<&Path>,
    direction: &str,
    metrics: &str,
    system: &str,
    out: &Path,
) -> CliResult<()> {
    let selected: Vec<&str> = metrics.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if let Some(bad) = selected.iter().find(|m| !METRICS.contains(m)) {
        return Err(CliError::Config(format!("unknown metric {bad:?}; choose from {}", METRICS.join(","))));
    }
    if ranked.is_empty() && scores.is_none() && proposals.is_none() {
        return Err(CliError::Config("nothing to evaluate: give --ranked, --scores or --proposals".into()));
    }
    let (corpus, corpus_hash) = load_corpus(corpus)?;
    let split = Split::parse(split)?;
    let clips = corpus.split(split);
    let mut m = Manifest::new("eval", None);
    m.input("corpus", &corpus_hash);
    m.note("split", split.name());
    m.note("metrics", &selected.join(","));

    let mut lists_by_direction = BTreeMap::new();
    for path in ranked {
        let text = read(path)?;
        m.input(&path.display().to_string(), &manifest::sha256(&text));
        let (d, lists) = parse_ranked_lists(&text)?;
        if lists_by_direction.insert(d, lists).is_some() {
            return Err(CliError::Config(format!("two ranked-list files for {}", d.name())));
        }
    }
    if let Some(path) = scores {
        let text = read(path)?;
        m.input(&path.display().to_string(), &manifest::sha256(&text));
        let matrix = parse_score_matrix(&text)?;
        for d in directions(direction)? {
            lists_by_direction.entry(d).or_insert_with(|| matrix.rankings(d));
        }
    }
    let mut report = MetricReport {
        system: system.to_string(),
        split: split.name().to_string(),
        directions: Vec::new(),
        ap_at_iou: Vec::new(),
    };
    for (d, lists) in &lists_by_direction {
        report.directions.push(evaluate(lists, &build_judgments(clips, *d))?);
    }
    if let Some(path) = proposals {
        let text = read(path)?;
        m.input(&path.display().to_string(), &manifest::sha256(&text));
        let preds: Vec<ScoredSegment> = parse_proposals(&text)?
            .into_iter()
            .flat_map(|(clip, ps)| {
                ps.into_iter().map(move |p| ScoredSegment {
                    clip: clip.clone(),
                    segment: p.segment,
                    score: p.p_det,
                })
            })
            .collect();
        let gt: Vec<ClipSegment> = ground_truth_segments(clips);
        if !gt.is_empty() {
            report.ap_at_iou = localization(&preds, &gt)?;
        }
    }
    let json = report.to_json();
    write(out, &json)?;
    m.output(out, &json);
    m.write_beside(out)?;
    for d in &report.directions {
        let cells: Vec<String> = selected
            .iter()
            .filter(|&&k| k != "ap@iou")
            .map(|k| format!("{k}={:.4}", summary_value(&d.summary, k)))
            .collect();
        println!("{} {} n={} {}", system, d.direction.name(), d.summary.n_queries, cells.join(" "));
    }
    if selected.contains(&"ap@iou") && !report.ap_at_iou.is_empty() {
        let cells: Vec<String> = report.ap_at_iou.iter().map(|(t, v)| format!("ap@{t}={v:.4}")).collect();
        println!("{system} localization {}", cells.join(" "));
    }
    Ok(())
}

fn gradcheck(instances: usize, seed: u64, out: Option<&Path>) -> CliResult<()> {
    let reports = fss_nnkit::gradcheck::run_suite(instances, seed).map_err(|e| CliError::Core(e.into()))?;
    let mut text = String::new();
    for r in &reports {
        text.push_str(&format!(
            "{}\t{}\t{:e}\t{}\n",
            r.name,
            r.instances,
            r.max_rel_err,
            if r.passed { "pass" } else { "fail" }
        ));
    }
    print!("{text}");
    if let Some(out) = out {
        write(out, &text)?;
        let mut m = Manifest::new("gradcheck", None);
        m.note("seed", &seed.to_string());
        m.output(out, &text);
        m.write_beside(out)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("gradient check failed for {}", failed.join(","))))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenCorpus { cfg, out } => gen_corpus(&cfg, &out),
        Command::Train {
            cfg,
            system,
            corpus,
            out,
            sequential,
        } => train(&cfg, &system, &corpus, &out, sequential),
        Command::Search {
            checkpoint,
            corpus,
            split,
            direction,
            out,
            sequential,
        } => search(&checkpoint, &corpus, &split, &direction, &out, sequential),
        Command::Eval {
            corpus,
            split,
            ranked,
            scores,
            proposals,
            direction,
            metrics,
            system,
            out,
        } => eval(
            &corpus,
            &split,
            &ranked,
            scores.as_deref(),
            proposals.as_deref(),
            &direction,
            &metrics,
            &system,
            &out,
        ),
        Command::Gradcheck { instances, seed, out } => gradcheck(instances, seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FSS_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = e.kind();
            eprintln!("error: kind={kind} msg={:?}", e.message());
            ExitCode::from(code)
        }
    }
}
