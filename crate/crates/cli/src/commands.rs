use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use log::{info, warn};
use rednet_core::evaluation::{bootstrap_stability, evaluate, Category};
use rednet_core::model::{EdgeLabel, EdgeReport, NodeTuning, ObservationPair};
use rednet_core::pipeline::{naive_run, rednet_run, PipelineConfig};
use rednet_core::synthgen::simulate;
use serde_json::json;

use crate::config::{load, parse_thresholds, FileConfig};
use crate::error::{CliError, CliResult};
use crate::io::{
    create_dir, fmt_num, fmt_opt, read_anchors, read_edges, read_matrix, read_truth, write_anchors,
    write_coefficients, write_edges, write_matrix, write_truth,
};
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with [simulate], [analyze] and [bootstrap] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "REDNET_THREADS")]
    pub threads: Option<usize>,
}

impl Common {
    fn load(&self) -> CliResult<FileConfig> {
        load(self.config.as_deref())
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding y1.csv, x1.csv, y2.csv, x2.csv, anchors.txt and
    /// optionally anchors2.txt.
    #[arg(long, conflicts_with_all = ["y1", "x1", "y2", "x2", "anchors"])]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub y1: Option<PathBuf>,
    #[arg(long)]
    pub x1: Option<PathBuf>,
    #[arg(long)]
    pub y2: Option<PathBuf>,
    #[arg(long)]
    pub x2: Option<PathBuf>,
    /// Anchor map for network 1, and for network 2 unless --anchors2 is given.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    #[arg(long)]
    pub anchors2: Option<PathBuf>,
}

struct DataFiles {
    y1: PathBuf,
    x1: PathBuf,
    y2: PathBuf,
    x2: PathBuf,
    anchors: PathBuf,
    anchors2: Option<PathBuf>,
}

impl DataArgs {
    fn files(&self) -> CliResult<DataFiles> {
        if let Some(dir) = &self.data {
            let second = dir.join("anchors2.txt");
            return Ok(DataFiles {
                y1: dir.join("y1.csv"),
                x1: dir.join("x1.csv"),
                y2: dir.join("y2.csv"),
                x2: dir.join("x2.csv"),
                anchors: dir.join("anchors.txt"),
                anchors2: self.anchors2.clone().or_else(|| second.exists().then_some(second)),
            });
        }
        let need = |p: &Option<PathBuf>, flag: &str| {
            p.clone()
                .ok_or_else(|| CliError::invalid(format!("give --data or all of --y1 --x1 --y2 --x2 --anchors (missing --{flag})")))
        };
        Ok(DataFiles {
            y1: need(&self.y1, "y1")?,
            x1: need(&self.x1, "x1")?,
            y2: need(&self.y2, "y2")?,
            x2: need(&self.x2, "x2")?,
            anchors: need(&self.anchors, "anchors")?,
            anchors2: self.anchors2.clone(),
        })
    }
}

fn load_pair(files: &DataFiles) -> CliResult<ObservationPair> {
    let (nodes, y1) = read_matrix(&files.y1)?;
    let (exos, x1) = read_matrix(&files.x1)?;
    let (nodes2, y2) = read_matrix(&files.y2)?;
    let (exos2, x2) = read_matrix(&files.x2)?;
    if nodes2 != nodes {
        return Err(CliError::invalid(format!(
            "{} and {} name different endogenous variables",
            files.y1.display(),
            files.y2.display()
        )));
    }
    if exos2 != exos {
        return Err(CliError::invalid(format!(
            "{} and {} name different exogenous variables",
            files.x1.display(),
            files.x2.display()
        )));
    }
    let anchors1 = read_anchors(&files.anchors, &nodes, &exos)?;
    let anchors2 = match &files.anchors2 {
        Some(p) => read_anchors(p, &nodes, &exos)?,
        None => anchors1.clone(),
    };
    Ok(ObservationPair::new(y1, x1, y2, x2, anchors1, anchors2, nodes, exos)?)
}

fn with_inputs(mut m: Manifest, files: &DataFiles) -> Manifest {
    m = m
        .input("y1", &files.y1)
        .input("x1", &files.x1)
        .input("y2", &files.y2)
        .input("x2", &files.x2)
        .input("anchors", &files.anchors);
    if let Some(p) = &files.anchors2 {
        m = m.input("anchors2", p);
    }
    m
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut cfg = args.common.load()?.simulate;
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    let sim = simulate(&cfg)?;
    let out = &args.out;
    create_dir(out)?;
    let pair = &sim.pair;
    let (nodes, exos) = (&pair.node_names, &pair.exo_names);
    for k in 0..2 {
        write_matrix(&out.join(format!("y{}.csv", k + 1)), nodes, &pair.network(k).y)?;
        write_matrix(&out.join(format!("x{}.csv", k + 1)), exos, &sim.x_raw[k])?;
    }
    write_anchors(&out.join("anchors.txt"), &pair.network(0).anchors, nodes, exos)?;
    let mut outputs = vec!["y1.csv", "x1.csv", "y2.csv", "x2.csv", "anchors.txt", "truth.csv"];
    if pair.network(1).anchors != pair.network(0).anchors {
        write_anchors(&out.join("anchors2.txt"), &pair.network(1).anchors, nodes, exos)?;
        outputs.push("anchors2.txt");
    }
    write_truth(&out.join("truth.csv"), &sim.truth, nodes)?;
    let truth = &sim.truth;
    let scored = |pred: &dyn Fn(usize, usize) -> bool| {
        (0..pair.p())
            .flat_map(|s| (0..pair.p()).map(move |t| (s, t)))
            .filter(|&(s, t)| s != t && truth.is_scored(s, t) && pred(s, t))
            .count()
    };
    let manifest = Manifest::new("simulate", json!({ "simulate": to_json(&cfg) }))
        .seed("simulate", cfg.seed)
        .note(
            "dimensions",
            json!({ "p": pair.p(), "q": pair.q(), "n1": pair.network(0).n(), "n2": pair.network(1).n() }),
        )
        .note(
            "truth",
            json!({
                "differential": scored(&|s, t| truth.label(s, t).is_differential()),
                "common": scored(&|s, t| truth.label(s, t) == rednet_core::synthgen::TruthLabel::Common),
            }),
        );
    manifest.write(out, &outputs)?;
    info!("wrote simulated pair to {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Rednet,
    Naive,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Method::Rednet)]
    pub method: Method,
    /// Warn instead of failing on anchor violations and node failures.
    #[arg(long)]
    pub permissive: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn pipeline_config(file: &FileConfig, common: &Common, permissive: bool) -> PipelineConfig {
    let mut cfg = file.analyze.clone();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.permissive |= permissive;
    cfg.threads = common.threads.unwrap_or(0);
    cfg
}

fn write_tuning(path: &Path, tuning: &[NodeTuning], nodes: &[String]) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let io = |e: csv::Error| crate::error::from_csv(path, e);
    w.write_record([
        "node", "network", "lambda", "lambda_max", "ridge_lambda", "cv_error", "iterations", "converged", "kkt",
        "active", "failure",
    ])
    .map_err(io)?;
    for t in tuning {
        w.write_record([
            nodes[t.node].clone(),
            t.network.to_string(),
            fmt_num(t.lambda),
            fmt_num(t.lambda_max),
            fmt_num(t.ridge_lambda),
            fmt_num(t.cv_error),
            t.iterations.to_string(),
            t.converged.to_string(),
            fmt_num(t.kkt),
            t.active.to_string(),
            t.failure.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn report_counts(report: &EdgeReport) -> serde_json::Value {
    json!({
        "differential": report.count(EdgeLabel::Differential),
        "common": report.count(EdgeLabel::Common),
    })
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let file = args.common.load()?;
    let cfg = pipeline_config(&file, &args.common, args.permissive);
    let files = args.data.files()?;
    let pair = load_pair(&files)?;
    let out = &args.out;
    let nodes = &pair.node_names;
    let (report, gamma1, gamma2, tuning, betas) = match args.method {
        Method::Rednet => {
            let r = rednet_run(&pair, &cfg)?;
            let (g1, g2) = (r.estimate.gamma1(), r.estimate.gamma2());
            (r.report, g1, g2, r.estimate.tuning, Some((r.estimate.beta_plus, r.estimate.beta_minus)))
        }
        Method::Naive => {
            let r = naive_run(&pair, &cfg)?;
            (r.report, r.gamma1, r.gamma2, r.tuning, None)
        }
    };
    create_dir(out)?;
    write_edges(&out.join("edges.csv"), &report, nodes)?;
    write_coefficients(&out.join("gamma1.csv"), nodes, &gamma1)?;
    write_coefficients(&out.join("gamma2.csv"), nodes, &gamma2)?;
    let mut outputs = vec!["edges.csv", "gamma1.csv", "gamma2.csv"];
    if let Some((bp, bm)) = &betas {
        write_coefficients(&out.join("beta_plus.csv"), nodes, bp)?;
        write_coefficients(&out.join("beta_minus.csv"), nodes, bm)?;
        outputs.extend(["beta_plus.csv", "beta_minus.csv"]);
    }
    write_tuning(&out.join("tuning.csv"), &tuning, nodes)?;
    outputs.push("tuning.csv");
    let failed = tuning.iter().filter(|t| t.failure.is_some()).count();
    if failed > 0 {
        warn!("{failed} node fit(s) failed and were zeroed; see tuning.csv");
    }
    let method = match args.method {
        Method::Rednet => "rednet",
        Method::Naive => "naive",
    };
    let manifest = with_inputs(
        Manifest::new("analyze", json!({ "method": method, "analyze": to_json(&cfg) })),
        &files,
    )
    .seed("analyze", cfg.seed)
    .note("edges", report_counts(&report));
    manifest.write(out, &outputs)?;
    info!(
        "{} differential and {} common edges written to {}",
        report.count(EdgeLabel::Differential),
        report.count(EdgeLabel::Common),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Edge list from `analyze`.
    #[arg(long)]
    pub edges: PathBuf,
    /// truth.csv from `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Score every ordered pair rather than the subnetwork only.
    #[arg(long)]
    pub all_pairs: bool,
    /// Also write metrics.csv and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn metrics_rows(report: &EdgeReport, truth: &rednet_core::synthgen::TruthLabels, all_pairs: bool) -> CliResult<Vec<[String; 3]>> {
    let mut rows = Vec::new();
    for (category, m) in Category::ALL.iter().zip(evaluate(report, truth, all_pairs)?) {
        let c = m.counts;
        let cat = category.as_str().to_string();
        for (name, value) in [
            ("tp", c.tp.to_string()),
            ("fp", c.fp.to_string()),
            ("fn", c.fn_.to_string()),
            ("tn", c.tn.to_string()),
            ("mcc", fmt_opt(m.mcc)),
            ("fdr", fmt_opt(m.fdr)),
            ("power", fmt_opt(m.power)),
        ] {
            rows.push([cat.clone(), name.to_string(), value]);
        }
    }
    Ok(rows)
}

fn metrics_csv(rows: &[[String; 3]]) -> String {
    let mut text = String::from("category,metric,value\n");
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    text
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let (nodes, truth) = read_truth(&args.truth)?;
    let report = read_edges(&args.edges, &nodes)?;
    let text = metrics_csv(&metrics_rows(&report, &truth, args.all_pairs)?);
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    if let Some(out) = &args.out {
        create_dir(out)?;
        let path = out.join("metrics.csv");
        std::fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
        Manifest::new("evaluate", json!({ "all_pairs": args.all_pairs }))
            .input("edges", &args.edges)
            .input("truth", &args.truth)
            .write(out, &["metrics.csv"])?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of resampled data sets.
    #[arg(long)]
    pub n_boot: Option<usize>,
    /// Comma-separated frequency thresholds.
    #[arg(long, value_parser = parse_thresholds)]
    pub thresholds: Option<::std::vec::Vec<f64>>,
    #[arg(long)]
    pub permissive: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_bootstrap(args: &BootstrapArgs) -> CliResult<()> {
    let file = args.common.load()?;
    let cfg = pipeline_config(&file, &args.common, args.permissive);
    let mut boot = file.bootstrap.clone();
    if let Some(n) = args.n_boot {
        boot.n_boot = n;
    }
    if let Some(t) = &args.thresholds {
        boot.thresholds = t.clone();
    }
    if let Some(seed) = args.common.seed {
        boot.seed = seed;
    }
    let files = args.data.files()?;
    let pair = load_pair(&files)?;
    let result = bootstrap_stability(&pair, &cfg, boot.n_boot, &boot.thresholds, boot.seed)?;
    let out = &args.out;
    create_dir(out)?;
    let nodes = &pair.node_names;

    let mut summary = String::from("category,original");
    for t in &boot.thresholds {
        summary.push(',');
        summary.push_str(&fmt_num(*t));
    }
    summary.push('\n');
    for (label, pick) in [
        (EdgeLabel::Common, (|s: &rednet_core::evaluation::ThresholdSummary| s.common) as fn(&_) -> usize),
        (EdgeLabel::Differential, |s| s.differential),
    ] {
        summary.push_str(label.as_str());
        summary.push(',');
        summary.push_str(&result.original.count(label).to_string());
        for s in &result.summary {
            summary.push(',');
            summary.push_str(&pick(s).to_string());
        }
        summary.push('\n');
    }
    let path = out.join("summary.csv");
    std::fs::write(&path, summary).map_err(|e| CliError::io(&path, e))?;

    write_edges(&out.join("edges.csv"), &result.original, nodes)?;

    let mut freq = String::from("source,target,differential_freq,common_freq\n");
    for (k, e) in result.original.edges.iter().enumerate() {
        let (d, c) = (result.differential_freq[k], result.common_freq[k]);
        if e.label != EdgeLabel::Absent || d > 0.0 || c > 0.0 {
            freq.push_str(&format!("{},{},{},{}\n", nodes[e.source], nodes[e.target], fmt_num(d), fmt_num(c)));
        }
    }
    let path = out.join("frequencies.csv");
    std::fs::write(&path, freq).map_err(|e| CliError::io(&path, e))?;

    if result.failed > 0 {
        warn!("{} of {} replicates failed", result.failed, boot.n_boot);
    }
    let manifest = with_inputs(
        Manifest::new("bootstrap", json!({ "analyze": to_json(&cfg), "bootstrap": to_json(&boot) })),
        &files,
    )
    .seed("analyze", cfg.seed)
    .seed("bootstrap", boot.seed)
    .note("replicates", json!({ "succeeded": result.succeeded, "failed": result.failed }))
    .note("edges", report_counts(&result.original));
    manifest.write(out, &["summary.csv", "edges.csv", "frequencies.csv"])?;
    Ok(())
}
