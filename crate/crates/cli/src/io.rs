//! Text formats: headered CSV matrices, anchor maps, edge and truth lists.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rednet_core::model::{AnchorSets, Edge, EdgeLabel, EdgeReport};
use rednet_core::synthgen::TruthLabels;
use sha2::{Digest, Sha256};

use crate::error::{from_csv, CliError, CliResult};

/// Shortest decimal that parses back to the same value; exponent form
/// outside `[1e-5, 1e16)`.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_num)
}

fn parse_num(field: &str, path: &Path, line: u64) -> CliResult<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::invalid(format!("{}: line {line}: `{field}` is not a finite number", path.display())))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(file)))
}

fn write_rows<I, R>(path: &Path, header: &[String], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| from_csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| from_csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Header row plus string records, with line numbers.
fn read_rows(path: &Path) -> CliResult<(Vec<String>, Vec<(u64, Vec<String>)>)> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| from_csv(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| from_csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok((header, rows))
}

pub fn write_matrix(path: &Path, names: &[String], m: &DMatrix<f64>) -> CliResult<()> {
    let rows = (0..m.nrows()).map(|r| (0..m.ncols()).map(move |c| fmt_num(m[(r, c)])));
    write_rows(path, names, rows)
}

/// Samples in rows, variables in columns, names in the header.
pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, DMatrix<f64>)> {
    let (names, rows) = read_rows(path)?;
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(CliError::invalid(format!("{}: header needs one nonempty name per column", path.display())));
    }
    if rows.is_empty() {
        return Err(CliError::invalid(format!("{}: no data rows", path.display())));
    }
    let mut data = Vec::with_capacity(rows.len() * names.len());
    for (line, row) in &rows {
        for field in row {
            data.push(parse_num(field, path, *line)?);
        }
    }
    Ok((names.clone(), DMatrix::from_row_slice(rows.len(), names.len(), &data)))
}

/// Square coefficient matrix with a leading `source` column.
pub fn write_coefficients(path: &Path, names: &[String], m: &DMatrix<f64>) -> CliResult<()> {
    let header: Vec<String> = std::iter::once("source".to_string()).chain(names.iter().cloned()).collect();
    let rows = (0..m.nrows()).map(|r| std::iter::once(names[r].clone()).chain((0..m.ncols()).map(move |c| fmt_num(m[(r, c)]))));
    write_rows(path, &header, rows)
}

fn index_of(names: &[String]) -> HashMap<&str, usize> {
    names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect()
}

/// Lines `node: exo[,exo...]`; blank lines and `#` comments are skipped.
/// Nodes without a line get no anchors (and fail validation later).
pub fn read_anchors(path: &Path, nodes: &[String], exos: &[String]) -> CliResult<AnchorSets> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let node_idx = index_of(nodes);
    let exo_idx = index_of(exos);
    let mut sets: Vec<Option<Vec<usize>>> = vec![None; nodes.len()];
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| CliError::invalid(format!("{}: line {}: {msg}", path.display(), k + 1));
        let (node, rest) = line
            .split_once(':')
            .ok_or_else(|| bad("expected `node: exo[,exo...]`".into()))?;
        let node = node.trim();
        let i = *node_idx
            .get(node)
            .ok_or_else(|| bad(format!("unknown node `{node}`")))?;
        if sets[i].is_some() {
            return Err(bad(format!("node `{node}` listed twice")));
        }
        let mut anchors = Vec::new();
        for exo in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let j = *exo_idx
                .get(exo)
                .ok_or_else(|| bad(format!("unknown exogenous variable `{exo}`")))?;
            anchors.push(j);
        }
        sets[i] = Some(anchors);
    }
    Ok(sets.into_iter().map(Option::unwrap_or_default).collect())
}

pub fn write_anchors(path: &Path, anchors: &AnchorSets, nodes: &[String], exos: &[String]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, set) in anchors.iter().enumerate() {
        let list: Vec<&str> = set.iter().map(|&j| exos[j].as_str()).collect();
        writeln!(w, "{}: {}", nodes[i], list.join(",")).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

const EDGE_COLUMNS: [&str; 7] = ["source", "target", "label", "beta_plus", "beta_minus", "gamma1", "gamma2"];

/// Present edges only; absent pairs are implied.
pub fn write_edges(path: &Path, report: &EdgeReport, nodes: &[String]) -> CliResult<()> {
    let with_freq = report.edges.iter().any(|e| e.boot_freq.is_some());
    let mut header: Vec<String> = EDGE_COLUMNS.iter().map(|s| s.to_string()).collect();
    if with_freq {
        header.push("boot_freq".into());
    }
    let rows = report.edges.iter().filter(|e| e.label != EdgeLabel::Absent).map(|e| {
        let mut row = vec![
            nodes[e.source].clone(),
            nodes[e.target].clone(),
            e.label.to_string(),
            fmt_num(e.beta_plus),
            fmt_num(e.beta_minus),
            fmt_num(e.gamma1),
            fmt_num(e.gamma2),
        ];
        if with_freq {
            row.push(fmt_opt(e.boot_freq));
        }
        row
    });
    write_rows(path, &header, rows)
}

fn check_header(path: &Path, header: &[String], expected: &[&str]) -> CliResult<()> {
    if header.len() < expected.len() || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(CliError::invalid(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            expected.join(","),
            header.join(",")
        )));
    }
    Ok(())
}

/// Rebuilds a full report over `nodes` from an edge list.
pub fn read_edges(path: &Path, nodes: &[String]) -> CliResult<EdgeReport> {
    let (header, rows) = read_rows(path)?;
    check_header(path, &header, &EDGE_COLUMNS)?;
    let p = nodes.len();
    let idx = index_of(nodes);
    let mut edges: Vec<Edge> = (0..p)
        .flat_map(|s| (0..p).filter(move |&t| t != s).map(move |t| (s, t)))
        .map(|(source, target)| Edge {
            source,
            target,
            label: EdgeLabel::Absent,
            beta_plus: 0.0,
            beta_minus: 0.0,
            gamma1: 0.0,
            gamma2: 0.0,
            boot_freq: None,
        })
        .collect();
    let mut seen = vec![false; edges.len()];
    for (line, row) in rows {
        let bad = |msg: String| CliError::invalid(format!("{}: line {line}: {msg}", path.display()));
        let node = |name: &str| idx.get(name).copied().ok_or_else(|| bad(format!("unknown node `{name}`")));
        let (s, t) = (node(&row[0])?, node(&row[1])?);
        if s == t {
            return Err(bad("self-loop".into()));
        }
        let k = EdgeReport::index_of(p, s, t);
        if std::mem::replace(&mut seen[k], true) {
            return Err(bad(format!("edge {} -> {} listed twice", row[0], row[1])));
        }
        let e = &mut edges[k];
        e.label = row[2].parse().map_err(|m: rednet_core::Error| bad(m.to_string()))?;
        e.beta_plus = parse_num(&row[3], path, line)?;
        e.beta_minus = parse_num(&row[4], path, line)?;
        e.gamma1 = parse_num(&row[5], path, line)?;
        e.gamma2 = parse_num(&row[6], path, line)?;
        if let Some(f) = row.get(7).filter(|f| f.as_str() != "NA") {
            e.boot_freq = Some(parse_num(f, path, line)?);
        }
    }
    Ok(EdgeReport {
        p,
        tolerance: 0.0,
        edges,
    })
}

const TRUTH_COLUMNS: [&str; 6] = ["source", "target", "label", "gamma1", "gamma2", "scored"];

/// Every ordered pair, source-major, so the node order can be read back.
pub fn write_truth(path: &Path, truth: &TruthLabels, nodes: &[String]) -> CliResult<()> {
    let header: Vec<String> = TRUTH_COLUMNS.iter().map(|s| s.to_string()).collect();
    let p = truth.p();
    let rows = (0..p).flat_map(|s| (0..p).filter(move |&t| t != s).map(move |t| (s, t))).map(|(s, t)| {
        vec![
            nodes[s].clone(),
            nodes[t].clone(),
            truth.label(s, t).as_str().to_string(),
            fmt_num(truth.gamma1[(s, t)]),
            fmt_num(truth.gamma2[(s, t)]),
            u8::from(truth.is_scored(s, t)).to_string(),
        ]
    });
    write_rows(path, &header, rows)
}

/// Returns node names in file order and the truth. A node is scored when
/// it takes part in at least one scored pair.
pub fn read_truth(path: &Path) -> CliResult<(Vec<String>, TruthLabels)> {
    let (header, rows) = read_rows(path)?;
    check_header(path, &header, &TRUTH_COLUMNS)?;
    let mut nodes: Vec<String> = Vec::new();
    for (_, row) in &rows {
        for name in &row[..2] {
            if !nodes.contains(name) {
                nodes.push(name.clone());
            }
        }
    }
    let p = nodes.len();
    if p < 2 || rows.len() != p * (p - 1) {
        return Err(CliError::invalid(format!(
            "{}: expected one row per ordered pair of {p} nodes, found {}",
            path.display(),
            rows.len()
        )));
    }
    let idx = index_of(&nodes);
    let mut g1 = DMatrix::zeros(p, p);
    let mut g2 = DMatrix::zeros(p, p);
    let mut scored = vec![false; p];
    let mut seen = vec![false; p * p];
    for (line, row) in &rows {
        let bad = |msg: String| CliError::invalid(format!("{}: line {line}: {msg}", path.display()));
        let (s, t) = (idx[row[0].as_str()], idx[row[1].as_str()]);
        if s == t || std::mem::replace(&mut seen[s * p + t], true) {
            return Err(bad("self-loop or repeated pair".into()));
        }
        g1[(s, t)] = parse_num(&row[3], path, *line)?;
        g2[(s, t)] = parse_num(&row[4], path, *line)?;
        match row[5].as_str() {
            "1" => {
                scored[s] = true;
                scored[t] = true;
            }
            "0" => {}
            other => return Err(bad(format!("scored must be 0 or 1, got `{other}`"))),
        }
    }
    let truth = TruthLabels::from_gammas(g1, g2, scored)?;
    for (line, row) in &rows {
        let (s, t) = (idx[row[0].as_str()], idx[row[1].as_str()]);
        if truth.label(s, t).as_str() != row[2] {
            return Err(CliError::invalid(format!(
                "{}: line {line}: label `{}` disagrees with the effects ({})",
                path.display(),
                row[2],
                truth.label(s, t).as_str()
            )));
        }
    }
    Ok((nodes, truth))
}
