//! Plain-text and CSV formats for data and results.
//!
//! Location ids are 1-based, matching graph files; week 0 of a counts file
//! is the history preceding the first modelled week.
//!
//! | file | header |
//! |------|--------|
//! | counts | `location_id,week,count` |
//! | covariates | `location_id,week,<name>...` (weeks `1..=T`) |
//! | latent field | `location_id,week,y` |
//! | grid | `point,<index columns>,<parameters>,log_posterior,weight` |
//! | samples | `chain,draw,<parameters>` |
//! | residuals | `location_id,week,count,u` |

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use crate::diagnostics::{BiasStudyReport, ResidualField};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::inference::PosteriorFit;
use crate::mcmc::McmcRun;
use crate::model::{CountPanel, CovariateDesign, Field, ModelParams};

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<(usize, StringRecord)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec));
    }
    Ok(Table { header, rows })
}

fn perr(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, rec: &StringRecord, k: usize, what: &str) -> Result<T> {
    let s = rec.get(k).ok_or_else(|| perr(path, line, format!("missing {what}")))?;
    s.parse()
        .map_err(|_| perr(path, line, format!("{what}: cannot parse {s:?}")))
}

fn expect_header(path: &Path, header: &[String], leading: &[&str]) -> Result<()> {
    if header.len() < leading.len() || header.iter().zip(leading).any(|(a, b)| a != b) {
        return Err(perr(
            path,
            1,
            format!("header must start with {}, found {}", leading.join(","), header.join(",")),
        ));
    }
    Ok(())
}

/// Read a counts file for `n_locations` locations. Every location must
/// appear exactly once for each week `0..=T`.
pub fn read_counts(path: impl AsRef<Path>, n_locations: usize) -> Result<CountPanel> {
    let path = path.as_ref();
    let table = read_table(path)?;
    expect_header(path, &table.header, &["location_id", "week", "count"])?;
    let mut cells = Vec::with_capacity(table.rows.len());
    let mut max_week = 0usize;
    for (line, rec) in &table.rows {
        let loc: usize = field(path, *line, rec, 0, "location_id")?;
        let week: usize = field(path, *line, rec, 1, "week")?;
        let count: u32 = field(path, *line, rec, 2, "count")?;
        if loc == 0 || loc > n_locations {
            return Err(perr(path, *line, format!("location_id {loc} outside 1..={n_locations}")));
        }
        max_week = max_week.max(week);
        cells.push((*line, loc - 1, week, count));
    }
    let mut grid: Vec<Option<u32>> = vec![None; n_locations * (max_week + 1)];
    for (line, i, w, c) in cells {
        let slot = &mut grid[w * n_locations + i];
        if slot.is_some() {
            return Err(perr(path, line, format!("duplicate row for location {} week {w}", i + 1)));
        }
        *slot = Some(c);
    }
    if let Some(k) = grid.iter().position(Option::is_none) {
        return Err(perr(
            path,
            0,
            format!("no row for location {} week {}", k % n_locations + 1, k / n_locations),
        ));
    }
    let all: Vec<u32> = grid.into_iter().map(|c| c.unwrap_or(0)).collect();
    let (initial, counts) = all.split_at(n_locations);
    CountPanel::new(n_locations, initial.to_vec(), counts.to_vec())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(WriterBuilder::new().from_writer(create(path)?))
}

fn finish(path: &Path, mut w: csv::Writer<BufWriter<File>>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

macro_rules! row {
    ($w:expr, $path:expr, $($x:expr),+ $(,)?) => {
        $w.write_record(&[$($x.to_string()),+]).map_err(|e| csv_error($path, e))?
    };
}

pub fn write_counts(path: impl AsRef<Path>, panel: &CountPanel) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    row!(w, path, "location_id", "week", "count");
    for (i, z) in panel.initial_counts().iter().enumerate() {
        row!(w, path, i + 1, 0, z);
    }
    for t in 0..panel.n_times() {
        for i in 0..panel.n_locations() {
            row!(w, path, i + 1, t + 1, panel.count(i, t));
        }
    }
    finish(path, w)
}

/// Read covariates for weeks `1..=n_times`; an intercept column is added
/// in front of the named columns.
pub fn read_covariates(path: impl AsRef<Path>, n_locations: usize, n_times: usize) -> Result<CovariateDesign> {
    let path = path.as_ref();
    let table = read_table(path)?;
    expect_header(path, &table.header, &["location_id", "week"])?;
    let names: Vec<String> = table.header[2..].to_vec();
    if names.is_empty() {
        return Err(perr(path, 1, "no covariate columns"));
    }
    let p = names.len();
    let mut values: Vec<Option<Vec<f64>>> = vec![None; n_locations * n_times];
    for (line, rec) in &table.rows {
        let loc: usize = field(path, *line, rec, 0, "location_id")?;
        let week: usize = field(path, *line, rec, 1, "week")?;
        if loc == 0 || loc > n_locations || week == 0 || week > n_times {
            return Err(perr(
                path,
                *line,
                format!("(location {loc}, week {week}) outside 1..={n_locations} x 1..={n_times}"),
            ));
        }
        let row = (0..p)
            .map(|k| field::<f64>(path, *line, rec, k + 2, &names[k]))
            .collect::<Result<Vec<_>>>()?;
        let slot = &mut values[(week - 1) * n_locations + loc - 1];
        if slot.is_some() {
            return Err(perr(path, *line, format!("duplicate row for location {loc} week {week}")));
        }
        *slot = Some(row);
    }
    if let Some(k) = values.iter().position(Option::is_none) {
        return Err(perr(
            path,
            0,
            format!("no row for location {} week {}", k % n_locations + 1, k / n_locations + 1),
        ));
    }
    Ok(CovariateDesign::from_fn(n_locations, n_times, names, |i, t, k| {
        values[t * n_locations + i].as_ref().map_or(f64::NAN, |r| r[k])
    }))
}

pub fn write_covariates(path: impl AsRef<Path>, design: &CovariateDesign) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let mut header = vec!["location_id".to_string(), "week".to_string()];
    header.extend(design.names()[1..].iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for t in 0..design.n_times() {
        for i in 0..design.n_locations() {
            let mut rec = vec![(i + 1).to_string(), (t + 1).to_string()];
            rec.extend((1..design.p()).map(|k| design.value(i, t, k).to_string()));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
    }
    finish(path, w)
}

pub fn write_field(path: impl AsRef<Path>, field: &Field, column: &str) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    row!(w, path, "location_id", "week", column);
    for t in 0..field.n_times() {
        for i in 0..field.n_locations() {
            row!(w, path, i + 1, t + 1, field.get(i, t));
        }
    }
    finish(path, w)
}

/// Write a graph in the 1-based neighbor-list format read by
/// [`load_graph`](crate::graph::load_graph).
pub fn write_graph(path: impl AsRef<Path>, graph: &SpatialGraph) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let mut text = format!("{}\n", graph.n_locations());
    for i in 0..graph.n_locations() {
        let nb = graph.neighbors(i);
        text.push_str(&format!("{} {}", i + 1, nb.len()));
        for j in nb {
            text.push_str(&format!(" {}", j + 1));
        }
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Grid evaluations with natural-scale parameters.
pub fn write_grid(path: impl AsRef<Path>, fit: &PosteriorFit) -> Result<()> {
    let path = path.as_ref();
    let names = fit.names();
    let d = names.len();
    let mut w = csv_writer(path)?;
    let mut header = vec!["point".to_string()];
    header.extend((0..d).map(|k| format!("k{k}")));
    header.extend(names.iter().cloned());
    header.extend(["log_posterior".to_string(), "weight".to_string()]);
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (p, g) in fit.grid.iter().enumerate() {
        let mut rec = vec![p.to_string()];
        rec.extend(g.index.iter().map(ToString::to_string));
        rec.extend((0..d).map(|j| fit.transform.coordinate_value(j, g.u[j]).to_string()));
        rec.extend([g.log_posterior.to_string(), g.weight.to_string()]);
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

pub fn write_samples(path: impl AsRef<Path>, run: &McmcRun) -> Result<()> {
    let path = path.as_ref();
    let names = run.names();
    let mut w = csv_writer(path)?;
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (c, chain) in run.chains.iter().enumerate() {
        for (k, u) in chain.u_draws.iter().enumerate() {
            let mut rec = vec![c.to_string(), k.to_string()];
            rec.extend((0..names.len()).map(|j| run.transform.coordinate_value(j, u[j]).to_string()));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
    }
    finish(path, w)
}

fn params_from(path: &Path, line: usize, header: &[String], rec: &StringRecord) -> Result<ModelParams> {
    let mut p = ModelParams {
        eta: 0.0,
        zeta: 0.0,
        tau2: f64::NAN,
        beta: Vec::new(),
    };
    for (k, name) in header.iter().enumerate() {
        let slot = match name.as_str() {
            "tau2" => &mut p.tau2,
            "zeta" => &mut p.zeta,
            "eta" => &mut p.eta,
            n if n.starts_with("beta_") => {
                p.beta.push(0.0);
                p.beta.last_mut().expect("just pushed")
            }
            _ => continue,
        };
        *slot = field(path, line, rec, k, name)?;
    }
    if p.tau2.is_nan() || p.beta.is_empty() {
        return Err(perr(path, line, "row lacks tau2 or beta columns"));
    }
    Ok(p)
}

/// Parameter sets and weights from a grid file.
pub fn read_grid(path: impl AsRef<Path>) -> Result<Vec<(ModelParams, f64)>> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let wk = table
        .header
        .iter()
        .position(|h| h == "weight")
        .ok_or_else(|| perr(path, 1, "grid file has no weight column"))?;
    table
        .rows
        .iter()
        .map(|(line, rec)| Ok((params_from(path, *line, &table.header, rec)?, field(path, *line, rec, wk, "weight")?)))
        .collect()
}

/// Parameter draws from a samples file.
pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<ModelParams>> {
    let path = path.as_ref();
    let table = read_table(path)?;
    table
        .rows
        .iter()
        .map(|(line, rec)| params_from(path, *line, &table.header, rec))
        .collect()
}

pub fn write_residuals(path: impl AsRef<Path>, panel: &CountPanel, res: &ResidualField) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    row!(w, path, "location_id", "week", "count", "u");
    for t in 0..panel.n_times() {
        for i in 0..panel.n_locations() {
            row!(w, path, i + 1, t + 1, panel.count(i, t), res.u.get(i, t));
        }
    }
    finish(path, w)
}

pub fn write_location_means(path: impl AsRef<Path>, means: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    row!(w, path, "location_id", "mean_u");
    for (i, m) in means.iter().enumerate() {
        row!(w, path, i + 1, m);
    }
    finish(path, w)
}

/// Per-replicate estimates and per-cell summaries of a bias study. Wall
/// times go to a separate file so the other two are reproducible byte for
/// byte.
pub fn write_bias_study(
    replicates: impl AsRef<Path>,
    summary: impl AsRef<Path>,
    timing: impl AsRef<Path>,
    report: &BiasStudyReport,
) -> Result<()> {
    let path = replicates.as_ref();
    let mut w = csv_writer(path)?;
    row!(w, path, "eta", "tau2", "replicate", "method", "eta_hat", "zeta_hat", "tau2_hat", "beta0_hat", "error");
    for r in &report.replicates {
        let (eta, tau2) = report.config.cells[r.cell];
        let est = |f: fn(&ModelParams) -> f64| r.estimate.as_ref().map_or(String::new(), |p| f(p).to_string());
        row!(
            w,
            path,
            eta,
            tau2,
            r.replicate,
            r.method,
            est(|p| p.eta),
            est(|p| p.zeta),
            est(|p| p.tau2),
            est(|p| p.beta[0]),
            r.error.clone().unwrap_or_default()
        );
    }
    finish(path, w)?;

    let path = summary.as_ref();
    let mut w = csv_writer(path)?;
    row!(w, path, "eta", "tau2", "method", "fits", "failures", "mean_tau2", "rel_bias_tau2", "rel_bias_eta", "preferred");
    for s in &report.summaries {
        let preferred = report
            .preferred
            .iter()
            .find(|(cell, _)| *cell == (s.eta, s.tau2))
            .and_then(|(_, m)| *m)
            .is_some_and(|m| m == s.method);
        row!(
            w,
            path,
            s.eta,
            s.tau2,
            s.method,
            s.fits,
            s.failures,
            s.mean_tau2,
            s.rel_bias_tau2,
            s.rel_bias_eta.map_or(String::new(), |b| b.to_string()),
            preferred
        );
    }
    finish(path, w)?;

    let path = timing.as_ref();
    let mut w = csv_writer(path)?;
    row!(w, path, "eta", "tau2", "method", "mean_seconds");
    for s in &report.summaries {
        row!(w, path, s.eta, s.tau2, s.method, s.mean_seconds);
    }
    finish(path, w)
}
