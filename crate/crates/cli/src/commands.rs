use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use needlet_core::calibration::{build_table, replicate_rng, MethodSpec, NullDistributionTable};
use needlet_core::catalog::Catalog;
use needlet_core::coverage::{Coverage, CoverageModel};
use needlet_core::density::Norm;
use needlet_core::engine::StatisticEngine;
use needlet_core::isotropy::{jstar, nn_asymptotic_pvalue, twopc_scan_pvalue, TieBreak};
use needlet_core::power::{rejections, roc_curve, roc_levels, run_study, CalibratedMethod, Procedure};
use needlet_core::simulate::{AlternativeSpec, Simulator};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{self, CalibrateConfig, PowerConfig, SimulateConfig, TestConfig};
use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const TABLE_EXT: &str = "ntab";

/// Uses the given seed or draws one from the OS and announces it.
pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("note: no seed given, using --seed {s}");
        s
    })
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn provenance(kind: &str, config_hash: &str, seed: u64, frame_hashes: &[String]) -> String {
    let frames = if frame_hashes.is_empty() {
        "none".to_string()
    } else {
        frame_hashes.join(";")
    };
    format!(
        "# needlet {kind}\n# tool_version={TOOL_VERSION}\n# config_hash={config_hash}\n# seed={seed}\n# frame_hash={frames}\n"
    )
}

pub fn simulate(mut cfg: SimulateConfig) -> Result<(), CliError> {
    let seed = resolve_seed(cfg.seed);
    cfg.seed = Some(seed);
    let sim = Simulator::new(cfg.simulation.clone())?;
    let mut rng = replicate_rng(seed, 0);
    let catalog = sim.simulate(cfg.n, &mut rng)?;
    let key = SimulateConfig { output: None, ..cfg.clone() };
    let mut text = provenance("simulate", &config::hash(&key), seed, &[]);
    writeln!(text, "# alternative={}", cfg.simulation.alternative.label()).unwrap();
    text.push_str(&catalog.to_text(cfg.frame));
    write_output(cfg.output.as_deref(), &text)
}

fn norm_slug(norm: Norm) -> &'static str {
    match norm {
        Norm::L1 => "1",
        Norm::L2 => "2",
        Norm::L2Star => "2star",
        Norm::LInf => "inf",
    }
}

fn coverage_slug(model: &CoverageModel) -> String {
    match model {
        CoverageModel::Uniform => "uniform".into(),
        other => {
            let h = hex::encode(Sha256::digest(serde_json::to_string(other).unwrap().as_bytes()));
            let kind = if matches!(other, CoverageModel::Exposure { .. }) {
                "exposure"
            } else {
                "gridded"
            };
            format!("{kind}-{}", &h[..8])
        }
    }
}

/// File stem of a table: method, sample size and coverage.
pub fn table_stem(method: &MethodSpec, n: usize, coverage: &CoverageModel) -> String {
    let m = match method {
        MethodSpec::Multiple { norm, jmax } => format!("multiple-p{}-j{jmax}", norm_slug(*norm)),
        MethodSpec::Plugin { norm, jmax, .. } => format!("plugin-p{}-j{jmax}", norm_slug(*norm)),
        MethodSpec::Nn => "nn".into(),
        MethodSpec::TwoPc { .. } => "twopc".into(),
    };
    format!("{m}-n{n}-{}", coverage_slug(coverage))
}

pub fn calibrate(mut cfg: CalibrateConfig) -> Result<(), CliError> {
    if cfg.methods.is_empty() {
        return Err(CliError::Config(
            "no methods to calibrate; list them under `methods` or pass --preset test-grid".into(),
        ));
    }
    if cfg.n.is_empty() {
        return Err(CliError::Config("no sample size given; pass --n".into()));
    }
    let seed = resolve_seed(cfg.seed);
    cfg.seed = Some(seed);
    let coverage = Coverage::new(cfg.coverage.clone())?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        CliError::Config(format!("cannot create {}: {e}", cfg.output_dir.display()))
    })?;
    for &n in &cfg.n {
        for method in &cfg.methods {
            let engine = StatisticEngine::new(method.clone(), cfg.frame, coverage.clone())?;
            let table = build_table(&engine, n, cfg.replicates, seed)?;
            let stem = table_stem(method, n, &cfg.coverage);
            let path = cfg.output_dir.join(format!("{stem}.{TABLE_EXT}"));
            table.save(&path)?;
            let sidecar = json!({
                "table_id": table.table_id(),
                "header": table.header(),
            });
            std::fs::write(
                cfg.output_dir.join(format!("{stem}.json")),
                serde_json::to_string_pretty(&sidecar).unwrap() + "\n",
            )
            .map_err(|e| CliError::Data(e.to_string()))?;
            if cfg.csv {
                let f = std::fs::File::create(cfg.output_dir.join(format!("{stem}.csv")))
                    .map_err(|e| CliError::Data(e.to_string()))?;
                table.write_csv(std::io::BufWriter::new(f))?;
            }
            println!(
                "{}\t{}\tn={n}\treplicates={}\ttable_id={}",
                path.display(),
                method.label(),
                cfg.replicates,
                table.table_id()
            );
        }
    }
    Ok(())
}

struct LoadedTable {
    file: String,
    method: CalibratedMethod,
}

/// All tables in `dir`, sorted by file name.
fn read_tables(dir: &Path) -> Result<Vec<(String, NullDistributionTable)>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| {
        CliError::Config(format!(
            "cannot read table directory {}: {e}; run `needlet calibrate --output-dir {}` first",
            dir.display(),
            dir.display()
        ))
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == TABLE_EXT))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let t = NullDistributionTable::load(&p)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Ok((p.file_name().unwrap().to_string_lossy().into_owned(), t))
        })
        .collect()
}

/// Tables in `dir` for sample size `n` (and `coverage`, when given).
fn select_tables(
    dir: &Path,
    n: usize,
    coverage: Option<&CoverageModel>,
) -> Result<Vec<LoadedTable>, CliError> {
    let all = read_tables(dir)?;
    let hint = |what: &str| {
        let cov = match coverage {
            Some(CoverageModel::Uniform) | None => "uniform",
            Some(_) => "auger",
        };
        CliError::Config(format!(
            "{what} in {}; run `needlet calibrate --preset test-grid --n {n} --coverage {cov} --output-dir {}`",
            dir.display(),
            dir.display()
        ))
    };
    if all.is_empty() {
        return Err(hint("no calibration tables found"));
    }
    let sizes: BTreeSet<usize> = all.iter().map(|(_, t)| t.header().n).collect();
    let chosen: Vec<_> = all
        .into_iter()
        .filter(|(_, t)| t.header().n == n && coverage.is_none_or(|c| &t.header().coverage == c))
        .collect();
    if chosen.is_empty() {
        let sizes: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
        return Err(hint(&format!(
            "no table matches n = {n} (tables exist for n = {})",
            sizes.join(", ")
        )));
    }
    let first = chosen[0].1.header().coverage.clone();
    if chosen.iter().any(|(_, t)| t.header().coverage != first) {
        return Err(CliError::Config(format!(
            "tables in {} mix coverage models for n = {n}; keep one coverage per directory",
            dir.display()
        )));
    }
    chosen
        .into_iter()
        .map(|(file, table)| {
            let h = table.header();
            let engine = StatisticEngine::new(
                h.method.clone(),
                h.frame.unwrap_or_default(),
                Coverage::new(h.coverage.clone())?,
            )?;
            Ok(LoadedTable {
                file,
                method: CalibratedMethod::new(engine, table, n)?,
            })
        })
        .collect()
}

fn frame_hashes(tables: &[LoadedTable]) -> Vec<String> {
    let set: BTreeSet<String> = tables
        .iter()
        .filter_map(|t| t.method.table.header().frame_hash.clone())
        .collect();
    set.into_iter().collect()
}

/// Rows J* = 1..6 of one method/norm, `null` where no table covers them.
fn grid_row(values: &[(usize, f64)]) -> Value {
    (1..=6)
        .map(|j| {
            values
                .iter()
                .find(|(k, _)| *k == j)
                .map_or(Value::Null, |(_, p)| json!(p))
        })
        .collect()
}

pub fn test(mut cfg: TestConfig) -> Result<(), CliError> {
    let catalog = Catalog::read(&cfg.catalog, cfg.catalog_frame)
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.catalog.display())))?;
    let n = catalog.len();
    if n < 2 {
        return Err(CliError::Data(format!("catalog has {n} events; at least 2 are needed")));
    }
    let seed = match cfg.tie {
        needlet_core::isotropy::TieRule::Conservative => cfg.seed.unwrap_or(0),
        needlet_core::isotropy::TieRule::Randomized => resolve_seed(cfg.seed),
    };
    cfg.seed = Some(seed);
    let tables = select_tables(&cfg.tables, n, None)?;
    let dirs = catalog.directions();
    let coverage = tables[0].method.table.header().coverage.clone();
    let mut tie_rng = replicate_rng(seed, 0);

    let mut procedures = Vec::new();
    let mut multiple: Vec<(Norm, Vec<(usize, f64)>)> = Vec::new();
    let mut plugin: Vec<(Norm, Vec<(usize, f64)>)> = Vec::new();
    let mut nn = Value::Null;
    let mut twopc = Value::Null;
    let mut table_info = Vec::new();
    for t in &tables {
        let m = &t.method;
        let h = m.table.header();
        table_info.push(json!({
            "file": t.file,
            "method": h.method.label(),
            "table_id": m.table.table_id(),
            "config_hash": h.config_hash,
            "frame_hash": h.frame_hash,
            "replicates": h.replicates,
            "seed": h.seed,
        }));
        let row = m.engine.row(dirs)?;
        for p in m.procedures() {
            let tie = TieBreak::from_rule(cfg.tie, &mut tie_rng);
            let pv = m.pvalue(&p, &row, tie)?;
            procedures.push(json!({ "procedure": p.label(), "p_value": pv }));
            match p {
                Procedure::Multiple { norm, jstar } => push_cell(&mut multiple, norm, jstar, pv),
                Procedure::Plugin { norm, jstar } => push_cell(&mut plugin, norm, jstar, pv),
                _ => {}
            }
        }
        match &h.method {
            MethodSpec::Nn => {
                let asym = coverage
                    .is_uniform()
                    .then(|| nn_asymptotic_pvalue(row[0]));
                nn = json!({
                    "w": row[0],
                    "p_value": m.pvalue(&Procedure::Nn, &row, TieBreak::Conservative)?,
                    "p_value_asymptotic": asym,
                });
            }
            MethodSpec::TwoPc { deltas_deg } => {
                let counts: Vec<u64> = row.iter().map(|&c| c as u64).collect();
                let scan = twopc_scan_pvalue(&counts, &m.table)?;
                twopc = json!({
                    "deltas_deg": deltas_deg,
                    "counts": counts,
                    "p_values": scan.pvalues,
                    "min_p": scan.min_p,
                    "argmin_deg": scan.argmin_deg,
                    "scan_adjusted_p": scan.adjusted_p,
                });
            }
            _ => {}
        }
    }
    let grid_of = |cells: &[(Norm, Vec<(usize, f64)>)]| -> Value {
        let mut obj = serde_json::Map::new();
        for (norm, vals) in cells {
            obj.insert(norm.label().to_string(), grid_row(vals));
        }
        Value::Object(obj)
    };
    let catalog_text = std::fs::read(&cfg.catalog).map_err(|e| CliError::Data(e.to_string()))?;
    let report = json!({
        "tool_version": TOOL_VERSION,
        "config_hash": config::hash(&TestConfig { output: None, ..cfg.clone() }),
        "seed": seed,
        "frame_hash": frame_hashes(&tables),
        "catalog": {
            "path": cfg.catalog.display().to_string(),
            "sha256": hex::encode(Sha256::digest(&catalog_text)),
            "n": n,
        },
        "coverage": coverage,
        "tie_rule": cfg.tie,
        "recommended_jstar": jstar(n),
        "tables": table_info,
        "grid": {
            "jstar": [1, 2, 3, 4, 5, 6],
            "multiple": grid_of(&multiple),
            "plugin": grid_of(&plugin),
        },
        "nn": nn,
        "twopc": twopc,
        "procedures": procedures,
    });
    let text = serde_json::to_string_pretty(&report).unwrap() + "\n";
    write_output(cfg.output.as_deref(), &text)
}

fn push_cell(cells: &mut Vec<(Norm, Vec<(usize, f64)>)>, norm: Norm, j: usize, p: f64) {
    match cells.iter_mut().find(|(n, _)| *n == norm) {
        Some((_, v)) => v.push((j, p)),
        None => cells.push((norm, vec![(j, p)])),
    }
}

struct StudyRun {
    n: usize,
    delta: Option<f64>,
    frame_hashes: Vec<String>,
    matrix: needlet_core::power::PValueMatrix,
}

fn run_power_studies(cfg: &PowerConfig, seed: u64) -> Result<Vec<StudyRun>, CliError> {
    if cfg.runs.is_empty() {
        return Err(CliError::Config("no runs given; pass --n or list `runs`".into()));
    }
    if cfg.replicates == 0 {
        return Err(CliError::Config("replicates must be positive".into()));
    }
    let mut out = Vec::new();
    for (i, run) in cfg.runs.iter().enumerate() {
        let mut sim_cfg = cfg.simulation.clone();
        if let Some(d) = run.delta {
            match &mut sim_cfg.alternative {
                AlternativeSpec::Ha { delta, .. } => *delta = d,
                _ => {
                    return Err(CliError::Config(
                        "a run `delta` only applies to the ha alternative".into(),
                    ))
                }
            }
        }
        let sim = Simulator::new(sim_cfg)?;
        let tables = select_tables(&cfg.tables, run.n, Some(&cfg.simulation.coverage))?;
        let hashes = frame_hashes(&tables);
        let methods: Vec<CalibratedMethod> = tables.into_iter().map(|t| t.method).collect();
        let n = run.n;
        let matrix = run_study(
            &methods,
            |rng| Ok(sim.simulate(n, rng)?.into_directions()),
            cfg.replicates,
            seed.wrapping_add(i as u64),
            cfg.tie,
        )?;
        out.push(StudyRun {
            n,
            delta: run.delta,
            frame_hashes: hashes,
            matrix,
        });
    }
    Ok(out)
}

fn study_header(kind: &str, cfg: &PowerConfig, seed: u64, runs: &[StudyRun]) -> String {
    let hashes: BTreeSet<String> = runs.iter().flat_map(|r| r.frame_hashes.clone()).collect();
    let hashes: Vec<String> = hashes.into_iter().collect();
    let key = PowerConfig { output: None, ..cfg.clone() };
    let mut text = provenance(kind, &config::hash(&key), seed, &hashes);
    writeln!(text, "# alternative={}", cfg.simulation.alternative.label()).unwrap();
    writeln!(text, "# coverage={}", cfg.simulation.coverage.id()).unwrap();
    writeln!(text, "# replicates={}", cfg.replicates).unwrap();
    text
}

fn delta_cell(d: Option<f64>) -> String {
    d.map(|d| d.to_string()).unwrap_or_default()
}

pub fn power(mut cfg: PowerConfig) -> Result<(), CliError> {
    for &a in &cfg.alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(CliError::Config(format!("level {a} outside (0, 1)")));
        }
    }
    let seed = resolve_seed(cfg.seed);
    cfg.seed = Some(seed);
    let runs = run_power_studies(&cfg, seed)?;
    let mut text = study_header("power", &cfg, seed, &runs);
    text.push_str("n,delta,procedure,param,jstar,alpha,rejected,total,power\n");
    for run in &runs {
        for (p, pv) in run.matrix.procedures.iter().zip(&run.matrix.pvalues) {
            for &a in &cfg.alpha {
                let r = rejections(pv, a);
                writeln!(
                    text,
                    "{},{},{},{a},{},{},{}",
                    run.n,
                    delta_cell(run.delta),
                    p.label(),
                    r.rejected,
                    r.total,
                    r.rate()
                )
                .unwrap();
            }
        }
    }
    write_output(cfg.output.as_deref(), &text)
}

pub fn roc(mut cfg: PowerConfig) -> Result<(), CliError> {
    let seed = resolve_seed(cfg.seed);
    cfg.seed = Some(seed);
    let runs = run_power_studies(&cfg, seed)?;
    let mut text = study_header("roc", &cfg, seed, &runs);
    text.push_str("n,delta,procedure,param,jstar,alpha,power\n");
    for run in &runs {
        let m = &run.matrix;
        for ((p, pv), &reps) in m.procedures.iter().zip(&m.pvalues).zip(&m.table_replicates) {
            for (a, pw) in roc_curve(pv, &roc_levels(reps)) {
                writeln!(text, "{},{},{},{a},{pw}", run.n, delta_cell(run.delta), p.label()).unwrap();
            }
        }
    }
    write_output(cfg.output.as_deref(), &text)
}
