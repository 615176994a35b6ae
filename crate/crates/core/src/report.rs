//! CSV and manifest emission.
//!
//! Files written into the output directory:
//!
//! - `steps_<pipeline>.csv`: `seed,k,sensor,f_sel,f_opt,opt_rate,rmse_contrib`
//! - `summary_<pipeline>.csv`: `seed,avg_opt_rate,regret_lhs,regret_rhs,fn,fp`
//! - `rmse.csv`: `k` and one column per pipeline
//! - `manifest.json`: resolved scenario, seeds and pipelines
//!
//! Rates that are not applicable are written as `NA`. Output depends only on
//! the scenario and seeds, never on worker count or wall-clock time.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::scenario::ScenarioSpec;
use crate::sim::{CaseResult, Pipeline};

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    master_seed: u64,
    seeds: Vec<u64>,
    pipelines: Vec<&'static str>,
    spectral_radius: Option<f64>,
    files: Vec<String>,
    scenario: &'a ScenarioSpec,
}

/// Writes every output file and returns their paths.
pub fn write_case(result: &CaseResult, spec: &ScenarioSpec, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut files = Vec::new();

    for &p in result.pipelines.iter().filter(|p| p.selects()) {
        let path = out.join(format!("steps_{}.csv", p.name()));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["seed", "k", "sensor", "f_sel", "f_opt", "opt_rate", "rmse_contrib"])?;
        for run in &result.seeds {
            let Some(pr) = run.get(p) else { continue };
            for row in &pr.steps {
                w.write_record([
                    run.seed.to_string(),
                    row.k.to_string(),
                    row.sensor.to_string(),
                    row.f_sel.to_string(),
                    row.f_opt.to_string(),
                    row.rate.rate.to_string(),
                    row.rmse_contrib.to_string(),
                ])?;
            }
        }
        w.flush()?;
        files.push(path);

        let path = out.join(format!("summary_{}.csv", p.name()));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["seed", "avg_opt_rate", "regret_lhs", "regret_rhs", "fn", "fp"])?;
        for s in result.summaries(p) {
            w.write_record([
                s.seed.to_string(),
                s.avg_opt_rate.to_string(),
                s.regret.lhs.to_string(),
                s.regret.rhs.to_string(),
                opt(s.fn_rate),
                opt(s.fp_rate),
            ])?;
        }
        w.flush()?;
        files.push(path);
    }

    let path = out.join("rmse.csv");
    let series = result
        .pipelines
        .iter()
        .map(|&p| result.rmse(p))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["k".to_string()];
    header.extend(result.pipelines.iter().map(|p| p.name().to_string()));
    w.write_record(&header)?;
    let horizon = series.first().map_or(0, Vec::len);
    for k in 0..horizon {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(series.iter().map(|s| s[k].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    files.push(path);

    let manifest_path = out.join("manifest.json");
    let manifest = Manifest {
        name: &result.name,
        master_seed: result.master_seed,
        seeds: result.seeds.iter().map(|s| s.seed).collect(),
        pipelines: result.pipelines.iter().map(|p| p.name()).collect(),
        spectral_radius: result.spectral_radius,
        files: files
            .iter()
            .filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        scenario: spec,
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    files.push(manifest_path);
    Ok(files)
}

/// Human-readable per-pipeline digest.
pub fn describe(result: &CaseResult) -> String {
    let mut out = format!(
        "{}: {} seeds from {}\n",
        result.name,
        result.seeds.len(),
        result.master_seed
    );
    if let Some(rho) = result.spectral_radius {
        out += &format!("  rho(F) <= {rho:.4}\n");
    }
    for &p in &result.pipelines {
        let rmse = result.rmse(p).unwrap_or_default();
        let last = rmse.last().copied().unwrap_or(f64::NAN);
        out += &format!("  {:<10} final RMSE {last:.4}", p.name());
        if p.selects() && !result.summaries(p).is_empty() {
            let det = result.detection(p);
            out += &format!(
                "  avg opt rate {:.4}  FN {}  FP {}",
                result.mean_opt_rate(p),
                det.false_negative_rate().map_or("NA".into(), |v| format!("{v:.4}")),
                det.false_positive_rate().map_or("NA".into(), |v| format!("{v:.4}")),
            );
        }
        out.push('\n');
    }
    out
}

pub fn pipeline_names(pipelines: &[Pipeline]) -> String {
    pipelines.iter().map(|p| p.name()).collect::<Vec<_>>().join(",")
}
