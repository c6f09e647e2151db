//! Monte-Carlo harness: metrics of a solved instance, parameter sweeps,
//! outage estimation and CSV/JSON emission.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::caching::{placement_traffic, CachingStrategy};
use crate::constraints::backhaul_load;
use crate::error::{ModelError, SolveError};
use crate::model::{generate_instance, FileSizeModel, NetworkInstance, ScenarioParams};
use crate::orchestrator::{solve, Mode, SolveOutput, SolverConfig};
use crate::rates::{backhaul_capacity, Scenario};

/// Build identifier stamped on every emitted row.
pub const BUILD_ID: &str = env!("SECURE_HETNET_BUILD_ID");

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown sweep axis `{0}`")]
    UnknownAxis(String),
    #[error("value {value} is not valid for axis `{axis}`: {reason}")]
    BadValue { axis: String, value: f64, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Secrecy rate per Watt of access power, zero while any requesting BS is in outage. bits/s/Hz/W.
    pub energy_efficiency: f64,
    /// Secrecy rate per Watt over the served links only.
    pub raw_energy_efficiency: f64,
    /// bits/s/Hz.
    pub sum_secrecy_rate: f64,
    /// Backhaul rate carried for the served BSs, bits/s/Hz.
    pub backhaul_rate: f64,
    /// Backhaul capacity allocated to all BSs, bits/s/Hz.
    pub backhaul_capacity: f64,
    /// Mbits fetched over the backhaul by the served BSs.
    pub backhaul_traffic_mbits: f64,
    /// Backhaul Mbits implied by the placement for every request.
    pub placement_traffic_mbits: f64,
    pub outage_probability: f64,
    /// Outage probability times the delivery delay in frames.
    pub transmission_inutility: f64,
    pub convergence_iterations: usize,
    /// Rounded minus relaxed placement traffic, relative to the traffic without caching.
    pub relaxation_gap: f64,
    pub served_bs: usize,
    pub total_power_w: f64,
}

impl MetricsReport {
    /// Metric names in CSV column order.
    pub const NAMES: [&'static str; 13] = [
        "energy_efficiency",
        "raw_energy_efficiency",
        "sum_secrecy_rate",
        "backhaul_rate",
        "backhaul_capacity",
        "backhaul_traffic_mbits",
        "placement_traffic_mbits",
        "outage_probability",
        "transmission_inutility",
        "convergence_iterations",
        "relaxation_gap",
        "served_bs",
        "total_power_w",
    ];

    pub fn values(&self) -> [f64; 13] {
        [
            self.energy_efficiency,
            self.raw_energy_efficiency,
            self.sum_secrecy_rate,
            self.backhaul_rate,
            self.backhaul_capacity,
            self.backhaul_traffic_mbits,
            self.placement_traffic_mbits,
            self.outage_probability,
            self.transmission_inutility,
            self.convergence_iterations as f64,
            self.relaxation_gap,
            self.served_bs as f64,
            self.total_power_w,
        ]
    }
}

pub fn evaluate_metrics(inst: &NetworkInstance, scenario: Scenario, out: &SolveOutput) -> MetricsReport {
    let state = &out.state;
    let eval = &out.evaluation;
    let c = inst.mbits_per_rate();
    let nf = inst.num_frames();
    let mut traffic = 0.0;
    for b in (0..inst.num_bs()).filter(|&b| eval.served[b]) {
        for t in 0..nf {
            traffic += backhaul_load(inst, state, scenario, b, t);
        }
    }
    let capacity: f64 = (0..inst.num_bs())
        .flat_map(|b| (0..nf).map(move |t| (b, t)))
        .map(|(b, t)| backhaul_capacity(inst, state, b, t))
        .sum();
    let delay = match scenario {
        Scenario::Sfcd => 1.0,
        Scenario::Mfcd => nf as f64,
    };
    let rounded = placement_traffic(inst, &state.cache);
    let uncached = placement_traffic(inst, &ndarray::Array2::zeros(state.cache.dim()));
    let relaxation_gap = match out.relaxed_placement_traffic {
        Some(relaxed) if uncached > 0.0 => (rounded - relaxed) / uncached,
        _ => 0.0,
    };
    let outage = eval.outage();
    MetricsReport {
        energy_efficiency: eval.efficiency,
        raw_energy_efficiency: eval.raw_efficiency,
        sum_secrecy_rate: eval.secrecy_sum,
        backhaul_rate: traffic / c,
        backhaul_capacity: capacity,
        backhaul_traffic_mbits: traffic,
        placement_traffic_mbits: rounded,
        outage_probability: outage,
        transmission_inutility: outage * delay,
        convergence_iterations: out.trace.records.len().saturating_sub(1),
        relaxation_gap,
        served_bs: eval.served_count(),
        total_power_w: eval.power_w,
    }
}

/// Applies `value` to the named parameter. Besides every numeric field of
/// [`ScenarioParams`], the aliases `rho` (unit energy), `epsilon` (channel
/// uncertainty), `q` (eavesdroppers) and `alpha`/`file_size` (file size
/// scale in Mbits) are accepted.
pub fn set_param(params: &ScenarioParams, axis: &str, value: f64) -> Result<ScenarioParams, ExperimentError> {
    let bad = |reason: &str| ExperimentError::BadValue {
        axis: axis.to_string(),
        value,
        reason: reason.to_string(),
    };
    let mut next = params.clone();
    match axis {
        "alpha" | "file_size" => {
            match &mut next.file_size {
                FileSizeModel::LogNormal {
                    scale_mbits,
                    min_mbits,
                    max_mbits,
                    ..
                } => {
                    let ratio = value / *scale_mbits;
                    *scale_mbits = value;
                    *min_mbits *= ratio;
                    *max_mbits *= ratio;
                }
                FileSizeModel::Fixed { mbits } => *mbits = value,
            }
            next.validate()?;
            return Ok(next);
        }
        _ => {}
    }
    let field = match axis {
        "rho" => "unit_energy_j",
        "epsilon" => "eve_uncertainty",
        "q" => "num_eves",
        other => other,
    };
    let mut json = serde_json::to_value(&next)?;
    let slot = json
        .get_mut(field)
        .ok_or_else(|| ExperimentError::UnknownAxis(axis.to_string()))?;
    *slot = match slot {
        Value::Number(n) if n.is_u64() => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(bad("expected a non-negative integer"));
            }
            Value::from(value as u64)
        }
        Value::Number(_) => serde_json::Number::from_f64(value).map(Value::Number).ok_or_else(|| bad("not finite"))?,
        _ => return Err(ExperimentError::UnknownAxis(axis.to_string())),
    };
    next = serde_json::from_value(json)?;
    next.validate()?;
    Ok(next)
}

/// One solved instance of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub axis: String,
    pub value: f64,
    pub scenario: Scenario,
    pub mode: Mode,
    pub strategy: CachingStrategy,
    pub optimize_split: bool,
    pub seed: u64,
    pub params: ScenarioParams,
    pub metrics: MetricsReport,
}

/// Mean and standard error of every metric over the runs of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub strategy: CachingStrategy,
    pub runs: usize,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl SweepRow {
    pub fn mean_of(&self, metric: &str) -> Option<f64> {
        MetricsReport::NAMES.iter().position(|&n| n == metric).map(|i| self.mean[i])
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunRecord>,
    /// `(value, strategy, seed, error)` of runs that failed and were excluded.
    pub excluded: Vec<(f64, CachingStrategy, u64, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: String,
    pub values: Vec<f64>,
    pub runs: usize,
    pub base_seed: u64,
    pub strategies: Vec<CachingStrategy>,
    pub scenario: Scenario,
    pub mode: Mode,
}

/// Solves one `(params, seed)` instance and records its metrics.
pub fn run_one(
    params: &ScenarioParams,
    seed: u64,
    scenario: Scenario,
    mode: Mode,
    cfg: &SolverConfig,
) -> Result<(NetworkInstance, SolveOutput, MetricsReport), ExperimentError> {
    let inst = generate_instance(params, seed)?;
    let out = solve(&inst, scenario, mode, cfg)?;
    let metrics = evaluate_metrics(&inst, scenario, &out);
    Ok((inst, out, metrics))
}

fn mean_and_error(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every `(value, strategy, seed)` combination in parallel; results are
/// ordered by that key regardless of completion order.
pub fn run_sweep(base: &ScenarioParams, spec: &SweepSpec, cfg: &SolverConfig) -> Result<SweepTable, ExperimentError> {
    let mut points = Vec::new();
    for &value in &spec.values {
        let params = set_param(base, &spec.axis, value)?;
        for &strategy in &spec.strategies {
            for r in 0..spec.runs {
                points.push((value, params.clone(), strategy, spec.base_seed + r as u64));
            }
        }
    }
    let outcomes: Vec<_> = points
        .par_iter()
        .map(|(value, params, strategy, seed)| {
            let cfg = SolverConfig { strategy: *strategy, ..*cfg };
            let result = run_one(params, *seed, spec.scenario, spec.mode, &cfg).map(|(_, _, m)| m);
            (*value, params, *strategy, *seed, result)
        })
        .collect();
    let mut table = SweepTable::default();
    for (value, params, strategy, seed, result) in outcomes {
        match result {
            Ok(metrics) => table.runs.push(RunRecord {
                axis: spec.axis.clone(),
                value,
                scenario: spec.scenario,
                mode: spec.mode,
                strategy,
                optimize_split: cfg.optimize_split,
                seed,
                params: params.clone(),
                metrics,
            }),
            Err(e) => table.excluded.push((value, strategy, seed, e.to_string())),
        }
    }
    for &value in &spec.values {
        for &strategy in &spec.strategies {
            let group: Vec<&RunRecord> = table
                .runs
                .iter()
                .filter(|r| r.value == value && r.strategy == strategy)
                .collect();
            let mut mean = Vec::new();
            let mut std_error = Vec::new();
            for i in 0..MetricsReport::NAMES.len() {
                let samples: Vec<f64> = group.iter().map(|r| r.metrics.values()[i]).collect();
                let (m, e) = mean_and_error(&samples);
                mean.push(m);
                std_error.push(e);
            }
            table.rows.push(SweepRow {
                axis: spec.axis.clone(),
                value,
                strategy,
                runs: group.len(),
                mean,
                std_error,
            });
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageRow {
    pub file_size_mbits: f64,
    pub scenario: Scenario,
    pub runs: usize,
    pub outage: f64,
    pub outage_std_error: f64,
    pub inutility: f64,
}

/// Outage and transmission inutility of SFCD and MFCD over a file-size axis,
/// on paired seeds.
pub fn estimate_outage(
    base: &ScenarioParams,
    sizes: &[f64],
    runs: usize,
    base_seed: u64,
    mode: Mode,
    cfg: &SolverConfig,
) -> Result<(Vec<OutageRow>, SweepTable), ExperimentError> {
    let mut rows = Vec::new();
    let mut all = SweepTable::default();
    for scenario in [Scenario::Sfcd, Scenario::Mfcd] {
        let spec = SweepSpec {
            axis: "alpha".into(),
            values: sizes.to_vec(),
            runs,
            base_seed,
            strategies: vec![cfg.strategy],
            scenario,
            mode,
        };
        let table = run_sweep(base, &spec, cfg)?;
        for row in &table.rows {
            let i = MetricsReport::NAMES.iter().position(|&n| n == "outage_probability").expect("metric");
            let j = MetricsReport::NAMES.iter().position(|&n| n == "transmission_inutility").expect("metric");
            rows.push(OutageRow {
                file_size_mbits: row.value,
                scenario,
                runs: row.runs,
                outage: row.mean[i],
                outage_std_error: row.std_error[i],
                inutility: row.mean[j],
            });
        }
        all.rows.extend(table.rows);
        all.runs.extend(table.runs);
        all.excluded.extend(table.excluded);
    }
    Ok((rows, all))
}

/// Flattens nested JSON objects into `a.b` keys.
fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn param_columns(params: &ScenarioParams) -> Vec<(String, String)> {
    let mut out = Vec::new();
    flatten("", &serde_json::to_value(params).expect("plain params"), &mut out);
    out
}

/// Writes one RFC-4180 row per run: build id, run key, every scenario
/// parameter, then every metric.
pub fn write_runs_csv<W: Write>(writer: W, runs: &[RunRecord]) -> Result<(), ExperimentError> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header_written = false;
    for run in runs {
        let params = param_columns(&run.params);
        if !header_written {
            let mut header: Vec<String> = ["build_id", "seed", "axis", "value", "scenario", "mode", "strategy", "optimize_split"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            header.extend(params.iter().map(|(k, _)| format!("param.{k}")));
            header.extend(MetricsReport::NAMES.iter().map(|s| s.to_string()));
            csv.write_record(&header)?;
            header_written = true;
        }
        let mut row = vec![
            BUILD_ID.to_string(),
            run.seed.to_string(),
            run.axis.clone(),
            run.value.to_string(),
            run.scenario.to_string(),
            run.mode.to_string(),
            run.strategy.to_string(),
            run.optimize_split.to_string(),
        ];
        row.extend(params.into_iter().map(|(_, v)| v));
        row.extend(run.metrics.values().iter().map(|v| v.to_string()));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes the aggregated rows: mean and standard error of every metric.
/// Runs of a row use the seeds `base_seed..base_seed + runs`.
pub fn write_sweep_csv<W: Write>(writer: W, base: &ScenarioParams, base_seed: u64, table: &SweepTable) -> Result<(), ExperimentError> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["build_id", "base_seed", "axis", "value", "strategy", "runs"].iter().map(|s| s.to_string()).collect();
    let params = param_columns(base);
    header.extend(params.iter().map(|(k, _)| format!("param.{k}")));
    for name in MetricsReport::NAMES {
        header.push(format!("{name}.mean"));
        header.push(format!("{name}.std_error"));
    }
    csv.write_record(&header)?;
    for row in &table.rows {
        let point = set_param(base, &row.axis, row.value)?;
        let mut record = vec![
            BUILD_ID.to_string(),
            base_seed.to_string(),
            row.axis.clone(),
            row.value.to_string(),
            row.strategy.to_string(),
            row.runs.to_string(),
        ];
        record.extend(param_columns(&point).into_iter().map(|(_, v)| v));
        for (m, e) in row.mean.iter().zip(&row.std_error) {
            record.push(m.to_string());
            record.push(e.to_string());
        }
        csv.write_record(&record)?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes one row per `(scenario, file size)` point with the parameters of that point.
pub fn write_outage_csv<W: Write>(writer: W, base: &ScenarioParams, base_seed: u64, rows: &[OutageRow]) -> Result<(), ExperimentError> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["build_id", "base_seed", "scenario", "file_size_mbits", "runs"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(param_columns(base).into_iter().map(|(k, _)| format!("param.{k}")));
    header.extend(["outage", "outage_std_error", "inutility"].iter().map(|s| s.to_string()));
    csv.write_record(&header)?;
    for row in rows {
        let point = set_param(base, "alpha", row.file_size_mbits)?;
        let mut record = vec![
            BUILD_ID.to_string(),
            base_seed.to_string(),
            row.scenario.to_string(),
            row.file_size_mbits.to_string(),
            row.runs.to_string(),
        ];
        record.extend(param_columns(&point).into_iter().map(|(_, v)| v));
        record.extend([row.outage, row.outage_std_error, row.inutility].iter().map(|v| v.to_string()));
        csv.write_record(&record)?;
    }
    csv.flush()?;
    Ok(())
}

/// One JSON object per line.
pub fn write_json_lines<W: Write, T: Serialize>(mut writer: W, items: &[T]) -> Result<(), ExperimentError> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
