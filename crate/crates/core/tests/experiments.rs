use secure_hetnet::caching::CachingStrategy;
use secure_hetnet::experiments::{
    estimate_outage, run_sweep, set_param, write_outage_csv, write_runs_csv, write_sweep_csv, ExperimentError, MetricsReport, SweepSpec, BUILD_ID,
};
use secure_hetnet::model::FileSizeModel;
use secure_hetnet::orchestrator::{Mode, SolverConfig};
use secure_hetnet::{Scenario, ScenarioParams};

fn tiny() -> ScenarioParams {
    serde_json::from_str(include_str!("../../../configs/tiny.json")).unwrap()
}

fn spec(runs: usize) -> SweepSpec {
    SweepSpec {
        axis: "epsilon".into(),
        values: vec![0.0, 0.3],
        runs,
        base_seed: 11,
        strategies: vec![CachingStrategy::Lp, CachingStrategy::None],
        scenario: Scenario::Sfcd,
        mode: Mode::Joint,
    }
}

#[test]
fn aliases_reach_their_fields() {
    let base = ScenarioParams::default();
    assert_eq!(set_param(&base, "rho", 3e-7).unwrap().unit_energy_j, 3e-7);
    assert_eq!(set_param(&base, "epsilon", 0.2).unwrap().eve_uncertainty, 0.2);
    assert_eq!(set_param(&base, "q", 3.0).unwrap().num_eves, 3);
    assert_eq!(set_param(&base, "num_subcarriers", 12.0).unwrap().num_subcarriers, 12);
    match set_param(&base, "alpha", 0.008).unwrap().file_size {
        FileSizeModel::LogNormal { scale_mbits, .. } => assert_eq!(scale_mbits, 0.008),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bad_axes_and_values_are_rejected() {
    let base = ScenarioParams::default();
    assert!(matches!(set_param(&base, "warp_factor", 1.0), Err(ExperimentError::UnknownAxis(_))));
    assert!(matches!(set_param(&base, "q", 1.5), Err(ExperimentError::BadValue { .. })));
    assert!(matches!(set_param(&base, "q", -1.0), Err(ExperimentError::BadValue { .. })));
    assert!(set_param(&base, "epsilon", -0.5).is_err());
}

#[test]
fn sweeps_are_complete_and_reproducible() {
    let cfg = SolverConfig::default();
    let a = run_sweep(&tiny(), &spec(2), &cfg).unwrap();
    let b = run_sweep(&tiny(), &spec(2), &cfg).unwrap();
    assert_eq!(a.rows.len(), 4);
    assert_eq!(a.runs.len() + a.excluded.len(), 8);
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.runs, b.runs);
    for row in &a.rows {
        let group: Vec<f64> = a
            .runs
            .iter()
            .filter(|r| r.value == row.value && r.strategy == row.strategy)
            .map(|r| r.metrics.energy_efficiency)
            .collect();
        let mean = group.iter().sum::<f64>() / group.len() as f64;
        assert!((row.mean_of("energy_efficiency").unwrap() - mean).abs() <= 1e-12 * mean.abs().max(1.0));
    }
}

#[test]
fn csv_rows_carry_build_seed_and_parameters() {
    let cfg = SolverConfig::default();
    let table = run_sweep(&tiny(), &spec(1), &cfg).unwrap();

    let mut buf = Vec::new();
    write_runs_csv(&mut buf, &table.runs).unwrap();
    let mut reader = csv::Reader::from_reader(buf.as_slice());
    let header = reader.headers().unwrap().clone();
    for column in ["build_id", "seed", "param.num_subcarriers", "param.eve_uncertainty", "energy_efficiency"] {
        assert!(header.iter().any(|h| h == column), "missing {column}");
    }
    let eps = header.iter().position(|h| h == "param.eve_uncertainty").unwrap();
    for record in reader.records() {
        let record = record.unwrap();
        assert_eq!(&record[0], BUILD_ID);
        assert_eq!(&record[1], "11");
        let value: f64 = record[3].parse().unwrap();
        assert_eq!(record[eps].parse::<f64>().unwrap(), value);
    }

    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &tiny(), 11, &table).unwrap();
    let mut reader = csv::Reader::from_reader(buf.as_slice());
    let header = reader.headers().unwrap().clone();
    assert_eq!(&header[0], "build_id");
    assert_eq!(&header[1], "base_seed");
    assert_eq!(header.len(), 6 + header.iter().filter(|h| h.starts_with("param.")).count() + 2 * MetricsReport::NAMES.len());
    assert_eq!(reader.records().count(), table.rows.len());
}

#[test]
fn outage_rows_pair_both_scenarios() {
    let cfg = SolverConfig::default();
    let (rows, table) = estimate_outage(&tiny(), &[0.002, 0.02], 2, 3, Mode::Joint, &cfg).unwrap();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        assert!((0.0..=1.0).contains(&row.outage));
        let factor = match row.scenario {
            Scenario::Sfcd => 1.0,
            Scenario::Mfcd => tiny().num_frames as f64,
        };
        assert!((row.inutility - factor * row.outage).abs() <= 1e-12);
    }
    assert_eq!(table.runs.len() + table.excluded.len(), 8);
    let mut buf = Vec::new();
    write_outage_csv(&mut buf, &tiny(), 3, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().next().unwrap().starts_with("build_id,base_seed,scenario"));
}
