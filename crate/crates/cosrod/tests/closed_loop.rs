//! End-to-end runs through the driver and the exporter.

use cosrod::config::ScenarioConfig;
use cosrod::driver::{simulate, RunRecord, RunStatus, Simulation};
use cosrod::export::{export, parse_timeseries, timeseries_csv, TIMESERIES_HEADER};

fn cfg(overrides: &[&str]) -> ScenarioConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ScenarioConfig::parse(cosrod::config::DEFAULT_CONFIG, &o).unwrap()
}

fn scratch(tag: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("cosrod-it-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn rest_tracks_rest() {
    let out = simulate(&cfg(&["target.family=\"straight\"", "run.duration=1.0"])).unwrap();
    assert_eq!(out.status, RunStatus::Clean);
    for r in &out.record.rows {
        assert!(r.norms.p_err_l2 < 1e-8 && r.norms.theta_err_linf < 1e-8);
        assert!(r.residual_norm < 1e-8 * 22f64.sqrt());
    }
    for s in &out.record.snapshots {
        assert!(s.theta_star.iter().all(|t| t.abs() < 1e-8));
    }
}

#[test]
fn identity_holds_on_short_reference_run() {
    let out = simulate(&cfg(&["run.duration=0.5"])).unwrap();
    assert!(out.record.max_identity_error <= 1e-10, "{}", out.record.max_identity_error);
}

#[test]
fn empty_record_exports_header_only() {
    let text = timeseries_csv(&RunRecord::default().rows);
    assert_eq!(text, format!("{}\n", TIMESERIES_HEADER.join(",")));
}

#[test]
fn three_steps_give_three_rows() {
    let c = cfg(&["run.duration=0.01", "run.output_stride=1"]);
    let mut sim = Simulation::new(&c).unwrap();
    let rows: Vec<_> = (0..3).map(|_| sim.advance().unwrap().row).collect();
    let (header, data) = parse_timeseries(&timeseries_csv(&rows)).unwrap();
    assert_eq!(header.len(), TIMESERIES_HEADER.len());
    assert_eq!(data.len(), 3);
}

#[test]
fn export_round_trip_is_bit_exact() {
    let c = cfg(&["run.duration=0.25", "run.output_stride=1", "run.snapshot_stride=10"]);
    let out = simulate(&c).unwrap();
    let dir = scratch("roundtrip");
    export(&out.record, &dir, true).unwrap();
    let text = std::fs::read_to_string(dir.join("timeseries.csv")).unwrap();
    let (header, data) = parse_timeseries(&text).unwrap();
    assert_eq!(header, TIMESERIES_HEADER);
    assert_eq!(data.len(), out.record.rows.len());
    for (row, vals) in out.record.rows.iter().zip(&data) {
        let n = &row.norms;
        let expect = [
            n.t,
            n.p_err_l2,
            n.p_err_t_l2,
            n.p_err_s_l2,
            n.theta_err_linf,
            n.theta_err_t_linf,
            n.theta_err_s_l2,
            row.v1,
            row.v2,
            row.psi_l2,
            row.phi_sup,
        ];
        for (a, b) in expect.iter().zip(vals) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(row.residual_norm.to_bits(), vals[12].to_bits());
        assert_eq!(row.iterations as f64, vals[13]);
        assert_eq!(row.identity_error.to_bits(), vals[15].to_bits());
    }
    let frames = std::fs::read_dir(dir.join("snapshots")).unwrap().count();
    assert_eq!(frames, out.record.snapshots.len());
    let plot = std::fs::read_to_string(dir.join("plot.csv")).unwrap();
    assert_eq!(plot.lines().next(), Some("t,p_err_l2,p_err_t_l2"));
    assert_eq!(plot.lines().count(), out.record.rows.len() + 1);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn snapshot_has_one_line_per_node() {
    let out = simulate(&cfg(&["run.duration=0.05"])).unwrap();
    let dir = scratch("snap");
    export(&out.record, &dir, false).unwrap();
    let first = std::fs::read_to_string(dir.join("snapshots/frame_00000.csv")).unwrap();
    let mut lines = first.lines();
    assert!(lines.next().unwrap().starts_with("# t = "));
    assert_eq!(lines.next(), Some("s,p_y,p_z,theta,theta_star"));
    assert_eq!(lines.count(), 11);
    assert!(!dir.join("plot.csv").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn runs_are_deterministic() {
    let c = cfg(&["run.duration=0.5", "run.initial_perturbation=0.02", "run.seed=9"]);
    let (a, b) = (simulate(&c).unwrap(), simulate(&c).unwrap());
    assert_eq!(timeseries_csv(&a.record.rows), timeseries_csv(&b.record.rows));
}

#[test]
fn rows_are_time_ordered() {
    let out = simulate(&cfg(&["run.duration=0.5"])).unwrap();
    for w in out.record.rows.windows(2) {
        assert!(w[1].norms.t > w[0].norms.t);
    }
    assert!((out.record.rows.last().unwrap().norms.t - 0.5).abs() < 1e-12);
}
