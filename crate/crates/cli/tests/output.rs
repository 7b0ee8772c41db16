use clap::Parser;

use extprof_cli::output::{emit_csv, parse_csv, record_to_json, sidecar_path, table_to_csv, Cell, OutputError, Table};
use extprof_cli::{Cli, OutputRecord, RunConfig};

fn config() -> RunConfig {
    RunConfig::from_cli(Cli::parse_from(["extprof", "profile", "--a", "0.5"])).unwrap()
}

#[test]
fn header_only_table() {
    let t = Table::new(&["r", "f", "fprime"]);
    let text = table_to_csv(&t).unwrap();
    assert_eq!(text, "r,f,fprime\r\n");
    assert_eq!(parse_csv(&text).unwrap(), t);
}

#[test]
fn csv_round_trip_is_byte_identical() {
    let mut t = Table::new(&["x", "label"]);
    t.push(vec![Cell::Num(0.1), "a, quoted".into()]);
    t.push(vec![Cell::Num(-1e-300), "".into()]);
    t.push(vec![Cell::Num(std::f64::consts::PI), "plain".into()]);
    let once = table_to_csv(&t).unwrap();
    let back = parse_csv(&once).unwrap();
    assert_eq!(back.rows[0][0], Cell::Num(0.1));
    assert_eq!(table_to_csv(&back).unwrap(), once);
}

#[test]
fn ragged_rows_are_rejected() {
    let mut t = Table::new(&["x", "y"]);
    t.push(vec![Cell::Num(1.0)]);
    assert!(matches!(table_to_csv(&t), Err(OutputError::Ragged { row: 0, got: 1, want: 2 })));
}

#[test]
fn non_finite_values_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    let mut rec = OutputRecord::new(config());
    rec.table = Table::new(&["r", "f"]);
    rec.table.push(vec![Cell::Num(1.0), Cell::Num(f64::INFINITY)]);
    assert!(matches!(emit_csv(&rec, &path), Err(OutputError::NonFinite { .. })));
    assert!(!path.exists());
    assert!(!sidecar_path(&path).exists());

    let mut rec = OutputRecord::new(config());
    rec.diagnostic("residual", f64::NAN);
    assert!(record_to_json(&rec).is_err());
}

#[test]
fn csv_file_gets_metadata_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let mut rec = OutputRecord::new(config());
    rec.table = Table::new(&["r", "f"]);
    rec.table.push(vec![Cell::Num(0.0), Cell::Num(0.5)]);
    rec.summary("r_end", 100.0);
    emit_csv(&rec, &path).unwrap();
    let body = std::fs::read_to_string(&path).unwrap();
    assert!(body.starts_with("r,f\r\n"));
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
    assert_eq!(meta["schema_version"], "extprof/1");
    assert_eq!(meta["config"]["command"], "profile");
    assert_eq!(meta["summary"]["r_end"], 100.0);
    assert!(meta["table"]["rows"].as_array().unwrap().is_empty());
}

#[test]
fn json_output_is_deterministic() {
    let run = || {
        let cfg = RunConfig::from_cli(Cli::parse_from(["extprof", "profile", "--a", "0.5", "--r-max", "5"])).unwrap();
        let out = extprof_cli::run(&cfg).unwrap();
        record_to_json(&out.record).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    for key in ["schema_version", "config", "table", "summary", "diagnostics"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}
