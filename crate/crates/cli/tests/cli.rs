use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

fn markhawk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_markhawk"))
        .args(args)
        .env_remove("MARKHAWK_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = markhawk(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(str::to_owned)
        .collect()
}

#[test]
fn help_exits_cleanly() {
    for sub in [
        "simulate",
        "fit",
        "density-fit",
        "evaluate",
        "predict",
        "grid",
    ] {
        let out = markhawk(&[sub, "--help"]);
        assert!(out.status.success(), "{sub}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn usage_errors_are_prefixed() {
    let out = markhawk(&["simulate", "--horizon", "10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ERROR usage:"));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let out = markhawk(&[
        "fit",
        "--events",
        "/nonexistent/events.csv",
        "-o",
        model.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ERROR io:"));
    assert!(!model.exists());
}

#[test]
fn simulate_is_seeded() {
    let a = ok(&[
        "simulate",
        "--preset",
        "coupled-exp",
        "--horizon",
        "2000",
        "--seed",
        "2024",
    ]);
    let b = ok(&[
        "simulate",
        "--preset",
        "coupled-exp",
        "--horizon",
        "2000",
        "--seed",
        "2024",
    ]);
    assert_eq!(a, b);
    let events = a.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert!((1400..=2100).contains(&events), "{events}");

    let short = ok(&[
        "simulate",
        "--preset",
        "two-dim",
        "--horizon",
        "500",
        "--seed",
        "1",
        "--max-events",
        "40",
    ]);
    assert_eq!(
        short.lines().filter(|l| !l.starts_with('#')).count() - 1,
        40
    );
}

#[test]
fn fit_density_evaluate_predict_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    ok(&[
        "simulate",
        "--preset",
        "coupled-exp",
        "--horizon",
        "300",
        "--seed",
        "3",
        "-o",
        &p("ev.csv"),
    ]);
    ok(&[
        "fit",
        "--events",
        &p("ev.csv"),
        "--neurons",
        "8",
        "--max-epochs",
        "3",
        "--seed",
        "1",
        "-o",
        &p("m.json"),
        "--trace",
        &p("trace.csv"),
    ]);
    assert!(!data_rows(Path::new(&p("trace.csv"))).is_empty());

    let printed = ok(&[
        "density-fit",
        "--model",
        &p("m.json"),
        "--events",
        &p("ev.csv"),
        "--k",
        "1",
        "--log-marks",
    ]);
    assert!(printed.contains("dimension 0: 1 components"));

    let report = ok(&[
        "evaluate",
        "--model",
        &p("m.json"),
        "--events",
        &p("ev.csv"),
        "--out-dir",
        &p("eval"),
    ]);
    assert!(report.contains("max |coverage - q|"));
    assert_eq!(data_rows(&dir.path().join("eval/qq.csv")).len(), 99);
    assert_eq!(
        data_rows(&dir.path().join("eval/grid_0_0.csv")).len(),
        100 * 100
    );

    let forecast = ok(&[
        "predict",
        "--model",
        &p("m.json"),
        "--events",
        &p("ev.csv"),
        "--delta",
        "1.0",
        "--sims",
        "200",
        "--seed",
        "5",
    ]);
    let lines: Vec<&str> = forecast.lines().collect();
    assert_eq!(
        lines[0],
        "dim,delta,sims,p_event,mean_count,sd_count,median_next"
    );
    let p_event: f64 = lines[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&p_event));

    let grid = ok(&[
        "grid",
        "--model",
        &p("m.json"),
        "--m-min",
        "0.5",
        "--m-max",
        "2",
        "--nt",
        "4",
        "--nm",
        "3",
    ]);
    assert_eq!(grid.lines().count(), 1 + 12);
}

#[test]
fn grid_of_preset_starts_at_kernel_peak() {
    let out = ok(&[
        "grid",
        "--preset",
        "coupled-exp",
        "--t-max",
        "1",
        "--m-min",
        "1",
        "--m-max",
        "2",
        "--nt",
        "2",
        "--nm",
        "2",
    ]);
    let first: f64 = out
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    // alpha m exp(-t (beta + gamma m)) at t = 0, m = 1
    assert_eq!(first, 1.0);
}

#[test]
fn trade_files_are_ingested() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("timestamp,side,instrument,volume,price,buyer_id,seller_id\n");
    let instruments = ["BTC-USD", "ETH-USD"];
    for i in 0..400u64 {
        let side = if i % 2 == 0 { "buy" } else { "sell" };
        writeln!(
            csv,
            "{},{side},{},{},100,b,s",
            1_690_000_000_000 + 250 * i + (i * 7919) % 200,
            instruments[(i % 2) as usize],
            0.01 * (1 + i % 17) as f64
        )
        .unwrap();
    }
    let trades = dir.path().join("trades.csv");
    std::fs::write(&trades, csv).unwrap();
    let model = dir.path().join("m.json");
    ok(&[
        "fit",
        "--events",
        trades.to_str().unwrap(),
        "--format",
        "trade",
        "--dim",
        "BTC-USD:buy",
        "--dim",
        "ETH-USD:sell",
        "--neurons",
        "4",
        "--max-epochs",
        "1",
        "-o",
        model.to_str().unwrap(),
    ]);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(doc["dims"], 2);

    let out = markhawk(&[
        "fit",
        "--events",
        trades.to_str().unwrap(),
        "--format",
        "trade",
        "--dim",
        "DOGE-USD:buy",
        "-o",
        model.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ERROR "));
}
