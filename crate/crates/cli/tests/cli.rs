use std::fs;
use std::path::Path;

use les_cli::{main_with, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, EXIT_VERIFY};

const SMALL: &str = "[grid]\nitot = 16\njtot = 16\nktot = 8\nheight = 1600\n[run]\nsteps = 3\nspinup_steps = 0\nstats_interval = 1\n";

fn les(args: &[&str]) -> i32 {
    main_with(std::iter::once("les".to_string()).chain(args.iter().map(|s| s.to_string())))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors() {
    assert_eq!(les(&[]), EXIT_USAGE);
    assert_eq!(les(&["run", "--out", "x", "--ranks", "2"]), EXIT_USAGE);
    assert_eq!(les(&["launch"]), EXIT_USAGE);
    assert_eq!(les(&["--help"]), EXIT_OK);
}

#[test]
fn config_errors() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("o");
    let bad = write(d.path(), "bad.cfg", "[grid]\ncolour = 3\n");
    assert_eq!(les(&["run", "--config", &bad, "--out", s(&out)]), EXIT_CONFIG);
    assert_eq!(les(&["run", "--config", s(&d.path().join("missing.cfg")), "--out", s(&out)]), EXIT_CONFIG);
    let tiny = write(d.path(), "tiny.cfg", "[grid]\nitot = 2\n");
    assert_eq!(les(&["run", "--config", &tiny, "--out", s(&out)]), EXIT_CONFIG);
    let cfg = write(d.path(), "small.cfg", SMALL);
    let empty = write(d.path(), "empty.space", "# no settings\n");
    assert_eq!(les(&["tune", "--config", &cfg, "--out", s(&out), "--space", &empty, "--synthetic-timer"]), EXIT_CONFIG);
}

#[test]
fn nan_aborts_with_numerical_code() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "nan.cfg", &format!("{SMALL}[physics]\nbubble_amp = NaN\n"));
    assert_eq!(les(&["run", "--config", &cfg, "--out", s(&d.path().join("o"))]), EXIT_NUMERICAL);
}

#[test]
fn run_then_verify() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "small.cfg", SMALL);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert_eq!(les(&["run", "--config", &cfg, "--out", s(&a)]), EXIT_OK);
    for f in ["profiles.csv", "timings.csv", "poisson_timings.csv", "timeseries.csv", "run_summary.csv", "config.cfg"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let timings = fs::read_to_string(a.join("timings.csv")).unwrap();
    assert!(timings.starts_with("component,device,steps,cells,total_us,metric,fraction_pct"));
    assert!(fs::read_to_string(a.join("profiles.csv")).unwrap().starts_with("quantity,level,z_m,value,samples"));
    assert_eq!(les(&["verify", s(&a), s(&a), "--tol", "0"]), EXIT_OK);

    assert_eq!(les(&["run", "--config", &cfg, "--out", s(&b), "--ranks", "2x2"]), EXIT_OK);
    assert_eq!(les(&["verify", s(&a), s(&b), "--tol", "0"]), EXIT_OK);

    let text = fs::read_to_string(b.join("profiles.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let row = lines.iter().position(|l| l.starts_with("thl,")).unwrap();
    let mut cols: Vec<String> = lines[row].split(',').map(String::from).collect();
    let v: f64 = cols[3].parse().unwrap();
    cols[3] = (v * 1.1).to_string();
    lines[row] = cols.join(",");
    fs::write(b.join("profiles.csv"), lines.join("\n") + "\n").unwrap();
    assert_eq!(les(&["verify", s(&a), s(&b)]), EXIT_VERIFY);
    assert_eq!(les(&["verify", s(&a), s(&b), "--tol", "0.2"]), EXIT_OK);
}

#[test]
fn synthetic_tune_is_reproducible_and_loadable() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "small.cfg", SMALL);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for o in [&a, &b] {
        let args = ["tune", "--config", &cfg, "--out", s(o), "--kernel", "diffuse_scalars,advec_2nd", "--scalars", "1,2", "--synthetic-timer", "--reps", "2"];
        assert_eq!(les(&args), EXIT_OK);
    }
    for f in ["tuning.csv", "histogram.csv", "best_schedule.cfg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let best = fs::read_to_string(a.join("best_schedule.cfg")).unwrap();
    assert!(best.contains("# diffuse_scalars_n1 = "));
    assert!(best.lines().any(|l| l.starts_with("diffuse_scalars = lane_width=64 team_count=2048 collapse=3")));
    let run = d.path().join("run");
    assert_eq!(les(&["run", "--config", &cfg, "--out", s(&run), "--schedule-file", s(&a.join("best_schedule.cfg")), "--steps", "1"]), EXIT_OK);
}

#[test]
fn scale_and_bench_write_tables() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "small.cfg", SMALL);
    let o = d.path().join("o");
    assert_eq!(les(&["scale", "--config", &cfg, "--out", s(&o), "--max-ranks", "2", "--steps", "1", "--rounds", "1"]), EXIT_OK);
    let text = fs::read_to_string(o.join("scaling.csv")).unwrap();
    assert!(text.starts_with("component,N,metric,efficiency"));
    assert!(text.lines().any(|l| l.starts_with("Timestep loop,1,")));
    assert_eq!(les(&["bench", "--config", &cfg, "--out", s(&o), "--reps", "1"]), EXIT_OK);
    assert!(o.join("bench.csv").exists());
    assert_eq!(les(&["scale", "--config", &cfg, "--out", s(&o), "--max-ranks", "0"]), EXIT_USAGE);
}
