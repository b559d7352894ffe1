use std::process::Command as Proc;

use fbmsde_cli::table::strip_header;
use fbmsde_cli::{config_schema, emit_plotdata, execute, run, Cell, CliError, Command, Provenance, ResultTable, RunConfig, RunOptions, TableError};

fn bin() -> Proc {
    Proc::new(env!("CARGO_BIN_EXE_fbmsde"))
}

fn prov() -> Provenance {
    Provenance {
        config_hash: "abc".into(),
        seed: 1,
        timestamp: "now".into(),
    }
}

fn small(command: Command) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.command = command;
    cfg.mc.n_paths = 400;
    cfg
}

#[test]
fn schema_documents_constraints_and_parses() {
    let s = config_schema();
    assert!(s.lines().any(|l| l.contains("sup") && l.contains("1/12")));
    assert!(s.contains("mc.n_paths"));
    let cfg = RunConfig::from_toml(&s).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.hash(), RunConfig::default().hash());
}

#[test]
fn unknown_key_is_rejected_by_name() {
    let err = RunConfig::from_toml("[grid]\nn = 32\nsteps = 4\n").unwrap_err();
    assert!(matches!(err, CliError::Parse(_)));
    assert!(err.to_string().contains("steps"));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn invalid_values_name_the_field() {
    let cfg = RunConfig::from_toml("[drift]\npreset = \"wiggly\"\n").unwrap();
    match cfg.validate() {
        Err(CliError::Config { field, .. }) => assert_eq!(field, "drift.preset"),
        other => panic!("{other:?}"),
    }
    let cfg = RunConfig::from_toml("[mc]\nn_paths = 0\n").unwrap();
    let err = cfg.validate().unwrap_err();
    assert!(err.to_string().contains("mc.n_paths"));
    assert_eq!(err.exit_code(), 1);
    let cfg = RunConfig::from_toml("[sequences]\nh1 = 0.2\n").unwrap();
    assert!(cfg.validate().unwrap_err().to_string().contains("sequences.h1"));
}

#[test]
fn hash_ignores_output_directory() {
    let a = RunConfig::default();
    let mut b = RunConfig::default();
    b.output = "elsewhere".into();
    assert_eq!(a.hash(), b.hash());
    b.mc.seed = 2;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[drift]\npreset = \"wiggly\"\n").unwrap();
    let out = bin().arg("validate").arg("--config").arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("drift.preset"));

    std::fs::write(&bad, "[mc]\nn_paths = 0\n").unwrap();
    let out = bin().arg("simulate").arg("--config").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin().arg("schema").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), config_schema());

    let out = bin().arg("teleport").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn out_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "command = \"validate\"\n").unwrap();
    let env_dir = dir.path().join("env");
    let flag_dir = dir.path().join("flag");
    let st = bin().arg("--config").arg(&cfg).env("FBMSDE_OUT", &env_dir).status().unwrap();
    assert!(st.success());
    assert!(env_dir.join("report.csv").exists());
    let st = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&flag_dir)
        .env("FBMSDE_OUT", &env_dir)
        .status()
        .unwrap();
    assert!(st.success());
    assert!(flag_dir.join("results.csv").exists());
}

#[test]
fn verify_suite_writes_all_checks() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out_dir: dir.path().to_path_buf(),
        threads: Some(2),
        timestamp: "t".into(),
    };
    let code = run(&small(Command::VerifySuite), &opts).unwrap();
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let body = strip_header(&text);
    let mut lines = body.lines();
    assert_eq!(lines.next().unwrap(), "check_id,status,measured,bound,slack,config_hash");
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() > 50);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("pass")));
    assert!(text.starts_with("# config_hash: "));
}

#[test]
fn every_command_writes_its_files() {
    let dir = tempfile::tempdir().unwrap();
    for (c, files) in [
        (Command::Simulate, vec!["results.csv", "report.csv", "ensemble.bin", "plotdata/variance_k1.dat"]),
        (Command::Validate, vec!["results.csv", "report.csv"]),
        (Command::Solve, vec!["results.csv", "report.csv", "plotdata/residuals.dat"]),
        (Command::Girsanov, vec!["results.csv", "report.csv"]),
        (Command::Converge, vec!["results.csv", "report.csv", "plotdata/converge_coord1_d1.dat"]),
    ] {
        let out = dir.path().join(c.name());
        let opts = RunOptions {
            out_dir: out.clone(),
            threads: None,
            timestamp: "t".into(),
        };
        let code = run(&small(c), &opts).unwrap();
        assert!(code <= 1);
        for f in files {
            assert!(out.join(f).exists(), "{} missing {f}", c.name());
        }
    }
}

#[test]
fn bodies_are_identical_across_runs_and_threads() {
    for c in [Command::Simulate, Command::Solve, Command::Girsanov, Command::Converge] {
        let cfg = small(c);
        let once = |threads| {
            let out = fbmsde::par::with_threads(threads, || execute(&cfg, "x")).unwrap();
            let mut v: Vec<String> = [out.results, out.report].into_iter().flatten().map(|t| t.csv_body().unwrap()).collect();
            v.extend(out.plots.into_iter().map(|p| p.1));
            v
        };
        let a = once(1);
        assert_eq!(a, once(1));
        assert_eq!(a, once(3));
    }
}

#[test]
fn timestamps_only_touch_the_header() {
    let cfg = small(Command::Validate);
    let a = execute(&cfg, "monday").unwrap().results.unwrap().to_csv().unwrap();
    let b = execute(&cfg, "tuesday").unwrap().results.unwrap().to_csv().unwrap();
    assert_ne!(a, b);
    assert_eq!(strip_header(&a), strip_header(&b));
}

#[test]
fn plotdata_edge_cases() {
    let mut t = ResultTable::new(&["x", "y", "label"], prov());
    assert_eq!(emit_plotdata(&t, "x", &["y"]).unwrap(), "");
    t.push(vec![1.0.into(), 2.0.into(), "a".into()]).unwrap();
    t.push(vec![2usize.into(), 0.5.into(), "b".into()]).unwrap();
    let p = emit_plotdata(&t, "x", &["y"]).unwrap();
    let lines: Vec<&str> = p.lines().collect();
    assert_eq!(lines[0], "# x y");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2].split(' ').count(), 2);
    assert_eq!(emit_plotdata(&t, "x", &["label"]), Err(TableError::NonNumeric("label".into())));
    assert_eq!(emit_plotdata(&t, "x", &["z"]), Err(TableError::MissingColumn("z".into())));
    assert!(t.push(vec![1.0.into()]).is_err());
}

#[test]
fn filter_and_csv_quoting() {
    let mut t = ResultTable::new(&["k", "note"], prov());
    t.push(vec![1usize.into(), "plain".into()]).unwrap();
    t.push(vec![2usize.into(), "with, comma".into()]).unwrap();
    let body = t.csv_body().unwrap();
    assert!(body.contains("\"with, comma\""));
    assert!(body.lines().skip(1).all(|l| l.ends_with(",abc")));
    let f = t.filter("k", &Cell::from(2usize)).unwrap();
    assert_eq!(f.rows.len(), 1);
    assert!(t.filter("nope", &Cell::from(1usize)).is_err());
}
