//! Subcommand dispatch.

use std::path::PathBuf;

use fbmsde::cyl::{lnd_constants, make_sequences, sample_with, CylSampler, HurstSequence, WeightSequence};
use fbmsde::drift::{example_preset, mollify, validate_class_b, Component, DriftSpec};
use fbmsde::girsanov::{novikov_bound, weak_solution_estimator, Phi};
use fbmsde::solver::{converge_experiment, picard_expectations, PicardOptions, QuadRule};
use fbmsde::verify::run_suite;
use fbmsde::{par, TimeGrid};

use crate::config::{Command, RunConfig};
use crate::table::{emit_plotdata, Cell, Provenance, ResultTable};
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub timestamp: String,
}

/// Everything a run produces, before anything touches the disk.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub results: Option<ResultTable>,
    pub report: Option<ResultTable>,
    /// `(file name, contents)` under `plotdata/`.
    pub plots: Vec<(String, String)>,
    pub binary: Option<(String, Vec<u8>)>,
}

impl Outputs {
    /// False only if some report row says `fail`.
    pub fn all_pass(&self) -> bool {
        let Some(r) = &self.report else { return true };
        let Ok(j) = r.column_index("status") else { return true };
        r.rows.iter().all(|row| row[j] != Cell::from("fail"))
    }
}

const REPORT_COLUMNS: [&str; 5] = ["check_id", "status", "measured", "bound", "slack"];

fn push_check(t: &mut ResultTable, id: impl Into<String>, pass: bool, measured: f64, bound: f64, slack: f64) -> Result<(), CliError> {
    let status = if pass { "pass" } else { "fail" };
    t.push(vec![id.into().into(), status.into(), measured.into(), bound.into(), slack.into()])?;
    Ok(())
}

fn push_at_most(t: &mut ResultTable, id: impl Into<String>, measured: f64, bound: f64) -> Result<(), CliError> {
    push_check(t, id, measured <= bound, measured, bound, bound - measured)
}

struct Setup {
    hs: HurstSequence,
    ws: WeightSequence,
    grid: TimeGrid,
    spec: DriftSpec,
    lambdas: Vec<f64>,
    scaling: Vec<f64>,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let (hs, ws) = make_sequences(&cfg.sequence_preset())?;
    let grid = TimeGrid::uniform(cfg.grid.t_end, cfg.grid.n)?;
    let d = cfg.sequences.d_max;
    let lambdas = ws.heads()[..d].to_vec();
    let lnd = lnd_constants(&hs, d, &grid, cfg.drift.lnd_r)?;
    let scaling: Vec<f64> = lambdas.iter().zip(&lnd).map(|(l, k)| l * k.sqrt()).collect();
    let dr = &cfg.drift;
    let spec = match dr.preset.as_str() {
        "example" => example_preset(dr.c0, dr.rho, dr.a, dr.b, dr.offset, &lambdas, &scaling)?,
        "zero" => DriftSpec::zero(d),
        "linear" => DriftSpec::new(
            (0..d)
                .map(|k| {
                    let mut row = vec![0.0; k + 1];
                    row[k] = -dr.theta;
                    Component::Linear(row)
                })
                .collect(),
        ),
        _ => DriftSpec::new(vec![Component::Constant(dr.theta); d]),
    };
    Ok(Setup {
        hs,
        ws,
        grid,
        spec,
        lambdas,
        scaling,
    })
}

fn start_point(cfg: &RunConfig, d: usize) -> Vec<f64> {
    (0..d).map(|k| cfg.solve.x.get(k).copied().unwrap_or(0.0)).collect()
}

fn picard_options(cfg: &RunConfig) -> PicardOptions {
    PicardOptions {
        tol: cfg.solve.tol,
        max_iter: cfg.solve.max_iter,
        rule: if cfg.solve.rule == "left" {
            QuadRule::LeftEndpoint
        } else {
            QuadRule::Trapezoid
        },
        ..Default::default()
    }
}

fn phis(cfg: &RunConfig) -> Result<Vec<Phi>, CliError> {
    Ok(cfg.solve.phis.iter().map(|p| Phi::parse(p)).collect::<Result<Vec<_>, _>>()?)
}

/// Run the configured command and build its tables without writing them.
pub fn execute(cfg: &RunConfig, timestamp: &str) -> Result<Outputs, CliError> {
    cfg.validate()?;
    let prov = Provenance {
        config_hash: cfg.hash(),
        seed: cfg.mc.seed,
        timestamp: timestamp.to_string(),
    };
    match cfg.command {
        Command::VerifySuite => verify_suite(cfg, prov),
        Command::Simulate => simulate(cfg, prov),
        Command::Validate => validate(cfg, prov),
        Command::Solve => solve(cfg, prov),
        Command::Girsanov => girsanov(cfg, prov),
        Command::Converge => converge(cfg, prov),
    }
}

fn verify_suite(cfg: &RunConfig, prov: Provenance) -> Result<Outputs, CliError> {
    let suite = run_suite(cfg.mc.seed);
    let mut report = ResultTable::new(&REPORT_COLUMNS, prov);
    for r in &suite.rows {
        report.push(vec![
            r.check_id.clone().into(),
            r.status.as_str().into(),
            r.measured.into(),
            r.bound.into(),
            r.slack.into(),
        ])?;
    }
    Ok(Outputs {
        report: Some(report),
        ..Default::default()
    })
}

fn simulate(cfg: &RunConfig, prov: Provenance) -> Result<Outputs, CliError> {
    let st = setup(cfg)?;
    let d = cfg.sequences.d_max;
    let sampler = CylSampler::new(&st.hs, &st.ws, d, &st.grid)?;
    let n_paths = cfg.mc.n_paths;
    let ens = sample_with(&sampler, n_paths, cfg.mc.seed)?;
    let mut results = ResultTable::new(&["component", "t", "mean", "variance", "variance_stderr", "exact_variance"], prov.clone());
    let mut report = ResultTable::new(&REPORT_COLUMNS, prov);
    let nf = n_paths as f64;
    for k in 0..d {
        let h = sampler.hursts[k].value();
        let lam = sampler.lambdas[k];
        for i in 0..st.grid.len() {
            let t = st.grid.node(i);
            let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
            for p in 0..n_paths {
                let v = ens.get(k, i, p);
                s1 += v;
                s2 += v * v;
                s4 += v.powi(4);
            }
            let mean = s1 / nf;
            let m2 = s2 / nf;
            let se = ((s4 / nf - m2 * m2) / nf).max(0.0).sqrt();
            let exact = lam * lam * t.powf(2.0 * h);
            results.push(vec![(k + 1).into(), t.into(), mean.into(), m2.into(), se.into(), exact.into()])?;
            if i + 1 == st.grid.len() {
                let z = (m2 - exact).abs() / se.max(f64::MIN_POSITIVE);
                push_at_most(&mut report, format!("variance_k{}_T", k + 1), z, 4.0)?;
            }
        }
    }
    let mut plots = Vec::new();
    for k in 0..d {
        let sub = results.filter("component", &Cell::from(k + 1))?;
        plots.push((format!("variance_k{}.dat", k + 1), emit_plotdata(&sub, "t", &["variance", "exact_variance"])?));
    }
    let mut bin = Vec::new();
    ens.write_binary(&mut bin)?;
    Ok(Outputs {
        results: Some(results),
        report: Some(report),
        plots,
        binary: Some(("ensemble.bin".into(), bin)),
    })
}

fn validate(cfg: &RunConfig, prov: Provenance) -> Result<Outputs, CliError> {
    let st = setup(cfg)?;
    let d = cfg.sequences.d_max;
    let r = validate_class_b(&st.spec, d, &st.lambdas, &st.scaling, cfg.grid.t_end)?;
    let mut results = ResultTable::new(
        &[
            "component",
            "sup_measured",
            "sup_bound",
            "integral_measured",
            "integral_stderr",
            "integral_bound",
            "dims",
            "method",
            "pass",
        ],
        prov.clone(),
    );
    let mut report = ResultTable::new(&REPORT_COLUMNS, prov);
    for m in &r.components {
        results.push(vec![
            (m.k + 1).into(),
            m.sup_measured.into(),
            m.sup_bound.into(),
            m.integral_measured.into(),
            m.integral_stderr.into(),
            m.integral_bound.into(),
            m.dims.into(),
            format!("{:?}", m.method).to_lowercase().into(),
            m.pass.into(),
        ])?;
        push_at_most(&mut report, format!("class_b_sup_k{}", m.k + 1), m.sup_measured, m.sup_bound)?;
        push_check(
            &mut report,
            format!("class_b_integral_k{}", m.k + 1),
            m.pass,
            m.integral_measured,
            m.integral_bound,
            m.integral_margin(),
        )?;
    }
    let nb = novikov_bound(&st.spec, st.hs.heads(), cfg.grid.t_end)?;
    push_at_most(&mut report, "novikov_direct_exponent", nb.direct_exponent, nb.exponent)?;
    Ok(Outputs {
        results: Some(results),
        report: Some(report),
        ..Default::default()
    })
}

const ESTIMATE_COLUMNS: [&str; 8] = ["phi_id", "t", "d", "eps", "estimate", "stderr", "n_paths", "seed"];

fn solve(cfg: &RunConfig, prov: Provenance) -> Result<Outputs, CliError> {
    let st = setup(cfg)?;
    let d = cfg.solve.d;
    let sampler = CylSampler::new(&st.hs, &st.ws, d, &st.grid)?;
    let md = mollify(&st.spec, d, cfg.solve.eps)?;
    let x = start_point(cfg, d);
    let phis = phis(cfg)?;
    let opts = picard_options(cfg);
    let (est, summary) = picard_expectations(&md, &phis, &x, cfg.solve.t, &sampler, cfg.mc.n_paths, cfg.mc.seed, &opts)?;
    let mut results = ResultTable::new(&ESTIMATE_COLUMNS, prov.clone());
    for (phi, (m, se)) in phis.iter().zip(&est) {
        results.push(vec![
            phi.id().into(),
            cfg.solve.t.into(),
            d.into(),
            cfg.solve.eps.into(),
            (*m).into(),
            (*se).into(),
            cfg.mc.n_paths.into(),
            cfg.mc.seed.into(),
        ])?;
    }
    let mut report = ResultTable::new(&REPORT_COLUMNS, prov.clone());
    push_at_most(
        &mut report,
        "picard_iterations",
        summary.iterations_used as f64,
        cfg.solve.max_iter as f64,
    )?;
    let mut res = ResultTable::new(&["iteration", "residual"], prov);
    for (n, r) in summary.residual_history.iter().enumerate() {
        res.push(vec![(n + 1).into(), (*r).into()])?;
    }
    Ok(Outputs {
        results: Some(results),
        report: Some(report),
        plots: vec![("residuals.dat".into(), emit_plotdata(&res, "iteration", &["residual"])?)],
        binary: None,
    })
}

fn girsanov(cfg: &RunConfig, prov: Provenance) -> Result<Outputs, CliError> {
    let st = setup(cfg)?;
    let d = cfg.solve.d;
    let sampler = CylSampler::new(&st.hs, &st.ws, d, &st.grid)?;
    let md = mollify(&st.spec, d, cfg.solve.eps)?;
    let x = start_point(cfg, d);
    let phis = phis(cfg)?;
    let est = weak_solution_estimator(&md, &phis, &x, cfg.solve.t, &sampler, cfg.mc.n_paths, cfg.mc.seed)?;
    let mut cols = ESTIMATE_COLUMNS.to_vec();
    cols.extend(["ess", "mean_weight", "weight_stderr"]);
    let mut results = ResultTable::new(&cols, prov.clone());
    for e in &est {
        results.push(vec![
            e.phi_id.clone().into(),
            e.t.into(),
            e.d.into(),
            cfg.solve.eps.into(),
            e.estimate.into(),
            e.stderr.into(),
            e.n_paths.into(),
            e.seed.into(),
            e.ess.into(),
            e.mean_weight.into(),
            e.weight_stderr.into(),
        ])?;
    }
    let mut report = ResultTable::new(&REPORT_COLUMNS, prov);
    if let Some(e) = est.first() {
        let z = (e.mean_weight - 1.0).abs() / e.weight_stderr.max(f64::MIN_POSITIVE);
        push_at_most(&mut report, "mean_weight_z", z, 3.0)?;
        let frac = e.ess / e.n_paths as f64;
        let floor = fbmsde::girsanov::ESS_FLAG_FRACTION;
        push_check(&mut report, "ess_fraction", !e.ess_flag, frac, floor, frac - floor)?;
    }
    Ok(Outputs {
        results: Some(results),
        report: Some(report),
        ..Default::default()
    })
}

fn converge(cfg: &RunConfig, prov: Provenance) -> Result<Outputs, CliError> {
    let st = setup(cfg)?;
    let d = cfg.schedule.iter().map(|s| s.0).max().unwrap_or(1);
    let sampler = CylSampler::new(&st.hs, &st.ws, d, &st.grid)?;
    let x = start_point(cfg, d);
    let phis = phis(cfg)?;
    let opts = picard_options(cfg);
    let rows = converge_experiment(
        &st.spec,
        &cfg.schedule,
        cfg.solve.t,
        &phis,
        &x,
        &sampler,
        cfg.mc.n_paths,
        cfg.mc.seed,
        &opts,
    )?;
    let mut results = ResultTable::new(
        &["d", "eps", "t", "phi_id", "value", "stderr", "target", "target_stderr", "gap", "gap_stderr"],
        prov.clone(),
    );
    for r in &rows {
        results.push(vec![
            r.d.into(),
            r.eps.into(),
            r.t.into(),
            r.phi_id.clone().into(),
            r.value.into(),
            r.stderr.into(),
            r.target.into(),
            r.target_stderr.into(),
            r.gap.into(),
            r.gap_stderr.into(),
        ])?;
    }
    let mut report = ResultTable::new(&REPORT_COLUMNS, prov);
    let mut plots = Vec::new();
    let mut ds: Vec<usize> = cfg.schedule.iter().map(|s| s.0).collect();
    ds.dedup();
    for phi in &phis {
        let id = phi.id();
        let sub = results.filter("phi_id", &Cell::from(id.as_str()))?;
        for &dd in &ds {
            let per_d = sub.filter("d", &Cell::from(dd))?;
            plots.push((format!("converge_{id}_d{dd}.dat"), emit_plotdata(&per_d, "eps", &["gap", "gap_stderr"])?));
        }
        let mine: Vec<_> = rows.iter().filter(|r| r.phi_id == id).collect();
        if let (Some(first), Some(last)) = (mine.first(), mine.last()) {
            // the gaps share the target, so the standard errors are combined conservatively
            let se = (first.gap_stderr.powi(2) + last.gap_stderr.powi(2)).sqrt();
            let shrink = first.gap.abs() - last.gap.abs();
            let status = if first.gap.abs() <= 3.0 * first.gap_stderr {
                // nothing resolvable to shrink
                "inconclusive"
            } else if shrink > 3.0 * se {
                "pass"
            } else {
                "fail"
            };
            report.push(vec![
                format!("gap_shrinks_{id}").into(),
                status.into(),
                shrink.into(),
                (3.0 * se).into(),
                (shrink - 3.0 * se).into(),
            ])?;
        }
    }
    Ok(Outputs {
        results: Some(results),
        report: Some(report),
        plots,
        binary: None,
    })
}

/// Execute and write `results.csv`, `report.csv` and `plotdata/*.dat` under
/// `opts.out_dir`. Returns the exit status: 0 when every check passes, 1
/// otherwise.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<i32, CliError> {
    let out = match opts.threads {
        Some(t) => par::with_threads(t, || execute(cfg, &opts.timestamp)),
        None => execute(cfg, &opts.timestamp),
    }?;
    std::fs::create_dir_all(&opts.out_dir)?;
    if let Some(t) = &out.results {
        std::fs::write(opts.out_dir.join("results.csv"), t.to_csv()?)?;
    }
    if let Some(t) = &out.report {
        std::fs::write(opts.out_dir.join("report.csv"), t.to_csv()?)?;
    }
    if !out.plots.is_empty() {
        let dir = opts.out_dir.join("plotdata");
        std::fs::create_dir_all(&dir)?;
        for (name, body) in &out.plots {
            std::fs::write(dir.join(name), body)?;
        }
    }
    if let Some((name, bytes)) = &out.binary {
        std::fs::write(opts.out_dir.join(name), bytes)?;
    }
    Ok(if out.all_pass() { 0 } else { 1 })
}
