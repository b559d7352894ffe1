//! Run configuration, validation and the printed schema.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Validate,
    Solve,
    Converge,
    Girsanov,
    VerifySuite,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Simulate,
        Command::Validate,
        Command::Solve,
        Command::Converge,
        Command::Girsanov,
        Command::VerifySuite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Validate => "validate",
            Command::Solve => "solve",
            Command::Converge => "converge",
            Command::Girsanov => "girsanov",
            Command::VerifySuite => "verify-suite",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }
}

pub const SEQUENCE_PRESETS: [&str; 2] = ["geometric", "constant"];
pub const DRIFT_PRESETS: [&str; 4] = ["example", "zero", "linear", "constant"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequencesConfig {
    pub preset: String,
    pub d_max: usize,
    pub h1: f64,
    pub h_ratio: f64,
    pub lambda1: f64,
    pub lambda_ratio: f64,
    pub h: f64,
    pub lambda: f64,
}

impl Default for SequencesConfig {
    fn default() -> Self {
        Self {
            preset: "geometric".into(),
            d_max: 4,
            h1: 0.08,
            h_ratio: 0.5,
            lambda1: 0.5,
            lambda_ratio: 0.5,
            h: 0.05,
            lambda: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    pub preset: String,
    /// Example family: `C_k = c0 λ_k ρ^k`, values `a` inside, `b` outside.
    pub c0: f64,
    pub rho: f64,
    pub a: f64,
    pub b: f64,
    pub offset: f64,
    /// Linear preset `b_k = -θ y_k`; constant preset `b_k = θ`.
    pub theta: f64,
    /// Distance at which the local non-determinism constants are estimated.
    pub lnd_r: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            preset: "example".into(),
            c0: 0.5,
            rho: 0.75,
            a: 1.0,
            b: -0.5,
            offset: 0.0,
            theta: 1.0,
            lnd_r: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub t_end: f64,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { t_end: 1.0, n: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n_paths: 4000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub d: usize,
    pub eps: f64,
    /// Starting point; empty means the origin.
    pub x: Vec<f64>,
    pub t: f64,
    pub phis: Vec<String>,
    pub rule: String,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            d: 2,
            eps: 0.1,
            x: Vec::new(),
            t: 1.0,
            phis: vec!["coord1".into(), "clipped_norm".into()],
            rule: "left".into(),
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Command,
    pub output: String,
    /// `(d, ε)` pairs for `converge`.
    pub schedule: Vec<(usize, f64)>,
    pub sequences: SequencesConfig,
    pub drift: DriftConfig,
    pub grid: GridConfig,
    pub mc: McConfig,
    pub solve: SolveConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::VerifySuite,
            output: "out".into(),
            schedule: vec![(1, 0.1), (2, 0.05), (4, 0.025), (4, 0.0125)],
            sequences: SequencesConfig::default(),
            drift: DriftConfig::default(),
            grid: GridConfig::default(),
            mc: McConfig::default(),
            solve: SolveConfig::default(),
        }
    }
}

fn bad(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn sequence_preset(&self) -> fbmsde::cyl::SequencePreset {
        use fbmsde::cyl::SequencePreset;
        let s = &self.sequences;
        if s.preset == "geometric" {
            SequencePreset::Geometric {
                h1: s.h1,
                h_ratio: s.h_ratio,
                lambda1: s.lambda1,
                lambda_ratio: s.lambda_ratio,
                d_max: s.d_max,
            }
        } else {
            SequencePreset::Constant {
                h: s.h,
                lambda: s.lambda,
                d_max: s.d_max,
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.sequences;
        if !SEQUENCE_PRESETS.contains(&s.preset.as_str()) {
            return Err(bad(
                "sequences.preset",
                format!("unknown preset `{}` (expected one of {})", s.preset, SEQUENCE_PRESETS.join(", ")),
            ));
        }
        if s.d_max == 0 {
            return Err(bad("sequences.d_max", "must be at least 1"));
        }
        if let Err(e) = fbmsde::cyl::make_sequences(&self.sequence_preset()) {
            let field = if s.preset == "geometric" { "sequences.h1" } else { "sequences.h" };
            return Err(bad(field, e.to_string()));
        }
        let dr = &self.drift;
        if !DRIFT_PRESETS.contains(&dr.preset.as_str()) {
            return Err(bad(
                "drift.preset",
                format!("unknown preset `{}` (expected one of {})", dr.preset, DRIFT_PRESETS.join(", ")),
            ));
        }
        if !(dr.lnd_r > 0.0 && dr.lnd_r <= self.grid.t_end) {
            return Err(bad("drift.lnd_r", "must lie in (0, grid.t_end]"));
        }
        if !(self.grid.t_end > 0.0 && self.grid.t_end.is_finite()) {
            return Err(bad("grid.t_end", "must be positive"));
        }
        if self.grid.n < 16 {
            return Err(bad("grid.n", format!("must be at least 16, got {}", self.grid.n)));
        }
        if self.mc.n_paths < 100 {
            return Err(bad("mc.n_paths", format!("must be at least 100, got {}", self.mc.n_paths)));
        }
        let so = &self.solve;
        if so.d == 0 || so.d > s.d_max {
            return Err(bad("solve.d", format!("must lie in 1..={}", s.d_max)));
        }
        if !(so.eps > 0.0) {
            return Err(bad("solve.eps", "must be positive"));
        }
        if !so.x.is_empty() && so.x.len() != so.d && so.x.len() != s.d_max {
            return Err(bad("solve.x", format!("needs {} or {} entries", so.d, s.d_max)));
        }
        let h = self.grid.t_end / self.grid.n as f64;
        let i = (so.t / h).round();
        if !(so.t > 0.0 && so.t <= self.grid.t_end * (1.0 + 1e-12)) || (i * h - so.t).abs() > 1e-9 * self.grid.t_end {
            return Err(bad("solve.t", "must be a positive grid node"));
        }
        for p in &so.phis {
            fbmsde::girsanov::Phi::parse(p).map_err(|_| bad("solve.phis", format!("unknown functional `{p}`")))?;
        }
        if so.phis.is_empty() {
            return Err(bad("solve.phis", "needs at least one functional"));
        }
        if !["left", "trapezoid"].contains(&so.rule.as_str()) {
            return Err(bad("solve.rule", format!("unknown rule `{}` (expected left or trapezoid)", so.rule)));
        }
        if !(so.tol >= 0.0) || so.max_iter == 0 {
            return Err(bad("solve.tol", "need tol ≥ 0 and max_iter ≥ 1"));
        }
        if self.command == Command::Converge && self.schedule.is_empty() {
            return Err(bad("schedule", "converge needs at least one (d, eps) pair"));
        }
        for &(d, e) in &self.schedule {
            if d == 0 || d > s.d_max || !(e > 0.0) {
                return Err(bad("schedule", format!("entry ({d}, {e}) needs 1 ≤ d ≤ {} and eps > 0", s.d_max)));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = String::new();
        let text = toml::to_string(&c).unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Every key with its type, default and the constraint it enforces, followed
/// by the defaults as a loadable config.
pub fn config_schema() -> String {
    let d = RunConfig::default();
    let rows: Vec<(&str, &str, String, &str)> = vec![
        ("command", "string", d.command.name().into(), "one of simulate, validate, solve, converge, girsanov, verify-suite"),
        ("output", "string", d.output.clone(), "output directory; FBMSDE_OUT and --out override it"),
        ("schedule", "list of [int, real]", format!("{:?}", d.schedule), "1 ≤ d ≤ sequences.d_max, eps > 0"),
        ("sequences.preset", "string", d.sequences.preset.clone(), "geometric or constant"),
        ("sequences.d_max", "int", d.sequences.d_max.to_string(), "number of explicit components, ≥ 1"),
        ("sequences.h1", "real", d.sequences.h1.to_string(), "geometric H_1; sup_k H_k < 1/12"),
        ("sequences.h_ratio", "real", d.sequences.h_ratio.to_string(), "geometric H_{k+1}/H_k in (0, 1]"),
        ("sequences.lambda1", "real", d.sequences.lambda1.to_string(), "geometric λ_1 ≥ 0"),
        ("sequences.lambda_ratio", "real", d.sequences.lambda_ratio.to_string(), "Σ λ_k² < ∞ and Σ λ_k/√H_k < ∞"),
        ("sequences.h", "real", d.sequences.h.to_string(), "constant preset H; sup_k H_k < 1/12"),
        ("sequences.lambda", "real", d.sequences.lambda.to_string(), "constant preset λ"),
        ("drift.preset", "string", d.drift.preset.clone(), "example, zero, linear or constant"),
        ("drift.c0", "real", d.drift.c0.to_string(), "example: C_k = c0 λ_k ρ^k ≥ 0"),
        ("drift.rho", "real", d.drift.rho.to_string(), "example: ρ; Σ C_k² < ∞ needs ρ λ-decay"),
        ("drift.a", "real", d.drift.a.to_string(), "example: value on the half-space"),
        ("drift.b", "real", d.drift.b.to_string(), "example: value off the half-space"),
        ("drift.offset", "real", d.drift.offset.to_string(), "example: half-space offset"),
        ("drift.theta", "real", d.drift.theta.to_string(), "linear: b_k = -θ y_k; constant: b_k = θ"),
        ("drift.lnd_r", "real", d.drift.lnd_r.to_string(), "local non-determinism distance in (0, T]"),
        ("grid.t_end", "real", d.grid.t_end.to_string(), "T > 0"),
        ("grid.n", "int", d.grid.n.to_string(), "N ≥ 16"),
        ("mc.n_paths", "int", d.mc.n_paths.to_string(), "≥ 100"),
        ("mc.seed", "int", d.mc.seed.to_string(), "master seed; --seed overrides it"),
        ("solve.d", "int", d.solve.d.to_string(), "1 ≤ d ≤ sequences.d_max"),
        ("solve.eps", "real", d.solve.eps.to_string(), "mollification width > 0"),
        ("solve.x", "list of real", format!("{:?}", d.solve.x), "empty (origin), d or d_max entries"),
        ("solve.t", "real", d.solve.t.to_string(), "evaluation time, a grid node"),
        ("solve.phis", "list of string", format!("{:?}", d.solve.phis), "coordN, coord_sum, clipped_norm, clipped_norm_C"),
        ("solve.rule", "string", d.solve.rule.clone(), "left or trapezoid"),
        ("solve.tol", "real", d.solve.tol.to_string(), "pathwise sup-norm stopping tolerance ≥ 0"),
        ("solve.max_iter", "int", d.solve.max_iter.to_string(), "≥ 1"),
    ];
    let mut out = String::from("# fbmsde run configuration (TOML)\n#\n# key | type | default | constraint\n");
    for (k, t, def, c) in rows {
        out.push_str(&format!("# {k} | {t} | {def} | {c}\n"));
    }
    out.push_str("#\n# defaults:\n\n");
    out.push_str(&toml::to_string(&d).unwrap_or_default());
    out
}
