//! Subcommand pipelines, the invariant suite and result emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::base::{BaseKind, FiberId};
use crate::bv::{integrate, random_step, GridFunction};
use crate::cones::{self, ConeAnalysis, ConeOptions};
use crate::config::{ExperimentConfig, Format};
use crate::error::{Error, Result};
use crate::open::{self, EscapeOptions};
use crate::rng::SeedTree;
use crate::rpf::{self, SolverOptions, SpectralData};
use crate::scenarios::{is_markov, scenario_library};
use crate::transfer::{fully_normalized, support_of, RandomSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Subcommand {
    Solve,
    Escape,
    Correlations,
    Cones,
    Check,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Solve => "solve",
            Subcommand::Escape => "escape",
            Subcommand::Correlations => "correlations",
            Subcommand::Cones => "cones",
            Subcommand::Check => "check",
        }
    }
}

/// Command-line overrides of the `[solver]` cone settings.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConeFlags {
    pub a: Option<f64>,
    pub u: Option<f64>,
    pub v: Option<f64>,
    pub epsilon: Option<f64>,
    pub depth: Option<usize>,
    pub samples: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub format: Option<Format>,
    pub cones: ConeFlags,
}

#[derive(Clone, Debug)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub scenario: String,
    pub module: &'static str,
    pub check: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultBundle {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub subcommand: Subcommand,
    pub reports: Value,
    /// Wall-clock seconds per stage; excluded from payload comparisons.
    pub timings: BTreeMap<String, f64>,
    pub violations: Vec<String>,
    #[serde(skip)]
    pub files: Vec<OutputFile>,
}

impl ResultBundle {
    fn new(cfg: &ExperimentConfig, seed: u64, subcommand: Subcommand) -> Self {
        Self {
            scenario: cfg.name.clone(),
            config_hash: cfg.hash.clone(),
            seed,
            subcommand,
            reports: json!({}),
            timings: BTreeMap::new(),
            violations: Vec::new(),
            files: Vec::new(),
        }
    }

    fn file(&mut self, name: impl Into<String>, contents: String) {
        self.files.push(OutputFile { name: name.into(), contents });
    }

    /// SHA-256 over reports and emitted files.
    pub fn payload_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.reports.to_string().as_bytes());
        for f in &self.files {
            h.update(f.name.as_bytes());
            h.update([0u8]);
            h.update(f.contents.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for f in &self.files {
            std::fs::write(dir.join(&f.name), &f.contents)?;
        }
        Ok(())
    }

    /// Summary printed on stdout.
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(&self).expect("bundle serializes"),
            Format::Csv => {
                let main = format!("{}.csv", self.subcommand.name());
                self.files.iter().find(|f| f.name == main).map(|f| f.contents.clone()).unwrap_or_default()
            }
        }
    }
}

fn timed<R>(timings: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> Result<R>) -> Result<R> {
    let t = Instant::now();
    let r = f();
    timings.insert(stage.to_string(), t.elapsed().as_secs_f64());
    r
}

fn with_context(cfg: &ExperimentConfig, e: Error) -> Error {
    match e {
        Error::Invalid(m) => Error::Invalid(format!("{}: {m}", cfg.name)),
        Error::Invariant(m) => Error::Invariant(format!("{}: {m}", cfg.name)),
        other => other,
    }
}

pub fn run(cfg: &ExperimentConfig, cmd: Subcommand, opts: &RunOptions) -> Result<ResultBundle> {
    let seed = opts.seed.or(cfg.base.seed).unwrap_or(0);
    let mut bundle = ResultBundle::new(cfg, seed, cmd);
    let seeds = SeedTree::new(seed);
    let format = opts.format.unwrap_or(cfg.outputs.format);
    let r = match cmd {
        Subcommand::Solve => solve_cmd(cfg, &mut bundle, format),
        Subcommand::Escape => escape_cmd(cfg, &mut bundle, format),
        Subcommand::Correlations => correlations_cmd(cfg, &mut bundle, format),
        Subcommand::Cones => cones_cmd(cfg, &mut bundle, &seeds, &opts.cones, format),
        Subcommand::Check => check_cmd(std::slice::from_ref(cfg), &mut bundle, opts.seed),
    };
    r.map_err(|e| with_context(cfg, e))?;
    Ok(bundle)
}

/// `check` over every built-in scenario.
pub fn run_library_check(opts: &RunOptions) -> Result<ResultBundle> {
    let cfgs: Vec<ExperimentConfig> =
        scenario_library().iter().map(|(_, s)| ExperimentConfig::parse(s)).collect::<Result<_>>()?;
    let mut h = Sha256::new();
    for c in &cfgs {
        h.update(c.hash.as_bytes());
    }
    let mut bundle = ResultBundle {
        scenario: "library".into(),
        config_hash: h.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        seed: opts.seed.unwrap_or(0),
        subcommand: Subcommand::Check,
        reports: json!({}),
        timings: BTreeMap::new(),
        violations: Vec::new(),
        files: Vec::new(),
    };
    check_cmd(&cfgs, &mut bundle, opts.seed)?;
    Ok(bundle)
}

pub struct Solved {
    pub sys: RandomSystem<f64>,
    pub closed: SpectralData<f64>,
    pub open: SpectralData<f64>,
}

pub fn solve_system(cfg: &ExperimentConfig, timings: &mut BTreeMap<String, f64>) -> Result<Solved> {
    let sys = timed(timings, "assemble", || cfg.build::<f64>())?;
    let opts = SolverOptions { tol: cfg.solver.tol, max_iter: cfg.solver.max_iter, ..Default::default() };
    let tb = sys.tail_bound();
    let closed = timed(timings, "solve_closed", || rpf::solve(&sys.closed, tb, &opts))?;
    let open = timed(timings, "solve_open", || rpf::solve(&sys.open, tb, &opts))?;
    Ok(Solved { sys, closed, open })
}

fn first_fiber(s: &Solved) -> FiberId {
    s.sys.base().orbit_order()[0]
}

fn csv_of(write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn solve_cmd(cfg: &ExperimentConfig, bundle: &mut ResultBundle, format: Format) -> Result<()> {
    let s = solve_system(cfg, &mut bundle.timings)?;
    emit_solve(cfg, &s, bundle, format)
}

fn emit_solve(cfg: &ExperimentConfig, s: &Solved, bundle: &mut ResultBundle, format: Format) -> Result<()> {
    let mut rows = Vec::new();
    let mut csv = String::from("variant,fiber,lambda,residual,mass\n");
    for data in [&s.closed, &s.open] {
        let variant = format!("{:?}", data.variant).to_lowercase();
        for d in &data.fibers {
            let mass = d.nu.total();
            rows.push(json!({
                "variant": variant,
                "fiber": d.fiber,
                "lambda": d.lambda,
                "residual": d.residual,
                "mass": mass,
                "tail_bound": data.tail_bound,
            }));
            let lambda = d.lambda.map_or("nan".to_string(), |l| format!("{l:e}"));
            writeln!(csv, "{variant},{},{lambda},{:e},{mass:e}", d.fiber, d.residual).expect("string write");
        }
    }
    if cfg.outputs.dump_functions {
        for data in [&s.closed, &s.open] {
            let v = format!("{:?}", data.variant).to_lowercase();
            for d in &data.fibers {
                bundle.file(format!("q_{v}_{}.csv", d.fiber), csv_of(|b| d.q.write_csv(b))?);
                bundle.file(format!("nu_{v}_{}.csv", d.fiber), csv_of(|b| d.nu.write_csv(b))?);
                bundle.file(format!("mu_{v}_{}.csv", d.fiber), csv_of(|b| d.mu.write_csv(b))?);
            }
        }
    }
    if cfg.outputs.dump_matrices {
        for (fam, v) in [(&s.sys.closed, "closed"), (&s.sys.open, "open")] {
            for op in &fam.ops {
                bundle.file(format!("matrix_{v}_{}.csv", op.source), csv_of(|b| op.matrix.write_csv(b))?);
            }
        }
    }
    bundle.reports = json!({ "solve": rows });
    match format {
        Format::Csv => bundle.file("solve.csv", csv),
        Format::Json => bundle.file("solve.json", serde_json::to_string_pretty(&bundle.reports)?),
    }
    Ok(())
}

struct EscapeBundle {
    pressure: open::PressureReport,
    escape: open::EscapeReport,
    ci: open::CondInvMeasure<f64>,
}

fn escape_of(cfg: &ExperimentConfig, s: &Solved) -> Result<EscapeBundle> {
    let pressure = open::expected_pressure(&s.sys, &s.closed, &s.open, 10)?;
    let w0 = first_fiber(s);
    let eo = EscapeOptions { n_max: cfg.solver.escape_depth, exact_depth: cfg.solver.exact_depth };
    let escape = open::escape_rate(&s.sys, &s.closed, &pressure, w0, &eo)?;
    let ci = open::conditionally_invariant(&s.sys, &s.closed, &s.open)?;
    Ok(EscapeBundle { pressure, escape, ci })
}

fn escape_cmd(cfg: &ExperimentConfig, bundle: &mut ResultBundle, format: Format) -> Result<()> {
    let s = solve_system(cfg, &mut bundle.timings)?;
    let e = timed(&mut bundle.timings, "escape", || escape_of(cfg, &s))?;
    bundle.reports = json!({
        "spectral_rate": e.escape.spectral_rate,
        "fitted_rate": e.escape.fitted_rate,
        "discrepancy": e.escape.discrepancy,
        "c_factors": e.ci.c_factors,
        "survival_factors": e.ci.survival_factors,
        "ep_closed": e.pressure.ep_closed,
        "ep_open": e.pressure.ep_open,
        "lower": e.escape.lower,
        "upper": e.escape.upper,
        "truncated": e.escape.truncated,
        "exact_check": e.escape.exact_check,
    });
    let csv = csv_of(|b| e.escape.write_csv(b))?;
    match format {
        Format::Csv => bundle.file("escape.csv", csv),
        Format::Json => {
            bundle.file("escape_sequence.csv", csv);
            bundle.file("escape.json", serde_json::to_string_pretty(&bundle.reports)?);
        }
    }
    Ok(())
}

pub fn correlations_of(s: &Solved, depth: usize) -> Result<(rpf::CorrelationSeries, rpf::ConvergenceSeries)> {
    let w0 = first_fiber(s);
    let depth = depth.min(s.sys.base().forward_room(w0));
    let lambdas = s.open.lambdas();
    let norm = fully_normalized(&s.sys.open, &lambdas, &s.open.qs())?;
    let x = |t: f64| t;
    let corr = rpf::correlation_series(&norm, &s.open, w0, &x, &x, depth)?;
    let conv = rpf::convergence_series(&s.sys.open, &s.open, w0, s.sys.open.unit(w0), depth)?;
    Ok((corr, conv))
}

fn correlations_cmd(cfg: &ExperimentConfig, bundle: &mut ResultBundle, format: Format) -> Result<()> {
    let s = solve_system(cfg, &mut bundle.timings)?;
    let (corr, conv) = timed(&mut bundle.timings, "correlations", || correlations_of(&s, cfg.solver.correlation_depth))?;
    let mut csv = String::from("n,correlation,convergence\n");
    for (n, (c, v)) in corr.values.iter().zip(&conv.values).enumerate() {
        writeln!(csv, "{n},{c:e},{v:e}").expect("string write");
    }
    bundle.reports = json!({
        "fiber": corr.fiber,
        "kappa": corr.kappa,
        "prefactor": corr.prefactor,
        "iota": conv.iota,
    });
    match format {
        Format::Csv => bundle.file("correlations.csv", csv),
        Format::Json => {
            bundle.file("correlation_series.csv", csv);
            bundle.file("correlations.json", serde_json::to_string_pretty(&bundle.reports)?);
        }
    }
    Ok(())
}

pub fn cone_options(cfg: &ExperimentConfig, flags: &ConeFlags) -> ConeOptions {
    let sv = &cfg.solver;
    ConeOptions {
        depth: flags.depth.unwrap_or(sv.functional_depth),
        samples: flags.samples.unwrap_or(sv.samples),
        pair_samples: flags.samples.unwrap_or(sv.samples).min(16),
        epsilon: flags.epsilon.unwrap_or(sv.epsilon),
        u: flags.u.unwrap_or(sv.u),
        v: flags.v.unwrap_or(sv.v),
        a: flags.a.or(sv.a),
        iterates: sv.iterates,
        ..ConeOptions::default()
    }
}

pub struct ConeRun {
    pub analysis: ConeAnalysis,
    pub contraction: cones::ContractionReport,
    pub bounds: cones::BoundChecks,
}

pub fn cone_run(cfg: &ExperimentConfig, sys: &RandomSystem<f64>, opts: &ConeOptions, seeds: &SeedTree) -> Result<ConeRun> {
    opts.validate()?;
    let est = cones::estimators(&sys.open, opts.depth)?;
    let analysis = cones::analyze(sys, &est, &cfg.solver.ly_levels, opts, seeds)?;
    let w0 = sys.base().orbit_order()[0];
    let contraction = cones::contraction_diagnostics(sys, &est, &analysis, w0, seeds)?;
    let bounds = cones::bound_checks(sys, &est, &analysis, w0, seeds)?;
    Ok(ConeRun { analysis, contraction, bounds })
}

fn cones_cmd(
    cfg: &ExperimentConfig,
    bundle: &mut ResultBundle,
    seeds: &SeedTree,
    flags: &ConeFlags,
    format: Format,
) -> Result<()> {
    let sys = timed(&mut bundle.timings, "assemble", || cfg.build::<f64>())?;
    let opts = cone_options(cfg, flags);
    let r = timed(&mut bundle.timings, "cones", || cone_run(cfg, &sys, &opts, seeds))?;
    let mut csv = String::from("n,hilbert_distance\n");
    for (n, d) in r.contraction.series.iter().enumerate() {
        writeln!(csv, "{n},{d:e}").expect("string write");
    }
    let mut pairs = String::from("pair,pre,post\n");
    for (i, (a, b)) in r.contraction.pre.iter().zip(&r.contraction.post).enumerate() {
        writeln!(pairs, "{i},{a:e},{b:e}").expect("string write");
    }
    let c = &r.contraction;
    bundle.reports = json!({
        "options": r.analysis.options,
        "rho": r.analysis.rho,
        "levels": r.analysis.levels,
        "constants": r.analysis.constants.as_ref().map(|k| json!({
            "nc": k.nc, "xi": k.xi, "zeta": k.zeta, "log_b": k.log_b, "q": k.q, "q_a": k.q_a,
            "r": k.r, "cond1": k.cond1, "log_a_tilde": k.log_a_tilde, "log_a0": k.log_a0,
        })),
        "fibers": r.analysis.fibers,
        "rates": r.analysis.rates,
        "ly": r.analysis.ly,
        "contraction": {
            "fiber": c.fiber, "block": c.block, "log_a": c.log_a, "delta_est": c.delta_est,
            "birkhoff_factor": c.birkhoff_factor, "worst_ratio": c.worst_ratio, "birkhoff_ok": c.birkhoff_ok,
            "escapes": c.escapes, "fitted_d": c.fitted_d, "first_below": c.first_below,
            "norm_violations": c.norm_violations,
        },
        "bounds": r.bounds,
        "warnings": r.analysis.warnings,
    });
    bundle.file("cones.csv", csv);
    bundle.file("cone_pairs.csv", pairs);
    if format == Format::Json {
        bundle.file("cones.json", serde_json::to_string_pretty(&bundle.reports)?);
    }
    Ok(())
}

fn check_cmd(cfgs: &[ExperimentConfig], bundle: &mut ResultBundle, seed: Option<u64>) -> Result<()> {
    let results: Vec<(Vec<CheckRow>, BTreeMap<String, f64>)> = cfgs
        .par_iter()
        .map(|cfg| {
            let mut timings = BTreeMap::new();
            let rows = match check_scenario(cfg, seed, &mut timings) {
                Ok(rows) => rows,
                Err(e) => vec![CheckRow {
                    scenario: cfg.name.clone(),
                    module: "cli_harness",
                    check: format!("pipeline error: {e}"),
                    value: f64::NAN,
                    tolerance: 0.0,
                    passed: false,
                }],
            };
            (rows, timings)
        })
        .collect();
    let mut csv = String::from("scenario,module,check,value,tolerance,passed\n");
    let mut all = Vec::new();
    for (cfg, (rows, timings)) in cfgs.iter().zip(results) {
        for (k, v) in timings {
            bundle.timings.insert(format!("{}/{k}", cfg.name), v);
        }
        for r in rows {
            writeln!(csv, "{},{},{},{:e},{:e},{}", r.scenario, r.module, r.check, r.value, r.tolerance, r.passed)
                .expect("string write");
            if !r.passed {
                bundle.violations.push(format!("{}: {} {} = {:e} (tolerance {:e})", r.scenario, r.module, r.check, r.value, r.tolerance));
            }
            all.push(r);
        }
    }
    bundle.reports = json!({ "checks": all.len(), "failed": bundle.violations.len() });
    bundle.file("check.csv", csv);
    Ok(())
}

struct Rows<'a> {
    scenario: &'a str,
    rows: Vec<CheckRow>,
}

impl Rows<'_> {
    /// Passes when value ≤ tolerance.
    fn at_most(&mut self, module: &'static str, check: impl Into<String>, value: f64, tolerance: f64) {
        self.rows.push(CheckRow {
            scenario: self.scenario.to_string(),
            module,
            check: check.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        });
    }

    fn holds(&mut self, module: &'static str, check: impl Into<String>, ok: bool) {
        self.rows.push(CheckRow {
            scenario: self.scenario.to_string(),
            module,
            check: check.into(),
            value: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            passed: ok,
        });
    }

    fn report(&mut self, module: &'static str, check: impl Into<String>, value: f64) {
        self.rows.push(CheckRow {
            scenario: self.scenario.to_string(),
            module,
            check: check.into(),
            value,
            tolerance: f64::INFINITY,
            passed: true,
        });
    }

    fn count(&mut self, module: &'static str, check: impl Into<String>, violations: usize) {
        self.at_most(module, check, violations as f64, 0.0);
    }
}

/// Tⁿ_ω(x), or `None` once x leaves the branch domains.
fn iterate_map(sys: &RandomSystem<f64>, omega: FiberId, x: f64, n: usize) -> Option<f64> {
    let (mut w, mut y) = (omega, x);
    for _ in 0..n {
        let map = &sys.phase.maps[w];
        let i = map.branch_index_at(y)?;
        y = map.branches[i].eval(y);
        w = sys.base().next(w).ok()?;
    }
    Some(y)
}

fn has_tail(sys: &RandomSystem<f64>) -> bool {
    sys.phase.maps.iter().any(|m| m.tail_bound > 0.0)
}

/// Runs every module invariant on one scenario.
pub fn check_scenario(
    cfg: &ExperimentConfig,
    seed: Option<u64>,
    timings: &mut BTreeMap<String, f64>,
) -> Result<Vec<CheckRow>> {
    let seeds = cfg.seeds(seed);
    let markov = is_markov(cfg);
    let window = matches!(cfg.base_system()?.kind(), BaseKind::OrbitWindow { .. });
    let identity_tol = if markov { cfg.solver.identity_tol } else { cfg.solver.identity_tol.max(5e-3) };
    let mut out = Rows { scenario: &cfg.name, rows: Vec::new() };
    let s = solve_system(cfg, timings)?;
    let sys = &s.sys;
    let base = sys.base();
    let p = base.size();
    let w0 = first_fiber(&s);
    let samples = cfg.solver.samples.max(4);
    let tail = has_tail(sys);

    let mut lap = Instant::now();
    // base_system
    let mut bad = 0;
    for w in 0..p {
        for n in -3i64..=3 {
            for m in -3i64..=3 {
                if let (Ok(a), Ok(direct)) = (base.advance(w, n), base.advance(w, n + m)) {
                    if let Ok(b) = base.advance(a, m) {
                        bad += usize::from(b != direct);
                    }
                }
            }
        }
    }
    out.count("base_system", "advance composition", bad);
    {
        use rand::RngExt;
        let mut rng = seeds.stream("cli_harness", "birkhoff", 0);
        let a: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + 2.5 * y).collect();
        let lhs = base.birkhoff_average(&c)?;
        let rhs = base.birkhoff_average(&a)? + 2.5 * base.birkhoff_average(&b)?;
        out.at_most("base_system", "birkhoff linearity", (lhs - rhs).abs(), 1e-12);
    }

    // phase_space
    let geo_depth = if tail { 1 } else { 3 };
    let mut bad = 0;
    for w in 0..p {
        for n in 1..=geo_depth.min(base.forward_room(w)) {
            let pts = sys.phase.refine_partition(w, n)?;
            for c in pts.windows(2) {
                let ys: Vec<f64> = (0..8)
                    .filter_map(|k| iterate_map(sys, w, c[0] + (c[1] - c[0]) * (k as f64 + 0.5) / 8.0, n))
                    .collect();
                if ys.len() < 8 {
                    continue;
                }
                let up = ys.windows(2).all(|y| y[1] > y[0]);
                let down = ys.windows(2).all(|y| y[1] < y[0]);
                bad += usize::from(!(up || down));
            }
        }
    }
    out.count("phase_space", "partition cells injective", bad);
    let mut bad = 0;
    let sv_depth = if tail { 1 } else { cfg.solver.ci_depth.max(3) };
    for w in 0..p {
        let room = sv_depth.min(base.forward_room(w));
        let mut prev = sys.phase.survivor_set(w, 0)?;
        for n in 1..=room {
            let next = sys.phase.survivor_set(w, n)?;
            bad += usize::from(!next.is_subset_of(&prev));
            prev = next;
        }
    }
    out.count("phase_space", "survivor sets nested", bad);
    let mut bad = 0;
    for w in 0..p {
        let Ok(mut prev) = sys.open.support_set(w, 1) else { continue };
        for j in 2..=6 {
            let Ok(next) = sys.open.support_set(w, j) else { break };
            bad += next.iter().zip(&prev).filter(|(n, p)| **n && !**p).count();
            prev = next;
        }
    }
    out.count("phase_space", "support sets descending", bad);

    timings.insert("checks_geometry".into(), lap.elapsed().as_secs_f64());
    lap = Instant::now();
    // bv_function
    let grid = sys.grids[w0].clone();
    let fs: Vec<GridFunction<f64>> = (0..samples)
        .map(|i| random_step(grid.clone(), &mut seeds.stream("cli_harness", "bv", i as u64), 12, -1.0, 1.0))
        .collect();
    let (mut sub, mut hom, mut bil, mut bound, mut pw) = (0.0f64, 0.0f64, 0.0f64, 0usize, 0.0f64);
    for (i, f) in fs.iter().enumerate() {
        let g = &fs[(i + 1) % fs.len()];
        let sum = f.zip_with(g, |a, b| a + b);
        sub = sub.max(sum.variation() - f.variation() - g.variation());
        hom = hom.max((f.scale(-3.0).variation() - 3.0 * f.variation()).abs());
        for d in [&s.closed.fibers[w0], &s.open.fibers[w0]] {
            let lin = integrate(&f.zip_with(g, |a, b| 2.0 * a - b), &d.nu);
            bil = bil.max((lin - 2.0 * integrate(f, &d.nu) + integrate(g, &d.nu)).abs());
            bound += usize::from(integrate(f, &d.nu).abs() > f.sup_norm() * d.nu.total() * (1.0 + 1e-12));
            let fa = f.abs();
            let v = fa.variation() + integrate(&fa, &d.nu);
            pw = pw.max(fa.max() - v);
        }
    }
    out.at_most("bv_function", "variation subadditive", sub, 1e-12);
    out.at_most("bv_function", "variation homogeneous", hom, 1e-12);
    out.at_most("bv_function", "integrate bilinear", bil, 1e-12);
    out.count("bv_function", "integrate bounded by sup norm", bound);
    out.at_most("bv_function", "pointwise bound by var plus nu", pw, 1e-12);

    // transfer_op
    let pos: Vec<GridFunction<f64>> = fs.iter().map(|f| f.abs()).collect();
    let mut neg = 0;
    for w in 0..p {
        if !sys.open.has_op(w) {
            continue;
        }
        for f in pos.iter().take(8) {
            let f = f.on_grid(&sys.grids[w]);
            for fam in [&sys.closed, &sys.open] {
                neg += fam.apply(w, &f)?.values.iter().filter(|v| **v < 0.0).count();
            }
        }
    }
    out.count("transfer_op", "positivity", neg);
    let mut bad = 0;
    let mut one_open = sys.open.unit(w0).clone();
    let mut one_closed = GridFunction::constant(grid.clone(), 1.0);
    let mut w = w0;
    for _ in 1..=6.min(base.forward_room(w0)) {
        one_open = sys.open.apply(w, &one_open)?;
        one_closed = sys.closed.apply(w, &one_closed)?;
        w = base.next(w)?;
        let supp = support_of(&one_open.values);
        let inf = one_open.values.iter().zip(&supp).filter(|x| *x.1).map(|x| *x.0).fold(f64::INFINITY, f64::min);
        let (so, sc) = (one_open.sup_norm(), one_closed.sup_norm());
        bad += usize::from(!(inf <= so * (1.0 + 1e-12) && so <= sc * (1.0 + 1e-12)));
    }
    out.count("transfer_op", "inf, open sup, closed sup ordered", bad);
    let dual_depth = if tail { 1 } else { 4 };
    let duality = open::verify_duality(sys, &s.closed, w0, dual_depth, &pos[..4])?;
    out.at_most("transfer_op", "duality identity", duality, identity_tol);

    timings.insert("checks_bv_transfer".into(), lap.elapsed().as_secs_f64());
    lap = Instant::now();
    // rpf_solver
    let eig_tol = if markov { 1e-10 } else { identity_tol };
    out.at_most("rpf_solver", "closed eigen residual", s.closed.max_residual(), eig_tol);
    out.at_most("rpf_solver", "open eigen residual", s.open.max_residual(), eig_tol);
    let lambdas = s.open.lambdas();
    let norm = fully_normalized(&sys.open, &lambdas, &s.open.qs())?;
    let (mut fixed, mut unit, mut dual) = (0.0f64, 0.0f64, 0.0f64);
    for w in 0..p {
        let Some(l) = s.open.fibers[w].lambda else { continue };
        if !sys.open.has_op(w) {
            continue;
        }
        let t = base.next(w)?;
        let q = &s.open.fibers[w].q;
        let lq = sys.open.apply(w, q)?.scale(1.0 / l);
        let qt = &s.open.fibers[t].q;
        fixed = fixed.max(lq.zip_with(qt, |a, b| a - b).sup_norm() / qt.sup_norm());
        let hat = norm.apply(w, &GridFunction::constant(sys.grids[w].clone(), 1.0))?;
        let supp = support_of(&qt.values);
        unit = unit.max(hat.values.iter().zip(&supp).filter(|x| *x.1).map(|x| (x.0 - 1.0).abs()).fold(0.0, f64::max));
        let back = sys.open.apply_transpose(w, &s.open.fibers[t].nu)?;
        let d: f64 = back.masses.iter().zip(&s.open.fibers[w].nu.masses).map(|(a, b)| (a / l - b).abs()).sum();
        dual = dual.max(d);
    }
    out.at_most("rpf_solver", "normalized q fixed point", fixed, eig_tol);
    out.at_most("rpf_solver", "hat operator fixes 1", unit, eig_tol.max(1e-10));
    out.at_most("rpf_solver", "nu transpose invariance", dual, identity_tol);
    let conv = rpf::convergence_series(&sys.open, &s.open, w0, sys.open.unit(w0), 30.min(base.forward_room(w0)))?;
    out.at_most("rpf_solver", "convergence rate iota", conv.iota.unwrap_or(0.0), 1.0 - 1e-12);
    for (name, data) in [("closed", &s.closed), ("open", &s.open)] {
        let fam = if name == "closed" { &sys.closed } else { &sys.open };
        let tests: Vec<Vec<GridFunction<f64>>> = (0..p)
            .map(|w| {
                (0..samples)
                    .map(|i| {
                        let mut rng = seeds.stream("cli_harness", &format!("equivariance/{name}/{w}"), i as u64);
                        random_step(sys.grids[w].clone(), &mut rng, 10, -1.0, 1.0)
                    })
                    .collect()
            })
            .collect();
        let eq = rpf::verify_equivariance(fam, data, &tests)?;
        out.at_most("rpf_solver", format!("{name} equivariance"), eq.equivariance, identity_tol);
        out.at_most("rpf_solver", format!("{name} T-invariance"), eq.t_invariance, identity_tol);
        let conf = rpf::verify_conformality(sys, data, cfg.solver.conformality_depth)?;
        out.at_most("rpf_solver", format!("{name} conformality"), conf.max_residual, identity_tol);
    }

    timings.insert("checks_rpf".into(), lap.elapsed().as_secs_f64());
    lap = Instant::now();
    // cone_metric, with F compared against the solver's ν
    let opts = cone_options(cfg, &ConeFlags::default());
    let t = Instant::now();
    let cr = cone_run(cfg, sys, &opts, &seeds)?;
    timings.insert("cones".into(), t.elapsed().as_secs_f64());
    let est = cones::estimators(&sys.open, opts.depth)?;
    let f_tol = if markov { 1e-6 } else { 5e-3 };
    let (mut fnu, mut flam) = (0.0f64, 0.0f64);
    let lam0 = s.open.lambda(w0)?;
    for f in pos.iter().take(16) {
        let fv = est[w0].value(f)?;
        fnu = fnu.max((fv - integrate(f, &s.open.fibers[w0].nu)).abs());
        let lf = est[base.next(w0)?].value(&sys.open.apply(w0, f)?)?;
        flam = flam.max((lf - lam0 * fv).abs());
    }
    out.at_most("rpf_solver", "functional equals nu", fnu, f_tol);
    out.at_most("rpf_solver", "functional equivariance", flam, f_tol);
    let rho_excess = cr
        .analysis
        .rho
        .iter()
        .zip(&lambdas)
        .filter(|(r, l)| !r.is_nan() && !l.is_nan())
        .map(|(r, l)| r - l)
        .fold(f64::NEG_INFINITY, f64::max);
    out.at_most("rpf_solver", "rho at most lambda", rho_excess, 1e-8);

    let lm = &cr.bounds;
    out.count("cone_metric", "functional sequence monotone and bracketed", lm.functional_violations);
    out.count("cone_metric", "rho chain lower bound", lm.chain_violations);
    out.count("cone_metric", "theta bound for c = 1/2", lm.bound_violations);
    out.count("cone_metric", "block functional bound", lm.block_violations);
    out.count("cone_metric", "cell functional below weight ratio", lm.cell_bound_violations);
    out.count("cone_metric", "good cell carries half the functional", lm.lower_bound_violations);
    out.report("cone_metric", "first level with small cells", lm.first_small_cells.map_or(f64::NAN, |n| n as f64));
    let ly_viol: usize = cr.analysis.ly.iter().map(|l| l.violations).sum();
    out.count("cone_metric", "lasota-yorke constructive bound", ly_viol);
    let ly_worst = cr.analysis.ly.iter().map(|l| l.worst_ratio).fold(0.0, f64::max);
    out.at_most("cone_metric", "empirical over constructive", ly_worst, 1.0 + 1e-9);
    let margin = cr
        .analysis
        .rates
        .iter()
        .map(|r| r.log_g_rate + r.log_eta_rate - r.log_inf_rate)
        .fold(f64::NEG_INFINITY, f64::max);
    match cfg.solver.expect_contracting {
        Some(expect) => out.holds(
            "cone_metric",
            format!("open contracting condition is {expect} (worst margin {margin:.6})"),
            cr.analysis.all_contracting() == expect,
        ),
        None => out.report("cone_metric", "open contracting margin", margin),
    }
    let c = &cr.contraction;
    out.holds("cone_metric", "birkhoff contraction on sampled pairs", c.birkhoff_ok);
    out.count("cone_metric", "sup-norm bound from hilbert distance", c.norm_violations);

    timings.insert("checks_cones".into(), lap.elapsed().as_secs_f64());
    lap = Instant::now();
    // open_analysis
    let e = escape_of(cfg, &s)?;
    let esc_tol = if markov {
        1e-6
    } else {
        5e-3
    };
    if window {
        out.report("open_analysis", "escape direct vs spectral", e.escape.discrepancy);
    } else {
        out.at_most("open_analysis", "escape direct vs spectral", e.escape.discrepancy, esc_tol);
    }
    // spectral rate inside the tail-half range of local and running rates
    let sr = e.escape.spectral_rate;
    let slack = 1e-9 * (1.0 + sr.abs());
    let gap = (e.escape.lower - sr).max(sr - e.escape.upper).max(0.0);
    if window {
        out.report("open_analysis", "spectral rate bracketed by tail rates", gap);
    } else {
        out.at_most("open_analysis", "spectral rate bracketed by tail rates", gap, slack);
    }
    let ci_tol = if markov { 1e-8 } else { 5e-3 };
    let ci = open::verify_conditional_invariance(sys, &e.ci, cfg.solver.ci_depth, cfg.solver.ci_sets)?;
    out.at_most("open_analysis", "conditional invariance", ci.max_residual, ci_tol);
    out.at_most("open_analysis", "survivor mass multiplicativity", ci.multiplicativity, ci_tol);
    out.at_most("open_analysis", "survivor mass product rule", ci.product_rule, ci_tol);
    let ci_eig = e.ci.eigen_residuals.iter().copied().filter(|x| !x.is_nan()).fold(0.0, f64::max);
    out.at_most("open_analysis", "conditional eigen residual on J", ci_eig, eig_tol.max(1e-10));

    timings.insert("checks_open".into(), lap.elapsed().as_secs_f64());
    lap = Instant::now();
    // cli_harness: an independent rerun emits identical solve output
    let mut a = ResultBundle::new(cfg, seed.or(cfg.base.seed).unwrap_or(0), Subcommand::Solve);
    emit_solve(cfg, &s, &mut a, Format::Csv)?;
    let b = run(cfg, Subcommand::Solve, &RunOptions { seed, format: Some(Format::Csv), ..Default::default() })?;
    out.holds("cli_harness", "solve output deterministic", a.payload_hash() == b.payload_hash());
    timings.insert("checks_determinism".into(), lap.elapsed().as_secs_f64());
    Ok(out.rows)
}
