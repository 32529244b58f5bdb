//! Acceptance criteria, one line per criterion.

use std::collections::BTreeMap;
use std::time::Instant;

use randopen::bv::{random_step, GridFunction};
use randopen::cones::{self, classify_cells, estimators, measure_ly_coefficients};
use randopen::config::{ExperimentConfig, Format};
use randopen::harness::{self, cone_options, cone_run, correlations_of, solve_system, ConeFlags, RunOptions, Solved};
use randopen::open::{self, EscapeOptions};
use randopen::rpf;
use randopen::scenarios::{is_markov, scenario, scenario_library};

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn solved(name: &str) -> (ExperimentConfig, Solved) {
    let cfg = scenario(name).unwrap();
    let s = solve_system(&cfg, &mut BTreeMap::new()).unwrap();
    (cfg, s)
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c1_closed_doubling() -> Outcome {
    let (_, s) = solved("doubling_closed");
    let d = &s.closed.fibers[0];
    let lam = (d.lambda.unwrap() - 1.0).abs();
    let q = d.q.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let g = &d.nu.grid;
    let leb: Vec<f64> = (0..g.cells()).map(|i| g.cell(i).1 - g.cell(i).0).collect();
    let nu = sup_dist(&d.nu.masses, &leb);
    (lam <= 1e-12 && q <= 1e-10 && nu <= 1e-10, format!("|λ-1| = {lam:.2e}, |q-1| = {q:.2e}, |ν-Leb| = {nu:.2e}"))
}

fn escape_report(cfg: &ExperimentConfig, s: &Solved, n_max: usize) -> open::EscapeReport {
    let p = open::expected_pressure(&s.sys, &s.closed, &s.open, 10).unwrap();
    let w0 = s.sys.base().orbit_order()[0];
    open::escape_rate(&s.sys, &s.closed, &p, w0, &EscapeOptions { n_max, exact_depth: cfg.solver.exact_depth })
        .unwrap()
}

fn c2_half_hole() -> Outcome {
    let (cfg, s) = solved("doubling_hole_half");
    let lam = (s.open.lambda(0).unwrap() - 0.5).abs();
    let e = escape_report(&cfg, &s, 20);
    let ln2 = std::f64::consts::LN_2;
    let fit = (e.fitted_rate - ln2).abs();
    let spec = (e.spectral_rate - ln2).abs();
    let ci = open::conditionally_invariant(&s.sys, &s.closed, &s.open).unwrap();
    let c = (ci.c_factors[0] - 0.5).abs();
    (
        lam <= 1e-12 && fit <= 1e-9 && spec <= 1e-12 && c <= 1e-12,
        format!("|λ-1/2| = {lam:.2e}, fitted rate err = {fit:.2e}, spectral err = {spec:.2e}, |c-1/2| = {c:.2e}"),
    )
}

/// Leading eigenvalue of the cylinder matrix on (hole, [1/4,1/2), [1/2,1)) by plain power iteration.
fn cylinder_oracle() -> f64 {
    let m = [[0.0, 0.0, 0.5], [0.0, 0.0, 0.5], [0.0, 0.5, 0.5]];
    let mut v = [1.0f64; 3];
    let mut lam = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..3).map(|i| (0..3).map(|j| m[i][j] * v[j]).sum()).collect();
        lam = w.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for i in 0..3 {
            v[i] = w[i] / lam;
        }
    }
    lam
}

fn c3_quarter_hole() -> Outcome {
    let oracle = cylinder_oracle();
    let closed_form = (1.0 + 5f64.sqrt()) / 4.0;
    let (cfg, s) = solved("doubling_hole_q1");
    let lam = (s.open.lambda(0).unwrap() - oracle).abs();
    let e = escape_report(&cfg, &s, cfg.solver.escape_depth);
    let rate = (e.spectral_rate + oracle.ln()).abs();
    (
        (oracle - closed_form).abs() < 1e-14 && lam <= 1e-9 && rate <= 1e-9 && e.discrepancy <= 1e-6,
        format!(
            "oracle λ = {oracle:.15}, |λ-oracle| = {lam:.2e}, rate = {:.6}, discrepancy = {:.2e}",
            e.spectral_rate, e.discrepancy
        ),
    )
}

/// q*(x) = 1/((1+x) ln 2) solves Σ_k (k+x)^{-2} q*(1/(k+x)) = q*(x).
fn gauss_density(x: f64) -> f64 {
    1.0 / ((1.0 + x) * std::f64::consts::LN_2)
}

fn gauss_oracle_residual() -> f64 {
    let mut worst = 0.0f64;
    for i in 0..=20 {
        let x = i as f64 / 20.0;
        let k_max = 200_000;
        let mut sum = 0.0;
        for k in (1..=k_max).rev() {
            let y = k as f64 + x;
            sum += gauss_density(1.0 / y) / (y * y);
        }
        // remainder Σ_{k>K} (k+x)^{-2} q*(~0) ≈ q*(0)/(K+x+1/2)
        sum += gauss_density(0.0) / (k_max as f64 + x + 0.5);
        worst = worst.max((sum - gauss_density(x)).abs());
    }
    worst
}

fn c4_gauss_closed() -> Outcome {
    let oracle = gauss_oracle_residual();
    let (_, s) = solved("gauss_closed");
    let d = &s.closed.fibers[0];
    let lam = (d.lambda.unwrap() - 1.0).abs();
    let g = &d.q.grid;
    let mass: f64 = (0..g.cells()).map(|i| d.q.values[i] * (g.cell(i).1 - g.cell(i).0)).sum();
    // cell averages of q*: ∫ q* = log2(1+x)
    let star: Vec<f64> = (0..g.cells())
        .map(|i| {
            let (a, b) = g.cell(i);
            ((1.0 + b).log2() - (1.0 + a).log2()) / (b - a)
        })
        .collect();
    let q: Vec<f64> = d.q.values.iter().map(|v| v / mass).collect();
    let dist = sup_dist(&q, &star);
    (
        oracle <= 1e-9 && lam <= 1e-4 && dist <= 1e-2,
        format!("oracle residual = {oracle:.2e}, |λ-1| = {lam:.2e}, sup|q-q*| = {dist:.2e}"),
    )
}

fn c5_random_cocycle() -> Outcome {
    let (cfg, s) = solved("rand2_mixed");
    let p = open::expected_pressure(&s.sys, &s.closed, &s.open, 10).unwrap();
    let e = escape_report(&cfg, &s, cfg.solver.escape_depth);
    let ci = open::conditionally_invariant(&s.sys, &s.closed, &s.open).unwrap();
    let target = 0.5 * (2.0f64 / 3.0).ln();
    let epc = p.ep_closed.abs();
    let epo = (p.ep_open - target).abs();
    let rate = (e.spectral_rate + target).abs();
    let c = (ci.c_factors[0] - 1.0).abs().max((ci.c_factors[1] - 2.0 / 3.0).abs());
    (
        epc <= 1e-12 && epo <= 1e-10 && e.discrepancy <= 1e-8 && rate <= 1e-10 && c <= 1e-12,
        format!(
            "|EP_c| = {epc:.2e}, |EP_o - log(2/3)/2| = {epo:.2e}, discrepancy = {:.2e}, c error = {c:.2e}",
            e.discrepancy
        ),
    )
}

fn c6_rpf_identities() -> Outcome {
    let mut worst_ratio = 0.0f64;
    let mut detail = Vec::new();
    for (name, _) in scenario_library() {
        let (cfg, s) = solved(name);
        let tol = if is_markov(&cfg) { 1e-8 } else { 5e-3 };
        let seeds = cfg.seeds(None);
        let p = s.sys.base().size();
        let mut worst = 0.0f64;
        for (fam, data, label) in [(&s.sys.closed, &s.closed, "closed"), (&s.sys.open, &s.open, "open")] {
            let tests: Vec<Vec<GridFunction<f64>>> = (0..p)
                .map(|w| {
                    (0..100)
                        .map(|i| {
                            let mut rng = seeds.stream("acceptance", &format!("rpf/{label}/{w}"), i);
                            random_step(s.sys.grids[w].clone(), &mut rng, 10, -1.0, 1.0)
                        })
                        .collect()
                })
                .collect();
            let eq = rpf::verify_equivariance(fam, data, &tests).unwrap();
            let conf = rpf::verify_conformality(&s.sys, data, cfg.solver.conformality_depth).unwrap();
            worst = worst.max(eq.equivariance).max(eq.t_invariance).max(data.max_residual()).max(conf.max_residual);
        }
        worst_ratio = worst_ratio.max(worst / tol);
        detail.push(format!("{name} {worst:.1e}"));
    }
    (worst_ratio <= 1.0, format!("worst residual per scenario: {}", detail.join(", ")))
}

fn c7_lasota_yorke() -> Outcome {
    let mut checked = 0;
    let mut violations = 0;
    let mut worst = 0.0f64;
    for (name, _) in scenario_library() {
        let cfg = scenario(name).unwrap();
        let sys = cfg.build::<f64>().unwrap();
        let seeds = cfg.seeds(None);
        let opts = cone_options(&cfg, &ConeFlags::default());
        let est = estimators(&sys.open, opts.depth).unwrap();
        let rho = cones::rho(&sys.open, &est).unwrap();
        let levels: &[usize] = if is_markov(&cfg) { &[1, 2, 4] } else { &[1] };
        let base = sys.base();
        for w in base.orbit_order().into_iter().take(4) {
            for &n in levels {
                if est[w].depth <= n || base.forward_room(w) < n {
                    continue;
                }
                let c = classify_cells(&sys, &est[w], w, n).unwrap();
                let ly = measure_ly_coefficients(&sys, &est, &rho, &c, 100, &seeds).unwrap();
                checked += ly.samples;
                violations += ly.violations;
                worst = worst.max(ly.worst_ratio);
            }
        }
    }
    (violations == 0, format!("{checked} samples, {violations} violations, worst empirical/constructive = {worst:.3}"))
}

fn c8_cone_contraction() -> Outcome {
    let cfg = scenario("doubling_hole_q1").unwrap();
    let sys = cfg.build::<f64>().unwrap();
    let opts = cone_options(&cfg, &ConeFlags::default());
    let r = cone_run(&cfg, &sys, &opts, &cfg.seeds(None)).unwrap();
    let c = &r.contraction;
    let d = c.fitted_d.unwrap_or(f64::NAN);
    let below = c.first_below.is_some_and(|n| n <= 30);
    (
        c.birkhoff_ok && below && d < 1.0,
        format!(
            "worst post/pre = {:.3} vs tanh(Δ/4)+0.05 = {:.3}, first iterate below 1e-8 = {:?}, D = {d:.4}",
            c.worst_ratio,
            c.birkhoff_factor + 0.05,
            c.first_below
        ),
    )
}

fn c9_correlations() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, _) in scenario_library() {
        let cfg = scenario(name).unwrap();
        if cfg.solver.expect_contracting != Some(true) {
            continue;
        }
        let s = solve_system(&cfg, &mut BTreeMap::new()).unwrap();
        let (corr, _) = correlations_of(&s, cfg.solver.correlation_depth).unwrap();
        let kappa = corr.kappa.unwrap_or(f64::NAN);
        let bound = if *name == "doubling_closed" { 0.51 } else { 1.0 };
        ok &= kappa <= bound;
        detail.push(format!("{name} κ = {kappa:.4}"));
    }
    (ok, detail.join(", "))
}

fn c10_conditional_invariance() -> Outcome {
    let mut worst = 0.0f64;
    let mut tests = 0;
    for (name, _) in scenario_library() {
        let (cfg, s) = solved(name);
        if !is_markov(&cfg) {
            continue;
        }
        let ci = open::conditionally_invariant(&s.sys, &s.closed, &s.open).unwrap();
        let r = open::verify_conditional_invariance(&s.sys, &ci, 6, 256).unwrap();
        worst = worst.max(r.max_residual).max(r.multiplicativity);
        tests += r.tests;
    }
    (worst <= 1e-8, format!("{tests} tests, worst residual = {worst:.2e}"))
}

fn gauss_lambda(k: u64) -> (f64, f64) {
    let text = format!(
        "[base]\nname = gauss_{k}\nkind = cycle\nsize = 1\n\n[map.0]\nfamily = gauss {k}\ntail = drop\n\n\
         [discretization]\ncells = 4096\ndepth = 1\n\n[solver]\nsamples = 0\n"
    );
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let s = solve_system(&cfg, &mut BTreeMap::new()).unwrap();
    (s.closed.lambda(0).unwrap(), s.sys.tail_bound())
}

fn c11_truncation() -> Outcome {
    let levels: Vec<(u64, f64, f64)> = [16, 32, 64].into_iter().map(|k| (k, gauss_lambda(k).0, gauss_lambda(k).1)).collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for w in levels.windows(2) {
        let change = (w[1].1 - w[0].1).abs();
        ok &= change < w[0].2;
        detail.push(format!("K {}→{}: Δλ = {change:.3e} < tail {:.3e}", w[0].0, w[1].0, w[0].2));
    }
    (ok, detail.join(", "))
}

fn c12_determinism() -> Outcome {
    let opts = RunOptions { format: Some(Format::Csv), ..Default::default() };
    let a = harness::run_library_check(&opts).unwrap();
    let b = harness::run_library_check(&opts).unwrap();
    let csv = |r: &harness::ResultBundle| r.files.iter().find(|f| f.name == "check.csv").unwrap().contents.clone();
    let (x, y) = (csv(&a), csv(&b));
    (
        x == y && a.violations.is_empty(),
        format!("{} rows, identical = {}, violations = {}", x.lines().count() - 1, x == y, a.violations.len()),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("closed doubling eigendata", c1_closed_doubling),
        ("doubling with hole [1/2,1)", c2_half_hole),
        ("doubling with hole [0,1/4)", c3_quarter_hole),
        ("closed Gauss map", c4_gauss_closed),
        ("period-2 random cocycle", c5_random_cocycle),
        ("RPF identities", c6_rpf_identities),
        ("Lasota-Yorke bound", c7_lasota_yorke),
        ("cone contraction", c8_cone_contraction),
        ("decay of correlations", c9_correlations),
        ("conditional invariance", c10_conditional_invariance),
        ("truncation stability", c11_truncation),
        ("check determinism", c12_determinism),
    ];
    let start = Instant::now();
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = run();
        println!(
            "criterion {:2} {} {name}: {detail} ({:.1}s)",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        if !ok {
            failed.push(i + 1);
        }
    }
    println!("acceptance: {} of 12 passed in {:.1}s", 12 - failed.len(), start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
