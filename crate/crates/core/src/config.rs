//! INI-style experiment configuration: parsing, validation and system construction.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngExt;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::base::BaseSystem;
use crate::error::{Error, Result};
use crate::interval::IntervalSet;
use crate::phase::{FiberMap, PhaseSpace};
use crate::potential::Potential;
use crate::rng::SeedTree;
use crate::scalar::Real;
use crate::transfer::{Discretization, RandomSystem};

#[derive(Clone, Debug)]
struct Entry {
    line: usize,
    value: String,
}

/// Raw sections in file order; repeated keys are kept.
#[derive(Clone, Debug, Default)]
struct Document {
    sections: BTreeMap<String, (usize, Vec<(String, Entry)>)>,
}

fn parse_document(text: &str) -> Result<Document> {
    let mut doc = Document::default();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Config { line, msg: format!("unterminated section header `{s}`") })?
                .trim()
                .to_string();
            if name.is_empty() {
                return Err(Error::Config { line, msg: "empty section name".into() });
            }
            if doc.sections.contains_key(&name) {
                return Err(Error::Config { line, msg: format!("section [{name}] appears twice") });
            }
            doc.sections.insert(name.clone(), (line, Vec::new()));
            current = Some(name);
            continue;
        }
        let Some((k, v)) = s.split_once('=') else {
            return Err(Error::Config { line, msg: format!("expected `key = value`, found `{s}`") });
        };
        let Some(sec) = &current else {
            return Err(Error::Config { line, msg: "key outside of any section".into() });
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config { line, msg: "empty key".into() });
        }
        doc.sections.get_mut(sec).expect("section exists").1.push((key, Entry { line, value: v.trim().to_string() }));
    }
    Ok(doc)
}

/// Keys of one section with single-use tracking.
struct Section<'a> {
    name: &'a str,
    line: usize,
    entries: &'a [(String, Entry)],
}

impl<'a> Section<'a> {
    fn check_keys(&self, allowed: &[&str], repeatable: &[&str]) -> Result<()> {
        let mut seen = BTreeMap::new();
        for (k, e) in self.entries {
            let pattern = k.split_once('.').map(|(stem, _)| format!("{stem}.*"));
            if !allowed.contains(&k.as_str()) && !pattern.is_some_and(|p| allowed.contains(&p.as_str())) {
                return Err(Error::Config { line: e.line, msg: format!("unknown key `{k}` in [{}]", self.name) });
            }
            if seen.insert(k.as_str(), e.line).is_some() && !repeatable.contains(&k.as_str()) {
                return Err(Error::Config { line: e.line, msg: format!("key `{k}` repeated in [{}]", self.name) });
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&'a Entry> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, e)| e)
    }

    fn all(&self, key: &str) -> Vec<&'a Entry> {
        self.entries.iter().filter(|(k, _)| k == key).map(|(_, e)| e).collect()
    }

    fn with_prefix(&self, prefix: &str) -> Vec<(&'a str, &'a Entry)> {
        self.entries
            .iter()
            .filter_map(|(k, e)| k.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')).map(|r| (r, e)))
            .collect()
    }

    fn required(&self, key: &str) -> Result<&'a Entry> {
        self.get(key)
            .ok_or_else(|| Error::Config { line: self.line, msg: format!("[{}] is missing `{key}`", self.name) })
    }
}

fn bad(e: &Entry, msg: impl std::fmt::Display) -> Error {
    Error::Config { line: e.line, msg: format!("{msg} (value `{}`)", e.value) }
}

/// Decimal or `p/q` fraction.
pub fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
            let q: f64 = q.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
            if q == 0.0 {
                return Err(format!("`{s}` divides by zero"));
            }
            p / q
        }
        None => s.parse().map_err(|_| format!("`{s}` is not a number"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn number(e: &Entry) -> Result<f64> {
    parse_number(&e.value).map_err(|m| bad(e, m))
}

fn numbers(e: &Entry) -> Result<Vec<f64>> {
    e.value
        .split([',', ' ', '\t'])
        .filter(|t| !t.is_empty())
        .map(|t| parse_number(t).map_err(|m| bad(e, m)))
        .collect()
}

fn integer<N: std::str::FromStr>(e: &Entry) -> Result<N> {
    e.value.trim().parse().map_err(|_| bad(e, "expected a nonnegative integer"))
}

fn boolean(e: &Entry) -> Result<bool> {
    match e.value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(e, "expected true or false")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BaseChoice {
    Cycle,
    OrbitWindow,
}

#[derive(Clone, Debug, Serialize)]
pub struct BaseSection {
    pub kind: BaseChoice,
    /// Fibers of a cycle, or symbols of an orbit window.
    pub size: usize,
    /// Fiber weights (cycle) or symbol probabilities (window).
    pub weights: Option<Vec<f64>>,
    pub seed: Option<u64>,
    /// Half width N of an orbit window.
    pub window: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum MapSpec {
    Doubling,
    Tripling,
    Gauss { k_max: u64, resum: bool },
    Affine(Vec<(f64, f64, f64, f64)>),
}

impl MapSpec {
    pub fn build(&self) -> Result<FiberMap> {
        match self {
            MapSpec::Doubling => Ok(FiberMap::doubling()),
            MapSpec::Tripling => Ok(FiberMap::tripling()),
            MapSpec::Gauss { k_max, resum } => FiberMap::gauss(*k_max, *resum),
            MapSpec::Affine(rows) => FiberMap::affine(rows),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PotentialSpec {
    GeometricDerivative,
    ConstantPerBranch(Vec<f64>),
    Expr(String),
}

impl PotentialSpec {
    pub fn build(&self) -> Result<Potential> {
        match self {
            PotentialSpec::GeometricDerivative => Ok(Potential::Geometric),
            PotentialSpec::ConstantPerBranch(v) => Ok(Potential::ConstantPerBranch(v.clone())),
            PotentialSpec::Expr(s) => Potential::expr(s),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub escape_depth: usize,
    /// Exact survivor-interval comparison depth for escape sequences (0 disables).
    pub exact_depth: usize,
    pub correlation_depth: usize,
    pub samples: usize,
    pub ly_levels: Vec<usize>,
    pub functional_depth: usize,
    pub epsilon: f64,
    pub u: f64,
    pub v: f64,
    pub a: Option<f64>,
    pub iterates: usize,
    pub ci_depth: usize,
    pub ci_sets: usize,
    pub conformality_depth: usize,
    /// Assert the open contracting condition (`None`: report only).
    pub expect_contracting: Option<bool>,
    /// Residual tolerance for eigen identities.
    pub identity_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
            escape_depth: 48,
            exact_depth: 0,
            correlation_depth: 40,
            samples: 100,
            ly_levels: vec![1, 2, 4],
            functional_depth: 24,
            epsilon: 0.1,
            u: 0.25,
            v: 0.4,
            a: None,
            iterates: 30,
            ci_depth: 6,
            ci_sets: 256,
            conformality_depth: 3,
            expect_contracting: None,
            identity_tol: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}` (csv or json)")),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputSection {
    pub dir: Option<String>,
    pub format: Format,
    /// Write q, ν, μ per fiber on `solve`.
    pub dump_functions: bool,
    pub dump_matrices: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: None, format: Format::Json, dump_functions: true, dump_matrices: false }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub base: BaseSection,
    /// Per fiber (cycle) or per symbol (window).
    pub maps: Vec<MapSpec>,
    pub holes: Vec<Vec<(f64, f64)>>,
    pub potentials: Vec<PotentialSpec>,
    pub discretization: Discretization,
    pub solver: SolverSection,
    pub outputs: OutputSection,
    /// SHA-256 of the source text.
    pub hash: String,
}

const SECTIONS: &[&str] = &["base", "hole", "potential", "discretization", "solver", "outputs"];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let doc = parse_document(text)?;
        for (name, (line, _)) in &doc.sections {
            if !SECTIONS.contains(&name.as_str()) && !name.starts_with("map.") {
                return Err(Error::Config { line: *line, msg: format!("unknown section [{name}]") });
            }
        }
        let section = |name: &'static str| -> Option<Section<'_>> {
            doc.sections.get(name).map(|(line, e)| Section { name, line: *line, entries: e })
        };
        let empty: Vec<(String, Entry)> = Vec::new();
        let or_empty = |name: &'static str| section(name).unwrap_or(Section { name, line: 0, entries: &empty });

        let b = section("base").ok_or(Error::Config { line: 0, msg: "missing [base] section".into() })?;
        b.check_keys(&["name", "kind", "size", "weights", "seed", "window"], &[])?;
        let kind_e = b.required("kind")?;
        let kind = match kind_e.value.as_str() {
            "cycle" | "finite-cycle" => BaseChoice::Cycle,
            "orbit-window" | "seeded-orbit-window" => BaseChoice::OrbitWindow,
            _ => return Err(bad(kind_e, "kind must be cycle or orbit-window")),
        };
        let size_e = b.required("size")?;
        let size: usize = integer(size_e)?;
        if size == 0 {
            return Err(bad(size_e, "size must be at least 1"));
        }
        let weights = b.get("weights").map(numbers).transpose()?;
        if let (Some(w), Some(e)) = (&weights, b.get("weights")) {
            if w.len() != size {
                return Err(bad(e, format!("{} weights for size {size}", w.len())));
            }
            if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(bad(e, "weights must be nonnegative and sum to 1"));
            }
        }
        let seed = b.get("seed").map(integer::<u64>).transpose()?;
        let window = b.get("window").map(integer::<usize>).transpose()?;
        match (kind, window, b.get("window")) {
            (BaseChoice::OrbitWindow, None, _) => {
                return Err(Error::Config { line: b.line, msg: "orbit-window base needs `window`".into() })
            }
            (BaseChoice::OrbitWindow, Some(_), _) if seed.is_none() => {
                return Err(Error::Config { line: b.line, msg: "orbit-window base needs `seed`".into() })
            }
            (BaseChoice::Cycle, Some(_), Some(e)) => return Err(bad(e, "`window` applies to orbit-window bases only")),
            _ => {}
        }
        let name = b.get("name").map(|e| e.value.clone()).unwrap_or_else(|| "experiment".into());
        let base = BaseSection { kind, size, weights, seed, window };

        let mut maps = Vec::with_capacity(size);
        for w in 0..size {
            let key = format!("map.{w}");
            let Some((line, entries)) = doc.sections.get(&key) else {
                return Err(Error::Config { line: b.line, msg: format!("fiber {w} has no [{key}] section") });
            };
            let s = Section { name: &key, line: *line, entries };
            maps.push(parse_map(&s)?);
        }
        for (name, (line, _)) in &doc.sections {
            if let Some(idx) = name.strip_prefix("map.") {
                if idx.parse::<usize>().map_or(true, |i| i >= size) {
                    return Err(Error::Config { line: *line, msg: format!("[{name}] does not name a fiber below {size}") });
                }
            }
        }

        let h = or_empty("hole");
        h.check_keys(&["fiber.*"], &[])?;
        let mut holes = vec![Vec::new(); size];
        for (idx, e) in h.with_prefix("fiber") {
            let w: usize = idx.parse().map_err(|_| bad(e, format!("`fiber.{idx}` is not a fiber index")))?;
            if w >= size {
                return Err(bad(e, format!("hole references fiber {w} but the base has {size}")));
            }
            holes[w] = parse_intervals(e)?;
        }

        let p = or_empty("potential");
        p.check_keys(&["kind", "values", "expr", "kind.*", "values.*", "expr.*"], &[])?;
        let mut potentials = Vec::with_capacity(size);
        for w in 0..size {
            let pick = |k: &str| p.get(&format!("{k}.{w}")).or_else(|| p.get(k));
            let kind = pick("kind").map(|e| e.value.as_str()).unwrap_or("geometric-derivative");
            let spec = match kind {
                "geometric-derivative" | "geometric" => PotentialSpec::GeometricDerivative,
                "constant-per-branch" => {
                    let e = pick("values").ok_or_else(|| Error::Config {
                        line: p.line,
                        msg: format!("fiber {w}: constant-per-branch potential needs `values`"),
                    })?;
                    let v = numbers(e)?;
                    if v.is_empty() || v.iter().any(|&x| x <= 0.0) {
                        return Err(bad(e, "weights must be positive"));
                    }
                    PotentialSpec::ConstantPerBranch(v)
                }
                "expr" => {
                    let e = pick("expr").ok_or_else(|| Error::Config {
                        line: p.line,
                        msg: format!("fiber {w}: expr potential needs `expr`"),
                    })?;
                    Potential::expr(&e.value).map_err(|err| bad(e, err))?;
                    PotentialSpec::Expr(e.value.clone())
                }
                other => {
                    let e = pick("kind").expect("non-default kind comes from an entry");
                    return Err(bad(e, format!("unknown potential kind `{other}`")));
                }
            };
            potentials.push(spec);
        }

        let d = or_empty("discretization");
        d.check_keys(&["cells", "depth"], &[])?;
        let mut discretization = Discretization::default();
        if let Some(e) = d.get("cells") {
            discretization.cells = integer(e)?;
            if discretization.cells == 0 {
                return Err(bad(e, "cells must be positive"));
            }
        }
        if let Some(e) = d.get("depth") {
            discretization.depth = integer(e)?;
            if discretization.depth == 0 {
                return Err(bad(e, "depth must be positive"));
            }
        }

        let solver = parse_solver(&or_empty("solver"))?;
        if solver.samples > 0 && base.seed.is_none() {
            return Err(Error::Config { line: b.line, msg: "sampling is requested but [base] has no seed".into() });
        }
        let outputs = parse_outputs(&or_empty("outputs"))?;
        let hash = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        let cfg = Self { name, base, maps, holes, potentials, discretization, solver, outputs, hash };
        cfg.validate_geometry()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn validate_geometry(&self) -> Result<()> {
        for (w, m) in self.maps.iter().enumerate() {
            m.build().map_err(|e| match e {
                Error::Branch { branch, msg, .. } => Error::Branch { fiber: w, branch, msg },
                other => other,
            })?;
            if let (MapSpec::Gauss { resum: true, .. }, p) = (m, &self.potentials[w]) {
                if *p != PotentialSpec::GeometricDerivative {
                    return Err(Error::invalid(format!("fiber {w}: gauss tail resummation needs geometric-derivative")));
                }
            }
        }
        Ok(())
    }

    /// Number of realized fibers.
    pub fn fibers(&self) -> usize {
        match self.base.kind {
            BaseChoice::Cycle => self.base.size,
            BaseChoice::OrbitWindow => 2 * self.base.window.unwrap_or(0) + 1,
        }
    }

    pub fn seeds(&self, override_seed: Option<u64>) -> SeedTree {
        SeedTree::new(override_seed.or(self.base.seed).unwrap_or(0))
    }

    /// Symbol of each realized fiber (identity for cycles).
    pub fn symbols(&self) -> Vec<usize> {
        match self.base.kind {
            BaseChoice::Cycle => (0..self.base.size).collect(),
            BaseChoice::OrbitWindow => {
                let probs = self.base.weights.clone().unwrap_or_else(|| vec![1.0 / self.base.size as f64; self.base.size]);
                let seeds = SeedTree::new(self.base.seed.unwrap_or(0));
                let mut rng = seeds.stream("base_system", "symbols", 0);
                (0..self.fibers())
                    .map(|_| {
                        let r: f64 = rng.random();
                        let mut acc = 0.0;
                        for (s, p) in probs.iter().enumerate() {
                            acc += p;
                            if r < acc {
                                return s;
                            }
                        }
                        probs.len() - 1
                    })
                    .collect()
            }
        }
    }

    pub fn base_system(&self) -> Result<BaseSystem> {
        match self.base.kind {
            BaseChoice::Cycle => BaseSystem::cycle(self.base.size, self.base.weights.clone()),
            BaseChoice::OrbitWindow => Ok(BaseSystem::orbit_window(self.base.window.unwrap_or(0))),
        }
    }

    pub fn build<T: Real>(&self) -> Result<RandomSystem<T>> {
        self.build_with(self.discretization)
    }

    pub fn build_with<T: Real>(&self, disc: Discretization) -> Result<RandomSystem<T>> {
        let symbols = self.symbols();
        let built: Vec<Arc<FiberMap>> = self.maps.iter().map(|m| m.build().map(Arc::new)).collect::<Result<_>>()?;
        let pots: Vec<Arc<Potential>> = self.potentials.iter().map(|p| p.build().map(Arc::new)).collect::<Result<_>>()?;
        let maps = symbols.iter().map(|&s| built[s].clone()).collect();
        let holes = symbols.iter().map(|&s| IntervalSet::from_parts(self.holes[s].clone())).collect();
        let potentials = symbols.iter().map(|&s| pots[s].clone()).collect();
        let phase = PhaseSpace::new(self.base_system()?, maps, holes)?;
        RandomSystem::build(phase, potentials, disc)
    }
}

fn parse_map(s: &Section<'_>) -> Result<MapSpec> {
    s.check_keys(&["family", "tail", "branch"], &["branch"])?;
    let branches = s.all("branch");
    match (s.get("family"), branches.is_empty()) {
        (Some(e), true) => {
            let mut words = e.value.split_whitespace();
            let spec = match (words.next(), words.next()) {
                (Some("doubling"), None) => MapSpec::Doubling,
                (Some("tripling"), None) => MapSpec::Tripling,
                (Some("gauss"), Some(k)) => {
                    let k_max: u64 = k.parse().map_err(|_| bad(e, "gauss needs an integer K_max"))?;
                    if k_max == 0 {
                        return Err(bad(e, "K_max must be at least 1"));
                    }
                    let resum = match s.get("tail").map(|t| t.value.as_str()) {
                        None | Some("resum") => true,
                        Some("drop") => false,
                        Some(_) => return Err(bad(s.get("tail").expect("present"), "tail must be resum or drop")),
                    };
                    MapSpec::Gauss { k_max, resum }
                }
                _ => return Err(bad(e, "family must be doubling, tripling or `gauss K_max`")),
            };
            if words.next().is_some() {
                return Err(bad(e, "trailing words after the family"));
            }
            if s.get("tail").is_some() && !matches!(spec, MapSpec::Gauss { .. }) {
                return Err(bad(s.get("tail").expect("present"), "`tail` applies to gauss maps only"));
            }
            Ok(spec)
        }
        (None, false) => {
            let mut rows = Vec::new();
            for e in branches {
                let rest = e
                    .value
                    .strip_prefix("affine")
                    .ok_or_else(|| bad(e, "branch rows read `affine a b slope intercept`"))?;
                let v = numbers(&Entry { line: e.line, value: rest.to_string() })?;
                if v.len() != 4 {
                    return Err(bad(e, "affine rows need exactly 4 numbers"));
                }
                rows.push((v[0], v[1], v[2], v[3]));
            }
            Ok(MapSpec::Affine(rows))
        }
        (Some(e), false) => Err(bad(e, "use either `family` or `branch` rows, not both")),
        (None, true) => Err(Error::Config { line: s.line, msg: format!("[{}] needs `family` or `branch` rows", s.name) }),
    }
}

/// `a b; c d` half-open intervals inside [0,1].
fn parse_intervals(e: &Entry) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for part in e.value.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let v = numbers(&Entry { line: e.line, value: part.to_string() })?;
        if v.len() != 2 || !(0.0 <= v[0] && v[0] < v[1] && v[1] <= 1.0) {
            return Err(bad(e, format!("`{part}` is not an interval a < b inside [0,1]")));
        }
        out.push((v[0], v[1]));
    }
    Ok(out)
}

fn parse_solver(s: &Section<'_>) -> Result<SolverSection> {
    s.check_keys(
        &[
            "tol",
            "max_iter",
            "escape_depth",
            "exact_depth",
            "correlation_depth",
            "samples",
            "ly_levels",
            "functional_depth",
            "epsilon",
            "u",
            "v",
            "a",
            "iterates",
            "ci_depth",
            "ci_sets",
            "conformality_depth",
            "expect_contracting",
            "identity_tol",
        ],
        &[],
    )?;
    let mut out = SolverSection::default();
    let positive = |e: &Entry| -> Result<f64> {
        let x = number(e)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(bad(e, "must be positive"))
        }
    };
    let count = |e: &Entry| -> Result<usize> {
        let n: usize = integer(e)?;
        if n > 0 {
            Ok(n)
        } else {
            Err(bad(e, "must be positive"))
        }
    };
    for (k, e) in s.entries {
        match k.as_str() {
            "tol" => out.tol = positive(e)?,
            "identity_tol" => out.identity_tol = positive(e)?,
            "max_iter" => out.max_iter = count(e)?,
            "escape_depth" => out.escape_depth = count(e)?,
            "exact_depth" => out.exact_depth = integer(e)?,
            "correlation_depth" => out.correlation_depth = count(e)?,
            "samples" => out.samples = integer(e)?,
            "functional_depth" => out.functional_depth = count(e)?,
            "epsilon" => out.epsilon = positive(e)?,
            "u" => out.u = positive(e)?,
            "v" => out.v = positive(e)?,
            "a" => out.a = Some(positive(e)?),
            "iterates" => out.iterates = count(e)?,
            "ci_depth" => out.ci_depth = integer(e)?,
            "ci_sets" => out.ci_sets = count(e)?,
            "conformality_depth" => out.conformality_depth = integer(e)?,
            "expect_contracting" => out.expect_contracting = Some(boolean(e)?),
            "ly_levels" => {
                out.ly_levels = e
                    .value
                    .split([',', ' '])
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| bad(e, "levels are positive integers")))
                    .collect::<Result<_>>()?
            }
            _ => unreachable!("keys checked above"),
        }
    }
    let (u, v) = (out.u, out.v);
    if !(u < 1.0 && v < 1.0 && u + v < 0.75 && (1.0 - u) * v <= 0.5) {
        return Err(Error::Config { line: s.line, msg: format!("cone parameters u = {u}, v = {v} need u+v < 3/4") });
    }
    Ok(out)
}

fn parse_outputs(s: &Section<'_>) -> Result<OutputSection> {
    s.check_keys(&["dir", "format", "functions", "matrices"], &[])?;
    let mut out = OutputSection::default();
    if let Some(e) = s.get("dir") {
        out.dir = Some(e.value.clone());
    }
    if let Some(e) = s.get("format") {
        out.format = e.value.parse().map_err(|m: String| bad(e, m))?;
    }
    if let Some(e) = s.get("functions") {
        out.dump_functions = boolean(e)?;
    }
    if let Some(e) = s.get("matrices") {
        out.dump_matrices = boolean(e)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RAND2: &str = "
[base]
kind = cycle
size = 2
seed = 5

[map.0]
family = doubling

[map.1]
branch = affine 0 1/3 3 0
branch = affine 1/3 2/3 3 -1
branch = affine 2/3 1 3 -2

[hole]
fiber.1 = 2/3 1

[potential]
kind = geometric-derivative
";

    #[test]
    fn parses_a_two_fiber_system() {
        let c = ExperimentConfig::parse(RAND2).unwrap();
        assert_eq!(c.fibers(), 2);
        assert_eq!(c.maps[0], MapSpec::Doubling);
        assert!(matches!(&c.maps[1], MapSpec::Affine(r) if r.len() == 3));
        assert!(c.holes[0].is_empty());
        assert!((c.holes[1][0].0 - 2.0 / 3.0).abs() < 1e-16);
        let sys = c.build_with::<f64>(Discretization { cells: 27, depth: 1 }).unwrap();
        assert_eq!(sys.size(), 2);
    }

    #[test]
    fn fractions() {
        assert_eq!(parse_number("1/4").unwrap(), 0.25);
        assert_eq!(parse_number(" -2 ").unwrap(), -2.0);
        assert!(parse_number("1/0").is_err());
        assert!(parse_number("x").is_err());
    }

    fn line_of(text: &str) -> usize {
        match ExperimentConfig::parse(text) {
            Err(Error::Config { line, .. }) => line,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn diagnostics_carry_lines() {
        assert_eq!(line_of("[base]\nkind = spiral\nsize = 1\n"), 2);
        assert_eq!(line_of("[base]\nkind = cycle\nsize = 1\nseed = 1\n[map.0]\nfamily = doubling\n[hole]\nfiber.3 = 0 1/2\n"), 8);
        assert_eq!(line_of("[base]\nkind = cycle\nsize = 1\nseed = 1\n[map.0]\nfamily = doubling\n[solver]\ntol = -1\n"), 8);
        assert_eq!(line_of("[base]\nkind = cycle\nsize = 2\nseed = 1\n[map.0]\nfamily = doubling\n"), 1);
        assert_eq!(line_of("[base]\nkind = cycle\nbogus = 1\n"), 3);
        assert_eq!(line_of("[base]\nkind = cycle\nsize = 1\nseed = 1\n[map.0]\nfamily = doubling\n[hole]\nfiber.0 = 1/2 1/4\n"), 8);
    }

    #[test]
    fn seed_required_for_sampling() {
        let text = "[base]\nkind = cycle\nsize = 1\n[map.0]\nfamily = doubling\n";
        assert!(matches!(ExperimentConfig::parse(text), Err(Error::Config { .. })));
        let ok = format!("{text}[solver]\nsamples = 0\n");
        assert!(ExperimentConfig::parse(&ok).is_ok());
    }

    #[test]
    fn orbit_window_symbols_are_seeded() {
        let text = "[base]\nkind = orbit-window\nsize = 2\nweights = 1/2, 1/2\nseed = 9\nwindow = 6\n[map.0]\nfamily = doubling\n[map.1]\nfamily = tripling\n";
        let a = ExperimentConfig::parse(text).unwrap();
        assert_eq!(a.fibers(), 13);
        assert_eq!(a.symbols(), a.symbols());
        assert!(a.symbols().iter().all(|&s| s < 2));
        let b = ExperimentConfig::parse(&text.replace("seed = 9", "seed = 10")).unwrap();
        assert_ne!(a.hash, b.hash);
    }

    #[test]
    fn resum_needs_geometric_potential() {
        let text = "[base]\nkind = cycle\nsize = 1\nseed = 1\n[map.0]\nfamily = gauss 8\n[potential]\nkind = constant-per-branch\nvalues = 1/2\n";
        assert!(matches!(ExperimentConfig::parse(text), Err(Error::Invalid(_))));
        let drop = text.replace("gauss 8\n", "gauss 8\ntail = drop\n");
        assert!(ExperimentConfig::parse(&drop).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fractions_parse_exactly(p in -1000i64..1000, q in 1i64..1000) {
                let v = parse_number(&format!("{p}/{q}")).unwrap();
                prop_assert_eq!(v, p as f64 / q as f64);
                let zero = format!("{p}/0");
                prop_assert!(parse_number(&zero).is_err());
            }

            #[test]
            fn hash_tracks_text(extra in "[a-z]{1,8}") {
                let a = ExperimentConfig::parse(RAND2).unwrap();
                let b = ExperimentConfig::parse(&format!("{RAND2}\n# {extra}\n")).unwrap();
                prop_assert_ne!(&a.hash, &b.hash);
                prop_assert_eq!(&a.hash, &ExperimentConfig::parse(RAND2).unwrap().hash);
            }
        }
    }
}
