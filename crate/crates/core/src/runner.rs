//! Config-driven experiment runner: flat `key = value` configs in, JSON
//! reports and CSV tables out.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use crate::beurling::{contraction_survey, invariant_distribution, BeurlingSolver, Start};
use crate::bundle::{plane_wave, random_field, Discretization, FourierField, RandomFieldSpec};
use crate::constants::{
    a_constant, alpha_threshold, beta_threshold, constants_table, controlled_from_beta,
};
use crate::error::{Error, Result};
use crate::identities::identity_battery;
use crate::jacobi::{
    estimate_terminator, first_conjugate_time, hyperbolicity_gap, Curvature, CurvatureProfile,
};
use crate::metric::{Domain, FourierTerm, IsothermalMetric, PhasePoint};
use crate::poly::Poly2;
use crate::xray::{
    potential_basis, ray_transform, santalo_integral, sinjectivity_spectrum, BoundaryFan,
};
use crate::Complex64;
use std::sync::Arc;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Subcommand {
    VerifyIdentities,
    Beurling,
    Invariant,
    Terminator,
    Riccati,
    Xray,
    Constants,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Subcommand::VerifyIdentities,
        Subcommand::Beurling,
        Subcommand::Invariant,
        Subcommand::Terminator,
        Subcommand::Riccati,
        Subcommand::Xray,
        Subcommand::Constants,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::VerifyIdentities => "verify-identities",
            Subcommand::Beurling => "beurling",
            Subcommand::Invariant => "invariant",
            Subcommand::Terminator => "terminator",
            Subcommand::Riccati => "riccati",
            Subcommand::Xray => "xray",
            Subcommand::Constants => "constants",
        }
    }

    fn randomized(self) -> bool {
        matches!(self, Subcommand::VerifyIdentities | Subcommand::Beurling)
    }

    fn defaults(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Subcommand::VerifyIdentities => &[
                ("metric.domain", "torus"),
                ("grid.n", "32"),
                ("grid.n_theta", "12"),
                ("identities.count", "50"),
                ("identities.band", "6"),
                ("identities.spatial", "4"),
                ("tol.identity", "1e-10"),
            ],
            Subcommand::Beurling => &[
                ("metric.domain", "torus"),
                ("grid.n", "32"),
                ("grid.degree", "20"),
                ("grid.n_theta", "8"),
                ("beurling.k_min", "0"),
                ("beurling.k_max", "4"),
                ("beurling.trials", "50"),
                ("beurling.spatial", "4"),
                ("beurling.minimality", "10"),
                ("tol.contraction", "1e-6"),
                ("tol.residual", "1e-9"),
                ("tol.minimality", "1e-12"),
            ],
            Subcommand::Invariant => &[
                ("metric.domain", "torus"),
                ("grid.n", "32"),
                ("grid.n_theta", "12"),
                ("invariant.input", "cos_x1"),
                ("invariant.j_max", "5"),
                ("tol.transport", "1e-8"),
            ],
            Subcommand::Terminator => &[("terminator.beta_max", "4"), ("terminator.tol", "1e-3")],
            Subcommand::Riccati => &[("riccati.betas", "1")],
            Subcommand::Xray => &[
                ("metric.domain", "disc"),
                ("fan.nb", "64"),
                ("fan.na", "64"),
                ("xray.m", "0"),
                ("xray.basis", "16"),
                ("tol.kernel", "1e-6"),
            ],
            Subcommand::Constants => &[
                ("constants.n", "2,3,4"),
                ("constants.m_max", "6"),
                ("constants.tail_terms", "64"),
            ],
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config("subcommand", format!("unknown subcommand `{s}`")))
    }
}

const KEY_PATTERNS: &[&str] = &[
    "seed",
    "metric.domain",
    "metric.lambda.cos[#][#]",
    "metric.lambda.sin[#][#]",
    "metric.lambda.poly[#][#]",
    "grid.n",
    "grid.n_theta",
    "grid.degree",
    "fan.nb",
    "fan.na",
    "identities.count",
    "identities.band",
    "identities.spatial",
    "beurling.k_min",
    "beurling.k_max",
    "beurling.trials",
    "beurling.spatial",
    "beurling.minimality",
    "invariant.input",
    "invariant.p",
    "invariant.q",
    "invariant.j_max",
    "terminator.beta_max",
    "terminator.tol",
    "riccati.betas",
    "riccati.horizon",
    "profile.#.kind",
    "profile.#.k",
    "profile.#.length",
    "profile.#.mean",
    "profile.#.amplitude",
    "profile.#.omega",
    "profile.#.x1",
    "profile.#.x2",
    "profile.#.theta",
    "profile.#.dt",
    "xray.m",
    "xray.basis",
    "constants.n",
    "constants.m_max",
    "constants.tail_terms",
    "tol.identity",
    "tol.contraction",
    "tol.residual",
    "tol.minimality",
    "tol.transport",
    "tol.kernel",
];

/// Replaces integer path segments and bracket indices by `#`.
fn key_shape(key: &str) -> String {
    let mut out = String::new();
    for (i, seg) in key.split('.').enumerate() {
        if i > 0 {
            out.push('.');
        }
        if !seg.is_empty() && seg.chars().all(|c| c.is_ascii_digit()) {
            out.push('#');
            continue;
        }
        let mut rest = seg;
        while let Some(open) = rest.find('[') {
            out.push_str(&rest[..open]);
            let close = rest[open..]
                .find(']')
                .map(|c| c + open)
                .unwrap_or(rest.len() - 1);
            let inner = &rest[open + 1..close];
            if inner
                .trim_start_matches('-')
                .chars()
                .all(|c| c.is_ascii_digit())
                && !inner.is_empty()
            {
                out.push_str("[#]");
            } else {
                out.push_str(&rest[open..=close]);
            }
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub subcommand: Option<Subcommand>,
    entries: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn new(subcommand: Subcommand) -> Self {
        Self {
            subcommand: Some(subcommand),
            entries: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self {
            subcommand: None,
            entries: BTreeMap::new(),
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", n + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k == "subcommand" {
                cfg.subcommand = Some(v.parse()?);
                continue;
            }
            if !KEY_PATTERNS.contains(&key_shape(k).as_str()) {
                return Err(Error::config(k, "unknown key"));
            }
            if cfg.entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::config(k, "key given twice"));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sorted `key = value` lines, starting with the subcommand.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(c) = self.subcommand {
            s.push_str(&format!("subcommand = {c}\n"));
        }
        for (k, v) in &self.entries {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if !KEY_PATTERNS.contains(&key_shape(key).as_str()) {
            return Err(Error::config(key, "unknown key"));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    fn subcommand(&self) -> Result<Subcommand> {
        self.subcommand
            .ok_or_else(|| Error::config("subcommand", "no subcommand given"))
    }

    /// The config with every default for its subcommand written out.
    pub fn resolved(&self) -> Result<Self> {
        let sub = self.subcommand()?;
        let mut out = self.clone();
        for (k, v) in sub.defaults() {
            out.entries
                .entry(k.to_string())
                .or_insert_with(|| v.to_string());
        }
        if matches!(sub, Subcommand::Terminator | Subcommand::Riccati)
            && !out.entries.keys().any(|k| k.starts_with("profile."))
        {
            let (k, length) = if sub == Subcommand::Terminator {
                ("1", format!("{PI}"))
            } else {
                ("-1", "1".to_string())
            };
            out.entries
                .insert("profile.0.kind".into(), "constant".into());
            out.entries.insert("profile.0.k".into(), k.into());
            out.entries.insert("profile.0.length".into(), length);
        }
        Ok(out)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::config(key, "missing value"))?;
        raw.parse()
            .map_err(|e| Error::config(key, format!("cannot parse `{raw}`: {e}")))
    }

    fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        if self.get(key).is_some() {
            self.parsed(key)
        } else {
            Ok(default)
        }
    }

    fn tolerance(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parsed(key)?;
        if !(v > 0.0) {
            return Err(Error::config(
                key,
                format!("tolerance must be positive (got {v})"),
            ));
        }
        Ok(v)
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::config(key, "missing value"))?;
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| Error::config(key, format!("cannot parse `{s}`: {e}")))
            })
            .collect()
    }

    fn seed(&self) -> Result<u64> {
        self.parsed("seed")
            .map_err(|_| Error::config("seed", "a seed is required for randomized runs"))
    }

    fn indices(&self, key: &str) -> Result<(i64, i64)> {
        let shape = |s: &str| -> Option<i64> { s.trim_end_matches(']').parse().ok() };
        let parts: Vec<&str> = key.split('[').skip(1).collect();
        match parts.as_slice() {
            [a, b] => match (shape(a), shape(b)) {
                (Some(a), Some(b)) => Ok((a, b)),
                _ => Err(Error::config(key, "bad index")),
            },
            _ => Err(Error::config(key, "expected two indices")),
        }
    }

    pub fn metric(&self) -> Result<IsothermalMetric> {
        let domain = self.get("metric.domain").unwrap_or("torus");
        match domain {
            "torus" => {
                let mut terms: BTreeMap<(i64, i64), (f64, f64)> = BTreeMap::new();
                for key in self.entries.keys() {
                    let cos = key.starts_with("metric.lambda.cos[");
                    if cos || key.starts_with("metric.lambda.sin[") {
                        let pq = self.indices(key)?;
                        let v: f64 = self.parsed(key)?;
                        let e = terms.entry(pq).or_insert((0.0, 0.0));
                        if cos {
                            e.0 += v;
                        } else {
                            e.1 += v;
                        }
                    } else if key.starts_with("metric.lambda.poly[") {
                        return Err(Error::config(
                            key,
                            "polynomial λ needs metric.domain = disc",
                        ));
                    }
                }
                if terms.is_empty() {
                    return Ok(IsothermalMetric::flat_torus());
                }
                Ok(IsothermalMetric::torus(
                    terms
                        .into_iter()
                        .map(|((p, q), (c, s))| FourierTerm {
                            p: p as i32,
                            q: q as i32,
                            cos: c,
                            sin: s,
                        })
                        .collect(),
                ))
            }
            "disc" => {
                let mut poly = Vec::new();
                for key in self.entries.keys() {
                    if key.starts_with("metric.lambda.poly[") {
                        let (a, b) = self.indices(key)?;
                        if a < 0 || b < 0 {
                            return Err(Error::config(key, "exponents must be nonnegative"));
                        }
                        poly.push((a as usize, b as usize, self.parsed::<f64>(key)?));
                    } else if key.starts_with("metric.lambda.") {
                        return Err(Error::config(key, "Fourier λ needs metric.domain = torus"));
                    }
                }
                Ok(if poly.is_empty() {
                    IsothermalMetric::euclidean_disc()
                } else {
                    IsothermalMetric::disc(Poly2::from_real_terms(&poly))
                })
            }
            other => Err(Error::config(
                "metric.domain",
                format!("unknown domain `{other}`"),
            )),
        }
    }

    fn discretization(&self) -> Result<Arc<Discretization>> {
        let metric = self.metric()?;
        let n_theta: usize = self.parsed("grid.n_theta")?;
        match metric.domain() {
            Domain::Torus => Discretization::torus(metric, self.parsed("grid.n")?, n_theta),
            Domain::Disc => {
                Discretization::disc(metric, self.parsed_or("grid.degree", 20)?, n_theta)
            }
        }
    }

    fn profiles(&self) -> Result<Vec<(String, CurvatureProfile)>> {
        let mut ids: Vec<usize> = self
            .entries
            .keys()
            .filter_map(|k| k.strip_prefix("profile."))
            .filter_map(|k| k.split('.').next()?.parse().ok())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter()
            .map(|i| {
                let key = |f: &str| format!("profile.{i}.{f}");
                let kind = self
                    .get(&key("kind"))
                    .ok_or_else(|| Error::config(key("kind"), "missing profile kind"))?;
                let length: f64 = self.parsed(&key("length"))?;
                if !(length > 0.0) {
                    return Err(Error::config(key("length"), "length must be positive"));
                }
                let profile = match kind {
                    "constant" => CurvatureProfile::constant(self.parsed(&key("k"))?, length),
                    "trig" => CurvatureProfile::periodic(
                        Curvature::Trigonometric {
                            mean: self.parsed_or(&key("mean"), 0.0)?,
                            omega: self.parsed_or(&key("omega"), 1.0)?,
                            cos: vec![self.parsed_or(&key("amplitude"), 0.0)?],
                            sin: vec![0.0],
                        },
                        length,
                    ),
                    "positive_sine" => CurvatureProfile::new(
                        Curvature::PositivePart {
                            inner: Box::new(Curvature::Trigonometric {
                                mean: 0.0,
                                omega: self.parsed_or(&key("omega"), 1.0)?,
                                cos: vec![0.0],
                                sin: vec![self.parsed_or(&key("amplitude"), 1.0)?],
                            }),
                        },
                        length,
                    ),
                    "geodesic" => CurvatureProfile::along_geodesic(
                        &self.metric()?,
                        PhasePoint::new(
                            self.parsed_or(&key("x1"), 0.0)?,
                            self.parsed_or(&key("x2"), 0.0)?,
                            self.parsed_or(&key("theta"), 0.0)?,
                        ),
                        length,
                        self.parsed_or(&key("dt"), 1e-2)?,
                    )?,
                    other => {
                        return Err(Error::config(
                            key("kind"),
                            format!("unknown profile kind `{other}`"),
                        ))
                    }
                };
                Ok((format!("profile.{i}"), profile))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Verdict {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub artifact_version: String,
    pub subcommand: String,
    pub config: BTreeMap<String, String>,
    pub tables: BTreeMap<String, Vec<Value>>,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
    /// Kept out of `report.json` so reruns compare byte for byte.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    fn new(cfg: &ExperimentConfig) -> Self {
        let mut config = cfg.entries.clone();
        if let Some(s) = cfg.subcommand {
            config.insert("subcommand".into(), s.to_string());
        }
        Self {
            artifact_version: ARTIFACT_VERSION.into(),
            subcommand: cfg.subcommand.map(|s| s.to_string()).unwrap_or_default(),
            config,
            tables: BTreeMap::new(),
            verdicts: Vec::new(),
            passed: true,
            wall_clock_seconds: 0.0,
        }
    }

    fn table<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let values = rows
            .iter()
            .map(serde_json::to_value)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("serializing {name}: {e}")))?;
        self.tables.insert(name.to_string(), values);
        Ok(())
    }

    /// The echoed config, parseable by [`ExperimentConfig::parse`].
    pub fn config_text(&self) -> String {
        let mut cfg = ExperimentConfig {
            subcommand: self.subcommand.parse().ok(),
            entries: self.config.clone(),
        };
        cfg.entries.remove("subcommand");
        cfg.to_text()
    }

    pub fn row_count(&self) -> usize {
        self.tables.values().map(Vec::len).sum()
    }
}

/// Runs one experiment; threshold failures are reported, module errors returned.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let cfg = config.resolved()?;
    let sub = cfg.subcommand()?;
    if sub.randomized() {
        cfg.seed()?;
    }
    let mut report = ExperimentReport::new(&cfg);
    match sub {
        Subcommand::VerifyIdentities => run_identities(&cfg, &mut report)?,
        Subcommand::Beurling => run_beurling(&cfg, &mut report)?,
        Subcommand::Invariant => run_invariant(&cfg, &mut report)?,
        Subcommand::Terminator => run_terminator(&cfg, &mut report)?,
        Subcommand::Riccati => run_riccati(&cfg, &mut report)?,
        Subcommand::Xray => run_xray(&cfg, &mut report)?,
        Subcommand::Constants => run_constants(&cfg, &mut report)?,
    }
    report.passed = report.verdicts.iter().all(|v| v.pass);
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn run_identities(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let band: i64 = cfg.parsed("identities.band")?;
    let n_theta: usize = cfg.parsed("grid.n_theta")?;
    if band < 0 || band as usize + 2 > n_theta {
        return Err(Error::config(
            "identities.band",
            format!(
                "band {band} needs N_theta ≥ {} (have N_theta = {n_theta})",
                band + 2
            ),
        ));
    }
    let tol = cfg.tolerance("tol.identity")?;
    let disc = cfg.discretization()?;
    if disc.domain() != Domain::Torus {
        return Err(Error::config(
            "metric.domain",
            "the identity battery runs on the torus",
        ));
    }
    let (rows, max) = identity_battery(
        &disc,
        cfg.parsed("identities.count")?,
        band,
        cfg.parsed("identities.spatial")?,
        cfg.seed()?,
    )?;
    report.table("identities", &rows)?;
    for (name, v) in max.as_array() {
        report.verdicts.push(Verdict::at_most(name, v, tol));
    }
    Ok(())
}

#[derive(Serialize)]
struct BeurlingRow {
    k: i64,
    trials: usize,
    max_ratio: f64,
    max_residual: f64,
    max_iterations: usize,
    minimality_increase: Option<f64>,
    minimality_cosine: Option<f64>,
    obstruction: Option<f64>,
    kernel_dim: Option<usize>,
}

fn run_beurling(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let (k_min, k_max): (i64, i64) = (cfg.parsed("beurling.k_min")?, cfg.parsed("beurling.k_max")?);
    let n_theta: usize = cfg.parsed("grid.n_theta")?;
    if k_min < 0 || k_max < k_min {
        return Err(Error::config("beurling.k_max", "need 0 ≤ k_min ≤ k_max"));
    }
    if k_max as usize + 2 > n_theta {
        return Err(Error::config(
            "grid.n_theta",
            format!(
                "k up to {k_max} needs N_theta ≥ {} (have N_theta = {n_theta})",
                k_max + 2
            ),
        ));
    }
    let (tol_c, tol_r, tol_m) = (
        cfg.tolerance("tol.contraction")?,
        cfg.tolerance("tol.residual")?,
        cfg.tolerance("tol.minimality")?,
    );
    let seed = cfg.seed()?;
    let trials: usize = cfg.parsed("beurling.trials")?;
    let spatial: usize = cfg.parsed("beurling.spatial")?;
    let directions: usize = cfg.parsed("beurling.minimality")?;
    let disc = cfg.discretization()?;
    let ks: Vec<i64> = (k_min..=k_max).collect();
    let survey = contraction_survey(&disc, &ks, trials, spatial, seed)?;
    let mut rows = Vec::new();
    for s in &survey {
        let mut row = BeurlingRow {
            k: s.k,
            trials: s.trials,
            max_ratio: s.max_ratio,
            max_residual: s.max_residual,
            max_iterations: s.max_iterations,
            minimality_increase: None,
            minimality_cosine: None,
            obstruction: None,
            kernel_dim: None,
        };
        if directions > 0 {
            let solver = BeurlingSolver::new(&disc, s.k)?;
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5EED).wrapping_add(s.k as u64));
            let f = random_field(&disc, RandomFieldSpec::band(s.k, s.k, spatial), &mut rng)?;
            let step = solver.solve(&f)?;
            let m = solver.minimality_check(&step, directions, &mut rng)?;
            row.minimality_increase = Some(m.min_relative_increase);
            row.minimality_cosine = Some(m.max_cosine);
            row.obstruction = Some(step.obstruction);
            row.kernel_dim = step.kernel_dim;
            report.verdicts.push(Verdict::at_least(
                &format!("minimality k={}", s.k),
                m.min_relative_increase,
                -tol_m,
            ));
        }
        report.verdicts.push(Verdict::at_most(
            &format!("contraction k={}", s.k),
            s.max_ratio,
            1.0 + tol_c,
        ));
        report.verdicts.push(Verdict::at_most(
            &format!("residual k={}", s.k),
            s.max_residual,
            tol_r,
        ));
        rows.push(row);
    }
    report.table("beurling", &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct InvariantRow {
    j: usize,
    degree: usize,
    norm: f64,
    ratio: f64,
}

fn run_invariant(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let j_max: usize = cfg.parsed("invariant.j_max")?;
    let n_theta: usize = cfg.parsed("grid.n_theta")?;
    if 2 * j_max > n_theta {
        return Err(Error::config(
            "invariant.j_max",
            format!(
                "J_max = {j_max} reaches degree {} but N_theta = {n_theta}",
                2 * j_max
            ),
        ));
    }
    let tol = cfg.tolerance("tol.transport")?;
    let disc = cfg.discretization()?;
    let f = match cfg.get("invariant.input").unwrap_or("cos_x1") {
        "cos_x1" => FourierField::from_fn(&disc, 0, |x, _| Complex64::new(x.cos(), 0.0))?,
        "constant" => FourierField::from_fn(&disc, 0, |_, _| Complex64::new(1.0, 0.0))?,
        "plane_wave" => {
            let (p, q) = (
                cfg.parsed_or("invariant.p", 1.0)?,
                cfg.parsed_or("invariant.q", 0.0)?,
            );
            FourierField::from_mode(&disc, 0, plane_wave(&disc, p, q))?
        }
        other => {
            return Err(Error::config(
                "invariant.input",
                format!("unknown input `{other}`"),
            ))
        }
    };
    let inv = invariant_distribution(&f, Start::Omega(0), j_max)?;
    let rows: Vec<InvariantRow> = inv
        .coefficient_norms
        .iter()
        .enumerate()
        .map(|(j, n)| InvariantRow {
            j,
            degree: 2 * j,
            norm: *n,
            ratio: if inv.f_norm > 0.0 {
                n / inv.f_norm
            } else {
                0.0
            },
        })
        .collect();
    report.table("coefficients", &rows)?;
    report.table("mixed_norms", &inv.mixed_norms)?;
    report.table("steps", &inv.steps)?;
    report.verdicts.push(Verdict::at_most(
        "transport residual",
        inv.transport_residual,
        tol,
    ));
    Ok(())
}

#[derive(Serialize)]
struct TerminatorRow {
    profile: String,
    beta: Option<f64>,
    conjugate_time: Option<f64>,
}

fn run_terminator(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let profiles = cfg.profiles()?;
    let beta_max: f64 = cfg.parsed("terminator.beta_max")?;
    let tol = cfg.tolerance("terminator.tol")?;
    let only: Vec<CurvatureProfile> = profiles.iter().map(|p| p.1.clone()).collect();
    let est = estimate_terminator(&only, beta_max, tol)?;
    let rows = profiles
        .iter()
        .map(|(id, p)| {
            let t = match est.beta_upper {
                Some(b) => first_conjugate_time(p, b)?,
                None => None,
            };
            Ok(TerminatorRow {
                profile: id.clone(),
                beta: est.beta_upper,
                conjugate_time: t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(upper) = est.beta_upper {
        report.verdicts.push(Verdict::at_most(
            "bracket width",
            upper - est.beta_lower,
            tol,
        ));
    }
    report.table("profiles", &rows)?;
    report.table("estimate", &[est])?;
    Ok(())
}

#[derive(Serialize)]
struct RiccatiRow {
    profile: String,
    beta: f64,
    conjugate_time: Option<f64>,
    u_minus: Option<f64>,
    u_plus: Option<f64>,
    gap: Option<f64>,
    convergence: Option<f64>,
    verdict: String,
    rank_one: bool,
    monotone: Option<bool>,
    riccati_residual: Option<f64>,
}

fn run_riccati(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let profiles = cfg.profiles()?;
    let betas: Vec<f64> = cfg.list("riccati.betas")?;
    let horizon: Option<f64> = cfg
        .get("riccati.horizon")
        .map(|_| cfg.parsed("riccati.horizon"))
        .transpose()?;
    let mut rows = Vec::new();
    for (id, p) in &profiles {
        for &beta in &betas {
            let t = first_conjugate_time(p, beta)?;
            let mut row = RiccatiRow {
                profile: id.clone(),
                beta,
                conjugate_time: t,
                u_minus: None,
                u_plus: None,
                gap: None,
                convergence: None,
                verdict: String::new(),
                rank_one: p.max_abs_k() <= 1e-10,
                monotone: None,
                riccati_residual: None,
            };
            match hyperbolicity_gap(p, beta, horizon) {
                Ok(h) => {
                    row.u_minus = Some(h.green.minus.at_zero());
                    row.u_plus = Some(h.green.plus.at_zero());
                    row.gap = Some(h.gap);
                    row.convergence = Some(h.convergence);
                    row.monotone = Some(h.green.monotone);
                    let res = h
                        .green
                        .minus
                        .riccati_residual
                        .max(h.green.plus.riccati_residual);
                    row.riccati_residual = Some(res);
                    row.verdict = if h.hyperbolic {
                        "hyperbolic"
                    } else {
                        "not hyperbolic"
                    }
                    .into();
                    report.verdicts.push(Verdict::at_least(
                        &format!("{id} β={beta} ordering"),
                        if h.ordered { 1.0 } else { 0.0 },
                        1.0,
                    ));
                    report.verdicts.push(Verdict::at_least(
                        &format!("{id} β={beta} monotone ladder"),
                        if h.green.monotone { 1.0 } else { 0.0 },
                        1.0,
                    ));
                }
                Err(Error::ConjugatePoint { .. }) => row.verdict = "conjugate point".into(),
                Err(e) => return Err(e),
            }
            rows.push(row);
        }
    }
    report.table("riccati", &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct SingularValueRow {
    index: usize,
    sigma: f64,
}

fn run_xray(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let metric = cfg.metric()?;
    if metric.domain() != Domain::Disc {
        return Err(Error::config(
            "metric.domain",
            "ray transforms need metric.domain = disc",
        ));
    }
    let m: u32 = cfg.parsed("xray.m")?;
    let basis: usize = cfg.parsed("xray.basis")?;
    if basis == 0 {
        return Err(Error::config("xray.basis", "basis size must be positive"));
    }
    let tol = cfg.tolerance("tol.kernel")?;
    let fan = BoundaryFan::new(&metric, cfg.parsed("fan.nb")?, cfg.parsed("fan.na")?)?;
    let spectrum = sinjectivity_spectrum(m, basis, &fan)?;
    let svs: Vec<SingularValueRow> = spectrum
        .singular_values
        .iter()
        .enumerate()
        .map(|(index, sigma)| SingularValueRow {
            index,
            sigma: *sigma,
        })
        .collect();
    report.table("singular_values", &svs)?;
    report.table("ladder", &spectrum.ladder)?;
    for rung in &spectrum.ladder {
        report.verdicts.push(Verdict::at_most(
            &format!("injected potential B={}", rung.basis_size),
            rung.injected_sigma / rung.sigma_max,
            tol,
        ));
    }
    let mut kernel: f64 = 0.0;
    for h in potential_basis(&metric, 1, 2)?.iter().take(10) {
        let dh = h.derivative();
        let scale = dh
            .components()
            .iter()
            .map(|c| c.poly.max_abs_coeff())
            .fold(0.0, f64::max);
        let v = ray_transform(&dh, &fan)?;
        kernel = kernel.max(v.iter().map(|c| c.norm()).fold(0.0, f64::max) / scale);
    }
    report
        .verdicts
        .push(Verdict::at_most("potential kernel", kernel, tol));
    let volume = santalo_integral(|_| 1.0, &fan);
    report.table(
        "santalo",
        &[serde_json::json!({ "integrand": "1", "value": volume, "rays": fan.len() })],
    )?;
    Ok(())
}

#[derive(Serialize)]
struct CertificateRow {
    n: u32,
    m0: u32,
    tail_terms: usize,
    partial_product: f64,
    tail_first_term: f64,
    tail_integral: f64,
    certified_upper_bound: f64,
    bound_only: bool,
}

fn run_constants(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let ns: Vec<u32> = cfg.list("constants.n")?;
    let m_max: u32 = cfg.parsed("constants.m_max")?;
    let tail: usize = cfg.parsed("constants.tail_terms")?;
    let ms: Vec<u32> = (0..=m_max).collect();
    report.table("constants", &constants_table(&ns, &ms)?)?;
    let mut certs = Vec::new();
    for &n in &ns {
        for m0 in 0..=m_max.min(3) {
            let a = a_constant(n, m0, tail)?;
            certs.push(CertificateRow {
                n,
                m0,
                tail_terms: a.tail_terms,
                partial_product: a.partial_product,
                tail_first_term: a.tail_first_term,
                tail_integral: a.tail_integral,
                certified_upper_bound: a.certified_upper_bound,
                bound_only: a.bound_only,
            });
            if n == 3 && m0 == 0 {
                report.verdicts.push(Verdict::at_most(
                    "A_3(0) certificate",
                    a.certified_upper_bound,
                    1.13,
                ));
            }
        }
    }
    report.table("certificates", &certs)?;
    let mut worst = f64::INFINITY;
    for n in 2..=50 {
        for m in 2..=50 {
            let c = controlled_from_beta(beta_threshold(n, m)?.beta)?;
            worst = worst.min(c - alpha_threshold(n, m)?.alpha);
        }
    }
    report
        .verdicts
        .push(Verdict::at_least("beta control minus alpha", worst, -1e-12));
    Ok(())
}

/// JSON formatter printing every float with 17 significant digits.
struct FixedFloats;

impl serde_json::ser::Formatter for FixedFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn report_json(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloats);
    report
        .serialize(&mut ser)
        .map_err(|e| Error::InvalidArgument(format!("serializing report: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.to_string(),
            (_, Some(u)) => u.to_string(),
            _ => format!("{:.16e}", n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn table_csv(rows: &[Value]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = match rows.first() {
        Some(Value::Object(map)) => map.keys().cloned().collect(),
        Some(_) => vec!["value".into()],
        None => Vec::new(),
    };
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    if !header.is_empty() {
        w.write_record(&header).map_err(to_io)?;
    }
    for row in rows {
        let record: Vec<String> = match row {
            Value::Object(map) => header
                .iter()
                .map(|h| map.get(h).map(cell).unwrap_or_default())
                .collect(),
            other => vec![cell(other)],
        };
        w.write_record(&record).map_err(to_io)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

/// Writes `report.json` and `timing.json`, and/or `tables/<name>.csv`.
pub fn emit_report(
    report: &ExperimentReport,
    dir: &Path,
    formats: &[Format],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if formats.contains(&Format::Json) {
        let path = dir.join("report.json");
        std::fs::write(&path, report_json(report)?)?;
        written.push(path);
        let timing = dir.join("timing.json");
        std::fs::write(
            &timing,
            format!(
                "{{\"wall_clock_seconds\":{:.16e}}}\n",
                report.wall_clock_seconds
            ),
        )?;
        written.push(timing);
    }
    if formats.contains(&Format::Csv) {
        let tables = dir.join("tables");
        std::fs::create_dir_all(&tables)?;
        for (name, rows) in &report.tables {
            let path = tables.join(format!("{name}.csv"));
            std::fs::write(&path, table_csv(rows)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Machine-readable form of a failed run.
pub fn error_record(err: &Error) -> Value {
    let kind = match err {
        Error::Domain { .. } => "domain",
        Error::Trapped { .. } => "trapped",
        Error::NonTrapping { .. } => "non_trapping",
        Error::BandOverflow { .. } => "band_overflow",
        Error::MetricMismatch => "metric_mismatch",
        Error::Precondition(_) => "precondition",
        Error::Solver { .. } => "solver",
        Error::NotSolenoidal { .. } => "not_solenoidal",
        Error::ConjugatePoint { .. } => "conjugate_point",
        Error::StaleFan => "stale_fan",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Config { .. } => "config",
        Error::Io(_) => "io",
    };
    serde_json::json!({ "error": kind, "message": err.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_shapes() {
        assert_eq!(
            key_shape("metric.lambda.cos[1][0]"),
            "metric.lambda.cos[#][#]"
        );
        assert_eq!(
            key_shape("metric.lambda.sin[-2][3]"),
            "metric.lambda.sin[#][#]"
        );
        assert_eq!(key_shape("profile.12.kind"), "profile.#.kind");
        assert_eq!(key_shape("grid.n"), "grid.n");
    }

    #[test]
    fn config_round_trip() {
        let text = "subcommand = invariant\n# comment\nmetric.lambda.cos[1][0] = 0.1\ngrid.n = 16\nseed = 7\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        let r = cfg.resolved().unwrap();
        assert_eq!(ExperimentConfig::parse(&r.to_text()).unwrap(), r);
        let m = cfg.metric().unwrap();
        assert!(!m.is_flat());
    }

    #[test]
    fn config_errors_name_the_field() {
        for (text, path) in [
            ("grid.bogus = 1", "grid.bogus"),
            ("subcommand = nope", "subcommand"),
            ("grid.n", "line 1"),
            ("grid.n = 1\ngrid.n = 2", "grid.n"),
        ] {
            match ExperimentConfig::parse(text) {
                Err(Error::Config { path: p, .. }) => assert_eq!(p, path),
                other => panic!("{text}: {other:?}"),
            }
        }
        let mut cfg = ExperimentConfig::new(Subcommand::Invariant);
        cfg.set("invariant.j_max", 7).unwrap();
        match run(&cfg) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "invariant.j_max");
                assert!(message.contains("N_theta"));
            }
            other => panic!("{other:?}"),
        }
        let cfg = ExperimentConfig::new(Subcommand::Beurling);
        assert!(matches!(run(&cfg), Err(Error::Config { path, .. }) if path == "seed"));
        let mut cfg = ExperimentConfig::new(Subcommand::VerifyIdentities);
        cfg.set("seed", 1).unwrap();
        cfg.set("tol.identity", -1).unwrap();
        assert!(matches!(run(&cfg), Err(Error::Config { path, .. }) if path == "tol.identity"));
    }

    #[test]
    fn csv_and_json_shapes() {
        let rows = vec![
            serde_json::json!({"a": 1, "b": 0.5}),
            serde_json::json!({"a": 2, "b": null}),
            serde_json::json!({"a": 3, "b": true}),
        ];
        let text = String::from_utf8(table_csv(&rows).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap(), "a,b");
        assert!(table_csv(&[]).unwrap().is_empty());

        let mut cfg = ExperimentConfig::new(Subcommand::Constants);
        cfg.set("constants.m_max", 2).unwrap();
        let r = run(&cfg).unwrap();
        assert!(r.passed);
        let json = String::from_utf8(report_json(&r).unwrap()).unwrap();
        assert!(json.contains("1.4142135623730951e0"));
        let back: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(back["subcommand"], "constants");
    }

    #[test]
    fn empty_survey_is_a_valid_report() {
        let mut cfg = ExperimentConfig::new(Subcommand::Beurling);
        cfg.set("seed", 3).unwrap();
        cfg.set("beurling.trials", 0).unwrap();
        cfg.set("beurling.minimality", 0).unwrap();
        cfg.set("grid.n", 8).unwrap();
        let r = run(&cfg).unwrap();
        assert_eq!(r.row_count(), 0);
        assert!(r.passed);
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&r, dir.path(), &[Format::Json, Format::Csv]).unwrap();
        assert!(files.iter().any(|p| p.ends_with("report.json")));
    }
}
