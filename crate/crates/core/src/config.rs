//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment; `[section]` headers are
//! accepted for readability and do not namespace keys. Lists are
//! comma-separated and intervals are written `start:end`. Unknown or
//! repeated keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lattice_weights::{
    build_eta0, build_weight_tables, Mask, SpatialGrid, SubdomainLayout, TimeGrid, DEFAULT_LAMBDA,
    DEFAULT_LOG_CAP, DEFAULT_MU,
};
use crate::noise_tree::{AdaptedField, Lattice};
use crate::parabolic_core::{CouplingField, Matrix2, Propagator, N_COMP};
use crate::picard::PicardSettings;
use crate::systems::{GameSettings, GameSpec, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub length: f64,
    pub n_x: usize,
    pub horizon: f64,
    pub noise_steps: usize,
    pub substeps: usize,
    pub g0: Vec<(f64, f64)>,
    /// One interval per follower.
    pub followers: Vec<(f64, f64)>,
    pub observation: Vec<(f64, f64)>,
    pub o0: Vec<(f64, f64)>,
    pub coupling: Matrix2,
    pub a0: Option<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub scenario: Scenario,
    /// `y0_c = initial_amplitude[c] sin(initial_mode pi x / L)`.
    pub initial_amplitude: [f64; 2],
    pub initial_mode: usize,
    /// Per-follower target amplitude; see [`ExperimentConfig::targets`].
    pub target_amplitude: Vec<f64>,
    pub target_noise: f64,
    pub lambda: f64,
    pub mu: f64,
    pub log_cap: f64,
    pub target_cap: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub relaxation: f64,
    pub nash_tol: f64,
    pub epsilon: f64,
    pub epsilons: Vec<f64>,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub probes: usize,
    pub seed: u64,
    pub observability_mode: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            length: 1.0,
            n_x: 31,
            horizon: 0.5,
            noise_steps: 6,
            substeps: 2,
            g0: vec![(0.3, 0.7)],
            followers: vec![(0.05, 0.25), (0.75, 0.95)],
            observation: vec![(0.2, 0.8)],
            o0: vec![(0.4, 0.6)],
            coupling: [[0.0, 0.5], [10.0, 0.0]],
            a0: Some(1.0),
            alpha: vec![1.0, 2.0],
            beta: vec![100.0, 100.0],
            scenario: Scenario::FullObservation,
            initial_amplitude: [1.0, 0.5],
            initial_mode: 1,
            target_amplitude: vec![0.2, 0.1],
            target_noise: 0.5,
            lambda: DEFAULT_LAMBDA,
            mu: DEFAULT_MU,
            log_cap: DEFAULT_LOG_CAP,
            target_cap: 1e12,
            picard_tol: 1e-11,
            picard_max_iter: 200,
            relaxation: 1.0,
            nash_tol: 1e-9,
            epsilon: 1e-3,
            epsilons: vec![1e-2, 1e-3, 1e-4],
            cg_tol: 1e-8,
            cg_max_iter: 2000,
            probes: 20,
            seed: 20240601,
            observability_mode: "sampled".into(),
        }
    }
}

const KEYS: &[&str] = &[
    "length",
    "n_x",
    "horizon",
    "noise_steps",
    "substeps",
    "g0",
    "followers",
    "observation",
    "o0",
    "a11",
    "a12",
    "a21",
    "a22",
    "a0",
    "alpha",
    "beta",
    "scenario",
    "initial_amplitude",
    "initial_mode",
    "target_amplitude",
    "target_noise",
    "lambda",
    "mu",
    "log_cap",
    "target_cap",
    "picard_tol",
    "picard_max_iter",
    "relaxation",
    "nash_tol",
    "epsilon",
    "epsilons",
    "cg_tol",
    "cg_max_iter",
    "probes",
    "seed",
    "observability_mode",
];

fn bad(key: &str, value: &str, why: &str) -> Error {
    Error::InvalidParameter(format!("key '{key}' = '{value}': {why}"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim().parse().map_err(|_| bad(key, v, "expected a number"))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim().parse().map_err(|_| bad(key, v, "expected a non-negative integer"))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse_f64(key, s)).collect()
}

fn parse_interval(key: &str, v: &str) -> Result<(f64, f64)> {
    let (a, b) = v
        .split_once(':')
        .ok_or_else(|| bad(key, v, "expected an interval start:end"))?;
    let (a, b) = (parse_f64(key, a)?, parse_f64(key, b)?);
    if !(a <= b) {
        return Err(bad(key, v, "interval start exceeds its end"));
    }
    Ok((a, b))
}

fn parse_intervals(key: &str, v: &str) -> Result<Vec<(f64, f64)>> {
    v.split(',').map(|s| parse_interval(key, s)).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

fn fmt_intervals(v: &[(f64, f64)]) -> String {
    v.iter().map(|(a, b)| format!("{a:?}:{b:?}")).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("line {}: expected key = value, got '{line}'", n + 1))
            })?;
            let k = k.trim().to_string();
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::InvalidParameter(format!("line {}: unknown key '{k}'", n + 1)));
            }
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::InvalidParameter(format!("line {}: key '{k}' repeated", n + 1)));
            }
        }
        let mut c = Self::default();
        for (k, v) in &entries {
            let key = k.as_str();
            match key {
                "length" => c.length = parse_f64(key, v)?,
                "n_x" => c.n_x = parse_usize(key, v)?,
                "horizon" => c.horizon = parse_f64(key, v)?,
                "noise_steps" => c.noise_steps = parse_usize(key, v)?,
                "substeps" => c.substeps = parse_usize(key, v)?,
                "g0" => c.g0 = parse_intervals(key, v)?,
                "followers" => c.followers = parse_intervals(key, v)?,
                "observation" => c.observation = parse_intervals(key, v)?,
                "o0" => c.o0 = parse_intervals(key, v)?,
                "a11" => c.coupling[0][0] = parse_f64(key, v)?,
                "a12" => c.coupling[0][1] = parse_f64(key, v)?,
                "a21" => c.coupling[1][0] = parse_f64(key, v)?,
                "a22" => c.coupling[1][1] = parse_f64(key, v)?,
                "a0" => {
                    c.a0 = if v == "none" { None } else { Some(parse_f64(key, v)?) };
                }
                "alpha" => c.alpha = parse_list(key, v)?,
                "beta" => c.beta = parse_list(key, v)?,
                "scenario" => c.scenario = Scenario::parse(v)?,
                "initial_amplitude" => {
                    let l = parse_list(key, v)?;
                    if l.len() != 2 {
                        return Err(bad(key, v, "expected two amplitudes"));
                    }
                    c.initial_amplitude = [l[0], l[1]];
                }
                "initial_mode" => c.initial_mode = parse_usize(key, v)?,
                "target_amplitude" => c.target_amplitude = parse_list(key, v)?,
                "target_noise" => c.target_noise = parse_f64(key, v)?,
                "lambda" => c.lambda = parse_f64(key, v)?,
                "mu" => c.mu = parse_f64(key, v)?,
                "log_cap" => c.log_cap = parse_f64(key, v)?,
                "target_cap" => c.target_cap = parse_f64(key, v)?,
                "picard_tol" => c.picard_tol = parse_f64(key, v)?,
                "picard_max_iter" => c.picard_max_iter = parse_usize(key, v)?,
                "relaxation" => c.relaxation = parse_f64(key, v)?,
                "nash_tol" => c.nash_tol = parse_f64(key, v)?,
                "epsilon" => c.epsilon = parse_f64(key, v)?,
                "epsilons" => c.epsilons = parse_list(key, v)?,
                "cg_tol" => c.cg_tol = parse_f64(key, v)?,
                "cg_max_iter" => c.cg_max_iter = parse_usize(key, v)?,
                "probes" => c.probes = parse_usize(key, v)?,
                "seed" => c.seed = v.trim().parse().map_err(|_| bad(key, v, "expected a u64"))?,
                "observability_mode" => {
                    if v != "sampled" && v != "dense" {
                        return Err(bad(key, v, "expected sampled or dense"));
                    }
                    c.observability_mode = v.clone();
                }
                _ => unreachable!("key list and match arms agree"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let m = self.followers.len();
        if self.alpha.len() != m || self.beta.len() != m || self.target_amplitude.len() != m {
            return Err(Error::InvalidParameter(format!(
                "{m} follower regions need {m} entries in alpha, beta and target_amplitude"
            )));
        }
        if self.initial_mode == 0 {
            return Err(Error::InvalidParameter("initial_mode must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) || self.epsilons.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidParameter("penalisation parameters must be positive".into()));
        }
        if !(self.cg_tol > 0.0 && self.cg_tol <= 1e-2) {
            return Err(Error::InvalidParameter(format!("cg_tol must lie in (0, 1e-2], got {}", self.cg_tol)));
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal configuration.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let a = &self.coupling;
        let lines: Vec<(&str, String)> = vec![
            ("length", format!("{:?}", self.length)),
            ("n_x", self.n_x.to_string()),
            ("horizon", format!("{:?}", self.horizon)),
            ("noise_steps", self.noise_steps.to_string()),
            ("substeps", self.substeps.to_string()),
            ("g0", fmt_intervals(&self.g0)),
            ("followers", fmt_intervals(&self.followers)),
            ("observation", fmt_intervals(&self.observation)),
            ("o0", fmt_intervals(&self.o0)),
            ("a11", format!("{:?}", a[0][0])),
            ("a12", format!("{:?}", a[0][1])),
            ("a21", format!("{:?}", a[1][0])),
            ("a22", format!("{:?}", a[1][1])),
            ("a0", self.a0.map_or("none".to_string(), |v| format!("{v:?}"))),
            ("alpha", fmt_list(&self.alpha)),
            ("beta", fmt_list(&self.beta)),
            ("scenario", self.scenario.name().to_string()),
            ("initial_amplitude", fmt_list(&self.initial_amplitude)),
            ("initial_mode", self.initial_mode.to_string()),
            ("target_amplitude", fmt_list(&self.target_amplitude)),
            ("target_noise", format!("{:?}", self.target_noise)),
            ("lambda", format!("{:?}", self.lambda)),
            ("mu", format!("{:?}", self.mu)),
            ("log_cap", format!("{:?}", self.log_cap)),
            ("target_cap", format!("{:?}", self.target_cap)),
            ("picard_tol", format!("{:?}", self.picard_tol)),
            ("picard_max_iter", self.picard_max_iter.to_string()),
            ("relaxation", format!("{:?}", self.relaxation)),
            ("nash_tol", format!("{:?}", self.nash_tol)),
            ("epsilon", format!("{:?}", self.epsilon)),
            ("epsilons", fmt_list(&self.epsilons)),
            ("cg_tol", format!("{:?}", self.cg_tol)),
            ("cg_max_iter", self.cg_max_iter.to_string()),
            ("probes", self.probes.to_string()),
            ("seed", self.seed.to_string()),
            ("observability_mode", self.observability_mode.clone()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn picard(&self) -> PicardSettings {
        PicardSettings {
            tol: self.picard_tol,
            max_iter: self.picard_max_iter,
            relaxation: self.relaxation,
        }
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(
            SpatialGrid::new(self.length, self.n_x)?,
            TimeGrid::new(self.horizon, self.noise_steps, self.substeps)?,
        )
    }

    pub fn layout(&self, grid: &SpatialGrid) -> Result<SubdomainLayout> {
        SubdomainLayout::new(
            Mask::from_intervals(grid, &self.g0),
            self.followers
                .iter()
                .map(|iv| Mask::from_intervals(grid, std::slice::from_ref(iv)))
                .collect(),
            Mask::from_intervals(grid, &self.observation),
            Mask::from_intervals(grid, &self.o0),
        )
    }

    /// `y0_c(x) = initial_amplitude[c] sin(initial_mode pi x / L)`.
    pub fn initial_state(&self, grid: &SpatialGrid) -> Vec<f64> {
        let k = self.initial_mode as f64 * std::f64::consts::PI / self.length;
        let mut y0 = Vec::with_capacity(N_COMP * grid.n_x());
        for amp in self.initial_amplitude {
            y0.extend(grid.nodes().iter().map(|&x| amp * (k * x).sin()));
        }
        y0
    }

    /// Target of follower `i`, component `c`:
    /// `amp_i (1 - t/T) (sin((c + 1) pi x / L) + target_noise W(t))`.
    pub fn targets(&self, lattice: &Lattice) -> Vec<AdaptedField> {
        let pi = std::f64::consts::PI;
        let nodes = lattice.grid.nodes().to_vec();
        self.target_amplitude
            .iter()
            .map(|&amp| {
                AdaptedField::from_fn(&lattice.time, N_COMP, lattice.n_x(), |m, node, c, j| {
                    let t = lattice.time.time(m);
                    let w = lattice.tree.brownian_value(lattice.level(m), node);
                    let shape = ((c + 1) as f64 * pi * nodes[j] / self.length).sin();
                    amp * (1.0 - t / self.horizon) * (shape + self.target_noise * w)
                })
            })
            .collect()
    }

    pub fn build(&self) -> Result<Experiment> {
        self.build_with(false)
    }

    /// Builds every runtime object; `parallel` enables per-node parallelism
    /// in the sweeps.
    pub fn build_with(&self, parallel: bool) -> Result<Experiment> {
        self.validate()?;
        let lattice = self.lattice()?;
        let layout = self.layout(&lattice.grid)?;
        let params = build_eta0(&lattice.grid, &layout, self.lambda, self.mu)?;
        let weights = build_weight_tables(&params, &lattice.time);
        let coupling = CouplingField::constant(self.coupling, &lattice.time, &lattice.grid)?;
        let propagator = Propagator::new(lattice.clone(), coupling)?.with_parallel(parallel);
        let settings = GameSettings {
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            targets: self.targets(&lattice),
            scenario: self.scenario,
            picard: self.picard(),
            a0: self.a0,
            log_cap: self.log_cap,
            target_cap: self.target_cap,
        };
        let spec = GameSpec::new(propagator, layout, weights, settings)?;
        let y0 = self.initial_state(&lattice.grid);
        Ok(Experiment {
            config: self.clone(),
            spec,
            y0,
        })
    }
}

/// Everything needed to run a solver on one configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spec: GameSpec,
    pub y0: Vec<f64>,
}
