//! Run configuration: INI-style sections, `--section.key=value` overrides,
//! defaults carrying the standard training protocol (500 steps, lr 0.1,
//! noise 1e-4, LKJ eta 5.0).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use volt::error::VoltError;
use volt::gpcv::IntertaskSpec;
use volt::kernels::latlon_to_unit;
use volt::means::{MaMode, MaVariant};
use volt::model::{ForecastConfig, MeanSpec, VoltConfig};
use volt::timeseries::{LoadSpec, DAILY_DT};

pub type Result<T> = std::result::Result<T, VoltError>;

fn invalid(key: &str, reason: impl Into<String>) -> VoltError {
    VoltError::InvalidParam {
        name: key.to_string(),
        reason: reason.into(),
    }
}

/// Flat `(section, key) -> value` store with typed accessors.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    values: BTreeMap<(String, String), String>,
}

impl KvConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    invalid("config", format!("line {}: unterminated section header", lineno + 1))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                invalid("config", format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(&section, key.trim(), value.trim());
        }
        Ok(cfg)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.values
            .insert((section.to_string(), key.to_string()), value.to_string());
    }

    /// Apply one `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| invalid("override", format!("expected section.key=value, got {spec:?}")))?;
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| invalid("override", format!("expected section.key=value, got {spec:?}")))?;
        self.set(section.trim(), key.trim(), value.trim());
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(|s| s.as_str())
    }

    fn qualified(section: &str, key: &str) -> String {
        format!("{section}.{key}")
    }

    pub fn get_f64(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| invalid(&Self::qualified(section, key), format!("not a number: {v:?}"))),
        }
    }

    pub fn get_usize(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                invalid(&Self::qualified(section, key), format!("not a count: {v:?}"))
            }),
        }
    }

    pub fn get_u64(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                invalid(&Self::qualified(section, key), format!("not an integer: {v:?}"))
            }),
        }
    }

    pub fn get_bool(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(invalid(
                &Self::qualified(section, key),
                format!("not a boolean: {v:?}"),
            )),
        }
    }

    pub fn get_str(&self, section: &str, key: &str, default: &str) -> String {
        self.get(section, key).unwrap_or(default).to_string()
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: VoltConfig,
    pub forecast: ForecastConfig,
    pub eval: EvalConfig,
    pub multitask: MultitaskConfig,
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub path: String,
    pub time_column: String,
    pub value_column: String,
    pub dt: f64,
    pub log_shift: f64,
}

impl DataConfig {
    pub fn load_spec(&self, value_column: &str) -> LoadSpec {
        LoadSpec {
            time_column: self.time_column.clone(),
            value_column: value_column.to_string(),
            dt: self.dt,
            label: value_column.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub grid_step: f64,
    pub window: (usize, usize),
    pub nll_space: volt::eval::NllSpace,
    pub nll_mixture: bool,
}

impl EvalConfig {
    pub fn grid(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut p = self.grid_step;
        while p < 1.0 - 1e-9 {
            out.push((p * 1e9).round() / 1e9);
            p += self.grid_step;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MultitaskConfig {
    /// Value columns forming the panel; empty means single task.
    pub tasks: Vec<String>,
    pub intertask: String,
    pub eta: f64,
    /// lat:lon pairs for the geodesic intertask kernel.
    pub coords: Vec<(f64, f64)>,
    pub geodesic_sigma: f64,
}

impl MultitaskConfig {
    pub fn intertask_spec(&self, p: usize) -> Result<IntertaskSpec> {
        match self.intertask.as_str() {
            "rank_one" | "rank-one" | "rank_one_plus_diag" => {
                Ok(IntertaskSpec::RankOnePlusDiag { eta: self.eta })
            }
            "identity" => {
                let rows = (0..p)
                    .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                    .collect();
                Ok(IntertaskSpec::Fixed(rows))
            }
            "geodesic" => {
                if self.coords.len() != p {
                    return Err(invalid(
                        "multitask.coords",
                        format!("need {p} lat:lon pairs, got {}", self.coords.len()),
                    ));
                }
                Ok(IntertaskSpec::Geodesic {
                    coords: self
                        .coords
                        .iter()
                        .map(|&(lat, lon)| latlon_to_unit(lat, lon))
                        .collect(),
                    sigma_init: self.geodesic_sigma,
                })
            }
            other => Err(invalid(
                "multitask.intertask",
                format!("unknown intertask spec {other:?} (rank_one | identity | geodesic)"),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub kind: String,
    pub n: usize,
    pub dt: f64,
    pub seed: u64,
    pub mu_s: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub rho: f64,
    pub v0: f64,
    pub s0: f64,
    pub tasks: usize,
    pub task_corr: f64,
}

impl RunConfig {
    pub fn resolve(kv: &KvConfig) -> Result<RunConfig> {
        let env_seed: u64 = match std::env::var("VOLT_SEED") {
            Ok(v) => v
                .parse()
                .map_err(|_| invalid("VOLT_SEED", format!("not an integer: {v:?}")))?,
            Err(_) => 0,
        };

        let data = DataConfig {
            path: kv.get_str("data", "path", ""),
            time_column: kv.get_str("data", "time_column", "time"),
            value_column: kv.get_str("data", "value_column", "value"),
            dt: match kv.get("data", "dt") {
                Some("daily") => DAILY_DT,
                _ => kv.get_f64("data", "dt", DAILY_DT)?,
            },
            log_shift: kv.get_f64("data", "log_shift", 0.0)?,
        };
        if data.dt <= 0.0 {
            return Err(invalid("data.dt", "must be > 0"));
        }
        if data.log_shift < 0.0 {
            return Err(invalid("data.log_shift", "must be >= 0"));
        }

        let mean = match kv.get_str("model", "mean", "constant").as_str() {
            "constant" => MeanSpec::Constant,
            "linear" => MeanSpec::Linear,
            "magpie" => {
                let variant = match kv.get_str("model", "magpie_variant", "ema").as_str() {
                    "ema" => MaVariant::Ema,
                    "dema" => MaVariant::Dema,
                    "tema" => MaVariant::Tema,
                    other => {
                        return Err(invalid(
                            "model.magpie_variant",
                            format!("unknown variant {other:?} (ema | dema | tema)"),
                        ))
                    }
                };
                let mode = match kv.get_str("model", "magpie_mode", "normalized").as_str() {
                    "normalized" => MaMode::Normalized,
                    "literal" => MaMode::Literal,
                    other => {
                        return Err(invalid(
                            "model.magpie_mode",
                            format!("unknown mode {other:?} (normalized | literal)"),
                        ))
                    }
                };
                let k = kv.get_usize("model", "magpie_k", 100)?;
                if k == 0 {
                    return Err(invalid("model.magpie_k", "must be >= 1"));
                }
                MeanSpec::Magpie { variant, k, mode }
            }
            other => {
                return Err(invalid(
                    "model.mean",
                    format!("unknown mean {other:?} (constant | linear | magpie)"),
                ))
            }
        };
        let model = VoltConfig {
            mean,
            gpcv_steps: kv.get_usize("model", "gpcv_steps", 500)?,
            gpcv_lr: kv.get_f64("model", "gpcv_lr", 0.1)?,
            gpcv_sigma2_init: kv.get_f64("model", "gpcv_sigma2_init", volt::gpcv::SIGMA2_INIT)?,
            gp_steps: kv.get_usize("model", "gp_steps", 500)?,
            gp_lr: kv.get_f64("model", "gp_lr", 0.1)?,
            noise_init: kv.get_f64("model", "noise_init", 1e-4)?,
            j_samples: kv.get_usize("model", "j_samples", 64)?,
            seed: kv.get_u64("model", "seed", env_seed)?,
            vol_drift: kv.get_bool("model", "vol_drift", true)?,
        };
        if model.noise_init <= 1e-8 {
            return Err(invalid("model.noise_init", "must exceed the 1e-8 noise floor"));
        }
        if model.gpcv_lr <= 0.0 || model.gp_lr <= 0.0 {
            return Err(invalid("model.gpcv_lr/gp_lr", "must be > 0"));
        }
        if model.j_samples == 0 {
            return Err(invalid("model.j_samples", "must be >= 1"));
        }
        if model.gpcv_sigma2_init <= 0.0 {
            return Err(invalid("model.gpcv_sigma2_init", "must be > 0"));
        }

        let forecast = ForecastConfig {
            horizon: kv.get_usize("forecast", "horizon", 100)?,
            n_v: kv.get_usize("forecast", "n_v", 10)?,
            n_s: kv.get_usize("forecast", "n_s", 100)?,
            theta: kv.get_f64("forecast", "theta", 0.0)?,
            seed: kv.get_u64("forecast", "seed", env_seed)?,
        };
        if forecast.horizon == 0 {
            return Err(invalid("forecast.horizon", "must be >= 1"));
        }
        if forecast.n_v == 0 || forecast.n_s == 0 {
            return Err(invalid("forecast.n_v/n_s", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&forecast.theta) {
            return Err(invalid("forecast.theta", "must lie in [0, 1]"));
        }

        let eval = EvalConfig {
            grid_step: kv.get_f64("eval", "grid_step", 0.05)?,
            window: (
                kv.get_usize("eval", "window_start", 75)?,
                kv.get_usize("eval", "window_end", 100)?,
            ),
            nll_space: match kv.get_str("eval", "nll_space", "log").as_str() {
                "log" => volt::eval::NllSpace::Log,
                "raw" => volt::eval::NllSpace::Raw,
                other => {
                    return Err(invalid(
                        "eval.nll_space",
                        format!("unknown space {other:?} (log | raw)"),
                    ))
                }
            },
            nll_mixture: kv.get_bool("eval", "nll_mixture", false)?,
        };
        if !(0.0 < eval.grid_step && eval.grid_step < 1.0) {
            return Err(invalid("eval.grid_step", "must lie in (0, 1)"));
        }
        if eval.window.0 == 0 || eval.window.1 < eval.window.0 {
            return Err(invalid("eval.window_start/window_end", "need 1 <= start <= end"));
        }

        let tasks: Vec<String> = kv
            .get_str("multitask", "tasks", "")
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let coords: Vec<(f64, f64)> = {
            let raw = kv.get_str("multitask", "coords", "");
            let mut out = Vec::new();
            for pair in raw.split(',').map(|s| s.trim()).filter(|s| !s.is_empty()) {
                let (lat, lon) = pair.split_once(':').ok_or_else(|| {
                    invalid("multitask.coords", format!("expected lat:lon, got {pair:?}"))
                })?;
                let lat: f64 = lat.trim().parse().map_err(|_| {
                    invalid("multitask.coords", format!("bad latitude {lat:?}"))
                })?;
                let lon: f64 = lon.trim().parse().map_err(|_| {
                    invalid("multitask.coords", format!("bad longitude {lon:?}"))
                })?;
                out.push((lat, lon));
            }
            out
        };
        let multitask = MultitaskConfig {
            tasks,
            intertask: kv.get_str("multitask", "intertask", "rank_one"),
            eta: kv.get_f64("multitask", "eta", 5.0)?,
            coords,
            geodesic_sigma: kv.get_f64("multitask", "geodesic_sigma", 1.0)?,
        };
        if multitask.eta <= 0.0 {
            return Err(invalid("multitask.eta", "must be > 0"));
        }

        let simulate = SimulateConfig {
            kind: kv.get_str("simulate", "kind", "sabr"),
            n: kv.get_usize("simulate", "n", 400)?,
            dt: match kv.get("simulate", "dt") {
                Some("daily") => DAILY_DT,
                _ => kv.get_f64("simulate", "dt", DAILY_DT)?,
            },
            seed: kv.get_u64("simulate", "seed", env_seed)?,
            mu_s: kv.get_f64("simulate", "mu_s", 0.05)?,
            sigma: kv.get_f64("simulate", "sigma", 0.5)?,
            alpha: kv.get_f64("simulate", "alpha", 0.6)?,
            rho: kv.get_f64("simulate", "rho", 0.0)?,
            v0: kv.get_f64("simulate", "v0", 0.2)?,
            s0: kv.get_f64("simulate", "s0", 10.0)?,
            tasks: kv.get_usize("simulate", "tasks", 1)?,
            task_corr: kv.get_f64("simulate", "task_corr", 0.7)?,
        };
        if simulate.n == 0 {
            return Err(invalid("simulate.n", "must be >= 1"));
        }
        if simulate.dt <= 0.0 {
            return Err(invalid("simulate.dt", "must be > 0"));
        }
        if !(-1.0..=1.0).contains(&simulate.rho) {
            return Err(invalid("simulate.rho", "must lie in [-1, 1]"));
        }
        if !(-1.0..1.0).contains(&simulate.task_corr) {
            return Err(invalid("simulate.task_corr", "must lie in [-1, 1)"));
        }
        if simulate.v0 <= 0.0 || simulate.s0 <= 0.0 {
            return Err(invalid("simulate.v0/s0", "must be > 0"));
        }
        if simulate.sigma < 0.0 || simulate.alpha < 0.0 {
            return Err(invalid("simulate.sigma/alpha", "must be >= 0"));
        }

        Ok(RunConfig {
            data,
            model,
            forecast,
            eval,
            multitask,
            simulate,
        })
    }

    /// Resolved configuration in the same INI shape the parser reads.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[data]");
        let _ = writeln!(s, "path = {}", self.data.path);
        let _ = writeln!(s, "time_column = {}", self.data.time_column);
        let _ = writeln!(s, "value_column = {}", self.data.value_column);
        let _ = writeln!(s, "dt = {}", self.data.dt);
        let _ = writeln!(s, "log_shift = {}", self.data.log_shift);
        let _ = writeln!(s, "\n[model]");
        let mean = match self.model.mean {
            MeanSpec::Constant => "constant".to_string(),
            MeanSpec::Linear => "linear".to_string(),
            MeanSpec::Magpie { variant, k, mode } => {
                let v = match variant {
                    MaVariant::Ema => "ema",
                    MaVariant::Dema => "dema",
                    MaVariant::Tema => "tema",
                };
                let m = match mode {
                    MaMode::Normalized => "normalized",
                    MaMode::Literal => "literal",
                };
                let _ = writeln!(s, "magpie_variant = {v}");
                let _ = writeln!(s, "magpie_k = {k}");
                let _ = writeln!(s, "magpie_mode = {m}");
                "magpie".to_string()
            }
        };
        let _ = writeln!(s, "mean = {mean}");
        let _ = writeln!(s, "gpcv_steps = {}", self.model.gpcv_steps);
        let _ = writeln!(s, "gpcv_lr = {}", self.model.gpcv_lr);
        let _ = writeln!(s, "gpcv_sigma2_init = {}", self.model.gpcv_sigma2_init);
        let _ = writeln!(s, "gp_steps = {}", self.model.gp_steps);
        let _ = writeln!(s, "gp_lr = {}", self.model.gp_lr);
        let _ = writeln!(s, "noise_init = {}", self.model.noise_init);
        let _ = writeln!(s, "j_samples = {}", self.model.j_samples);
        let _ = writeln!(s, "seed = {}", self.model.seed);
        let _ = writeln!(s, "vol_drift = {}", self.model.vol_drift);
        let _ = writeln!(s, "\n[forecast]");
        let _ = writeln!(s, "horizon = {}", self.forecast.horizon);
        let _ = writeln!(s, "n_v = {}", self.forecast.n_v);
        let _ = writeln!(s, "n_s = {}", self.forecast.n_s);
        let _ = writeln!(s, "theta = {}", self.forecast.theta);
        let _ = writeln!(s, "seed = {}", self.forecast.seed);
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "grid_step = {}", self.eval.grid_step);
        let _ = writeln!(s, "window_start = {}", self.eval.window.0);
        let _ = writeln!(s, "window_end = {}", self.eval.window.1);
        let _ = writeln!(
            s,
            "nll_space = {}",
            match self.eval.nll_space {
                volt::eval::NllSpace::Log => "log",
                volt::eval::NllSpace::Raw => "raw",
            }
        );
        let _ = writeln!(s, "nll_mixture = {}", self.eval.nll_mixture);
        let _ = writeln!(s, "\n[multitask]");
        let _ = writeln!(s, "tasks = {}", self.multitask.tasks.join(","));
        let _ = writeln!(s, "intertask = {}", self.multitask.intertask);
        let _ = writeln!(s, "eta = {}", self.multitask.eta);
        let _ = writeln!(
            s,
            "coords = {}",
            self.multitask
                .coords
                .iter()
                .map(|(a, b)| format!("{a}:{b}"))
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "geodesic_sigma = {}", self.multitask.geodesic_sigma);
        let _ = writeln!(s, "\n[simulate]");
        let _ = writeln!(s, "kind = {}", self.simulate.kind);
        let _ = writeln!(s, "n = {}", self.simulate.n);
        let _ = writeln!(s, "dt = {}", self.simulate.dt);
        let _ = writeln!(s, "seed = {}", self.simulate.seed);
        let _ = writeln!(s, "mu_s = {}", self.simulate.mu_s);
        let _ = writeln!(s, "sigma = {}", self.simulate.sigma);
        let _ = writeln!(s, "alpha = {}", self.simulate.alpha);
        let _ = writeln!(s, "rho = {}", self.simulate.rho);
        let _ = writeln!(s, "v0 = {}", self.simulate.v0);
        let _ = writeln!(s, "s0 = {}", self.simulate.s0);
        let _ = writeln!(s, "tasks = {}", self.simulate.tasks);
        let _ = writeln!(s, "task_corr = {}", self.simulate.task_corr);
        s
    }
}
