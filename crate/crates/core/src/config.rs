//! Run configuration: sectioned `key = value` text.
//!
//! ```text
//! [grid]
//! itot = 64
//! [schedule]
//! diffuse_tke = lane_width=64 collapse=3
//! ```
//!
//! `#` starts a comment. Unknown sections and keys are errors. Every key has
//! a default; [`Config::to_text`] prints the fully resolved configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::dynamics::AdvectionScheme;
use crate::fields::BaseStateConfig;
use crate::grid::{GridConfig, GridError, Vertical};
use crate::microphys::{FallSpeed, MicroConfig, SedimentStrategy};
use crate::sched::{Schedule, ScheduleError};
use crate::subgrid::SubgridConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value` or `[section]`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown section `[{name}]`")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: key `{key}` outside any section")]
    NoSection { line: usize, key: String },
    #[error("unknown key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("bad value `{value}` for [{section}] {key}: {reason}")]
    Value { section: String, key: String, value: String, reason: String },
    #[error("schedule for `{kernel}`: {source}")]
    Schedule { kernel: String, source: ScheduleError },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Kernels whose schedule can be set in `[schedule]`.
pub const KERNELS: [&str; 8] =
    ["diffuse_tke", "tke_sources", "diffuse_scalars", "diffuse_momentum", "advec_2nd", "advec_6th", "advec_momentum", "range_reduction"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Fixed step count; overrides `model_minutes` when set.
    pub steps: Option<u64>,
    pub model_minutes: f64,
    /// Untimed steps run and checkpointed before the measured run.
    pub spinup_steps: u64,
    /// Model seconds between statistics samples.
    pub stats_interval: f64,
    pub cfl_max: f64,
    pub dt_max: f64,
    /// Upper bound on `dt` times the largest explicit diffusion rate.
    pub dnum_max: f64,
    pub advection: AdvectionScheme,
    pub n_scalars: usize,
    pub n_iter: usize,
    pub checkpoint: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            steps: None,
            model_minutes: 10.0,
            spinup_steps: 0,
            stats_interval: 60.0,
            cfl_max: 1.0,
            dt_max: 10.0,
            dnum_max: 1.0,
            advection: AdvectionScheme::Second,
            n_scalars: 2,
            n_iter: 5,
            checkpoint: true,
        }
    }
}

/// Forcings, surface fluxes and the initial profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsConfig {
    pub base: BaseStateConfig,
    pub subgrid: SubgridConfig,
    pub micro: MicroConfig,
    /// Bulk drag coefficient.
    pub cd: f64,
    /// Surface kinematic heat flux [K m/s].
    pub wthl: f64,
    /// Surface kinematic moisture flux [m/s].
    pub wqt: f64,
    pub ug: f64,
    pub vg: f64,
    pub fcor: f64,
    /// Prescribed radiative tendency of thl [K/day], applied below `rad_top`.
    pub rad_rate: f64,
    pub rad_top: f64,
    pub thl_ml: f64,
    pub qt_ml: f64,
    pub ml_height: f64,
    pub thl_lapse: f64,
    pub qt_lapse: f64,
    pub qt_min: f64,
    pub u0: f64,
    pub v0: f64,
    pub e0: f64,
    pub bubble_amp: f64,
    pub bubble_radius: f64,
    pub bubble_height: f64,
    pub noise_thl: f64,
    pub noise_qt: f64,
    /// Levels (from the bottom) that get random perturbations.
    pub noise_levels: usize,
}

impl PhysicsConfig {
    pub fn new(ktot: usize) -> PhysicsConfig {
        PhysicsConfig {
            base: BaseStateConfig::default(),
            subgrid: SubgridConfig::new(ktot),
            micro: MicroConfig::default(),
            cd: 1e-3,
            wthl: 0.05,
            wqt: 5e-5,
            ug: 5.0,
            vg: 0.0,
            fcor: 1e-4,
            rad_rate: -2.0,
            rad_top: 2000.0,
            thl_ml: 298.0,
            qt_ml: 0.0155,
            ml_height: 800.0,
            thl_lapse: 5e-3,
            qt_lapse: -4e-6,
            qt_min: 2e-3,
            u0: 5.0,
            v0: 0.0,
            e0: 0.1,
            bubble_amp: 1.5,
            bubble_radius: 400.0,
            bubble_height: 300.0,
            noise_thl: 0.1,
            noise_qt: 2.5e-5,
            noise_levels: 4,
        }
    }
}

/// Per-kernel schedules with a fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSchedules {
    pub default: Schedule,
    pub kernels: BTreeMap<String, Schedule>,
}

impl Default for KernelSchedules {
    fn default() -> Self {
        KernelSchedules { default: Schedule::default(), kernels: BTreeMap::new() }
    }
}

impl KernelSchedules {
    pub fn get(&self, kernel: &str) -> Schedule {
        self.kernels.get(kernel).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub grid: GridConfig,
    pub halo: usize,
    pub run: RunConfig,
    pub physics: PhysicsConfig,
    pub schedules: KernelSchedules,
    pub px: usize,
    pub py: usize,
    pub workers: usize,
}

impl Default for Config {
    fn default() -> Self {
        let grid = GridConfig { itot: 64, jtot: 64, ktot: 32, dx: 100.0, dy: 100.0, vertical: Vertical::Uniform { height: 3200.0 } };
        Config {
            physics: PhysicsConfig::new(grid.ktot),
            grid,
            halo: 3,
            run: RunConfig::default(),
            schedules: KernelSchedules::default(),
            px: 1,
            py: 1,
            workers: 1,
        }
    }
}

fn parse_val<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Value { section: section.into(), key: key.into(), value: value.into(), reason: e.to_string() })
}

fn parse_list(section: &str, key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value.split(',').map(|p| parse_val::<f64>(section, key, p.trim())).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        Config::default().overlay(text)
    }

    pub fn load(path: &std::path::Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Config::parse(&text)
    }

    /// Applies the settings in `text` on top of `self`.
    pub fn overlay(mut self, text: &str) -> Result<Config, ConfigError> {
        let mut section: Option<String> = None;
        let mut nuf: Option<Vec<f64>> = None;
        let ktot_before = self.grid.ktot;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["grid", "run", "physics", "schedule", "parallel"].contains(&name) {
                    return Err(ConfigError::UnknownSection { line: n + 1, name: name.into() });
                }
                section = Some(name.into());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: n + 1, text: raw.into() })?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.as_deref().ok_or_else(|| ConfigError::NoSection { line: n + 1, key: key.into() })?;
            if sec == "physics" && key == "nuf" {
                nuf = Some(parse_list(sec, key, value)?);
                continue;
            }
            self.set(sec, key, value)?;
        }
        if let Some(nuf) = nuf {
            self.physics.subgrid.nuf = nuf;
        } else if self.grid.ktot != ktot_before {
            self.physics.subgrid.nuf = vec![2.0; self.grid.ktot];
        }
        if self.physics.subgrid.nuf.len() != self.grid.ktot {
            return Err(ConfigError::Value {
                section: "physics".into(),
                key: "nuf".into(),
                value: join(&self.physics.subgrid.nuf),
                reason: format!("expected {} levels", self.grid.ktot),
            });
        }
        Ok(self)
    }

    fn set(&mut self, sec: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let unknown = || ConfigError::UnknownKey { section: sec.into(), key: key.into() };
        macro_rules! p {
            ($t:ty) => {
                parse_val::<$t>(sec, key, value)?
            };
        }
        match sec {
            "grid" => match key {
                "itot" => self.grid.itot = p!(usize),
                "jtot" => self.grid.jtot = p!(usize),
                "ktot" => self.grid.ktot = p!(usize),
                "dx" => self.grid.dx = p!(f64),
                "dy" => self.grid.dy = p!(f64),
                "height" => self.grid.vertical = Vertical::Uniform { height: p!(f64) },
                "dzf" => self.grid.vertical = Vertical::Levels(parse_list(sec, key, value)?),
                "halo" => self.halo = p!(usize),
                _ => return Err(unknown()),
            },
            "run" => {
                let r = &mut self.run;
                match key {
                    "seed" => r.seed = p!(u64),
                    "steps" => r.steps = if value == "none" { None } else { Some(p!(u64)) },
                    "model_minutes" => r.model_minutes = p!(f64),
                    "spinup_steps" => r.spinup_steps = p!(u64),
                    "stats_interval" => r.stats_interval = p!(f64),
                    "cfl_max" => r.cfl_max = p!(f64),
                    "dt_max" => r.dt_max = p!(f64),
                    "dnum_max" => r.dnum_max = p!(f64),
                    "advection" => r.advection = p!(AdvectionScheme),
                    "n_scalars" => r.n_scalars = p!(usize),
                    "n_iter" => r.n_iter = p!(usize),
                    "checkpoint" => r.checkpoint = p!(bool),
                    _ => return Err(unknown()),
                }
            }
            "physics" => {
                let ph = &mut self.physics;
                let f = || parse_val::<f64>(sec, key, value);
                match key {
                    "ps" => ph.base.ps = f()?,
                    "theta0" => ph.base.theta0 = f()?,
                    "cm" => ph.subgrid.cm = f()?,
                    "cn" => ph.subgrid.cn = f()?,
                    "ce" => ph.subgrid.ce = f()?,
                    "e_min" => ph.subgrid.e_min = f()?,
                    "prandtl" => ph.subgrid.prandtl = f()?,
                    "k1" => ph.micro.k1 = f()?,
                    "ql_crit" => ph.micro.ql_crit = f()?,
                    "k2" => ph.micro.k2 = f()?,
                    "qr_min" => ph.micro.qr_min = f()?,
                    "fall_speed" => {
                        ph.micro.fall = if value == "kessler" { FallSpeed::Kessler } else { FallSpeed::Constant(f()?) };
                    }
                    "sedimentation" => {
                        ph.micro.strategy = value.parse::<SedimentStrategy>().map_err(|reason| ConfigError::Value {
                            section: sec.into(),
                            key: key.into(),
                            value: value.into(),
                            reason,
                        })?
                    }
                    "cd" => ph.cd = f()?,
                    "wthl" => ph.wthl = f()?,
                    "wqt" => ph.wqt = f()?,
                    "ug" => ph.ug = f()?,
                    "vg" => ph.vg = f()?,
                    "fcor" => ph.fcor = f()?,
                    "rad_rate" => ph.rad_rate = f()?,
                    "rad_top" => ph.rad_top = f()?,
                    "thl_ml" => ph.thl_ml = f()?,
                    "qt_ml" => ph.qt_ml = f()?,
                    "ml_height" => ph.ml_height = f()?,
                    "thl_lapse" => ph.thl_lapse = f()?,
                    "qt_lapse" => ph.qt_lapse = f()?,
                    "qt_min" => ph.qt_min = f()?,
                    "u0" => ph.u0 = f()?,
                    "v0" => ph.v0 = f()?,
                    "e0" => ph.e0 = f()?,
                    "bubble_amp" => ph.bubble_amp = f()?,
                    "bubble_radius" => ph.bubble_radius = f()?,
                    "bubble_height" => ph.bubble_height = f()?,
                    "noise_thl" => ph.noise_thl = f()?,
                    "noise_qt" => ph.noise_qt = f()?,
                    "noise_levels" => ph.noise_levels = p!(usize),
                    _ => return Err(unknown()),
                }
            }
            "schedule" => {
                let sched = value.parse::<Schedule>().map_err(|source| ConfigError::Schedule { kernel: key.into(), source })?;
                if key == "default" {
                    self.schedules.default = sched;
                } else if KERNELS.contains(&key) {
                    self.schedules.kernels.insert(key.into(), sched);
                } else {
                    return Err(unknown());
                }
            }
            "parallel" => match key {
                "px" => self.px = p!(usize),
                "py" => self.py = p!(usize),
                "workers" => self.workers = p!(usize),
                _ => return Err(unknown()),
            },
            _ => return Err(unknown()),
        }
        Ok(())
    }

    /// The resolved configuration; parsing it back gives an equal `Config`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        let _ = writeln!(s, "[grid]\nitot = {}\njtot = {}\nktot = {}\ndx = {}\ndy = {}", g.itot, g.jtot, g.ktot, g.dx, g.dy);
        match &g.vertical {
            Vertical::Uniform { height } => {
                let _ = writeln!(s, "height = {height}");
            }
            Vertical::Levels(l) => {
                let _ = writeln!(s, "dzf = {}", join(l));
            }
        }
        let _ = writeln!(s, "halo = {}", self.halo);
        let r = &self.run;
        let steps = r.steps.map_or("none".to_string(), |n| n.to_string());
        let _ = writeln!(
            s,
            "\n[run]\nseed = {}\nsteps = {}\nmodel_minutes = {}\nspinup_steps = {}\nstats_interval = {}\ncfl_max = {}\ndt_max = {}\ndnum_max = {}\nadvection = {}\nn_scalars = {}\nn_iter = {}\ncheckpoint = {}",
            r.seed, steps, r.model_minutes, r.spinup_steps, r.stats_interval, r.cfl_max, r.dt_max, r.dnum_max, r.advection.order(), r.n_scalars, r.n_iter, r.checkpoint
        );
        let ph = &self.physics;
        let fall = match ph.micro.fall {
            FallSpeed::Kessler => "kessler".to_string(),
            FallSpeed::Constant(w) => w.to_string(),
        };
        let strategy = match ph.micro.strategy {
            SedimentStrategy::Sweep => "sweep",
            SedimentStrategy::Accumulate => "accumulate",
        };
        let _ = writeln!(s, "\n[physics]");
        let pairs: Vec<(&str, String)> = vec![
            ("ps", ph.base.ps.to_string()),
            ("theta0", ph.base.theta0.to_string()),
            ("cm", ph.subgrid.cm.to_string()),
            ("cn", ph.subgrid.cn.to_string()),
            ("ce", ph.subgrid.ce.to_string()),
            ("e_min", ph.subgrid.e_min.to_string()),
            ("prandtl", ph.subgrid.prandtl.to_string()),
            ("nuf", join(&ph.subgrid.nuf)),
            ("k1", ph.micro.k1.to_string()),
            ("ql_crit", ph.micro.ql_crit.to_string()),
            ("k2", ph.micro.k2.to_string()),
            ("qr_min", ph.micro.qr_min.to_string()),
            ("fall_speed", fall),
            ("sedimentation", strategy.to_string()),
            ("cd", ph.cd.to_string()),
            ("wthl", ph.wthl.to_string()),
            ("wqt", ph.wqt.to_string()),
            ("ug", ph.ug.to_string()),
            ("vg", ph.vg.to_string()),
            ("fcor", ph.fcor.to_string()),
            ("rad_rate", ph.rad_rate.to_string()),
            ("rad_top", ph.rad_top.to_string()),
            ("thl_ml", ph.thl_ml.to_string()),
            ("qt_ml", ph.qt_ml.to_string()),
            ("ml_height", ph.ml_height.to_string()),
            ("thl_lapse", ph.thl_lapse.to_string()),
            ("qt_lapse", ph.qt_lapse.to_string()),
            ("qt_min", ph.qt_min.to_string()),
            ("u0", ph.u0.to_string()),
            ("v0", ph.v0.to_string()),
            ("e0", ph.e0.to_string()),
            ("bubble_amp", ph.bubble_amp.to_string()),
            ("bubble_radius", ph.bubble_radius.to_string()),
            ("bubble_height", ph.bubble_height.to_string()),
            ("noise_thl", ph.noise_thl.to_string()),
            ("noise_qt", ph.noise_qt.to_string()),
            ("noise_levels", ph.noise_levels.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "\n[schedule]\ndefault = {}", self.schedules.default);
        for (k, v) in &self.schedules.kernels {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "\n[parallel]\npx = {}\npy = {}\nworkers = {}", self.px, self.py, self.workers);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn overrides_and_errors() {
        let c = Config::parse("[grid]\nktot = 8 # levels\n[schedule]\ndiffuse_tke = lane_width=64 tile=8x4x2\n").unwrap();
        assert_eq!(c.physics.subgrid.nuf.len(), 8);
        assert_eq!(c.schedules.get("diffuse_tke").tile, Some([8, 4, 2]));
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        assert!(matches!(Config::parse("[grid]\ncolour = 3"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(Config::parse("[weather]"), Err(ConfigError::UnknownSection { .. })));
        assert!(matches!(Config::parse("itot = 3"), Err(ConfigError::NoSection { .. })));
        assert!(matches!(Config::parse("[grid]\nitot = x"), Err(ConfigError::Value { .. })));
        assert!(matches!(Config::parse("[schedule]\nbogus = collapse=3"), Err(ConfigError::UnknownKey { .. })));
    }
}
