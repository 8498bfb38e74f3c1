//! Flat dotted-key configuration files describing one experiment.
//!
//! Format: one `key = value` pair per line, `#` starts a comment. Values
//! are numbers, bare strings, or bracketed numeric lists `[a, b, c]`.
//! A `preset = exampleN` line loads that experiment's published
//! parameters; any other keys override individual fields. See the README
//! for the full key list.

use crate::delay::Prehistory;
use crate::fem::{SpaceMesh, TimeGrid};
use crate::manufactured::{build_manufactured, ManufacturedAdjoint};
use crate::measures::{ControlGrid, GeneralMeasure, Measure};
use crate::pde::{solve_state, ProblemSpec, Target};
use crate::presets::Experiment;
use crate::reaction::ReactionModel;
use crate::ssn::SsnSettings;
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{file}:{line}: {msg}")]
    Line {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("config: {0}")]
    Build(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Number(f64),
    Text(String),
    List(Vec<f64>),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::Number(_) => "number",
            Value::Text(_) => "string",
            Value::List(_) => "list",
        }
    }
}

fn parse_value(raw: &str) -> Result<Value, String> {
    let s = raw.trim();
    if s.is_empty() {
        return Err("empty value".into());
    }
    if let Some(inner) = s.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| "unterminated list".to_string())?;
        let mut items = Vec::new();
        for part in inner.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            items.push(
                part.parse::<f64>()
                    .map_err(|e| format!("bad list entry '{part}': {e}"))?,
            );
        }
        return Ok(Value::List(items));
    }
    if let Ok(n) = s.parse::<f64>() {
        return Ok(Value::Number(n));
    }
    Ok(Value::Text(s.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReactionConfig {
    Cubic { rho: f64, roots: [f64; 3] },
    Polynomial { coeffs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrehistoryConfig {
    Constant(f64),
    /// Traveling front parameterized by the reaction roots.
    Front { roots: [f64; 3] },
    CosineSquared { amplitude: f64, omega: f64 },
    /// `p(t) sin²(πx)`.
    PolynomialSineSq { coeffs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetConfig {
    Constant(f64),
    CosineSquared { amplitude: f64, omega: f64 },
    /// Target assembled from the optimality system at the given atomic
    /// control (`[t_1, w_1, t_2, w_2, …]`) with adjoint `cos²(πt/2)`.
    Manufactured { atoms: Vec<(f64, f64)> },
    /// Target generated by solving the state equation with an
    /// averaging-window kernel `κ(mean over [a, b] − δ_0)`.
    Kernel { kappa: f64, a: f64, b: f64 },
}

/// All tunables of one experiment, in plain-field form.
#[derive(Debug, Clone)]
pub struct ConfigData {
    pub name: String,
    pub space_interval: (f64, f64),
    pub space_nodes: usize,
    pub time_horizon: f64,
    pub time_steps: usize,
    /// Explicit time nodes (overrides steps/grading).
    pub time_nodes: Option<Vec<f64>>,
    /// Power grading toward `t = 0` (1 = uniform).
    pub time_grading: f64,
    pub reaction: ReactionConfig,
    pub prehistory: PrehistoryConfig,
    pub target: TargetConfig,
    pub nu: f64,
    pub window: Option<(f64, f64)>,
    pub control_horizon: Option<f64>,
    pub control_intervals: usize,
    /// Explicit control nodes (overrides horizon/intervals).
    pub control_nodes: Option<Vec<f64>>,
    /// Reference grid `(space_nodes, time_steps)` on which a derived
    /// target (`manufactured`/`kernel`) is generated before being
    /// transferred to the problem grid. `None` generates on the problem
    /// grid itself.
    pub target_grid: Option<(usize, usize)>,
    pub settings: SsnSettings,
    pub output_dir: Option<String>,
    pub long_running: bool,
}

impl Default for ConfigData {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            space_interval: (0.0, 1.0),
            space_nodes: 33,
            time_horizon: 1.0,
            time_steps: 32,
            time_nodes: None,
            time_grading: 1.0,
            reaction: ReactionConfig::Cubic {
                rho: 1.0,
                roots: [0.0, 0.25, 1.0],
            },
            prehistory: PrehistoryConfig::Constant(1.0),
            target: TargetConfig::Constant(0.25),
            nu: 1e-2,
            window: None,
            control_horizon: None,
            control_intervals: 8,
            control_nodes: None,
            target_grid: None,
            settings: SsnSettings::default(),
            output_dir: None,
            long_running: false,
        }
    }
}

impl ConfigData {
    /// Published parameters of the five experiments.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let sqrt3 = 3f64.sqrt();
        let mut d = ConfigData {
            name: name.to_string(),
            ..ConfigData::default()
        };
        match name {
            "example1" => {
                d.space_nodes = 257;
                d.time_steps = 256;
                d.reaction = ReactionConfig::Cubic {
                    rho: 1.0 / 3.0,
                    roots: [-sqrt3, 0.0, sqrt3],
                };
                d.prehistory = PrehistoryConfig::PolynomialSineSq {
                    coeffs: vec![0.2, 0.2],
                };
                d.target = TargetConfig::Manufactured {
                    atoms: vec![(0.5, -7.7)],
                };
                d.nu = 3.39817e-4;
                d.control_intervals = 27;
            }
            "example2" => {
                d.space_nodes = 65;
                d.time_steps = 64;
                d.reaction = ReactionConfig::Cubic {
                    rho: 1.0 / 3.0,
                    roots: [-sqrt3, 0.0, sqrt3],
                };
                d.prehistory = PrehistoryConfig::PolynomialSineSq {
                    coeffs: vec![0.2, 0.2],
                };
                d.target = TargetConfig::Manufactured {
                    atoms: vec![(0.5, -7.7)],
                };
                // the target is the published problem's data: generated on
                // the reference 257×257 grid and subsampled
                d.target_grid = Some((257, 256));
                d.nu = 1e-2;
                d.control_intervals = 64;
            }
            "example3" => {
                d.space_interval = (-20.0, 20.0);
                d.space_nodes = 513;
                d.time_horizon = 40.0;
                d.time_steps = 777;
                d.time_grading = 1.5;
                d.reaction = ReactionConfig::Cubic {
                    rho: 1.0,
                    roots: [0.0, 0.25, 1.0],
                };
                d.prehistory = PrehistoryConfig::Front {
                    roots: [0.0, 0.25, 1.0],
                };
                d.target = TargetConfig::Kernel {
                    kappa: 0.5,
                    a: 0.456,
                    b: 0.541,
                };
                d.nu = 1e-2;
                d.control_horizon = Some(1.0);
                d.control_intervals = 100;
                d.long_running = true;
            }
            "example4" => {
                d.space_nodes = 65;
                d.time_horizon = 2.0;
                d.time_steps = 512;
                d.reaction = ReactionConfig::Cubic {
                    rho: 1.0,
                    roots: [0.0, 0.25, 1.0],
                };
                d.prehistory = PrehistoryConfig::Constant(1.0);
                d.target = TargetConfig::Constant(0.25);
                d.nu = 1e-3;
                d.window = Some((1.0, 2.0));
                d.control_intervals = 512;
            }
            "example5" => {
                d.space_nodes = 65;
                d.time_horizon = 2.0;
                d.time_steps = 512;
                d.reaction = ReactionConfig::Cubic {
                    rho: 1.0,
                    roots: [0.0, 0.25, 1.0],
                };
                d.prehistory = PrehistoryConfig::CosineSquared {
                    amplitude: 0.5,
                    omega: 2.0 * PI,
                };
                d.target = TargetConfig::CosineSquared {
                    amplitude: 0.5,
                    omega: PI,
                };
                d.nu = 1e-3;
                d.window = Some((1.0, 2.0));
                d.control_intervals = 256;
            }
            "custom" => {}
            other => {
                return Err(ConfigError::Build(format!(
                    "unknown preset '{other}' (expected example1..example5 or custom)"
                )))
            }
        }
        Ok(d)
    }

    /// Parses `text`, starting from the preset named inside (if any).
    pub fn parse(text: &str, file: &str) -> Result<Self, ConfigError> {
        let mut entries: Vec<(usize, String, Value)> = Vec::new();
        let mut preset = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Line {
                file: file.into(),
                line: line_no,
                msg: "expected 'key = value'".into(),
            })?;
            let key = key.trim().to_string();
            let value = parse_value(value).map_err(|msg| ConfigError::Line {
                file: file.into(),
                line: line_no,
                msg,
            })?;
            if key == "preset" {
                match &value {
                    Value::Text(t) => preset = Some((line_no, t.clone())),
                    other => {
                        return Err(ConfigError::Line {
                            file: file.into(),
                            line: line_no,
                            msg: format!("preset must be a name, got {}", other.type_name()),
                        })
                    }
                }
            } else {
                entries.push((line_no, key, value));
            }
        }
        let mut data = match preset {
            Some((line, name)) => Self::preset(&name).map_err(|e| ConfigError::Line {
                file: file.into(),
                line,
                msg: e.to_string(),
            })?,
            None => ConfigData::default(),
        };
        for (line, key, value) in entries {
            data.apply(&key, value).map_err(|msg| ConfigError::Line {
                file: file.into(),
                line,
                msg,
            })?;
        }
        Ok(data)
    }

    pub fn parse_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Build(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn apply(&mut self, key: &str, value: Value) -> Result<(), String> {
        fn num(v: &Value, key: &str) -> Result<f64, String> {
            match v {
                Value::Number(n) => Ok(*n),
                other => Err(format!("{key} expects a number, got {}", other.type_name())),
            }
        }
        fn count(v: &Value, key: &str) -> Result<usize, String> {
            let n = num(v, key)?;
            if n < 0.0 || n.fract() != 0.0 {
                return Err(format!("{key} expects a non-negative integer, got {n}"));
            }
            Ok(n as usize)
        }
        fn list(v: &Value, key: &str) -> Result<Vec<f64>, String> {
            match v {
                Value::List(l) => Ok(l.clone()),
                other => Err(format!("{key} expects a list, got {}", other.type_name())),
            }
        }
        fn pair(v: &Value, key: &str) -> Result<(f64, f64), String> {
            let l = list(v, key)?;
            if l.len() != 2 {
                return Err(format!("{key} expects [a, b]"));
            }
            Ok((l[0], l[1]))
        }
        fn triple(v: &Value, key: &str) -> Result<[f64; 3], String> {
            let l = list(v, key)?;
            if l.len() != 3 {
                return Err(format!("{key} expects [a, b, c]"));
            }
            Ok([l[0], l[1], l[2]])
        }
        fn text(v: &Value, key: &str) -> Result<String, String> {
            match v {
                Value::Text(t) => Ok(t.clone()),
                other => Err(format!("{key} expects a name, got {}", other.type_name())),
            }
        }

        match key {
            "name" => self.name = text(&value, key)?,
            "space.interval" => self.space_interval = pair(&value, key)?,
            "space.nodes" => self.space_nodes = count(&value, key)?,
            "time.T" => self.time_horizon = num(&value, key)?,
            "time.steps" => self.time_steps = count(&value, key)?,
            "time.nodes" => self.time_nodes = Some(list(&value, key)?),
            "time.grading" => self.time_grading = num(&value, key)?,
            "reaction.kind" => {
                let kind = text(&value, key)?;
                self.reaction = match kind.as_str() {
                    "cubic" => match &self.reaction {
                        ReactionConfig::Cubic { .. } => self.reaction.clone(),
                        _ => ReactionConfig::Cubic {
                            rho: 1.0,
                            roots: [0.0, 0.25, 1.0],
                        },
                    },
                    "polynomial" => ReactionConfig::Polynomial { coeffs: vec![0.0] },
                    other => return Err(format!("unknown reaction.kind '{other}'")),
                };
            }
            "reaction.rho" => {
                let rho_new = num(&value, key)?;
                match &mut self.reaction {
                    ReactionConfig::Cubic { rho, .. } => *rho = rho_new,
                    _ => {
                        self.reaction = ReactionConfig::Cubic {
                            rho: rho_new,
                            roots: [0.0, 0.25, 1.0],
                        }
                    }
                }
            }
            "reaction.roots" => {
                let roots_new = triple(&value, key)?;
                match &mut self.reaction {
                    ReactionConfig::Cubic { roots, .. } => *roots = roots_new,
                    _ => {
                        self.reaction = ReactionConfig::Cubic {
                            rho: 1.0,
                            roots: roots_new,
                        }
                    }
                }
            }
            "reaction.coeffs" => {
                self.reaction = ReactionConfig::Polynomial {
                    coeffs: list(&value, key)?,
                }
            }
            "prehistory.kind" => {
                let kind = text(&value, key)?;
                self.prehistory = match kind.as_str() {
                    "constant" => PrehistoryConfig::Constant(1.0),
                    "front" => PrehistoryConfig::Front {
                        roots: [0.0, 0.25, 1.0],
                    },
                    "coswave" => PrehistoryConfig::CosineSquared {
                        amplitude: 0.5,
                        omega: 2.0 * PI,
                    },
                    "polysin" => PrehistoryConfig::PolynomialSineSq {
                        coeffs: vec![0.2, 0.2],
                    },
                    other => return Err(format!("unknown prehistory.kind '{other}'")),
                };
            }
            "prehistory.value" => self.prehistory = PrehistoryConfig::Constant(num(&value, key)?),
            "prehistory.roots" => {
                self.prehistory = PrehistoryConfig::Front {
                    roots: triple(&value, key)?,
                }
            }
            "prehistory.amplitude" | "prehistory.omega" => {
                let n = num(&value, key)?;
                if let PrehistoryConfig::CosineSquared { amplitude, omega } = &mut self.prehistory {
                    if key.ends_with("amplitude") {
                        *amplitude = n;
                    } else {
                        *omega = n;
                    }
                } else {
                    let (mut amplitude, mut omega) = (0.5, 2.0 * PI);
                    if key.ends_with("amplitude") {
                        amplitude = n;
                    } else {
                        omega = n;
                    }
                    self.prehistory = PrehistoryConfig::CosineSquared { amplitude, omega };
                }
            }
            "prehistory.coeffs" => {
                self.prehistory = PrehistoryConfig::PolynomialSineSq {
                    coeffs: list(&value, key)?,
                }
            }
            "target.kind" => {
                let kind = text(&value, key)?;
                self.target = match kind.as_str() {
                    "constant" => TargetConfig::Constant(0.0),
                    "coswave" => TargetConfig::CosineSquared {
                        amplitude: 0.5,
                        omega: PI,
                    },
                    "manufactured" => TargetConfig::Manufactured {
                        atoms: vec![(0.5, -7.7)],
                    },
                    "kernel" => TargetConfig::Kernel {
                        kappa: 0.5,
                        a: 0.456,
                        b: 0.541,
                    },
                    other => return Err(format!("unknown target.kind '{other}'")),
                };
            }
            "target.value" => self.target = TargetConfig::Constant(num(&value, key)?),
            "target.amplitude" | "target.omega" => {
                let n = num(&value, key)?;
                if let TargetConfig::CosineSquared { amplitude, omega } = &mut self.target {
                    if key.ends_with("amplitude") {
                        *amplitude = n;
                    } else {
                        *omega = n;
                    }
                } else {
                    let (mut amplitude, mut omega) = (0.5, PI);
                    if key.ends_with("amplitude") {
                        amplitude = n;
                    } else {
                        omega = n;
                    }
                    self.target = TargetConfig::CosineSquared { amplitude, omega };
                }
            }
            "target.atoms" => {
                let l = list(&value, key)?;
                if l.len() % 2 != 0 || l.is_empty() {
                    return Err("target.atoms expects [t1, w1, t2, w2, …]".into());
                }
                self.target = TargetConfig::Manufactured {
                    atoms: l.chunks(2).map(|c| (c[0], c[1])).collect(),
                };
            }
            "target.kernel.kappa" => {
                if let TargetConfig::Kernel { kappa, .. } = &mut self.target {
                    *kappa = num(&value, key)?;
                } else {
                    self.target = TargetConfig::Kernel {
                        kappa: num(&value, key)?,
                        a: 0.456,
                        b: 0.541,
                    };
                }
            }
            "target.kernel.window" => {
                let (a, b) = pair(&value, key)?;
                if let TargetConfig::Kernel { a: pa, b: pb, .. } = &mut self.target {
                    *pa = a;
                    *pb = b;
                } else {
                    self.target = TargetConfig::Kernel { kappa: 0.5, a, b };
                }
            }
            "target.grid" => {
                let (a, b) = pair(&value, key)?;
                if a < 3.0 || b < 1.0 || a.fract() != 0.0 || b.fract() != 0.0 {
                    return Err("target.grid expects [space_nodes, time_steps]".into());
                }
                self.target_grid = Some((a as usize, b as usize));
            }
            "nu" => self.nu = num(&value, key)?,
            "window" => self.window = Some(pair(&value, key)?),
            "control.horizon" => self.control_horizon = Some(num(&value, key)?),
            "control.intervals" => self.control_intervals = count(&value, key)?,
            "control.nodes" => self.control_nodes = Some(list(&value, key)?),
            "solver.c0" => self.settings.c0 = num(&value, key)?,
            "solver.growth" => self.settings.growth = num(&value, key)?,
            "solver.c_max" => self.settings.c_max = num(&value, key)?,
            "solver.stop_tol" => self.settings.continuation_stop_tol = num(&value, key)?,
            "solver.newton_tol" => self.settings.newton_tol = num(&value, key)?,
            "solver.newton_max" => self.settings.max_newton_iters = count(&value, key)?,
            "solver.krylov_tol" => self.settings.krylov.tol = num(&value, key)?,
            "solver.krylov_restart" => self.settings.krylov.restart = count(&value, key)?,
            "solver.krylov_max" => self.settings.krylov.max_iters = count(&value, key)?,
            "solver.line_search_max" => self.settings.max_line_search = count(&value, key)?,
            "output.dir" => self.output_dir = Some(text(&value, key)?),
            other => return Err(format!("unknown key '{other}'")),
        }
        if !(self.settings.growth > 1.0) {
            return Err("solver.growth must be > 1".into());
        }
        Ok(())
    }

    /// Assembles the experiment: grids, reaction, prehistory, target
    /// (running the state solve or the manufactured construction when the
    /// target is derived), control grid and solver settings.
    pub fn build(&self) -> Result<Experiment, ConfigError> {
        let err = |msg: String| ConfigError::Build(msg);
        let mesh = Arc::new(
            SpaceMesh::uniform(self.space_interval.0, self.space_interval.1, self.space_nodes)
                .map_err(|e| err(format!("space: {e}")))?,
        );
        let tgrid = Arc::new(match &self.time_nodes {
            Some(nodes) => {
                TimeGrid::new(nodes.clone()).map_err(|e| err(format!("time.nodes: {e}")))?
            }
            None if self.time_grading > 1.0 => {
                TimeGrid::graded(self.time_horizon, self.time_steps, self.time_grading)
                    .map_err(|e| err(format!("time: {e}")))?
            }
            None => TimeGrid::uniform(self.time_horizon, self.time_steps)
                .map_err(|e| err(format!("time: {e}")))?,
        });
        let reaction = match &self.reaction {
            ReactionConfig::Cubic { rho, roots } => {
                ReactionModel::cubic(*rho, roots[0], roots[1], roots[2])
                    .map_err(|e| err(format!("reaction: {e}")))?
            }
            ReactionConfig::Polynomial { coeffs } => ReactionModel::from_coefficients(
                coeffs.clone(),
            )
            .map_err(|e| err(format!("reaction: {e}")))?,
        };
        let prehistory = Arc::new(match &self.prehistory {
            PrehistoryConfig::Constant(c) => Prehistory::Constant(*c),
            PrehistoryConfig::Front { roots } => Prehistory::TravelingFront {
                y1: roots[0],
                y2: roots[1],
                y3: roots[2],
            },
            PrehistoryConfig::CosineSquared { amplitude, omega } => Prehistory::CosineSquared {
                amplitude: *amplitude,
                omega: *omega,
            },
            PrehistoryConfig::PolynomialSineSq { coeffs } => Prehistory::PolynomialSineSq {
                coeffs: coeffs.clone(),
            },
        });
        let horizon = tgrid.horizon();
        let window = self.window.unwrap_or((0.0, horizon));
        let control_grid = match &self.control_nodes {
            Some(nodes) => {
                ControlGrid::new(nodes.clone()).map_err(|e| err(format!("control.nodes: {e}")))?
            }
            None => ControlGrid::uniform(
                self.control_horizon.unwrap_or(horizon),
                self.control_intervals,
            )
            .map_err(|e| err(format!("control: {e}")))?,
        };
        let base = ProblemSpec::new(
            mesh,
            tgrid.clone(),
            reaction,
            prehistory,
            Target::Constant(0.0),
            self.nu,
            window,
            control_grid,
        )
        .map_err(|e| err(e.to_string()))?;

        let mut reference = None;
        let spec = match &self.target {
            TargetConfig::Constant(c) => base
                .with_target(Target::Constant(*c))
                .map_err(|e| err(e.to_string()))?,
            TargetConfig::CosineSquared { amplitude, omega } => {
                let (a, o) = (*amplitude, *omega);
                base.with_target(Target::Function(Arc::new(move |_, t| {
                    let c = (o * t).cos();
                    a * c * c
                })))
                .map_err(|e| err(e.to_string()))?
            }
            derived @ (TargetConfig::Manufactured { .. } | TargetConfig::Kernel { .. }) => {
                // generation grid: the problem grid, or the reference grid
                // named by target.grid (always uniform in time)
                let gen_base = match self.target_grid {
                    Some((rn, rs)) if (rn, rs) != (self.space_nodes, self.time_steps) => {
                        let rmesh = Arc::new(
                            SpaceMesh::uniform(
                                self.space_interval.0,
                                self.space_interval.1,
                                rn,
                            )
                            .map_err(|e| err(format!("target.grid: {e}")))?,
                        );
                        let rtgrid = Arc::new(
                            TimeGrid::uniform(self.time_horizon, rs)
                                .map_err(|e| err(format!("target.grid: {e}")))?,
                        );
                        Some(
                            ProblemSpec::new(
                                rmesh,
                                rtgrid,
                                base.reaction.clone(),
                                base.prehistory.clone(),
                                Target::Constant(0.0),
                                self.nu,
                                (0.0, self.time_horizon),
                                base.control_grid.clone(),
                            )
                            .map_err(|e| err(e.to_string()))?,
                        )
                    }
                    _ => None,
                };
                let gen_spec = gen_base.as_ref().unwrap_or(&base);
                let rows = match derived {
                    TargetConfig::Manufactured { atoms } => {
                        let control = GeneralMeasure::new(
                            gen_spec.tgrid.horizon(),
                            atoms.clone(),
                            vec![],
                        )
                        .map_err(|e| err(format!("target.atoms: {e}")))?;
                        let (built, r) = build_manufactured(
                            gen_spec,
                            ManufacturedAdjoint::cosine_squared(),
                            &control,
                        )
                        .map_err(|e| err(e.to_string()))?;
                        if gen_base.is_none() {
                            reference = Some(r);
                        }
                        match built.target {
                            Target::Gridded(rows) => rows,
                            _ => unreachable!(),
                        }
                    }
                    TargetConfig::Kernel { kappa, a, b } => {
                        let kernel = GeneralMeasure::averaging_window(
                            gen_spec.control_grid.horizon(),
                            *kappa,
                            *a,
                            *b,
                        )
                        .map_err(|e| err(format!("target.kernel: {e}")))?;
                        let traj = solve_state(gen_spec, &Measure::General(kernel))
                            .map_err(|e| err(format!("target generation: {e}")))?;
                        Arc::new(
                            (0..=gen_spec.tgrid.steps())
                                .map(|i| traj.row(i).to_vec())
                                .collect::<Vec<_>>(),
                        )
                    }
                    _ => unreachable!(),
                };
                let rows = if gen_base.is_some() {
                    Arc::new(resample_rows(
                        gen_spec.mesh.nodes(),
                        gen_spec.tgrid.nodes(),
                        &rows,
                        base.mesh.nodes(),
                        base.tgrid.nodes(),
                    ))
                } else {
                    rows
                };
                base.with_target(Target::Gridded(rows))
                    .map_err(|e| err(e.to_string()))?
            }
        };
        Ok(Experiment {
            name: self.name.clone(),
            spec,
            settings: self.settings.clone(),
            reference,
            long_running: self.long_running,
        })
    }
}

/// Linear resampling of gridded rows from one space-time grid to another;
/// exact at coinciding nodes (in particular for integer-stride
/// subsampling).
fn resample_rows(
    ref_x: &[f64],
    ref_t: &[f64],
    rows: &[Vec<f64>],
    x: &[f64],
    t: &[f64],
) -> Vec<Vec<f64>> {
    let bracket = |nodes: &[f64], q: f64| -> (usize, f64) {
        if q <= nodes[0] {
            return (0, 0.0);
        }
        if q >= nodes[nodes.len() - 1] {
            return (nodes.len() - 2, 1.0);
        }
        let k = nodes.partition_point(|&s| s <= q) - 1;
        let k = k.min(nodes.len() - 2);
        (k, (q - nodes[k]) / (nodes[k + 1] - nodes[k]))
    };
    t.iter()
        .map(|&ti| {
            let (it, wt) = bracket(ref_t, ti);
            x.iter()
                .map(|&xj| {
                    let (jx, wx) = bracket(ref_x, xj);
                    let interp = |row: &Vec<f64>| (1.0 - wx) * row[jx] + wx * row[jx + 1];
                    (1.0 - wt) * interp(&rows[it]) + wt * interp(&rows[it + 1])
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys_with_comments() {
        let text = "\
# small custom problem
space.nodes = 17
time.T = 2.0           # horizon
time.steps = 16
reaction.rho = 1.0
reaction.roots = [0, 0.25, 1]
prehistory.value = 1.0
target.value = 0.25
nu = 1e-3
window = [1.0, 2.0]
control.intervals = 4
";
        let d = ConfigData::parse(text, "test.cfg").unwrap();
        assert_eq!(d.space_nodes, 17);
        assert_eq!(d.window, Some((1.0, 2.0)));
        let e = d.build().unwrap();
        assert_eq!(e.spec.control_grid.len(), 5);
        assert_eq!(e.spec.tgrid.horizon(), 2.0);
    }

    #[test]
    fn preset_with_overrides() {
        let text = "preset = example5\ntime.steps = 64\ncontrol.intervals = 32\nspace.nodes = 9\n";
        let d = ConfigData::parse(text, "t").unwrap();
        assert_eq!(d.time_steps, 64);
        let e = d.build().unwrap();
        assert_eq!(e.spec.control_grid.len(), 33);
        assert_eq!(e.spec.window, (1.0, 2.0));
    }

    #[test]
    fn diagnostics_carry_line_numbers() {
        let text = "space.nodes = 17\nbogus_key = 3\n";
        let e = ConfigData::parse(text, "cfg").unwrap_err();
        assert!(e.to_string().contains("cfg:2"), "{e}");
        let text = "space.nodes = [1, 2]\n";
        let e = ConfigData::parse(text, "cfg").unwrap_err();
        assert!(e.to_string().contains("expects a number"), "{e}");
        let text = "nu 3.0\n";
        assert!(ConfigData::parse(text, "cfg").is_err());
    }

    #[test]
    fn unknown_preset_is_an_error() {
        let e = ConfigData::parse("preset = example17\n", "cfg").unwrap_err();
        assert!(e.to_string().contains("unknown preset"), "{e}");
    }
}
