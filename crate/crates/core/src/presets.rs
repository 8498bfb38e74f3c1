//! The five experiment presets with the published parameter values,
//! built from the same field set the configuration files use.

use crate::config::{ConfigData, ConfigError};
use crate::manufactured::ManufacturedReference;
use crate::measures::GeneralMeasure;
use crate::pde::ProblemSpec;
use crate::ssn::SsnSettings;

/// A fully assembled experiment: problem, solver settings, and (for
/// manufactured targets) the reference solution.
pub struct Experiment {
    pub name: String,
    pub spec: ProblemSpec,
    pub settings: SsnSettings,
    pub reference: Option<ManufacturedReference>,
    /// Tagged long-running; excluded from default test batteries.
    pub long_running: bool,
}

/// Grid sizes of the manufactured example; the published run uses 257
/// nodes in space and time and control spacing `3^-k`.
#[derive(Debug, Clone)]
pub struct Example1Options {
    pub space_nodes: usize,
    pub time_steps: usize,
    /// Control grid spacing `3^-k`.
    pub tau_exponent: u32,
    pub nu: f64,
}

impl Default for Example1Options {
    fn default() -> Self {
        Self {
            space_nodes: 257,
            time_steps: 256,
            tau_exponent: 3,
            nu: 3.39817e-4,
        }
    }
}

/// Reference control of the manufactured example: `−7.7 δ_{0.5}`.
pub fn example1_exact_control() -> GeneralMeasure {
    GeneralMeasure::dirac(1.0, 0.5, -7.7).unwrap()
}

/// Manufactured problem with known critical point (`ū = −7.7 δ_{0.5}`,
/// `φ̄ = cos²(πt/2)`, `ν = 3.39817e−4`).
pub fn example1(opts: &Example1Options) -> Result<Experiment, ConfigError> {
    let mut d = ConfigData::preset("example1")?;
    d.space_nodes = opts.space_nodes;
    d.time_steps = opts.time_steps;
    d.control_intervals = 3usize.pow(opts.tau_exponent);
    d.nu = opts.nu;
    d.name = format!("example1(tau=3^-{})", opts.tau_exponent);
    d.build()
}

/// ν-sensitivity study: manufactured data on 65-node space/time grids,
/// control grid equal to the time grid.
pub fn example2(nu: f64) -> Result<Experiment, ConfigError> {
    let mut d = ConfigData::preset("example2")?;
    d.nu = nu;
    d.name = format!("example2(nu={nu:.0e})");
    d.build()
}

/// Published ν values of the sensitivity table.
pub const EXAMPLE2_NU_VALUES: [f64; 10] = [
    1e-1, 6e-2, 5e-2, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8,
];

/// Averaging-window kernel generating the Pyragas-recovery target.
pub fn example3_target_kernel() -> GeneralMeasure {
    GeneralMeasure::averaging_window(1.0, 0.5, 0.456, 0.541).unwrap()
}

/// Pyragas recovery on the traveling-front problem (long-running).
pub fn example3() -> Result<Experiment, ConfigError> {
    ConfigData::preset("example3")?.build()
}

/// Steering the bistable system from `y ≡ 1` to the unstable `y_d ≡ 0.25`.
pub fn example4() -> Result<Experiment, ConfigError> {
    ConfigData::preset("example4")?.build()
}

/// Changing the period of an incoming wave.
pub fn example5() -> Result<Experiment, ConfigError> {
    ConfigData::preset("example5")?.build()
}

/// Builds a preset by name with its default options.
pub fn by_name(name: &str) -> Result<Experiment, ConfigError> {
    ConfigData::preset(name)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build_on_small_grids() {
        let e = example1(&Example1Options {
            space_nodes: 17,
            time_steps: 32,
            tau_exponent: 2,
            nu: 3.39817e-4,
        })
        .unwrap();
        assert_eq!(e.spec.control_grid.len(), 10);
        assert!(e.reference.is_some());

        let mut d5 = ConfigData::preset("example5").unwrap();
        d5.space_nodes = 9;
        d5.time_steps = 64;
        d5.control_intervals = 32;
        let e5 = d5.build().unwrap();
        assert_eq!(e5.spec.window, (1.0, 2.0));
        assert!(e5.spec.control_atoms_aligned());
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(by_name("example9").is_err());
    }
}
