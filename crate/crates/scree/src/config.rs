//! Scenario configuration: a flat TOML file with `[scenario]`, `[material]`,
//! `[dem]`, and `[numerics]` sections, all keys optional with documented
//! defaults, all values SI.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::continuum::{NumericsParams, SlipMode};
use crate::error::{Error, Result};
use crate::rheology::MaterialParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Column2d,
    Column3d,
    FallingDisc,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Column2d => "column2d",
            ScenarioKind::Column3d => "column3d",
            ScenarioKind::FallingDisc => "falling_disc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Plasticity,
    Dem,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Plasticity => "plasticity",
            SolverKind::Dem => "dem",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Vtk,
    Both,
}

/// The full, defaults-applied configuration. Serializing and re-parsing it
/// reproduces the identical value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub material: MaterialSection,
    #[serde(default)]
    pub dem: DemSection,
    #[serde(default)]
    pub numerics: NumericsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default = "d_scenario")]
    pub scenario: ScenarioKind,
    #[serde(default = "d_solver")]
    pub solver: SolverKind,
    /// Aspect ratio H0 / L0.
    #[serde(default = "d_one")]
    pub a: f64,
    /// Column half-width (2D) or cylinder radius (3D) [m].
    #[serde(default = "d_l0", rename = "L0")]
    pub l0: f64,
    /// Target interior particle count; spacing is derived from it.
    #[serde(default = "d_budget")]
    pub particle_budget: usize,
    /// Simulated end time [s].
    #[serde(default = "d_t_end")]
    pub t_end: f64,
    /// Emit a snapshot every this many steps (0: only first and last).
    #[serde(default = "d_output_every")]
    pub output_every: usize,
    #[serde(default = "d_format")]
    pub output_format: OutputFormat,
    /// Lattice jitter amplitude as a fraction of the spacing (0 disables;
    /// the CLI seed only matters when this is positive).
    #[serde(default)]
    pub jitter: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    #[serde(default = "d_e", rename = "E")]
    pub e: f64,
    #[serde(default = "d_nu")]
    pub nu: f64,
    #[serde(default = "d_mu_s")]
    pub mu_s: f64,
    #[serde(default = "d_mu_2")]
    pub mu_2: f64,
    #[serde(default = "d_xi")]
    pub xi: f64,
    #[serde(default = "d_i0", rename = "I_0")]
    pub i_0: f64,
    #[serde(default = "d_grain")]
    pub d: f64,
    #[serde(default = "d_rho_s")]
    pub rho_s: f64,
    #[serde(default = "d_rho_0")]
    pub rho_0: f64,
    /// Critical density; defaults to `rho_0` when absent.
    #[serde(default, rename = "rho_C")]
    pub rho_c: Option<f64>,
    #[serde(default = "d_g")]
    pub g: f64,
}

impl Default for MaterialSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemSection {
    /// Grain radius [m]; derived from the particle budget when absent.
    #[serde(default, rename = "R")]
    pub r: Option<f64>,
    /// Grain mass [kg]; sphere mass at `rho_s` when absent.
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default = "d_restitution")]
    pub e: f64,
    #[serde(default = "d_friction")]
    pub mu: f64,
    /// Tangential contact-time constant [s]; defaults to the time step.
    #[serde(default)]
    pub t_c: Option<f64>,
}

impl Default for DemSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// Support radius as a multiple of the spacing.
    #[serde(default = "d_h_factor")]
    pub h_factor: f64,
    #[serde(default = "d_cond_max")]
    pub cond_max: f64,
    #[serde(default = "d_cfl_max")]
    pub cfl_max: f64,
    #[serde(default = "d_manage_every")]
    pub manage_every: usize,
    #[serde(default)]
    pub advect_updated_velocity: bool,
    #[serde(default)]
    pub gradients_updated_velocity: bool,
    /// "free" keeps tangential velocity at walls, "no" zeroes it.
    #[serde(default = "d_slip")]
    pub slip: String,
    #[serde(default = "d_smoothing")]
    pub velocity_smoothing: f64,
}

impl Default for NumericsSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn d_scenario() -> ScenarioKind {
    ScenarioKind::Column2d
}
fn d_solver() -> SolverKind {
    SolverKind::Plasticity
}
fn d_one() -> f64 {
    1.0
}
fn d_l0() -> f64 {
    0.05
}
fn d_budget() -> usize {
    1000
}
fn d_t_end() -> f64 {
    0.5
}
fn d_output_every() -> usize {
    0
}
fn d_format() -> OutputFormat {
    OutputFormat::Csv
}
fn d_e() -> f64 {
    1e9
}
fn d_nu() -> f64 {
    0.3
}
fn d_mu_s() -> f64 {
    0.3819
}
fn d_mu_2() -> f64 {
    0.6435
}
fn d_xi() -> f64 {
    1.123
}
fn d_i0() -> f64 {
    0.32
}
fn d_grain() -> f64 {
    3e-3
}
fn d_rho_s() -> f64 {
    2450.0
}
fn d_rho_0() -> f64 {
    1500.0
}
fn d_g() -> f64 {
    -9.81
}
fn d_restitution() -> f64 {
    0.5
}
fn d_friction() -> f64 {
    0.3815
}
fn d_dt() -> f64 {
    1e-5
}
fn d_alpha() -> f64 {
    6.25
}
fn d_h_factor() -> f64 {
    3.0
}
fn d_cond_max() -> f64 {
    1e12
}
fn d_cfl_max() -> f64 {
    0.1
}
fn d_manage_every() -> usize {
    10
}
fn d_slip() -> String {
    "free".into()
}
fn d_smoothing() -> f64 {
    0.05
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl ScenarioConfig {
    /// Material constants as used by the solvers.
    pub fn material_params(&self) -> MaterialParams<f64> {
        let m = &self.material;
        MaterialParams {
            youngs_modulus: m.e,
            poisson_ratio: m.nu,
            mu_s: m.mu_s,
            mu_2: m.mu_2,
            xi: m.xi,
            i0: m.i_0,
            grain_diameter: m.d,
            grain_density: m.rho_s,
            bulk_density: m.rho_0,
            critical_density: m.rho_c.unwrap_or(m.rho_0),
            gravity: m.g,
        }
    }

    /// Numerical controls as used by the continuum solver.
    pub fn numerics_params(&self) -> NumericsParams<f64> {
        let n = &self.numerics;
        let mut p = NumericsParams::with_dt(n.dt);
        p.gfdm.alpha = n.alpha;
        p.gfdm.cond_max = n.cond_max;
        p.cfl_max = n.cfl_max;
        p.manage_every = n.manage_every;
        p.advect_updated_velocity = n.advect_updated_velocity;
        p.gradients_updated_velocity = n.gradients_updated_velocity;
        p.slip = if n.slip == "no" {
            SlipMode::NoSlip
        } else {
            SlipMode::FreeSlip
        };
        p.velocity_smoothing = n.velocity_smoothing;
        p
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let fail = |key: &str, message: String| -> Result<Vec<String>> {
            Err(Error::Validation {
                key: key.into(),
                message,
            })
        };
        let s = &self.scenario;
        if !(s.a > 0.0) {
            return fail("a", format!("aspect ratio must be positive, got {}", s.a));
        }
        if !(s.l0 > 0.0) {
            return fail("L0", format!("must be positive, got {}", s.l0));
        }
        if s.particle_budget == 0 {
            return fail("particle_budget", "must be at least 1".into());
        }
        if !(s.t_end >= 0.0) {
            return fail("t_end", format!("must be non-negative, got {}", s.t_end));
        }
        let m = &self.material;
        if !(m.e > 0.0) {
            return fail("E", format!("must be positive, got {}", m.e));
        }
        if !(m.nu > 0.0 && m.nu < 0.5) {
            return fail("nu", format!("must lie in (0, 0.5), got {}", m.nu));
        }
        if !(m.mu_s > 0.0) {
            return fail("mu_s", format!("must be positive, got {}", m.mu_s));
        }
        if !(m.mu_s < m.mu_2) {
            return fail(
                "mu_s",
                format!("must be below mu_2: mu_s = {}, mu_2 = {}", m.mu_s, m.mu_2),
            );
        }
        for (key, v) in [
            ("xi", m.xi),
            ("I_0", m.i_0),
            ("d", m.d),
            ("rho_s", m.rho_s),
            ("rho_0", m.rho_0),
        ] {
            if !(v > 0.0) {
                return fail(key, format!("must be positive, got {v}"));
            }
        }
        if let Some(rc) = m.rho_c {
            if !(rc >= 0.0) {
                return fail("rho_C", format!("must be non-negative, got {rc}"));
            }
        } else {
            warnings.push(format!(
                "rho_C not set; defaulting to rho_0 = {}",
                m.rho_0
            ));
        }
        let dem = &self.dem;
        if !(dem.e > 0.0 && dem.e <= 1.0) {
            return fail("e", format!("restitution must lie in (0, 1], got {}", dem.e));
        }
        if !(dem.mu >= 0.0) {
            return fail("mu", format!("must be non-negative, got {}", dem.mu));
        }
        if let Some(r) = dem.r {
            if !(r > 0.0) {
                return fail("R", format!("must be positive, got {r}"));
            }
        }
        let n = &self.numerics;
        if !(n.dt > 0.0) {
            return fail("dt", format!("must be positive, got {}", n.dt));
        }
        for (key, v) in [("alpha", n.alpha), ("h_factor", n.h_factor), ("cond_max", n.cond_max)] {
            if !(v > 0.0) || !v.is_finite() {
                return fail(key, format!("must be positive and finite, got {v}"));
            }
        }
        if n.slip != "free" && n.slip != "no" {
            return fail("slip", format!("must be \"free\" or \"no\", got {:?}", n.slip));
        }
        if !(0.0..=1.0).contains(&n.velocity_smoothing) {
            return fail(
                "velocity_smoothing",
                format!("must lie in [0, 1], got {}", n.velocity_smoothing),
            );
        }
        // xi vs I_0 / (d sqrt(rho_s)): warn on mismatch, the flow rule uses xi.
        let xi_grain = m.i_0 / (m.d * m.rho_s.sqrt());
        if (xi_grain - m.xi).abs() > 1e-6 * m.xi.abs() {
            warnings.push(format!(
                "xi = {} is inconsistent with I_0/(d*sqrt(rho_s)) = {:.6}; the flow rule uses xi",
                m.xi, xi_grain
            ));
        }
        Ok(warnings)
    }
}

/// Parses a config file from TOML text.
pub fn parse_config_str(text: &str) -> Result<(ScenarioConfig, Vec<String>)> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let warnings = cfg.validate()?;
    Ok((cfg, warnings))
}

/// Parses and validates a config file; returns the config, its warnings, and
/// the SHA-256 hash of the file bytes.
pub fn parse_config(path: &Path) -> Result<(ScenarioConfig, Vec<String>, String)> {
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| Error::Parse(format!("config is not UTF-8: {e}")))?;
    let (cfg, warnings) = parse_config_str(&text)?;
    Ok((cfg, warnings, hash_bytes(&bytes)))
}

/// Hex SHA-256 of the raw config bytes; recorded in run summaries.
pub fn hash_bytes(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        use std::fmt::Write;
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gets_reference_defaults() {
        let (cfg, warnings) = parse_config_str("").unwrap();
        assert_eq!(cfg.material.e, 1e9);
        assert_eq!(cfg.material.nu, 0.3);
        assert_eq!(cfg.material.xi, 1.123);
        assert_eq!(cfg.material.i_0, 0.32);
        assert_eq!(cfg.material.d, 3e-3);
        assert_eq!(cfg.material.mu_2, 0.6435);
        assert_eq!(cfg.material.mu_s, 0.3819);
        assert_eq!(cfg.material.rho_0, 1500.0);
        assert_eq!(cfg.material.g, -9.81);
        assert_eq!(cfg.numerics.dt, 1e-5);
        // rho_C defaulted with a note, xi inconsistent with grain data.
        assert!(warnings.iter().any(|w| w.contains("rho_C")));
        assert!(warnings.iter().any(|w| w.contains("xi")));
        let mat = cfg.material_params();
        assert_eq!(mat.critical_density, 1500.0);
    }

    #[test]
    fn validation_names_the_offending_key() {
        let err = parse_config_str("[material]\nmu_s = 0.7\n").unwrap_err();
        match err {
            Error::Validation { key, .. } => assert_eq!(key, "mu_s"),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_config_str("[material]\nnu = 0.6\n").unwrap_err();
        match err {
            Error::Validation { key, .. } => assert_eq!(key, "nu"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_toml_is_a_parse_error() {
        let err = parse_config_str("[scenario\nsolver=").unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
        let err = parse_config_str("[scenario]\nnot_a_key = 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn round_trip_is_identity() {
        let text = r#"
[scenario]
scenario = "falling_disc"
solver = "dem"
a = 2.0
particle_budget = 500

[material]
E = 2e6
rho_C = 1450.0

[numerics]
dt = 5e-6
slip = "no"
"#;
        let (cfg, _) = parse_config_str(text).unwrap();
        let serialized = toml::to_string(&cfg).unwrap();
        let (cfg2, _) = parse_config_str(&serialized).unwrap();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            hash_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
