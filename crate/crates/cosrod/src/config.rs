//! Scenario configuration.
//!
//! Files are TOML restricted to flat dotted keys (`rod.k4 = 1.0`). Every key
//! is optional; missing keys take the reference defaults. Overrides use the same
//! key names with TOML values (`outer.k_p=[4.0,2.0]`, `target.family="arc"`).

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::RodParams;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Mat2};
use crate::inner::InnerGains;
use crate::outer::{OuterGains, OuterOptions};

/// The default scenario file shipped with the crate.
pub const DEFAULT_CONFIG: &str = include_str!("../../../config/default.toml");

/// A gain given either as a scalar multiple of the identity or as a diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diag {
    Scalar(f64),
    Pair([f64; 2]),
}

impl Diag {
    pub fn matrix(&self) -> Mat2 {
        match *self {
            Diag::Scalar(k) => Mat2::identity() * k,
            Diag::Pair([a, b]) => Mat2::new(a, 0.0, 0.0, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub ell: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RodConfig {
    pub k3: [f64; 2],
    pub k4: f64,
    pub k5: f64,
    pub rho_j: f64,
    pub g: f64,
    pub q_bar: [f64; 2],
    pub u_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterConfig {
    pub k_q: Diag,
    pub k_p: Diag,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub tikhonov: f64,
    /// Bandwidth (rad/s) of the command filter on theta*; 0 means theta*_t
    /// and theta*_tt come from backward differences of the solve history.
    pub command_filter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerConfig {
    pub k_u: f64,
    pub k_w: f64,
    pub k_theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetFamily {
    /// Constant-curvature arc.
    Arc,
    /// The undeformed rod itself.
    Straight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub family: TargetFamily,
    pub curvature: f64,
    pub blend_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dt: f64,
    pub duration: f64,
    pub output_stride: usize,
    pub snapshot_stride: usize,
    pub seed: u64,
    /// Amplitude of a uniform random offset added to the initial angles.
    pub initial_perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub plot_bundle: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: GridConfig,
    pub rod: RodConfig,
    pub outer: OuterConfig,
    pub inner: InnerConfig,
    pub target: TargetConfig,
    pub run: RunConfig,
    pub export: ExportConfig,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { ell: 0.5, n: 11 }
    }
}

impl Default for RodConfig {
    fn default() -> Self {
        Self { k3: [1.0, 1.5], k4: 1.0, k5: 1.5, rho_j: 1.0, g: 0.0, q_bar: [0.0, 1.0], u_bar: 0.0 }
    }
}

impl Default for OuterConfig {
    fn default() -> Self {
        let o = OuterOptions::default();
        Self {
            k_q: Diag::Scalar(1.0),
            k_p: Diag::Scalar(4.0),
            tolerance: o.tolerance,
            max_iterations: o.max_iterations,
            tikhonov: o.tikhonov,
            command_filter: 0.0,
        }
    }
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self { k_u: 0.5, k_w: 2.0, k_theta: 4.0 }
    }
}

impl Default for TargetConfig {
    fn default() -> Self {
        // Tip deflection (1 - cos(0.65)) / 1.3 = 0.157, about 0.31 of the length.
        Self { family: TargetFamily::Arc, curvature: 1.3, blend_width: 0.1 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { dt: 0.005, duration: 10.0, output_stride: 10, snapshot_stride: 200, seed: 0, initial_perturbation: 0.0 }
    }
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { plot_bundle: true }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key '{key}'")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{part}' in '{key}' is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ScenarioConfig {
    /// Parse config text, then apply `KEY=VALUE` overrides in order.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not KEY=VALUE")))?;
            set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: ScenarioConfig =
            ScenarioConfig::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.ell, self.grid.n)
    }

    pub fn rod_params(&self) -> RodParams {
        let r = &self.rod;
        RodParams {
            k3: Mat2::new(r.k3[0], 0.0, 0.0, r.k3[1]),
            k4: r.k4,
            k5: r.k5,
            rho_j: r.rho_j,
            g: r.g,
            q_bar: Vector2::new(r.q_bar[0], r.q_bar[1]),
            u_bar: r.u_bar,
        }
    }

    pub fn outer_gains(&self) -> Result<OuterGains> {
        OuterGains::new(self.outer.k_q.matrix(), self.outer.k_p.matrix())
    }

    pub fn outer_options(&self) -> OuterOptions {
        OuterOptions {
            tolerance: self.outer.tolerance,
            max_iterations: self.outer.max_iterations,
            tikhonov: self.outer.tikhonov,
        }
    }

    pub fn inner_gains(&self) -> InnerGains {
        InnerGains::uniform(self.grid.n, self.inner.k_u, self.inner.k_w, self.inner.k_theta)
    }

    pub fn steps(&self) -> usize {
        (self.run.duration / self.run.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let params = self.rod_params();
        params.validate()?;
        self.outer_gains()?;
        self.inner_gains()
            .validate(&grid)
            .map_err(|_| Error::Config("inner gains must be strictly positive".into()))?;
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.outer.tolerance > 0.0) {
            return bad("outer.tolerance must be positive");
        }
        if self.outer.max_iterations == 0 {
            return bad("outer.max_iterations must be at least 1");
        }
        if !(self.outer.tikhonov >= 0.0 && self.outer.command_filter >= 0.0) {
            return bad("outer.tikhonov and outer.command_filter must be non-negative");
        }
        if !(self.run.dt > 0.0 && self.run.dt.is_finite()) {
            return bad("run.dt must be positive");
        }
        if !(self.run.duration >= 0.0 && self.run.duration.is_finite()) {
            return bad("run.duration must be non-negative");
        }
        if self.run.output_stride == 0 || self.run.snapshot_stride == 0 {
            return bad("run.output_stride and run.snapshot_stride must be at least 1");
        }
        if !(self.run.initial_perturbation >= 0.0 && self.run.initial_perturbation.is_finite()) {
            return bad("run.initial_perturbation must be non-negative");
        }
        if self.target.family == TargetFamily::Arc && (self.target.curvature * grid.ell).abs() >= std::f64::consts::PI {
            return bad("target.curvature * grid.ell must be below pi in magnitude");
        }
        if !(self.target.blend_width > grid.ds && self.target.blend_width < 0.5 * grid.ell) {
            return Err(Error::Config(format!(
                "target.blend_width must lie in (ds, ell/2) = ({}, {})",
                grid.ds,
                0.5 * grid.ell
            )));
        }
        let limit = params.cfl_limit(&grid);
        if self.run.dt > limit {
            tracing::warn!(dt = self.run.dt, limit, "time step exceeds the CFL estimate");
        }
        Ok(())
    }
}
