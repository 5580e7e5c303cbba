//! Experiment configuration: a JSON document with unknown keys rejected and
//! every validation error reported with its field path.

use std::path::{Path, PathBuf};

use memflow_core::geometry::{self, Mask};
use memflow_core::observability::BumpProfile;
use memflow_core::spectral::{interval_basis, EigenBasis};
use memflow_core::{parse, ExpPolyFn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub kernel: String,
    pub basis: BasisConfig,
    pub time: TimeConfig,
    pub mask: MaskConfig,
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub flow_check: FlowCheckConfig,
    #[serde(default)]
    pub kernel_tables: KernelTablesConfig,
    #[serde(default)]
    pub moc: MocConfig,
    #[serde(default)]
    pub obsconst: ObsConstConfig,
    #[serde(default)]
    pub probe_alpha: ProbeAlphaConfig,
    #[serde(default)]
    pub probe_ball: ProbeBallConfig,
    #[serde(default)]
    pub probe_heat: ProbeHeatConfig,
    #[serde(default)]
    pub reconstruct: ReconstructConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub duality: DualityConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub modes: usize,
    pub n_x: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub n_t: usize,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Full,
    Empty,
    Cylinder,
    Zigzag,
    Cusp,
    MissingBall,
    RandomRects,
    File,
}

/// Mask generator and its parameters; which fields are required depends on
/// `kind`.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub kind: MaskKind,
    #[serde(default = "default_mask_n_x")]
    pub n_x: usize,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub omega: Option<[f64; 2]>,
    #[serde(default)]
    pub times: Option<[f64; 2]>,
    #[serde(default)]
    pub x0: Option<f64>,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub center: Option<f64>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn default_mask_n_x() -> usize {
    64
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Polynomial,
    ZeroMoment,
}

impl From<ProfileName> for BumpProfile {
    fn from(p: ProfileName) -> Self {
        match p {
            ProfileName::Polynomial => BumpProfile::Polynomial,
            ProfileName::ZeroMoment => BumpProfile::ZeroMoment,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FlowCheckConfig {
    /// Defaults to the top-level kernel.
    pub kernels: Option<Vec<String>>,
    /// One-based mode indices.
    pub modes: Vec<usize>,
    pub dt: f64,
    pub horizon: f64,
    pub samples: usize,
    pub order: u32,
    pub series_terms: u32,
    /// Mode `j` must agree within `max(1e-6, c η_j² Δt²)`; the default is
    /// twice the peak trapezoid error `η²/(12e)` of the memoryless mode.
    pub dt2_constant: f64,
    pub min_convergence_order: f64,
    pub remainder_orders: Vec<u32>,
    pub remainder_modes: usize,
    pub remainder_samples: usize,
    pub remainder_horizon: f64,
}

impl Default for FlowCheckConfig {
    fn default() -> Self {
        Self {
            kernels: None,
            modes: vec![1, 2, 3, 8],
            dt: 1e-3,
            horizon: 1.0,
            samples: 10,
            order: 4,
            series_terms: 40,
            dt2_constant: 1.0 / (6.0 * std::f64::consts::E),
            min_convergence_order: 1.9,
            remainder_orders: vec![2, 3, 4],
            remainder_modes: 32,
            remainder_samples: 20,
            remainder_horizon: 2.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct KernelTablesConfig {
    pub kernels: Option<Vec<String>>,
    pub max_order: u32,
    pub grid_points: usize,
    pub tolerance: f64,
}

impl Default for KernelTablesConfig {
    fn default() -> Self {
        Self { kernels: None, max_order: 6, grid_points: 100, tolerance: 1e-12 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MocConfig {
    pub radii: Vec<f64>,
    /// Functions for the analytic lower-bound check; defaults to the kernel.
    pub functions: Option<Vec<String>>,
    pub random_masks: usize,
}

impl Default for MocConfig {
    fn default() -> Self {
        Self { radii: vec![0.05, 0.1, 0.25], functions: None, random_masks: 50 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ObsConstConfig {
    /// Truncations for the trend table; defaults to `basis.modes`.
    pub modes: Option<Vec<usize>>,
    pub random_starts: usize,
    pub max_iter: usize,
    pub null_constant: bool,
    pub relaxed_fit: bool,
}

impl Default for ObsConstConfig {
    fn default() -> Self {
        Self { modes: None, random_starts: 16, max_iter: 500, null_constant: true, relaxed_fit: true }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeAlphaConfig {
    pub alphas: Vec<f64>,
    pub center: f64,
    pub half_width: f64,
    pub width_decay: f64,
    pub k: Vec<u32>,
    pub profile: ProfileName,
}

impl Default for ProbeAlphaConfig {
    fn default() -> Self {
        Self {
            alphas: vec![1.0, 2.0],
            center: 0.5,
            half_width: 0.2,
            width_decay: 1.0,
            k: vec![1, 2, 4, 8, 16, 32],
            profile: ProfileName::Polynomial,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeBallConfig {
    pub center: f64,
    pub radius: f64,
    pub width_decay: f64,
    pub k: Vec<u32>,
    pub profile: ProfileName,
    pub full_mask: bool,
    /// Overrides `basis.modes`; the grid gets four points per mode.
    pub modes: Option<usize>,
}

impl Default for ProbeBallConfig {
    fn default() -> Self {
        Self {
            center: 0.5,
            radius: 0.45,
            width_decay: 0.5,
            k: vec![1, 2, 4, 8, 16, 32],
            profile: ProfileName::ZeroMoment,
            full_mask: false,
            modes: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeHeatConfig {
    pub x0: f64,
    pub r: f64,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub profile: ProfileName,
}

impl Default for ProbeHeatConfig {
    fn default() -> Self {
        Self {
            x0: 0.5,
            r: 0.4,
            s: vec![-4.0, -2.0, 0.0],
            t: vec![0.0, 0.001, 0.01, 0.1],
            half_widths: vec![0.2, 0.1, 0.05],
            profile: ProfileName::Polynomial,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    /// Relative noise added to the synthetic data.
    pub noise: f64,
    /// Fixed Tikhonov parameter; by default `0` without noise and the
    /// discrepancy principle with noise.
    pub lambda: Option<f64>,
    /// Accepted relative error; by default `1e-6` without noise and `0.1`
    /// with noise.
    pub max_rel_error: Option<f64>,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self { noise: 0.0, lambda: None, max_rel_error: None }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ControlNormName {
    L2,
    WeightedSup,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Zero,
    Random,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub norm: ControlNormName,
    pub weight_exponent: f64,
    pub initial: InitialState,
    /// Target coefficients `η_j^p`.
    pub target_exponent: f64,
    pub steps_per_cell: Option<usize>,
    pub replay_tolerance: f64,
    pub max_final_error: f64,
    /// Truncation of the reachable-difference check; `0` skips it.
    pub reach_modes: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            norm: ControlNormName::L2,
            weight_exponent: 2.0,
            initial: InitialState::Random,
            target_exponent: -3.0,
            steps_per_cell: None,
            replay_tolerance: 1e-6,
            max_final_error: 1e-6,
            reach_modes: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DualityConfig {
    pub closed_form: bool,
    pub observability: bool,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self { closed_form: true, observability: true }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub commands: Vec<String>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            commands: [
                "flow-check",
                "kernel",
                "moc",
                "obsconst",
                "probe-alpha",
                "probe-ball",
                "probe-heat",
                "reconstruct",
                "control",
                "duality",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

fn field(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { path: path.to_string(), message: message.into() }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(path, format!("must be positive, got {v}")))
    }
}

fn parse_kernel(path: &str, expr: &str) -> Result<ExpPolyFn, ConfigError> {
    parse(expr).map_err(|e| match e {
        memflow_core::Error::Parse { position, message } => ConfigError::Kernel { path: path.to_string(), position, message },
        other => field(path, other.to_string()),
    })
}

impl Config {
    /// Reads, deserializes and validates a configuration file. Relative mask
    /// paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(p) = cfg.mask.path.as_mut() {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Deserializes without touching the file system.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Syntax { path, line: inner.line(), column: inner.column(), message: inner.to_string() }
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        parse_kernel("kernel", &self.kernel)?;
        if self.basis.modes == 0 {
            return Err(field("basis.modes", "must be at least 1"));
        }
        if self.basis.n_x < 2 * self.basis.modes {
            return Err(field("basis.n_x", "needs at least two grid points per mode"));
        }
        positive("time.horizon", self.time.horizon)?;
        if self.time.n_t == 0 {
            return Err(field("time.n_t", "must be at least 1"));
        }
        if let Some([s, t]) = self.window {
            if !(s >= 0.0 && t > s && t <= self.time.horizon) {
                return Err(field("window", "must satisfy 0 <= S < T <= time.horizon"));
            }
        }
        if let Some(a) = self.alpha {
            if !(a >= 0.0) {
                return Err(field("alpha", "must be nonnegative"));
            }
        }
        self.validate_mask()?;

        let fc = &self.flow_check;
        for (i, k) in fc.kernels.iter().flatten().enumerate() {
            parse_kernel(&format!("flow_check.kernels[{i}]"), k)?;
        }
        if fc.modes.is_empty() || fc.modes.contains(&0) {
            return Err(field("flow_check.modes", "must list one-based mode indices"));
        }
        positive("flow_check.dt", fc.dt)?;
        positive("flow_check.horizon", fc.horizon)?;
        positive("flow_check.remainder_horizon", fc.remainder_horizon)?;
        positive("flow_check.dt2_constant", fc.dt2_constant)?;
        if fc.samples == 0 || fc.remainder_samples == 0 {
            return Err(field("flow_check.samples", "must be at least 1"));
        }
        for (i, k) in self.kernel_tables.kernels.iter().flatten().enumerate() {
            parse_kernel(&format!("kernel_tables.kernels[{i}]"), k)?;
        }
        if self.kernel_tables.grid_points < 2 {
            return Err(field("kernel_tables.grid_points", "must be at least 2"));
        }
        for (i, r) in self.moc.radii.iter().enumerate() {
            positive(&format!("moc.radii[{i}]"), *r)?;
        }
        for (i, k) in self.moc.functions.iter().flatten().enumerate() {
            parse_kernel(&format!("moc.functions[{i}]"), k)?;
        }
        if let Some(list) = &self.obsconst.modes {
            if list.is_empty() || list.contains(&0) {
                return Err(field("obsconst.modes", "must list positive truncations"));
            }
        }
        let pa = &self.probe_alpha;
        if pa.alphas.iter().any(|a| !(*a >= 0.0)) {
            return Err(field("probe_alpha.alphas", "must be nonnegative"));
        }
        positive("probe_alpha.half_width", pa.half_width)?;
        positive("probe_alpha.width_decay", pa.width_decay)?;
        if pa.k.is_empty() || pa.k.contains(&0) {
            return Err(field("probe_alpha.k", "must list positive integers"));
        }
        let pb = &self.probe_ball;
        positive("probe_ball.radius", pb.radius)?;
        positive("probe_ball.width_decay", pb.width_decay)?;
        if pb.k.is_empty() || pb.k.contains(&0) {
            return Err(field("probe_ball.k", "must list positive integers"));
        }
        if pb.modes == Some(0) {
            return Err(field("probe_ball.modes", "must be at least 1"));
        }
        let ph = &self.probe_heat;
        positive("probe_heat.r", ph.r)?;
        if ph.half_widths.iter().any(|w| !(*w > 0.0 && *w <= 0.5 * ph.r)) {
            return Err(field("probe_heat.half_widths", "must lie in (0, r/2]"));
        }
        if ph.t.iter().any(|t| !(*t >= 0.0)) {
            return Err(field("probe_heat.t", "must be nonnegative"));
        }
        let rc = &self.reconstruct;
        if !(rc.noise >= 0.0) {
            return Err(field("reconstruct.noise", "must be nonnegative"));
        }
        if let Some(l) = rc.lambda {
            if !(l >= 0.0) {
                return Err(field("reconstruct.lambda", "must be nonnegative"));
            }
        }
        if let Some(e) = rc.max_rel_error {
            positive("reconstruct.max_rel_error", e)?;
        }
        let cc = &self.control;
        if cc.norm == ControlNormName::WeightedSup && !(cc.weight_exponent > 1.0) {
            return Err(field("control.weight_exponent", "the weighted regime needs an exponent above 1"));
        }
        positive("control.replay_tolerance", cc.replay_tolerance)?;
        positive("control.max_final_error", cc.max_final_error)?;
        if cc.steps_per_cell == Some(0) {
            return Err(field("control.steps_per_cell", "must be at least 1"));
        }
        for (i, c) in self.report.commands.iter().enumerate() {
            if !crate::commands::COMMANDS.contains(&c.as_str()) || c == "report" {
                return Err(field(&format!("report.commands[{i}]"), format!("unknown command {c:?}")));
            }
        }
        Ok(())
    }

    fn validate_mask(&self) -> Result<(), ConfigError> {
        let m = &self.mask;
        if m.n_x == 0 {
            return Err(field("mask.n_x", "must be at least 1"));
        }
        let need = |v: Option<f64>, name: &str| -> Result<f64, ConfigError> {
            v.ok_or_else(|| field(&format!("mask.{name}"), format!("required for kind {:?}", m.kind)))
        };
        match m.kind {
            MaskKind::Full | MaskKind::Empty => {}
            MaskKind::Cylinder => {
                let [a, b] = m.omega.ok_or_else(|| field("mask.omega", "required for kind Cylinder"))?;
                if !(0.0 <= a && a < b && b <= 1.0) {
                    return Err(field("mask.omega", "must be a nonempty subinterval of [0, 1]"));
                }
                if let Some([s, t]) = m.times {
                    if !(s < t) {
                        return Err(field("mask.times", "must be an increasing pair"));
                    }
                }
            }
            MaskKind::Zigzag => positive("mask.eps", need(m.eps, "eps")?)?,
            MaskKind::Cusp => {
                need(m.x0, "x0")?;
            }
            MaskKind::MissingBall => {
                need(m.center, "center")?;
                positive("mask.radius", need(m.radius, "radius")?)?;
            }
            MaskKind::RandomRects => {
                if m.count.unwrap_or(0) == 0 {
                    return Err(field("mask.count", "required and positive for kind RandomRects"));
                }
            }
            MaskKind::File => {
                let p = m.path.as_ref().ok_or_else(|| field("mask.path", "required for kind File"))?;
                if !p.is_file() {
                    return Err(field("mask.path", format!("file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn kernel_fn(&self) -> ExpPolyFn {
        parse(&self.kernel).expect("validated kernel")
    }

    pub fn basis(&self) -> memflow_core::Result<EigenBasis> {
        interval_basis(self.basis.modes, self.basis.n_x)
    }

    pub fn window_or_full(&self) -> (f64, f64) {
        self.window.map_or((0.0, self.time.horizon), |[s, t]| (s, t))
    }

    /// Builds the configured mask; random generators use `seed`.
    pub fn build_mask(&self, seed: u64) -> Result<Mask, crate::error::RunError> {
        let m = &self.mask;
        let (h, n_t, n_x) = (self.time.horizon, self.time.n_t, m.n_x);
        let mask = match m.kind {
            MaskKind::Full => Mask::from_fn(h, n_t, n_x, "full", |_, _| true)?,
            MaskKind::Empty => Mask::empty(h, n_t, n_x)?,
            MaskKind::Cylinder => {
                let [a, b] = m.omega.unwrap_or([0.0, 1.0]);
                let [s, t] = m.times.unwrap_or([0.0, h]);
                geometry::cylinder(h, n_t, n_x, (a, b), (s, t))?
            }
            MaskKind::Zigzag => geometry::zigzag(h, n_t, n_x, m.eps.unwrap_or(0.1))?,
            MaskKind::Cusp => geometry::cusp(h, n_t, n_x, m.x0.unwrap_or(0.5), m.start.unwrap_or(0.0))?,
            MaskKind::MissingBall => geometry::missing_ball(h, n_t, n_x, m.center.unwrap_or(0.5), m.radius.unwrap_or(0.1))?,
            MaskKind::RandomRects => geometry::random_rects(h, n_t, n_x, seed, m.count.unwrap_or(1))?,
            MaskKind::File => {
                let p = m.path.as_ref().expect("validated path");
                let text = std::fs::read_to_string(p).map_err(|e| crate::error::RunError::Io(format!("{}: {e}", p.display())))?;
                Mask::from_text(&text)?
            }
        };
        Ok(mask)
    }

    /// First 16 hex digits of the SHA-256 of the canonical configuration
    /// together with the seed and tolerance scale in effect.
    pub fn hash(&self, seed: u64, tolerance_scale: f64) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("configuration serializes"));
        h.update(seed.to_le_bytes());
        h.update(tolerance_scale.to_le_bytes());
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"kernel": "exp(-t)", "basis": {"modes": 4, "n_x": 64},
        "time": {"horizon": 1.0, "n_t": 16}, "mask": {"kind": "zigzag", "eps": 0.2}}"#;

    #[test]
    fn minimal_config_validates() {
        let cfg = Config::from_json(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.flow_check, FlowCheckConfig::default());
        assert_eq!(cfg.build_mask(0).unwrap().n_x(), 64);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let text = MINIMAL.replace("\"n_x\": 64}", "\"n_x\": 64, \"extra\": 1}");
        let err = Config::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("basis"), "{err}");
    }

    #[test]
    fn kernel_error_reports_position() {
        let cfg = Config::from_json(&MINIMAL.replace("exp(-t)", "exp(-t) +* 2")).unwrap();
        match cfg.validate().unwrap_err() {
            ConfigError::Kernel { position, .. } => assert_eq!(position, 9),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_mask_parameter() {
        let cfg = Config::from_json(&MINIMAL.replace(", \"eps\": 0.2", "")).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("mask.eps"));
    }

    #[test]
    fn hash_depends_on_seed() {
        let cfg = Config::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.hash(1, 1.0), cfg.hash(1, 1.0));
        assert_ne!(cfg.hash(1, 1.0), cfg.hash(2, 1.0));
        assert_eq!(cfg.hash(1, 1.0).len(), 16);
    }
}
