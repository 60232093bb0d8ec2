//! Run configuration: one JSON document per run.

use serde::{Deserialize, Serialize};

use qsm_core::asymptotics::FitWindow;
use qsm_core::evolve::EvolveParams;
use qsm_core::metric::schwarzschild_profile;
use qsm_core::sphere::{mode_index, ModeCoeffs, SphereGrid, MAX_DIMENSION, MIN_DIMENSION, MIN_LMAX};
use qsm_core::tolerances;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub lmax: usize,
    pub r0: f64,
    pub r_max: f64,
    #[serde(default)]
    pub initial: InitialLapse,
    #[serde(default)]
    pub evolve: EvolveSettings,
    #[serde(default)]
    pub window: WindowSettings,
    #[serde(default = "default_audit")]
    pub audit_tolerance: f64,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub probe: ProbeSettings,
    #[serde(default)]
    pub imcf: ImcfSettings,
    #[serde(default)]
    pub verify: VerifySettings,
}

fn default_audit() -> f64 {
    tolerances::SCALAR_AUDIT
}

/// Lapse data at `r0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLapse {
    Constant { value: f64 },
    Schwarzschild { m: f64 },
    /// Schwarzschild lapse of mass `m` plus the listed modes.
    Seeded {
        #[serde(default)]
        m: f64,
        modes: Vec<ModeSeed>,
    },
}

impl Default for InitialLapse {
    fn default() -> Self {
        InitialLapse::Constant { value: 1.0 }
    }
}

/// Amplitude of one basis function; `index` runs over `0..2l+1` for
/// `n = 3` (azimuthal order `index - l`) and is `0` for `n >= 4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSeed {
    pub l: usize,
    #[serde(default)]
    pub index: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSettings {
    pub safety: f64,
    pub max_step: f64,
    pub snapshots: usize,
    pub guard_floor: f64,
    pub guard_ceiling: f64,
}

impl Default for EvolveSettings {
    fn default() -> Self {
        Self {
            safety: tolerances::STEP_SAFETY,
            max_step: 0.05,
            snapshots: 200,
            guard_floor: tolerances::GUARD_FLOOR,
            guard_ceiling: tolerances::GUARD_CEILING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSettings {
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub near_field: f64,
    pub nuisance: bool,
}

impl Default for WindowSettings {
    fn default() -> Self {
        Self {
            r_min: None,
            r_max: None,
            near_field: tolerances::FIT_NEAR_FIELD,
            nuisance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    /// Repeat the probe with doubled `lmax` and doubled station count.
    pub refine: bool,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { refine: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImcfSettings {
    /// Final flow time; defaults to reaching the outermost station.
    pub t_max: Option<f64>,
    pub samples: usize,
    /// Use the closed-form Schwarzschild pair of this mass instead of a snapshot.
    pub closed_form_mass: Option<f64>,
}

impl Default for ImcfSettings {
    fn default() -> Self {
        Self {
            t_max: None,
            samples: 41,
            closed_form_mass: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    /// Check names to run; `None` runs every check.
    pub select: Option<Vec<String>>,
}

fn bad<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Check every field against the preconditions of the modules it feeds.
    pub fn validate(&self) -> CliResult<()> {
        if !(MIN_DIMENSION..=MAX_DIMENSION).contains(&self.n) {
            return bad(format!("n={} outside {MIN_DIMENSION}..={MAX_DIMENSION}", self.n));
        }
        if self.lmax < MIN_LMAX {
            return bad(format!("lmax={} below {MIN_LMAX}", self.lmax));
        }
        self.evolve_params()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.audit_tolerance > 0.0) {
            return bad("audit_tolerance must be positive");
        }
        let horizon = |m: f64| -> CliResult<()> {
            let lhs = self.r0.powf(self.n as f64 - 2.0);
            if !(lhs > 2.0 * m) {
                return bad(format!("r0^(n-2)={lhs} must exceed 2m={}", 2.0 * m));
            }
            Ok(())
        };
        match &self.initial {
            InitialLapse::Constant { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return bad(format!("constant initial lapse must be positive, got {value}"));
                }
            }
            InitialLapse::Schwarzschild { m } => horizon(*m)?,
            InitialLapse::Seeded { m, modes } => {
                horizon(*m)?;
                for s in modes {
                    if s.l > self.lmax {
                        return bad(format!("seed mode l={} exceeds lmax={}", s.l, self.lmax));
                    }
                    let block = if self.n == 3 { 2 * s.l + 1 } else { 1 };
                    if s.index >= block {
                        return bad(format!("seed index {} out of range for l={}", s.index, s.l));
                    }
                    if !s.amplitude.is_finite() {
                        return bad("seed amplitude must be finite");
                    }
                }
            }
        }
        let w = &self.window;
        if !(w.near_field > 0.0) {
            return bad("window.near_field must be positive");
        }
        if let (Some(a), Some(b)) = (w.r_min, w.r_max) {
            if !(b > a) {
                return bad("window.r_max must exceed window.r_min");
            }
        }
        if self.imcf.samples < 5 {
            return bad("imcf.samples must be at least 5");
        }
        if let Some(t) = self.imcf.t_max {
            if !(t > 0.0) {
                return bad("imcf.t_max must be positive");
            }
        }
        Ok(())
    }

    pub fn evolve_params(&self) -> EvolveParams {
        let mut p = EvolveParams::new(self.r0, self.r_max, self.lmax);
        p.safety = self.evolve.safety;
        p.max_step = self.evolve.max_step;
        p.snapshots = self.evolve.snapshots;
        p.audit_tolerance = self.audit_tolerance;
        p.guard_floor = self.evolve.guard_floor;
        p.guard_ceiling = self.evolve.guard_ceiling;
        p
    }

    pub fn fit_window(&self) -> FitWindow {
        let mut w = FitWindow::new(
            self.window.r_min.unwrap_or(self.window.near_field * self.r0),
            self.window.r_max.unwrap_or(f64::INFINITY),
        );
        w.near_field = self.window.near_field;
        w.nuisance = self.window.nuisance;
        w
    }

    /// Spectral lapse data at `r0`.
    pub fn initial_coeffs(&self, grid: &SphereGrid) -> ModeCoeffs {
        match &self.initial {
            InitialLapse::Constant { value } => grid.constant_coeffs(*value),
            InitialLapse::Schwarzschild { m } => grid.constant_coeffs(schwarzschild_profile(self.n, *m, self.r0).u),
            InitialLapse::Seeded { m, modes } => {
                let mut c = grid.constant_coeffs(schwarzschild_profile(self.n, *m, self.r0).u);
                for s in modes {
                    let order = if self.n == 3 { s.index as i64 - s.l as i64 } else { 0 };
                    c.data[mode_index(self.n, s.l, order)] += s.amplitude;
                }
                c
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"n": 3, "lmax": 8, "r0": 2.0, "r_max": 20.0"#;

    fn parse(extra: &str) -> CliResult<RunConfig> {
        RunConfig::from_json(&format!("{BASE}{extra}}}"))
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse("").unwrap();
        assert_eq!(c.evolve.snapshots, 200);
        assert_eq!(c.initial, InitialLapse::Constant { value: 1.0 });
    }

    #[test]
    fn zero_constant_rejected() {
        let e = parse(r#", "initial": {"kind": "constant", "value": 0.0}"#).unwrap_err();
        assert_eq!(e.code(), "E_CONFIG");
    }

    #[test]
    fn horizon_and_seed_checks() {
        assert!(parse(r#", "initial": {"kind": "schwarzschild", "m": 1.0}"#).is_err());
        assert!(parse(r#", "initial": {"kind": "seeded", "modes": [{"l": 9, "amplitude": 0.1}]}"#).is_err());
        assert!(parse(r#", "initial": {"kind": "seeded", "modes": [{"l": 1, "index": 3, "amplitude": 0.1}]}"#).is_err());
        assert!(parse(r#", "initial": {"kind": "seeded", "modes": [{"l": 1, "index": 1, "amplitude": 0.1}]}"#).is_ok());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(parse(r#", "colour": 3"#).is_err());
    }
}
