//! Experiment descriptions.
//!
//! A config is a TOML file with an `[experiment]` table naming the kind and
//! an optional table of the same name holding that kind's parameters.
//! Missing parameters take their defaults; unknown keys are rejected.
//!
//! ```toml
//! [experiment]
//! kind = "peakon_headon"
//! seed = 0
//! output = "headon"
//!
//! [peakon_headon]
//! sigma2 = 1e-4
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    PeakonHeadon,
    PeakonOvertake,
    ImageMatch,
    DensityMatch,
    OnedRun,
    CurveMatch,
    MeasureMatch,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::PeakonHeadon,
        Kind::PeakonOvertake,
        Kind::ImageMatch,
        Kind::DensityMatch,
        Kind::OnedRun,
        Kind::CurveMatch,
        Kind::MeasureMatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::PeakonHeadon => "peakon_headon",
            Kind::PeakonOvertake => "peakon_overtake",
            Kind::ImageMatch => "image_match",
            Kind::DensityMatch => "density_match",
            Kind::OnedRun => "oned_run",
            Kind::CurveMatch => "curve_match",
            Kind::MeasureMatch => "measure_match",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Kind::PeakonHeadon => "two peakons with opposite momenta on the line",
            Kind::PeakonOvertake => "a fast peakon catching up with a slow one",
            Kind::ImageMatch => "image metamorphosis between two periodic grayscale images",
            Kind::DensityMatch => "density metamorphosis between two periodic densities",
            Kind::OnedRun => "initial-value run of a 1D two-component system",
            Kind::CurveMatch => "metamorphosis between two closed plane curves",
            Kind::MeasureMatch => "metamorphosis between two weighted point measures",
        }
    }

    /// IVP experiments report energy drift and conserved quantities.
    pub fn is_ivp(self) -> bool {
        matches!(self, Kind::PeakonHeadon | Kind::PeakonOvertake | Kind::OnedRun)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CliError::NotFound(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; relative paths are resolved against `METAMORPH_OUT`
    /// when it is set and against the working directory otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peakon_headon: Option<HeadOnParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peakon_overtake: Option<OvertakeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_match: Option<GridParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_match: Option<GridParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oned_run: Option<OneDParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_match: Option<CurveParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_match: Option<MeasureParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadOnParams {
    pub sigma2: f64,
    /// `p = (g/2, −g/2)`.
    pub momentum_gap: f64,
    pub horizon: f64,
    pub dt: f64,
    pub kernel_width: f64,
}

impl Default for HeadOnParams {
    fn default() -> Self {
        Self {
            sigma2: 0.0,
            momentum_gap: 1.0,
            horizon: 20.0,
            dt: 1e-3,
            kernel_width: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OvertakeParams {
    pub sigma2: f64,
    /// `p = (p_front + g, p_front)`.
    pub momentum_gap: f64,
    pub p_front: f64,
    pub horizon: f64,
    pub dt: f64,
    pub kernel_width: f64,
}

impl Default for OvertakeParams {
    fn default() -> Self {
        Self {
            sigma2: 0.05,
            momentum_gap: 32.0,
            p_front: 0.5,
            horizon: 10.0,
            dt: 1e-3,
            kernel_width: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    /// Grid points per side of the unit torus.
    pub resolution: usize,
    /// Power `s` of the metric operator `(1 − αΔ)^s`.
    pub order: u32,
    pub alpha: f64,
    pub sigma2: f64,
    pub timesteps: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// PGM files; relative to the config file. Synthetic blobs otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub source_center: [f64; 2],
    pub target_center: [f64; 2],
    pub blob_width: f64,
    pub background: f64,
    pub amplitude: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            resolution: 16,
            order: 2,
            alpha: 0.01,
            sigma2: 0.1,
            timesteps: 8,
            tol: 1e-5,
            max_iter: 2000,
            source: None,
            target: None,
            source_center: [0.4, 0.5],
            target_center: [0.6, 0.5],
            blob_width: 0.12,
            background: 0.2,
            amplitude: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneDParams {
    /// Power of two.
    pub points: usize,
    /// Helmholtz coefficient in `m = (1 − a∂²)u`.
    pub a: f64,
    /// `l2`, `generalized` or `smooth`.
    pub variant: String,
    pub b: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Steps between stored snapshots.
    pub stride: usize,
    /// `m(x) = m_mean + Σ_k m_modes[k] cos(2π(k+1)x)`.
    pub m_mean: f64,
    pub m_modes: Vec<f64>,
    pub rho_mean: f64,
    pub rho_modes: Vec<f64>,
    /// Lax eigenvalues of smallest modulus to track; `l2` only, 0 disables.
    pub eigenvalues: usize,
}

impl Default for OneDParams {
    fn default() -> Self {
        Self {
            points: 256,
            a: 1.0,
            variant: "l2".into(),
            b: 0.05,
            horizon: 1.0,
            dt: 1e-3,
            stride: 100,
            m_mean: 0.5,
            m_modes: vec![0.2, -0.1],
            rho_mean: 0.8,
            rho_modes: vec![0.1],
            eigenvalues: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveParams {
    pub points: usize,
    pub sigma2: f64,
    pub timesteps: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Ellipse semi-axes of the endpoints.
    pub source_axes: [f64; 2],
    pub target_axes: [f64; 2],
    pub target_rotation: f64,
}

impl Default for CurveParams {
    fn default() -> Self {
        Self {
            points: 32,
            sigma2: 1.0,
            timesteps: 8,
            tol: 1e-6,
            max_iter: 3000,
            source_axes: [1.0, 1.0],
            target_axes: [1.0, 0.7],
            target_rotation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureParams {
    /// Gaussian widths of the deformation and template kernels.
    pub width_g: f64,
    pub width_h: f64,
    pub scale: f64,
    pub sigma2: f64,
    pub timesteps: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub perturbation: f64,
    /// Rows `[weight, x, y]`.
    pub source: Vec<[f64; 3]>,
    pub target: Vec<[f64; 3]>,
}

impl Default for MeasureParams {
    fn default() -> Self {
        Self {
            width_g: 1.0,
            width_h: 1.0,
            scale: 1.0,
            sigma2: 0.5,
            timesteps: 6,
            tol: 1e-6,
            max_iter: 5000,
            restarts: 3,
            perturbation: 0.1,
            source: vec![[1.0, 0.0, 0.0]],
            target: vec![[0.5, -0.4, 0.0], [0.5, 0.4, 0.0]],
        }
    }
}

fn positive(section: &str, name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::invalid(format!("{section}.{name}"), format!("must be positive, got {v}")))
    }
}

fn nonnegative(section: &str, name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(CliError::invalid(format!("{section}.{name}"), format!("must be non-negative, got {v}")))
    }
}

fn at_least(section: &str, name: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(CliError::invalid(format!("{section}.{name}"), format!("must be at least {min}, got {v}")))
    }
}

fn finite(section: &str, name: &str, v: &[f64]) -> Result<()> {
    match v.iter().find(|x| !x.is_finite()) {
        None => Ok(()),
        Some(x) => Err(CliError::invalid(format!("{section}.{name}"), format!("must be finite, got {x}"))),
    }
}

impl HeadOnParams {
    pub fn validate(&self, s: &str) -> Result<()> {
        nonnegative(s, "sigma2", self.sigma2)?;
        finite(s, "momentum_gap", &[self.momentum_gap])?;
        positive(s, "horizon", self.horizon)?;
        positive(s, "dt", self.dt)?;
        positive(s, "kernel_width", self.kernel_width)
    }
}

impl OvertakeParams {
    pub fn validate(&self, s: &str) -> Result<()> {
        nonnegative(s, "sigma2", self.sigma2)?;
        finite(s, "momentum_gap", &[self.momentum_gap])?;
        finite(s, "p_front", &[self.p_front])?;
        positive(s, "horizon", self.horizon)?;
        positive(s, "dt", self.dt)?;
        positive(s, "kernel_width", self.kernel_width)
    }
}

impl GridParams {
    pub fn validate(&self, s: &str) -> Result<()> {
        at_least(s, "resolution", self.resolution, 4)?;
        at_least(s, "order", self.order as usize, 2)?;
        positive(s, "alpha", self.alpha)?;
        positive(s, "sigma2", self.sigma2)?;
        at_least(s, "timesteps", self.timesteps, 1)?;
        positive(s, "tol", self.tol)?;
        positive(s, "blob_width", self.blob_width)?;
        finite(s, "source_center", &self.source_center)?;
        finite(s, "target_center", &self.target_center)?;
        finite(s, "background", &[self.background])?;
        finite(s, "amplitude", &[self.amplitude])
    }
}

impl OneDParams {
    pub fn validate(&self, s: &str) -> Result<()> {
        if !self.points.is_power_of_two() || self.points < 8 {
            return Err(CliError::invalid(
                format!("{s}.points"),
                format!("must be a power of two of at least 8, got {}", self.points),
            ));
        }
        nonnegative(s, "a", self.a)?;
        metamorph::oned::Variant::parse(&self.variant)
            .map_err(|_| CliError::invalid(format!("{s}.variant"), format!("expected l2, generalized or smooth, got {}", self.variant)))?;
        positive(s, "b", self.b)?;
        positive(s, "horizon", self.horizon)?;
        positive(s, "dt", self.dt)?;
        at_least(s, "stride", self.stride, 1)?;
        finite(s, "m_modes", &self.m_modes)?;
        finite(s, "rho_modes", &self.rho_modes)?;
        finite(s, "m_mean", &[self.m_mean])?;
        finite(s, "rho_mean", &[self.rho_mean])
    }
}

impl CurveParams {
    pub fn validate(&self, s: &str) -> Result<()> {
        at_least(s, "points", self.points, 8)?;
        positive(s, "sigma2", self.sigma2)?;
        at_least(s, "timesteps", self.timesteps, 1)?;
        positive(s, "tol", self.tol)?;
        positive(s, "source_axes", self.source_axes[0].min(self.source_axes[1]))?;
        positive(s, "target_axes", self.target_axes[0].min(self.target_axes[1]))?;
        finite(s, "target_rotation", &[self.target_rotation])
    }
}

impl MeasureParams {
    pub fn validate(&self, s: &str) -> Result<()> {
        positive(s, "width_g", self.width_g)?;
        positive(s, "width_h", self.width_h)?;
        positive(s, "scale", self.scale)?;
        positive(s, "sigma2", self.sigma2)?;
        at_least(s, "timesteps", self.timesteps, 2)?;
        positive(s, "tol", self.tol)?;
        at_least(s, "restarts", self.restarts, 1)?;
        nonnegative(s, "perturbation", self.perturbation)?;
        at_least(s, "source", self.source.len(), 1)?;
        at_least(s, "target", self.target.len(), 1)?;
        finite(s, "source", &self.source.concat())?;
        finite(s, "target", &self.target.concat())
    }
}

impl ExperimentConfig {
    /// The default config of a kind, with its parameter table filled in.
    pub fn template(kind: Kind) -> Self {
        let mut c = ExperimentConfig {
            experiment: Experiment {
                kind,
                seed: 0,
                output: Some(kind.name().to_string()),
            },
            peakon_headon: None,
            peakon_overtake: None,
            image_match: None,
            density_match: None,
            oned_run: None,
            curve_match: None,
            measure_match: None,
        };
        match kind {
            Kind::PeakonHeadon => c.peakon_headon = Some(Default::default()),
            Kind::PeakonOvertake => c.peakon_overtake = Some(Default::default()),
            Kind::ImageMatch => c.image_match = Some(Default::default()),
            Kind::DensityMatch => c.density_match = Some(Default::default()),
            Kind::OnedRun => c.oned_run = Some(Default::default()),
            Kind::CurveMatch => c.curve_match = Some(Default::default()),
            Kind::MeasureMatch => c.measure_match = Some(Default::default()),
        }
        c
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        c.normalize()?;
        Ok(c)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let mut c: ExperimentConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        c.normalize()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// Rejects tables of other kinds, fills in the missing parameter table
    /// and validates it.
    fn normalize(&mut self) -> Result<()> {
        let kind = self.experiment.kind;
        let present = [
            (Kind::PeakonHeadon, self.peakon_headon.is_some()),
            (Kind::PeakonOvertake, self.peakon_overtake.is_some()),
            (Kind::ImageMatch, self.image_match.is_some()),
            (Kind::DensityMatch, self.density_match.is_some()),
            (Kind::OnedRun, self.oned_run.is_some()),
            (Kind::CurveMatch, self.curve_match.is_some()),
            (Kind::MeasureMatch, self.measure_match.is_some()),
        ];
        if let Some((other, _)) = present.iter().find(|(k, p)| *p && *k != kind) {
            return Err(CliError::invalid(
                other.name(),
                format!("table does not belong to experiment kind {kind}"),
            ));
        }
        let s = kind.name();
        match kind {
            Kind::PeakonHeadon => self.peakon_headon.get_or_insert_with(Default::default).validate(s),
            Kind::PeakonOvertake => self.peakon_overtake.get_or_insert_with(Default::default).validate(s),
            Kind::ImageMatch => self.image_match.get_or_insert_with(Default::default).validate(s),
            Kind::DensityMatch => self.density_match.get_or_insert_with(Default::default).validate(s),
            Kind::OnedRun => self.oned_run.get_or_insert_with(Default::default).validate(s),
            Kind::CurveMatch => self.curve_match.get_or_insert_with(Default::default).validate(s),
            Kind::MeasureMatch => self.measure_match.get_or_insert_with(Default::default).validate(s),
        }
    }
}
