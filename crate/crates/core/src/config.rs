//! Experiment configuration read from TOML. Every section is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ecc::EccConfig;
use crate::error::{Error, Result};
use crate::motion_model::ScenarioMask;
use crate::reconstruction::RampFilter;
use crate::simulation::ScanGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub phantom: String,
    pub scenario: String,
    pub geometry: ScanGeometry,
    pub projector: ProjectorConfig,
    pub motion: MotionConfig,
    pub ecc: EccSection,
    pub optimizer: OptimizerSection,
    pub downsample: DownsampleConfig,
    pub reconstruction: ReconstructionConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 7,
            phantom: "tibia-like".into(),
            scenario: "oop".into(),
            geometry: ScanGeometry::default(),
            projector: ProjectorConfig::default(),
            motion: MotionConfig::default(),
            ecc: EccSection::default(),
            optimizer: OptimizerSection::default(),
            downsample: DownsampleConfig::default(),
            reconstruction: ReconstructionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectorConfig {
    /// Rays per pixel along each detector axis; pixel values are the mean
    /// over the `supersampling²` rays. 1 samples the pixel center only.
    pub supersampling: usize,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        Self { supersampling: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub nodes: usize,
    pub amplitude_translation_um: f64,
    pub amplitude_rotation_deg: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            nodes: 9,
            amplitude_translation_um: 50.0,
            amplitude_rotation_deg: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EccSection {
    pub kappa_step_deg: f64,
    pub kappa_max_deg: Option<f64>,
    pub pair_stride: usize,
    pub n_alpha: Option<usize>,
    pub n_t: Option<usize>,
}

impl Default for EccSection {
    fn default() -> Self {
        Self {
            kappa_step_deg: 0.1,
            kappa_max_deg: None,
            pair_stride: 1,
            n_alpha: None,
            n_t: None,
        }
    }
}

impl EccSection {
    pub fn to_ecc_config(&self) -> Result<EccConfig> {
        let cfg = EccConfig {
            kappa_step: self.kappa_step_deg.to_radians(),
            kappa_max: self.kappa_max_deg.map(f64::to_radians),
            pair_stride: self.pair_stride,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    /// Defaults to 1000 for `oop` and `ip`, 2000 for `full`.
    pub max_iter: Option<usize>,
    pub x_tol: f64,
    pub f_tol: f64,
    /// Initial simplex step as a fraction of the bound half-width.
    pub initial_step: f64,
    /// Write wall-clock times to the cost log. When off the column is left
    /// empty and the log is reproducible byte for byte.
    pub log_elapsed: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            max_iter: None,
            x_tol: 1e-6,
            f_tol: 1e-10,
            initial_step: 0.1,
            log_elapsed: true,
        }
    }
}

impl OptimizerSection {
    pub fn max_iter_for(&self, mask: &ScenarioMask) -> usize {
        self.max_iter
            .unwrap_or(if mask.count() == 6 { 2000 } else { 1000 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownsampleConfig {
    pub view_stride: usize,
    pub pixel_binning: usize,
}

impl Default for DownsampleConfig {
    fn default() -> Self {
        Self {
            view_stride: 1,
            pixel_binning: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub voxels: usize,
    pub spacing_mm: f64,
    pub filter: RampFilter,
    /// Rendered slice, as a fraction of the half-depth from the center.
    pub slice_offset: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            voxels: 64,
            spacing_mm: 0.3,
            filter: RampFilter::RamLak,
            slice_offset: 0.25,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mask(&self) -> Result<ScenarioMask> {
        self.scenario.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.mask()?;
        self.ecc.to_ecc_config()?;
        crate::simulation::make_phantom(&self.phantom)?;
        if self.projector.supersampling == 0 {
            return Err(Error::Config("projector.supersampling must be at least 1".into()));
        }
        let m = &self.motion;
        if m.nodes < 2 || m.nodes > self.geometry.n_projections {
            return Err(Error::Config(format!(
                "motion.nodes must lie in [2, n_projections], got {}",
                m.nodes
            )));
        }
        if !(m.amplitude_translation_um >= 0.0 && m.amplitude_rotation_deg >= 0.0)
            || !m.amplitude_translation_um.is_finite()
            || !m.amplitude_rotation_deg.is_finite()
        {
            return Err(Error::Config("motion amplitudes must be finite and non-negative".into()));
        }
        let o = &self.optimizer;
        if o.max_iter == Some(0) || !(o.initial_step > 0.0 && o.initial_step <= 1.0) {
            return Err(Error::Config(
                "optimizer needs max_iter >= 1 and initial_step in (0, 1]".into(),
            ));
        }
        let d = &self.downsample;
        if d.view_stride == 0 || (self.geometry.n_projections - 1) % d.view_stride != 0 {
            return Err(Error::Config(format!(
                "downsample.view_stride {} must divide n_projections - 1 = {}",
                d.view_stride,
                self.geometry.n_projections - 1
            )));
        }
        if d.pixel_binning == 0
            || self.geometry.detector_rows % d.pixel_binning != 0
            || self.geometry.detector_cols % d.pixel_binning != 0
        {
            return Err(Error::Config(format!(
                "downsample.pixel_binning {} must divide the detector size",
                d.pixel_binning
            )));
        }
        let r = &self.reconstruction;
        if r.voxels == 0 || !(r.spacing_mm > 0.0) || !(0.0..=1.0).contains(&r.slice_offset.abs()) {
            return Err(Error::Config("reconstruction needs voxels > 0, spacing > 0, |slice_offset| <= 1".into()));
        }
        Ok(())
    }
}
