//! End-to-end steps on a dataset directory: simulate, compensate,
//! reconstruct and evaluate.
//!
//! Layout:
//!
//! ```text
//! config.toml               effective configuration
//! meta.json                 effective scan geometry and simulation settings
//! geometry.json             clean projection matrices
//! geometry_motion.json      motion-corrupted matrices
//! spline_gt.json            ground-truth motion spline
//! proj/view_0000.raw ...    projection images, little-endian f32
//! spline_est.json           estimated motion (compensate)
//! geometry_recovered.json   corrected matrices (compensate)
//! cost_log.csv              iteration, cost, elapsed_ms (compensate)
//! compensate.json           run summary (compensate)
//! recon_<which>.raw/.json   FDK volumes (reconstruct)
//! report.csv                metric, before, after (evaluate)
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::ecc::{total_cost, weighted_table, EccConfig};
use crate::error::{Error, Result};
use crate::geometry::{apply_motion, ProjectionMatrix, RigidParams};
use crate::io::{read_geometry, read_json, write_geometry, write_json, SplineFile};
use crate::metrics::{mse, param_l1, ssim};
use crate::motion_model::{MotionSpline, ScenarioMask, PARAM_NAMES};
use crate::optimizer::{nelder_mead_with_callback, OptimizerConfig};
use crate::radon::{default_grid, ProjectionImage, RadonDerivativeTable};
use crate::reconstruction::{fdk, off_center_slice, render_slice, RampFilter};
use crate::simulation::{
    bin_image, bin_matrix, ensure_dir, forward_project_area, inject_motion, make_phantom, random_spline,
    read_image, short_scan_trajectory, write_image, ScanGeometry, Volume, VolumeGrid,
};

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    /// Geometry of the stored data, after downsampling.
    pub geometry: ScanGeometry,
    /// Geometry the data were rendered with.
    pub acquisition_geometry: ScanGeometry,
    pub view_stride: usize,
    pub pixel_binning: usize,
    /// Rays per pixel along each detector axis.
    pub supersampling: usize,
    pub phantom: String,
    pub scenario: String,
    pub seed: u64,
    pub nodes: usize,
    pub amplitude_translation_um: f64,
    pub amplitude_rotation_deg: f64,
    pub units: MetaUnits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaUnits {
    pub length: String,
    pub angle: String,
    pub detector: String,
    pub image: String,
}

impl Default for MetaUnits {
    fn default() -> Self {
        Self {
            length: "mm".into(),
            angle: "deg".into(),
            detector: "px".into(),
            image: "line integral of density, mm".into(),
        }
    }
}

/// A loaded dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub meta: Meta,
    pub config: Config,
    pub images: Vec<ProjectionImage>,
}

fn missing(path: PathBuf, hint: &str) -> Error {
    Error::MissingArtifact {
        path,
        hint: hint.into(),
    }
}

fn require(path: PathBuf, hint: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(missing(path, hint))
    }
}

pub fn view_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("proj").join(format!("view_{i:04}.raw"))
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta: Meta = read_json(&require(dir.join("meta.json"), "run simulate first")?)?;
        let config = Config::from_file(&require(dir.join("config.toml"), "run simulate first")?)?;
        let g = &meta.geometry;
        let images = (0..g.n_projections)
            .map(|i| read_image(&view_path(dir, i), g.detector_cols, g.detector_rows, g.pixel_pitch_mm))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            config,
            images,
        })
    }

    pub fn geometry(&self, name: &str) -> Result<Vec<ProjectionMatrix>> {
        let (file, hint) = match name {
            "original" => ("geometry.json", "run simulate first"),
            "motion" => ("geometry_motion.json", "run simulate first"),
            "recovered" => ("geometry_recovered.json", "run compensate first"),
            other => {
                return Err(Error::Config(format!(
                    "unknown geometry `{other}` (expected original, motion or recovered)"
                )))
            }
        };
        let ps = read_geometry(&require(self.dir.join(file), hint)?)?;
        if ps.len() != self.meta.geometry.n_projections {
            return Err(Error::LengthMismatch {
                what: "projection matrices",
                expected: self.meta.geometry.n_projections,
                actual: ps.len(),
            });
        }
        Ok(ps)
    }

    pub fn spline(&self, file: &str, hint: &str) -> Result<MotionSpline> {
        let f: SplineFile = read_json(&require(self.dir.join(file), hint)?)?;
        if f.n_projections != self.meta.geometry.n_projections {
            return Err(Error::LengthMismatch {
                what: "spline projections",
                expected: self.meta.geometry.n_projections,
                actual: f.n_projections,
            });
        }
        f.to_spline()
    }

    /// Radon-derivative tables of the weighted images, using the default grid
    /// unless the configuration overrides it.
    pub fn tables(&self, ps: &[ProjectionMatrix]) -> Result<Vec<RadonDerivativeTable>> {
        let g = &self.meta.geometry;
        let (na, nt) = default_grid(g.detector_cols, g.detector_rows);
        let na = self.config.ecc.n_alpha.unwrap_or(na);
        let nt = self.config.ecc.n_t.unwrap_or(nt);
        self.images
            .iter()
            .zip(ps)
            .map(|(img, p)| weighted_table(img, p, na, nt))
            .collect()
    }
}

/// Renders a dataset into `out`. Identical configurations produce
/// byte-identical directories.
pub fn simulate(cfg: &Config, out: &Path) -> Result<Meta> {
    cfg.validate()?;
    let mask = cfg.mask()?;
    let g = &cfg.geometry;
    let phantom = make_phantom(&cfg.phantom)?;
    let clean = short_scan_trajectory(g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spline = random_spline(
        g.n_projections,
        cfg.motion.nodes,
        cfg.motion.amplitude_translation_um / 1000.0,
        cfg.motion.amplitude_rotation_deg,
        &mask,
        &mut rng,
    )?;
    let moved = inject_motion(&clean, &spline)?;

    let (stride, bin) = (cfg.downsample.view_stride, cfg.downsample.pixel_binning);
    let kept: Vec<usize> = (0..g.n_projections).step_by(stride).collect();
    let eff = ScanGeometry {
        n_projections: kept.len(),
        detector_rows: g.detector_rows / bin,
        detector_cols: g.detector_cols / bin,
        pixel_pitch_mm: g.pixel_pitch_mm * bin as f64,
        ..g.clone()
    };
    let mut eff_spline = spline.clone();
    eff_spline
        .node_indices
        .iter_mut()
        .for_each(|x| *x /= stride as f64);
    eff_spline.validate(eff.n_projections)?;

    ensure_dir(&out.join("proj"))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string()).map_err(|e| Error::io(out.join("config.toml"), e))?;
    let meta = Meta {
        geometry: eff.clone(),
        acquisition_geometry: g.clone(),
        view_stride: stride,
        pixel_binning: bin,
        supersampling: cfg.projector.supersampling,
        phantom: cfg.phantom.clone(),
        scenario: mask.name().to_string(),
        seed: cfg.seed,
        nodes: cfg.motion.nodes,
        amplitude_translation_um: cfg.motion.amplitude_translation_um,
        amplitude_rotation_deg: cfg.motion.amplitude_rotation_deg,
        units: MetaUnits::default(),
    };
    write_json(&out.join("meta.json"), &meta)?;
    let pick = |ps: &[ProjectionMatrix]| -> Vec<ProjectionMatrix> {
        kept.iter().map(|&i| bin_matrix(&ps[i], bin)).collect()
    };
    write_geometry(&out.join("geometry.json"), &pick(&clean))?;
    write_geometry(&out.join("geometry_motion.json"), &pick(&moved))?;
    write_json(
        &out.join("spline_gt.json"),
        &SplineFile::from_spline(&eff_spline, eff.n_projections),
    )?;
    for (k, &i) in kept.iter().enumerate() {
        let img = forward_project_area(
            &phantom,
            &clean[i],
            g.detector_rows,
            g.detector_cols,
            g.pixel_pitch_mm,
            cfg.projector.supersampling,
        )?;
        write_image(&view_path(out, k), &bin_image(&img, bin)?)?;
    }
    Ok(meta)
}

/// Options for [`compensate`]; `None` falls back to the dataset config.
#[derive(Debug, Clone, Default)]
pub struct CompensateOptions {
    pub scenario: Option<String>,
    pub max_iter: Option<usize>,
    pub x_tol: Option<f64>,
    pub f_tol: Option<f64>,
    /// Fraction of the bound half-width.
    pub initial_step: Option<f64>,
    pub log_elapsed: Option<bool>,
}

/// Contents of `compensate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensateSummary {
    pub scenario: String,
    pub dimension: usize,
    pub max_iter: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

/// Objective of the compensation: the ECC cost after undoing the motion
/// described by the packed spline values.
pub struct CompensationProblem {
    pub ps: Vec<ProjectionMatrix>,
    pub tables: Vec<RadonDerivativeTable>,
    pub ecc: EccConfig,
    pub mask: ScenarioMask,
    pub template: MotionSpline,
}

impl CompensationProblem {
    pub fn dimension(&self) -> usize {
        self.mask.count() * self.template.n_nodes()
    }

    pub fn spline(&self, x: &[f64]) -> Result<MotionSpline> {
        let mut s = self.template.clone();
        s.unpack(&self.mask, x)?;
        Ok(s)
    }

    pub fn corrections(&self, spline: &MotionSpline) -> Result<Vec<RigidParams>> {
        Ok(spline
            .expand(self.ps.len())?
            .iter()
            .map(RigidParams::inverse)
            .collect())
    }

    pub fn cost(&self, x: &[f64]) -> Result<f64> {
        let params = self.corrections(&self.spline(x)?)?;
        total_cost(&self.ps, &self.tables, &params, &self.ecc)
    }

    pub fn recovered(&self, spline: &MotionSpline) -> Result<Vec<ProjectionMatrix>> {
        Ok(self
            .ps
            .iter()
            .zip(self.corrections(spline)?)
            .map(|(p, c)| apply_motion(p, &c))
            .collect())
    }
}

pub fn compensation_problem(ds: &Dataset, mask: ScenarioMask) -> Result<CompensationProblem> {
    let ps = ds.geometry("motion")?;
    let tables = ds.tables(&ps)?;
    Ok(CompensationProblem {
        ps,
        tables,
        ecc: ds.config.ecc.to_ecc_config()?,
        mask,
        template: MotionSpline::uniform(ds.meta.geometry.n_projections, ds.meta.nodes)?,
    })
}

/// Bounds `±amplitude` per active coordinate, in packing order.
pub fn bounds_for(meta: &Meta, mask: &ScenarioMask) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for k in 0..6 {
        if !mask.active[k] {
            continue;
        }
        let a = if k < 3 {
            meta.amplitude_translation_um / 1000.0
        } else {
            meta.amplitude_rotation_deg
        };
        // A zero amplitude still needs a non-empty box.
        let a = if a > 0.0 { a } else { 1e-9 };
        out.extend(std::iter::repeat_n((-a, a), meta.nodes));
    }
    out
}

pub fn compensate(dir: &Path, opts: &CompensateOptions) -> Result<CompensateSummary> {
    let ds = Dataset::open(dir)?;
    let scenario = opts.scenario.clone().unwrap_or_else(|| ds.meta.scenario.clone());
    let mask: ScenarioMask = scenario.parse()?;
    if mask.name() != ds.meta.scenario {
        return Err(Error::Config(format!(
            "scenario `{}` does not match the dataset's simulated scenario `{}`",
            mask.name(),
            ds.meta.scenario
        )));
    }
    let problem = compensation_problem(&ds, mask)?;
    let o = &ds.config.optimizer;
    let max_iter = opts.max_iter.unwrap_or_else(|| o.max_iter_for(&mask));
    let mut oc = OptimizerConfig::with_bounds(bounds_for(&ds.meta, &mask), max_iter);
    oc.x_tol = opts.x_tol.unwrap_or(o.x_tol);
    oc.f_tol = opts.f_tol.unwrap_or(o.f_tol);
    let frac = opts.initial_step.unwrap_or(o.initial_step);
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Config(format!("initial step must lie in (0, 1], got {frac}")));
    }
    oc.initial_step = oc.bounds.iter().map(|(lo, hi)| frac * (hi - lo) / 2.0).collect();

    let log_elapsed = opts.log_elapsed.unwrap_or(o.log_elapsed);
    let start = Instant::now();
    let mut log = csv::Writer::from_writer(Vec::new());
    log.write_record(["iteration", "cost", "elapsed_ms"]).expect("in-memory write");
    let result = nelder_mead_with_callback(
        |x| problem.cost(x),
        &vec![0.0; problem.dimension()],
        &oc,
        |it, f| {
            let ms = if log_elapsed {
                start.elapsed().as_millis().to_string()
            } else {
                String::new()
            };
            log.write_record([it.to_string(), format!("{f:e}"), ms])
                .expect("in-memory write");
        },
    )?;
    let bytes = log.into_inner().expect("in-memory flush");
    let log_path = dir.join("cost_log.csv");
    std::fs::write(&log_path, bytes).map_err(|e| Error::io(&log_path, e))?;

    let est = problem.spline(&result.x_best)?;
    let n = ds.meta.geometry.n_projections;
    write_json(&dir.join("spline_est.json"), &SplineFile::from_spline(&est, n))?;
    write_geometry(&dir.join("geometry_recovered.json"), &problem.recovered(&est)?)?;
    let summary = CompensateSummary {
        scenario: mask.name().to_string(),
        dimension: problem.dimension(),
        max_iter,
        iterations: result.iterations,
        evaluations: result.evaluations,
        initial_cost: result.history[0].1,
        final_cost: result.f_best,
    };
    write_json(&dir.join("compensate.json"), &summary)?;
    Ok(summary)
}

/// Options for [`reconstruct`]; `None` falls back to the dataset config.
#[derive(Debug, Clone, Default)]
pub struct ReconstructOptions {
    pub voxels: Option<usize>,
    pub spacing_mm: Option<f64>,
    pub filter: Option<RampFilter>,
    /// Write an off-center slice PNG next to the volume.
    pub png: bool,
    pub slice_offset: Option<f64>,
    pub window: Option<(f64, f64)>,
}

pub fn volume_stem(dir: &Path, which: &str) -> PathBuf {
    dir.join(format!("recon_{which}"))
}

pub fn reconstruct(dir: &Path, which: &str, opts: &ReconstructOptions) -> Result<Volume> {
    let ds = Dataset::open(dir)?;
    let ps = ds.geometry(which)?;
    let rc = &ds.config.reconstruction;
    let grid = VolumeGrid::centered_cube(
        opts.voxels.unwrap_or(rc.voxels),
        opts.spacing_mm.unwrap_or(rc.spacing_mm),
    );
    let vol = fdk(&ds.images, &ps, &grid, &ds.meta.geometry, opts.filter.unwrap_or(rc.filter))?;
    let stem = volume_stem(dir, which);
    vol.write(&stem)?;
    if opts.png {
        let z = off_center_slice(grid.nz, opts.slice_offset.unwrap_or(rc.slice_offset));
        render_slice(&vol, z, opts.window.unwrap_or((-0.2, 1.4)), &stem.with_extension("png"))?;
    }
    Ok(vol)
}

/// One row of the evaluation report. `None` marks an inactive parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub before: Option<f64>,
    pub after: Option<f64>,
}

/// MSE and SSIM against the reconstruction with the clean geometry, and
/// per-parameter L1 errors, before and after compensation.
pub fn evaluate(dir: &Path) -> Result<Vec<ReportRow>> {
    let ds = Dataset::open(dir)?;
    let load = |which: &str| -> Result<Volume> {
        let stem = volume_stem(dir, which);
        if !stem.with_extension("json").exists() {
            return Err(missing(
                stem.with_extension("json"),
                &format!("run reconstruct --which {which} first"),
            ));
        }
        Volume::read(&stem)
    };
    let reference = load("original")?;
    let before = load("motion")?;
    let after = load("recovered")?;
    let summary: CompensateSummary =
        read_json(&require(dir.join("compensate.json"), "run compensate first")?)?;
    let mask: ScenarioMask = summary.scenario.parse()?;
    let gt = ds.spline("spline_gt.json", "run simulate first")?;
    let est = ds.spline("spline_est.json", "run compensate first")?;
    let n = ds.meta.geometry.n_projections;
    let zero = MotionSpline::uniform(n, gt.n_nodes())?;
    let zero = MotionSpline {
        node_indices: gt.node_indices.clone(),
        ..zero
    };
    let l1_before = param_l1(&gt, &zero, n, &mask)?;
    let l1_after = param_l1(&gt, &est, n, &mask)?;

    let mut rows = vec![
        ReportRow {
            metric: "mse".into(),
            before: Some(mse(&before, &reference)?),
            after: Some(mse(&after, &reference)?),
        },
        ReportRow {
            metric: "ssim".into(),
            before: Some(ssim(&before, &reference)?),
            after: Some(ssim(&after, &reference)?),
        },
    ];
    for k in 0..6 {
        rows.push(ReportRow {
            metric: format!("l1_{}", PARAM_NAMES[k]),
            before: l1_before[k],
            after: l1_after[k],
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "before", "after"]).expect("in-memory write");
    let cell = |v: Option<f64>| v.map_or("x".to_string(), |v| format!("{v:e}"));
    for r in &rows {
        w.write_record([r.metric.clone(), cell(r.before), cell(r.after)])
            .expect("in-memory write");
    }
    let path = dir.join("report.csv");
    std::fs::write(&path, w.into_inner().expect("in-memory flush")).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// Human-readable `before -> after` table.
pub fn format_report(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:>14}    {:>14}", "metric", "before", "after");
    for r in rows {
        let cell = |v: Option<f64>| v.map_or("x".to_string(), |v| format!("{v:.6e}"));
        let _ = writeln!(s, "{:<8} {:>14} -> {:>14}", r.metric, cell(r.before), cell(r.after));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> Config {
        let mut cfg = Config::default();
        cfg.geometry.n_projections = 13;
        cfg.motion.nodes = 4;
        cfg
    }

    #[test]
    fn zero_amplitude_leaves_geometry_clean() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.motion.amplitude_translation_um = 0.0;
        cfg.motion.amplitude_rotation_deg = 0.0;
        simulate(&cfg, dir.path()).unwrap();
        let a = std::fs::read(dir.path().join("geometry.json")).unwrap();
        let b = std::fs::read(dir.path().join("geometry_motion.json")).unwrap();
        assert_eq!(a, b);
        assert!(view_path(dir.path(), 12).exists());
        assert!(!view_path(dir.path(), 13).exists());
    }

    #[test]
    fn downsampled_dataset_matches_a_coarse_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.downsample.view_stride = 3;
        cfg.downsample.pixel_binning = 2;
        let meta = simulate(&cfg, dir.path()).unwrap();
        assert_eq!(meta.geometry.n_projections, 5);
        assert_eq!((meta.geometry.detector_cols, meta.geometry.detector_rows), (48, 32));
        let ds = Dataset::open(dir.path()).unwrap();
        let stored = ds.geometry("original").unwrap();
        let direct = short_scan_trajectory(&meta.geometry).unwrap();
        for (a, b) in stored.iter().zip(&direct) {
            assert!((a.0 - b.0).norm() <= 1e-12 * b.0.norm());
        }
        let gt = ds.spline("spline_gt.json", "").unwrap();
        assert_eq!(gt.node_indices.last(), Some(&4.0));
    }

    #[test]
    fn bounds_follow_the_mask() {
        let meta = Meta {
            geometry: ScanGeometry::default(),
            acquisition_geometry: ScanGeometry::default(),
            view_stride: 1,
            pixel_binning: 1,
            supersampling: 1,
            phantom: "tibia-like".into(),
            scenario: "oop".into(),
            seed: 1,
            nodes: 9,
            amplitude_translation_um: 50.0,
            amplitude_rotation_deg: 1.0,
            units: MetaUnits::default(),
        };
        let b = bounds_for(&meta, &ScenarioMask::OUT_OF_PLANE);
        assert_eq!(b.len(), 27);
        assert_eq!(b[0], (-0.05, 0.05));
        assert_eq!(b[9], (-1.0, 1.0));
        assert_eq!(bounds_for(&meta, &ScenarioMask::IN_PLANE).len(), 27);
        assert_eq!(bounds_for(&meta, &ScenarioMask::FULL).len(), 54);
    }

    #[test]
    fn missing_recovered_geometry_names_compensate() {
        let dir = tempfile::tempdir().unwrap();
        simulate(&small_config(), dir.path()).unwrap();
        let err = reconstruct(dir.path(), "recovered", &ReconstructOptions::default()).unwrap_err();
        assert!(err.to_string().contains("compensate"), "{err}");
    }
}
