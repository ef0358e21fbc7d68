//! One runner per experiment kind. Each writes its artifacts and returns the
//! summary that goes into the manifest.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use metamorph::curve::{match_curves, CurveMatchOptions, CurveSpace};
use metamorph::grid_meta::{check_horizontality, check_integrated_momentum, match_bvp, GridMode, GridModel, MatchOptions};
use metamorph::io::{GrayImage, Table};
use metamorph::kernels::KernelSpec;
use metamorph::landmark::{collision_experiment, CollisionKind, CollisionOptions, CollisionResult};
use metamorph::measure::{match_measures, MeasureMatchOptions, MeasureProblem, PointMeasure};
use metamorph::oned::{integrate_1d, lax_spectrum, OneDSystem, Variant};
use metamorph::spectral::PeriodicGrid;
use serde_json::{json, Value};

use crate::config::{CurveParams, ExperimentConfig, GridParams, Kind, MeasureParams, OneDParams};
use crate::error::{CliError, Result, SolverContext};
use crate::manifest::{ArtifactWriter, Manifest, Versions};

/// Where a config's artifacts go: absolute `output` paths are kept, relative
/// ones are joined to `root` (the kind name stands in for a missing one).
pub fn output_dir(config: &ExperimentConfig, root: &Path) -> PathBuf {
    let rel = config
        .experiment
        .output
        .clone()
        .unwrap_or_else(|| config.experiment.kind.name().to_string());
    let p = PathBuf::from(rel);
    if p.is_absolute() {
        p
    } else {
        root.join(p)
    }
}

/// Runs a validated config, writing artifacts and `manifest.json` into `out`.
/// `base` resolves relative input files.
pub fn run(config: &ExperimentConfig, base: &Path, out: &Path) -> Result<Manifest> {
    let start = Instant::now();
    let mut w = ArtifactWriter::create(out)?;
    let kind = config.experiment.kind;
    let s = kind.name();
    let summary = match kind {
        Kind::PeakonHeadon => {
            let p = config.peakon_headon.clone().unwrap_or_default();
            let opts = CollisionOptions {
                dt: p.dt,
                kernel_width: p.kernel_width,
                ..Default::default()
            };
            let r = collision_experiment(CollisionKind::HeadOn, p.momentum_gap, p.sigma2, p.horizon, &opts).during(s)?;
            peakon(&mut w, &r)?
        }
        Kind::PeakonOvertake => {
            let p = config.peakon_overtake.clone().unwrap_or_default();
            let opts = CollisionOptions {
                dt: p.dt,
                kernel_width: p.kernel_width,
                p_front: p.p_front,
            };
            let r = collision_experiment(CollisionKind::Overtaking, p.momentum_gap, p.sigma2, p.horizon, &opts)
                .during(s)?;
            peakon(&mut w, &r)?
        }
        Kind::ImageMatch => grid(&mut w, &config.image_match.clone().unwrap_or_default(), GridMode::Image, base, s)?,
        Kind::DensityMatch => {
            grid(&mut w, &config.density_match.clone().unwrap_or_default(), GridMode::Density, base, s)?
        }
        Kind::OnedRun => oned(&mut w, &config.oned_run.clone().unwrap_or_default(), s)?,
        Kind::CurveMatch => curve(&mut w, &config.curve_match.clone().unwrap_or_default(), s)?,
        Kind::MeasureMatch => measure(
            &mut w,
            &config.measure_match.clone().unwrap_or_default(),
            config.experiment.seed,
            s,
        )?,
    };
    let dir = w.dir().to_path_buf();
    let manifest = Manifest {
        kind: s.to_string(),
        seed: config.experiment.seed,
        version: Versions::current(),
        inputs: config.clone(),
        summary,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        artifacts: w.finish(),
    };
    manifest.write(&dir)?;
    Ok(manifest)
}

fn peakon(w: &mut ArtifactWriter, r: &CollisionResult) -> Result<Value> {
    w.csv("separation.csv", &r.separation_table())?;
    w.csv("trajectory.csv", &r.trajectory.to_table())?;
    let total = |k: usize| r.trajectory.states[k].p.as_slice().iter().sum::<f64>();
    let p0 = total(0);
    let momentum_drift = (0..r.trajectory.states.len())
        .map(|k| (total(k) - p0).abs())
        .fold(0.0, f64::max);
    Ok(json!({
        "crossing": r.crossing,
        "crossing_time": r.crossing_time,
        "initial_separation": r.separation[0],
        "min_separation": r.min_separation(),
        "final_separation": r.separation.last(),
        "initial_energy": r.trajectory.energy_series[0],
        "energy_drift": r.trajectory.relative_energy_drift(),
        "momentum_drift": momentum_drift,
        "steps": r.times.len() - 1,
    }))
}

fn periodic_blob(grid: &PeriodicGrid, p: &GridParams, center: [f64; 2]) -> Vec<f64> {
    let wrap = |d: f64| d - d.round();
    (0..grid.len())
        .map(|i| {
            let [x, y] = grid.coords(i);
            let (dx, dy) = (wrap(x - center[0]), wrap(y - center[1]));
            p.background + p.amplitude * (-(dx * dx + dy * dy) / (2.0 * p.blob_width * p.blob_width)).exp()
        })
        .collect()
}

fn load_field(base: &Path, file: &str, n: usize, field: &str) -> Result<Vec<f64>> {
    let path = base.join(file);
    let img = GrayImage::read_pgm(&path).map_err(|e| CliError::invalid(field, format!("{}: {e}", path.display())))?;
    if img.width != n || img.height != n {
        return Err(CliError::invalid(
            field,
            format!("image is {}x{}, resolution is {n}", img.width, img.height),
        ));
    }
    Ok(img.data)
}

fn grid(w: &mut ArtifactWriter, p: &GridParams, mode: GridMode, base: &Path, s: &'static str) -> Result<Value> {
    let n = p.resolution;
    let g = PeriodicGrid::unit(2, n).during(s)?;
    let source = match &p.source {
        Some(f) => load_field(base, f, n, &format!("{s}.source"))?,
        None => periodic_blob(&g, p, p.source_center),
    };
    let target = match &p.target {
        Some(f) => load_field(base, f, n, &format!("{s}.target"))?,
        None => periodic_blob(&g, p, p.target_center),
    };
    let model = GridModel::new(g.clone(), p.order, p.alpha, mode, p.sigma2).during(s)?;
    let opts = MatchOptions {
        timesteps: p.timesteps,
        tol: p.tol,
        max_iter: p.max_iter,
        ..Default::default()
    };
    let path = match_bvp(&model, &source, &target, &opts).during(s)?;
    let horizontality = check_horizontality(&model, &path);
    let momentum = check_integrated_momentum(&model, &path).during(s)?;

    let peak = path.images.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    let scale = match mode {
        GridMode::Image => 1.0,
        GridMode::Density if peak > 0.0 => 1.0 / peak,
        GridMode::Density => 1.0,
    };
    let mut frames = Table::new(["t", "mass", "min", "max"]);
    for (t, img) in path.images.iter().enumerate() {
        let csv = metamorph::io::grid_to_csv(n, img);
        w.bytes(&format!("frame_{t:03}.csv"), csv.as_bytes())?;
        let gray = GrayImage {
            width: n,
            height: n,
            data: img.iter().map(|v| v * scale).collect(),
        };
        w.pgm(&format!("frame_{t:03}.pgm"), &gray)?;
        let lo = img.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        frames.push(vec![t as f64 * path.dt, g.integral(img), lo, hi]);
    }
    w.csv("frames.csv", &frames)?;
    w.csv("history.csv", &path.history_table())?;
    Ok(json!({
        "mode": mode.name(),
        "energy": path.energy,
        "deformation_energy": path.deformation_energy,
        "template_energy": path.template_energy,
        "grad_norm": path.grad_norm,
        "iterations": path.iterations,
        "horizontality_residual": horizontality,
        "integrated_momentum_residual": momentum,
        "pgm_scale": scale,
    }))
}

fn cosine_series(x: &[f64], mean: f64, modes: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|x| {
            mean + modes
                .iter()
                .enumerate()
                .map(|(k, a)| a * (2.0 * PI * (k + 1) as f64 * x).cos())
                .sum::<f64>()
        })
        .collect()
}

fn oned(w: &mut ArtifactWriter, p: &OneDParams, s: &'static str) -> Result<Value> {
    let variant = Variant::parse(&p.variant).during(s)?;
    let sys = OneDSystem::new(p.points, p.a, variant, p.b).during(s)?;
    let x = sys.x();
    let state = sys
        .state(cosine_series(&x, p.m_mean, &p.m_modes), cosine_series(&x, p.rho_mean, &p.rho_modes))
        .during(s)?;
    let tr = integrate_1d(&sys, &state, p.horizon, p.dt, p.stride).during(s)?;
    w.csv("series.csv", &tr.to_table())?;
    w.csv("snapshots.csv", &tr.snapshot_table(&sys))?;
    let momentum_drift = tr.momentum.iter().map(|m| (m - tr.momentum[0]).abs()).fold(0.0, f64::max);
    let mut summary = json!({
        "variant": variant.name(),
        "initial_energy": tr.energy[0],
        "energy_drift": tr.relative_energy_drift(),
        "mass_drift": tr.mass_drift(),
        "momentum_drift": momentum_drift,
        "steps": tr.times.len() - 1,
    });
    if variant == Variant::L2 && p.eigenvalues > 0 {
        let (t0, first) = &tr.snapshots[0];
        let (t1, last) = tr.snapshots.last().expect("trajectory is never empty");
        let a = lax_spectrum(&sys, first, p.eigenvalues).during(s)?;
        let b = lax_spectrum(&sys, last, p.eigenvalues).during(s)?;
        let mut table = Table::new(["t", "k", "re", "im"]);
        for (t, spec) in [(*t0, &a), (*t1, &b)] {
            for (k, z) in spec.iter().enumerate() {
                table.push(vec![t, k as f64, z.re, z.im]);
            }
        }
        w.csv("spectrum.csv", &table)?;
        let drift = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).norm() / x.norm().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        summary["spectrum_drift"] = json!(drift);
    }
    Ok(summary)
}

fn curve(w: &mut ArtifactWriter, p: &CurveParams, s: &'static str) -> Result<Value> {
    let space = CurveSpace::new(p.points, 1).during(s)?;
    let a = space.ellipse(p.source_axes[0], p.source_axes[1]).during(s)?;
    let b = space.rotate(&space.ellipse(p.target_axes[0], p.target_axes[1]).during(s)?, p.target_rotation);
    let opts = CurveMatchOptions {
        timesteps: p.timesteps,
        tol: p.tol,
        max_iter: p.max_iter,
    };
    let path = match_curves(&space, &a, &b, p.sigma2, &opts).during(s)?;
    w.csv("snapshots.csv", &path.snapshot_table(&space))?;
    w.csv("polylines.csv", &path.polyline_table(&space))?;
    w.csv("energy.csv", &path.energy_table(&space))?;
    w.csv("history.csv", &path.history_table())?;
    Ok(json!({
        "energy": path.energy,
        "deformation_energy": path.deformation_energy,
        "template_energy": path.template_energy,
        "grad_norm": path.grad_norm,
        "iterations": path.iterations,
        "max_closure_residual": path.max_closure_residual,
    }))
}

fn point_measure(rows: &[[f64; 3]], s: &'static str) -> Result<PointMeasure> {
    PointMeasure::new(rows.iter().map(|r| r[0]).collect(), rows.iter().map(|r| [r[1], r[2]]).collect()).during(s)
}

fn measure(w: &mut ArtifactWriter, p: &MeasureParams, seed: u64, s: &'static str) -> Result<Value> {
    let kg = KernelSpec::gaussian(p.width_g, p.scale, 2).during(s)?;
    let kh = KernelSpec::gaussian(p.width_h, p.scale, 2).during(s)?;
    let source = point_measure(&p.source, s)?;
    let target = point_measure(&p.target, s)?;
    w.csv("source.csv", &source.to_table(2))?;
    w.csv("target.csv", &target.to_table(2))?;
    let problem = MeasureProblem::new(kg, kh, p.sigma2, p.timesteps, source, target).during(s)?;
    let opts = MeasureMatchOptions {
        timesteps: p.timesteps,
        tol: p.tol,
        max_iter: p.max_iter,
        restarts: p.restarts,
        seed,
        perturbation: p.perturbation,
        ..Default::default()
    };
    let m = match_measures(&problem, &opts).during(s)?;
    w.csv("path.csv", &m.path.to_table(&problem.aux_points))?;
    w.csv("history.csv", &m.history_table())?;
    let mut intervals = Table::new(["t", "energy"]);
    for (k, e) in m.interval_energies.iter().enumerate() {
        intervals.push(vec![k as f64 * m.path.dt, *e]);
    }
    w.csv("intervals.csv", &intervals)?;
    let mut restarts = Table::new(["restart", "energy", "converged"]);
    for (k, (e, c)) in m.restart_energies.iter().zip(&m.restart_converged).enumerate() {
        restarts.push(vec![k as f64, *e, if *c { 1.0 } else { 0.0 }]);
    }
    w.csv("restarts.csv", &restarts)?;
    Ok(json!({
        "energy": m.energy.total,
        "deformation_energy": m.energy.deformation,
        "template_energy": m.energy.template,
        "grad_norm": m.grad_norm,
        "iterations": m.iterations,
        "best_restart": m.best_restart,
        "restart_energies": m.restart_energies,
        "stationarity_residual": m.stationarity_residual,
    }))
}
