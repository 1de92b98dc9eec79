use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use super::config::{Experiment, ExperimentConfig};
use super::output::{emit_outputs, write_vtk_file};
use crate::adaptivity::{adapt_cycle, Criterion};
use crate::error::{AmrError, Result};
use crate::fem::{FeSpace, NodalField};
use crate::line::LineSpace;
use crate::mesh::Mesh;
use crate::models::{
    ch_step, chemical_potential, energy, median, mms_exact, mms_l2_error, random_mixture_ic, ChState,
    Diagnostics, DiagnosticsRow, DiffusionStepper,
};
use crate::transfer::TransferMode;

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn sci(v: f64) -> String {
    format!("{v:e}")
}

fn require(cfg: &ExperimentConfig, exp: Experiment) -> Result<()> {
    cfg.validate()?;
    if cfg.experiment != exp {
        return Err(AmrError::Config(format!("expected a {exp:?} configuration, got {:?}", cfg.experiment)));
    }
    Ok(())
}

/// `|cos(2πx)| + 10`.
pub fn demo_profile(x: f64) -> f64 {
    (2.0 * std::f64::consts::PI * x).cos().abs() + 10.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demo1dReport {
    pub degree: usize,
    pub fine_elements: usize,
    pub original: f64,
    pub injection: f64,
    pub conservative: f64,
}

impl Demo1dReport {
    pub fn summary(&self) -> Vec<(String, String)> {
        vec![
            kv("experiment", "demo1d"),
            kv("degree", self.degree),
            kv("fine_elements", self.fine_elements),
            kv("coarse_elements", self.fine_elements / 2),
            kv("original", sci(self.original)),
            kv("injection", sci(self.injection)),
            kv("conservative", sci(self.conservative)),
            kv("conservative_minus_original", sci(self.conservative - self.original)),
        ]
    }
}

/// Coarsen `|cos(2πx)| + 10` from 16 linear (or 8 quadratic) elements by both operators.
pub fn run_demo1d(cfg: &ExperimentConfig) -> Result<Demo1dReport> {
    require(cfg, Experiment::Demo1d)?;
    let n = if cfg.degree == 1 { 16 } else { 8 };
    let fine = LineSpace::new(n, cfg.degree)?;
    let coarse = fine.coarsened()?;
    let u = fine.interpolate(demo_profile);
    Ok(Demo1dReport {
        degree: cfg.degree,
        fine_elements: n,
        original: fine.integral(&u),
        injection: coarse.integral(&fine.inject(&u)?),
        conservative: coarse.integral(&fine.coarsen_conservative(&u, cfg.solver.linear())?),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub solve: Duration,
    pub transfer: Duration,
    pub total: Duration,
}

impl Timings {
    fn summary(&self) -> Vec<(String, String)> {
        vec![
            kv("time_solve_s", format!("{:.3}", self.solve.as_secs_f64())),
            kv("time_transfer_s", format!("{:.3}", self.transfer.as_secs_f64())),
            kv("time_total_s", format!("{:.3}", self.total.as_secs_f64())),
        ]
    }
}

fn snapshot(cfg: &ExperimentConfig, out: Option<&Path>, step: usize, fields: &[(&str, &NodalField)]) -> Result<()> {
    let (Some(dir), every) = (out, cfg.output.snapshot_every) else { return Ok(()) };
    if every == 0 || step % every != 0 {
        return Ok(());
    }
    let dir = dir.join("snapshots");
    fs::create_dir_all(&dir)?;
    write_vtk_file(&dir.join(format!("step_{step:06}.vtk")), fields)
}

#[derive(Debug, Clone)]
pub struct MmsReport {
    pub mode: TransferMode,
    pub degree: usize,
    pub level: u8,
    pub steps: usize,
    pub diagnostics: Diagnostics,
    pub l2_error: f64,
    pub final_drift: f64,
    pub coarsening_events: usize,
    pub final_elements: usize,
    pub final_dofs: usize,
    pub timings: Timings,
}

impl MmsReport {
    pub fn summary(&self) -> Vec<(String, String)> {
        let mut s = vec![
            kv("experiment", "mms"),
            kv("mode", self.mode),
            kv("degree", self.degree),
            kv("level", self.level),
            kv("steps", self.steps),
            kv("l2_error", sci(self.l2_error)),
            kv("final_mass_drift", sci(self.final_drift)),
            kv("coarsening_events", self.coarsening_events),
            kv("final_elements", self.final_elements),
            kv("final_dofs", self.final_dofs),
        ];
        s.extend(self.timings.summary());
        s
    }
}

/// Dirichlet energy `½ ∫ |∇φ|²`, the energy column of diffusion runs.
pub fn dirichlet_energy(field: &NodalField) -> Result<f64> {
    field.integrate_with(2 * field.space().degree() + 1, |_, _, g| 0.5 * (g[0] * g[0] + g[1] * g[1]))
}

/// Manufactured-solution diffusion with gradient-driven coarsening after every step.
pub fn run_mms(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<MmsReport> {
    require(cfg, Experiment::Mms)?;
    let start = Instant::now();
    let mc = cfg.mms.expect("validated");
    let problem = mc.problem();
    let mode = cfg.transfer.phi;
    let criterion = Criterion::Mms(mc.criterion());
    let space = FeSpace::with_quadrature(Mesh::uniform(mc.level)?, cfg.degree, cfg.quadrature())?;
    let mut phi = NodalField::interpolate(space, |x| mms_exact(x[0], x[1], 0.0, &problem));
    let mut stepper = DiffusionStepper::new(problem, cfg.solver.linear())?;
    let mut diag = Diagnostics::new();
    let mut timings = Timings::default();
    let row = |t: f64, phi: &NodalField, de: f64| -> Result<DiagnosticsRow> {
        Ok(DiagnosticsRow {
            time: t,
            mass: phi.integral(),
            energy: dirichlet_energy(phi)?,
            delta_e_coarsen: de,
            num_elements: phi.space().n_leaves(),
            num_dofs: phi.space().n_dofs(),
        })
    };
    diag.push(row(0.0, &phi, 0.0)?)?;
    snapshot(cfg, out, 0, &[("phi", &phi)])?;
    let steps = problem.n_steps();
    let mut events = 0;
    for step in 1..=steps {
        let t = step as f64 * problem.dt;
        let ts = Instant::now();
        phi = stepper.step(&phi)?;
        timings.solve += ts.elapsed();
        if step % mc.adapt_every != 0 {
            diag.push(row(t, &phi, 0.0)?)?;
            snapshot(cfg, out, step, &[("phi", &phi)])?;
            continue;
        }
        let adapted = adapt_cycle(&[phi], &[mode], &criterion, &dirichlet_energy, cfg.solver.linear())?;
        timings.transfer += adapted.transfer_time;
        if adapted.merged > 0 {
            events += 1;
        }
        let de = adapted.delta_e;
        phi = adapted.fields.into_iter().next().expect("one field");
        diag.push(row(t, &phi, de)?)?;
        snapshot(cfg, out, step, &[("phi", &phi)])?;
    }
    let t_final = steps as f64 * problem.dt;
    let l2_error = mms_l2_error(&phi, t_final, &problem)?;
    timings.total = start.elapsed();
    let report = MmsReport {
        mode,
        degree: cfg.degree,
        level: mc.level,
        steps,
        final_drift: *diag.mass_drift()?.last().expect("non-empty"),
        diagnostics: diag,
        l2_error,
        coarsening_events: events,
        final_elements: phi.space().n_leaves(),
        final_dofs: phi.space().n_dofs(),
        timings,
    };
    if let Some(dir) = out {
        emit_outputs(dir, Some(&report.diagnostics), &report.summary())?;
    }
    Ok(report)
}

/// Least-squares order `s` in `error ∝ h^s` with `h = 2^-level`.
pub fn convergence_order(levels: &[u8], errors: &[f64]) -> f64 {
    let n = levels.len() as f64;
    let xs: Vec<f64> = levels.iter().map(|&l| -(l as f64) * std::f64::consts::LN_2).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone)]
pub struct SpinodalReport {
    pub mode: TransferMode,
    pub steps: usize,
    pub diagnostics: Diagnostics,
    pub max_abs_drift: f64,
    /// Largest `E(t_{n+1}) − E(t_n)` over the run (negative when energy always fell).
    pub max_energy_increase: f64,
    pub median_delta_e: Option<f64>,
    pub coarsening_events: usize,
    pub newton_iterations: usize,
    pub halved_steps: usize,
    pub timings: Timings,
}

impl SpinodalReport {
    pub fn summary(&self) -> Vec<(String, String)> {
        let e0 = self.diagnostics.rows().first().map(|r| r.energy).unwrap_or(0.0);
        let last = self.diagnostics.rows().last();
        let mut s = vec![
            kv("experiment", "spinodal"),
            kv("mode", self.mode),
            kv("steps", self.steps),
            kv("max_abs_mass_drift", sci(self.max_abs_drift)),
            kv("initial_energy", sci(e0)),
            kv("final_energy", sci(last.map(|r| r.energy).unwrap_or(0.0))),
            kv("max_energy_increase", sci(self.max_energy_increase)),
            kv("median_delta_E_coarsen", self.median_delta_e.map(sci).unwrap_or_else(|| "none".into())),
            kv("coarsening_events", self.coarsening_events),
            kv("newton_iterations", self.newton_iterations),
            kv("halved_steps", self.halved_steps),
            kv("final_elements", last.map(|r| r.num_elements).unwrap_or(0)),
            kv("final_dofs", last.map(|r| r.num_dofs).unwrap_or(0)),
        ];
        s.extend(self.timings.summary());
        s
    }
}

/// Cahn–Hilliard from a random mixture with interface-band adaptation after every step.
///
/// On a Newton failure the diagnostics gathered so far are still written to `out`.
pub fn run_spinodal(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<SpinodalReport> {
    require(cfg, Experiment::Spinodal)?;
    let start = Instant::now();
    let sc = cfg.spinodal.expect("validated");
    let problem = sc.problem(cfg.seed);
    let criterion = Criterion::Interface(sc.criterion());
    let modes = [cfg.transfer.phi, cfg.transfer.mu];
    let space = FeSpace::with_quadrature(Mesh::uniform(sc.fine_level)?, cfg.degree, cfg.quadrature())?;
    let phi = random_mixture_ic(&space, problem.mean, problem.amplitude, problem.seed)?;
    let mu = chemical_potential(&phi, &problem, cfg.solver.linear())?;
    let mut state = ChState { phi, mu };
    let energy_fn = |f: &NodalField| energy(f, &problem);
    let mut diag = Diagnostics::new();
    let mut timings = Timings::default();
    let row = |t: f64, s: &ChState, de: f64| -> Result<DiagnosticsRow> {
        Ok(DiagnosticsRow {
            time: t,
            mass: s.phi.integral(),
            energy: energy(&s.phi, &problem)?,
            delta_e_coarsen: de,
            num_elements: s.phi.space().n_leaves(),
            num_dofs: s.phi.space().n_dofs(),
        })
    };
    diag.push(row(0.0, &state, 0.0)?)?;
    snapshot(cfg, out, 0, &[("phi", &state.phi), ("mu", &state.mu)])?;
    let steps = problem.n_steps();
    let (mut events, mut newton_iterations, mut halved_steps) = (0, 0, 0);
    let mut deltas = Vec::new();
    for step in 1..=steps {
        let t = step as f64 * problem.dt;
        let ts = Instant::now();
        let stepped = match ch_step(&state, &problem, cfg.solver.newton()) {
            Ok(s) => s,
            Err(e) => {
                if let Some(dir) = out {
                    let summary = vec![kv("experiment", "spinodal"), kv("failed_at_step", step), kv("error", &e)];
                    emit_outputs(dir, Some(&diag), &summary)?;
                }
                return Err(e);
            }
        };
        timings.solve += ts.elapsed();
        newton_iterations += stepped.newton_iterations;
        halved_steps += usize::from(stepped.halved);
        if step % sc.adapt_every != 0 {
            state = stepped.state;
            diag.push(row(t, &state, 0.0)?)?;
            snapshot(cfg, out, step, &[("phi", &state.phi), ("mu", &state.mu)])?;
            continue;
        }
        let adapted = adapt_cycle(
            &[stepped.state.phi, stepped.state.mu],
            &modes,
            &criterion,
            &energy_fn,
            cfg.solver.linear(),
        )?;
        timings.transfer += adapted.transfer_time;
        if adapted.merged > 0 {
            events += 1;
            deltas.push(adapted.delta_e);
        }
        let de = adapted.delta_e;
        let mut it = adapted.fields.into_iter();
        state = ChState { phi: it.next().expect("phi"), mu: it.next().expect("mu") };
        diag.push(row(t, &state, de)?)?;
        snapshot(cfg, out, step, &[("phi", &state.phi), ("mu", &state.mu)])?;
    }
    timings.total = start.elapsed();
    let max_energy_increase = diag
        .rows()
        .windows(2)
        .map(|w| w[1].energy - w[0].energy)
        .fold(f64::NEG_INFINITY, f64::max);
    let report = SpinodalReport {
        mode: cfg.transfer.phi,
        steps,
        max_abs_drift: diag.max_abs_drift()?,
        diagnostics: diag,
        max_energy_increase,
        median_delta_e: median(&deltas),
        coarsening_events: events,
        newton_iterations,
        halved_steps,
        timings,
    };
    if let Some(dir) = out {
        emit_outputs(dir, Some(&report.diagnostics), &report.summary())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{MmsConfig, SpinodalConfig};

    #[test]
    fn demo_reports_three_integrals() {
        let r = run_demo1d(&ExperimentConfig::new(Experiment::Demo1d, 1)).unwrap();
        assert!((r.original - 10.6284).abs() < 1e-3);
        assert!((r.injection - 10.6036).abs() < 1e-3);
        assert!((r.conservative - r.original).abs() < 1e-11);
        let s = r.summary();
        assert!(s.contains(&("original".to_string(), format!("{:e}", r.original))));
    }

    #[test]
    fn wrong_experiment_is_rejected() {
        assert!(run_mms(&ExperimentConfig::new(Experiment::Demo1d, 1), None).is_err());
    }

    #[test]
    fn convergence_order_of_exact_power_law() {
        let levels = [4u8, 5, 6];
        let errs: Vec<f64> = levels.iter().map(|&l| 3.0 * (2f64).powi(-2 * l as i32)).collect();
        assert!((convergence_order(&levels, &errs) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn short_mms_run_writes_outputs() {
        let mut cfg = ExperimentConfig::new(Experiment::Mms, 1);
        cfg.mms = Some(MmsConfig { level: 3, t_final: 0.05, ..MmsConfig::default() });
        cfg.output.snapshot_every = 5;
        let dir = tempfile::tempdir().unwrap();
        let r = run_mms(&cfg, Some(dir.path())).unwrap();
        assert_eq!(r.steps, 5);
        assert_eq!(r.diagnostics.rows().len(), 6);
        assert!(r.final_drift.abs() < 1e-11);
        assert!(dir.path().join("diagnostics.csv").exists());
        assert!(dir.path().join("summary.txt").exists());
        assert!(dir.path().join("snapshots/step_000005.vtk").exists());
    }

    #[test]
    fn short_spinodal_run_is_repeatable() {
        let mut cfg = ExperimentConfig::new(Experiment::Spinodal, 1);
        cfg.seed = 3;
        cfg.spinodal = Some(SpinodalConfig { bulk_level: 2, fine_level: 4, t_final: 0.005, ..SpinodalConfig::default() });
        let a = run_spinodal(&cfg, None).unwrap();
        let b = run_spinodal(&cfg, None).unwrap();
        assert_eq!(a.diagnostics, b.diagnostics);
        assert!(a.max_abs_drift < 1e-12);
    }
}
