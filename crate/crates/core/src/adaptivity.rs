//! Marking strategies and the refine-then-coarsen adaptation cycle.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fem::{FeSpace, NodalField, SolverSettings};
use crate::mesh::{AdaptPlan, Flag, Stage};
use crate::transfer::{energy_mismatch, transfer_coarsen, transfer_refine, TransferMode};

/// Gradient-threshold coarsening between levels `level − 1` and `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmsCriterion {
    pub tau: f64,
    pub fraction: f64,
    pub level: u8,
}

impl MmsCriterion {
    /// Threshold that halves with each level: `1e-2` at level 5.
    pub fn scaled_tau(level: u8) -> f64 {
        1e-2 * 2f64.powi(5 - level as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(0.0..=1.0).contains(&self.fraction) || self.level == 0 {
            return invalid(format!("invalid gradient criterion {self:?}"));
        }
        Ok(())
    }
}

/// Values that mark an element as part of the diffuse interface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Band {
    /// `|φ| ≤ delta`.
    Symmetric { delta: f64 },
    /// `lo < φ < hi`.
    Interval { lo: f64, hi: f64 },
}

impl Band {
    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Band::Symmetric { delta } => v.abs() <= delta,
            Band::Interval { lo, hi } => lo < v && v < hi,
        }
    }
}

/// Two-level interface tracking: interface at `fine_level`, bulk at `bulk_level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceCriterion {
    pub band: Band,
    pub bulk_level: u8,
    pub fine_level: u8,
}

impl InterfaceCriterion {
    pub fn validate(&self) -> Result<()> {
        if self.bulk_level >= self.fine_level {
            return invalid(format!("bulk level {} must be below interface level {}", self.bulk_level, self.fine_level));
        }
        Ok(())
    }
}

/// `∫ ‖∇_ξ φ‖ dξ` over the reference square of each leaf, i.e. `(2/h) ∫_e ‖∇φ‖`.
pub fn gradient_indicator(field: &NodalField) -> Result<Vec<f64>> {
    let raw = field.leaf_integrals(field.space().n_quad_1d(), |_, _, g| (g[0] * g[0] + g[1] * g[1]).sqrt())?;
    let mesh = field.space().mesh();
    Ok(raw.iter().enumerate().map(|(e, v)| 2.0 / mesh.leaf(e).width() * v).collect())
}

/// Coarsening plan from the gradient indicator: level-`l` leaves below `tau`,
/// united with the complete level-`l` sibling families of smallest indicator
/// (largest child value) until `⌊fraction · #leaves⌋` leaves are flagged. Ranking
/// families rather than leaves keeps the fraction clause from selecting partial
/// families that can never merge. Ties go to the family earlier in Morton order.
pub fn mark_mms(field: &NodalField, crit: &MmsCriterion) -> Result<AdaptPlan> {
    crit.validate()?;
    let mesh = field.space().mesh();
    let leaves = mesh.leaves();
    let eta = gradient_indicator(field)?;
    let mut flags = vec![Flag::NoChange; mesh.len()];
    for (e, leaf) in leaves.iter().enumerate() {
        if leaf.level() == crit.level && eta[e] < crit.tau {
            flags[e] = Flag::Coarsen;
        }
    }
    // Leaves are in Morton order, so a complete family is four consecutive leaves.
    let mut family_eta = vec![f64::INFINITY; mesh.len()];
    let mut families = Vec::new();
    for e in 0..leaves.len().saturating_sub(3) {
        let first = &leaves[e];
        if first.level() == crit.level
            && first.child_index() == 0
            && leaves[e + 3].level() == crit.level
            && leaves[e + 3].parent() == first.parent()
        {
            family_eta[e] = eta[e..e + 4].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            families.push(e);
        }
    }
    let count = (crit.fraction * mesh.len() as f64).floor() as usize;
    for e in lowest(&family_eta, families, count.div_ceil(4)) {
        flags[e..e + 4].fill(Flag::Coarsen);
    }
    AdaptPlan::new(Stage::Coarsen, flags)
}

/// The `count` candidates with the smallest indicator; ties go to the lower leaf index.
fn lowest(eta: &[f64], mut candidates: Vec<usize>, count: usize) -> Vec<usize> {
    candidates.sort_by(|&a, &b| eta[a].total_cmp(&eta[b]).then(a.cmp(&b)));
    candidates.truncate(count);
    candidates
}

/// Whether any nodal or Gauss value of each leaf lies in the band.
pub fn interface_leaves(field: &NodalField, band: &Band) -> Vec<bool> {
    let gauss = field.eval_at_gauss();
    (0..field.space().n_leaves())
        .map(|e| {
            field.local_values(e).iter().chain(gauss.block(e)).any(|&v| band.contains(v))
        })
        .collect()
}

/// Interface-band plan for one stage, clamped to `[bulk_level, fine_level]`.
pub fn mark_interface(field: &NodalField, crit: &InterfaceCriterion, stage: Stage) -> Result<AdaptPlan> {
    crit.validate()?;
    let mesh = field.space().mesh();
    let iface = interface_leaves(field, &crit.band);
    let flags = mesh
        .leaves()
        .iter()
        .zip(&iface)
        .map(|(leaf, &i)| match stage {
            Stage::Refine if i && leaf.level() < crit.fine_level => Flag::Refine,
            Stage::Coarsen if !i && leaf.level() > crit.bulk_level => Flag::Coarsen,
            _ => Flag::NoChange,
        })
        .collect();
    AdaptPlan::new(stage, flags)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    Mms(MmsCriterion),
    Interface(InterfaceCriterion),
}

impl Criterion {
    pub fn plan(&self, field: &NodalField, stage: Stage) -> Result<AdaptPlan> {
        match (self, stage) {
            (Criterion::Mms(_), Stage::Refine) => Ok(AdaptPlan::unchanged(stage, field.space().n_leaves())),
            (Criterion::Mms(c), Stage::Coarsen) => mark_mms(field, c),
            (Criterion::Interface(c), _) => mark_interface(field, c, stage),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    /// Fields on the final mesh, in input order.
    pub fields: Vec<NodalField>,
    /// Energy mismatch of the first field across the coarsening; zero without merges.
    pub delta_e: f64,
    pub refined: usize,
    pub merged: usize,
    /// Wall time spent in field transfers.
    pub transfer_time: Duration,
}

impl AdaptOutcome {
    pub fn space(&self) -> &Arc<FeSpace> {
        self.fields[0].space()
    }
}

/// Refine stage then coarsen stage, both marked from `fields[0]`. Every field
/// is interpolated on refinement; on coarsening field `i` uses `modes[i]`.
pub fn adapt_cycle(
    fields: &[NodalField],
    modes: &[TransferMode],
    criterion: &Criterion,
    energy: &dyn Fn(&NodalField) -> Result<f64>,
    settings: SolverSettings,
) -> Result<AdaptOutcome> {
    if fields.is_empty() || fields.len() != modes.len() {
        return invalid(format!("{} fields with {} transfer modes", fields.len(), modes.len()));
    }
    let space = fields[0].space().clone();
    if fields.iter().any(|f| !Arc::ptr_eq(f.space(), &space)) {
        return invalid("all fields must share one space".to_string());
    }
    let mut fields = fields.to_vec();
    let mut transfer_time = Duration::ZERO;

    let plan = criterion.plan(&fields[0], Stage::Refine)?;
    let mut refined = 0;
    if !plan.is_empty() {
        let (mesh, record) = space.mesh().execute_refine(&plan)?;
        refined = mesh.len() - space.n_leaves();
        let new_space = FeSpace::with_quadrature(mesh, space.degree(), space.n_quad_1d())?;
        let t = Instant::now();
        fields = fields.iter().map(|f| transfer_refine(f, &new_space, &record)).collect::<Result<_>>()?;
        transfer_time += t.elapsed();
    }

    let space = fields[0].space().clone();
    let plan = criterion.plan(&fields[0], Stage::Coarsen)?;
    let mut merged = 0;
    let mut delta_e = 0.0;
    if !plan.is_empty() {
        let (mesh, record) = space.mesh().execute_coarsen(&plan)?;
        merged = record.merged_count();
        if merged > 0 {
            let new_space = FeSpace::with_quadrature(mesh, space.degree(), space.n_quad_1d())?;
            let t = Instant::now();
            let moved: Vec<NodalField> = fields
                .iter()
                .zip(modes)
                .map(|(f, &m)| transfer_coarsen(f, &new_space, &record, m, settings))
                .collect::<Result<_>>()?;
            transfer_time += t.elapsed();
            delta_e = energy_mismatch(&fields[0], &moved[0], energy)?;
            fields = moved;
        }
    }
    Ok(AdaptOutcome { fields, delta_e, refined, merged, transfer_time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    fn zero_energy(_: &NodalField) -> Result<f64> {
        Ok(0.0)
    }

    #[test]
    fn constant_field_coarsens_every_fine_leaf() {
        let s = FeSpace::new(Mesh::uniform(3).unwrap(), 1).unwrap();
        let f = NodalField::constant(s, 1.0);
        let plan = mark_mms(&f, &MmsCriterion { tau: 1e-2, fraction: 0.1, level: 3 }).unwrap();
        assert_eq!(plan.count(Flag::Coarsen), 64);
    }

    #[test]
    fn steep_field_uses_fraction_in_whole_families() {
        let s = FeSpace::new(Mesh::uniform(3).unwrap(), 1).unwrap();
        let f = NodalField::interpolate(s.clone(), |x| 100.0 * x[0]);
        let plan = mark_mms(&f, &MmsCriterion { tau: 1e-8, fraction: 0.1, level: 3 }).unwrap();
        // ⌊0.1 · 64⌋ = 6 leaves rounds up to two families.
        assert_eq!(plan.count(Flag::Coarsen), 8);
        let (coarse, _) = s.mesh().execute_coarsen(&plan).unwrap();
        assert_eq!(coarse.len(), 64 - 6);
    }

    #[test]
    fn fraction_ties_break_by_morton_position() {
        let eta = [1.0, 0.5, 0.5, 2.0, 0.5];
        assert_eq!(lowest(&eta, vec![4, 3, 2, 1, 0], 2), vec![1, 2]);
        assert_eq!(lowest(&eta, vec![0, 3], 5), vec![0, 3]);
    }

    #[test]
    fn coarse_level_is_never_flagged() {
        let s = FeSpace::new(Mesh::uniform(2).unwrap(), 1).unwrap();
        let f = NodalField::constant(s, 1.0);
        let plan = mark_mms(&f, &MmsCriterion { tau: 1e-2, fraction: 0.1, level: 3 }).unwrap();
        assert!(plan.is_empty());
    }

    #[test]
    fn interface_marking() {
        let s = FeSpace::new(Mesh::uniform(3).unwrap(), 1).unwrap();
        let crit = InterfaceCriterion { band: Band::Symmetric { delta: 0.9 }, bulk_level: 2, fine_level: 4 };
        let zero = NodalField::constant(s.clone(), 0.0);
        assert_eq!(mark_interface(&zero, &crit, Stage::Refine).unwrap().count(Flag::Refine), 64);
        assert!(mark_interface(&zero, &crit, Stage::Coarsen).unwrap().is_empty());
        let bulk = NodalField::constant(s.clone(), 0.95);
        assert!(mark_interface(&bulk, &crit, Stage::Refine).unwrap().is_empty());
        assert_eq!(mark_interface(&bulk, &crit, Stage::Coarsen).unwrap().count(Flag::Coarsen), 64);
        let fh = InterfaceCriterion { band: Band::Interval { lo: 0.3, hi: 0.7 }, ..crit };
        let half = NodalField::constant(s, 0.5);
        assert_eq!(mark_interface(&half, &fh, Stage::Refine).unwrap().count(Flag::Refine), 64);
    }

    #[test]
    fn empty_plans_leave_everything_unchanged() {
        let s = FeSpace::new(Mesh::uniform(2).unwrap(), 1).unwrap();
        let f = NodalField::interpolate(s.clone(), |x| x[0]);
        let crit = Criterion::Mms(MmsCriterion { tau: 1e-2, fraction: 0.1, level: 3 });
        let out = adapt_cycle(&[f.clone()], &[TransferMode::Conservative], &crit, &zero_energy, SolverSettings::default()).unwrap();
        assert!(Arc::ptr_eq(out.space(), &s));
        assert_eq!(out.fields[0].values(), f.values());
        assert_eq!(out.delta_e, 0.0);
    }

    #[test]
    fn interface_cycle_respects_level_clamps() {
        let crit = InterfaceCriterion { band: Band::Symmetric { delta: 0.5 }, bulk_level: 2, fine_level: 4 };
        let s = FeSpace::new(Mesh::uniform(3).unwrap(), 1).unwrap();
        let mut f = NodalField::interpolate(s, |x| (8.0 * (x[0] - 0.5)).tanh());
        for _ in 0..3 {
            let out = adapt_cycle(
                &[f.clone()],
                &[TransferMode::Conservative],
                &Criterion::Interface(crit),
                &zero_energy,
                SolverSettings::default(),
            )
            .unwrap();
            let m = out.space().mesh();
            assert!(m.min_level() >= 2 && m.max_level() <= 4);
            assert!((16..=256).contains(&m.len()));
            assert!((out.fields[0].integral() - f.integral()).abs() < 1e-11);
            f = out.fields[0].clone();
        }
    }
}
