//! Moving nodal fields between consecutive meshes.
//!
//! Refinement evaluates the old field at the new nodes, which is exact because
//! the refined space contains the coarse one. Coarsening either injects (keeps
//! the values at coinciding nodes) or conserves: Gauss values of merged
//! families are restricted onto the parent's Gauss points and the whole new
//! mesh is then L²-projected.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fem::{FeSpace, GaussField, NodalField, SolverSettings};
use crate::mesh::{CoarsenRecord, LeafOrigin, RefineRecord};
use crate::restriction::restriction_operator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferMode {
    Injection,
    Conservative,
}

impl std::fmt::Display for TransferMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransferMode::Injection => "injection",
            TransferMode::Conservative => "conservative",
        })
    }
}

impl std::str::FromStr for TransferMode {
    type Err = crate::AmrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "injection" => Ok(TransferMode::Injection),
            "conservative" => Ok(TransferMode::Conservative),
            _ => invalid(format!("unknown transfer mode '{s}'")),
        }
    }
}

fn check_degree(old: &FeSpace, new: &FeSpace) -> Result<()> {
    if old.degree() != new.degree() || old.n_quad_1d() != new.n_quad_1d() {
        return invalid(format!(
            "spaces differ in degree or rule: ({}, {}) vs ({}, {})",
            old.degree(),
            old.n_quad_1d(),
            new.degree(),
            new.n_quad_1d()
        ));
    }
    Ok(())
}

fn check_refine(old: &FeSpace, new: &FeSpace, record: &RefineRecord) -> Result<()> {
    check_degree(old, new)?;
    if record.old_len != old.n_leaves() || record.source.len() != new.n_leaves() {
        return invalid("refine record does not match the meshes".to_string());
    }
    for (e, &src) in record.source.iter().enumerate() {
        if src >= old.n_leaves() || !old.mesh().leaf(src).contains(new.mesh().leaf(e)) {
            return invalid(format!("new leaf {e} is not inside its recorded source {src}"));
        }
    }
    Ok(())
}

fn check_coarsen(old: &FeSpace, new: &FeSpace, record: &CoarsenRecord) -> Result<()> {
    check_degree(old, new)?;
    if record.old_len != old.n_leaves() || record.origins.len() != new.n_leaves() {
        return invalid("coarsen record does not match the meshes".to_string());
    }
    for (e, origin) in record.origins.iter().enumerate() {
        let leaf = new.mesh().leaf(e);
        let ok = match *origin {
            LeafOrigin::Kept(i) => i < old.n_leaves() && old.mesh().leaf(i) == leaf,
            LeafOrigin::Merged(kids) => kids.iter().enumerate().all(|(c, &i)| {
                i < old.n_leaves() && old.mesh().leaf(i) == &leaf.children()[c]
            }),
        };
        if !ok {
            return invalid(format!("new leaf {e} does not match its recorded origin"));
        }
    }
    Ok(())
}

fn evaluate_at_new_nodes(field: &NodalField, new_space: &Arc<FeSpace>) -> Result<NodalField> {
    let positions: Vec<[f64; 2]> = (0..new_space.n_dofs()).map(|d| new_space.dofs().dof_position(d)).collect();
    NodalField::new(new_space.clone(), field.eval_many(&positions)?)
}

/// Parent-to-child transfer onto a mesh produced by refinement.
pub fn transfer_refine(field: &NodalField, new_space: &Arc<FeSpace>, record: &RefineRecord) -> Result<NodalField> {
    check_refine(field.space(), new_space, record)?;
    evaluate_at_new_nodes(field, new_space)
}

/// Coarsening by injection: coarse nodes take the value of the coinciding fine node.
pub fn transfer_coarsen_injection(
    field: &NodalField,
    new_space: &Arc<FeSpace>,
    record: &CoarsenRecord,
) -> Result<NodalField> {
    check_coarsen(field.space(), new_space, record)?;
    evaluate_at_new_nodes(field, new_space)
}

/// Gauss values on the coarsened mesh: copied for kept leaves, restricted from
/// the four children for merged ones.
pub fn restrict_gauss(fine: &GaussField, new_space: &Arc<FeSpace>, record: &CoarsenRecord) -> Result<GaussField> {
    let old_space = fine.space();
    check_coarsen(old_space, new_space, record)?;
    let op = restriction_operator(old_space.degree(), old_space.n_quad_1d(), new_space.n_quad_1d())?;
    let npts = new_space.points_per_leaf();
    let mut out = vec![0.0; new_space.n_leaves() * npts];
    out.par_chunks_mut(npts)
        .zip(record.origins.par_iter())
        .try_for_each(|(block, origin)| match *origin {
            LeafOrigin::Kept(i) => {
                block.copy_from_slice(fine.block(i));
                Ok(())
            }
            LeafOrigin::Merged(kids) => {
                let stacked: Vec<f64> = kids.iter().flat_map(|&i| fine.block(i).iter().copied()).collect();
                op.apply_into(2, &stacked, block)
            }
        })?;
    GaussField::new(new_space.clone(), out)
}

/// Conservative coarsening: Gauss evaluation, local restriction, global L² projection.
pub fn transfer_coarsen_conservative(
    field: &NodalField,
    new_space: &Arc<FeSpace>,
    record: &CoarsenRecord,
    settings: SolverSettings,
) -> Result<NodalField> {
    let gf = restrict_gauss(&field.eval_at_gauss(), new_space, record)?;
    gf.project_l2(settings)
}

/// Coarsen with the chosen operator.
pub fn transfer_coarsen(
    field: &NodalField,
    new_space: &Arc<FeSpace>,
    record: &CoarsenRecord,
    mode: TransferMode,
    settings: SolverSettings,
) -> Result<NodalField> {
    match mode {
        TransferMode::Injection => transfer_coarsen_injection(field, new_space, record),
        TransferMode::Conservative => transfer_coarsen_conservative(field, new_space, record, settings),
    }
}

/// `|E(before) − E(after)|`.
pub fn energy_mismatch(
    before: &NodalField,
    after: &NodalField,
    energy: impl Fn(&NodalField) -> Result<f64>,
) -> Result<f64> {
    Ok((energy(before)? - energy(after)?).abs())
}
