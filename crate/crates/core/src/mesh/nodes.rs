//! Global continuous-Galerkin node numbering on a balanced quadtree.
//!
//! Nodes are identified by integer keys on a lattice twice as fine as the
//! deepest octant level, so `Q2` edge midpoints are representable. A node
//! lying inside an edge of a coarser neighbour, and not coinciding with one
//! of that neighbour's nodes, is *hanging*: its value is the coarse edge
//! interpolant, expressed as weights on independent nodes. Chains (a master
//! that is itself hanging) are resolved transitively, so every local node of
//! every leaf expands into independent degrees of freedom only.

use std::collections::{BTreeMap, HashMap};

use super::octant::{Direction, Octant, MAX_LEVEL};
use super::tree::Mesh;
use crate::error::{AmrError, Result};
use crate::quadrature::LagrangeBasis1D;

/// Node key: lattice coordinates in units of `2^-(MAX_LEVEL + 1)`.
pub type NodeKey = [u32; 2];

const NODE_SCALE: f64 = (1u64 << (MAX_LEVEL as u64 + 1)) as f64;

pub fn node_position(key: NodeKey) -> [f64; 2] {
    [key[0] as f64 / NODE_SCALE, key[1] as f64 / NODE_SCALE]
}

/// Key of local node `(i, j)` of a degree-`p` leaf.
fn local_node_key(leaf: &Octant, p: usize, i: usize, j: usize) -> NodeKey {
    let step = 2 * leaf.size() / p as u32;
    let [ax, ay] = leaf.anchor();
    [2 * ax + i as u32 * step, 2 * ay + j as u32 * step]
}

/// A hanging node and its resolved constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct HangingNode {
    pub key: NodeKey,
    /// `(independent dof, weight)` pairs; weights sum to one.
    pub masters: Vec<(usize, f64)>,
}

/// Degree-of-freedom map for one mesh and polynomial degree.
#[derive(Debug, Clone)]
pub struct DofMap {
    degree: usize,
    n_leaves: usize,
    dof_keys: Vec<NodeKey>,
    hanging: Vec<HangingNode>,
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl DofMap {
    /// Number the nodes of `mesh` for degree `p` Lagrange elements.
    pub fn enumerate(mesh: &Mesh, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(AmrError::InvalidArgument("degree must be >= 1".into()));
        }
        if !mesh.is_balanced() {
            return Err(AmrError::InvalidState("mesh is not 2:1 balanced".into()));
        }
        let edge_basis = LagrangeBasis1D::equispaced(p)?;
        let np = p + 1;

        // hanging key -> (master key, weight) on the coarse edge
        let mut raw: BTreeMap<NodeKey, Vec<(NodeKey, f64)>> = BTreeMap::new();
        for leaf in mesh.leaves() {
            for dir in Direction::ALL {
                let neigh = mesh.edge_neighbors(leaf, dir);
                let Some(&first) = neigh.first() else { continue };
                let coarse = mesh.leaf(first);
                if coarse.level() >= leaf.level() {
                    continue;
                }
                let axis = dir.axis();
                let along = 1 - axis;
                // Fine-side edge nodes: fixed index on the normal axis.
                let fixed = if dir.is_plus() { p } else { 0 };
                let coarse_fixed = p - fixed;
                let coarse_start = 2 * coarse.anchor()[along];
                let coarse_len = 2 * coarse.size();
                for t in 0..np {
                    let (i, j) = if axis == 0 { (fixed, t) } else { (t, fixed) };
                    let key = local_node_key(leaf, p, i, j);
                    let xi = -1.0 + 2.0 * (key[along] - coarse_start) as f64 / coarse_len as f64;
                    if edge_basis.nodes().contains(&xi) {
                        continue;
                    }
                    let weights = edge_basis.values(xi);
                    let masters = (0..np)
                        .map(|k| {
                            let (ci, cj) = if axis == 0 { (coarse_fixed, k) } else { (k, coarse_fixed) };
                            (local_node_key(coarse, p, ci, cj), weights[k])
                        })
                        .collect();
                    raw.insert(key, masters);
                }
            }
        }

        // Independent numbering in first-touch order over Morton-sorted leaves.
        let mut ids: HashMap<NodeKey, usize> = HashMap::new();
        let mut dof_keys = Vec::new();
        for leaf in mesh.leaves() {
            for j in 0..np {
                for i in 0..np {
                    let key = local_node_key(leaf, p, i, j);
                    if !raw.contains_key(&key) && !ids.contains_key(&key) {
                        ids.insert(key, dof_keys.len());
                        dof_keys.push(key);
                    }
                }
            }
        }

        let mut resolved: HashMap<NodeKey, Vec<(usize, f64)>> = HashMap::new();
        for &key in raw.keys() {
            let r = resolve(key, &raw, &ids, &mut resolved, 0)?;
            resolved.insert(key, r);
        }

        let mut offsets = Vec::with_capacity(mesh.len() * np * np + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for leaf in mesh.leaves() {
            for j in 0..np {
                for i in 0..np {
                    let key = local_node_key(leaf, p, i, j);
                    match ids.get(&key) {
                        Some(&id) => entries.push((id, 1.0)),
                        None => entries.extend_from_slice(&resolved[&key]),
                    }
                    offsets.push(entries.len());
                }
            }
        }
        let hanging = raw
            .keys()
            .map(|&key| HangingNode { key, masters: resolved[&key].clone() })
            .collect();

        Ok(Self { degree: p, n_leaves: mesh.len(), dof_keys, hanging, offsets, entries })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_keys.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    /// Local nodes per leaf, `(p + 1)^2`.
    pub fn nodes_per_leaf(&self) -> usize {
        (self.degree + 1).pow(2)
    }

    pub fn dof_keys(&self) -> &[NodeKey] {
        &self.dof_keys
    }

    pub fn dof_position(&self, dof: usize) -> [f64; 2] {
        node_position(self.dof_keys[dof])
    }

    pub fn hanging_nodes(&self) -> &[HangingNode] {
        &self.hanging
    }

    /// Expansion of local node `local` of leaf `leaf` into `(dof, weight)` pairs.
    pub fn local(&self, leaf: usize, local: usize) -> &[(usize, f64)] {
        let k = leaf * self.nodes_per_leaf() + local;
        &self.entries[self.offsets[k]..self.offsets[k + 1]]
    }

    /// Values of all local nodes of `leaf` for the nodal vector `values`.
    pub fn gather(&self, leaf: usize, values: &[f64], out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.local(leaf, a).iter().map(|&(d, w)| w * values[d]).sum();
        }
    }

    /// Distinct dofs touched by `leaf`, ascending.
    pub fn leaf_dofs(&self, leaf: usize) -> Vec<usize> {
        let mut d: Vec<usize> = (0..self.nodes_per_leaf())
            .flat_map(|a| self.local(leaf, a).iter().map(|&(id, _)| id))
            .collect();
        d.sort_unstable();
        d.dedup();
        d
    }
}

fn resolve(
    key: NodeKey,
    raw: &BTreeMap<NodeKey, Vec<(NodeKey, f64)>>,
    ids: &HashMap<NodeKey, usize>,
    memo: &mut HashMap<NodeKey, Vec<(usize, f64)>>,
    depth: usize,
) -> Result<Vec<(usize, f64)>> {
    if let Some(&id) = ids.get(&key) {
        return Ok(vec![(id, 1.0)]);
    }
    if let Some(r) = memo.get(&key) {
        return Ok(r.clone());
    }
    if depth > MAX_LEVEL as usize {
        return Err(AmrError::Internal("cyclic hanging-node constraints".into()));
    }
    let masters = raw
        .get(&key)
        .ok_or_else(|| AmrError::Internal(format!("node {key:?} is neither hanging nor numbered")))?;
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for &(mk, w) in masters {
        if w == 0.0 {
            continue;
        }
        for (id, mw) in resolve(mk, raw, ids, memo, depth + 1)? {
            *acc.entry(id).or_insert(0.0) += w * mw;
        }
    }
    let r: Vec<(usize, f64)> = acc.into_iter().collect();
    memo.insert(key, r.clone());
    Ok(r)
}
