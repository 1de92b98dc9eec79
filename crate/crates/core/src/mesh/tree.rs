use std::collections::HashSet;

use super::octant::{Direction, Octant, MAX_LEVEL, ROOT_LEN};
use crate::error::{invalid, AmrError, Result};

/// Per-leaf adaptation flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flag {
    Refine,
    Coarsen,
    NoChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Refine,
    Coarsen,
}

/// Flags for every leaf of one mesh in one (refine or coarsen) stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptPlan {
    stage: Stage,
    flags: Vec<Flag>,
}

impl AdaptPlan {
    pub fn new(stage: Stage, flags: Vec<Flag>) -> Result<Self> {
        let forbidden = match stage {
            Stage::Refine => Flag::Coarsen,
            Stage::Coarsen => Flag::Refine,
        };
        if flags.contains(&forbidden) {
            return invalid(format!("{stage:?} stage plan contains {forbidden:?} flags"));
        }
        Ok(Self { stage, flags })
    }

    /// A plan that leaves every leaf untouched.
    pub fn unchanged(stage: Stage, n_leaves: usize) -> Self {
        Self { stage, flags: vec![Flag::NoChange; n_leaves] }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn flags(&self) -> &[Flag] {
        &self.flags
    }

    pub fn is_empty(&self) -> bool {
        self.flags.iter().all(|&f| f == Flag::NoChange)
    }

    pub fn count(&self, flag: Flag) -> usize {
        self.flags.iter().filter(|&&f| f == flag).count()
    }
}

/// How a leaf of the coarsened mesh relates to the mesh it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafOrigin {
    /// Unchanged leaf; index into the old mesh.
    Kept(usize),
    /// Parent of four merged siblings; old indices in Morton order.
    Merged([usize; 4]),
}

/// Old-to-new leaf correspondence produced by [`Mesh::execute_coarsen`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoarsenRecord {
    pub old_len: usize,
    pub origins: Vec<LeafOrigin>,
}

impl CoarsenRecord {
    pub fn merged_count(&self) -> usize {
        self.origins
            .iter()
            .filter(|o| matches!(o, LeafOrigin::Merged(_)))
            .count()
    }

    /// The record for a stage that changed nothing.
    pub fn identity(n: usize) -> Self {
        Self { old_len: n, origins: (0..n).map(LeafOrigin::Kept).collect() }
    }
}

/// For every leaf of the refined mesh, the old leaf that contains it.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineRecord {
    pub old_len: usize,
    pub source: Vec<usize>,
}

/// Linear quadtree over the unit square: leaves sorted in Morton order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    leaves: Vec<Octant>,
    keys: Vec<u64>,
}

impl Mesh {
    pub fn uniform(level: u8) -> Result<Self> {
        if level > MAX_LEVEL {
            return invalid(format!("level {level} exceeds maximum {MAX_LEVEL}"));
        }
        let mut leaves = vec![Octant::root()];
        for _ in 0..level {
            leaves = leaves.iter().flat_map(|o| o.children()).collect();
        }
        Self::from_leaves(leaves)
    }

    /// Build from an arbitrary leaf set; the set must tile the unit square.
    pub fn from_leaves(mut leaves: Vec<Octant>) -> Result<Self> {
        leaves.sort_by_key(|o| o.morton_key());
        let area: f64 = leaves.iter().map(Octant::area).sum();
        if (area - 1.0).abs() > 1e-14 {
            return invalid(format!("leaves cover area {area}, expected 1"));
        }
        // Morton ranges of consecutive leaves must not overlap.
        for w in leaves.windows(2) {
            let span = (w[0].size() as u64).pow(2);
            if w[0].morton_key() + span > w[1].morton_key() {
                return invalid("leaves overlap");
            }
        }
        let keys = leaves.iter().map(Octant::morton_key).collect();
        Ok(Self { leaves, keys })
    }

    pub fn leaves(&self) -> &[Octant] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaf(&self, i: usize) -> &Octant {
        &self.leaves[i]
    }

    pub fn min_level(&self) -> u8 {
        self.leaves.iter().map(Octant::level).min().unwrap_or(0)
    }

    pub fn max_level(&self) -> u8 {
        self.leaves.iter().map(Octant::level).max().unwrap_or(0)
    }

    /// Index of the leaf containing deepest-level cell `(x, y)`.
    pub fn leaf_at_cell(&self, x: u32, y: u32) -> Option<usize> {
        if x >= ROOT_LEN || y >= ROOT_LEN {
            return None;
        }
        let key = super::octant::morton_encode(x, y);
        let idx = self.keys.partition_point(|&k| k <= key).checked_sub(1)?;
        self.leaves[idx].contains_cell(x, y).then_some(idx)
    }

    /// Leaf containing a point of the closed unit square. Points on shared
    /// edges resolve to the leaf with the smaller anchor.
    pub fn locate(&self, point: [f64; 2]) -> Result<usize> {
        let mut cell = [0u32; 2];
        for (c, &x) in cell.iter_mut().zip(&point) {
            if !(0.0..=1.0).contains(&x) {
                return invalid(format!("point {point:?} outside the unit square"));
            }
            let lat = x * ROOT_LEN as f64;
            let f = lat.floor();
            *c = if f == lat && f > 0.0 { f as u32 - 1 } else { (f as u32).min(ROOT_LEN - 1) };
        }
        self.leaf_at_cell(cell[0], cell[1])
            .ok_or_else(|| AmrError::InvalidState("mesh does not cover point".into()))
    }

    /// Leaves sharing part of the given edge of `region` (which need not be a leaf).
    pub fn edge_neighbors(&self, region: &Octant, dir: Direction) -> Vec<usize> {
        let [ax, ay] = region.anchor();
        let s = region.size();
        let axis = dir.axis();
        let across = if dir.is_plus() {
            let c = region.anchor()[axis] + s;
            if c >= ROOT_LEN {
                return Vec::new();
            }
            c
        } else {
            match region.anchor()[axis].checked_sub(1) {
                Some(c) => c,
                None => return Vec::new(),
            }
        };
        let along_start = if axis == 0 { ay } else { ax };
        let mut out = Vec::new();
        let mut t = 0;
        while t < s {
            let (x, y) = if axis == 0 {
                (across, along_start + t)
            } else {
                (along_start + t, across)
            };
            let Some(i) = self.leaf_at_cell(x, y) else { break };
            out.push(i);
            let leaf = &self.leaves[i];
            let leaf_start = leaf.anchor()[1 - axis];
            t = leaf_start + leaf.size() - along_start;
        }
        out
    }

    /// Leaves `i` with an edge neighbour more than one level finer.
    fn unbalanced_leaves(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                let leaf = &self.leaves[i];
                Direction::ALL.iter().any(|&d| {
                    self.edge_neighbors(leaf, d)
                        .iter()
                        .any(|&j| self.leaves[j].level() > leaf.level() + 1)
                })
            })
            .collect()
    }

    /// Whether every pair of edge-adjacent leaves differs by at most one level.
    pub fn is_balanced(&self) -> bool {
        self.unbalanced_leaves().is_empty()
    }

    fn check_plan(&self, plan: &AdaptPlan, stage: Stage) -> Result<()> {
        if plan.stage != stage {
            return invalid(format!("expected a {stage:?} plan, got {:?}", plan.stage));
        }
        if plan.flags.len() != self.len() {
            return invalid(format!("plan has {} flags for {} leaves", plan.flags.len(), self.len()));
        }
        Ok(())
    }

    /// Split every REFINE leaf into its four children, then refine further
    /// until the mesh is 2:1 balanced again.
    pub fn execute_refine(&self, plan: &AdaptPlan) -> Result<(Mesh, RefineRecord)> {
        self.check_plan(plan, Stage::Refine)?;
        let mut leaves: Vec<Octant> = self
            .leaves
            .iter()
            .zip(&plan.flags)
            .flat_map(|(o, &f)| {
                if f == Flag::Refine && o.level() < MAX_LEVEL {
                    o.children().to_vec()
                } else {
                    vec![*o]
                }
            })
            .collect();
        let mut mesh = Mesh::from_leaves(std::mem::take(&mut leaves))?;
        loop {
            let bad: HashSet<usize> = mesh.unbalanced_leaves().into_iter().collect();
            if bad.is_empty() {
                break;
            }
            let next = mesh
                .leaves
                .iter()
                .enumerate()
                .flat_map(|(i, o)| if bad.contains(&i) { o.children().to_vec() } else { vec![*o] })
                .collect();
            mesh = Mesh::from_leaves(next)?;
        }
        let source = mesh
            .leaves
            .iter()
            .map(|o| {
                let [x, y] = o.anchor();
                self.leaf_at_cell(x, y)
                    .ok_or_else(|| AmrError::Internal("refined leaf outside old mesh".into()))
            })
            .collect::<Result<_>>()?;
        Ok((mesh, RefineRecord { old_len: self.len(), source }))
    }

    /// Merge every complete, equal-level sibling family whose four members
    /// are flagged COARSEN. Merges that would break 2:1 balance are vetoed;
    /// incomplete families stay as they are.
    pub fn execute_coarsen(&self, plan: &AdaptPlan) -> Result<(Mesh, CoarsenRecord)> {
        self.check_plan(plan, Stage::Coarsen)?;
        let n = self.len();
        // family_start[i] = first index of a mergeable family that contains i
        let mut in_family = vec![usize::MAX; n];
        let mut families = Vec::new();
        let mut i = 0;
        while i + 3 < n {
            let first = &self.leaves[i];
            let candidate = first.level() > 0
                && first.child_index() == 0
                && (0..4).all(|k| {
                    let o = &self.leaves[i + k];
                    o.level() == first.level() && o.parent() == first.parent() && plan.flags[i + k] == Flag::Coarsen
                });
            if candidate {
                families.push(i);
                for k in 0..4 {
                    in_family[i + k] = i;
                }
                i += 4;
            } else {
                i += 1;
            }
        }

        let mut active: HashSet<usize> = families.iter().copied().collect();
        loop {
            let post_level = |j: usize| -> u8 {
                let lvl = self.leaves[j].level();
                if in_family[j] != usize::MAX && active.contains(&in_family[j]) {
                    lvl - 1
                } else {
                    lvl
                }
            };
            let vetoed: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&start| {
                    let parent = self.leaves[start].parent().expect("level > 0");
                    Direction::ALL.iter().any(|&d| {
                        self.edge_neighbors(&parent, d)
                            .into_iter()
                            .any(|j| post_level(j) > parent.level() + 1)
                    })
                })
                .collect();
            if vetoed.is_empty() {
                break;
            }
            for v in vetoed {
                active.remove(&v);
            }
        }

        let mut leaves = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut i = 0;
        while i < n {
            if in_family[i] == i && active.contains(&i) {
                leaves.push(self.leaves[i].parent().expect("level > 0"));
                origins.push(LeafOrigin::Merged([i, i + 1, i + 2, i + 3]));
                i += 4;
            } else {
                leaves.push(self.leaves[i]);
                origins.push(LeafOrigin::Kept(i));
                i += 1;
            }
        }
        let keys = leaves.iter().map(Octant::morton_key).collect();
        Ok((Mesh { leaves, keys }, CoarsenRecord { old_len: n, origins }))
    }
}
