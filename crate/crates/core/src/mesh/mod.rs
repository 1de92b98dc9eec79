//! Balanced quadtree meshes of the unit square and their node numbering.

mod nodes;
mod octant;
mod tree;

pub use nodes::{node_position, DofMap, HangingNode, NodeKey};
pub use octant::{morton_encode, Direction, Octant, MAX_LEVEL, ROOT_LEN};
pub use tree::{AdaptPlan, CoarsenRecord, Flag, LeafOrigin, Mesh, RefineRecord, Stage};
