use crate::error::{invalid, Result};

/// Deepest level an octant may have.
pub const MAX_LEVEL: u8 = 20;

/// Side length of the unit square in lattice units.
pub const ROOT_LEN: u32 = 1 << MAX_LEVEL;

/// A quadtree cell: refinement level plus the lattice coordinates of its lower-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Octant {
    level: u8,
    anchor: [u32; 2],
}

/// Interleave the bits of `x` (even positions) and `y` (odd positions).
pub fn morton_encode(x: u32, y: u32) -> u64 {
    fn spread(v: u32) -> u64 {
        let mut v = v as u64 & 0xffff_ffff;
        v = (v | (v << 16)) & 0x0000_ffff_0000_ffff;
        v = (v | (v << 8)) & 0x00ff_00ff_00ff_00ff;
        v = (v | (v << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
        v = (v | (v << 2)) & 0x3333_3333_3333_3333;
        v = (v | (v << 1)) & 0x5555_5555_5555_5555;
        v
    }
    spread(x) | (spread(y) << 1)
}

impl Octant {
    pub fn new(level: u8, anchor: [u32; 2]) -> Result<Self> {
        if level > MAX_LEVEL {
            return invalid(format!("level {level} exceeds maximum {MAX_LEVEL}"));
        }
        let size = 1u32 << (MAX_LEVEL - level);
        if anchor.iter().any(|&a| a % size != 0 || a >= ROOT_LEN) {
            return invalid(format!("anchor {anchor:?} is not aligned to level {level}"));
        }
        Ok(Self { level, anchor })
    }

    pub fn root() -> Self {
        Self { level: 0, anchor: [0, 0] }
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn anchor(&self) -> [u32; 2] {
        self.anchor
    }

    /// Edge length in lattice units.
    pub fn size(&self) -> u32 {
        1 << (MAX_LEVEL - self.level)
    }

    /// Edge length in physical units.
    pub fn width(&self) -> f64 {
        (self.level as f64).exp2().recip()
    }

    pub fn lower_corner(&self) -> [f64; 2] {
        let s = (ROOT_LEN as f64).recip();
        [self.anchor[0] as f64 * s, self.anchor[1] as f64 * s]
    }

    pub fn morton_key(&self) -> u64 {
        morton_encode(self.anchor[0], self.anchor[1])
    }

    /// The four children in Morton order (bit 0 = x, bit 1 = y).
    pub fn children(&self) -> [Octant; 4] {
        debug_assert!(self.level < MAX_LEVEL);
        let half = self.size() >> 1;
        std::array::from_fn(|c| Octant {
            level: self.level + 1,
            anchor: [
                self.anchor[0] + (c as u32 & 1) * half,
                self.anchor[1] + ((c as u32 >> 1) & 1) * half,
            ],
        })
    }

    pub fn parent(&self) -> Option<Octant> {
        if self.level == 0 {
            return None;
        }
        let psize = self.size() << 1;
        Some(Octant {
            level: self.level - 1,
            anchor: [self.anchor[0] / psize * psize, self.anchor[1] / psize * psize],
        })
    }

    /// Morton position of this octant among its siblings.
    pub fn child_index(&self) -> usize {
        let s = self.size();
        (((self.anchor[0] / s) & 1) | (((self.anchor[1] / s) & 1) << 1)) as usize
    }

    /// Whether the lattice cell `(x, y)` (unit cell at the deepest level) lies inside.
    pub fn contains_cell(&self, x: u32, y: u32) -> bool {
        let s = self.size();
        x >= self.anchor[0] && x - self.anchor[0] < s && y >= self.anchor[1] && y - self.anchor[1] < s
    }

    pub fn contains(&self, other: &Octant) -> bool {
        other.level >= self.level && self.contains_cell(other.anchor[0], other.anchor[1])
    }

    /// Area as a fraction of the unit square.
    pub fn area(&self) -> f64 {
        let w = self.width();
        w * w
    }
}

/// The four axis directions used for edge adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    MinusX,
    PlusX,
    MinusY,
    PlusY,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::MinusX,
        Direction::PlusX,
        Direction::MinusY,
        Direction::PlusY,
    ];

    /// Axis normal to the edge.
    pub fn axis(self) -> usize {
        match self {
            Direction::MinusX | Direction::PlusX => 0,
            Direction::MinusY | Direction::PlusY => 1,
        }
    }

    pub fn is_plus(self) -> bool {
        matches!(self, Direction::PlusX | Direction::PlusY)
    }
}
