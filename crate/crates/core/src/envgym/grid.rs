//! Symbolic cells, egocentric 7×7×3 observations and a minimal grid world.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Side of the square egocentric view.
pub const VIEW_SIZE: usize = 7;
/// Channels per view cell: object type, color, state.
pub const VIEW_CHANNELS: usize = 3;
/// Bytes in one observation.
pub const OBS_LEN: usize = VIEW_SIZE * VIEW_SIZE * VIEW_CHANNELS;

pub const NUM_OBJECT_TYPES: usize = 11;
pub const NUM_COLORS: usize = 6;
pub const NUM_STATES: usize = 3;

/// Object type ids (channel 0).
pub mod kind {
    pub const UNSEEN: u8 = 0;
    pub const EMPTY: u8 = 1;
    pub const WALL: u8 = 2;
    pub const FLOOR: u8 = 3;
    pub const DOOR: u8 = 4;
    pub const KEY: u8 = 5;
    pub const BALL: u8 = 6;
    pub const BOX: u8 = 7;
    pub const GOAL: u8 = 8;
    pub const LAVA: u8 = 9;
    pub const AGENT: u8 = 10;
}

/// Door states (channel 2).
pub mod state {
    pub const OPEN: u8 = 0;
    pub const CLOSED: u8 = 1;
    pub const LOCKED: u8 = 2;
}

pub const GREY: u8 = 5;

/// One symbolic cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub kind: u8,
    pub color: u8,
    pub state: u8,
}

impl Cell {
    pub const UNSEEN: Cell = Cell { kind: kind::UNSEEN, color: 0, state: 0 };
    pub const EMPTY: Cell = Cell { kind: kind::EMPTY, color: 0, state: 0 };
    pub const WALL: Cell = Cell { kind: kind::WALL, color: GREY, state: 0 };

    pub const fn door(open: bool) -> Cell {
        Cell { kind: kind::DOOR, color: GREY, state: if open { state::OPEN } else { state::CLOSED } }
    }

    pub fn is_walkable(self) -> bool {
        matches!(self.kind, kind::EMPTY | kind::FLOOR | kind::GOAL)
            || (self.kind == kind::DOOR && self.state == state::OPEN)
    }
}

/// A pickable object identity: type × color. There are 18 of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Object {
    pub kind: u8,
    pub color: u8,
}

pub const OBJECT_KINDS: [u8; 3] = [kind::KEY, kind::BALL, kind::BOX];
pub const NUM_OBJECTS: usize = OBJECT_KINDS.len() * NUM_COLORS;

impl Object {
    /// Object with catalogue index `i < NUM_OBJECTS`.
    pub fn from_index(i: usize) -> Object {
        Object { kind: OBJECT_KINDS[i / NUM_COLORS], color: (i % NUM_COLORS) as u8 }
    }

    pub fn cell(self) -> Cell {
        Cell { kind: self.kind, color: self.color, state: 0 }
    }
}

/// Absolute heading. Turning right goes East → South → West → North.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    East = 0,
    South = 1,
    West = 2,
    North = 3,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::East, Dir::South, Dir::West, Dir::North];

    pub fn from_index(i: usize) -> Dir {
        Self::ALL[i % 4]
    }

    pub fn right(self) -> Dir {
        Self::from_index(self as usize + 1)
    }

    pub fn left(self) -> Dir {
        Self::from_index(self as usize + 3)
    }

    pub fn opposite(self) -> Dir {
        Self::from_index(self as usize + 2)
    }

    /// Unit step in world coordinates (y grows southwards).
    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::East => (1, 0),
            Dir::South => (0, 1),
            Dir::West => (-1, 0),
            Dir::North => (0, -1),
        }
    }
}

/// 7×7×3 egocentric observation stored row-major as `[row][col][channel]`.
///
/// Row 0 is farthest ahead; the agent sits at row 6, column 3, facing up.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridObservation([u8; OBS_LEN]);

impl core::fmt::Debug for GridObservation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "GridObservation[")?;
        for r in 0..VIEW_SIZE {
            for c in 0..VIEW_SIZE {
                let cell = self.cell(r, c);
                write!(f, " {:2}/{}/{}", cell.kind, cell.color, cell.state)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl GridObservation {
    pub fn filled(cell: Cell) -> Self {
        let mut o = Self([0; OBS_LEN]);
        for r in 0..VIEW_SIZE {
            for c in 0..VIEW_SIZE {
                o.set(r, c, cell);
            }
        }
        o
    }

    /// Parses raw bytes, validating every channel range.
    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != OBS_LEN {
            return None;
        }
        let mut buf = [0u8; OBS_LEN];
        buf.copy_from_slice(bytes);
        let obs = Self(buf);
        obs.is_valid().then_some(obs)
    }

    pub fn as_bytes(&self) -> &[u8; OBS_LEN] {
        &self.0
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        let i = (row * VIEW_SIZE + col) * VIEW_CHANNELS;
        Cell { kind: self.0[i], color: self.0[i + 1], state: self.0[i + 2] }
    }

    pub fn set(&mut self, row: usize, col: usize, cell: Cell) {
        let i = (row * VIEW_SIZE + col) * VIEW_CHANNELS;
        self.0[i] = cell.kind;
        self.0[i + 1] = cell.color;
        self.0[i + 2] = cell.state;
    }

    pub fn is_valid(&self) -> bool {
        self.0.chunks(VIEW_CHANNELS).all(|c| {
            (c[0] as usize) < NUM_OBJECT_TYPES
                && (c[1] as usize) < NUM_COLORS
                && (c[2] as usize) < NUM_STATES
        })
    }

    pub fn contains(&self, cell: Cell) -> bool {
        (0..VIEW_SIZE).any(|r| (0..VIEW_SIZE).any(|c| self.cell(r, c) == cell))
    }

    /// The agent glyph: color carries the heading.
    pub fn agent_cell(dir: Dir) -> Cell {
        Cell { kind: kind::AGENT, color: dir as u8, state: 0 }
    }
}

/// Rectangular map of cells; out-of-range lookups read as walls.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct World {
    width: i32,
    height: i32,
    cells: Vec<Cell>,
}

impl World {
    pub fn new(width: usize, height: usize, fill: Cell) -> Self {
        Self { width: width as i32, height: height as i32, cells: vec![fill; width * height] }
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.width && y < self.height
    }

    pub fn get(&self, x: i32, y: i32) -> Cell {
        if self.in_bounds(x, y) {
            self.cells[(y * self.width + x) as usize]
        } else {
            Cell::WALL
        }
    }

    pub fn set(&mut self, x: i32, y: i32, cell: Cell) {
        assert!(self.in_bounds(x, y), "cell ({x},{y}) outside world");
        self.cells[(y * self.width + x) as usize] = cell;
    }

    /// World coordinate seen at view `(row, col)` from `pos` facing `dir`.
    pub fn view_to_world(pos: (i32, i32), dir: Dir, row: usize, col: usize) -> (i32, i32) {
        let (fx, fy) = dir.delta();
        let (rx, ry) = (-fy, fx);
        let ahead = (VIEW_SIZE - 1 - row) as i32;
        let lateral = col as i32 - (VIEW_SIZE / 2) as i32;
        (pos.0 + fx * ahead + rx * lateral, pos.1 + fy * ahead + ry * lateral)
    }

    /// Renders the egocentric view. Cells outside the map are unseen.
    pub fn egocentric_view(&self, pos: (i32, i32), dir: Dir) -> GridObservation {
        let mut obs = GridObservation::filled(Cell::UNSEEN);
        for row in 0..VIEW_SIZE {
            for col in 0..VIEW_SIZE {
                let (x, y) = Self::view_to_world(pos, dir, row, col);
                if self.in_bounds(x, y) {
                    obs.set(row, col, self.get(x, y));
                }
            }
        }
        obs.set(VIEW_SIZE - 1, VIEW_SIZE / 2, GridObservation::agent_cell(dir));
        obs
    }
}
