//! Hallway: remember the object in the start room and enter the branch
//! hallway that displays the same object.
//!
//! Layout (y grows southwards, corridor on row 3):
//!
//! ```text
//!   #########o###o##      o: hallway objects on the outer wall
//!   #########.###.##      .: two-cell hallways, the outer cell is terminal
//!   ##T######.###.##      T: target object in the 3×3 start room
//!   #.A..............     A: agent start, facing south
//!   #...#####.###.##
//!   #########.###.##
//!   #########o###o##
//! ```
//!
//! The agent first faces away from the target; the single turn towards the
//! corridor at step 0 brings the target into view at step 1, and it is never
//! visible again. Each branch point carries one north and one south
//! hallway, giving four candidates with distinct objects.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{Cell, Dir, GridObservation, Object, World, NUM_OBJECTS};
use super::{Action, EnvError, TerminalReason};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HallwayParams {
    /// Corridor cells east of the start room.
    pub length: usize,
    /// Hallway objects are drawn from the first `object_pool` catalogue
    /// objects; 4 to 18.
    pub object_pool: usize,
}

impl HallwayParams {
    pub const MIN_LENGTH: usize = 6;

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.length < Self::MIN_LENGTH {
            return Err(EnvError::InvalidParams("hallway length must be at least 6"));
        }
        if !(4..=NUM_OBJECTS).contains(&self.object_pool) {
            return Err(EnvError::InvalidParams("hallway object pool must hold 4 to 18 objects"));
        }
        Ok(())
    }

    /// Corridor indices of the two branch points.
    pub fn branch_points(&self) -> [usize; 2] {
        [self.length / 3, 2 * self.length / 3]
    }

    /// Step budget: 145 at length 30, scaled linearly and never below the
    /// longest expert path.
    pub fn horizon(&self) -> usize {
        let scaled = (145 * self.length).div_ceil(30);
        scaled.max(self.length + 8)
    }
}

const CORRIDOR_Y: i32 = 3;
const CORRIDOR_X0: i32 = 4;
const START: (i32, i32) = (2, 3);
const TARGET_CELL: (i32, i32) = (2, 2);
/// Timestep at which the target becomes visible.
pub const SIGHTING_STEP: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Hallway {
    world: World,
    pub target: Object,
    /// Objects of hallways ordered (branch 0 north, branch 0 south,
    /// branch 1 north, branch 1 south).
    pub hallway_objects: [Object; 4],
    pub target_hallway: usize,
    branch_x: [i32; 2],
    pos: (i32, i32),
    dir: Dir,
}

impl Hallway {
    pub fn sample<R: Rng>(params: &HallwayParams, rng: &mut R) -> Self {
        let mut pool: Vec<usize> = (0..params.object_pool).collect();
        pool.shuffle(rng);
        let objects = [0, 1, 2, 3].map(|i| Object::from_index(pool[i]));
        let target_hallway = rng.gen_range(0..4);
        Self::with_layout(params, objects, target_hallway)
    }

    /// Builds an episode with explicit hallway objects; the target is
    /// `objects[target_hallway]`.
    pub fn with_layout(params: &HallwayParams, objects: [Object; 4], target_hallway: usize) -> Self {
        let l = params.length as i32;
        let width = (CORRIDOR_X0 + l + 1) as usize;
        let mut world = World::new(width, 7, Cell::WALL);
        for x in 1..=3 {
            for y in 2..=4 {
                world.set(x, y, Cell::EMPTY);
            }
        }
        let target = objects[target_hallway];
        world.set(TARGET_CELL.0, TARGET_CELL.1, target.cell());
        for x in CORRIDOR_X0..CORRIDOR_X0 + l {
            world.set(x, CORRIDOR_Y, Cell::EMPTY);
        }
        let branch_x = params.branch_points().map(|b| CORRIDOR_X0 + b as i32);
        for (k, &x) in branch_x.iter().enumerate() {
            for y in [1, 2, 4, 5] {
                world.set(x, y, Cell::EMPTY);
            }
            world.set(x, 0, objects[2 * k].cell());
            world.set(x, 6, objects[2 * k + 1].cell());
        }
        Self { world, target, hallway_objects: objects, target_hallway, branch_x, pos: START, dir: Dir::South }
    }

    pub fn position(&self) -> ((i32, i32), Dir) {
        (self.pos, self.dir)
    }

    /// World cell holding the start-room target.
    pub fn target_cell() -> (i32, i32) {
        TARGET_CELL
    }

    fn terminal_of(&self, hallway: usize) -> (i32, i32) {
        let x = self.branch_x[hallway / 2];
        (x, if hallway % 2 == 0 { 1 } else { 5 })
    }

    pub(crate) fn observe(&mut self, _t: usize) -> GridObservation {
        self.world.egocentric_view(self.pos, self.dir)
    }

    pub(crate) fn apply(&mut self, action: Action, _t: usize) -> Option<TerminalReason> {
        match action {
            Action::TurnLeft => self.dir = self.dir.left(),
            Action::TurnRight => self.dir = self.dir.right(),
            Action::Forward => {
                let (dx, dy) = self.dir.delta();
                let next = (self.pos.0 + dx, self.pos.1 + dy);
                if self.world.get(next.0, next.1).is_walkable() {
                    self.pos = next;
                }
            }
            _ => {}
        }
        (0..4).find(|&h| self.terminal_of(h) == self.pos).map(|h| {
            if h == self.target_hallway {
                TerminalReason::Success
            } else {
                TerminalReason::WrongChoice
            }
        })
    }

    pub(crate) fn expert(&self, _t: usize) -> Action {
        let goal = self.terminal_of(self.target_hallway);
        let (x, y) = self.pos;
        let want = if y != CORRIDOR_Y && x != goal.0 {
            // inside a wrong hallway: head back to the corridor
            if y < CORRIDOR_Y {
                Dir::South
            } else {
                Dir::North
            }
        } else if y == CORRIDOR_Y && x < goal.0 {
            Dir::East
        } else if y == CORRIDOR_Y && x > goal.0 {
            Dir::West
        } else if goal.1 < y {
            Dir::North
        } else {
            Dir::South
        };
        steer(self.dir, want)
    }

    /// Standing at a branch point facing down the corridor is a decision
    /// that depends on the start-room sighting.
    pub(crate) fn recall(&self, t: usize) -> Vec<usize> {
        let at_branch = self.pos.1 == CORRIDOR_Y && self.branch_x.contains(&self.pos.0);
        if at_branch && self.dir == Dir::East && t > SIGHTING_STEP {
            vec![SIGHTING_STEP]
        } else {
            Vec::new()
        }
    }
}

/// Turn towards `want`, or step forward when already facing it.
pub(crate) fn steer(dir: Dir, want: Dir) -> Action {
    if dir == want {
        Action::Forward
    } else if dir.right() == want {
        Action::TurnRight
    } else {
        Action::TurnLeft
    }
}
