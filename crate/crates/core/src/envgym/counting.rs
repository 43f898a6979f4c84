//! Counting: walk through a line of rooms. Gallery rooms show six object
//! slots; query rooms show one object between two doors. The left door is
//! correct when the object has appeared an even number of times in earlier
//! galleries, the right door when odd. A wrong door ends the episode.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{Cell, Dir, GridObservation, Object, NUM_OBJECTS};
use super::{Action, EnvError, TerminalReason};

pub const GALLERY_SLOTS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingParams {
    /// Number of rooms.
    pub length: usize,
    /// Probability that a room after the first is a query room.
    pub test_freq: f64,
    /// Probability that a gallery slot is empty.
    pub empty_freq: f64,
    /// Steps needed to walk through a gallery room.
    pub gallery_steps: usize,
    /// Objects drawn from the first `object_pool` catalogue entries.
    pub object_pool: usize,
}

impl CountingParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.length < 2 {
            return Err(EnvError::InvalidParams("counting needs at least two rooms"));
        }
        if !(0.0..=1.0).contains(&self.test_freq) || !(0.0..1.0).contains(&self.empty_freq) {
            return Err(EnvError::InvalidParams("counting frequencies out of range"));
        }
        if self.gallery_steps < 3 {
            return Err(EnvError::InvalidParams("counting galleries need at least 3 steps"));
        }
        if self.object_pool == 0 || self.object_pool > NUM_OBJECTS {
            return Err(EnvError::InvalidParams("counting object pool out of range"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.length * (self.gallery_steps + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Room {
    Gallery { slots: [Option<Object>; GALLERY_SLOTS] },
    Query { object: Object, correct: Action },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Gallery { room: usize, step: usize },
    Query { room: usize, opened: Option<Action> },
    Finished,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Counting {
    params: CountingParams,
    pub rooms: Vec<Room>,
    /// Timestep at which each room was entered.
    entered: Vec<Option<usize>>,
    phase: Phase,
}

impl Counting {
    pub fn sample<R: Rng>(params: &CountingParams, rng: &mut R) -> Self {
        let mut counts = vec![0usize; NUM_OBJECTS];
        let mut rooms = Vec::with_capacity(params.length);
        for r in 0..params.length {
            let seen: Vec<usize> = (0..NUM_OBJECTS).filter(|&i| counts[i] > 0).collect();
            if r > 0 && !seen.is_empty() && rng.gen_bool(params.test_freq) {
                let i = seen[rng.gen_range(0..seen.len())];
                let correct = if counts[i] % 2 == 0 {
                    Action::SelectLeftDoor
                } else {
                    Action::SelectRightDoor
                };
                rooms.push(Room::Query { object: Object::from_index(i), correct });
            } else {
                let mut slots = [None; GALLERY_SLOTS];
                for s in &mut slots {
                    if !rng.gen_bool(params.empty_freq) {
                        let i = rng.gen_range(0..params.object_pool);
                        counts[i] += 1;
                        *s = Some(Object::from_index(i));
                    }
                }
                rooms.push(Room::Gallery { slots });
            }
        }
        let first = match rooms[0] {
            Room::Gallery { .. } => Phase::Gallery { room: 0, step: 0 },
            Room::Query { .. } => unreachable!("first room is always a gallery"),
        };
        Self { params: *params, entered: vec![None; rooms.len()], rooms, phase: first }
    }

    /// Cell offset along the room of gallery slot column `k ∈ 0..3`.
    fn slot_x(&self, k: usize) -> usize {
        k * (self.params.gallery_steps - 1) / 2
    }

    fn enter(&mut self, room: usize) -> Option<TerminalReason> {
        if room == self.rooms.len() {
            self.phase = Phase::Finished;
            return Some(TerminalReason::Success);
        }
        self.phase = match self.rooms[room] {
            Room::Gallery { .. } => Phase::Gallery { room, step: 0 },
            Room::Query { .. } => Phase::Query { room, opened: None },
        };
        None
    }

    pub(crate) fn observe(&mut self, t: usize) -> GridObservation {
        let mut obs = GridObservation::filled(Cell::UNSEEN);
        match self.phase {
            Phase::Gallery { room, step } => {
                self.entered[room].get_or_insert(t);
                let Room::Gallery { slots } = &self.rooms[room] else { unreachable!() };
                let g = self.params.gallery_steps;
                for x in step..=g {
                    let ahead = x - step;
                    if ahead > 6 {
                        break;
                    }
                    let row = 6 - ahead;
                    obs.set(row, 1, Cell::WALL);
                    obs.set(row, 5, Cell::WALL);
                    if x == g {
                        for c in 2..=4 {
                            obs.set(row, c, Cell::WALL);
                        }
                        obs.set(row, 3, Cell::door(true));
                        continue;
                    }
                    for c in 2..=4 {
                        obs.set(row, c, Cell::EMPTY);
                    }
                    for k in 0..3 {
                        if self.slot_x(k) == x {
                            for (col, slot) in [(2, slots[k]), (4, slots[k + 3])] {
                                obs.set(row, col, slot.map_or(Cell::EMPTY, Object::cell));
                            }
                        }
                    }
                }
            }
            Phase::Query { room, opened } => {
                self.entered[room].get_or_insert(t);
                let Room::Query { object, .. } = self.rooms[room] else { unreachable!() };
                for c in 1..=5 {
                    obs.set(4, c, Cell::WALL);
                }
                obs.set(5, 1, Cell::WALL);
                obs.set(5, 5, Cell::WALL);
                obs.set(6, 2, Cell::EMPTY);
                obs.set(6, 4, Cell::EMPTY);
                obs.set(5, 3, object.cell());
                obs.set(5, 2, Cell::door(opened == Some(Action::SelectLeftDoor)));
                obs.set(5, 4, Cell::door(opened == Some(Action::SelectRightDoor)));
            }
            Phase::Finished => {}
        }
        obs.set(6, 3, GridObservation::agent_cell(Dir::North));
        obs
    }

    pub(crate) fn apply(&mut self, action: Action, _t: usize) -> Option<TerminalReason> {
        match self.phase {
            Phase::Gallery { room, step } => {
                if action != Action::Forward {
                    return None;
                }
                if step + 1 == self.params.gallery_steps {
                    self.enter(room + 1)
                } else {
                    self.phase = Phase::Gallery { room, step: step + 1 };
                    None
                }
            }
            Phase::Query { room, opened: None } => {
                let Room::Query { correct, .. } = self.rooms[room] else { unreachable!() };
                match action {
                    Action::SelectLeftDoor | Action::SelectRightDoor if action == correct => {
                        self.phase = Phase::Query { room, opened: Some(action) };
                        None
                    }
                    Action::SelectLeftDoor | Action::SelectRightDoor => {
                        self.phase = Phase::Finished;
                        Some(TerminalReason::WrongChoice)
                    }
                    _ => None,
                }
            }
            Phase::Query { room, opened: Some(_) } => {
                if action == Action::Forward {
                    self.enter(room + 1)
                } else {
                    None
                }
            }
            Phase::Finished => None,
        }
    }

    pub(crate) fn expert(&self, _t: usize) -> Action {
        match self.phase {
            Phase::Query { room, opened: None } => match self.rooms[room] {
                Room::Query { correct, .. } => correct,
                Room::Gallery { .. } => unreachable!(),
            },
            _ => Action::Forward,
        }
    }

    /// Entry steps of earlier galleries that contain the queried object.
    pub(crate) fn recall(&self, _t: usize) -> Vec<usize> {
        let Phase::Query { room, opened: None } = self.phase else {
            return Vec::new();
        };
        let Room::Query { object, .. } = self.rooms[room] else { unreachable!() };
        (0..room)
            .filter(|&r| match &self.rooms[r] {
                Room::Gallery { slots } => slots.contains(&Some(object)),
                Room::Query { .. } => false,
            })
            .filter_map(|r| self.entered[r])
            .collect()
    }
}
