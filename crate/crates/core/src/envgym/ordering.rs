//! Ordering: walk a dark corridor past a sequence of distinct objects, then
//! answer queries "which of these two appeared first?" by picking the door
//! under the earlier object.
//!
//! The corridor is unlit: only the cells beside the agent are visible, so
//! every object is first seen on exactly one timestep. Each query takes two
//! steps: choose a door, then walk through it.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{Cell, Dir, GridObservation, Object, NUM_OBJECTS};
use super::{Action, EnvError, TerminalReason};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingParams {
    /// Corridor cells walked before the queries.
    pub length: usize,
    /// Distinct objects placed along the corridor.
    pub sequence_len: usize,
    pub queries: usize,
}

impl OrderingParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.sequence_len > NUM_OBJECTS {
            return Err(EnvError::InvalidParams(
                "ordering sequence longer than the number of distinct objects",
            ));
        }
        if self.sequence_len < 2 || self.sequence_len > self.length {
            return Err(EnvError::InvalidParams("ordering needs 2 <= sequence_len <= length"));
        }
        if self.queries == 0 {
            return Err(EnvError::InvalidParams("ordering needs at least one query"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.length + 2 * self.queries
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Query {
    /// Sequence indices shown above the left and right doors.
    pub left: usize,
    pub right: usize,
}

impl Query {
    pub fn correct(&self) -> Action {
        if self.left < self.right {
            Action::SelectLeftDoor
        } else {
            Action::SelectRightDoor
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Corridor { cell: usize },
    Query { k: usize, opened: Option<Action> },
    Finished,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ordering {
    params: OrderingParams,
    /// Corridor cell of each object, increasing.
    pub positions: Vec<usize>,
    pub objects: Vec<Object>,
    pub queries: Vec<Query>,
    first_seen: Vec<Option<usize>>,
    phase: Phase,
}

impl Ordering {
    pub fn sample<R: Rng>(params: &OrderingParams, rng: &mut R) -> Self {
        let mut positions = index::sample(rng, params.length, params.sequence_len).into_vec();
        positions.sort_unstable();
        let mut pool: Vec<usize> = (0..NUM_OBJECTS).collect();
        pool.shuffle(rng);
        let objects = pool[..params.sequence_len].iter().map(|&i| Object::from_index(i)).collect();
        let queries = (0..params.queries)
            .map(|_| {
                let pair = index::sample(rng, params.sequence_len, 2).into_vec();
                Query { left: pair[0], right: pair[1] }
            })
            .collect();
        Self {
            params: *params,
            positions,
            objects,
            queries,
            first_seen: vec![None; params.sequence_len],
            phase: Phase::Corridor { cell: 0 },
        }
    }

    pub fn first_seen(&self) -> &[Option<usize>] {
        &self.first_seen
    }

    fn object_at(&self, cell: usize) -> Option<usize> {
        self.positions.iter().position(|&p| p == cell)
    }

    pub(crate) fn observe(&mut self, t: usize) -> GridObservation {
        let mut obs = GridObservation::filled(Cell::UNSEEN);
        obs.set(6, 3, GridObservation::agent_cell(Dir::North));
        match self.phase {
            Phase::Corridor { cell } => {
                let left = match self.object_at(cell) {
                    Some(i) => {
                        self.first_seen[i].get_or_insert(t);
                        self.objects[i].cell()
                    }
                    None => Cell::WALL,
                };
                obs.set(6, 2, left);
                obs.set(6, 4, Cell::WALL);
            }
            Phase::Query { k, opened } => {
                let q = self.queries[k];
                for c in 1..=5 {
                    obs.set(4, c, Cell::WALL);
                    obs.set(5, c, Cell::WALL);
                }
                obs.set(6, 2, Cell::EMPTY);
                obs.set(6, 4, Cell::EMPTY);
                obs.set(4, 2, self.objects[q.left].cell());
                obs.set(4, 4, self.objects[q.right].cell());
                obs.set(5, 2, Cell::door(opened == Some(Action::SelectLeftDoor)));
                obs.set(5, 4, Cell::door(opened == Some(Action::SelectRightDoor)));
            }
            Phase::Finished => {}
        }
        obs
    }

    pub(crate) fn apply(&mut self, action: Action, _t: usize) -> Option<TerminalReason> {
        match self.phase {
            Phase::Corridor { cell } => {
                if action == Action::Forward {
                    self.phase = if cell + 1 == self.params.length {
                        Phase::Query { k: 0, opened: None }
                    } else {
                        Phase::Corridor { cell: cell + 1 }
                    };
                }
                None
            }
            Phase::Query { k, opened: None } => match action {
                Action::SelectLeftDoor | Action::SelectRightDoor => {
                    if action == self.queries[k].correct() {
                        self.phase = Phase::Query { k, opened: Some(action) };
                        None
                    } else {
                        self.phase = Phase::Finished;
                        Some(TerminalReason::WrongChoice)
                    }
                }
                _ => None,
            },
            Phase::Query { k, opened: Some(_) } => {
                if action != Action::Forward {
                    return None;
                }
                if k + 1 == self.queries.len() {
                    self.phase = Phase::Finished;
                    Some(TerminalReason::Success)
                } else {
                    self.phase = Phase::Query { k: k + 1, opened: None };
                    None
                }
            }
            Phase::Finished => None,
        }
    }

    pub(crate) fn expert(&self, _t: usize) -> Action {
        match self.phase {
            Phase::Query { k, opened: None } => self.queries[k].correct(),
            Phase::Corridor { .. } | Phase::Query { .. } | Phase::Finished => Action::Forward,
        }
    }

    pub(crate) fn recall(&self, _t: usize) -> Vec<usize> {
        match self.phase {
            Phase::Query { k, opened: None } => {
                let q = self.queries[k];
                let mut steps: Vec<usize> =
                    [q.left, q.right].iter().filter_map(|&i| self.first_seen[i]).collect();
                steps.sort_unstable();
                steps.dedup();
                steps
            }
            _ => Vec::new(),
        }
    }
}
