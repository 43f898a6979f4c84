//! CommandRecall: a symbolic commands-then-execute memory
//! task. A 5×5 arena; `commands` absolute directions are shown one after
//! another as a sign in the top-left view cell, then after a blank delay the
//! agent must execute them in order, one cell per command.
//!
//! Timeline (0-based steps):
//!
//! ```text
//! [display: commands·show][delay][window 0][window 1]...
//! window = turn-or-nop, forward, then `hold` idle steps
//! ```
//!
//! At the end of every window the agent must stand on the cell reached by
//! following the commands so far; otherwise the episode fails. Commands never
//! point backwards relative to the heading left by the previous command, so
//! a single turn always suffices.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{kind, Cell, Dir, GridObservation, World};
use super::hallway::steer;
use super::{Action, EnvError, TerminalReason};

pub const ARENA: i32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandRecallParams {
    pub commands: usize,
    /// Steps each command stays on display.
    pub show: usize,
    /// Blank steps between the last command and the first window.
    pub delay: usize,
    /// Idle steps appended to each execution window.
    pub hold: usize,
}

impl CommandRecallParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.commands == 0 {
            return Err(EnvError::InvalidParams("command recall needs at least one command"));
        }
        if self.show == 0 {
            return Err(EnvError::InvalidParams("commands must be shown for at least one step"));
        }
        Ok(())
    }

    pub fn execute_start(&self) -> usize {
        self.commands * self.show + self.delay
    }

    pub fn window(&self) -> usize {
        2 + self.hold
    }

    pub fn horizon(&self) -> usize {
        self.execute_start() + self.commands * self.window()
    }
}

/// The sign glyph: a goal tile whose color carries the direction.
pub fn sign_cell(d: Dir) -> Cell {
    Cell { kind: kind::GOAL, color: d as u8, state: 0 }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommandRecall {
    params: CommandRecallParams,
    world: World,
    pub commands: Vec<Dir>,
    /// Expected position after each command.
    checkpoints: Vec<(i32, i32)>,
    pos: (i32, i32),
    dir: Dir,
}

const CENTER: (i32, i32) = (ARENA / 2 + 1, ARENA / 2 + 1);

fn inside(p: (i32, i32)) -> bool {
    (1..=ARENA).contains(&p.0) && (1..=ARENA).contains(&p.1)
}

impl CommandRecall {
    pub fn sample<R: Rng>(params: &CommandRecallParams, rng: &mut R) -> Self {
        let mut commands = Vec::with_capacity(params.commands);
        let mut checkpoints = Vec::with_capacity(params.commands);
        let (mut pos, mut heading) = (CENTER, Dir::North);
        for _ in 0..params.commands {
            let options: Vec<Dir> = [heading.left(), heading, heading.right()]
                .into_iter()
                .filter(|d| {
                    let (dx, dy) = d.delta();
                    inside((pos.0 + dx, pos.1 + dy))
                })
                .collect();
            let d = options[rng.gen_range(0..options.len())];
            let (dx, dy) = d.delta();
            pos = (pos.0 + dx, pos.1 + dy);
            heading = d;
            commands.push(d);
            checkpoints.push(pos);
        }
        Self::with_commands_unchecked(params, commands, checkpoints)
    }

    /// Builds an episode from explicit commands; `None` if any command
    /// reverses the heading or leaves the arena.
    pub fn with_commands(params: &CommandRecallParams, commands: Vec<Dir>) -> Option<Self> {
        if commands.len() != params.commands {
            return None;
        }
        let (mut pos, mut heading) = (CENTER, Dir::North);
        let mut checkpoints = Vec::with_capacity(commands.len());
        for &d in &commands {
            let (dx, dy) = d.delta();
            pos = (pos.0 + dx, pos.1 + dy);
            if d == heading.opposite() || !inside(pos) {
                return None;
            }
            heading = d;
            checkpoints.push(pos);
        }
        Some(Self::with_commands_unchecked(params, commands, checkpoints))
    }

    fn with_commands_unchecked(
        params: &CommandRecallParams,
        commands: Vec<Dir>,
        checkpoints: Vec<(i32, i32)>,
    ) -> Self {
        let side = (ARENA + 2) as usize;
        let mut world = World::new(side, side, Cell::WALL);
        for x in 1..=ARENA {
            for y in 1..=ARENA {
                world.set(x, y, Cell::EMPTY);
            }
        }
        Self { params: *params, world, commands, checkpoints, pos: CENTER, dir: Dir::North }
    }

    pub fn position(&self) -> ((i32, i32), Dir) {
        (self.pos, self.dir)
    }

    /// Command shown at step `t`, if any.
    pub fn displayed(&self, t: usize) -> Option<Dir> {
        (t < self.params.commands * self.params.show).then(|| self.commands[t / self.params.show])
    }

    /// `(command index, step within window)` during execution.
    fn window_at(&self, t: usize) -> Option<(usize, usize)> {
        let start = self.params.execute_start();
        (t >= start).then(|| {
            let w = self.params.window();
            ((t - start) / w, (t - start) % w)
        })
    }

    pub(crate) fn observe(&mut self, t: usize) -> GridObservation {
        let mut obs = self.world.egocentric_view(self.pos, self.dir);
        if let Some(d) = self.displayed(t) {
            obs.set(0, 0, sign_cell(d));
        }
        obs
    }

    pub(crate) fn apply(&mut self, action: Action, t: usize) -> Option<TerminalReason> {
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
        let (k, s) = self.window_at(t)?;
        if s + 1 < self.params.window() {
            return None;
        }
        if self.pos != self.checkpoints[k] {
            Some(TerminalReason::WrongChoice)
        } else if k + 1 == self.commands.len() {
            Some(TerminalReason::Success)
        } else {
            None
        }
    }

    pub(crate) fn expert(&self, t: usize) -> Action {
        match self.window_at(t) {
            Some((k, 0)) if self.dir != self.commands[k] => steer(self.dir, self.commands[k]),
            Some((_, 1)) => Action::Forward,
            _ => Action::Nop,
        }
    }

    /// The first step of a window recalls every display step of its command.
    pub(crate) fn recall(&self, t: usize) -> Vec<usize> {
        match self.window_at(t) {
            Some((k, 0)) => (k * self.params.show..(k + 1) * self.params.show).collect(),
            _ => vec![],
        }
    }
}
