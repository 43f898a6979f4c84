//! Deterministic PNG rendering of egocentric observations: 7×7 cells of
//! 32 px, agent at the bottom centre drawn as a triangle pointing up.

use memdep_core::envgym::grid::{kind, Cell, NUM_COLORS, VIEW_SIZE};
use memdep_core::envgym::GridObservation;

pub const CELL_PX: usize = 32;
pub const FRAME_PX: usize = CELL_PX * VIEW_SIZE;

const PALETTE: [[u8; 3]; NUM_COLORS] =
    [[255, 0, 0], [0, 255, 0], [0, 0, 255], [112, 39, 195], [255, 255, 0], [100, 100, 100]];
const BACKGROUND: [u8; 3] = [0, 0, 0];
const UNSEEN: [u8; 3] = [40, 40, 40];
const GRID_LINE: [u8; 3] = [60, 60, 60];
const AGENT: [u8; 3] = [255, 255, 255];

struct Canvas(Vec<u8>);

impl Canvas {
    fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * FRAME_PX + x) * 3;
        self.0[i..i + 3].copy_from_slice(&rgb);
    }

    /// Paints pixels of cell `(row, col)` where `inside(u, v)` holds, with
    /// `u, v ∈ [0, 1)` the position inside the cell.
    fn shade(&mut self, row: usize, col: usize, rgb: [u8; 3], inside: impl Fn(f64, f64) -> bool) {
        for py in 0..CELL_PX {
            for px in 0..CELL_PX {
                let (u, v) = ((px as f64 + 0.5) / CELL_PX as f64, (py as f64 + 0.5) / CELL_PX as f64);
                if inside(u, v) {
                    self.put(col * CELL_PX + px, row * CELL_PX + py, rgb);
                }
            }
        }
    }
}

fn draw_cell(c: &mut Canvas, row: usize, col: usize, cell: Cell) {
    let color = PALETTE[cell.color as usize % NUM_COLORS];
    match cell.kind {
        kind::UNSEEN => c.shade(row, col, UNSEEN, |_, _| true),
        kind::WALL => c.shade(row, col, color, |_, _| true),
        kind::FLOOR => c.shade(row, col, color.map(|x| x / 3), |_, _| true),
        kind::GOAL => c.shade(row, col, color, |u, v| (0.1..0.9).contains(&u) && (0.1..0.9).contains(&v)),
        kind::LAVA => c.shade(row, col, [255, 128, 0], |_, _| true),
        kind::DOOR => {
            let open = cell.state == 0;
            c.shade(row, col, color, move |u, v| {
                let edge = !(0.1..0.9).contains(&u) || !(0.1..0.9).contains(&v);
                edge || (!open && (0.2..0.8).contains(&u) && (0.2..0.8).contains(&v) && (u - 0.5).abs() > 0.25)
            });
        }
        kind::KEY => c.shade(row, col, color, |u, v| {
            let ring = ((u - 0.5).powi(2) + (v - 0.3).powi(2)).sqrt();
            (0.1..0.2).contains(&ring) || ((0.45..0.55).contains(&u) && (0.4..0.9).contains(&v))
                || ((0.55..0.7).contains(&u) && ((0.7..0.76).contains(&v) || (0.82..0.88).contains(&v)))
        }),
        kind::BALL => c.shade(row, col, color, |u, v| (u - 0.5).powi(2) + (v - 0.5).powi(2) < 0.1),
        kind::BOX => c.shade(row, col, color, |u, v| {
            let inner = (0.2..0.8).contains(&u) && (0.2..0.8).contains(&v);
            let core = (0.28..0.72).contains(&u) && (0.28..0.72).contains(&v);
            inner && !core || (inner && (0.46..0.54).contains(&v))
        }),
        _ => {}
    }
}

/// RGB pixels, row-major, `FRAME_PX × FRAME_PX × 3`.
pub fn rasterize(obs: &GridObservation) -> Vec<u8> {
    let mut c = Canvas(BACKGROUND.repeat(FRAME_PX * FRAME_PX));
    for row in 0..VIEW_SIZE {
        for col in 0..VIEW_SIZE {
            draw_cell(&mut c, row, col, obs.cell(row, col));
        }
    }
    let agent = (VIEW_SIZE - 1, VIEW_SIZE / 2);
    c.shade(agent.0, agent.1, AGENT, |u, v| v > 0.15 && v < 0.85 && (u - 0.5).abs() < (v - 0.15) * 0.5);
    for i in 0..FRAME_PX {
        for k in (0..FRAME_PX).step_by(CELL_PX) {
            c.put(k, i, GRID_LINE);
            c.put(i, k, GRID_LINE);
        }
    }
    c.0
}

/// Encoded PNG bytes; identical observations give identical bytes.
pub fn frame_png(obs: &GridObservation) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, FRAME_PX as u32, FRAME_PX as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(&rasterize(obs)).expect("in-memory PNG data");
    }
    out
}
