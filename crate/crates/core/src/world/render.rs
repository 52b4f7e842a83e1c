//! Pixel renderers for the ego close-up and the exo overview.
//!
//! Ego frame (32×32): region-tinted background, the interaction cell as a
//! 16×16 square of object colour in the middle, and three 8×8 glyphs (object
//! state above, verb below, hand on the left or right edge). Every glyph
//! fills exactly one 8×8 patch.
//!
//! Exo frame: the whole grid, each cell tinted by region, each placed object
//! as a 4×4 block, the actor as white bars above and below the cell it is
//! working at, and a 2×2 detail glyph (hand, state, verb, verb) inside that
//! cell. Occluded steps keep the actor but show a uniform grey 2×2 marker
//! instead of the glyph.

use egoexo_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::catalog::{Hand, ObjState, OBJECT_COLORS};
use crate::world::script::{ActivityScript, Cell, WorldConfig};

pub const GLYPH: usize = 8;
pub const MARKER_GREY: f32 = 0.5;
pub const ACTOR_WHITE: [f32; 3] = [1.0; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Viewpoint {
    Ego,
    Exo,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    /// `[T × H × W × 3]`, values in [0,1].
    pub frames: Tensor<f32>,
    pub viewpoint: Viewpoint,
    pub camera_id: usize,
}

/// Pixel rectangle `[r0, r1) × [c0, c1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.r1 - self.r0) * (self.c1 - self.c0)
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.r0..self.r1).contains(&r) && (self.c0..self.c1).contains(&c)
    }
}

pub fn ego_interaction_rect() -> Rect {
    Rect { r0: 8, r1: 24, c0: 8, c1: 24 }
}

pub fn ego_state_rect() -> Rect {
    Rect { r0: 0, r1: 8, c0: 8, c1: 16 }
}

pub fn ego_verb_rect() -> Rect {
    Rect { r0: 24, r1: 32, c0: 16, c1: 24 }
}

pub fn ego_hand_rect(hand: Hand) -> Rect {
    match hand {
        Hand::Left => Rect { r0: 8, r1: 16, c0: 0, c1: 8 },
        Hand::Right => Rect { r0: 8, r1: 16, c0: 24, c1: 32 },
    }
}

struct Canvas {
    w: usize,
    data: Vec<f32>,
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Canvas { w, data: vec![0.0; h * w * 3] }
    }

    fn set(&mut self, r: usize, c: usize, rgb: [f32; 3]) {
        let i = (r * self.w + c) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    fn fill(&mut self, rect: Rect, rgb: [f32; 3]) {
        for r in rect.r0..rect.r1 {
            for c in rect.c0..rect.c1 {
                self.set(r, c, rgb);
            }
        }
    }
}

fn state_pattern(state: ObjState, i: usize, j: usize) -> bool {
    match state {
        ObjState::Intact => true,
        ObjState::Opened => i == 0 || j == 0 || i == GLYPH - 1 || j == GLYPH - 1,
        ObjState::Cut => (i + j) % 4 < 2,
        ObjState::Mixed => (i / 2 + j / 2) % 2 == 0,
    }
}

fn hand_pattern(hand: Hand, i: usize, j: usize) -> bool {
    // a palm with the thumb on the inner side
    let palm = (2..GLYPH).contains(&i) && (1..GLYPH - 1).contains(&j);
    let fingers = i < 2 && j % 2 == 1;
    let thumb = (3..5).contains(&i) && if hand == Hand::Left { j == GLYPH - 1 } else { j == 0 };
    palm || fingers || thumb
}

pub fn render_ego(script: &ActivityScript, cfg: &WorldConfig) -> Result<RenderedView> {
    let s = cfg.ego_size;
    let mut frames = Vec::with_capacity(script.frames() * s * s * 3);
    for step in &script.timeline {
        let mut cv = Canvas::new(s, s);
        cv.fill(Rect { r0: 0, r1: s, c0: 0, c1: s }, step.region.tint());
        cv.fill(ego_interaction_rect(), OBJECT_COLORS[step.object]);
        let sr = ego_state_rect();
        let vr = ego_verb_rect();
        let hr = ego_hand_rect(step.hand);
        for i in 0..GLYPH {
            for j in 0..GLYPH {
                let st = if state_pattern(step.state_after, i, j) { step.state_after.color() } else { [0.0; 3] };
                cv.set(sr.r0 + i, sr.c0 + j, st);
                let border = i == 0 || j == 0 || i == GLYPH - 1 || j == GLYPH - 1;
                cv.set(vr.r0 + i, vr.c0 + j, if border { [0.0; 3] } else { step.verb.color() });
                let hd = if hand_pattern(step.hand, i, j) { step.hand.color() } else { [0.0; 3] };
                cv.set(hr.r0 + i, hr.c0 + j, hd);
            }
        }
        frames.extend(cv.data);
    }
    Ok(RenderedView {
        frames: Tensor::new(vec![script.frames(), s, s, 3], frames)?,
        viewpoint: Viewpoint::Ego,
        camera_id: 0,
    })
}

/// Position of a grid cell as seen by `camera` (odd cameras see the grid upside down).
pub fn camera_cell(cell: Cell, camera: usize, grid: usize) -> Cell {
    if camera % 2 == 1 {
        Cell { row: grid - 1 - cell.row, col: cell.col }
    } else {
        cell
    }
}

pub fn exo_cell_rect(cell: Cell, camera: usize, cfg: &WorldConfig) -> Rect {
    let p = cfg.exo_cell_px();
    let c = camera_cell(cell, camera, cfg.grid_size);
    Rect { r0: c.row * p, r1: (c.row + 1) * p, c0: c.col * p, c1: (c.col + 1) * p }
}

/// The 2×2 detail glyph inside a cell rectangle.
pub fn exo_glyph_rect(cell_rect: Rect) -> Rect {
    Rect { r0: cell_rect.r0 + 2, r1: cell_rect.r0 + 4, c0: cell_rect.c0 + 2, c1: cell_rect.c0 + 4 }
}

fn check_camera(camera: usize, cfg: &WorldConfig) -> Result<()> {
    if camera >= cfg.exo_cameras {
        return Err(Error::Config(format!("camera {camera} out of range (configured {})", cfg.exo_cameras)));
    }
    Ok(())
}

pub fn render_exo(script: &ActivityScript, camera: usize, cfg: &WorldConfig) -> Result<RenderedView> {
    check_camera(camera, cfg)?;
    let s = cfg.exo_size;
    let g = cfg.grid_size;
    let mut frames = Vec::with_capacity(script.frames() * s * s * 3);
    for (t, step) in script.timeline.iter().enumerate() {
        let mut cv = Canvas::new(s, s);
        for row in 0..g {
            for col in 0..g {
                let cell = Cell { row, col };
                let region = crate::world::catalog::Region::of_cell(row, col, g);
                cv.fill(exo_cell_rect(cell, camera, cfg), region.tint());
            }
        }
        for o in &script.objects {
            let r = exo_cell_rect(o.cell, camera, cfg);
            cv.fill(Rect { r0: r.r0 + 1, r1: r.r0 + 5, c0: r.c0 + 1, c1: r.c0 + 5 }, OBJECT_COLORS[o.object]);
        }
        let cell = exo_cell_rect(script.cell_of_step(t), camera, cfg);
        for r in [cell.r0, cell.r1 - 1] {
            cv.fill(Rect { r0: r, r1: r + 1, c0: cell.c0, c1: cell.c1 }, ACTOR_WHITE);
        }
        let gl = exo_glyph_rect(cell);
        if script.is_occluded(camera, t) {
            cv.fill(gl, [MARKER_GREY; 3]);
        } else {
            cv.set(gl.r0, gl.c0, step.hand.color());
            cv.set(gl.r0, gl.c0 + 1, step.state_after.color());
            cv.set(gl.r0 + 1, gl.c0, step.verb.color());
            cv.set(gl.r0 + 1, gl.c0 + 1, step.verb.color());
        }
        frames.extend(cv.data);
    }
    Ok(RenderedView {
        frames: Tensor::new(vec![script.frames(), s, s, 3], frames)?,
        viewpoint: Viewpoint::Exo,
        camera_id: camera,
    })
}

/// `[T × H × W]` binary mask of the interaction cell in exo pixels; all
/// zero on frames where the step is occluded.
pub fn region_mask(script: &ActivityScript, camera: usize, cfg: &WorldConfig) -> Result<Tensor<f32>> {
    check_camera(camera, cfg)?;
    let s = cfg.exo_size;
    let mut data = vec![0.0f32; script.frames() * s * s];
    for t in 0..script.frames() {
        if script.is_occluded(camera, t) {
            continue;
        }
        let r = exo_cell_rect(script.cell_of_step(t), camera, cfg);
        for row in r.r0..r.r1 {
            for col in r.c0..r.c1 {
                data[(t * s + row) * s + col] = 1.0;
            }
        }
    }
    Ok(Tensor::new(vec![script.frames(), s, s], data)?)
}

/// Area-averaging resize of `[T × H × W × C]` (or `[T × H × W]`) frames to
/// `out × out`.
pub fn resize_area(frames: &Tensor<f32>, out: usize) -> Tensor<f32> {
    let shape = frames.shape();
    let (t, h, w) = (shape[0], shape[1], shape[2]);
    let ch = if shape.len() == 4 { shape[3] } else { 1 };
    let sy = h as f64 / out as f64;
    let sx = w as f64 / out as f64;
    let mut data = vec![0.0f32; t * out * out * ch];
    let src = frames.data();
    let overlap = |a0: f64, a1: f64, i: usize| (a1.min(i as f64 + 1.0) - a0.max(i as f64)).max(0.0);
    for f in 0..t {
        for oy in 0..out {
            let (y0, y1) = (oy as f64 * sy, (oy + 1) as f64 * sy);
            for ox in 0..out {
                let (x0, x1) = (ox as f64 * sx, (ox + 1) as f64 * sx);
                let mut acc = vec![0.0f64; ch];
                for iy in y0.floor() as usize..(y1.ceil() as usize).min(h) {
                    let wy = overlap(y0, y1, iy);
                    for ix in x0.floor() as usize..(x1.ceil() as usize).min(w) {
                        let wgt = wy * overlap(x0, x1, ix);
                        if wgt == 0.0 {
                            continue;
                        }
                        for c in 0..ch {
                            acc[c] += wgt * src[((f * h + iy) * w + ix) * ch + c] as f64;
                        }
                    }
                }
                for c in 0..ch {
                    data[((f * out + oy) * out + ox) * ch + c] = (acc[c] / (sy * sx)) as f32;
                }
            }
        }
    }
    let shape = if shape.len() == 4 { vec![t, out, out, ch] } else { vec![t, out, out] };
    Tensor::new(shape, data).expect("resize shape")
}
