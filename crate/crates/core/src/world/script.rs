use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::world::catalog::{Hand, ObjState, Region, Verb, OBJECTS};

/// Geometry and sampling parameters of the synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub grid_size: usize,
    pub frames: usize,
    pub ego_size: usize,
    pub exo_size: usize,
    pub exo_cameras: usize,
    pub occlusion_rate: f64,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            grid_size: 8,
            frames: 4,
            ego_size: 32,
            exo_size: 48,
            exo_cameras: 1,
            occlusion_rate: 0.3,
            min_objects: 4,
            max_objects: 6,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.frames < 2 {
            return fail(format!("frames must be at least 2, got {}", self.frames));
        }
        if self.frames > 4 {
            return fail(format!("frames must be at most 4 (one step token per frame), got {}", self.frames));
        }
        if self.grid_size < 2 || self.grid_size % 2 != 0 {
            return fail(format!("grid_size must be even and >= 2, got {}", self.grid_size));
        }
        if self.exo_size % self.grid_size != 0 || self.exo_size / self.grid_size < 6 {
            return fail(format!("exo_size must be a multiple of grid_size with cells of >= 6 px, got {}", self.exo_size));
        }
        if self.ego_size != 32 {
            return fail(format!("ego_size must be 32, got {}", self.ego_size));
        }
        if self.exo_cameras == 0 || self.exo_cameras > 4 {
            return fail(format!("exo_cameras must be in 1..=4, got {}", self.exo_cameras));
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return fail(format!("occlusion_rate must be in [0,1], got {}", self.occlusion_rate));
        }
        let cells = self.grid_size * self.grid_size;
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > OBJECTS.len().min(cells) {
            return fail(format!("invalid object count range {}..={}", self.min_objects, self.max_objects));
        }
        Ok(())
    }

    pub fn exo_cell_px(&self) -> usize {
        self.exo_size / self.grid_size
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlacedObject {
    pub object: usize,
    pub cell: Cell,
    /// State at the start of the clip.
    pub state: ObjState,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub verb: Verb,
    pub object: usize,
    pub hand: Hand,
    pub region: Region,
    /// State of `object` once the step is done.
    pub state_after: ObjState,
    pub state_before: ObjState,
}

impl Step {
    pub fn changes_state(&self) -> bool {
        self.state_before != self.state_after
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActivityScript {
    pub seed: u64,
    pub grid_size: usize,
    /// Where the actor stands before the first step.
    pub actor_cell: Cell,
    pub objects: Vec<PlacedObject>,
    pub timeline: Vec<Step>,
    /// `occluded[camera][step]`: the step's interaction detail is hidden from that exo camera.
    pub occluded: Vec<Vec<bool>>,
}

impl ActivityScript {
    pub fn frames(&self) -> usize {
        self.timeline.len()
    }

    pub fn placed(&self, object: usize) -> Option<&PlacedObject> {
        self.objects.iter().find(|o| o.object == object)
    }

    pub fn cell_of_step(&self, t: usize) -> Cell {
        self.placed(self.timeline[t].object).expect("step object is placed").cell
    }

    pub fn is_occluded(&self, camera: usize, t: usize) -> bool {
        self.occluded[camera][t]
    }

    /// Content fingerprint ignoring the seed.
    pub fn fingerprint(&self) -> String {
        let mut s = self.clone();
        s.seed = 0;
        crate::io::hash_json(&s)
    }
}

/// Row of the grid nearest to exo camera `camera`. Cameras alternate between
/// the bottom and top edge; details in that row are never blocked.
pub fn facing_row(camera: usize, grid: usize) -> usize {
    if camera % 2 == 0 {
        grid - 1
    } else {
        0
    }
}

/// Occlusion of step `t` for `camera`: a seeded Bernoulli draw, suppressed
/// for cells in the camera-facing border row.
pub fn occlusion_flag(seed: u64, camera: usize, t: usize, cell: Cell, cfg: &WorldConfig) -> bool {
    if cell.row == facing_row(camera, cfg.grid_size) {
        return false;
    }
    let mut r = seed::rng(seed, &[seed::tag("occlusion"), camera as u64, t as u64]);
    r.random_bool(cfg.occlusion_rate)
}

pub fn sample_script(seed: u64, cfg: &WorldConfig) -> Result<ActivityScript> {
    cfg.validate()?;
    let mut rng = seed::rng(seed, &[seed::tag("script")]);
    let g = cfg.grid_size;
    loop {
        let n_obj = rng.random_range(cfg.min_objects..=cfg.max_objects);
        let ids = sample(&mut rng, OBJECTS.len(), n_obj).into_vec();
        let cells = sample(&mut rng, g * g, n_obj).into_vec();
        let objects: Vec<PlacedObject> = ids
            .iter()
            .zip(&cells)
            .map(|(&object, &c)| {
                let state = if rng.random_bool(0.75) {
                    ObjState::Intact
                } else {
                    ObjState::ALL[rng.random_range(1..4)]
                };
                PlacedObject { object, cell: Cell { row: c / g, col: c % g }, state }
            })
            .collect();
        let actor = rng.random_range(0..g * g);
        let mut current: Vec<ObjState> = objects.iter().map(|o| o.state).collect();
        let mut timeline = Vec::with_capacity(cfg.frames);
        for _ in 0..cfg.frames {
            let k = rng.random_range(0..objects.len());
            let verb = Verb::ALL[rng.random_range(0..Verb::ALL.len())];
            let hand = if rng.random_bool(0.5) { Hand::Left } else { Hand::Right };
            let cell = objects[k].cell;
            let before = current[k];
            let after = verb.resulting_state().unwrap_or(before);
            current[k] = after;
            timeline.push(Step {
                verb,
                object: objects[k].object,
                hand,
                region: Region::of_cell(cell.row, cell.col, g),
                state_after: after,
                state_before: before,
            });
        }
        if !timeline.iter().any(Step::changes_state) {
            continue;
        }
        let occluded = (0..cfg.exo_cameras)
            .map(|cam| {
                (0..cfg.frames)
                    .map(|t| {
                        let k = objects.iter().position(|o| o.object == timeline[t].object).unwrap();
                        occlusion_flag(seed, cam, t, objects[k].cell, cfg)
                    })
                    .collect()
            })
            .collect();
        return Ok(ActivityScript {
            seed,
            grid_size: g,
            actor_cell: Cell { row: actor / g, col: actor % g },
            objects,
            timeline,
            occluded,
        });
    }
}
