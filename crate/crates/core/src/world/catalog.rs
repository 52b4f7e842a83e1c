//! Closed catalogs shared by the renderer, the text vocabulary and the benchmark.

use serde::{Deserialize, Serialize};

pub const OBJECTS: [&str; 12] = [
    "tomato", "onion", "bread", "egg", "bowl", "pot", "cup", "jar", "bottle", "pan", "carrot", "lemon",
];

/// RGB colours of the object catalog, in [0,1].
pub const OBJECT_COLORS: [[f32; 3]; 12] = [
    [0.90, 0.15, 0.10],
    [0.85, 0.75, 0.55],
    [0.80, 0.55, 0.25],
    [0.98, 0.95, 0.85],
    [0.30, 0.45, 0.85],
    [0.35, 0.35, 0.40],
    [0.95, 0.55, 0.75],
    [0.55, 0.85, 0.90],
    [0.20, 0.65, 0.30],
    [0.15, 0.15, 0.15],
    [1.00, 0.55, 0.05],
    [0.95, 0.90, 0.20],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Cut,
    Open,
    Stir,
    Pour,
    Pick,
    Place,
    Wash,
    Crack,
}

impl Verb {
    pub const ALL: [Verb; 8] =
        [Verb::Cut, Verb::Open, Verb::Stir, Verb::Pour, Verb::Pick, Verb::Place, Verb::Wash, Verb::Crack];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["cut", "open", "stir", "pour", "pick", "place", "wash", "crack"][self.index()]
    }

    /// State an object ends up in, or `None` if the verb leaves it unchanged.
    pub fn resulting_state(self) -> Option<ObjState> {
        match self {
            Verb::Cut => Some(ObjState::Cut),
            Verb::Open | Verb::Crack => Some(ObjState::Opened),
            Verb::Stir | Verb::Pour => Some(ObjState::Mixed),
            Verb::Pick | Verb::Place | Verb::Wash => None,
        }
    }

    /// Coarse verb class used to choose hard distractors.
    pub fn class(self) -> usize {
        match self {
            Verb::Cut | Verb::Crack | Verb::Open => 0,
            Verb::Stir | Verb::Pour => 1,
            Verb::Pick | Verb::Place | Verb::Wash => 2,
        }
    }

    pub fn color(self) -> [f32; 3] {
        VERB_COLORS[self.index()]
    }
}

const VERB_COLORS: [[f32; 3]; 8] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 0.5, 0.0],
    [0.5, 0.0, 1.0],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ObjState {
    Intact,
    Opened,
    Cut,
    Mixed,
}

impl ObjState {
    pub const ALL: [ObjState; 4] = [ObjState::Intact, ObjState::Opened, ObjState::Cut, ObjState::Mixed];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["intact", "opened", "cut", "mixed"][self.index()]
    }

    pub fn color(self) -> [f32; 3] {
        [[0.95, 0.95, 0.95], [0.6, 0.3, 0.1], [0.1, 0.6, 0.1], [0.4, 0.1, 0.5]][self.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["left", "right"][self.index()]
    }

    pub fn color(self) -> [f32; 3] {
        [[0.1, 0.9, 0.9], [0.9, 0.1, 0.9]][self.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Counter,
    Stove,
    Sink,
    Table,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Counter, Region::Stove, Region::Sink, Region::Table];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["counter", "stove", "sink", "table"][self.index()]
    }

    /// Quadrant layout: counter top-left, stove top-right, sink bottom-left,
    /// table bottom-right.
    pub fn of_cell(row: usize, col: usize, grid: usize) -> Region {
        let bottom = row >= grid / 2;
        let right = col >= grid / 2;
        Region::ALL[(bottom as usize) * 2 + right as usize]
    }

    pub fn tint(self) -> [f32; 3] {
        [[0.45, 0.40, 0.30], [0.30, 0.30, 0.32], [0.25, 0.35, 0.45], [0.40, 0.28, 0.20]][self.index()]
    }
}
