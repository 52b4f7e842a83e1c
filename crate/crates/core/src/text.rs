//! Closed token vocabulary, query paraphrase banks and answer templates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::world::{ActivityScript, Hand, ObjState, Region, Verb, OBJECTS};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;

const OBJ_BASE: usize = 4;
const VERB_BASE: usize = OBJ_BASE + 12;
const REGION_BASE: usize = VERB_BASE + 8;
const HAND_BASE: usize = REGION_BASE + 4;
const STATE_BASE: usize = HAND_BASE + 4;
const STEP_BASE: usize = STATE_BASE + 4;
const WORD_BASE: usize = STEP_BASE + 4;

pub const WORDS: [&str; 24] = [
    "describe", "what", "happening", "events", "actions", "activity", "occurs", "sequence", "order",
    "progression", "objects", "where", "located", "used", "visible", "primary", "which", "hand", "region",
    "state", "action", "then", "with", "in",
];

pub const VOCAB_SIZE: usize = WORD_BASE + WORDS.len();

/// Hand answers offered by the benchmark (only `Left`/`Right` occur in scripts).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandOption {
    Left,
    Right,
    Both,
    Neither,
}

impl HandOption {
    pub const ALL: [HandOption; 4] = [HandOption::Left, HandOption::Right, HandOption::Both, HandOption::Neither];

    pub fn from_hand(h: Hand) -> Self {
        match h {
            Hand::Left => HandOption::Left,
            Hand::Right => HandOption::Right,
        }
    }
}

pub fn object(i: usize) -> TokenId {
    OBJ_BASE + i
}

pub fn verb(v: Verb) -> TokenId {
    VERB_BASE + v.index()
}

pub fn region(r: Region) -> TokenId {
    REGION_BASE + r.index()
}

pub fn hand(h: HandOption) -> TokenId {
    HAND_BASE + h as usize
}

pub fn state(s: ObjState) -> TokenId {
    STATE_BASE + s.index()
}

pub fn step(t: usize) -> TokenId {
    assert!(t < 4, "only four step tokens exist");
    STEP_BASE + t
}

pub fn word(w: &str) -> TokenId {
    WORD_BASE + WORDS.iter().position(|x| *x == w).unwrap_or_else(|| panic!("`{w}` is not in the vocabulary"))
}

pub fn words(ws: &[&str]) -> Vec<TokenId> {
    ws.iter().map(|w| word(w)).collect()
}

pub fn is_hand_token(t: TokenId) -> bool {
    (HAND_BASE..HAND_BASE + 4).contains(&t)
}

pub fn token_name(t: TokenId) -> String {
    match t {
        PAD => "<pad>".into(),
        BOS => "<bos>".into(),
        EOS => "<eos>".into(),
        SEP => "<sep>".into(),
        _ if t < VERB_BASE => OBJECTS[t - OBJ_BASE].into(),
        _ if t < REGION_BASE => Verb::ALL[t - VERB_BASE].name().into(),
        _ if t < HAND_BASE => Region::ALL[t - REGION_BASE].name().into(),
        _ if t < STATE_BASE => ["left", "right", "both", "neither"][t - HAND_BASE].into(),
        _ if t < STEP_BASE => format!("{}*", ObjState::ALL[t - STATE_BASE].name()),
        _ if t < WORD_BASE => ["first", "second", "third", "fourth"][t - STEP_BASE].into(),
        _ if t < VOCAB_SIZE => WORDS[t - WORD_BASE].into(),
        _ => format!("<{t}?>"),
    }
}

pub fn decode(ids: &[TokenId]) -> String {
    ids.iter().map(|&t| token_name(t)).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum QueryCategory {
    Descriptive,
    Temporal,
    Spatial,
}

impl QueryCategory {
    pub const ALL: [QueryCategory; 3] = [QueryCategory::Descriptive, QueryCategory::Temporal, QueryCategory::Spatial];

    pub fn bank(self) -> Vec<Vec<TokenId>> {
        let bank: &[&[&str]] = match self {
            QueryCategory::Descriptive => &[
                &["describe", "events"],
                &["what", "happening"],
                &["describe", "actions"],
                &["describe", "activity"],
                &["what", "occurs"],
            ],
            QueryCategory::Temporal => &[
                &["describe", "sequence"],
                &["what", "order"],
                &["describe", "progression"],
            ],
            QueryCategory::Spatial => &[
                &["where", "objects", "located"],
                &["where", "objects", "used"],
                &["which", "region", "objects"],
                &["where", "visible", "objects"],
            ],
        };
        bank.iter().map(|q| words(q)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub category: QueryCategory,
    pub tokens: Vec<TokenId>,
}

/// One query per category for a clip, paraphrase chosen by seed.
pub fn sample_queries(seed: u64, clip_id: &str) -> Vec<Query> {
    let mut rng = seed::rng(seed, &[seed::tag("queries"), seed::tag(clip_id)]);
    QueryCategory::ALL
        .iter()
        .map(|&category| {
            let bank = category.bank();
            Query { category, tokens: bank[rng.random_range(0..bank.len())].clone() }
        })
        .collect()
}

/// Query/answer pairs produced for a corpus of `clips` clips.
pub fn expected_pair_count(clips: usize) -> usize {
    clips * QueryCategory::ALL.len()
}

/// Ground-truth long-form answer (with EOS) describing every step.
pub fn detailed_answer(script: &ActivityScript, category: QueryCategory) -> Vec<TokenId> {
    let mut out = Vec::new();
    for (t, s) in script.timeline.iter().enumerate() {
        match category {
            QueryCategory::Descriptive => {
                out.extend([verb(s.verb), object(s.object), word("with"), hand(HandOption::from_hand(s.hand))]);
            }
            QueryCategory::Temporal => {
                if t > 0 {
                    out.push(word("then"));
                }
                out.extend([verb(s.verb), object(s.object), state(s.state_after)]);
            }
            QueryCategory::Spatial => {
                out.extend([object(s.object), word("in"), region(s.region)]);
            }
        }
    }
    out.push(EOS);
    out
}

/// Keystep-style narration ("verb object then verb object ...") carrying no
/// hand, state or region information. This is the only ground truth the
/// exo-side baselines see.
pub fn coarse_narration(script: &ActivityScript) -> Vec<TokenId> {
    let mut out = Vec::new();
    for (t, s) in script.timeline.iter().enumerate() {
        if t > 0 {
            out.push(word("then"));
        }
        out.extend([verb(s.verb), object(s.object)]);
    }
    out.push(EOS);
    out
}

/// The four benchmark question families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum McqCategory {
    ActionUnderstanding,
    TaskRegion,
    Hoi,
    HandIdentification,
}

impl McqCategory {
    pub const ALL: [McqCategory; 4] =
        [McqCategory::ActionUnderstanding, McqCategory::TaskRegion, McqCategory::Hoi, McqCategory::HandIdentification];

    pub fn name(self) -> &'static str {
        ["action_understanding", "task_region", "hoi", "hand_identification"][self as usize]
    }

    /// Short question about step `t`.
    pub fn question(self, t: usize) -> Vec<TokenId> {
        let mut q = match self {
            McqCategory::ActionUnderstanding => words(&["what", "action"]),
            McqCategory::TaskRegion => words(&["which", "region"]),
            McqCategory::Hoi => words(&["what", "objects", "state"]),
            McqCategory::HandIdentification => words(&["which", "primary", "hand"]),
        };
        q.push(step(t));
        q
    }

    /// Correct short answer for step `t` (no EOS).
    pub fn answer(self, script: &ActivityScript, t: usize) -> Vec<TokenId> {
        let s = &script.timeline[t];
        match self {
            McqCategory::ActionUnderstanding => vec![verb(s.verb), object(s.object)],
            McqCategory::TaskRegion => vec![region(s.region)],
            McqCategory::Hoi => vec![object(s.object), state(s.state_after)],
            McqCategory::HandIdentification => vec![hand(HandOption::from_hand(s.hand))],
        }
    }
}
