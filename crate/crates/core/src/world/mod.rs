//! Scripted activities rendered as paired ego/exo clips.

pub mod catalog;
pub mod dataset;
pub mod oracle;
pub mod render;
pub mod script;

pub use catalog::{Hand, ObjState, Region, Verb, OBJECTS};
pub use dataset::{build_dataset, ClipEntry, Dataset, DatasetConfig, Manifest, PairedClip, Split};
pub use render::{region_mask, render_ego, render_exo, resize_area, RenderedView, Viewpoint};
pub use script::{sample_script, ActivityScript, Cell, PlacedObject, Step, WorldConfig};
