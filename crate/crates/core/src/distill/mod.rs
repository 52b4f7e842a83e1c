//! Teacher pretraining, instruction generation and student training.

pub mod config;
pub mod features;
pub mod grid;
pub mod instructions;
pub mod strategy;
pub mod student;
pub mod teacher;
pub mod train;

pub use config::TrainConfig;
pub use features::{view_patches, ClipFeatures, FeatureStore, ViewFeatures, Views};
pub use instructions::{generate_instructions, read_instructions, write_instructions, InstructionReport, InstructionTriple};
pub use strategy::{Pooling, Strategy, StrategySpec};
pub use student::{
    eval_ego_input, init_student, strategy_of_role, train_ego_token_model, train_student, StudentInputs, StudentRun,
    STUDENT_TRAINABLE,
};
pub use teacher::{ego_answer_nll, train_teacher, TEACHER_TRAINABLE};
pub use train::{EpochLog, TrainLog};
