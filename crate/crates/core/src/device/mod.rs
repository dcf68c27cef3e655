//! Compact device models: the access nanosheet transistor and the bi-layer RRAM.

pub mod rram;
pub mod tft;

pub use rram::{
    level_gaps, program_to_level, rram_apply_pulse, rram_current, LevelScheme, Provenance,
    PulseTrain, RramParams, RramState,
};
pub use tft::{
    softplus, tft_column_current, tft_drain_current, tft_partials, tft_transconductance, TftParams, STACK_DEPTH,
};
