//! Model configs shipped with the repository.

use crate::model::ModelSpec;

pub const CYCLE1D: &str = include_str!("../../../fixtures/cycle1d.toml");
pub const CYCLE1D_A0: &str = include_str!("../../../fixtures/cycle1d-a0.toml");
pub const DECAY1D: &str = include_str!("../../../fixtures/decay1d.toml");
pub const BLOWUP1D: &str = include_str!("../../../fixtures/blowup1d.toml");

pub fn cycle1d() -> ModelSpec {
    ModelSpec::load(CYCLE1D).expect("cycle1d fixture")
}

pub fn cycle1d_a0() -> ModelSpec {
    ModelSpec::load(CYCLE1D_A0).expect("cycle1d-a0 fixture")
}

pub fn decay1d() -> ModelSpec {
    ModelSpec::load(DECAY1D).expect("decay1d fixture")
}

pub fn blowup1d() -> ModelSpec {
    ModelSpec::load(BLOWUP1D).expect("blowup1d fixture")
}
