//! Discounted and long-run average control of piecewise deterministic
//! Markov processes on an interval.

pub mod average;
pub mod discounted;
pub mod error;
pub mod fixtures;
pub mod flow;
pub mod grid;
pub mod io;
pub mod model;
pub mod operators;
pub mod simulate;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        };
    }
    chapter!(introduction, "introduction.md");
    chapter!(models, "models.md");
    chapter!(flows, "flows.md");
    chapter!(operators, "operators.md");
    chapter!(discounted, "discounted.md");
    chapter!(average, "average.md");
    chapter!(simulation, "simulation.md");
    chapter!(cli, "cli.md");
}
