// mdbook cannot resolve workspace dependencies when it tests listings, so the
// chapters are pulled in here as doc comments and `cargo test --doc` runs them
// against the real crates. One module per chapter keeps failures traceable.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../book/src/grassmann.md")]
pub mod grassmann {}
#[doc = include_str!("../../book/src/random-effects.md")]
pub mod random_effects {}
#[doc = include_str!("../../book/src/pfc.md")]
pub mod pfc {}
#[doc = include_str!("../../book/src/rpfc.md")]
pub mod rpfc {}
#[doc = include_str!("../../book/src/mixed.md")]
pub mod mixed {}
#[doc = include_str!("../../book/src/dimension.md")]
pub mod dimension {}
#[doc = include_str!("../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../book/src/cli.md")]
pub mod cli {}
