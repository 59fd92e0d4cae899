//! Test support for the fracdet workspace: independently written
//! reference implementations ("oracles"), seeded random input builders,
//! and synthetic fixture corpora.
//!
//! Oracles deliberately use different algorithms and code paths than the
//! production implementations so that agreement between the two is
//! meaningful evidence of correctness.

pub mod checks;
pub mod corpora;
pub mod gen;
pub mod oracle;
