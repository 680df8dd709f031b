//! Acceptance checks for the simulator. Everything lives in `tests/acceptance.rs`;
//! run it with `cargo test -p paramtrap-validation --test acceptance`.
