//! Holds the `acceptance` test target; see `tests/acceptance.rs`. Kept as its
//! own package so `cargo test --workspace` runs it after every other suite.
