//! Holds the acceptance run in `tests/acceptance.rs`; there is no library code.
