//! Holds the desk-scale acceptance run in `tests/acceptance.rs`.
