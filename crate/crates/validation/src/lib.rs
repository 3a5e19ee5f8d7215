//! Acceptance suite for the hotleg toolkit; see `tests/acceptance.rs`.
