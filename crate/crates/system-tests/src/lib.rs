//! Holds the workspace-level acceptance suite in `tests/acceptance.rs`. It
//! lives in its own package so the per-crate suites run before it.
