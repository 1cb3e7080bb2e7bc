//! Test-only crate; the acceptance run lives in `tests/acceptance.rs`.
