//! Acceptance criteria of the workspace. The checks live in `tests/`; each
//! prints one PASS/FAIL line.
