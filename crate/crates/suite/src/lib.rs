//! Holds the workspace acceptance run in `tests/acceptance.rs`; the library
//! itself is empty.
//!
//! The run trains real models and takes tens of minutes on one core.
//! `MEMDEP_ACCEPTANCE=1,2,3` restricts it to the listed criteria.
