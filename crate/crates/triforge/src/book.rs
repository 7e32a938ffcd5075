//! Placeholder for guide doc-tests.
