#![no_main]

use didbracket::data::{load_panel, validate, Layout, OutcomeKind};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Parsing untrusted bytes must never panic; on success the invariants
    // the loader promises must hold.
    if let Ok(ds) = load_panel(data, Layout::Wide, OutcomeKind::Continuous, None) {
        assert!(ds.n_treated() > 0 && ds.n_control() > 0);
        assert!(validate(&ds).is_empty());
    }
});
