#![no_main]

use didbracket::data::{load_panel, validate, Layout, OutcomeKind};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Alternate the top-code setting off the first byte so both code paths
    // see coverage.
    let top_code = data.first().map(|b| (b % 7) as i64);
    if let Ok(ds) = load_panel(data, Layout::Contingency, OutcomeKind::Count, top_code) {
        assert!(ds.n_treated() > 0 && ds.n_control() > 0);
        assert!(validate(&ds).is_empty());
    }
});
