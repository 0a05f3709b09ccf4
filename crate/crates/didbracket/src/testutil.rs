//! Shared fixtures for unit tests.

use crate::data::{
    expand_contingency, ContingencyCell, ContingencyTable, OutcomeKind, PanelDataset, PanelUnit,
};

/// Five-unit dataset with hand-solved estimates:
/// control {(0,0),(1,1),(2,3)}, treated {(1,2),(3,5)}.
pub fn tiny_dataset() -> PanelDataset {
    let mk = |id: &str, g: u8, pre: f64, post: f64| PanelUnit {
        unit_id: id.into(),
        group: g,
        y_pre: pre,
        y_post: post,
        stratum: None,
    };
    PanelDataset {
        units: vec![
            mk("c1", 0, 0.0, 0.0),
            mk("c2", 0, 1.0, 1.0),
            mk("c3", 0, 2.0, 3.0),
            mk("t1", 1, 1.0, 2.0),
            mk("t2", 1, 3.0, 5.0),
        ],
        outcome_kind: OutcomeKind::Count,
        top_code: None,
    }
}

/// Crash counts on 1986 road sites, cross-tabulated by before/after level
/// with the highest level top-coded at 3.
pub fn crash_table() -> ContingencyTable {
    let control = [
        [789u64, 238, 57, 18],
        [235, 95, 40, 15],
        [61, 37, 11, 6],
        [26, 21, 4, 2],
    ];
    let treated = [[183u64, 39, 7, 3], [40, 22, 5, 2], [16, 4, 0, 1], [2, 6, 0, 1]];
    let mut cells = Vec::new();
    for (group, table) in [(0u8, control), (1u8, treated)] {
        for (pre, row) in table.iter().enumerate() {
            for (post, &count) in row.iter().enumerate() {
                if count > 0 {
                    cells.push(ContingencyCell {
                        group,
                        y_pre: pre as i64,
                        y_post: post as i64,
                        count,
                    });
                }
            }
        }
    }
    ContingencyTable {
        cells,
        top_code: Some(3),
    }
}

pub fn crash_table_dataset() -> PanelDataset {
    expand_contingency(&crash_table(), OutcomeKind::Count).unwrap()
}
