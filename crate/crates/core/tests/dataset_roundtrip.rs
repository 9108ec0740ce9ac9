//! Canonical files round-trip: a dataset written with `write_canonical` and
//! read back with the same specs reproduces every record.

use std::collections::{BTreeMap, BTreeSet};

use disparity_core::dataset::{
    read_canonical, write_canonical, FactorSpec, FactorValue, ScoredDataset, ScoredRecord,
};
use proptest::prelude::*;

fn specs() -> Vec<FactorSpec> {
    vec![
        FactorSpec::categorical("view", &["AP", "PA", "LL"]),
        FactorSpec::group("findings", &["atl", "card"]),
    ]
}

fn build(rows: &[(u32, u8, usize, bool, bool)]) -> Option<ScoredDataset> {
    let records: Vec<ScoredRecord> = rows
        .iter()
        .map(|&(score_q, label, view, atl, card)| {
            let mut factors = BTreeMap::new();
            factors.insert(
                "view".to_string(),
                FactorValue::Category(["AP", "PA", "LL"][view % 3].to_string()),
            );
            let mut flags = BTreeSet::new();
            if atl {
                flags.insert("atl".to_string());
            }
            if card {
                flags.insert("card".to_string());
            }
            factors.insert("findings".to_string(), FactorValue::Flags(flags));
            ScoredRecord {
                // Quantized scores exercise ties and stay exactly
                // representable through the text round trip.
                score: f64::from(score_q % 101) / 100.0,
                label: label % 2,
                factors,
            }
        })
        .collect();
    ScoredDataset::new("site", records, specs()).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn canonical_round_trip_preserves_records(
        rows in prop::collection::vec(
            (any::<u32>(), any::<u8>(), any::<usize>(), any::<bool>(), any::<bool>()),
            4..60,
        )
    ) {
        let Some(dataset) = build(&rows) else {
            // Single-class draws are not valid datasets to begin with.
            return Ok(());
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("site.csv");
        write_canonical(&dataset, &path).unwrap();
        let back = read_canonical(&path, &specs(), "site").unwrap();
        prop_assert_eq!(back.len(), dataset.len());
        for (a, b) in back.records().iter().zip(dataset.records()) {
            prop_assert_eq!(a, b);
        }
    }
}
