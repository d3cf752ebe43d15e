use std::collections::BTreeSet;

use fexkit::fexdata::{
    fex_csv_bytes, parse_fex_csv, schema_columns, AuVector, ColumnGroup, EmotionVector, FexRow, FexTable,
};
use fexkit::geometry::{FaceBox, LandmarkSet};
use proptest::collection::vec;
use proptest::prelude::*;

const SESSIONS: [&str; 4] = ["", "a", "clip 2", "x,\"y\""];
const EXTRA: [&str; 2] = ["image", "note"];

fn facebox() -> impl Strategy<Value = FaceBox> {
    (-500.0..500.0f64, -500.0..500.0f64, 0.1..400.0f64, 0.1..400.0f64, 0.0..=1.0f64)
        .prop_map(|(x, y, w, h, s)| FaceBox::new(x, y, w, h, s).unwrap())
}

fn landmarks() -> impl Strategy<Value = LandmarkSet> {
    vec(-1e6..1e6f64, 136).prop_map(|v| LandmarkSet::from_flat(&v).unwrap())
}

fn unit_array<const N: usize>() -> impl Strategy<Value = [f64; N]> {
    vec(0.0..=1.0f64, N).prop_map(|v| v.try_into().unwrap())
}

fn row(extra: usize) -> impl Strategy<Value = FexRow> {
    (
        0..SESSIONS.len(),
        0.0..1e5f64,
        proptest::option::of(facebox()),
        proptest::option::of(landmarks()),
        proptest::option::of(unit_array::<20>()),
        proptest::option::of(unit_array::<7>()),
        vec("[a-z ,\"]{0,6}", extra),
    )
        .prop_map(|(s, t, fb, lm, aus, emo, ex)| {
            let mut r = FexRow::new(0, t);
            r.session = SESSIONS[s].to_string();
            r.facebox = fb;
            r.landmarks = lm;
            r.aus = aus.map(AuVector);
            r.emotions = emo.map(EmotionVector);
            r.extra = ex;
            r
        })
}

fn table() -> impl Strategy<Value = FexTable> {
    (0..=EXTRA.len()).prop_flat_map(|n| (Just(n), vec(row(n), 0..5), vec(1u64..4, 5))).prop_map(
        |(n, mut rows, steps)| {
            // global frame counter keeps every session strictly increasing
            let mut frame = 0;
            for (r, step) in rows.iter_mut().zip(steps) {
                frame += step;
                r.frame = frame;
            }
            FexTable::new(EXTRA[..n].iter().map(|s| s.to_string()).collect(), rows).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn csv_round_trip_is_identity(t in table()) {
        let bytes = fex_csv_bytes(&t).unwrap();
        let back = parse_fex_csv(std::str::from_utf8(&bytes).unwrap()).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(fex_csv_bytes(&back).unwrap(), bytes);
    }
}

proptest! {
    #[test]
    fn select_matches_row_values(t in table()) {
        let aus = t.select(ColumnGroup::Aus);
        prop_assert_eq!(aus.shape(), (t.len(), 20));
        for (i, r) in t.rows().iter().enumerate() {
            match r.aus {
                Some(a) => prop_assert!((0..20).all(|j| aus[(i, j)] == a.0[j])),
                None => prop_assert!((0..20).all(|j| aus[(i, j)].is_nan())),
            }
        }
    }

    #[test]
    fn group_by_session_partitions_rows(labels in vec(0..SESSIONS.len(), 0..100)) {
        let rows: Vec<FexRow> = labels
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut r = FexRow::new(i as u64, i as f64);
                r.session = SESSIONS[s].to_string();
                r
            })
            .collect();
        let t = FexTable::from_rows(rows).unwrap();
        let parts = t.group_by_session();

        // oracle: distinct labels in first-occurrence order, rows in input order
        let mut order: Vec<&str> = Vec::new();
        for &s in &labels {
            if !order.contains(&SESSIONS[s]) {
                order.push(SESSIONS[s]);
            }
        }
        prop_assert_eq!(parts.iter().map(|(s, _)| s.as_str()).collect::<Vec<_>>(), order);
        let mut seen = BTreeSet::new();
        for (s, part) in &parts {
            prop_assert!(part.rows().iter().all(|r| &r.session == s));
            let frames: Vec<u64> = part.rows().iter().map(|r| r.frame).collect();
            prop_assert!(frames.windows(2).all(|w| w[0] < w[1]));
            seen.extend(frames);
        }
        prop_assert_eq!(seen.len(), labels.len());
        prop_assert_eq!(parts.iter().map(|(_, p)| p.len()).sum::<usize>(), labels.len());
    }
}

#[test]
fn column_groups_are_disjoint_and_cover_schema() {
    let mut all = BTreeSet::new();
    let mut total = 0;
    for g in ColumnGroup::ALL {
        let cols = g.columns();
        assert_eq!(cols.len(), g.width());
        total += cols.len();
        all.extend(cols);
    }
    assert_eq!(all.len(), total);
    let schema: BTreeSet<String> = schema_columns().into_iter().collect();
    let meta: BTreeSet<String> = schema.difference(&all).cloned().collect();
    assert_eq!(meta, ["frame", "session", "time_s"].iter().map(|s| s.to_string()).collect());
    assert!(all.is_subset(&schema));
}

#[test]
fn nan_cells_round_trip_as_missing_groups() {
    let mut r = FexRow::new(3, 0.5);
    r.aus = Some(AuVector([0.25; 20]));
    let t = FexTable::from_rows(vec![r, FexRow::new(4, 0.6)]).unwrap();
    let back = parse_fex_csv(std::str::from_utf8(&fex_csv_bytes(&t).unwrap()).unwrap()).unwrap();
    assert_eq!(back, t);
    assert!(back.rows()[1].is_empty());
}
