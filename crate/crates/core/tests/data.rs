use std::io::Cursor;

use fdml::data::{load_split, make_partition, parse_svmlight, Dataset, PartitionSpec};
use fdml::model::SparseVector;
use fdml::Error;
use proptest::prelude::*;

fn row(dim: u32) -> impl Strategy<Value = SparseVector> {
    proptest::collection::btree_map(0..dim, -5.0..5.0f64, 0..dim as usize)
        .prop_map(|m| SparseVector::from_pairs(m).unwrap())
}

/// A random assignment of `0..d` to `m` non-empty parties.
fn scattered(d: usize, m: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    let cuts = proptest::collection::btree_set(1..d, m - 1);
    (Just((0..d).collect::<Vec<_>>()).prop_shuffle(), cuts).prop_map(move |(order, cuts)| {
        let mut bounds: Vec<usize> = cuts.into_iter().collect();
        bounds.push(d);
        let mut start = 0;
        bounds
            .into_iter()
            .map(|end| {
                let mut slice = order[start..end].to_vec();
                start = end;
                slice.sort_unstable();
                slice
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn projection_round_trips_and_conserves_nonzeros(
        parties in scattered(12, 3),
        rows in proptest::collection::vec(row(12), 1..20),
    ) {
        let partition = make_partition(12, &PartitionSpec::Explicit { parties: parties.clone(), allow_overlap: false }).unwrap();
        for r in &rows {
            let parts: Vec<SparseVector> = (0..3).map(|j| partition.project(r, j)).collect();
            prop_assert_eq!(parts.iter().map(SparseVector::nnz).sum::<usize>(), r.nnz());
            for (j, p) in parts.iter().enumerate() {
                prop_assert!(p.iter().all(|(i, _)| i < parties[j].len()));
                for (local, v) in p.iter() {
                    let global = parties[j][local];
                    prop_assert_eq!(r.iter().find(|&(g, _)| g == global).map(|(_, x)| x), Some(v));
                }
            }
            prop_assert_eq!(&partition.reassemble(&parts).unwrap(), r);
        }
    }

    #[test]
    fn svmlight_text_round_trips(rows in proptest::collection::vec((row(30), 0u8..2), 1..30)) {
        let (rows, labels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let data = Dataset::new(rows, labels, 30).unwrap();
        let mut text = Vec::new();
        data.write_svmlight(&mut text).unwrap();
        let a = parse_svmlight(Cursor::new(&text)).unwrap();
        let b = parse_svmlight(Cursor::new(&text)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a.rows, &data.rows);
        prop_assert_eq!(&a.labels, &data.labels);
        prop_assert!(a.dim <= 30);
    }
}

#[test]
fn malformed_lines_report_their_line_number() {
    let cases = [
        ("+1 1:1\n+1 3:1 2:1\n", 2),
        ("+1 0:1\n", 1),
        ("\n\n2 1:1\n", 3),
        ("-1 1:x\n", 1),
        ("-1 1:1 nan\n", 1),
        ("+1 1:1\n-1 4:inf\n", 2),
    ];
    for (text, line) in cases {
        match parse_svmlight(Cursor::new(text)) {
            Err(Error::Parse { line: got, .. }) => assert_eq!(got, line, "{text:?}"),
            other => panic!("{text:?} parsed as {other:?}"),
        }
    }
}

#[test]
fn overlap_and_gaps_need_explicit_permission() {
    let overlapping = vec![vec![0, 1, 2], vec![2, 3]];
    assert!(make_partition(
        4,
        &PartitionSpec::Explicit {
            parties: overlapping.clone(),
            allow_overlap: false
        }
    )
    .is_err());
    let p = make_partition(
        4,
        &PartitionSpec::Explicit {
            parties: overlapping,
            allow_overlap: true,
        },
    )
    .unwrap();
    assert!(!p.is_disjoint());
    let x = SparseVector::from_pairs([(2, 7.0)]).unwrap();
    assert_eq!(p.project(&x, 0).iter().collect::<Vec<_>>(), [(2, 7.0)]);
    assert_eq!(p.project(&x, 1).iter().collect::<Vec<_>>(), [(0, 7.0)]);
    assert!(p.reassemble(&[p.project(&x, 0), p.project(&x, 1)]).is_err());

    assert!(make_partition(4, &PartitionSpec::Explicit { parties: vec![vec![0, 1]], allow_overlap: false }).is_err());
    assert!(make_partition(4, &PartitionSpec::Sizes(vec![3, 3])).is_err());
    assert!(PartitionSpec::from_json(r#"{"sizes": [2], "parties": [[0]]}"#).is_err());
    assert_eq!(
        PartitionSpec::from_json(r#"{"sizes": [67, 57]}"#).unwrap(),
        PartitionSpec::Sizes(vec![67, 57])
    );
}

#[test]
fn split_files_share_one_feature_space() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    let test = dir.path().join("test");
    std::fs::write(&train, "+1 1:1 3:1\n-1 2:1\n").unwrap();
    std::fs::write(&test, "-1 5:1\n").unwrap();
    let split = load_split(&train, &test, 0).unwrap();
    assert_eq!(split.dim(), 5);
    assert_eq!(split.test.dim, 5);
    assert_eq!(split.train.labels, [1, 0]);
    let wide = load_split(&train, &test, 124).unwrap();
    assert_eq!(wide.dim(), 124);
}
