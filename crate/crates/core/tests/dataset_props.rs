use proptest::prelude::*;
use tabgen_core::dataset::{drop_missing, is_missing_marker, load_csv_str, split, Cell, ColumnSpec, Schema, Table};

fn schema() -> Schema {
    Schema::new(vec![
        ColumnSpec::numeric("n"),
        ColumnSpec::categorical("c"),
        ColumnSpec::numeric("m"),
    ])
    .unwrap()
}

fn cell_num() -> impl Strategy<Value = Cell> {
    prop_oneof![
        8 => (-1e6f64..1e6).prop_map(Cell::Num),
        1 => Just(Cell::Num(0.0)),
        1 => Just(Cell::Missing),
    ]
}

fn cell_cat() -> impl Strategy<Value = Cell> {
    prop_oneof![
        8 => "[a-z][a-z0-9 _]{0,6}".prop_map(|s| Cell::cat(s.trim_end())).prop_filter("not a missing marker", |c| c.as_cat().is_some_and(|s| !is_missing_marker(s))),
        1 => Just(Cell::cat("has,comma")),
        1 => Just(Cell::Missing),
    ]
}

fn table() -> impl Strategy<Value = Table> {
    prop::collection::vec((cell_num(), cell_cat(), cell_num()).prop_map(|(a, b, c)| vec![a, b, c]), 2..40)
        .prop_map(|rows| Table::new(schema(), rows).unwrap())
}

fn keys(t: &Table) -> Vec<String> {
    let mut k: Vec<String> = t.rows().iter().map(|r| format!("{r:?}")).collect();
    k.sort();
    k
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(t in table()) {
        let text = t.to_csv_string().unwrap();
        let back = load_csv_str(&text, Some(t.schema())).unwrap();
        prop_assert_eq!(back.rows(), t.rows());
    }

    #[test]
    fn split_is_a_partition(t in table(), frac in 0.05f64..0.95, seed in any::<u64>()) {
        let (a, b) = split(&t, frac, seed).unwrap();
        prop_assert_eq!(a.n_rows() + b.n_rows(), t.n_rows());
        prop_assert_eq!(a.n_rows(), (frac * t.n_rows() as f64).round() as usize);
        let mut both = keys(&a);
        both.extend(keys(&b));
        both.sort();
        prop_assert_eq!(both, keys(&t));
        let (a2, _) = split(&t, frac, seed).unwrap();
        prop_assert_eq!(a2.rows(), a.rows());
    }

    #[test]
    fn drop_missing_keeps_exactly_complete_rows(t in table()) {
        let kept = drop_missing(&t);
        let expected: Vec<Vec<Cell>> = t.rows().iter().filter(|r| !r.iter().any(Cell::is_missing)).cloned().collect();
        prop_assert_eq!(kept.rows(), &expected[..]);
    }
}

#[test]
fn malformed_numeric_cell_names_row_and_column() {
    let err = load_csv_str("n,c,m\n1,a,2\n3,b,x7\n", Some(&schema())).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("row 2") && msg.contains("\"m\""), "{msg}");
}

#[test]
fn inferred_kinds_and_missing_markers() {
    let t = load_csv_str("a,b\n1,x\n,y\n2.5,NA\n", None).unwrap();
    assert!(t.schema().columns[0].is_numeric());
    assert!(!t.schema().columns[1].is_numeric());
    assert_eq!(drop_missing(&t).n_rows(), 1);
}
