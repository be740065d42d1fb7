use mnar_iv::cli::{format_csv, load_csv, parse_csv, save_csv, ColumnMapping};
use mnar_iv::data::{Dataset, Observation};
use proptest::prelude::*;

fn value() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(0.0),
        Just(1.0),
        -1e6..1e6f64,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
    ]
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..4, 1usize..3, 1usize..40).prop_flat_map(|(nx, nz, n)| {
        let row = (
            prop::collection::vec(value(), nx),
            prop::collection::vec(value(), nz),
            prop::option::of(value()),
        );
        prop::collection::vec(row, n).prop_map(move |rows| {
            let obs = rows
                .into_iter()
                .map(|(x, z, y)| Observation { x, z, y })
                .collect();
            let cov = (1..=nx).map(|i| format!("x{i}")).collect();
            let inst = (1..=nz).map(|i| format!("z{i}")).collect();
            Dataset::new(obs, cov, inst).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn text_round_trip(data in dataset()) {
        let text = format_csv(&data);
        let back = parse_csv(&text, &ColumnMapping::default()).unwrap();
        prop_assert_eq!(back.observations(), data.observations());
        prop_assert_eq!(back.covariate_names(), data.covariate_names());
        prop_assert_eq!(back.instrument_names(), data.instrument_names());
        prop_assert_eq!(format_csv(&back), text);
    }

    #[test]
    fn file_round_trip_is_byte_identical(data in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.csv");
        let second = dir.path().join("b.csv");
        save_csv(&data, &first).unwrap();
        let loaded = load_csv(&first, &ColumnMapping::default()).unwrap();
        save_csv(&loaded, &second).unwrap();
        prop_assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    }
}

#[test]
fn explicit_mapping_reorders_columns() {
    let text = "y,inst,r,age\n1,0,1,3\n,1,0,4\n";
    let mapping = ColumnMapping {
        covariates: Some(vec!["age".into()]),
        instruments: Some(vec!["inst".into()]),
        ..ColumnMapping::default()
    };
    let data = parse_csv(text, &mapping).unwrap();
    assert_eq!(format_csv(&data), "age,inst,r,y\n3,0,1,1\n4,1,0,\n");
}
