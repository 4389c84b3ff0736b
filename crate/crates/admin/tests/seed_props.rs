use std::collections::HashMap;
use std::path::Path;

use brewtask_admin::seed::{apply, plan, read_codes_csv, SeedError};
use brewtask_core::model::RewardId;
use brewtask_core::Platform;
use proptest::prelude::*;

fn seed_toml(codes: &[String]) -> String {
    let mut s = String::from("[[rewards]]\nid = \"coffee\"\ntitle = \"Coffee\"\nprice_cents = 60\ncodes = [\n");
    for c in codes {
        s.push_str(&format!("  \"{c}\",\n"));
    }
    s.push_str("]\n");
    s
}

proptest! {
    #[test]
    fn duplicates_found_at_their_line(codes in prop::collection::vec("[A-D][0-3]", 0..20)) {
        let src = seed_toml(&codes);
        // oracle: first index whose code already appeared
        let mut seen = HashMap::new();
        let mut dup = None;
        for (i, c) in codes.iter().enumerate() {
            if seen.insert(c.clone(), i).is_some() {
                dup = Some(i);
                break;
            }
        }
        match (plan(&src, Path::new("s.toml")), dup) {
            (Ok(p), None) => prop_assert_eq!(p.rewards[0].1.len(), codes.len()),
            (Err(SeedError::DuplicateCode { line, code, .. }), Some(i)) => {
                // codes start on line 6 of the generated file
                prop_assert_eq!(line, 6 + i);
                prop_assert_eq!(&code, &codes[i]);
            }
            (other, want) => prop_assert!(false, "{:?} vs {:?}", other.map(|_| ()), want),
        }
    }

    #[test]
    fn applying_twice_changes_nothing(n in 0usize..30) {
        let codes: Vec<String> = (0..n).map(|i| format!("K{i}")).collect();
        let p = Platform::in_memory();
        let seeded = plan(&seed_toml(&codes), Path::new("s.toml")).unwrap();
        let first = apply(&p, &seeded).unwrap();
        let second = apply(&p, &seeded).unwrap();
        prop_assert_eq!(first.rewards[0].upsert.remaining, n);
        prop_assert_eq!(second.rewards[0].upsert.codes_added, 0);
        prop_assert_eq!(p.reward(&RewardId::new("coffee")).unwrap().remaining(), n);
    }
}

#[test]
fn csv_and_inline_pools_share_a_namespace() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("codes.csv"), "code\nX\nY\n").unwrap();
    let src = "[[rewards]]\nid = \"a\"\ntitle = \"A\"\nprice_cents = 1\ncodes = [\"Y\"]\n\n\
               [[rewards]]\nid = \"b\"\ntitle = \"B\"\nprice_cents = 1\ncodes_file = \"codes.csv\"\n";
    let path = dir.path().join("seed.toml");
    match plan(src, &path) {
        Err(SeedError::DuplicateCode { file, line, first, .. }) => {
            assert!(file.ends_with("codes.csv"));
            assert_eq!(line, 3);
            assert!(first.ends_with("seed.toml:5"), "{first}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn blank_codes_rejected() {
    assert!(matches!(
        plan("[[rewards]]\nid = \"a\"\ntitle = \"A\"\nprice_cents = 1\ncodes = [\" \"]\n", Path::new("s.toml")),
        Err(SeedError::EmptyCode { line: 5, .. })
    ));
    let codes = read_codes_csv(b"code,note\nA,first\n\"B\",second\n", "c.csv").unwrap();
    assert_eq!(codes.iter().map(|c| c.code.as_str()).collect::<Vec<_>>(), ["A", "B"]);
}
