use memdep::io::{self, FormatError, Record};
use memdep_core::dataset::{self, Dataset};
use memdep_core::envgym::{CommandRecallParams, HallwayParams, TaskParams};

fn small(params: TaskParams, n: usize) -> Dataset {
    dataset::generate(&params, n, 11).unwrap()
}

fn hallway() -> Dataset {
    small(TaskParams::Hallway(HallwayParams { length: 6, object_pool: 4 }), 12)
}

#[test]
fn round_trip_is_byte_stable() {
    for ds in [
        hallway(),
        small(TaskParams::CommandRecall(CommandRecallParams { commands: 5, show: 2, delay: 8, hold: 2 }), 9),
    ] {
        let text = io::to_string(&ds).unwrap();
        let back = io::from_str(&text).unwrap();
        assert_eq!(back, ds);
        assert_eq!(io::to_string(&back).unwrap(), text);
    }
}

#[test]
fn save_load_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let ds = hallway();
    io::save(&ds, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    io::save(&io::load(&path).unwrap(), &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1, "temporary file left behind");
}

fn lines(ds: &Dataset) -> Vec<String> {
    io::to_string(ds).unwrap().lines().map(str::to_string).collect()
}

fn edit_record(line: &str, f: impl FnOnce(&mut serde_json::Value)) -> String {
    let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
    f(&mut v);
    v.to_string()
}

#[test]
fn errors_name_line_and_field() {
    let ds = hallway();
    let mut l = lines(&ds);
    l[3] = "{not json".into();
    match io::from_str(&l.join("\n")) {
        Err(FormatError::Syntax { line: 4, .. }) => {}
        other => panic!("{other:?}"),
    }

    let mut l = lines(&ds);
    l[2] = edit_record(&l[2], |v| v["obs"] = "AAAA".into());
    match io::from_str(&l.join("\n")) {
        Err(FormatError::Field { line: 3, field: "obs", .. }) => {}
        other => panic!("{other:?}"),
    }

    let mut l = lines(&ds);
    l[5] = edit_record(&l[5], |v| v["pairs"] = serde_json::json!([[4, 2]]));
    match io::from_str(&l.join("\n")) {
        Err(FormatError::Invalid { line: 6, .. }) => {}
        other => panic!("{other:?}"),
    }

    let mut l = lines(&ds);
    l[1] = edit_record(&l[1], |v| v["extra"] = 1.into());
    assert!(matches!(io::from_str(&l.join("\n")), Err(FormatError::Syntax { line: 2, .. })));

    let mut l = lines(&ds);
    l[1] = edit_record(&l[1], |v| v["task"] = "counting".into());
    assert!(matches!(io::from_str(&l.join("\n")), Err(FormatError::Field { field: "task", .. })));
}

#[test]
fn manifest_checks() {
    let ds = hallway();
    let mut l = lines(&ds);
    l.pop();
    assert!(matches!(io::from_str(&l.join("\n")), Err(FormatError::Manifest(_))));

    let mut l = lines(&ds);
    l[0] = edit_record(&l[0], |v| v["version"] = 99.into());
    assert!(matches!(io::from_str(&l.join("\n")), Err(FormatError::Manifest(_))));

    let mut l = lines(&ds);
    l[0] = edit_record(&l[0], |v| v["format"] = "other".into());
    assert!(matches!(io::from_str(&l.join("\n")), Err(FormatError::Manifest(_))));

    assert!(matches!(io::from_str(""), Err(FormatError::Manifest(_))));

    // duplicate ids are rejected by dataset validation
    let mut l = lines(&ds);
    l[2] = l[1].clone();
    assert!(io::from_str(&l.join("\n")).is_err());
}

#[test]
fn record_round_trip() {
    let ds = hallway();
    for t in &ds.trajectories {
        let r = Record::from_trajectory(t);
        assert_eq!(&r.clone().into_trajectory(1).unwrap(), t);
    }
}
