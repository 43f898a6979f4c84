use std::path::Path;
use std::process::{Command, Output};

fn memdep(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memdep")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// JSON after the `# ` prefixes of the effective-config header.
fn header(o: &Output) -> serde_json::Value {
    let body: String = stdout(o)
        .lines()
        .skip_while(|l| *l != "# effective config")
        .skip(1)
        .take_while(|l| l.starts_with("# "))
        .map(|l| &l[2..])
        .collect::<Vec<_>>()
        .join("\n");
    serde_json::from_str(&body).unwrap()
}

#[test]
fn gen_train_eval_heatmap_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = memdep(&["gen", "--task", "hallway", "--n", "12", "--seed", "4", "--out", "d.jsonl"], d);
    assert!(o.status.success(), "{o:?}");
    let h = header(&o);
    assert_eq!(h["params"]["length"], 6);
    assert_eq!(h["n"], 12);
    let ds = memdep::io::load(&d.join("d.jsonl")).unwrap();
    assert_eq!(ds.len(), 12);

    let o = memdep(
        &["train", "--data", "d.jsonl", "--epochs", "2", "--out", "m.ckpt", "--test-fraction", "0.25", "--set", "train.batch_size=4"],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let h = header(&o);
    assert_eq!(h["settings"]["train"]["epochs"], 2);
    assert_eq!(h["settings"]["train"]["batch_size"], 4);
    assert_eq!(h["settings"]["train"]["lambda"], 10.0);
    let curve = std::fs::read_to_string(d.join("m.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "epoch,il_loss,mem_loss,total_loss,test_action_accuracy,wall_seconds");
    assert_eq!(lines.len(), 3);
    for l in &lines[1..] {
        let cols: Vec<&str> = l.split(',').collect();
        assert_eq!(cols.len(), 6);
        let acc: f64 = cols[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    let o = memdep(&["eval", "--ckpt", "m.ckpt", "--trials", "5", "--seeds", "0,1", "--csv", "r.csv"], d);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("task,label,seeds,trials,mean,median,half_width_90,rates"));
    let report = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert!(report.lines().nth(1).unwrap().starts_with("hallway,m,0;1,5,"));

    let o = memdep(&["eval", "--ckpt", "m.ckpt", "--task", "counting", "--trials", "1"], d);
    assert_eq!(o.status.code(), Some(1), "task mismatch is a validation error");

    let o = memdep(&["heatmap", "--ckpt", "m.ckpt", "--data", "d.jsonl", "--id", "2", "--out", "hm"], d);
    assert!(o.status.success(), "{o:?}");
    assert!(d.join("hm/L0H0.pgm").exists() && d.join("hm/L0H0_sigmoid.csv").exists());
}

#[test]
fn vanilla_training_is_lambda_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(memdep(&["gen", "--task", "command-recall", "--n", "4", "--out", "d.jsonl"], d).status.success());
    let o = memdep(&["train", "--data", "d.jsonl", "--epochs", "1", "--lambda", "0", "--out", "v.ckpt"], d);
    assert!(o.status.success(), "{o:?}");
    let curve = std::fs::read_to_string(d.join("v.csv")).unwrap();
    let row: Vec<&str> = curve.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], row[3], "total equals imitation loss");
    assert_eq!(row[4], "", "no held-out set");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| memdep(args, d).status.code();
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["frobnicate"]), Some(1));
    assert_eq!(code(&["gen", "--task", "hallway", "--out", "x", "--param", "length=2"]), Some(1));
    assert_eq!(code(&["gen", "--task", "hallway", "--out", "x", "--param", "nope=2"]), Some(1));
    assert_eq!(code(&["eval", "--ckpt", "missing.ckpt"]), Some(2));
    assert_eq!(code(&["gen", "--task", "hallway", "--n", "2", "--out", "no/such/dir/d.jsonl"]), Some(2));
    std::fs::write(d.join("bad.jsonl"), "{}\n").unwrap();
    assert_eq!(code(&["train", "--data", "bad.jsonl", "--out", "m.ckpt"]), Some(1));
    assert_eq!(code(&["ablate-placement", "--task", "hallway", "--method", "vanilla", "--set", "train.lambda=1"]), Some(1));
    assert_eq!(code(&["ablate-annotations", "--task", "hallway", "--fractions", "1.5"]), Some(1));
}

#[test]
fn ablate_placement_emits_seven_conditions_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = memdep(
        &[
            "ablate-placement", "--task", "hallway", "--seeds", "0,1", "--out", "rep",
            "--set", "demos=6", "--set", "train.epochs=1", "--set", "train.batch_size=3", "--set", "eval_trials=2",
            "--set", "model.d_model=8", "--set", "model.ff_width=8",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let h = header(&o);
    assert_eq!(h["spec"]["seeds"], serde_json::json!([0, 1]));
    assert_eq!(h["spec"]["demos"], 6);
    let csv = std::fs::read_to_string(d.join("rep/report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("task,condition,seed,success_rate"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 7);
    assert!(rows[0].starts_with("hallway,none,0,"));
    let text = std::fs::read_to_string(d.join("rep/report.txt")).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(text.contains("first-single") && text.contains("last-all"));
}
