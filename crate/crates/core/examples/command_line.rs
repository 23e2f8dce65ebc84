//! Drive the command-line entry point in-process: synthesize a dataset,
//! train one epoch, evaluate and render one case.
//!
//! cargo run --release --example command_line [work_dir]

use uncseg::cli::cli_main;

fn run(args: &[&str]) {
    let mut argv = vec!["uncseg"];
    argv.extend_from_slice(args);
    println!("$ {}", argv.join(" "));
    let code = cli_main(argv);
    assert_eq!(code, 0, "exit code {code}");
}

fn main() {
    let work = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("uncseg_cli"));
    std::fs::create_dir_all(&work).expect("work dir");
    let synth = work.join("synth.json");
    std::fs::write(
        &synth,
        r#"{"model": "cm", "seed": 3, "n-cases": 6, "split": 0.34}"#,
    )
    .expect("write config");
    let train = work.join("train.json");
    std::fs::write(&train, r#"{"run-kind": "CM1", "epochs": 1, "train-batches-per-epoch": 2, "val-batches-per-epoch": 1, "seed": 3}"#).expect("write config");
    let p = |name: &str| work.join(name).display().to_string();

    run(&["synth", "--config", &p("synth.json"), "--out", &p("data")]);
    run(&[
        "train",
        "--config",
        &p("train.json"),
        "--data",
        &p("data"),
        "--out",
        &p("run"),
    ]);
    run(&[
        "eval",
        "--checkpoint",
        &p("run/checkpoints/epoch_000"),
        "--data",
        &p("data"),
        "--out",
        &p("eval"),
    ]);
    let case = std::fs::read_dir(work.join("eval"))
        .expect("eval dir")
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| p.is_dir())
        .expect("an evaluated case");
    run(&[
        "render",
        "--case",
        &case.display().to_string(),
        "--out",
        &p("render"),
        "--axes",
        "axial,coronal",
    ]);
}
