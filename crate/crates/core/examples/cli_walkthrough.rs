//! Drives the `ltsoups` command surface in-process: generate, train two
//! subset replicas, merge them, run the soup and a baseline, evaluate.
//!
//!     cargo run --release --example cli_walkthrough

use ltsoups::cli::main_with_args;

fn run(args: &[&str]) {
    println!("$ ltsoups {}", args.join(" "));
    let code = main_with_args(std::iter::once("ltsoups").chain(args.iter().copied()));
    if code != 0 {
        eprintln!("exit code {code}");
        std::process::exit(code);
    }
}

fn main() {
    let dir = std::env::temp_dir().join("ltsoups-walkthrough");
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    let small = ["--set", "data.n_max=200", "--set", "train.epochs=3"];
    let with = |args: &[&str]| -> Vec<String> { args.iter().chain(small.iter()).map(|s| s.to_string()).collect() };
    let go = |args: Vec<String>| run(&args.iter().map(String::as_str).collect::<Vec<_>>());

    go(with(&["generate", "--out", &p("")]));
    for (rho, b) in [("2", "0"), ("4", "0")] {
        go(with(&[
            "train", "--data", &p("train.ltds"), "--init", &p("theta0.ltwt"), "--val", &p("val.ltds"),
            "--rho", rho, "--bootstrap", b, "--out", &p(&format!("rho{rho}.ltwt")),
        ]));
    }
    go(with(&[
        "merge", "--lambda", "0.7", "--theta0", &p("theta0.ltwt"), "--out", &p("merged.ltwt"),
        &p("rho4.ltwt"), &p("rho2.ltwt"),
    ]));
    go(with(&[
        "soup", "--data", &p("train.ltds"), "--init", &p("theta0.ltwt"), "--val", &p("val.ltds"),
        "--out", &p("soup.ltwt"), "--artifacts", &p("soup"),
    ]));
    go(with(&[
        "baseline", "full-ft", "--data", &p("train.ltds"), "--init", &p("theta0.ltwt"), "--val", &p("val.ltds"),
        "--out", &p("full-ft.ltwt"),
    ]));
    for model in ["merged.ltwt", "soup.ltwt", "full-ft.ltwt"] {
        go(with(&[
            "eval", "--model", &p(model), "--test", &p("test.ltds"), "--train", &p("train.ltds"),
            "--val", &p("val.ltds"), "--reference", &p("theta0.ltwt"), "--out", &p(&format!("{model}.json")),
        ]));
        println!("{}", std::fs::read_to_string(p(&format!("{model}.json"))).unwrap());
    }
}
