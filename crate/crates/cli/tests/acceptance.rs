//! Acceptance check for the command-line front end: fixed-seed simulation
//! reports are byte-identical across repeated runs and across worker-thread
//! counts. Prints one PASS/FAIL line with the measured sizes.

// Shared helper module; this target uses only the scratch dir and runner.
#[allow(dead_code)]
mod common;

use common::{run_ok, Scratch};

fn report_line(number: u32, name: &str, pass: bool, details: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {number:02} [{status}] {name}: {details}");
}

#[test]
fn criterion_10_simulation_reports_are_deterministic() {
    let scratch = Scratch::new("determinism");
    let mut outputs: Vec<(String, Vec<u8>)> = Vec::new();
    for (label, threads) in [
        ("run-a", None),
        ("run-b", None),
        ("threads-1", Some("1")),
        ("threads-4", Some("4")),
    ] {
        let out_path = scratch.path(&format!("{label}.json"));
        let mut args: Vec<&str> = vec![
            "simulate",
            "--preset", "m-gt-p",
            "--b", "0.4",
            "--reps", "2",
            "--seed", "42",
            "--out",
        ];
        let path_str = out_path.to_str().unwrap().to_owned();
        args.push(&path_str);
        if let Some(t) = threads {
            args.push("--threads");
            args.push(t);
        }
        run_ok(&args);
        outputs.push((label.to_string(), std::fs::read(&out_path).unwrap()));
    }

    let reference = &outputs[0].1;
    let mismatches: Vec<&str> = outputs
        .iter()
        .filter(|(_, bytes)| bytes != reference)
        .map(|(label, _)| label.as_str())
        .collect();
    let pass = mismatches.is_empty() && !reference.is_empty();
    report_line(
        10,
        "byte-identical simulation reports",
        pass,
        &format!(
            "4 runs (seed 42, reps 2, threads default/default/1/4), {} bytes each, {} mismatches",
            reference.len(),
            mismatches.len()
        ),
    );
    assert!(pass, "differing runs: {mismatches:?}");
}
