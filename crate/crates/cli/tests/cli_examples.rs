//! End-to-end checks of the command-line interface: report structure,
//! standardization round trips, error paths with coordinates, and the
//! frozen penalty value.

mod common;

use common::{exit_code, read_csv, run, run_ok, stderr_text, stdout_json, write_csv, Scratch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn randn_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// X (m x p) standard normal; B rank 2 supported on `active`; Y = XB + noise.
fn synthetic_pair(
    m: usize,
    p: usize,
    n: usize,
    active: &[usize],
    noise: f64,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = randn_rows(m, p, &mut rng);
    let u1: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let u2: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut b = vec![vec![0.0; n]; p];
    for (idx, &row) in active.iter().enumerate() {
        let (a, c) = match idx % 3 {
            0 => (1.2, 0.3),
            1 => (-0.8, 1.0),
            _ => (0.5, -1.1),
        };
        for j in 0..n {
            b[row][j] = a * u1[j] + c * u2[j];
        }
    }
    let y = (0..m)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mean: f64 = (0..p).map(|k| x[i][k] * b[k][j]).sum();
                    let e: f64 = rng.sample(StandardNormal);
                    mean + noise * e
                })
                .collect()
        })
        .collect();
    (x, y)
}

#[test]
fn perfect_fit_recovers_unit_slope() {
    let scratch = Scratch::new("slope");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<Vec<f64>> = randn_rows(12, 1, &mut rng);
    write_csv(&scratch.path("x.csv"), &x);
    write_csv(&scratch.path("y.csv"), &x);

    // Raw scale: the coefficient itself is the slope.
    let out = run_ok(&[
        "fit",
        "--x", scratch.path("x.csv").to_str().unwrap(),
        "--y", scratch.path("y.csv").to_str().unwrap(),
        "--method", "rcgl",
        "--k", "1",
        "--lambda", "0",
        "--no-standardize",
    ]);
    let report = stdout_json(&out);
    let slope = report["b_hat"][0][0].as_f64().unwrap();
    assert!((slope - 1.0).abs() <= 1e-6, "raw slope {slope}");
    assert!(report["rss"].as_f64().unwrap() <= 1e-12);

    // Standardized: dividing by the emitted scale recovers the raw slope.
    let out = run_ok(&[
        "fit",
        "--x", scratch.path("x.csv").to_str().unwrap(),
        "--y", scratch.path("y.csv").to_str().unwrap(),
        "--method", "rcgl",
        "--k", "1",
        "--lambda", "0",
    ]);
    let report = stdout_json(&out);
    let slope = report["b_hat"][0][0].as_f64().unwrap()
        / report["x_scale"][0].as_f64().unwrap();
    assert!((slope - 1.0).abs() <= 1e-6, "de-standardized slope {slope}");
}

#[test]
fn rank_report_contains_score_construction_table() {
    let scratch = Scratch::new("scores");
    let (x, y) = synthetic_pair(29, 9, 13, &[0, 3, 5], 0.1, 7);
    write_csv(&scratch.path("x.csv"), &x);
    write_csv(&scratch.path("y.csv"), &y);

    let out = run_ok(&[
        "fit",
        "--x", scratch.path("x.csv").to_str().unwrap(),
        "--y", scratch.path("y.csv").to_str().unwrap(),
        "--method", "rsc",
    ]);
    let report = stdout_json(&out);
    assert_eq!(report["m"], 29);
    assert_eq!(report["p"], 9);
    assert_eq!(report["n"], 13);

    let selection = &report["rank_selection"];
    let r_hat = selection["r_hat"].as_u64().unwrap() as usize;
    assert_eq!(r_hat, 2, "planted rank");
    assert_eq!(report["rank"].as_u64().unwrap() as usize, r_hat);
    let singular: Vec<f64> = selection["singular_values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    // All singular values of the projected responses: min(m, n) of them,
    // with everything beyond rank(X) = 9 at roundoff level.
    assert_eq!(singular.len(), 13);
    assert!(singular[9..].iter().all(|&v| v <= 1e-10 * singular[0]));

    // One table row per retained score; eigenvalues are the squared
    // singular values of the projected responses, in the same order.
    let scores = report["scores"].as_array().unwrap();
    assert_eq!(scores.len(), r_hat);
    for (i, row) in scores.iter().enumerate() {
        assert_eq!(row["score"].as_u64().unwrap() as usize, i + 1);
        let eig = row["eigenvalue"].as_f64().unwrap();
        let expect = singular[i] * singular[i];
        assert!(
            (eig - expect).abs() <= 1e-10 * (1.0 + expect),
            "eigenvalue {i}: {eig} vs {expect}"
        );
        assert_eq!(row["weights"].as_array().unwrap().len(), 9);
    }

    // The extracted scores X * w_i are mutually orthogonal.
    let xm: Vec<f64> = report["x_mean"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let xs: Vec<f64> = report["x_scale"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let score_cols: Vec<Vec<f64>> = scores
        .iter()
        .map(|row| {
            let w: Vec<f64> = row["weights"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
            x.iter()
                .map(|xi| {
                    (0..9).map(|j| (xi[j] - xm[j]) / xs[j] * w[j]).sum::<f64>()
                })
                .collect()
        })
        .collect();
    for i in 0..score_cols.len() {
        for j in 0..i {
            let dot: f64 = score_cols[i].iter().zip(&score_cols[j]).map(|(a, b)| a * b).sum();
            let ni: f64 = score_cols[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            let nj: f64 = score_cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(dot.abs() <= 1e-8 * ni * nj, "scores {i},{j} not orthogonal: {dot}");
        }
    }
}

#[test]
fn report_round_trips_training_rss() {
    let scratch = Scratch::new("roundtrip");
    let (x, y) = synthetic_pair(29, 9, 13, &[0, 3, 5], 0.1, 7);
    write_csv(&scratch.path("x.csv"), &x);
    write_csv(&scratch.path("y.csv"), &y);
    let out_path = scratch.path("fit.json");

    run_ok(&[
        "fit",
        "--x", scratch.path("x.csv").to_str().unwrap(),
        "--y", scratch.path("y.csv").to_str().unwrap(),
        "--method", "method3",
        "--out", out_path.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();

    // Rebuild the fit from the raw CSVs plus the emitted standardization
    // parameters; the reported rss must be reproduced.
    let x_raw = read_csv(&scratch.path("x.csv"));
    let y_raw = read_csv(&scratch.path("y.csv"));
    let xm: Vec<f64> = report["x_mean"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let xs: Vec<f64> = report["x_scale"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let ym: Vec<f64> = report["y_mean"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let b: Vec<Vec<f64>> = report["b_hat"]
        .as_array()
        .unwrap()
        .iter()
        .map(|row| row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect())
        .collect();
    let (p, n) = (b.len(), b[0].len());
    let mut rss = 0.0;
    for i in 0..x_raw.len() {
        let xi: Vec<f64> = (0..p).map(|j| (x_raw[i][j] - xm[j]) / xs[j]).collect();
        for c in 0..n {
            let pred: f64 = (0..p).map(|j| xi[j] * b[j][c]).sum();
            let resid = (y_raw[i][c] - ym[c]) - pred;
            rss += resid * resid;
        }
    }
    let reported = report["rss"].as_f64().unwrap();
    assert!(
        (rss - reported).abs() <= 1e-8 * (1.0 + reported),
        "recomputed {rss} vs reported {reported}"
    );
}

#[test]
fn malformed_csv_reports_line_number() {
    let scratch = Scratch::new("badcsv");
    std::fs::write(scratch.path("x.csv"), "1.0,2.0\n3.0,oops\n5.0,6.0\n").unwrap();
    std::fs::write(scratch.path("y.csv"), "1.0\n2.0\n3.0\n").unwrap();
    let out = run(&[
        "fit",
        "--x", scratch.path("x.csv").to_str().unwrap(),
        "--y", scratch.path("y.csv").to_str().unwrap(),
        "--method", "rsc",
    ]);
    assert_eq!(exit_code(&out), 2);
    let err = stderr_text(&out);
    assert!(err.contains("line 2"), "stderr: {err}");
    assert!(err.contains("column 2"), "stderr: {err}");
}

#[test]
fn constant_design_column_is_rejected_with_coordinate() {
    let scratch = Scratch::new("constcol");
    std::fs::write(scratch.path("x.csv"), "1.0,5.0\n1.0,6.0\n1.0,7.5\n1.0,3.0\n").unwrap();
    std::fs::write(scratch.path("y.csv"), "1.0\n2.0\n3.0\n4.0\n").unwrap();
    let out = run(&[
        "fit",
        "--x", scratch.path("x.csv").to_str().unwrap(),
        "--y", scratch.path("y.csv").to_str().unwrap(),
        "--method", "rsc",
    ]);
    assert_eq!(exit_code(&out), 2);
    let err = stderr_text(&out);
    assert!(err.contains("column 1"), "stderr: {err}");
    assert!(err.contains("--no-standardize"), "stderr: {err}");
}

#[test]
fn mismatched_row_counts_are_rejected() {
    let scratch = Scratch::new("rowmismatch");
    std::fs::write(scratch.path("x.csv"), "1.0\n2.0\n3.0\n").unwrap();
    std::fs::write(scratch.path("y.csv"), "1.0\n2.0\n").unwrap();
    let out = run(&[
        "fit",
        "--x", scratch.path("x.csv").to_str().unwrap(),
        "--y", scratch.path("y.csv").to_str().unwrap(),
        "--method", "rsc",
    ]);
    assert_eq!(exit_code(&out), 2);
    let err = stderr_text(&out);
    assert!(err.contains("3") && err.contains("2"), "stderr: {err}");
}

#[test]
fn penalty_score_matches_frozen_value() {
    let out = run_ok(&[
        "penalty-score",
        "--r", "1",
        "--j", "1",
        "--n", "2",
        "--p", "10",
    ]);
    let report = stdout_json(&out);
    assert_eq!(report["score"].as_f64().unwrap(), 26.987196820661973);
    assert_eq!(report["c"].as_f64().unwrap(), 3.0);
    assert_eq!(report["sigma2"].as_f64().unwrap(), 1.0);
}

#[test]
fn simulate_single_method_emits_single_row() {
    let out = run_ok(&[
        "simulate",
        "--preset", "p-gt-m",
        "--reps", "1",
        "--seed", "1",
        "--methods", "method2",
        "--format", "csv",
    ]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "header plus one method row: {text}");
    assert!(lines[0].starts_with("method,mse,"));
    assert!(lines[1].starts_with("Method2,"), "row: {}", lines[1]);
}

#[test]
fn stray_tuning_flags_are_rejected() {
    let scratch = Scratch::new("strayflags");
    std::fs::write(scratch.path("x.csv"), "1.0\n2.0\n3.0\n").unwrap();
    std::fs::write(scratch.path("y.csv"), "1.0\n2.0\n3.0\n").unwrap();
    let out = run(&[
        "fit",
        "--x", scratch.path("x.csv").to_str().unwrap(),
        "--y", scratch.path("y.csv").to_str().unwrap(),
        "--method", "method1",
        "--lambda", "2.0",
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("rcgl"), "stderr: {}", stderr_text(&out));
}
