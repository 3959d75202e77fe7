use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kronprecon::factor::FactorError;
use kronprecon_cli::{read_summary, CliError};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kronprecon"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            headers
                .iter()
                .zip(rec.unwrap().iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn generate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    let args = [
        "generate",
        "--out",
        out.to_str().unwrap(),
        "--blur",
        "speckle",
        "--n",
        "24",
        "--seed",
        "5",
    ];
    assert_eq!(code(&run(&args)), 0);
    let first = snapshot(&out);
    assert!(first.contains_key("b.pgm") && first.contains_key("summary.json"));
    assert!(first.keys().any(|k| k.starts_with("bundle")));
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(first, snapshot(&out));
}

#[test]
fn zero_noise_gives_clean_data() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    assert_eq!(
        code(&run(&[
            "generate",
            "--out",
            out.to_str().unwrap(),
            "--noise",
            "0",
            "--n",
            "16"
        ])),
        0
    );
    assert_eq!(
        fs::read(out.join("b.pgm")).unwrap(),
        fs::read(out.join("btrue.pgm")).unwrap()
    );
}

#[test]
fn solve_reuses_a_generated_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g");
    let s = tmp.path().join("s");
    assert_eq!(
        code(&run(&[
            "generate",
            "--out",
            g.to_str().unwrap(),
            "--n",
            "16",
            "--blur",
            "defocus",
            "--radius",
            "2"
        ])),
        0
    );
    let bundle = g.join("bundle");
    let out = run(&[
        "solve",
        "--out",
        s.to_str().unwrap(),
        "--bundle",
        bundle.to_str().unwrap(),
        "--maxit",
        "10",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = read_summary(&s.join("summary.json"), "kronprecon.summary/1.0").unwrap();
    assert_eq!(summary["problem"]["n"], 16);
    assert!(s.join("reconstruction.pgm").exists());
    let rows = read_csv(&s.join("convergence.csv"));
    assert!(rows.len() >= 2 && rows.len() <= 11);
    assert_eq!(rows[0]["iteration"], "0");
}

#[test]
fn config_file_and_flags_merge() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    let out = tmp.path().join("o");
    fs::write(
        &cfg,
        "# desk run\nblur = defocus\nn = 16\nmaxit = 5\nsolver = cgls\n",
    )
    .unwrap();
    let r = run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--maxit",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let s = json(&out.join("summary.json"));
    assert_eq!(s["config"]["maxit"], 7);
    assert_eq!(s["config"]["blur"]["kind"], "defocus");
    assert_eq!(s["config"]["solver"], "cgls");
    assert_eq!(s["schema"], "kronprecon.summary/1.0");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    let bad_blur = run(&["solve", "--out", o, "--blur", "swirl"]);
    assert_eq!(code(&bad_blur), 2);
    assert!(stderr(&bad_blur).contains("blur"));
    assert_eq!(code(&run(&["solve", "--out", o, "--n", "-3"])), 2);
    assert_eq!(code(&run(&["solve", "--out", o, "--param", "fixed"])), 2);
    assert_eq!(
        code(&run(&[
            "sweep", "--out", o, "--vary", "omega", "--values", ""
        ])),
        2
    );
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(
        code(&run(&[
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            o
        ])),
        2
    );
    assert_eq!(
        code(&run(&[
            "solve",
            "--config",
            tmp.path().join("missing.cfg").to_str().unwrap()
        ])),
        3
    );
    let missing = tmp.path().join("nothing");
    assert_eq!(
        code(&run(&[
            "solve",
            "--out",
            o,
            "--bundle",
            missing.to_str().unwrap()
        ])),
        3
    );
    assert_eq!(CliError::from(FactorError::Singular).exit_code(), 4);
}

#[test]
fn failed_parameter_choice_still_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let r = run(&[
        "solve",
        "--out",
        out.to_str().unwrap(),
        "--n",
        "16",
        "--param",
        "discrepancy",
        "--eta",
        "1e6",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let s = json(&out.join("summary.json"));
    assert!(s["param_error"].as_str().unwrap().contains("too large"));
    assert!(s["run"].is_null());
}

fn sweep_lambdas(tmp: &Path, extra: &[&str]) -> Vec<f64> {
    let out = tmp.join(extra.join("_"));
    let mut args = vec![
        "sweep",
        "--out",
        out.to_str().unwrap(),
        "--n",
        "24",
        "--blur",
        "defocus",
        "--maxit",
        "5",
    ];
    args.extend_from_slice(extra);
    let r = run(&args);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let rows = read_csv(&out.join("sweep.csv"));
    assert!(out.join("run_000").join("summary.json").exists());
    rows.iter().map(|r| r["lambda"].parse().unwrap()).collect()
}

#[test]
fn sweeps_move_lambda_the_right_way() {
    let tmp = tempfile::tempdir().unwrap();
    let omega = sweep_lambdas(
        tmp.path(),
        &[
            "--param",
            "wgcv",
            "--vary",
            "omega",
            "--values",
            "1,2,3,5,8",
        ],
    );
    assert_eq!(omega.len(), 5);
    assert!(omega.windows(2).all(|w| w[1] >= w[0]), "{omega:?}");
    let eta = sweep_lambdas(
        tmp.path(),
        &[
            "--param",
            "discrepancy",
            "--vary",
            "eta",
            "--values",
            "0.5,1,2,4",
        ],
    );
    assert!(eta.windows(2).all(|w| w[1] > w[0]), "{eta:?}");
}

#[test]
fn overdamped_lambda_is_worse_than_optimal() {
    let tmp = tempfile::tempdir().unwrap();
    let err = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec![
            "solve",
            "--out",
            out.to_str().unwrap(),
            "--n",
            "24",
            "--maxit",
            "30",
        ];
        args.extend_from_slice(extra);
        assert_eq!(code(&run(&args)), 0);
        json(&out.join("summary.json"))["run"]["final_relative_error"]
            .as_f64()
            .unwrap()
    };
    let opt = err("opt", &["--param", "opt"]);
    let heavy = err("heavy", &["--param", "fixed", "--lambda", "1"]);
    assert!(opt < heavy, "{opt} vs {heavy}");
}

#[test]
fn compare_writes_long_table_and_work_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let r = run(&["compare", "--out", out.to_str().unwrap(), "--n", "24"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let rows = read_csv(&out.join("comparison.csv"));
    for solver in ["cgls", "pcg", "fpcg"] {
        let rs: Vec<_> = rows.iter().filter(|r| r["solver"] == solver).collect();
        assert!(!rs.is_empty(), "{solver}");
        assert!(rs
            .iter()
            .all(|r| r["schema"] == "kronprecon.comparison/1.0"));
    }
    let w = json(&out.join("work_report.json"));
    assert_eq!(w["schema"], "kronprecon.work_report/1.0");
    let (mp, mn) = (
        w["work_report"]["m_p"].as_u64().unwrap(),
        w["work_report"]["m_n"].as_u64().unwrap(),
    );
    assert_eq!(
        w["work_report"]["preconditioning_pays"].as_bool().unwrap(),
        9 * mp < 8 * mn
    );
}

#[test]
fn solve_against_a_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().join("base");
    let pre = tmp.path().join("pre");
    assert_eq!(
        code(&run(&[
            "solve",
            "--out",
            base.to_str().unwrap(),
            "--n",
            "24",
            "--solver",
            "cgls"
        ])),
        0
    );
    let r = run(&[
        "solve",
        "--out",
        pre.to_str().unwrap(),
        "--n",
        "24",
        "--baseline",
        base.join("summary.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let s = json(&pre.join("summary.json"));
    assert!(s["work_report"]["m_n"].as_u64().unwrap() > 0);
}

#[test]
fn decompose_reports_terms() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let r = run(&[
        "decompose",
        "--out",
        out.to_str().unwrap(),
        "--blur",
        "motion",
        "--n",
        "32",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let rows = read_csv(&out.join("decompose.csv"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0]["terms"].parse::<usize>().unwrap() > 1);
    let e: f64 = rows[0]["rel_error_unrounded"].parse().unwrap();
    assert!(e > 0.0 && e < 1.0);
}
