//! End-to-end checks of the command-line surface: exit codes, report
//! reproducibility, and the synth-then-probe equivalence path.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_distprobe"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const BERN_LO: &str = "a=synth:bern:theta=0.1,h=2,w=2";
const BERN_HI: &str = "b=synth:bern:theta=0.9,h=2,w=2";

fn fast(args: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    v.extend(
        ["--epochs", "4", "--train-n", "40", "--heldout-n", "60"]
            .iter()
            .map(|s| s.to_string()),
    );
    v
}

/// report.json with the wall-clock lines stripped.
fn normalized_report(dir: &Path) -> String {
    let raw = std::fs::read_to_string(dir.join("report.json")).expect("report.json exists");
    raw.lines()
        .filter(|l| !l.contains("wall_clock_secs"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["probe", "--help"])), 0);
    assert_eq!(code(&run(&["no-such-subcommand"])), 2);
    assert_eq!(code(&run(&["probe", "--no-such-flag"])), 2);
    // arity errors
    assert_eq!(code(&run(&["probe", "--dist", BERN_LO])), 2);
    assert_eq!(code(&run(&["multiway", "--dist", BERN_LO, "--dist", BERN_HI])), 2);
    // malformed dist source
    assert_eq!(code(&run(&["probe", "--dist", "a=ftp:x", "--dist", BERN_HI])), 2);
    assert_eq!(
        code(&run(&["probe", "--dist", "a=synth:bern:theta=2,h=2,w=2", "--dist", BERN_HI])),
        2
    );
}

#[test]
fn runtime_failures_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    // dir source pointing nowhere
    let r = run(&[
        "probe",
        "--dist",
        "a=dir:/nonexistent/path",
        "--dist",
        BERN_HI,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 1);
    // training-set size exceeding what a dir source holds is a runtime error
    let data = tmp.path().join("data");
    let s = run(&[
        "synth",
        "--dist",
        BERN_LO,
        "--train-n",
        "5",
        "--val-n",
        "5",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&s), 0);
    let r = run(&[
        "probe",
        "--dist",
        &format!("a=dir:{}", data.join("a").display()),
        "--dist",
        BERN_HI,
        "--train-n",
        "50",
        "--heldout-n",
        "50",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 1);
}

#[test]
fn every_subcommand_reruns_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let point2 = "p=synth:point2:comps=-1:0:0.09:0:0.09:0.5;1:0:0.09:0:0.09:0.5";
    let blob_a = "b0=synth:blob:h=4,w=4,comps=1:1:0.5:1:1";
    let blob_b = "b1=synth:blob:h=4,w=4,comps=3:3:0.5:1:1";
    let spectral = "s=synth:spectral:h=8,w=8,bands=0-2:1";
    let cases: Vec<(&str, Vec<String>)> = vec![
        ("probe", fast(&["probe", "--dist", BERN_LO, "--dist", BERN_HI])),
        (
            "same_dist",
            fast(&["same-dist", "--dist", BERN_LO, "--trials", "2"]),
        ),
        (
            "scale_curve",
            fast(&[
                "scale-curve", "--dist", BERN_LO, "--dist", BERN_HI, "--sizes", "20,40",
                "--trials", "1",
            ]),
        ),
        (
            "freq_sweep",
            fast(&[
                "freq-sweep", "--dist", spectral, "--dist", spectral, "--filter", "low:2",
            ]),
        ),
        (
            "crop_center",
            fast(&[
                "crop-sweep", "--dist", BERN_LO, "--dist", BERN_HI, "--sizes", "2", "--mode",
                "center",
            ]),
        ),
        (
            "mix_eval",
            fast(&[
                "mix-eval", "--dist", blob_a, "--dist", blob_b, "--alphas", "0,0.5", "--modes",
                "replace",
            ]),
        ),
        (
            "multiway",
            fast(&[
                "multiway",
                "--dist",
                BERN_LO,
                "--dist",
                "m=synth:bern:theta=0.5,h=2,w=2",
                "--dist",
                BERN_HI,
            ]),
        ),
        (
            "mad",
            vec![
                "mad-sim".into(),
                "--dist".into(),
                point2.into(),
                "--generations".into(),
                "2".into(),
                "--samples-per-gen".into(),
                "60".into(),
            ],
        ),
        (
            "guide_demo",
            vec![
                "guide-demo".into(),
                "--dist".into(),
                point2.into(),
                "--scales".into(),
                "0,1".into(),
                "--steps".into(),
                "10".into(),
                "--train-samples".into(),
                "60".into(),
                "--eval-samples".into(),
                "40".into(),
                "--epochs".into(),
                "3".into(),
            ],
        ),
        (
            "frechet",
            fast(&["frechet", "--dist", point2, "--dist", point2, "--features", "raw"]),
        ),
    ];
    for (kind, args) in cases {
        // identical invocations (same argv) from two working directories
        let cwd1 = tmp.path().join(format!("{kind}-run1"));
        let cwd2 = tmp.path().join(format!("{kind}-run2"));
        for cwd in [&cwd1, &cwd2] {
            std::fs::create_dir_all(cwd).unwrap();
            let mut full = args.clone();
            full.extend(["--seed".into(), "11".into(), "--out".into(), "runs".into()]);
            let r = bin()
                .args(&full)
                .current_dir(cwd)
                .output()
                .expect("binary runs");
            assert_eq!(
                code(&r),
                0,
                "{kind} failed: {}",
                String::from_utf8_lossy(&r.stderr)
            );
        }
        let out1 = cwd1.join("runs");
        let out2 = cwd2.join("runs");
        let d1 = std::fs::read_dir(&out1).unwrap().next().unwrap().unwrap().path();
        let d2 = std::fs::read_dir(&out2).unwrap().next().unwrap().unwrap().path();
        assert_eq!(
            normalized_report(&d1),
            normalized_report(&d2),
            "{kind} report not reproducible"
        );
        // csv has no wall-clock column at all
        assert_eq!(
            std::fs::read(d1.join("curve.csv")).unwrap(),
            std::fs::read(d2.join("curve.csv")).unwrap(),
            "{kind} csv not reproducible"
        );
    }
}

#[test]
fn synth_then_probe_matches_in_memory_probe() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let mem_out = tmp.path().join("mem");
    let dir_out = tmp.path().join("dir");
    let common = ["--train-n", "60", "--heldout-n", "80", "--epochs", "6", "--seed", "5"];

    // ntf path: exact equality
    let mut synth = vec!["synth", "--dist", BERN_LO, "--dist", BERN_HI, "--val-n", "80"];
    synth.extend(["--train-n", "60", "--seed", "5", "--format", "ntf"]);
    synth.extend(["--out", data.to_str().unwrap()]);
    assert_eq!(code(&run(&synth)), 0);

    let mut mem = vec!["probe", "--dist", BERN_LO, "--dist", BERN_HI];
    mem.extend(common);
    mem.extend(["--out", mem_out.to_str().unwrap()]);
    assert_eq!(code(&run(&mem)), 0);

    let a = format!("a=dir:{}", data.join("a").display());
    let b = format!("b=dir:{}", data.join("b").display());
    let mut dir = vec!["probe", "--dist", &a, "--dist", &b];
    dir.extend(common);
    dir.extend(["--out", dir_out.to_str().unwrap()]);
    assert_eq!(code(&run(&dir)), 0);

    let strip_out_key = |s: String| -> String {
        s.lines()
            .filter(|l| !l.contains("\"out\""))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mem_report = strip_out_key(normalized_report(&mem_out.join("probe-seed5")));
    let dir_report = strip_out_key(normalized_report(&dir_out.join("probe-seed5")));
    assert_eq!(mem_report, dir_report, "ntf two-path probe reports differ");
}

#[test]
fn synth_then_probe_png_within_quantization_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let mem_out = tmp.path().join("mem");
    let dir_out = tmp.path().join("dir");
    // binary pixels survive 8-bit quantization exactly, so even png agrees;
    // a blob pair exercises actual fractional values
    let blob_a = "a=synth:blob:h=6,w=6,comps=1:1:0.5:1.2:1,noise=0.05";
    let blob_b = "b=synth:blob:h=6,w=6,comps=4:4:0.5:1.2:1,noise=0.05";
    let common = ["--train-n", "60", "--heldout-n", "80", "--epochs", "6", "--seed", "9"];

    let mut synth = vec!["synth", "--dist", blob_a, "--dist", blob_b, "--val-n", "80"];
    synth.extend(["--train-n", "60", "--seed", "9", "--format", "png"]);
    synth.extend(["--out", data.to_str().unwrap()]);
    assert_eq!(code(&run(&synth)), 0);

    let mut mem = vec!["probe", "--dist", blob_a, "--dist", blob_b];
    mem.extend(common);
    mem.extend(["--out", mem_out.to_str().unwrap()]);
    assert_eq!(code(&run(&mem)), 0);

    let a = format!("a=dir:{}", data.join("a").display());
    let b = format!("b=dir:{}", data.join("b").display());
    let mut dir = vec!["probe", "--dist", &a, "--dist", &b];
    dir.extend(common);
    dir.extend(["--out", dir_out.to_str().unwrap()]);
    assert_eq!(code(&run(&dir)), 0);

    let accuracy = |root: &Path| -> f64 {
        let raw = std::fs::read_to_string(root.join("report.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&raw).unwrap();
        v["summary"]["mean_accuracy"].as_f64().unwrap()
    };
    let mem_acc = accuracy(&mem_out.join("probe-seed9"));
    let dir_acc = accuracy(&dir_out.join("probe-seed9"));
    // 1/255 quantization perturbs individual predictions only slightly
    assert!(
        (mem_acc - dir_acc).abs() <= 0.05,
        "png two-path accuracies diverge: {mem_acc} vs {dir_acc}"
    );
}

#[test]
fn config_file_overlay_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("probe.cfg");
    std::fs::write(
        &cfg,
        "# probe settings\nepochs = 4\ntrain_n = 30\nheldout_n = 40\nmodel = logistic\n",
    )
    .unwrap();
    let out = tmp.path().join("runs");
    let r = run(&[
        "probe",
        "--dist",
        BERN_LO,
        "--dist",
        BERN_HI,
        "--config",
        cfg.to_str().unwrap(),
        "--epochs",
        "2", // flag beats the config file
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "1",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("epochs=2"), "echo missing override:\n{stdout}");
    assert!(stdout.contains("train_n=30"), "echo missing config value:\n{stdout}");
    // every numeric default echoed even when nothing set it explicitly
    assert!(stdout.contains("learning_rate=0.05"), "{stdout}");
    assert!(stdout.contains("batch_size=64"), "{stdout}");
    // bad config value is a usage error
    std::fs::write(&cfg, "epochs = banana\n").unwrap();
    let r = run(&[
        "probe",
        "--dist",
        BERN_LO,
        "--dist",
        BERN_HI,
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 2);
}
