//! End-to-end checks of the `seqlab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seqlab_core::augment::{read_pnm, write_pnm, Image};

const SMALL: &str = "seeds=3,5\ndata.per_class=40\ndata.test_per_class=10\ntrain.batch_size=4\ntrain.mu=2\n\
                     train.total_iters=30\ntrain.eval_every=10\ntrain.log_every=5\nmodel.hidden_dims=8\n";

fn seqlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqlab")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(config: &Path, out: &Path) -> Output {
    seqlab(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<Option<f64>> {
    let k = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[k].parse().ok()).collect()
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.conf", "seeds=0\n# comment\ntrain.lr0=fast\n");
    let o = run(&cfg, &dir.path().join("out"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let cfg = write(dir.path(), "unknown.conf", "train.bogus=1\n");
    let o = run(&cfg, &dir.path().join("out"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 1: unknown key `train.bogus`"), "{}", stderr(&o));

    let o = run(&dir.path().join("absent.conf"), &dir.path().join("out"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("absent.conf"));
}

#[test]
fn zero_iterations_give_an_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "k0.conf", &SMALL.replace("train.total_iters=30", "train.total_iters=0"));
    let out = dir.path().join("out");
    let o = run(&cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("summary.csv")).unwrap(), "metric,mean,std,n\n");
    let (_, rows) = read_table(&out.join("metrics_3.csv"));
    assert!(rows.is_empty());
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with the textbook two-pass formula.
fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

#[test]
fn summary_matches_recomputation_from_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.conf", SMALL);
    let out = dir.path().join("out");
    let o = run(&cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("seed 3:") && stdout.contains("seed 5:"));

    let a = std::fs::read(out.join("metrics_3.csv")).unwrap();
    let b = std::fs::read(out.join("metrics_5.csv")).unwrap();
    assert_ne!(a, b);
    for seed in [3, 5] {
        for iter in [10, 20, 30] {
            assert!(out.join(format!("seed_{seed}/ckpt_{iter}.bin")).is_file());
        }
        assert!(out.join(format!("seed_{seed}/reliability.csv")).is_file());
    }

    let mut per_metric: Vec<(&str, Vec<f64>)> = ["final_error", "best_error", "final_ece", "mean_utilization", "mean_mask_ratio"]
        .iter()
        .map(|m| (*m, Vec::new()))
        .collect();
    for seed in [3, 5] {
        let (h, rows) = read_table(&out.join(format!("metrics_{seed}.csv")));
        assert_eq!(rows.len(), 6);
        let errors: Vec<f64> = column(&h, &rows, "eval_error").into_iter().flatten().collect();
        let eces: Vec<f64> = column(&h, &rows, "eval_ece").into_iter().flatten().collect();
        let utils: Vec<f64> = column(&h, &rows, "utilization").into_iter().flatten().collect();
        let masks: Vec<f64> = column(&h, &rows, "mask_ratio").into_iter().flatten().collect();
        assert_eq!(errors.len(), 3);
        per_metric[0].1.push(*errors.last().unwrap());
        per_metric[1].1.push(errors.iter().copied().fold(f64::INFINITY, f64::min));
        per_metric[2].1.push(*eces.last().unwrap());
        per_metric[3].1.push(mean(&utils));
        per_metric[4].1.push(mean(&masks));
    }

    let (h, rows) = read_table(&out.join("summary.csv"));
    assert_eq!(h, ["metric", "mean", "std", "n"]);
    assert_eq!(rows.len(), per_metric.len());
    for (row, (name, values)) in rows.iter().zip(&per_metric) {
        assert_eq!(row[0], *name);
        let (m, s): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        assert!((m - mean(values)).abs() < 1e-12, "{name} mean");
        assert!((s - sample_std(values)).abs() < 1e-12, "{name} std");
        assert_eq!(row[3], "2");
    }
}

#[test]
fn seed_override_runs_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.conf", SMALL);
    let out = dir.path().join("out");
    let o = seqlab(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed-override", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("metrics_9.csv").is_file());
    assert!(!out.join("metrics_3.csv").exists());
    let (_, rows) = read_table(&out.join("summary.csv"));
    assert!(rows.iter().all(|r| r[2] == "0" && r[3] == "1"));
}

#[test]
fn compare_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.conf", SMALL);
    let out = dir.path().join("out");
    assert!(run(&cfg, &out).status.success());

    let o = seqlab(&["compare", out.to_str().unwrap(), out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    for metric in ["final_error", "best_error", "final_ece", "mean_utilization", "mean_mask_ratio"] {
        let line = text.lines().find(|l| l.starts_with(metric)).unwrap_or_else(|| panic!("{metric} missing:\n{text}"));
        let diff = line.split_whitespace().last().unwrap();
        assert_eq!(diff.parse::<f64>().unwrap(), 0.0, "{line}");
    }

    let missing = dir.path().join("nowhere");
    let o = seqlab(&["compare", out.to_str().unwrap(), missing.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains(missing.join("summary.csv").to_str().unwrap()), "{}", stderr(&o));
}

const METRICS_HEADER: &str =
    "iter,lr,l_sup,l_u_ce,l_kl_wm,l_kl_ms,l_kl_ws,total,mask_ratio,utilization,pseudo_acc,eval_error,eval_ece";

fn plot(kind: &str, csv: &Path, out: &Path) -> Output {
    seqlab(&["plot", "--kind", kind, csv.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

#[test]
fn plot_verb() {
    let dir = tempfile::tempdir().unwrap();

    let empty = write(dir.path(), "empty.csv", &format!("{METRICS_HEADER}\n"));
    for kind in ["loss", "accuracy", "mask"] {
        let svg_path = dir.path().join(format!("empty_{kind}.svg"));
        assert!(plot(kind, &empty, &svg_path).status.success());
        let svg = std::fs::read_to_string(&svg_path).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains(r#"<g class="axes""#));
        assert!(!svg.contains("<polyline"));
    }

    // Accuracy 0.75 at iteration 10 and 0.5 at iteration 30 on the 640x400
    // canvas with margins 60/20 (x) and 30/50 (y):
    // x = 60 + (i - 10) / 20 * 560, y = 350 - acc * 320.
    let two = write(
        dir.path(),
        "two.csv",
        &format!("{METRICS_HEADER}\n10,0.1,1,0,0,0,0,1,,1,,0.25,0.1\n30,0.1,1,0,0,0,0,1,,1,,0.5,0.1\n"),
    );
    let svg_path = dir.path().join("acc.svg");
    assert!(plot("accuracy", &two, &svg_path).status.success());
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert!(svg.contains(r#"points="60.00,110.00 620.00,190.00""#), "{svg}");

    let again = dir.path().join("acc2.svg");
    assert!(plot("accuracy", &two, &again).status.success());
    assert_eq!(std::fs::read(&svg_path).unwrap(), std::fs::read(&again).unwrap());

    let narrow = write(dir.path(), "narrow.csv", "iter,eval_error\n1,0.5\n");
    let o = plot("loss", &narrow, &dir.path().join("x.svg"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown column `l_sup`"), "{}", stderr(&o));

    let o = seqlab(&["plot", "--kind", "histogram", two.to_str().unwrap(), "--out", "x.svg"]);
    assert!(!o.status.success());
}

#[test]
fn plot_run_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.conf", SMALL);
    let out = dir.path().join("out");
    assert!(run(&cfg, &out).status.success());
    for (kind, file) in [
        ("loss", "metrics_3.csv"),
        ("accuracy", "metrics_3.csv"),
        ("mask", "metrics_3.csv"),
        ("reliability", "seed_3/reliability.csv"),
    ] {
        let svg_path = dir.path().join(format!("{kind}.svg"));
        let o = plot(kind, &out.join(file), &svg_path);
        assert!(o.status.success(), "{kind}: {}", stderr(&o));
        let svg = std::fs::read_to_string(&svg_path).unwrap();
        assert!(svg.contains("<polyline") || svg.contains(r#"class="bin""#), "{kind}");
    }
}

#[test]
fn augment_preview_verb() {
    let dir = tempfile::tempdir().unwrap();
    let px: Vec<u8> = (0..12 * 10 * 3).map(|i| (i * 37 % 256) as u8).collect();
    let img = Image::new(12, 10, 3, px).unwrap();
    let input = dir.path().join("in.ppm");
    write_pnm(&input, &img).unwrap();

    let preview = |policy: &str, seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = seqlab(&[
            "augment-preview",
            "--input",
            input.to_str().unwrap(),
            "--policy",
            policy,
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        read_pnm(&out).unwrap()
    };
    for policy in ["weak", "medium", "strong"] {
        let a = preview(policy, "4", "a.ppm");
        assert!(a.same_shape(&img));
        assert_eq!(a, preview(policy, "4", "b.ppm"));
    }
    let outputs: Vec<Image> = (0..6).map(|s| preview("strong", &s.to_string(), "s.ppm")).collect();
    assert!(outputs.windows(2).any(|w| w[0] != w[1]));

    let o = seqlab(&["augment-preview", "--input", "missing.ppm", "--policy", "weak", "--out", "x.ppm"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.ppm"));
}
