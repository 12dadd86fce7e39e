use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spcat::lattice::LatticeCodeFile;
use spcat::vecio::{read_vecs, VecFormat};

fn spcat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spcat")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = spcat(args);
    assert!(out.status.success(), "spcat {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic dataset: 1000 train, 2000 base, 50 queries.
fn dataset(dir: &Path, dim: usize) -> PathBuf {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    let dim = dim.to_string();
    ok(&[
        "synth",
        "--out-dir",
        p(&data),
        "--dim",
        &dim,
        "--n-train",
        "1000",
        "--n-base",
        "2000",
        "--n-queries",
        "50",
        "--gt-k",
        "10",
        "--seed",
        "3",
    ]);
    data
}

fn train_small(data: &Path, model: &Path, extra: &[&str]) {
    let train = data.join("train.fvecs");
    let mut args = vec![
        "--deterministic",
        "train",
        "--input",
        p(&train),
        "--out",
        p(model),
        "--dout",
        "8",
        "--hidden",
        "32",
        "--epochs",
        "2",
        "--batch",
        "128",
        "--kpos",
        "5",
        "--kneg",
        "20",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn train_writes_checkpoint_and_one_log_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 16);
    let model = dir.path().join("m.spcat");
    train_small(&data, &model, &[]);
    assert!(model.exists());
    let log = fs::read_to_string(dir.path().join("m.spcat.log.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch\tlr\trank_loss\tkoleo\ttotal");
    assert_eq!(lines.len(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 16);
    let train = data.join("train.fvecs");
    let model = dir.path().join("m.spcat");

    let missing = spcat(&["train", "--input", "/nonexistent/x.fvecs", "--out", p(&model), "--dout", "8"]);
    assert_eq!(missing.status.code(), Some(2));

    let negative = spcat(&["train", "--input", p(&train), "--out", p(&model), "--dout", "8", "--lambda", "-1"]);
    assert_eq!(negative.status.code(), Some(1));

    let unknown = spcat(&["train", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(1));

    // A 16-d checkpoint applied to 8-d vectors.
    train_small(&data, &model, &[]);
    let other = dataset(&dir.path().join("other"), 8);
    let mismatch = spcat(&[
        "encode",
        "--input",
        p(&other.join("base.fvecs")),
        "--out",
        p(&dir.path().join("c.splat")),
        "--model",
        p(&model),
        "--r2",
        "10",
    ]);
    assert_eq!(mismatch.status.code(), Some(2));

    let codes = dir.path().join("codes.splat");
    ok(&["encode", "--input", p(&data.join("base.fvecs")), "--out", p(&codes), "--model", p(&model), "--r2", "10"]);
    let no_gt =
        spcat(&["eval", "--codes", p(&codes), "--queries", p(&data.join("queries.fvecs")), "--model", p(&model)]);
    assert_eq!(no_gt.status.code(), Some(2));
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 16);
    let run = |tag: &str| -> Vec<Vec<u8>> {
        let model = dir.path().join(format!("{tag}.spcat"));
        let codes = dir.path().join(format!("{tag}.splat"));
        let report = dir.path().join(format!("{tag}.tsv"));
        train_small(&data, &model, &[]);
        ok(&[
            "--deterministic",
            "encode",
            "--input",
            p(&data.join("base.fvecs")),
            "--out",
            p(&codes),
            "--model",
            p(&model),
            "--r2",
            "10",
        ]);
        ok(&[
            "--deterministic",
            "eval",
            "--codes",
            p(&codes),
            "--queries",
            p(&data.join("queries.fvecs")),
            "--gt",
            p(&data.join("gt.ivecs")),
            "--model",
            p(&model),
            "--k",
            "1,10",
            "--out",
            p(&report),
        ]);
        [model, codes, report].iter().map(|f| fs::read(f).unwrap()).collect()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn pca_to_24_dims_at_r2_79_uses_64_bits() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 32);
    let codes = dir.path().join("c.splat");
    let out = ok(&[
        "encode",
        "--input",
        p(&data.join("base.fvecs")),
        "--out",
        p(&codes),
        "--pca",
        "--train",
        p(&data.join("train.fvecs")),
        "--dout",
        "24",
        "--r2",
        "79",
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("bits_per_vector\t64"), "{stdout}");
    assert!(stdout.contains("vectors\t2000"), "{stdout}");
}

#[test]
fn encoded_vectors_decode_onto_the_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 16);
    let model = dir.path().join("m.spcat");
    train_small(&data, &model, &[]);
    let codes = dir.path().join("c.splat");
    ok(&["encode", "--input", p(&data.join("base.fvecs")), "--out", p(&codes), "--model", p(&model), "--radius", "3"]);
    let file = LatticeCodeFile::read(&codes).unwrap();
    let cb = file.codebook().unwrap();
    assert_eq!(cb.r2(), 9);
    assert_eq!(file.codes.len(), 2000);
    for &c in &file.codes {
        let z = cb.decode(c).unwrap();
        assert_eq!(z.iter().map(|v| v * v).sum::<i32>(), 9);
    }
}

#[test]
fn fine_raw_lattice_codes_nearly_match_exact_search() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 8);
    let codes = dir.path().join("c.splat");
    ok(&["encode", "--input", p(&data.join("base.fvecs")), "--out", p(&codes), "--r2", "200"]);
    let json = dir.path().join("r.json");
    ok(&[
        "eval",
        "--codes",
        p(&codes),
        "--queries",
        p(&data.join("queries.fvecs")),
        "--gt",
        p(&data.join("gt.ivecs")),
        "--k",
        "1,10",
        "--json",
        p(&json),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    let recall = &report["recall"];
    assert_eq!(recall[1][0], 10);
    assert!(recall[1][1].as_f64().unwrap() >= 0.95, "{report}");
}

#[test]
fn search_writes_ivecs_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 8);
    let codes = dir.path().join("c.spbin");
    ok(&[
        "encode",
        "--input",
        p(&data.join("base.fvecs")),
        "--out",
        p(&codes),
        "--codec",
        "binary",
        "--lsh",
        "--bits",
        "64",
    ]);
    let results = dir.path().join("r.ivecs");
    ok(&[
        "search",
        "--codes",
        p(&codes),
        "--queries",
        p(&data.join("queries.fvecs")),
        "--lsh",
        "--bits",
        "64",
        "--k",
        "7",
        "--out",
        p(&results),
    ]);
    let m = spcat::vecio::read_ivecs(&results).unwrap();
    assert_eq!((m.n, m.d), (50, 7));
    assert!(m.data.iter().all(|&id| (0..2000).contains(&id)));
}

#[test]
fn analyze_histograms_cover_every_vector() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 8);
    let out = dir.path().join("analysis");
    fs::create_dir(&out).unwrap();
    let stdout = ok(&[
        "analyze",
        "--base",
        p(&data.join("base.fvecs")),
        "--queries",
        p(&data.join("queries.fvecs")),
        "--gt",
        p(&data.join("gt.ivecs")),
        "--out-dir",
        p(&out),
        "--planes",
        "3",
        "--bins",
        "16",
        "--k-far",
        "10",
        "--pairs",
        "1000",
    ])
    .stdout;
    let hist = fs::read_to_string(out.join("angular_histogram.tsv")).unwrap();
    let mut per_plane = [0u64; 3];
    for line in hist.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        per_plane[f[0].parse::<usize>().unwrap()] += f[2].parse::<u64>().unwrap();
    }
    assert_eq!(per_plane, [2000; 3]);
    assert!(out.join("summary.json").exists() && out.join("epsilon_curve.tsv").exists());
    assert!(String::from_utf8(stdout).unwrap().contains("uniformity_overlap"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 16);
    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"dout": 8, "hidden": 24, "epochs": 3, "batch": 128, "kpos": 5, "kneg": 20}"#).unwrap();
    let model = dir.path().join("m.spcat");
    let train = data.join("train.fvecs");
    ok(&["train", "--input", p(&train), "--out", p(&model), "--config", p(&config), "--epochs", "1"]);
    let log = fs::read_to_string(dir.path().join("m.spcat.log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let m = spcat::nn::CatalyzerModel::load(&model).unwrap();
    assert_eq!(m.fc1.weight.nrows(), 24);

    fs::write(&config, r#"{"dout": 8, "unknown_field": 1}"#).unwrap();
    let bad = spcat(&["train", "--input", p(&train), "--out", p(&model), "--config", p(&config)]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn transform_outputs_unit_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 16);
    let model = dir.path().join("m.spcat");
    train_small(&data, &model, &[]);
    let out = dir.path().join("y.fvecs");
    ok(&["transform", "--input", p(&data.join("queries.fvecs")), "--out", p(&out), "--model", p(&model)]);
    let y = read_vecs(&out, VecFormat::Fvecs).unwrap();
    assert_eq!((y.len(), y.dim()), (50, 8));
    for row in y.rows() {
        assert!((row.iter().map(|v| v * v).sum::<f32>() - 1.0).abs() < 1e-5);
    }
}
