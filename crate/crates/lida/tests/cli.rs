//! End-to-end tests of the `lida` binary: exit codes, output formats, the
//! full pipeline, and byte-identical reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lida::synthgen::{default_families, BenchmarkSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lida"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn lida")
}

fn stdout_of(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

/// A small benchmark: 8 reals, 4 families x 3 fakes, 48 px.
fn small_benchmark(dir: &Path, seed: u64) -> PathBuf {
    let out = run(bin().args([
        "synth",
        "--output-dir",
        dir.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--side",
        "48",
        "--classes",
        "3",
        "--reals",
        "8",
        "--fakes-per-family",
        "3",
    ]));
    stdout_of(&out);
    dir.join("manifest.tsv")
}

fn manifest_rows(path: &Path) -> Vec<(String, String, String)> {
    let text = std::fs::read_to_string(path).expect("manifest");
    text.lines()
        .skip(1)
        .map(|l| {
            let mut cols = l.split('\t');
            (
                cols.next().unwrap().to_string(),
                cols.next().unwrap().to_string(),
                cols.next().unwrap().to_string(),
            )
        })
        .collect()
}

#[test]
fn help_exits_zero_and_lists_subcommands() {
    let out = run(bin().arg("--help"));
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in
        ["fingerprint", "synth", "pretrain", "register", "adapt", "query", "detect", "eval", "degrade"]
    {
        assert!(text.contains(sub), "--help does not mention {sub}");
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(bin().arg("--no-such-flag")).status.code(), Some(2));
    assert_eq!(run(bin().args(["synth"])).status.code(), Some(2)); // missing --output-dir
    assert_eq!(run(bin().args(["no-such-command"])).status.code(), Some(2));
}

#[test]
fn missing_input_file_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args([
        "fingerprint",
        "--input",
        dir.path().join("absent.png").to_str().unwrap(),
        "--output",
        dir.path().join("fp.png").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn corrupt_checkpoint_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("enc.bin");
    std::fs::write(&bad, b"this is not an encoder checkpoint").unwrap();
    let img = dir.path().join("img.png");
    image::save_buffer(&img, &[128u8; 3 * 48 * 48], 48, 48, image::ExtendedColorType::Rgb8)
        .unwrap();
    let out = run(bin().args([
        "detect",
        "--encoder",
        bad.to_str().unwrap(),
        img.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn diverging_training_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_benchmark(dir.path(), 5);
    let out = run(bin().args([
        "pretrain",
        "--corpus",
        manifest.to_str().unwrap(),
        "--output",
        dir.path().join("enc.bin").to_str().unwrap(),
        "--epochs",
        "3",
        "--learning-rate",
        "1e300",
    ]));
    assert_eq!(out.status.code(), Some(5), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn db_flag_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_benchmark(dir.path(), 9);
    let enc = dir.path().join("enc.bin");
    stdout_of(&run(bin().args([
        "pretrain",
        "--corpus",
        manifest.to_str().unwrap(),
        "--output",
        enc.to_str().unwrap(),
        "--epochs",
        "0",
    ])));
    let rows = manifest_rows(&manifest);
    let exemplar = dir.path().join(&rows.iter().find(|r| r.1 == "alpha").unwrap().0);

    // No flag, no variable: a usage-level failure (exit 1, not a crash).
    let out = run(
        bin()
            .env_remove("LIDA_DB")
            .args(["register", "--encoder", enc.to_str().unwrap(), "--label", "alpha"])
            .arg(&exemplar),
    );
    assert_eq!(out.status.code(), Some(1));

    // Variable alone works.
    let env_db = dir.path().join("env.db");
    stdout_of(&run(
        bin()
            .env("LIDA_DB", &env_db)
            .args(["register", "--encoder", enc.to_str().unwrap(), "--label", "alpha"])
            .arg(&exemplar),
    ));
    assert!(env_db.exists());

    // The flag wins over the variable.
    let flag_db = dir.path().join("flag.db");
    stdout_of(&run(
        bin()
            .env("LIDA_DB", dir.path().join("ignored.db"))
            .args([
                "register",
                "--db",
                flag_db.to_str().unwrap(),
                "--encoder",
                enc.to_str().unwrap(),
                "--label",
                "alpha",
            ])
            .arg(&exemplar),
    ));
    assert!(flag_db.exists());
    assert!(!dir.path().join("ignored.db").exists());
}

/// Drives the whole toolchain in one directory and returns the bytes of
/// everything it produced, so a rerun can be compared byte for byte. All
/// commands run with `root` as the working directory and only relative
/// paths, so stored source paths and printed output carry nothing
/// run-specific.
fn full_pipeline(root: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let bin_in = || {
        let mut cmd = bin();
        cmd.current_dir(root).env_remove("LIDA_DB");
        cmd
    };
    small_benchmark(&root.join("bench"), 21);
    let rows = manifest_rows(&root.join("bench/manifest.tsv"));

    stdout_of(&run(bin_in().args([
        "--threads",
        threads,
        "pretrain",
        "--corpus",
        "bench/manifest.tsv",
        "--output",
        "enc.bin",
        "--epochs",
        "2",
        "--learning-rate",
        "1e-3",
        "--seed",
        "4",
    ])));

    // Two exemplars per family.
    for family in ["alpha", "beta", "gamma", "delta"] {
        let mut cmd = bin_in();
        cmd.args([
            "--threads",
            threads,
            "register",
            "--db",
            "db.bin",
            "--encoder",
            "enc.bin",
            "--label",
            family,
        ]);
        for row in rows.iter().filter(|r| r.1 == family).take(2) {
            cmd.arg(format!("bench/{}", row.0));
        }
        stdout_of(&run(&mut cmd));
    }

    stdout_of(&run(bin_in().args([
        "--threads",
        threads,
        "adapt",
        "--db",
        "db.bin",
        "--encoder",
        "enc.bin",
        "--output",
        "adapted.bin",
        "--real-manifest",
        "bench/manifest.tsv",
        "--epochs",
        "2",
        "--batch-size",
        "4",
        "--learning-rate",
        "1e-3",
        "--seed",
        "6",
    ])));

    // Query the remaining fakes.
    let mut query_cmd = bin_in();
    query_cmd.args([
        "--threads",
        threads,
        "query",
        "--db",
        "db.bin",
        "--encoder",
        "adapted.bin",
        "-k",
        "3",
    ]);
    let mut eval_manifest = String::from("path\tlabel\tclass\n");
    for family in ["alpha", "beta", "gamma", "delta"] {
        for row in rows.iter().filter(|r| r.1 == family).skip(2) {
            query_cmd.arg(format!("bench/{}", row.0));
            eval_manifest.push_str(&format!("{}\t{}\t{}\n", row.0, row.1, row.2));
        }
    }
    let query_out = stdout_of(&run(&mut query_cmd));

    std::fs::write(root.join("bench/queries.tsv"), eval_manifest).unwrap();
    let eval_out = stdout_of(&run(bin_in().args([
        "--threads",
        threads,
        "eval",
        "--db",
        "db.bin",
        "--encoder",
        "adapted.bin",
        "--queries",
        "bench/queries.tsv",
        "-k",
        "3",
        "--tsv",
    ])));

    stdout_of(&run(bin_in().args([
        "degrade",
        "--input",
        &format!("bench/{}", rows[0].0),
        "--output",
        "blurred.png",
        "--sigma",
        "1.5",
    ])));
    stdout_of(&run(bin_in().args([
        "fingerprint",
        "--input",
        "blurred.png",
        "--output",
        "fp.png",
    ])));

    vec![
        ("manifest".into(), std::fs::read(root.join("bench/manifest.tsv")).unwrap()),
        ("first-image".into(), std::fs::read(root.join("bench").join(&rows[0].0)).unwrap()),
        ("encoder".into(), std::fs::read(root.join("enc.bin")).unwrap()),
        ("registry".into(), std::fs::read(root.join("db.bin")).unwrap()),
        ("adapted-encoder".into(), std::fs::read(root.join("adapted.bin")).unwrap()),
        ("query-stdout".into(), query_out.into_bytes()),
        ("eval-stdout".into(), eval_out.into_bytes()),
        ("blurred".into(), std::fs::read(root.join("blurred.png")).unwrap()),
        ("fingerprint-png".into(), std::fs::read(root.join("fp.png")).unwrap()),
    ]
}

#[test]
fn pipeline_reruns_are_byte_identical_across_thread_counts() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = full_pipeline(dir_a.path(), "1");
    let b = full_pipeline(dir_b.path(), "3");
    for ((name_a, bytes_a), (_, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(bytes_a, bytes_b, "artifact {name_a} differs between reruns");
    }
}

#[test]
fn query_output_format_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_benchmark(dir.path(), 33);
    let rows = manifest_rows(&manifest);
    let enc = dir.path().join("enc.bin");
    let db = dir.path().join("db.bin");
    stdout_of(&run(bin().args([
        "pretrain",
        "--corpus",
        manifest.to_str().unwrap(),
        "--output",
        enc.to_str().unwrap(),
        "--epochs",
        "0",
    ])));
    let alpha: Vec<&(String, String, String)> =
        rows.iter().filter(|r| r.1 == "alpha").collect();
    let mut reg = bin();
    reg.args([
        "register",
        "--db",
        db.to_str().unwrap(),
        "--encoder",
        enc.to_str().unwrap(),
        "--label",
        "alpha",
    ]);
    for row in &alpha[..2] {
        reg.arg(dir.path().join(&row.0));
    }
    let reg_out = stdout_of(&run(&mut reg));
    assert!(reg_out.lines().all(|l| l.starts_with("registered\t")));

    let query_img = dir.path().join(&alpha[2].0);
    let out = stdout_of(&run(bin().args([
        "query",
        "--db",
        db.to_str().unwrap(),
        "--encoder",
        enc.to_str().unwrap(),
        "-k",
        "2",
        query_img.to_str().unwrap(),
    ])));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "path\trank\tlabel\tsimilarity\trecord_id");
    assert_eq!(lines.len(), 4); // header + 2 ranks + prediction
    let rank1: Vec<&str> = lines[1].split('\t').collect();
    assert_eq!(rank1[1], "1");
    assert_eq!(rank1[2], "alpha");
    // Six decimal places.
    assert_eq!(rank1[3].split('.').nth(1).map(str::len), Some(6));
    assert!(lines[3].contains("\tpredicted\talpha\t"));

    // Detection output shape, with a permissive threshold.
    let det = stdout_of(&run(bin().args([
        "detect",
        "--encoder",
        enc.to_str().unwrap(),
        "--threshold",
        "0.0",
        query_img.to_str().unwrap(),
    ])));
    let det_lines: Vec<&str> = det.lines().collect();
    assert_eq!(det_lines[0], "path\tverdict\tsimilarity");
    let cols: Vec<&str> = det_lines[1].split('\t').collect();
    assert_eq!(cols[1], "real"); // everything clears threshold 0
    assert_eq!(cols[2].split('.').nth(1).map(str::len), Some(6));
}

#[test]
fn eval_tsv_is_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_benchmark(dir.path(), 41);
    let rows = manifest_rows(&manifest);
    let enc = dir.path().join("enc.bin");
    let db = dir.path().join("db.bin");
    stdout_of(&run(bin().args([
        "pretrain",
        "--corpus",
        manifest.to_str().unwrap(),
        "--output",
        enc.to_str().unwrap(),
        "--epochs",
        "0",
    ])));
    for family in ["alpha", "beta"] {
        let mut cmd = bin();
        cmd.args([
            "register",
            "--db",
            db.to_str().unwrap(),
            "--encoder",
            enc.to_str().unwrap(),
            "--label",
            family,
        ]);
        for row in rows.iter().filter(|r| r.1 == family).take(2) {
            cmd.arg(dir.path().join(&row.0));
        }
        stdout_of(&run(&mut cmd));
    }
    let queries = dir.path().join("queries.tsv");
    let mut body = String::from("path\tlabel\tclass\n");
    for row in rows.iter().filter(|r| r.1 == "alpha" || r.1 == "beta").skip(2) {
        body.push_str(&format!("{}\t{}\t{}\n", row.0, row.1, row.2));
    }
    std::fs::write(&queries, body).unwrap();
    let out = stdout_of(&run(bin().args([
        "eval",
        "--db",
        db.to_str().unwrap(),
        "--encoder",
        enc.to_str().unwrap(),
        "--queries",
        queries.to_str().unwrap(),
        "--tsv",
    ])));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "metric\tlabel\tqueries\tvalue_pct");
    assert!(lines[1..].iter().all(|l| l.split('\t').count() == 4));
    assert!(out.contains("rank1\t"));
}

#[test]
fn synth_accepts_a_toml_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = BenchmarkSpec {
        side: 48,
        content_classes: 2,
        reals: 3,
        fakes_per_family: 2,
        seed: 77,
        families: default_families(77, 2)[..2].to_vec(),
    };
    let spec_path = dir.path().join("bench.toml");
    std::fs::write(&spec_path, toml::to_string(&spec).unwrap()).unwrap();
    let out_dir = dir.path().join("out");
    stdout_of(&run(bin().args([
        "synth",
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--spec",
        spec_path.to_str().unwrap(),
    ])));
    let rows = manifest_rows(&out_dir.join("manifest.tsv"));
    assert_eq!(rows.len(), 3 + 2 * 2);
    assert_eq!(rows.iter().filter(|r| r.1 == "real").count(), 3);
    for row in &rows {
        assert!(out_dir.join(&row.0).exists(), "missing {}", row.0);
    }
}
