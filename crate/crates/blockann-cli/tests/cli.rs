//! End-to-end runs of the `blockann` binary.

use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn blockann(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockann"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = blockann(dir, args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen_small(dir: &Path, stem: &str, seed: &str) {
    ok(
        dir,
        &[
            "gen", "--out-dir", ".", "--stem", stem, "-n", "1500", "-d", "8", "--clusters", "8",
            "--queries", "40", "--gt-k", "10", "--seed", seed,
        ],
    );
}

#[test]
fn build_is_reproducible_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_small(dir, "d", "5");
    for out in ["a.idx", "b.idx"] {
        ok(
            dir,
            &[
                "build", "--data", "d.fvecs", "--out", out, "-r", "16", "--l-build", "32", "-m",
                "4", "--seed", "5",
            ],
        );
    }
    let ha = Sha256::digest(std::fs::read(dir.join("a.idx")).unwrap());
    let hb = Sha256::digest(std::fs::read(dir.join("b.idx")).unwrap());
    assert_eq!(ha, hb);
}

#[test]
fn search_twice_yields_identical_per_query_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_small(dir, "d", "6");
    ok(
        dir,
        &[
            "build", "--data", "d.fvecs", "--out", "d.idx", "-r", "16", "--l-build", "32", "-m",
            "4", "--seed", "6",
        ],
    );
    for csv in ["p1.csv", "p2.csv"] {
        ok(
            dir,
            &[
                "search", "--index", "d.idx", "--queries", "d-queries.fvecs", "--groundtruth",
                "d-gt.ivecs", "-k", "5", "-l", "32", "-w", "4", "--per-query", csv, "--seed", "6",
            ],
        );
    }
    assert_eq!(
        std::fs::read(dir.join("p1.csv")).unwrap(),
        std::fs::read(dir.join("p2.csv")).unwrap()
    );
}

#[test]
fn sweep_emits_one_row_per_list_size() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_small(dir, "d", "7");
    ok(
        dir,
        &[
            "build", "--data", "d.fvecs", "--out", "d.idx", "-r", "16", "--l-build", "32", "-m",
            "4", "--seed", "7",
        ],
    );
    ok(
        dir,
        &[
            "sweep", "--index", "d.idx", "--queries", "d-queries.fvecs", "--groundtruth",
            "d-gt.ivecs", "-k", "1", "--l-values", "10,20,40", "--report", "sweep.csv",
        ],
    );
    let report = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 4, "header + 3 rows:\n{report}");
    for (line, l) in lines[1..].iter().zip(["10", "20", "40"]) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[7], l, "L column in {line}");
    }
}

#[test]
fn shared_codebook_subsets_share_one_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_small(dir, "full", "8");
    // Train once over the full set, saving the codebook.
    ok(
        dir,
        &[
            "build", "--data", "full.fvecs", "--out", "full.idx", "-r", "16", "--l-build", "32",
            "-m", "4", "--codebook-out", "shared.pqcb", "--seed", "8",
        ],
    );
    // Slice the dataset into three subset files.
    let (flat, dim, count) = blockann::vecs::read_fvecs(dir.join("full.fvecs")).unwrap();
    let per = count / 3;
    for s in 0..3 {
        let sub = &flat[s * per * dim..(s + 1) * per * dim];
        blockann::vecs::write_fvecs(dir.join(format!("sub{s}.fvecs")), sub, dim).unwrap();
        ok(
            dir,
            &[
                "build",
                "--data",
                &format!("sub{s}.fvecs"),
                "--out",
                &format!("sub{s}.idx"),
                "-r",
                "16",
                "--l-build",
                "32",
                "--shared-codebook",
                "shared.pqcb",
                "--seed",
                "8",
            ],
        );
    }
    let mut hashes = std::collections::HashSet::new();
    for s in 0..3 {
        let stdout = ok(dir, &["inspect", "--index", &format!("sub{s}.idx")]);
        let line = stdout
            .lines()
            .find(|l| l.contains("codebook: external"))
            .unwrap_or_else(|| panic!("no external codebook in:\n{stdout}"));
        hashes.insert(line.split("hash ").nth(1).unwrap().to_string());
    }
    assert_eq!(hashes.len(), 1, "all subset indices carry one hash");

    // Round-robin switching across the subsets loads one block each time.
    let stdout = ok(
        dir,
        &[
            "switch-bench", "--indices", "sub0.idx", "sub1.idx", "sub2.idx", "--reps", "2",
        ],
    );
    let mut switches = 0;
    for line in stdout.lines() {
        if line.starts_with(|c: char| c.is_ascii_digit()) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[2], "4096", "switch bytes in {line}");
            assert_eq!(cols[4], "true", "fast path in {line}");
            assert_eq!(cols[5], "true", "probe in {line}");
            switches += 1;
        }
    }
    assert_eq!(switches, 6);
    assert!(stdout.contains("fast-path hits: 6/6"), "{stdout}");
}

#[test]
fn inspect_reports_corruption_with_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_small(dir, "d", "9");
    ok(
        dir,
        &[
            "build", "--data", "d.fvecs", "--out", "d.idx", "-r", "16", "--l-build", "32", "-m",
            "4", "--seed", "9",
        ],
    );
    // Truncate the chunk region; inspecting the last node must fail and name
    // the unreadable region.
    let bytes = std::fs::read(dir.join("d.idx")).unwrap();
    std::fs::write(dir.join("t.idx"), &bytes[..bytes.len() - 4096]).unwrap();
    let out = blockann(dir, &["inspect", "--index", "t.idx", "--node", "1499"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("corrupt index file at byte"), "stderr: {err}");
}

#[test]
fn cost_reports_dram_and_crossover() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["cost", "--servers", "3"]);
    assert!(stdout.contains("dram/server = 32.0 GB"), "{stdout}");
    assert!(stdout.contains("cheaper from 2 servers"), "{stdout}");
}

#[test]
fn direct_io_flag_runs_or_falls_back() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_small(dir, "d", "10");
    ok(
        dir,
        &[
            "build", "--data", "d.fvecs", "--out", "d.idx", "-r", "16", "--l-build", "32", "-m",
            "4", "--seed", "10",
        ],
    );
    let stdout = ok(
        dir,
        &[
            "search", "--index", "d.idx", "--queries", "d-queries.fvecs", "-k", "1", "-l", "16",
            "--io-path", "direct",
        ],
    );
    // The io_path column reports whichever path actually ran.
    let row = stdout.lines().nth(1).unwrap();
    let io = row.split(',').nth(2).unwrap();
    assert!(io == "direct" || io == "buffered", "io column: {io}");
}
