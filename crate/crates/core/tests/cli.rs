use std::fs;

use cmos::cli::{run, EXIT_FAIL, EXIT_OK, EXIT_USAGE};

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut argv = vec!["cmos"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

#[test]
fn shuffle_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    let perm = dir.path().join("perm.txt");
    let output = dir.path().join("out.txt");
    let trace = dir.path().join("trace.csv");
    fs::write(&input, "10 11 12 13 14 15 16 17 18").unwrap();
    fs::write(&perm, "3 1 6\n5 7 2\n0 8 4\n").unwrap();
    for algo in ["cmos", "bl1", "bl2"] {
        let (code, _) = cli(&[
            "shuffle",
            "--algo",
            algo,
            "--input",
            input.to_str().unwrap(),
            "--perm",
            perm.to_str().unwrap(),
            "--output",
            output.to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK, "{algo}");
        let got: Vec<u32> = fs::read_to_string(&output)
            .unwrap()
            .split_whitespace()
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(got, vec![16, 11, 15, 10, 18, 13, 12, 14, 17], "{algo}");
        let csv = fs::read_to_string(&trace).unwrap();
        assert!(csv.lines().all(|l| l.split(',').count() == 3));
    }
}

#[test]
fn shuffle_to_stdout_with_random_input() {
    let (code, out) = cli(&["shuffle", "--n", "16", "--seed", "4"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().count(), 16);
    assert_eq!(cli(&["shuffle", "--n", "16", "--seed", "4"]).1, out);
}

#[test]
fn usage_errors() {
    assert_eq!(cli(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(cli(&["shuffle"]).0, EXIT_USAGE);
    assert_eq!(cli(&["shuffle", "--n", "10"]).0, EXIT_USAGE);
    assert_eq!(
        cli(&["shuffle", "--n", "16", "--interrupts", "sometimes"]).0,
        EXIT_USAGE
    );
    assert_eq!(
        cli(&["--cache", "/nonexistent/cache.cfg", "probe"]).0,
        EXIT_USAGE
    );
    assert_eq!(cli(&["aborts", "--rate", "2"]).0, EXIT_USAGE);
    let dir = tempfile::tempdir().unwrap();
    let perm = dir.path().join("perm.txt");
    fs::write(&perm, "0 0 1 2").unwrap();
    assert_eq!(
        cli(&["shuffle", "--n", "4", "--perm", perm.to_str().unwrap()]).0,
        EXIT_USAGE
    );
}

#[test]
fn probe_default_and_custom_cache() {
    assert_eq!(cli(&["probe"]), (EXIT_OK, "32768 8388608\n".to_string()));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cache.cfg");
    fs::write(
        &cfg,
        "# small machine\nline_size=64\nl1_sets=16\nl1_ways=2\nllc_sets=64\nllc_ways=4\n",
    )
    .unwrap();
    assert_eq!(
        cli(&["--cache", cfg.to_str().unwrap(), "probe"]),
        (EXIT_OK, "2048 16384\n".to_string())
    );
}

#[test]
fn verify_exit_codes() {
    let (code, out) = cli(&["verify", "--algo", "cmos", "--n", "16", "--trials", "4"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().nth(1), Some("cmos,4,137,true,,,"), "{out}");
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("dump");
    let (code, out) = cli(&[
        "verify",
        "--algo",
        "bl1",
        "--n",
        "64",
        "--trials",
        "4",
        "--dump",
        dump.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_FAIL);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..5], &["bl1", "4", row[2], "false", "0"]);
    let a = fs::read_to_string(dump.join("trial_0.csv")).unwrap();
    let b = fs::read_to_string(dump.join(format!("trial_{}.csv", row[5]))).unwrap();
    assert_ne!(a, b);
}

#[test]
fn bench_and_aborts_tables() {
    let (code, out) = cli(&["bench", "--n", "16,64", "--algos", "cmos,bl2"]);
    assert_eq!(code, EXIT_OK);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "algo,n,events,txns,aborts,cost");
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("bl2,16,560,0,0,560"));

    let (code, out) = cli(&["aborts", "--n", "16", "--runs", "2", "--rate", "0.01"]);
    assert_eq!(code, EXIT_OK);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "variant,n,ac2,ac4,attempts,status");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("cmos,16,0,"));
    assert!(lines[3].starts_with("interrupt-only,16,0,"));
}
