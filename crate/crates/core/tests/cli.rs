use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn artilang(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_artilang"))
        .args(args)
        .current_dir(dir)
        .env_remove("ARTILANG_THREADS")
        .output()
        .expect("run artilang")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn shuffle_without_block_size_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = artilang(dir.path(), &["generate", "--kind", "shuffle", "--sequences", "10", "--out", "s.txt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("s.txt").exists());
    let out = artilang(dir.path(), &["generate", "--out", "s.txt"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(artilang(dir.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn generate_is_reproducible_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["generate", "--kind", "shuffle", "--n", "4", "--sequences", "1000", "--seed", "7"];
    let a = artilang(dir.path(), &[&args[..], &["--out", "a.txt"]].concat());
    assert!(a.status.success(), "{a:?}");
    let b = Command::new(env!("CARGO_BIN_EXE_artilang"))
        .args([&args[..], &["--out", "b.txt"]].concat())
        .current_dir(dir.path())
        .env("ARTILANG_THREADS", "1")
        .output()
        .unwrap();
    assert!(b.status.success());
    let read = |name: &str| fs::read(dir.path().join(name)).unwrap();
    assert_eq!(read("a.txt"), read("b.txt"));
    assert_eq!(read("a.txt.manifest.json"), read("b.txt.manifest.json"));
    assert!(dir.path().join("a.txt.config.toml").exists());

    let v = artilang(dir.path(), &["validate", "--corpus", "a.txt", "--report", "report.json"]);
    assert_eq!(v.status.code(), Some(0));
    assert!(stdout(&v).contains("0 violations"));
}

#[test]
fn corrupted_line_fails_validation_and_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let g = artilang(
        dir.path(),
        &["generate", "--kind", "flat", "--max-span", "6", "--sequences", "50", "--out", "f6.txt"],
    );
    assert!(g.status.success());
    let path = dir.path().join("f6.txt");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = "1 2 3".into();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let v = artilang(dir.path(), &["validate", "--corpus", "f6.txt"]);
    assert_eq!(v.status.code(), Some(1));
    assert!(stdout(&v).contains("line 5"), "{}", stdout(&v));
}

#[test]
fn flat_two_has_a_single_span_bucket() {
    let dir = tempfile::tempdir().unwrap();
    let g = artilang(dir.path(), &["generate", "--kind", "flat", "--l", "2", "--sequences", "300", "--out", "f2.txt"]);
    assert!(g.status.success());
    let s = artilang(dir.path(), &["stats", "--corpus", "f2.txt", "--out", "stats"]);
    assert!(s.status.success(), "{s:?}");
    let csv = fs::read_to_string(dir.path().join("stats/span_histogram.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("2,"));
    assert!(dir.path().join("stats/config.toml").exists());
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "[generator]\nkind = \"shuffle\"\nblock_size = 3\ncontent_size = 16\nseq_len_range = [6, 9]\nnum_sequences = 40\nmaster_seed = 1\n",
    )
    .unwrap();
    let g = artilang(dir.path(), &["generate", "--config", "run.toml", "--sequences", "25", "--out", "c.txt"]);
    assert!(g.status.success(), "{g:?}");
    let lines: Vec<String> = fs::read_to_string(dir.path().join("c.txt")).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 25);
    let snapshot = fs::read_to_string(dir.path().join("c.txt.config.toml")).unwrap();
    assert!(snapshot.contains("num_sequences = 25"));
    assert!(snapshot.contains("block_size = 3"));

    fs::write(dir.path().join("bad.toml"), "[generator\n").unwrap();
    let g = artilang(dir.path(), &["generate", "--config", "bad.toml", "--out", "d.txt"]);
    assert_eq!(g.status.code(), Some(2));
}

#[test]
fn adversarial_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("pairs.tsv"),
        "why is sky blue?\trayleigh scattering\tentailment\nwho?\tnobody\tnon-entailment\n",
    )
    .unwrap();
    let a = artilang(dir.path(), &["adv", "--in", "pairs.tsv", "--out", "adv.tsv"]);
    assert!(a.status.success());
    assert_eq!(
        fs::read_to_string(dir.path().join("adv.tsv")).unwrap(),
        "why is sky blue?\twhy is sky blue?\tnon-entailment\nwho?\twho?\tnon-entailment\n"
    );
    fs::write(dir.path().join("bad.tsv"), "ok\tfine\t1\nbroken line\n").unwrap();
    let a = artilang(dir.path(), &["adv", "--in", "bad.tsv", "--out", "x.tsv"]);
    assert_eq!(a.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&a.stderr).contains("line 2"));
}

#[test]
fn multi_seed_finetune_reports_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let f = artilang(
        dir.path(),
        &["finetune", "--task", "perm-pair", "--seeds", "3", "--epochs", "1", "--train-size", "64", "--dev-size", "32", "--out", "ft"],
    );
    assert!(f.status.success(), "{f:?}");
    let csv = fs::read_to_string(dir.path().join("ft/metrics.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[..3], ["metric", "mean", "std"]);
    assert_eq!(header.len(), 6);
    assert!(dir.path().join("ft/train.txt.labels").exists());
    assert!(dir.path().join("ft/config.toml").exists());
}

#[test]
fn flat_two_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let o = artilang(dir.path(), args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    run(&["generate", "--kind", "flat", "--l", "2", "--content-size", "64", "--sequences", "2000", "--min-len", "16", "--max-len", "32", "--seed", "3", "--out", "f2.txt"]);
    run(&["pretrain", "--corpus", "f2.txt", "--steps", "500", "--out", "pre"]);
    assert!(dir.path().join("pre/loss.csv").exists());
    run(&["probe", "--checkpoint", "pre/model.json", "--corpus", "f2.txt", "--max-sequences", "100", "--out", "probe"]);
    let csv = fs::read_to_string(dir.path().join("probe/histogram.csv")).unwrap();
    let (mode, _) = csv
        .lines()
        .skip(1)
        .map(|l| {
            let (k, c) = l.split_once(',').unwrap();
            (k.parse::<i64>().unwrap(), c.parse::<u64>().unwrap())
        })
        .max_by_key(|&(k, c)| (c, -k.abs()))
        .unwrap();
    assert!(mode == 1 || mode == -1, "{csv}");
}
