use std::path::Path;
use std::process::{Command, Output};

fn gazefuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazefuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gazefuse(args);
    assert!(
        out.status.success(),
        "gazefuse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_corpus(dir: &Path) {
    ok(&[
        "synth",
        "--subjects",
        "12",
        "--duration",
        "10",
        "--seed",
        "3",
        "--out-dir",
        s(dir),
    ]);
}

#[test]
fn run_is_cached_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    small_corpus(&corpus);
    let manifest = corpus.join("manifest.json");
    let run = |out: &Path| {
        ok(&[
            "run",
            "--manifest",
            s(&manifest),
            "--out-dir",
            s(out),
            "--nseq",
            "1",
            "--nseq",
            "2",
            "--method",
            "baseline",
            "--method",
            "weighted",
            "--method",
            "tree",
            "--tree-kind",
            "rf",
        ])
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = run(&a);
    let stdout = String::from_utf8(first.stdout).unwrap();
    assert!(
        stdout.starts_with("task,n_seq,seconds,EKYT EER"),
        "{stdout}"
    );
    assert_eq!(stdout.lines().count(), 5);
    run(&b);
    let report = |d: &Path| std::fs::read(d.join("report.json")).unwrap();
    assert_eq!(report(&a), report(&b));
    assert_eq!(
        std::fs::read(a.join("table.csv")).unwrap(),
        std::fs::read(b.join("table.csv")).unwrap()
    );

    let again = run(&a);
    let log = String::from_utf8(again.stderr).unwrap();
    assert!(log.contains("evaluate: cached"), "{log}");
    assert_eq!(report(&a), report(&b));

    let rendered = ok(&["report", "--report", s(&a.join("report.json"))]);
    assert_eq!(rendered.stdout, std::fs::read(a.join("table.csv")).unwrap());
}

#[test]
fn stage_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    small_corpus(&corpus);
    let p = |name: &str| tmp.path().join(name);
    let manifest = corpus.join("manifest.json");

    ok(&[
        "preprocess",
        "--manifest",
        s(&manifest),
        "--out",
        s(&p("windows.csv")),
    ]);
    let windows = std::fs::read_to_string(p("windows.csv")).unwrap();
    // 12 subjects x 2 sessions x 2 tasks x 2 windows, plus the header.
    assert_eq!(windows.lines().count(), 97);

    ok(&[
        "offset",
        "--manifest",
        s(&manifest),
        "--nseq",
        "1",
        "--out",
        s(&p("offsets.csv")),
    ]);
    ok(&[
        "pairs",
        "--manifest",
        s(&manifest),
        "--task",
        "RAN",
        "--out",
        s(&p("pairs.csv")),
    ]);
    assert_eq!(
        std::fs::read_to_string(p("pairs.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 144
    );

    ok(&[
        "embed-score",
        "--embeddings",
        s(&corpus.join("embeddings.csv")),
        "--pairs",
        s(&p("pairs.csv")),
        "--nseq",
        "1",
        "--offsets",
        s(&p("offsets.csv")),
        "--out",
        s(&p("scores.csv")),
    ]);
    ok(&[
        "fuse",
        "--scores",
        s(&p("scores.csv")),
        "--method",
        "weighted",
        "--nseq",
        "1",
        "--out",
        s(&p("fused.csv")),
        "--report",
        s(&p("fuse_report.json")),
    ]);
    ok(&[
        "eval",
        "--fused",
        s(&p("fused.csv")),
        "--report",
        s(&p("eval.json")),
        "--table",
        s(&p("table.csv")),
    ]);
    let table = std::fs::read_to_string(p("table.csv")).unwrap();
    assert!(
        table.lines().nth(1).unwrap().starts_with("RAN,1,5,"),
        "{table}"
    );

    let model = p("model.json");
    ok(&[
        "train-fusion",
        "--scores",
        s(&p("scores.csv")),
        "--method",
        "tree",
        "--nseq",
        "1",
        "--tree-kind",
        "et",
        "--save",
        s(&model),
    ]);
    assert!(std::fs::read_to_string(model)
        .unwrap()
        .contains("extra_trees"));
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = gazefuse(&[
        "run",
        "--manifest",
        s(&missing),
        "--out-dir",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let out = gazefuse(&["run", "--manifest", s(&missing), "--k", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = tmp.path().join("scores.csv");
    std::fs::write(&bad, "enroll_subject,nonsense\nx,1\n").unwrap();
    let out = gazefuse(&[
        "eval",
        "--fused",
        s(&bad),
        "--report",
        s(&tmp.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(4));
}
