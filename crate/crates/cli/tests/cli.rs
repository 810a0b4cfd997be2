//! End-to-end tests driving the compiled `ecgm` binary: corpus synthesis,
//! a small 2-fold training run, checkpoint evaluation, log plotting, and
//! the exit-code contract (2 usage, 1 runtime).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ecgm"));
    // keep output-path resolution explicit unless a test opts in
    c.env_remove("ECGM_OUT");
    c
}

/// Fresh directory under the target tmp root.
fn tmp(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    dir
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "command failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

const TINY_CFG: &str = "seq_len=512\nd_model=8\nn_blocks=1\nstate_dim=2\n\
                        total_epochs=2\nwarmup_epochs=1\ncosine_epochs=1\n\
                        batch_size=4\npeak_lr=1e-3\n";

fn synth_into(dir: &Path, records: u32, classes: u32, seed: u32) {
    ok(bin()
        .args(["synth", "--out"])
        .arg(dir)
        .args([
            "--records",
            &records.to_string(),
            "--classes",
            &classes.to_string(),
            "--seed",
            &seed.to_string(),
        ])
        .output()
        .unwrap());
}

fn train_into(corpus: &Path, cfg: &Path, dir: &Path) {
    ok(bin()
        .args(["train", "--data"])
        .arg(corpus)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(dir)
        .args(["--folds", "2", "--seed", "3"])
        .output()
        .unwrap());
}

/// One synthetic corpus plus one finished training run, shared across
/// tests that only read them.
struct Fixture {
    corpus: PathBuf,
    cfg: PathBuf,
    run: PathBuf,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let corpus = tmp("fix-corpus");
        synth_into(&corpus, 20, 2, 7);
        let cfg = tmp("fix-cfg").with_extension("cfg");
        fs::write(&cfg, TINY_CFG).unwrap();
        let run = tmp("fix-run");
        train_into(&corpus, &cfg, &run);
        Fixture { corpus, cfg, run }
    })
}

#[test]
fn synth_writes_a_complete_reproducible_corpus() {
    let fx = fixture();
    let mut names: Vec<String> = fs::read_dir(&fx.corpus)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 23); // 20 records + labels + map + manifest
    assert!(names.contains(&"labels.csv".to_string()));
    assert!(names.contains(&"label_map.csv".to_string()));
    assert!(names.contains(&"manifest.kv".to_string()));
    assert_eq!(names.iter().filter(|n| n.ends_with(".ecgr")).count(), 20);

    // same flags elsewhere: every file byte-identical
    let again = tmp("synth-again");
    synth_into(&again, 20, 2, 7);
    for name in &names {
        assert_eq!(
            fs::read(fx.corpus.join(name)).unwrap(),
            fs::read(again.join(name)).unwrap(),
            "{name} differs between identical synth runs"
        );
    }
}

#[test]
fn synth_rejects_bad_class_counts() {
    for classes in ["0", "27"] {
        let out = bin()
            .args(["synth", "--out"])
            .arg(tmp(&format!("synth-bad-{classes}")))
            .args(["--classes", classes])
            .output()
            .unwrap();
        assert_eq!(code(&out), 2);
        assert!(String::from_utf8_lossy(&out.stderr).contains("--classes"));
    }
}

#[test]
fn out_falls_back_to_env_root() {
    let root = tmp("env-root");
    fs::create_dir_all(&root).unwrap();
    let out = bin()
        .env("ECGM_OUT", &root)
        .args(["synth", "--records", "1", "--classes", "1"])
        .output()
        .unwrap();
    ok(out);
    assert!(root.join("synth").join("synth-00000.ecgr").exists());

    // neither --out nor the variable: usage error
    let out = bin()
        .args(["synth", "--records", "1", "--classes", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ECGM_OUT"));
}

#[test]
fn train_leaves_the_documented_layout() {
    let fx = fixture();
    for name in ["manifest.kv", "split.tsv", "summary.tsv"] {
        assert!(fx.run.join(name).exists(), "missing {name}");
    }
    for fold in 0..2 {
        for name in ["train.log", "best.ckpt", "final.ckpt"] {
            let p = fx.run.join(format!("fold-{fold}")).join(name);
            assert!(p.exists(), "missing fold-{fold}/{name}");
        }
    }
    let manifest = fs::read_to_string(fx.run.join("manifest.kv")).unwrap();
    assert!(manifest.starts_with("command=train\n"));
    assert!(manifest.contains("model.d_model=8\n"));
    assert!(manifest.contains("model.n_classes=2\n")); // picked up from the map
    assert!(manifest.contains("train.seed=3\n"));

    let summary = fs::read_to_string(fx.run.join("summary.tsv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 5); // header, 2 folds, mean, std
    assert!(lines[0].starts_with("fold\t"));
    assert!(lines[3].starts_with("mean\t"));
    assert!(lines[4].starts_with("std\t"));
}

#[test]
fn training_is_bitwise_reproducible() {
    let fx = fixture();
    let again = tmp("train-again");
    train_into(&fx.corpus, &fx.cfg, &again);
    for rel in [
        "summary.tsv",
        "split.tsv",
        "fold-0/train.log",
        "fold-1/train.log",
        "fold-0/best.ckpt",
        "fold-0/final.ckpt",
    ] {
        assert_eq!(
            fs::read(fx.run.join(rel)).unwrap(),
            fs::read(again.join(rel)).unwrap(),
            "{rel} differs between identical runs"
        );
    }
}

#[test]
fn train_usage_errors() {
    let fx = fixture();
    // one fold is not cross-validation
    let out = bin()
        .args(["train", "--data"])
        .arg(&fx.corpus)
        .arg("--out")
        .arg(tmp("train-onefold"))
        .args(["--folds", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);

    // config typos must not silently become defaults
    let bad = tmp("bad-cfg").with_extension("cfg");
    fs::write(&bad, "d_modle=8\n").unwrap();
    let out = bin()
        .args(["train", "--data"])
        .arg(&fx.corpus)
        .arg("--config")
        .arg(&bad)
        .arg("--out")
        .arg(tmp("train-badcfg"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("d_modle"), "{err}");

    // pinned class count contradicting the corpus label map
    let pinned = tmp("pinned-cfg").with_extension("cfg");
    fs::write(&pinned, format!("{TINY_CFG}n_classes=5\n")).unwrap();
    let out = bin()
        .args(["train", "--data"])
        .arg(&fx.corpus)
        .arg("--config")
        .arg(&pinned)
        .arg("--out")
        .arg(tmp("train-pinned"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('5') && err.contains('2'), "{err}");
}

#[test]
fn eval_reproduces_the_training_log_exactly() {
    let fx = fixture();
    let out_dir = tmp("eval-fold0");
    ok(bin()
        .args(["eval", "--checkpoint"])
        .arg(fx.run.join("fold-0/final.ckpt"))
        .arg("--data")
        .arg(&fx.corpus)
        .arg("--split")
        .arg(fx.run.join("split.tsv"))
        .args(["--fold", "0", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap());

    // last log row: epoch, lr, train_loss, val_auprc, val_auroc
    let log = fs::read_to_string(fx.run.join("fold-0/train.log")).unwrap();
    let last: Vec<&str> = log.lines().last().unwrap().split('\t').collect();
    let kv = fs::read_to_string(out_dir.join("metrics.kv")).unwrap();
    let field = |key: &str| -> String {
        kv.lines()
            .find_map(|l| l.strip_prefix(key).map(|v| v.trim().to_string()))
            .unwrap_or_else(|| panic!("{key} missing from metrics.kv"))
    };
    // string equality on the shortest-round-trip forms = bit equality
    assert_eq!(field("macro_auprc "), last[3]);
    assert_eq!(field("macro_auroc "), last[4]);
}

#[test]
fn eval_split_flag_restricts_to_the_test_partition() {
    let fx = fixture();
    let out_dir = tmp("eval-test");
    ok(bin()
        .args(["eval", "--checkpoint"])
        .arg(fx.run.join("fold-0/final.ckpt"))
        .arg("--data")
        .arg(&fx.corpus)
        .arg("--split")
        .arg(fx.run.join("split.tsv"))
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap());
    let split = fs::read_to_string(fx.run.join("split.tsv")).unwrap();
    let n_test = split.lines().filter(|l| l.contains("\ttest\t")).count();
    assert!(n_test > 0);
    let kv = fs::read_to_string(out_dir.join("metrics.kv")).unwrap();
    for class in 0..2 {
        let grab = |k: &str| -> usize {
            kv.lines()
                .find_map(|l| l.strip_prefix(&format!("class.{class}.{k} ")))
                .unwrap()
                .parse()
                .unwrap()
        };
        assert_eq!(grab("n_pos") + grab("n_neg"), n_test);
    }
}

#[test]
fn eval_runtime_and_usage_failures() {
    let fx = fixture();
    // a corpus whose label map disagrees with the checkpoint
    let three = tmp("corpus-3class");
    synth_into(&three, 10, 3, 1);
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(fx.run.join("fold-0/final.ckpt"))
        .arg("--data")
        .arg(&three)
        .arg("--out")
        .arg(tmp("eval-mismatch"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("classes"), "{err}");

    // --fold without --split has no fold table to consult
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(fx.run.join("fold-0/final.ckpt"))
        .arg("--data")
        .arg(&fx.corpus)
        .args(["--fold", "0", "--out"])
        .arg(tmp("eval-nofoldsplit"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);

    // fold index past the table
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(fx.run.join("fold-0/final.ckpt"))
        .arg("--data")
        .arg(&fx.corpus)
        .arg("--split")
        .arg(fx.run.join("split.tsv"))
        .args(["--fold", "9", "--out"])
        .arg(tmp("eval-foldhigh"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn plot_renders_an_svg() {
    let fx = fixture();
    let svg_path = tmp("plots").join("curves.svg");
    ok(bin()
        .args(["plot", "--log"])
        .arg(fx.run.join("fold-0/train.log"))
        .arg("--out")
        .arg(&svg_path)
        .output()
        .unwrap());
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("<polyline"));
    assert!(svg.contains("learning rate"));

    let empty = tmp("empty").with_extension("log");
    fs::write(&empty, "").unwrap();
    let out = bin()
        .args(["plot", "--log"])
        .arg(&empty)
        .arg("--out")
        .arg(tmp("plots2").join("x.svg"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn unknown_flags_exit_with_usage_code() {
    let out = bin().args(["synth", "--wat"]).output().unwrap();
    assert_eq!(code(&out), 2);
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(code(&out), 2);
}
