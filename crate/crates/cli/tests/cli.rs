use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn nlctrl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlctrl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

fn jsonl(path: PathBuf) -> Vec<Value> {
    fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const GRAMMAR_HEAD: &str = "<templates>\n[VERB] a [LABEL] text.\n[VERB] a [LEN] text.\n<variables>\n[VERB]: write | make\n";
const SECTIONS: &str = "<label>\n0: red\n1: blue\n<length>\n0: short\n5: long\n";

/// Synthetic-style corpus: topic `t` texts draw from group `t` of `ka..`,
/// `za..`, `va..`, `xa..`.
fn write_corpus(dir: &Path, labels: usize) {
    let groups = [
        ["ka", "ke", "ki"],
        ["za", "ze", "zi"],
        ["va", "ve", "vi"],
        ["xa", "xe", "xi"],
    ];
    let mut s = String::new();
    for i in 0..240 {
        let label = i % labels;
        let tok = groups[label];
        let len = 2 + i % 7;
        let text: Vec<&str> = (0..len).map(|j| tok[(i + j) % 3]).collect();
        s.push_str(&format!(
            "{{\"text\":\"{}\",\"label\":{label}}}\n",
            text.join(" ")
        ));
    }
    fs::write(dir.join("corpus.jsonl"), s).unwrap();
}

#[test]
fn grammar_check_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("ok.grammar"), format!("{GRAMMAR_HEAD}{SECTIONS}")).unwrap();
    fs::write(
        d.join("dangling.grammar"),
        "<templates>\n[VERB] a [LABEL] [NOPE].\n<variables>\n[VERB]: write\n",
    )
    .unwrap();
    fs::write(
        d.join("unused.grammar"),
        format!("{GRAMMAR_HEAD}[UNUSED]: x\n"),
    )
    .unwrap();

    assert_eq!(code(&nlctrl(d, &["grammar-check", "ok.grammar"])), 0);
    let dangling = nlctrl(d, &["grammar-check", "dangling.grammar"]);
    assert_eq!(code(&dangling), 1);
    assert!(stderr(&dangling).contains("NOPE"), "{}", stderr(&dangling));
    assert_eq!(code(&nlctrl(d, &["grammar-check", "unused.grammar"])), 0);
    assert_eq!(
        code(&nlctrl(d, &["grammar-check", "--strict", "unused.grammar"])),
        1
    );
    assert_eq!(code(&nlctrl(d, &["grammar-check", "missing.grammar"])), 2);
    assert_eq!(
        code(&nlctrl(
            d,
            &["grammar-check", "builtin:synthetic", "--strict"]
        )),
        0
    );
    assert_eq!(code(&nlctrl(d, &["no-such-subcommand"])), 2);
    assert!(!d.join("out").exists(), "grammar-check writes nothing");
}

#[test]
fn generate_writes_records_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = nlctrl(
        d,
        &[
            "--seed",
            "4",
            "--out-dir",
            "g",
            "generate",
            "--grammar",
            "builtin:synthetic",
            "--label",
            "blue",
            "--count",
            "12",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let recs = jsonl(d.join("g/commands.jsonl"));
    assert_eq!(recs.len(), 12);
    assert!(recs
        .iter()
        .all(|r| r["label_id"] == 2 && r.get("length_id").is_none()));
    let m = json(d.join("g/manifest.json"));
    assert_eq!(m["subcommand"], "generate");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["config"]["count"], 12);
    assert!(m["inputs"]["builtin:synthetic"].is_string());
    assert!(m["outputs"]["commands.jsonl"].is_string());
}

#[test]
fn config_file_fills_unset_flags() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("cfg.json"),
        r#"{"generate": {"count": 7, "fill": "canonical"}}"#,
    )
    .unwrap();
    let args = [
        "--config",
        "cfg.json",
        "--out-dir",
        "g",
        "generate",
        "--grammar",
        "builtin:synthetic",
        "--count",
        "3",
    ];
    let out = nlctrl(d, &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = json(d.join("g/manifest.json"));
    assert_eq!(m["config"]["count"], 3, "flag wins over the file");
    assert_eq!(m["config"]["fill"], "canonical");

    fs::write(d.join("bad.json"), r#"{"bogus": 1}"#).unwrap();
    let out = nlctrl(
        d,
        &[
            "--config",
            "bad.json",
            "--out-dir",
            "h",
            "generate",
            "--grammar",
            "builtin:synthetic",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(!d.join("h").exists());
}

#[test]
fn zero_shot_split_records_blocked_class() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_corpus(d, 2);
    fs::write(d.join("g.grammar"), format!("{GRAMMAR_HEAD}{SECTIONS}")).unwrap();
    fs::write(
        d.join("g.meta.json"),
        r#"{"label_attr_names":["color"],"length_attr_names":["length"],"domains":["text"]}"#,
    )
    .unwrap();
    let out = nlctrl(
        d,
        &[
            "--out-dir",
            "s",
            "split",
            "--corpus",
            "corpus.jsonl",
            "--grammar",
            "g.grammar",
            "--kind",
            "zero-shot",
            "--blocked",
            "blue",
            "--unblock-lm",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = json(d.join("s/manifest.json"));
    assert_eq!(m["config"]["blocked"], "blue");
    assert_eq!(m["config"]["unblock_lm"], true);
    assert_eq!(m["config"]["resolved_kind"]["blocked"], 1);
    assert!(m["inputs"]
        .as_object()
        .unwrap()
        .keys()
        .any(|k| k.ends_with("g.meta.json")));
    let sup = jsonl(d.join("s/train_supervised.jsonl"));
    assert!(!sup.is_empty() && sup.iter().all(|e| e["label_id"] != 1));
    assert!(jsonl(d.join("s/train_lm.jsonl"))
        .iter()
        .any(|e| e["label_id"] == 1));
}

/// Runs split, pairs and train on a small corpus and returns the tempdir.
fn trained() -> TempDir {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_corpus(d, 4);
    let steps: [&[&str]; 3] = [
        &[
            "--out-dir",
            "s",
            "split",
            "--corpus",
            "corpus.jsonl",
            "--grammar",
            "builtin:synthetic",
            "--balance-lengths",
        ],
        &[
            "--out-dir",
            "p",
            "pairs",
            "--split",
            "s",
            "--grammar",
            "builtin:synthetic",
        ],
        &[
            "--out-dir",
            "m",
            "train",
            "--split",
            "s",
            "--pairs",
            "p",
            "--grammar",
            "builtin:synthetic",
            "--epochs",
            "2",
        ],
    ];
    for args in steps {
        let out = nlctrl(d, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
    }
    tmp
}

#[test]
fn pipeline_decodes_and_evaluates_deterministically() {
    let tmp = trained();
    let d = tmp.path();
    let log = jsonl(d.join("m/train_log.jsonl"));
    let names: Vec<&str> = log.iter().map(|l| l["model"].as_str().unwrap()).collect();
    assert_eq!(names, ["ngram", "nb", "binary", "align", "conditional"]);

    let decode = |out: &str| {
        let args = [
            "--seed",
            "2",
            "--out-dir",
            out,
            "decode",
            "--models",
            "m",
            "--method",
            "fudge-nl",
            "--lambda",
            "6",
            "--split",
            "s",
            "--grammar",
            "builtin:synthetic",
            "--count",
            "12",
        ];
        let o = nlctrl(d, &args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    decode("d1");
    decode("d2");
    let samples = jsonl(d.join("d1/samples.jsonl"));
    assert_eq!(samples.len(), 12);
    assert!(samples
        .iter()
        .all(|s| s["method"] == "fudge-nl" && s["lambda"] == 6.0));
    assert_eq!(
        fs::read(d.join("d1/samples.jsonl")).unwrap(),
        fs::read(d.join("d2/samples.jsonl")).unwrap()
    );

    for method in ["prefix", "fudge", "fudge-binary"] {
        let dir = format!("d-{method}");
        let o = nlctrl(
            d,
            &[
                "--out-dir",
                &dir,
                "decode",
                "--models",
                "m",
                "--method",
                method,
                "--scenario",
                "compositional",
                "--split",
                "s",
                "--grammar",
                "builtin:synthetic",
                "--count",
                "6",
            ],
        );
        assert_eq!(code(&o), 0, "{method}: {}", stderr(&o));
        assert!(jsonl(d.join(format!("{dir}/samples.jsonl")))
            .iter()
            .all(|s| s["lambda"] == 4.0));
    }
    let o = nlctrl(
        d,
        &[
            "--out-dir",
            "d-pl",
            "decode",
            "--models",
            "m",
            "--prompted",
            "--split",
            "s",
            "--grammar",
            "builtin:synthetic",
            "--count",
            "6",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = nlctrl(
        d,
        &[
            "--out-dir",
            "e",
            "eval",
            "--samples",
            "d1/samples.jsonl",
            "--split",
            "s",
            "--models",
            "m",
            "--oracle",
            "nb",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = json(d.join("e/metrics.json"));
    let c = &metrics["control"];
    let (l, n, comp) = (
        c["label_acc"].as_f64().unwrap(),
        c["length_acc"].as_f64().unwrap(),
        c["comp_acc"].as_f64().unwrap(),
    );
    assert!(comp <= l.min(n) + 1e-12);
    assert!(metrics["quality"]["ppl"].as_f64().unwrap() > 1.0);
    assert_eq!(jsonl(d.join("e/judgements.jsonl")).len(), 12);
}

#[test]
fn failures_leave_no_outputs() {
    let tmp = trained();
    let d = tmp.path();
    // --prompted needs the prefix method: a domain error
    let o = nlctrl(
        d,
        &[
            "--out-dir",
            "x",
            "decode",
            "--models",
            "m",
            "--method",
            "fudge",
            "--prompted",
            "--split",
            "s",
            "--grammar",
            "builtin:synthetic",
        ],
    );
    assert_eq!(code(&o), 1);
    assert!(!d.join("x").exists());
    // missing model directory: an I/O error
    let o = nlctrl(
        d,
        &[
            "--out-dir",
            "y",
            "decode",
            "--models",
            "nowhere",
            "--split",
            "s",
            "--grammar",
            "builtin:synthetic",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(!d.join("y").exists());
    // an input that no longer matches its manifest
    let split = d.join("s/split.json");
    let edited = fs::read_to_string(&split)
        .unwrap()
        .replacen("\"seed\": 0", "\"seed\": 9", 1);
    fs::write(&split, edited).unwrap();
    let o = nlctrl(
        d,
        &[
            "--out-dir",
            "z",
            "pairs",
            "--split",
            "s",
            "--grammar",
            "builtin:synthetic",
        ],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("does not match"), "{}", stderr(&o));
    assert!(!d.join("z").exists());
}

#[test]
fn synthetic_e2e_small_report() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let o = nlctrl(
        d,
        &[
            "--seed",
            "1",
            "--out-dir",
            "r",
            "synthetic-e2e",
            "--size",
            "small",
            "--generations",
            "12",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(d.join("r/report.json"));
    for block in ["full_data", "template_sets", "zero_shot", "compositional"] {
        assert!(!report[block].is_null(), "{block}");
    }
    assert_eq!(
        json(d.join("r/manifest.json"))["config"]["experiment"]["generations"],
        12
    );
}
