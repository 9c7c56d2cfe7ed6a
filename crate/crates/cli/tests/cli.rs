use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hqmm::data::read_dataset;
use hqmm::metrics::evaluate_da;
use hqmm::model_file::{load_model, save_model, Metadata};
use hqmm::{encode_hmm, Hmm, Model};
use nalgebra::DMatrix;
use tempfile::TempDir;

fn hqmm_cmd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hqmm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn splice_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/splice.dat")
}

/// Value printed after `key` on its own output line.
fn field(text: &str, key: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no line starting with {key:?} in:\n{text}"));
    line[key.len()..].trim().parse().unwrap()
}

fn save(dir: &Path, name: &str, model: Model) -> PathBuf {
    let path = dir.join(name);
    save_model(&path, &model, &Metadata::default()).unwrap();
    path
}

/// HMM that always emits `symbol` out of `s`.
fn constant_hmm(symbol: usize, s: usize) -> Hmm {
    let mut emission = DMatrix::zeros(s, 1);
    emission[(symbol, 0)] = 1.0;
    Hmm::new(DMatrix::identity(1, 1), emission, vec![1.0]).unwrap()
}

fn generate(dir: &Path, kind: &str, seed: &str) -> Output {
    hqmm_cmd(
        &[
            "generate",
            "--kind",
            kind,
            "--n",
            "3",
            "--s",
            "3",
            "--w",
            "2",
            "--num",
            "24",
            "--len",
            "60",
            "--seed",
            seed,
            "--out",
            "data.ndjson",
            "--model-out",
            "truth.json",
        ],
        dir,
    )
}

#[test]
fn gradcheck_defaults_pass() {
    let dir = TempDir::new().unwrap();
    let out = hqmm_cmd(&["gradcheck"], dir.path());
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("PASS"));
    assert_eq!(stdout(&out).matches("trial ").count(), 25);
}

#[test]
fn sabotaged_gradient_fails() {
    let dir = TempDir::new().unwrap();
    let out = hqmm_cmd(&["gradcheck", "--trials", "3", "--sabotage"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn gradcheck_rejects_zero_trials() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&hqmm_cmd(&["gradcheck", "--trials", "0"], dir.path())), 2);
    assert_eq!(code(&hqmm_cmd(&["gradcheck", "--h", "0"], dir.path())), 2);
}

#[test]
fn training_is_deterministic_under_seed() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&generate(dir.path(), "hqmm", "4")), 0);
    let args = |out: &'static str| {
        vec![
            "train",
            "--data",
            "data.ndjson",
            "--n",
            "2",
            "--w",
            "2",
            "--epochs",
            "5",
            "--batches",
            "3",
            "--val-split",
            "0.25",
            "--seed",
            "9",
            "--out",
            out,
        ]
    };
    let a = hqmm_cmd(&args("a.json"), dir.path());
    let b = hqmm_cmd(&args("b.json"), dir.path());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0);
    let a_text = fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a_text, fs::read(dir.path().join("b.json")).unwrap());
    assert!(stdout(&a).contains("validation: 6 sequences"));

    let history = fs::read_to_string(dir.path().join("a.json.history.csv")).unwrap();
    assert!(history.starts_with("epoch,batch,loss,tau,grad_norm_raw,stiefel_residual,wall_ms"));
    assert_eq!(history.lines().count(), 1 + 5 * 3);

    let (model, meta) = load_model(&dir.path().join("a.json")).unwrap();
    let Model::Hqmm(m) = model else {
        panic!("expected an hqmm")
    };
    assert_eq!((m.n(), m.s(), m.w()), (2, 3, 2));
    assert!(meta.final_loss.unwrap() > 0.0);
    assert!(meta.validation_da.is_some());
}

#[test]
fn training_defaults_are_recorded() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&generate(dir.path(), "hmm", "2")), 0);
    let out = hqmm_cmd(
        &["train", "--data", "data.ndjson", "--n", "2", "--out", "m.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (_, meta) = load_model(&dir.path().join("m.json")).unwrap();
    let train = &meta.config.unwrap()["train"];
    assert_eq!(train["tau"], 0.75);
    assert_eq!(train["alpha"], 0.92);
    assert_eq!(train["beta"], 0.9);
    assert_eq!(train["epochs"], 60);
}

#[test]
fn hmm_training_warns_about_manifold_flags() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&generate(dir.path(), "hmm", "3")), 0);
    let out = hqmm_cmd(
        &[
            "train",
            "--data",
            "data.ndjson",
            "--kind",
            "hmm",
            "--n",
            "2",
            "--tau",
            "0.1",
            "--epochs",
            "3",
            "--out",
            "h.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let err = stderr(&out);
    assert!(
        err.contains("warning") && err.contains("--tau") && err.contains("--epochs"),
        "{err}"
    );
    assert!(matches!(
        load_model(&dir.path().join("h.json")).unwrap().0,
        Model::Hmm(_)
    ));
}

#[test]
fn train_rejects_bad_input() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&generate(dir.path(), "hmm", "3")), 0);
    let run = |extra: &[&str]| {
        let mut args = vec!["train", "--data", "data.ndjson", "--out", "m.json"];
        args.extend_from_slice(extra);
        code(&hqmm_cmd(&args, dir.path()))
    };
    assert_eq!(run(&["--n", "2", "--tau", "-1"]), 2);
    assert_eq!(run(&["--n", "2", "--val-split", "1.5"]), 2);
    assert_eq!(run(&["--n", "2", "--s", "2"]), 2);
    assert_eq!(run(&[]), 2);
    assert_eq!(
        code(&hqmm_cmd(
            &["train", "--data", "nope.ndjson", "--n", "2", "--out", "m.json"],
            dir.path()
        )),
        2
    );
}

#[test]
fn eval_matches_the_generator_oracle() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&generate(dir.path(), "hqmm", "11")), 0);
    let out = hqmm_cmd(
        &[
            "eval",
            "--model",
            "truth.json",
            "--data",
            "data.ndjson",
            "--burn-in",
            "5",
            "--csv",
            "da.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let (truth, _) = load_model(&dir.path().join("truth.json")).unwrap();
    let data = read_dataset(&dir.path().join("data.ndjson")).unwrap();
    let oracle = evaluate_da(&truth, &data.sequences, 5).unwrap();

    let mut reader = csv::Reader::from_path(dir.path().join("da.csv")).unwrap();
    let rows: Vec<(usize, usize, f64, f64)> = reader.deserialize().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 24);
    for (row, expected) in rows.iter().zip(&oracle.scores) {
        assert_eq!(row.1, 60);
        assert_eq!(row.3, *expected);
    }
    assert!((field(&stdout(&out), "mean DA:") - oracle.mean).abs() < 1e-6);
    assert!((field(&stdout(&out), "std DA:") - oracle.std_dev).abs() < 1e-6);
}

#[test]
fn uniform_model_scores_zero_da() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&generate(dir.path(), "hmm", "6")), 0);
    save(dir.path(), "u.json", Model::Hmm(Hmm::uniform(2, 3)));
    let out = hqmm_cmd(
        &["eval", "--model", "u.json", "--data", "data.ndjson", "--csv", "da.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(dir.path().join("da.csv")).unwrap();
    for line in text.lines().skip(1) {
        let da: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(da.abs() < 1e-12, "{line}");
    }
}

#[test]
fn eval_exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&generate(dir.path(), "hmm", "6")), 0);
    let missing = hqmm_cmd(
        &["eval", "--model", "missing.json", "--data", "data.ndjson"],
        dir.path(),
    );
    assert_eq!(code(&missing), 2);
    assert!(stderr(&missing).contains("missing.json"));

    fs::write(dir.path().join("bad.json"), "{\"kind\": \"hmm\"}").unwrap();
    assert_eq!(
        code(&hqmm_cmd(
            &["eval", "--model", "bad.json", "--data", "data.ndjson"],
            dir.path()
        )),
        2
    );

    // A model that cannot produce the observed symbols is a numerical failure.
    save(dir.path(), "zero.json", Model::Hmm(constant_hmm(0, 3)));
    assert_eq!(
        code(&hqmm_cmd(
            &["eval", "--model", "zero.json", "--data", "data.ndjson"],
            dir.path()
        )),
        1
    );
}

#[test]
fn uniform_models_on_splice_are_at_chance() {
    let dir = TempDir::new().unwrap();
    save(dir.path(), "u.json", Model::Hmm(Hmm::uniform(1, 4)));
    let data = splice_path();
    let out = hqmm_cmd(
        &[
            "classify",
            "--data",
            data.to_str().unwrap(),
            "--models",
            "u.json,u.json,u.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!((field(&text, "mean balanced accuracy:") - 1.0 / 3.0).abs() < 1e-4);
    // Every tie goes to the first label, EI.
    assert!((field(&text, "mean accuracy:") - 762.0 / 3175.0).abs() < 1e-4);
}

#[test]
fn oracle_models_classify_perfectly() {
    let dir = TempDir::new().unwrap();
    let mut lines = String::new();
    for i in 0..6 {
        let label = i % 2;
        lines.push_str(&format!(
            "{{\"label\":{label},\"symbols\":[{label},{label},{label}]}}\n"
        ));
    }
    fs::write(dir.path().join("labeled.ndjson"), lines).unwrap();
    save(dir.path(), "zero.json", Model::Hmm(constant_hmm(0, 2)));
    save(dir.path(), "one.json", Model::Hqmm(encode_hmm(&constant_hmm(1, 2))));
    let out = hqmm_cmd(
        &[
            "classify",
            "--data",
            "labeled.ndjson",
            "--models",
            "zero.json",
            "--models",
            "one.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(field(&stdout(&out), "mean accuracy:"), 1.0);

    let mismatch = hqmm_cmd(
        &["classify", "--data", "labeled.ndjson", "--models", "zero.json"],
        dir.path(),
    );
    assert_eq!(code(&mismatch), 2);
    assert_eq!(
        code(&hqmm_cmd(&["classify", "--data", "labeled.ndjson"], dir.path())),
        2
    );
}

#[test]
fn cross_validated_classification_reports_every_fold() {
    let dir = TempDir::new().unwrap();
    let mut lines = String::new();
    for i in 0..20 {
        let label = i % 2;
        let symbols: Vec<String> = (0..12)
            .map(|t| if label == 0 { t % 2 } else { (t / 3) % 2 }.to_string())
            .collect();
        lines.push_str(&format!("{{\"label\":{label},\"symbols\":[{}]}}\n", symbols.join(",")));
    }
    fs::write(dir.path().join("labeled.ndjson"), lines).unwrap();
    let out = hqmm_cmd(
        &[
            "classify",
            "--data",
            "labeled.ndjson",
            "--folds",
            "4",
            "--n",
            "2",
            "--epochs",
            "5",
            "--batches",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("fold ")).count(), 4);
    let mean = field(&text, "mean accuracy:");
    assert!((0.0..=1.0).contains(&mean));
    assert_eq!(
        code(&hqmm_cmd(
            &["classify", "--data", "labeled.ndjson", "--folds", "1", "--n", "2"],
            dir.path()
        )),
        2
    );
}

#[test]
fn sampling_is_seeded() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&generate(dir.path(), "hqmm", "8")), 0);
    let run = |out: &str, seed: &str| {
        code(&hqmm_cmd(
            &[
                "sample",
                "--model",
                "truth.json",
                "--num",
                "5",
                "--len",
                "20",
                "--seed",
                seed,
                "--out",
                out,
            ],
            dir.path(),
        ))
    };
    assert_eq!(run("a.ndjson", "1"), 0);
    assert_eq!(run("b.ndjson", "1"), 0);
    assert_eq!(run("c.ndjson", "2"), 0);
    let read = |name: &str| fs::read(dir.path().join(name)).unwrap();
    assert_eq!(read("a.ndjson"), read("b.ndjson"));
    assert_ne!(read("a.ndjson"), read("c.ndjson"));
    let set = read_dataset(&dir.path().join("a.ndjson")).unwrap();
    assert_eq!(set.len(), 5);
    assert!(set.sequences.iter().all(|s| s.len() == 20));
    assert_eq!(
        code(&hqmm_cmd(
            &[
                "sample",
                "--model",
                "truth.json",
                "--num",
                "5",
                "--len",
                "0",
                "--out",
                "e.ndjson"
            ],
            dir.path()
        )),
        2
    );
}

#[test]
fn embedded_hmm_samples_like_its_source() {
    let dir = TempDir::new().unwrap();
    let hmm = Hmm::random(3, 4, 0.7, 21).unwrap();
    save(dir.path(), "hmm.json", Model::Hmm(hmm.clone()));
    save(dir.path(), "hqmm.json", Model::Hqmm(encode_hmm(&hmm)));
    let num = 4000;
    for (model, out) in [("hmm.json", "a.ndjson"), ("hqmm.json", "b.ndjson")] {
        let run = hqmm_cmd(
            &[
                "sample",
                "--model",
                model,
                "--num",
                &num.to_string(),
                "--len",
                "2",
                "--seed",
                "5",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert_eq!(code(&run), 0, "{}", stderr(&run));
    }
    let counts = |name: &str| {
        let set = read_dataset(&dir.path().join(name)).unwrap();
        let mut first = [0.0; 4];
        let mut pairs = [0.0; 16];
        for seq in &set.sequences {
            let y = seq.symbols();
            first[y[0]] += 1.0;
            pairs[4 * y[0] + y[1]] += 1.0;
        }
        (first, pairs)
    };
    let (a1, a2) = counts("a.ndjson");
    let (b1, b2) = counts("b.ndjson");
    let n = num as f64;
    let within = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).all(|(&x, &y)| {
            let p = (x + y) / (2.0 * n);
            let sigma = (2.0 * p * (1.0 - p) / n).sqrt();
            (x / n - y / n).abs() <= 3.0 * sigma.max(1.0 / n)
        })
    };
    assert!(within(&a1, &b1), "{a1:?} vs {b1:?}");
    assert!(within(&a2, &b2), "{a2:?} vs {b2:?}");
}

#[test]
fn generated_models_reload_and_match_their_data() {
    let dir = TempDir::new().unwrap();
    let out = generate(dir.path(), "hqmm", "13");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (model, meta) = load_model(&dir.path().join("truth.json")).unwrap();
    assert_eq!(meta.seed, Some(13));
    let Model::Hqmm(m) = model else {
        panic!("expected an hqmm")
    };
    assert_eq!((m.n(), m.s(), m.w()), (3, 3, 2));
    let set = read_dataset(&dir.path().join("data.ndjson")).unwrap();
    assert_eq!(set.alphabet_size(), 3);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("data.ndjson.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["generator"]["seed"], 13);
    assert_eq!(meta["model"], "truth.json");
}

#[test]
fn splice_label_training() {
    let dir = TempDir::new().unwrap();
    let data = splice_path();
    let out = hqmm_cmd(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--label",
            "EI",
            "--n",
            "2",
            "--epochs",
            "2",
            "--batch-size",
            "100",
            "--out",
            "ei.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("train: 762 sequences"), "{}", stdout(&out));
    let bad = hqmm_cmd(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--label",
            "XX",
            "--n",
            "2",
            "--out",
            "x.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&bad), 2);
}
