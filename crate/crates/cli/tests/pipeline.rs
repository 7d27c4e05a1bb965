mod support;

use support::{manifest, ok, p, read_reviews, run_file, small_config, synth_csv, SYNTH_APP};

#[test]
fn fixture_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let fixture = synth_csv(d, "store.csv", 150, 3);
    let path = |n: &str| p(&d.join(n));
    let with_cfg = |args: &[&str]| {
        let mut all = vec!["--config".to_string(), p(&cfg)];
        all.extend(args.iter().map(|s| s.to_string()));
        ok(all)
    };

    with_cfg(&[
        "scrape", "--app-id", SYNTH_APP, "--from", "2023-01-01", "--to", "2023-12-31", "--max", "40", "--source",
        &format!("fixture:{}", p(&fixture)), "--out", &path("scraped.csv"),
    ]);
    let scraped = read_reviews(&d.join("scraped.csv"));
    assert_eq!(scraped.len(), 150);
    let m = manifest(&run_file(&d.join("scraped.csv")));
    assert_eq!(m["subcommand"], "scrape");
    assert_eq!(m["result.pages"], "4");
    assert!(d.join("scraped.csv.manifest").exists());

    with_cfg(&[
        "filter", "--in", &path("scraped.csv"), "--out-candidates", &path("cand.csv"), "--out-rest", &path("rest.csv"),
        "--decisions", &path("decisions.csv"),
    ]);
    let cand = read_reviews(&d.join("cand.csv"));
    let rest = read_reviews(&d.join("rest.csv"));
    assert_eq!(cand.len() + rest.len(), 150);
    let related = |rs: &[sensor_core::Review]| rs.iter().filter(|r| r.gold_label.unwrap().is_privacy_related()).count();
    assert!(cand.len() >= 30, "{} candidates", cand.len());
    assert!(related(&cand) * 10 >= cand.len() * 8, "candidates are mostly privacy-related");

    with_cfg(&["prep", "--stage", "pre", "--in", &path("cand.csv"), "--out", &path("pre.csv")]);
    with_cfg(&["prep", "--stage", "post", "--in", &path("pre.csv"), "--out", &path("post.csv")]);
    let post = read_reviews(&d.join("post.csv"));
    assert!(post.iter().all(|r| r.tokens.as_ref().is_some_and(|t| !t.is_empty())));
    assert!(std::fs::read_to_string(d.join("post.csv.report")).unwrap().contains("stage = post"));

    with_cfg(&["split", "--in", &path("post.csv"), "--out-dir", &path("split")]);
    let sizes: Vec<usize> = ["train", "validation", "test"]
        .iter()
        .map(|s| read_reviews(&d.join(format!("split/{s}.csv"))).len())
        .collect();
    assert_eq!(sizes.iter().sum::<usize>(), post.len());

    with_cfg(&["augment", "--in", &path("split/train.csv"), "--out", &path("aug.csv")]);
    let aug = read_reviews(&d.join("aug.csv"));
    assert_eq!(aug.len(), sizes[0] * 10);
    assert!(aug.iter().all(|r| r.gold_label.is_some()));

    with_cfg(&["train-cbow", "--in", &path("aug.csv"), "--out", &path("emb.vec")]);
    with_cfg(&[
        "train-grace", "--train", &path("aug.csv"), "--val", &path("split/validation.csv"), "--embeddings",
        &path("emb.vec"), "--out", &path("grace.model"),
    ]);
    let m = manifest(&run_file(&d.join("grace.model")));
    assert_eq!(m["seed"], "5");
    assert!(d.join("grace.model.trace.csv").exists());

    with_cfg(&[
        "evaluate", "--model", &path("grace.model"), "--test", &path("split/test.csv"), "--out-report",
        &path("report.txt"),
    ]);
    let report = std::fs::read_to_string(d.join("report.txt")).unwrap();
    assert!(report.contains("macro_f1 = "));
    let confusion = std::fs::read_to_string(d.join("report.txt.confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 4);
    let m = manifest(&run_file(&d.join("report.txt")));
    assert_eq!(m["subcommand"], "evaluate");
    assert!(m.contains_key("finished") && m["finished"] != "running");
}

#[test]
fn secondary_commands_work_on_pipeline_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let path = |n: &str| p(&d.join(n));
    let with_cfg = |args: &[&str]| {
        let mut all = vec!["--config".to_string(), p(&cfg)];
        all.extend(args.iter().map(|s| s.to_string()));
        ok(all)
    };
    let train = synth_csv(d, "train.csv", 90, 4);
    let test = synth_csv(d, "test.csv", 30, 5);

    with_cfg(&["train-baseline", "--repr", "tfidf", "--in", &p(&train), "--out", &path("flat.model")]);
    with_cfg(&[
        "train-baseline", "--repr", "tfidf", "--hierarchical", "--loss", "hinge", "--in", &p(&train), "--out",
        &path("hier.model"),
    ]);
    with_cfg(&["train-cbow", "--in", &p(&train), "--out", &path("emb.vec")]);
    with_cfg(&[
        "train-baseline", "--repr", "cbow-mean", "--embeddings", &path("emb.vec"), "--in", &p(&train), "--out",
        &path("cbow.model"),
    ]);
    let m = manifest(&run_file(&d.join("hier.model")));
    assert_eq!((m["result.head"].as_str(), m["result.loss"].as_str()), ("hierarchical", "hinge"));

    for model in ["flat.model", "hier.model", "cbow.model"] {
        with_cfg(&["predict", "--model", &path(model), "--in", &p(&test), "--out", &path("pred.csv")]);
        let pred = read_reviews(&d.join("pred.csv"));
        assert_eq!(pred.len(), 30);
        assert!(pred.iter().all(|r| r.model_label.is_some() && r.model_probs.is_some()));
    }

    // Kappa between gold and predicted labels of the same reviews.
    let out = with_cfg(&[
        "--manifest", &path("kappa.run"), "kappa", "--file-a", &p(&test), "--file-b", &path("pred.csv"), "--column-b",
        "model_label",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("items = 30"), "{text}");
    assert_eq!(manifest(&d.join("kappa.run"))["result.column_b"], "model_label");

    with_cfg(&["augment", "--in", &p(&test), "--plan", "1,1,0,0,0", "--out", &path("aug.csv")]);
    with_cfg(&["diversity", "--before", &p(&test), "--after", &path("aug.csv"), "--out", &path("div.csv")]);
    let div = std::fs::read_to_string(d.join("div.csv")).unwrap();
    assert!(div.starts_with("row,before,after"));
    assert!(div.lines().any(|l| l.starts_with("mean,")));

    let out = with_cfg(&["bench", "--model", &path("flat.model"), "--runs", "5", "--warmups", "1", "--out", &path("bench.txt")]);
    assert!(out.stdout.is_empty());
    assert!(std::fs::read_to_string(d.join("bench.txt")).unwrap().contains("runs = 5"));

    with_cfg(&[
        "filter", "--in", &p(&test), "--out-candidates", &path("c.csv"), "--out-rest", &path("r.csv"), "--decisions",
        &path("dec.csv"), "--sample-irrelevant", "2", "--out-sample", &path("sample.csv"),
    ]);
    assert_eq!(read_reviews(&d.join("sample.csv")).len(), 2);
}
