use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "seed = 3

[gen]
articles = 300
queries = 400

[model]
head_hidden = [16]

[optimizer]
epochs = 2
learning_rate = 3e-3
";

fn shopmatch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shopmatch")).args(args).current_dir(dir).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let o = shopmatch(dir.path(), &["gen", "--config", "run.toml", "--out", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn gen_writes_manifest_with_oracle_floor() {
    let dir = setup();
    let manifest = fs::read_to_string(dir.path().join("data/manifest.toml")).unwrap();
    assert!(manifest.contains("median_rank"), "{manifest}");
    for f in ["fdna.fstr", "generic.fstr", "images.fstr", "queries.qstr", "static_queries.qstr", "annotations.tsv"] {
        assert!(dir.path().join("data/test").join(f).is_file(), "{f}");
        assert!(dir.path().join("data/train").join(f).is_file(), "{f}");
    }
}

#[test]
fn invalid_generator_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[gen]\nmulti_label_fraction = 1.5\n").unwrap();
    let o = shopmatch(dir.path(), &["gen", "--config", "bad.toml", "--out", "data"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[validation]:") && err.contains("multi_label_fraction"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[train]\nbatchsize = 3\n").unwrap();
    let o = shopmatch(dir.path(), &["gen", "--config", "bad.toml"]);
    assert!(stderr(&o).starts_with("error[config]:"), "{}", stderr(&o));
}

#[test]
fn static_linear_cannot_be_trained() {
    let dir = setup();
    let o = shopmatch(dir.path(), &["train", "--config", "run.toml", "--variant", "static-linear"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error[config]:") && err.contains("has no trainable loss"), "{err}");
}

#[test]
fn unknown_variant_and_bad_flags_fail_on_one_line() {
    let dir = setup();
    let o = shopmatch(dir.path(), &["train", "--config", "run.toml", "--variant", "resnet"]);
    assert!(stderr(&o).starts_with("error[config]:"), "{}", stderr(&o));
    let o = shopmatch(dir.path(), &["eval", "--variant", "linear", "--seed", "minus-one"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(stderr(&o).starts_with("error[usage]:"));
}

#[test]
fn train_eval_round_trip_and_mismatch() {
    let dir = setup();
    let d = dir.path();
    let o = shopmatch(d, &["train", "--config", "run.toml", "--variant", "studio2shop", "--out", "runs"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = d.join("runs/studio2shop.ckpt");
    let model = shopmatch::Model32::load(&ckpt).unwrap();
    assert_eq!(model.to_bytes().unwrap(), fs::read(&ckpt).unwrap());
    let report = fs::read_to_string(d.join("runs/studio2shop_train.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);

    let args = ["eval", "--config", "run.toml", "--variant", "studio2shop", "--checkpoint", "runs/studio2shop.ckpt", "--out", "runs"];
    assert!(shopmatch(d, &args).status.success());
    let first = fs::read(d.join("runs/studio2shop_metrics.csv")).unwrap();
    assert!(shopmatch(d, &args).status.success());
    assert_eq!(first, fs::read(d.join("runs/studio2shop_metrics.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("variant,top1,top5,top10,top20,top50,top1pct,avg,median\nstudio2shop,"), "{text}");
    assert!(fs::read_to_string(d.join("runs/studio2shop_ranks.tsv")).unwrap().starts_with("query_id\tarticle_id\trank\n"));

    let o = shopmatch(d, &["eval", "--config", "run.toml", "--variant", "linear", "--checkpoint", "runs/studio2shop.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[config]:"), "{}", stderr(&o));
}

#[test]
fn two_stage_with_full_shortlist_matches_plain_eval() {
    let dir = setup();
    let d = dir.path();
    for v in ["studio2shop", "linear"] {
        assert!(shopmatch(d, &["train", "--config", "run.toml", "--variant", v, "--out", "runs"]).status.success());
    }
    let base = ["eval", "--config", "run.toml", "--variant", "studio2shop", "--checkpoint", "runs/studio2shop.ckpt", "--out", "runs"];
    assert!(shopmatch(d, &base).status.success());
    let m = fs::read_to_string(d.join("data/test/annotations.tsv")).unwrap();
    assert!(!m.is_empty());
    let mut args = base.to_vec();
    args.extend(["--two-stage", "--shortlist", "60", "--prefilter", "runs/linear.ckpt"]);
    let o = shopmatch(d, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("recall@60: 1.000000"));
    let plain = fs::read(d.join("runs/studio2shop_ranks.tsv")).unwrap();
    let staged = fs::read(d.join("runs/studio2shop-two-stage-60_ranks.tsv")).unwrap();
    assert_eq!(plain, staged);

    let mut missing = base.to_vec();
    missing.push("--two-stage");
    assert!(stderr(&shopmatch(d, &missing)).starts_with("error[config]:"));
}

#[test]
fn untrained_eval_and_static_linear_need_no_checkpoint() {
    let dir = setup();
    let d = dir.path();
    for v in ["static-linear", "studio2shop"] {
        let o = shopmatch(d, &["eval", "--config", "run.toml", "--variant", v, "--out", "runs"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(d.join(format!("runs/{v}_metrics.csv")).is_file());
    }
}

#[test]
fn bench_writes_one_row_per_sweep_point() {
    let dir = setup();
    let d = dir.path();
    let o = shopmatch(
        d,
        &["bench", "--config", "run.toml", "--variant", "linear", "--sweep", "10,20,40", "--repetitions", "3", "--out", "runs"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(d.join("runs/linear_bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "n_queries,articles,chunk,repetitions,mean_wall_s,per_query_ms");
    assert_eq!(rows.len(), 4);
    let first: Vec<&str> = rows[1].split(',').collect();
    assert_eq!((first[0], first[3]), ("10", "3"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), CONFIG).unwrap();
    for (seed, out) in [("3", "a"), ("3", "b"), ("4", "c")] {
        assert!(shopmatch(d, &["gen", "--config", "run.toml", "--seed", seed, "--out", out]).status.success());
    }
    let read = |o: &str| fs::read(d.join(o).join("test/fdna.fstr")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn shipped_desk_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let cfg = shopmatch::cli::RunConfig::load(path).unwrap();
    assert_eq!(cfg.optimizer.epochs, 40);
    assert_eq!(cfg.bench.n_queries, vec![100, 200, 400, 800]);
    cfg.gen.validate().unwrap();
}
