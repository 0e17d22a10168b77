use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gll(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gll"))
        .args(args)
        .arg("--quiet")
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.conf");
    fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = "seed = 3\ndataset.n = 30\ndataset.test_n = 12\nmodel.encoder = 2, 8, 2\n\
                     model.epochs = 6\nmodel.base = 6\nmodel.eval_every = 2\nmodel.k = 5\n";

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn gen_data_and_train_write_expected_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert!(gll(&["gen-data"], &cfg, &out).status.success());
    assert_eq!(first_line(&out.join("train.csv")), "node,x0,x1,label");
    assert_eq!(fs::read_to_string(out.join("test.csv")).unwrap().lines().count(), 13);

    let out = dir.path().join("train");
    assert!(gll(&["train"], &cfg, &out).status.success());
    assert_eq!(first_line(&out.join("metrics.csv")), "epoch,head,train_loss,train_acc,test_acc");
    assert!(out.join("model.bin").is_file());
    assert!(!out.join(".gll.lock").exists());
}

#[test]
fn unknown_key_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\nmodel.learning_rate = 0.1\n");
    let res = gll(&["train"], &cfg, &dir.path().join("out"));
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("model.learning_rate"));
}

#[test]
fn busy_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".gll.lock"), "1\n").unwrap();
    let res = gll(&["gen-data"], &cfg, &out);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.join("train.csv").exists());
}

#[test]
fn attack_dump_has_sidecar_and_checkpoint_reuse_matches() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}attack.kinds = fgsm\nattack.eps = 0.1\nattack.dump = true\n");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("first");
    assert!(gll(&["attack"], &cfg, &out).status.success());
    let bin = fs::read(out.join("adv_fgsm_0.1.bin")).unwrap();
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("adv_fgsm_0.1.json")).unwrap()).unwrap();
    assert_eq!(meta["cols"], 2);
    assert_eq!(meta["endianness"], "little");
    assert_eq!(bin.len(), 8 * 2 * meta["rows"].as_u64().unwrap() as usize);
    assert_eq!(meta["labels"].as_array().unwrap().len(), 12);

    let reuse = format!("{body}model.checkpoint = first/model.bin\n");
    let cfg = write_config(dir.path(), &reuse);
    let second = dir.path().join("second");
    assert!(gll(&["attack"], &cfg, &second).status.success());
    assert_eq!(
        fs::read(out.join("sweep.csv")).unwrap(),
        fs::read(second.join("sweep.csv")).unwrap()
    );
    assert!(!second.join("model.bin").exists());
}

#[test]
fn softmax_training_logs_graph_head_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}model.head = softmax\n"));
    let out = dir.path().join("out");
    assert!(gll(&["train"], &cfg, &out).status.success());
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let heads: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert!(heads.contains(&"softmax"));
    assert!(heads.contains(&"gll"));
}

#[test]
fn gradcheck_reports_success() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gradcheck.instances = 2\n");
    let out = dir.path().join("out");
    let res = gll(&["gradcheck"], &cfg, &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(first_line(&out.join("gradcheck.csv")), "parameter,analytic,numeric,relative_error");
}
