use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hat")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SYNTHETIC: &str = r#"
seeds = [3]
output = "out"
modes = ["hat", "sgd", "multitask"]

[suite]
kind = "synthetic"
tasks = 2

[suite.synthetic]
classes = 3
dim = 6
separation = 3.0
train_per_class = 60
test_per_class = 30

[model]
hidden = [12, 12]

[train]
max_epochs = 4
batch_size = 16
"#;

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn seed_dirs(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for spec in fs::read_dir(root).unwrap() {
        for seed in fs::read_dir(spec.unwrap().path()).unwrap() {
            let p = seed.unwrap().path();
            if p.is_dir() {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = hat(dir.path(), &["run", "--config", "absent.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.toml"));
}

#[test]
fn misspelled_key_is_rejected_before_training() {
    let (dir, _) = setup(&SYNTHETIC.replace("max_epochs = 4", "max_epoch = 4"));
    let o = hat(dir.path(), &["run", "--config", "exp.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("max_epoch"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn run_report_and_rerun() {
    let (dir, _) = setup(SYNTHETIC);
    let o = hat(dir.path(), &["run", "--config", "exp.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).matches("trained").count(), 3);

    let seeds = seed_dirs(&dir.path().join("out"));
    assert_eq!(seeds.len(), 3);
    for s in &seeds {
        for f in ["report.json", "log.jsonl", "accuracy.tsv", "checkpoints/task-1.ckpt", "checkpoints/task-2.ckpt"] {
            assert!(s.join(f).is_file(), "{} lacks {f}", s.display());
        }
        assert!(s.parent().unwrap().join("config.toml").is_file());
    }
    let hat_dir = seeds.iter().find(|s| s.to_string_lossy().contains("/hat-")).unwrap();
    assert!(hat_dir.join("capacity.tsv").is_file() && hat_dir.join("reuse.tsv").is_file());
    let acc = fs::read_to_string(hat_dir.join("accuracy.tsv")).unwrap();
    assert_eq!(acc.lines().count(), 1 + 3);

    // second invocation skips every seed
    let again = hat(dir.path(), &["run", "--config", "exp.toml"]);
    assert!(again.status.success());
    assert_eq!(stdout(&again).matches("skipped").count(), 3);

    // forced rerun reproduces reports and checkpoints bit for bit
    let before: Vec<Vec<u8>> = seeds.iter().flat_map(|s| [fs::read(s.join("report.json")).unwrap(), fs::read(s.join("checkpoints/task-2.ckpt")).unwrap()]).collect();
    let forced = hat(dir.path(), &["run", "--config", "exp.toml", "--force"]);
    assert!(forced.status.success());
    let after: Vec<Vec<u8>> = seeds.iter().flat_map(|s| [fs::read(s.join("report.json")).unwrap(), fs::read(s.join("checkpoints/task-2.ckpt")).unwrap()]).collect();
    assert!(before == after);

    let ratios = hat(dir.path(), &["report", "--mode", "ratios", "out"]);
    assert!(ratios.status.success(), "{}", stderr(&ratios));
    let table = stdout(&ratios);
    assert!(table.starts_with("approach\tt\trho_mean\trho_std\n"));
    assert!(table.contains("\nhat\t2\t") && table.contains("\nsgd\t2\t"));
    // single seed: std column is zero
    assert!(table.lines().skip(1).all(|l| l.ends_with("\t0.000000")));

    let acc = hat(dir.path(), &["report", "--mode", "accuracy", "out"]);
    assert!(stdout(&acc).lines().skip(1).all(|l| l.ends_with("\t1")));
    let monitor = hat(dir.path(), &["report", "--mode", "monitor", "out"]);
    let monitor = stdout(&monitor);
    assert!(monitor.starts_with("approach\tseed\tupdate\ttask\tepoch\tcapacity\tlayer_1\tlayer_2\n"));
    assert!(monitor.lines().skip(1).all(|l| l.starts_with("hat\t3\t")));
    assert!(monitor.lines().count() > 4);

    // without a joint reference the ratios cannot be computed
    let hat_only = hat(dir.path(), &["report", "--mode", "ratios", hat_dir.to_str().unwrap()]);
    assert_eq!(hat_only.status.code(), Some(1));
    assert!(stderr(&hat_only).contains("joint reference"));

    // compression: argument errors, unknown task, and the zero threshold
    let ckpt = hat_dir.join("checkpoints/task-2.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    assert_eq!(hat(dir.path(), &["compress", "--ckpt", ckpt, "--task", "1", "--c", "-1"]).status.code(), Some(2));
    assert_eq!(hat(dir.path(), &["compress", "--ckpt", ckpt, "--task", "3"]).status.code(), Some(2));
    let z = hat(dir.path(), &["compress", "--ckpt", ckpt, "--task", "2", "--threshold", "0"]);
    assert!(z.status.success(), "{}", stderr(&z));
    let row: Vec<String> = stdout(&z).lines().nth(1).unwrap().split('\t').map(str::to_string).collect();
    assert_eq!(row[3], "1.000000");
    assert_eq!(row[8], row[9], "masked and pruned accuracy differ");
    assert!(hat_dir.join("compress/task-2-c1.5-thr0/pruned.ckpt").is_file());
}

#[test]
fn preset_listing() {
    let dir = tempfile::tempdir().unwrap();
    let o = hat(dir.path(), &["presets"]);
    let names = stdout(&o);
    for p in ["split_mnist", "permuted_mnist_small", "permuted_mnist_medium", "hyper_sweep"] {
        assert!(names.contains(p));
    }
    let text = stdout(&hat(dir.path(), &["presets", "split_mnist"]));
    assert!(text.contains("c = 0.1"));
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("HAT_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("train-images-idx3-ubyte").is_file().then_some(dir)
}

#[test]
fn fetch_data_verifies_and_quarantines() {
    let Some(src) = mnist_dir() else {
        eprintln!("MNIST not available; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let dest = dir.path().join("mnist");
    let src = src.to_str().unwrap();
    let first = hat(dir.path(), &["fetch-data", "--name", "mnist", "--dest", "mnist", "--source", src]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stdout(&first).contains("60000 train / 10000 test"));
    let second = hat(dir.path(), &["fetch-data", "--name", "mnist", "--dest", "mnist", "--source", src]);
    assert_eq!(stdout(&second).matches("present").count(), 4);

    // a corrupted source is refused and quarantined
    let bad = dir.path().join("bad");
    fs::create_dir(&bad).unwrap();
    for f in fs::read_dir(&dest).unwrap() {
        let f = f.unwrap();
        if f.path().is_file() {
            fs::copy(f.path(), bad.join(f.file_name())).unwrap();
        }
    }
    let labels = bad.join("t10k-labels-idx1-ubyte");
    let mut bytes = fs::read(&labels).unwrap();
    bytes[100] ^= 1;
    fs::write(&labels, bytes).unwrap();
    fs::remove_file(dest.join("t10k-labels-idx1-ubyte")).unwrap();
    let o = hat(dir.path(), &["fetch-data", "--name", "mnist", "--dest", "mnist", "--source", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("integrity"));
    assert!(dest.join("quarantine/t10k-labels-idx1-ubyte").is_file());
    assert!(!dest.join("t10k-labels-idx1-ubyte").exists());
}

#[test]
fn split_mnist_smoke_run_gives_two_by_two_matrix() {
    let Some(data) = mnist_dir() else {
        eprintln!("MNIST not available; skipping");
        return;
    };
    let config = format!(
        r#"
output = "out"
[suite]
kind = "split"
groups = [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]]
data_dir = "{}"
[model]
hidden = [128]
[train]
max_epochs = 1
[hat]
c = 0.1
"#,
        data.display()
    );
    let (dir, _) = setup(&config);
    let o = hat(dir.path(), &["run", "--config", "exp.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let seed = &seed_dirs(&dir.path().join("out"))[0];
    let acc = fs::read_to_string(seed.join("accuracy.tsv")).unwrap();
    let cells: Vec<&str> = acc.lines().skip(1).collect();
    assert_eq!(cells.len(), 3);
    for c in cells {
        let a: f64 = c.split('\t').nth(2).unwrap().parse().unwrap();
        assert!(a > 0.9, "{c}");
    }
}
