use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cte_core::ingest::{decode_archive, encode_spike_file, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
use cte_core::snn::{checkpoint, Architecture, LifParams, NetworkParams};
use cte_core::types::{Shape4, SpikeTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cte"))
        .args(args)
        .output()
        .expect("run cte")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Thick random strokes on a dark background plus a little salt noise.
fn synthetic_digit(rng: &mut ChaCha8Rng, label: u8) -> Vec<u8> {
    let mut px = vec![0u8; 28 * 28];
    let (x0, y0) = (rng.gen_range(6..12) as f64, rng.gen_range(5..10) as f64);
    let (x1, y1) = (
        x0 + 6.0 + label as f64 * 0.8,
        y0 + rng.gen_range(10..16) as f64,
    );
    for k in 0..=60 {
        let f = k as f64 / 60.0;
        let (cx, cy) = (x0 + (x1 - x0) * f, y0 + (y1 - y0) * f);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (cx as i32 + dx, cy as i32 + dy);
                if (0..28).contains(&x) && (0..28).contains(&y) {
                    px[y as usize * 28 + x as usize] = rng.gen_range(180..=255);
                }
            }
        }
    }
    for _ in 0..4 {
        px[rng.gen_range(0..784)] = 255;
    }
    px
}

fn write_mnist(dir: &Path, train: usize, test: usize) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for (prefix, n) in [("train", train), ("t10k", test)] {
        let mut img = Vec::new();
        let mut lab = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n as u32, 28, 28] {
            img.extend_from_slice(&v.to_be_bytes());
        }
        for v in [IDX_LABELS_MAGIC, n as u32] {
            lab.extend_from_slice(&v.to_be_bytes());
        }
        for i in 0..n {
            let y = (i % 10) as u8;
            img.extend(synthetic_digit(&mut rng, y));
            lab.push(y);
        }
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), img).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), lab).unwrap();
    }
}

fn aer(x: u8, y: u8, p: u8, t: u32) -> [u8; 5] {
    [
        x,
        y,
        (p << 7) | ((t >> 16) as u8 & 0x7f),
        (t >> 8) as u8,
        t as u8,
    ]
}

/// A bar sweeping across the sensor plus uniform background noise events.
fn write_nmnist(dir: &Path, per_class: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for split in ["Train", "Test"] {
        for d in 0..3u8 {
            let cdir = dir.join(split).join(d.to_string());
            fs::create_dir_all(&cdir).unwrap();
            for k in 0..per_class {
                let mut bytes = Vec::new();
                for step in 0..300u32 {
                    let t = step * 1000;
                    let bx = 4 + (step as usize * 24 / 300) as u8;
                    for dy in 0..8u8 {
                        for dx in 0..3u8 {
                            bytes.extend(aer(bx + dx, 8 + d * 5 + dy, (step % 2) as u8, t));
                        }
                    }
                    for _ in 0..3 {
                        bytes.extend(aer(
                            rng.gen_range(0..34),
                            rng.gen_range(0..34),
                            rng.gen_range(0..2),
                            t + 500,
                        ));
                    }
                }
                fs::write(cdir.join(format!("{k:05}.bin")), bytes).unwrap();
            }
        }
    }
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn mnist(train: usize, test: usize) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        write_mnist(&root.join("mnist"), train, test);
        Fixture { _tmp: tmp, root }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.root.join(p)
    }

    fn mnist_set(&self) -> String {
        format!("mnist_dir={}", s(&self.path("mnist")))
    }
}

#[test]
fn encode_writes_archive_and_report() {
    let f = Fixture::mnist(10, 20);
    let out = f.path("enc");
    let o = cte(&["encode", "--set", &f.mnist_set(), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let entries = decode_archive(&fs::read(out.join("test.ctea")).unwrap()).unwrap();
    assert_eq!(entries.len(), 20);
    let rows = csv_rows(&out.join("test_encoding.csv"));
    assert_eq!(rows.len(), 21);
    assert_eq!(rows[20][0], "aggregate");
    for (e, r) in entries.iter().zip(&rows) {
        assert_eq!(r[2].parse::<usize>().unwrap(), e.spikes.count_ones());
        assert_eq!(r[1].parse::<u8>().unwrap(), e.label.unwrap());
        assert!(e.spikes.count_ones() > 0);
    }

    // stats totals agree with the archive's record counts
    let o = cte(&[
        "stats",
        s(&out.join("test.ctea")),
        "--out",
        s(&f.path("st")),
    ]);
    assert!(o.status.success());
    let st = csv_rows(&f.path("st").join("stats.csv"));
    let total: usize = st[..20]
        .iter()
        .map(|r| r[2].parse::<usize>().unwrap())
        .sum();
    assert_eq!(
        total,
        entries.iter().map(|e| e.spikes.count_ones()).sum::<usize>()
    );
}

#[test]
fn encode_is_byte_identical_across_runs_and_thread_counts() {
    let f = Fixture::mnist(10, 30);
    let a = f.path("a");
    let b = f.path("b");
    assert!(cte(&[
        "encode",
        "--set",
        &f.mnist_set(),
        "--out",
        s(&a),
        "--seed",
        "3",
        "--set",
        "max_samples=25"
    ])
    .status
    .success());
    assert!(cte(&[
        "encode",
        "--set",
        &f.mnist_set(),
        "--out",
        s(&b),
        "--seed",
        "3",
        "--set",
        "max_samples=25",
        "--jobs",
        "1"
    ])
    .status
    .success());
    for name in ["test.ctea", "test_encoding.csv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn per_sample_files_match_archive() {
    let f = Fixture::mnist(10, 5);
    let out = f.path("files");
    assert!(cte(&[
        "encode",
        "--set",
        &f.mnist_set(),
        "--set",
        "per_sample_files=true",
        "--out",
        s(&out)
    ])
    .status
    .success());
    let mut names: Vec<_> = fs::read_dir(out.join("test"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    assert_eq!(names.len(), 5);
}

#[test]
fn no_cluster_never_has_fewer_spikes() {
    let f = Fixture::mnist(10, 30);
    let full = f.path("full");
    let nc = f.path("nc");
    assert!(cte(&["encode", "--set", &f.mnist_set(), "--out", s(&full)])
        .status
        .success());
    assert!(cte(&[
        "encode",
        "--set",
        &f.mnist_set(),
        "--set",
        "ablation=no_cluster",
        "--out",
        s(&nc)
    ])
    .status
    .success());
    let a = csv_rows(&full.join("test_encoding.csv"));
    let b = csv_rows(&nc.join("test_encoding.csv"));
    for (ra, rb) in a.iter().zip(&b).take(30) {
        assert!(rb[2].parse::<usize>().unwrap() >= ra[2].parse::<usize>().unwrap());
    }
}

#[test]
fn missing_or_empty_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = cte(&[
        "encode",
        "--set",
        &format!("mnist_dir={}", s(&empty)),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = cte(&[
        "encode",
        "--set",
        "encoder=3d",
        "--set",
        &format!("nmnist_dir={}", s(&empty)),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = cte(&["encode", "--set", "mnist_dir=/nonexistent/dir"]);
    assert_eq!(o.status.code(), Some(2));
    let o = cte(&["stats", "/nonexistent/file.cte"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_3_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "tau_clu = 0.3\ntau_stt = 0.1\n").unwrap();
    let o = cte(&["encode", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tau_stt"));

    assert_eq!(cte(&["encode", "--set", "k_h=16"]).status.code(), Some(3));
    assert_eq!(
        cte(&["ablate", "--variants", "full,sideways"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(cte(&["frobnicate"]).status.code(), Some(3));
    assert_eq!(cte(&["encode", "--jobs", "0"]).status.code(), Some(3));
}

#[test]
fn render_single_spike_and_empty_tensor() {
    let tmp = tempfile::tempdir().unwrap();
    let mut t = SpikeTensor::zeros(Shape4::new(1, 6, 10, 12));
    t.set(0, 3, 5, 7, true);
    let file = tmp.path().join("one.cte");
    fs::write(&file, encode_spike_file(&t).unwrap()).unwrap();
    let out = tmp.path().join("frames");
    assert!(cte(&["render", s(&file), "--out", s(&out)])
        .status
        .success());
    for step in 0..6 {
        let img = fs::read(out.join(format!("frame_{step:03}.pgm"))).unwrap();
        assert!(img.starts_with(b"P5\n12 10\n255\n"));
        let px = &img[img.len() - 120..];
        let white: Vec<usize> = (0..120).filter(|&i| px[i] == 255).collect();
        assert_eq!(white, if step == 3 { vec![5 * 12 + 7] } else { vec![] });
    }

    let empty = tmp.path().join("empty.cte");
    fs::write(
        &empty,
        encode_spike_file(&SpikeTensor::zeros(Shape4::new(2, 4, 3, 3))).unwrap(),
    )
    .unwrap();
    let out = tmp.path().join("black");
    assert!(cte(&["render", s(&empty), "--out", s(&out)])
        .status
        .success());
    for step in 0..4 {
        let img = fs::read(out.join(format!("frame_{step:03}.pgm"))).unwrap();
        assert!(img[img.len() - 9..].iter().all(|&v| v == 0));
    }

    let bad = tmp.path().join("bad.cte");
    fs::write(&bad, b"CTE1\x01").unwrap();
    assert_eq!(cte(&["render", s(&bad)]).status.code(), Some(2));
}

#[test]
fn zero_lr_training_keeps_initial_weights_and_rerun_is_identical() {
    let f = Fixture::mnist(40, 20);
    let run = |dir: &str, lr: &str| {
        let out = f.path(dir);
        let o = cte(&[
            "train",
            "--set",
            &f.mnist_set(),
            "--set",
            &format!("lr={lr}"),
            "--set",
            "epochs=2",
            "--set",
            "batch_size=16",
            "--set",
            "val_samples=10",
            "--seed",
            "5",
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let z = run("zero", "0");
    let saved = checkpoint::load_checkpoint(&z.join("model.ctek")).unwrap();
    let init =
        NetworkParams::init(Architecture::standard(1, 28, 28), LifParams::default(), 5).unwrap();
    let init = checkpoint::decode_checkpoint(&checkpoint::encode_checkpoint(&init)).unwrap();
    assert_eq!(saved, init);

    let a = run("a", "0.0015");
    let b = run("b", "0.0015");
    let ma = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert_eq!(ma.lines().count(), 3);
    assert!(ma.starts_with("epoch,train_loss,train_acc,val_acc,mean_spikes\n"));
    assert_eq!(
        fs::read(a.join("model.ctek")).unwrap(),
        fs::read(b.join("model.ctek")).unwrap()
    );
    let report = fs::read_to_string(a.join("run_report.txt")).unwrap();
    assert!(report.contains("triangular"));

    let o = cte(&[
        "eval",
        "--set",
        &f.mnist_set(),
        "--set",
        &format!("checkpoint={}", s(&a.join("model.ctek"))),
        "--out",
        s(&a),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&a.join("eval.csv"))[0][0], "20");
}

#[test]
fn divergence_exits_4() {
    let f = Fixture::mnist(32, 5);
    let o = cte(&[
        "train",
        "--set",
        &f.mnist_set(),
        "--set",
        "lr=1e300",
        "--set",
        "epochs=3",
        "--set",
        "batch_size=8",
        "--out",
        s(&f.path("div")),
    ]);
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn nmnist_ablation_no_st3d_has_more_spikes() {
    let tmp = tempfile::tempdir().unwrap();
    let nd = tmp.path().join("nmnist");
    write_nmnist(&nd, 2);
    let out = tmp.path().join("abl");
    let o = cte(&[
        "ablate",
        "--variants",
        "full,no_st3d,spatial2d,per_frame",
        "--set",
        "encoder=3d",
        "--set",
        &format!("nmnist_dir={}", s(&nd)),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("ablation.csv"));
    assert_eq!(rows.len(), 4);
    let mean = |i: usize| rows[i][3].parse::<f64>().unwrap();
    assert_eq!(rows[1][0], "no_st3d");
    assert!(mean(1) > mean(0), "no_st3d {} vs full {}", mean(1), mean(0));

    let one = tmp.path().join("one");
    let o = cte(&[
        "ablate",
        "--variants",
        "no_st3d",
        "--set",
        &format!("nmnist_dir={}", s(&nd)),
        "--out",
        s(&one),
    ]);
    assert!(o.status.success());
    assert_eq!(csv_rows(&one.join("ablation.csv")).len(), 1);
}
