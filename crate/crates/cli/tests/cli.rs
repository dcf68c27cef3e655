mod common;

use std::io::Write;
use std::path::Path;

use common::{cimsim, cimsim_env, csv_rows, hex, json, write_fake_fmnist};
use flate2::write::GzEncoder;
use sha2::{Digest, Sha256};

fn ok(cwd: &Path, args: &[&str]) {
    let o = cimsim(cwd, args);
    assert!(o.status.success(), "{args:?} failed:\n{}", common::stderr(&o));
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

/// Exit status and error record of a failing invocation.
fn fails(cwd: &Path, args: &[&str], dir: &str, kind: &str) {
    let o = cimsim(cwd, args);
    assert!(!o.status.success(), "{args:?} should fail");
    let rec = json(cwd.join(dir).join("error.json"));
    assert_eq!(rec["kind"], kind, "{rec}");
    assert!(!cwd.join(dir).join("manifest.json").exists());
}

#[test]
fn tft_sweeps() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["--set", "output_dir=\"o\"", "iv-sweep", "--device", "tft"]);
    for vds in ["0.1", "1"] {
        let (head, rows) = csv_rows(d.join(format!("o/iv-sweep/tft_vds_{vds}.csv")));
        assert_eq!(head, ["V", "I"]);
        assert_eq!(rows.len(), 81);
        let i: Vec<f64> = rows.iter().map(|r| num(&r[1])).collect();
        assert!(i.windows(2).all(|w| w[1] >= w[0]), "transfer curve not monotone");
    }
    // Saturation bias draws more current than the linear-region bias at full gate drive.
    let last = |f: &str| num(&csv_rows(d.join(f)).1.last().unwrap()[1]);
    assert!(last("o/iv-sweep/tft_vds_1.csv") > last("o/iv-sweep/tft_vds_0.1.csv"));

    ok(d, &["--set", "output_dir=\"z\"", "iv-sweep", "--device", "tft", "--vds", "0", "--vs", "0.3"]);
    let (_, rows) = csv_rows(d.join("z/iv-sweep/tft_vds_0.csv"));
    assert!(rows.iter().all(|r| num(&r[1]) == 0.0));

    ok(d, &["--set", "output_dir=\"p\"", "iv-sweep", "--device", "tft", "--start", "1.5", "--stop", "1.5"]);
    let (_, rows) = csv_rows(d.join("p/iv-sweep/tft_vds_0.1.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(num(&rows[0][0]), 1.5);

    fails(d, &["--set", "output_dir=\"b\"", "iv-sweep", "--device", "tft", "--start", "2", "--stop", "1"], "b/iv-sweep", "input");
    fails(d, &["--set", "output_dir=\"b\"", "iv-sweep", "--device", "tft", "--points", "0"], "b/iv-sweep", "input");
}

#[test]
fn rram_loop_encloses_area() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["--set", "output_dir=\"o\"", "iv-sweep", "--device", "rram"]);
    let (head, rows) = csv_rows(d.join("o/iv-sweep/rram_loop.csv"));
    assert_eq!(head, ["V", "I"]);
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (num(&r[0]), num(&r[1]))).collect();
    assert_eq!(pts.first(), pts.last());
    // Trapezoid rule for the loop integral of I dV.
    let trap: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum();
    let reported = json(d.join("o/iv-sweep/rram_loop.json"))["enclosed_area"].as_f64().unwrap();
    assert!(trap.abs() > 1e-9, "loop area {trap}");
    assert!((trap.abs() - reported).abs() <= 1e-9 * reported, "{trap} vs {reported}");
    // After SET, the return branch of the positive half carries more current
    // than the outgoing branch at the same voltage.
    let half = (pts.len() - 1) / 2;
    let (up, down) = (&pts[..=half / 2], &pts[half / 2..=half]);
    assert!(up.iter().zip(down.iter().rev()).all(|(u, d)| (u.0 - d.0).abs() < 1e-9 && d.1 >= u.1));
    let ratio = up.iter().zip(down.iter().rev()).filter(|(u, _)| u.1 > 0.0).map(|(u, d)| d.1 / u.1).fold(0.0, f64::max);
    assert!(ratio > 1e3, "no hysteresis on the positive side: {ratio}");
    fails(d, &["--set", "output_dir=\"b\"", "iv-sweep", "--device", "rram", "--start", "0.5"], "b/iv-sweep", "input");
}

#[test]
fn state_counts_over_sigma() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["--set", "output_dir=\"o\"", "states"]);
    let (head, rows) = csv_rows(d.join("o/states/states.csv"));
    assert_eq!(head, ["sigma", "groups"]);
    let g: Vec<(f64, usize)> = rows.iter().map(|r| (num(&r[0]), r[1].parse().unwrap())).collect();
    assert_eq!(g[0], (0.0, 32));
    let at01 = g.iter().find(|r| r.0 == 0.1).unwrap().1;
    assert!((2..=4).contains(&at01), "{g:?}");
    assert!(g.windows(2).all(|w| w[1].1 <= w[0].1));
    assert_eq!(json(d.join("o/states/states.json"))["non_increasing_in_sigma"], true);
    let (_, levels) = csv_rows(d.join("o/states/states_levels.csv"));
    assert_eq!(levels.len(), 5 * 32);
}

#[test]
fn mac_reports() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    // All cells in the HRS, every row and layer on.
    ok(d, &["--set", "output_dir=\"hrs\"", "mac"]);
    let s = json(d.join("hrs/mac/mac.json"));
    let p = s["static_power"].as_f64().unwrap();
    assert!(p > 0.0 && p < 1e-6, "static power {p}");
    let (head, rows) = csv_rows(d.join("hrs/mac/mac.csv"));
    assert_eq!(head, ["column", "ideal_current", "ir_drop_current", "ideal_code", "ir_drop_code", "saturated"]);
    for r in &rows {
        let i = num(&r[2]);
        assert!((0.1e-9..=100e-9).contains(&i), "column current {i}");
    }

    std::fs::write(d.join("zero.toml"), "input_bits = [0, 0, 0, 0, 0, 0, 0, 0]\n").unwrap();
    ok(d, &["--set", "output_dir=\"zero\"", "mac", "--stimulus", "zero.toml"]);
    let (_, rows) = csv_rows(d.join("zero/mac/mac.csv"));
    assert!(rows.iter().all(|r| num(&r[1]).abs() < 1e-12 && num(&r[2]).abs() < 1e-12 && r[3] == "0"));

    std::fs::write(d.join("w.csv"), "row,col,layer,level\n0,0,0,31\n1,0,0,31\n2,1,0,12\n3,2,0,5\n").unwrap();
    std::fs::write(d.join("s.toml"), "input_bits = [1, 1, 1, 0, 0, 0, 0, 0]\nlayers = [0]\n").unwrap();
    let flat = ["--set", "tile.r_wl=0", "--set", "tile.r_bl=0", "--set", "tile.r_sl=0"];
    let mut args = vec!["--set", "output_dir=\"flat\""];
    args.extend(flat);
    args.extend(["mac", "--weights", "w.csv", "--stimulus", "s.toml"]);
    ok(d, &args);
    let (_, rows) = csv_rows(d.join("flat/mac/mac.csv"));
    for r in &rows {
        let (a, b) = (num(&r[1]), num(&r[2]));
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-15), "{a} vs {b}");
    }
    assert!(num(&rows[0][1]) > num(&rows[1][1]) && num(&rows[1][1]) > num(&rows[3][1]));

    std::fs::write(d.join("bad.toml"), "input_bits = [1, 1]\n").unwrap();
    fails(d, &["--set", "output_dir=\"bad\"", "mac", "--stimulus", "bad.toml"], "bad/mac", "input");
    std::fs::write(d.join("bad2.toml"), "input_bits = [1, 1, 1, 1, 1, 1, 1, 1]\nvolts = 3\n").unwrap();
    fails(d, &["--set", "output_dir=\"bad\"", "mac", "--stimulus", "bad2.toml"], "bad/mac", "input");
    std::fs::write(d.join("badw.csv"), "row,col,layer,level\n0,0,9,1\n").unwrap();
    fails(d, &["--set", "output_dir=\"bad\"", "mac", "--weights", "badw.csv"], "bad/mac", "input");
}

#[test]
fn config_errors_and_overrides() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    std::fs::write(d.join("c.toml"), "output_dir = \"o\"\n[train]\nepoch = 3\n").unwrap();
    let o = cimsim(d, &["-c", "c.toml", "states"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("\"kind\": \"config\"") && err.contains("epoch"), "{err}");

    let o = cimsim(d, &["--set", "train.seed=4", "states"]);
    assert!(!o.status.success());

    std::fs::write(d.join("c.toml"), "output_dir = \"o\"\n[states]\nsigmas = [0.0]\nmonte_carlo = 1000\n").unwrap();
    let o = cimsim_env(d, &["-c", "c.toml", "states"], &[("CIM_OUTPUT_DIR", "elsewhere"), ("CIM_THREADS", "1")]);
    assert!(o.status.success(), "{}", common::stderr(&o));
    let resolved = std::fs::read_to_string(d.join("elsewhere/states/config.toml")).unwrap();
    assert!(resolved.contains("monte_carlo = 1000"));
    let m = json(d.join("elsewhere/states/manifest.json"));
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    let files: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["file"].as_str().unwrap()).collect();
    assert!(files.contains(&"states.csv") && files.contains(&"config.toml"));
    let csv = std::fs::read(d.join("elsewhere/states/states.csv")).unwrap();
    let sha = m["artifacts"].as_array().unwrap().iter().find(|a| a["file"] == "states.csv").unwrap()["sha256"].clone();
    assert_eq!(sha, hex(&Sha256::digest(&csv)));
    let o = cimsim(d, &["--set", "output_dir=\"x\"", "--set", "states.sigmas=[-1.0]", "states"]);
    assert!(!o.status.success());
}

#[test]
fn train_infer_prune_report() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    write_fake_fmnist(&d.join("data"), 300, 60);
    std::fs::write(
        d.join("c.toml"),
        "output_dir = \"a\"\n[data]\npath = \"data\"\n[train]\nepochs = 2\nbatch_size = 32\n\
         [variation]\nsigma_d2d = 0.1\n[infer]\nvariation_seeds = [1, 2]\ncalibration_images = 16\n",
    )
    .unwrap();

    fails(d, &["-c", "c.toml", "infer"], "a/infer", "state");
    ok(d, &["-c", "c.toml", "train"]);
    ok(d, &["-c", "c.toml", "--set", "output_dir=\"b\"", "train"]);
    for f in ["train_log.csv", "weights.cimw", "train.json"] {
        assert_eq!(
            std::fs::read(d.join("a/train").join(f)).unwrap(),
            std::fs::read(d.join("b/train").join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }
    let log = cim_nn::TrainLog::from_csv(&std::fs::read_to_string(d.join("a/train/train_log.csv")).unwrap()).unwrap();
    assert_eq!(log.rows.len(), 5);
    let summary = json(d.join("a/train/train.json"));
    assert_eq!(summary["config_sha256"], json(d.join("a/train/manifest.json"))["config_sha256"]);

    ok(d, &["-c", "c.toml", "infer"]);
    let (head, rows) = csv_rows(d.join("a/infer/infer.csv"));
    assert_eq!(head, ["engine", "sigma", "variation_seed", "n_images", "correct", "accuracy", "saturations"]);
    assert_eq!(rows.len(), 4);
    // Ideal tiles agree with the software reference image for image.
    let conf = |f: &str| std::fs::read(d.join("a/infer").join(f)).unwrap();
    assert_eq!(conf("confusion_software.csv"), conf("confusion_sigma0_seed0.csv"));
    assert_eq!(rows[0][4], rows[1][4]);
    let s = json(d.join("a/infer/infer.json"));
    assert!(s["median_accuracy"].is_number() && s["degradation"].is_number());

    ok(d, &["-c", "c.toml", "--set", "prune.ratio=0.5", "prune"]);
    let (_, rows) = csv_rows(d.join("a/prune/prune.csv"));
    assert_eq!(rows[0], ["0", "32", "16"]);
    let p = json(d.join("a/prune/prune.json"));
    assert!(p["tiles_after"].as_u64() < p["tiles_before"].as_u64());
    ok(d, &["-c", "c.toml", "--set", "infer.checkpoint=\"a/prune/weights.cimw\"", "--set", "output_dir=\"pr\"", "infer"]);

    ok(d, &["-c", "c.toml", "report", "a"]);
    let (head, rows) = csv_rows(d.join("a/report/report.csv"));
    assert_eq!(head, ["run", "command", "config_sha256", "seed", "metric", "value"]);
    assert!(rows.iter().any(|r| r[1] == "train" && r[4] == "test_accuracy"));
    assert!(rows.iter().any(|r| r[1] == "infer" && r[4] == "analog_accuracy_sigma0.1_seed2"));

    // A padded copy of the data needs a network built for it.
    fails(d, &["-c", "c.toml", "--set", "data.pad_to=[32, 32]", "infer"], "a/infer", "input");
}

#[test]
fn fetch_verifies_checksums() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let payload = b"some dataset bytes".repeat(50);
    let mut gz = GzEncoder::new(Vec::new(), flate2::Compression::default());
    gz.write_all(&payload).unwrap();
    let gz = gz.finish().unwrap();
    std::fs::create_dir_all(d.join("mirror")).unwrap();
    std::fs::write(d.join("mirror/blob.bin.gz"), &gz).unwrap();
    let good = hex(&Sha256::digest(&gz));
    let list = |sha: &str| format!("[[file]]\nurl = \"file://{}\"\nsha256 = \"{sha}\"\ngunzip = true\n", d.join("mirror/blob.bin.gz").display());
    std::fs::write(d.join("ok.toml"), list(&good)).unwrap();
    ok(d, &["--set", "output_dir=\"o\"", "--set", "fetch.dest=\"dl\"", "fetch", "--manifest", "ok.toml"]);
    assert_eq!(std::fs::read(d.join("dl/blob.bin")).unwrap(), payload);
    let (_, rows) = csv_rows(d.join("o/fetch/fetch.csv"));
    assert_eq!(rows[0][1], good);
    // A second run finds the file in place.
    ok(d, &["--set", "output_dir=\"o2\"", "--set", "fetch.dest=\"dl\"", "fetch", "--manifest", "ok.toml"]);
    assert_eq!(std::fs::read(d.join("o/fetch/fetch.csv")).unwrap(), std::fs::read(d.join("o2/fetch/fetch.csv")).unwrap());

    let bad = "0".repeat(64);
    std::fs::write(d.join("bad.toml"), list(&bad)).unwrap();
    fails(d, &["--set", "output_dir=\"b\"", "--set", "fetch.dest=\"dl2\"", "fetch", "--manifest", "bad.toml"], "b/fetch", "checksum");
    assert!(!d.join("dl2/blob.bin.gz").exists());
    std::fs::write(d.join("short.toml"), list("abc")).unwrap();
    fails(d, &["--set", "output_dir=\"b\"", "fetch", "--manifest", "short.toml"], "b/fetch", "input");
}
