#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn cimsim(cwd: &Path, args: &[&str]) -> Output {
    cimsim_env(cwd, args, &[])
}

pub fn cimsim_env(cwd: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cimsim"));
    c.current_dir(cwd).env_remove("CIM_OUTPUT_DIR").env_remove("CIM_THREADS").args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn json(p: PathBuf) -> Value {
    let text = std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    serde_json::from_str(&text).unwrap()
}

pub fn csv_rows(p: PathBuf) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    let head = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (head, rows)
}

pub fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

fn idx(dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, dims.len() as u8];
    for d in dims {
        b.extend_from_slice(&d.to_be_bytes());
    }
    b.extend_from_slice(payload);
    b
}

/// Small F-MNIST-shaped dataset: each class brightens its own band of rows.
pub fn write_fake_fmnist(dir: &Path, n_train: u32, n_test: u32) {
    std::fs::create_dir_all(dir).unwrap();
    let make = |n: u32, salt: u32| {
        let mut px = Vec::new();
        let mut lb = Vec::new();
        for i in 0..n {
            let label = i % 10;
            for p in 0..784u32 {
                let noise = (p.wrapping_mul(2654435761).wrapping_add(i * 97 + salt) >> 24) as u8 / 2;
                let band = (p / 28) / 3 == label;
                px.push(if band { noise + 120 } else { noise });
            }
            lb.push(label as u8);
        }
        (px, lb)
    };
    for (stem, n, salt) in [("train", n_train, 1), ("t10k", n_test, 2)] {
        let (px, lb) = make(n, salt);
        std::fs::write(dir.join(format!("{stem}-images-idx3-ubyte")), idx(&[n, 28, 28], &px)).unwrap();
        std::fs::write(dir.join(format!("{stem}-labels-idx1-ubyte")), idx(&[n], &lb)).unwrap();
    }
}

/// Every CSV under `dir`, relative path and bytes, sorted by path.
pub fn csv_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, d: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
