#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fusebench::feat::write_features;
use fusebench::labels::write_labels;
use fusebench_core::data::synth_generate;

pub struct Dataset {
    pub img: PathBuf,
    pub txt: PathBuf,
    pub labels: PathBuf,
}

pub fn write_synth(dir: &Path, n: usize, d: usize, k: usize, noise: f64, seed: u64) -> Dataset {
    std::fs::create_dir_all(dir).unwrap();
    let (a, b, l) = synth_generate(n, d, k, noise, seed).unwrap();
    let ds = Dataset {
        img: dir.join("img.feat"),
        txt: dir.join("txt.feat"),
        labels: dir.join("labels.csv"),
    };
    write_features(&a, &ds.img).unwrap();
    write_features(&b, &ds.txt).unwrap();
    write_labels(&ds.labels, &l).unwrap();
    ds
}

/// Config text pointing at `ds`, followed by `extra` lines.
pub fn config_text(ds: &Dataset, classes: usize, extra: &str) -> String {
    format!(
        "data.img = {}\ndata.txt = {}\ndata.labels = {}\ndata.classes = {classes}\n{extra}",
        ds.img.display(),
        ds.txt.display(),
        ds.labels.display()
    )
}

pub fn write_config(path: &Path, ds: &Dataset, classes: usize, extra: &str) -> PathBuf {
    std::fs::write(path, config_text(ds, classes, extra)).unwrap();
    path.to_path_buf()
}

pub fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}
