#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use volmocap_cli::config::PipelineConfig;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Pipeline config in `dir` using the bundled four-view rig, a small network
/// and whatever extra TOML sections are given.
pub fn setup(dir: &Path, extra: &str) -> PipelineConfig {
    fs::copy(repo_root().join("configs/ring4.toml"), dir.join("rig.toml")).unwrap();
    let text = format!(
        "schema_version = 1\nrig = \"rig.toml\"\ndataset = \"data\"\ncheckpoint = \"model.mvck\"\noutput = \"out\"\n{extra}\n"
    );
    let text = if text.contains("[model]") { text } else { text + "[model]\nwidths = [2, 3, 4]\nresolution = 16\n" };
    fs::write(dir.join("pipeline.toml"), text).unwrap();
    PipelineConfig::load(&dir.join("pipeline.toml")).unwrap()
}

/// Every file below `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
