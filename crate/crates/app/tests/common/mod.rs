#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_faceprotect"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// A config small enough to train both networks in a few seconds.
pub fn tiny_config(dir: &Path, seed: u64) -> PathBuf {
    let text = format!(
        r#"schema = "faceprotect-config/1"
seed = {seed}

[godwgm]
faces = "synthetic:24"
digits = "synthetic:24"
output = "godwgm"
[godwgm.train]
epochs = 2
batch_size = 8
generator_width = 8
critic_hidden = [16, 8]

[wvs]
carriers = "synthetic:4"
godwgm = "godwgm"
output = "wvs"
[wvs.train]
epochs = 2
batch_size = 2
patch_size = 32
arch = {{ base_width = 4, se_reduction = 2, recovery_channels = [4, 4, 4, 4, 4] }}

[bench]
godwgm = "godwgm"
wvs = "wvs"
carriers = "synthetic:3"
donors = "synthetic:3"
unprotected = "synthetic:2"
n_real = 2
n_fake_per_mode = 2

[serve]
godwgm = "godwgm"
wvs = "wvs"
bind = "127.0.0.1:0"
request_log = "requests.ndjson"
"#
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Tiny trained checkpoints shared by every test in one binary.
pub fn trained() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let cfg = tiny_config(&dir, 1);
        let cfg = cfg.to_str().unwrap();
        let out = run(&["train-godwgm", "--config", cfg]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let out = run(&["train-wvs", "--config", cfg]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        dir
    })
}

pub fn save_face(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let p = dir.join(name);
    faceprotect::datasets::synthetic_face(seed, 0).save(&p).unwrap();
    p
}
