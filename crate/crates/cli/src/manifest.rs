use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const MANIFEST: &str = "manifest.json";

/// Record of one run. Timestamps live only here, so every other file in the
/// output directory is reproducible byte for byte.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_sha256: String,
    pub seed: u64,
    pub software_version: String,
    pub started: String,
    pub finished: String,
    pub status: String,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Collects the files a command writes into its output directory.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn file(&mut self, name: &str) -> Result<BufWriter<fs::File>, Failure> {
        self.written.push(name.to_owned());
        Ok(BufWriter::new(fs::File::create(self.root.join(name))?))
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<(), Failure> {
        manifest.outputs = self.written;
        manifest.finished = now();
        let file = fs::File::create(self.root.join(MANIFEST))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
        Ok(())
    }
}

pub fn manifest(command: &str, config_path: Option<&Path>, config_bytes: &[u8], seed: u64) -> RunManifest {
    RunManifest {
        command: command.to_owned(),
        config_path: config_path.map(Path::to_path_buf),
        config_sha256: sha256_hex(config_bytes),
        seed,
        software_version: env!("CARGO_PKG_VERSION").to_owned(),
        started: now(),
        finished: String::new(),
        status: String::new(),
        outputs: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
