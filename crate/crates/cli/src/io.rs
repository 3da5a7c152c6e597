//! Output artifacts: CSV tables, VTK fields and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use multiphase::fem::write_vtk;
use multiphase::HypothesisReport;
use multiphase::TriMesh;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Floats with 17 significant digits.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub hypotheses: Vec<HypothesisReport>,
    pub outputs: Vec<String>,
    pub success: bool,
    pub notes: Vec<String>,
}

/// Writes files into one directory, each tagged with the config hash.
pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path, hash: String) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Artifacts { dir: dir.to_path_buf(), hash, files: Vec::new() })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    /// CSV with a `# config_sha256=…` comment line before the header.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = self.create(name)?;
        writeln!(w, "# config_sha256={}", self.hash)?;
        let mut c = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        c.write_record(header)?;
        for r in rows {
            c.write_record(r)?;
        }
        c.flush()?;
        Ok(())
    }

    pub fn vtk(
        &mut self,
        name: &str,
        mesh: &TriMesh,
        point_scalars: &[(&str, &[f64])],
        cell_vectors: &[(&str, &[[f64; 2]])],
    ) -> Result<()> {
        let title = format!("multiphase config_sha256={}", self.hash);
        let mut w = self.create(name)?;
        write_vtk(&mut w, &title, mesh, point_scalars, cell_vectors)?;
        w.flush()?;
        Ok(())
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.outputs = self.files;
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_hash_and_lf() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::new(dir.path(), "abc".into()).unwrap();
        a.csv("t.csv", &["a", "b"], &[vec![fmt(1.0), fmt(0.1)]]).unwrap();
        let text = fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(text, "# config_sha256=abc\na,b\n1.0000000000000000e0,1.0000000000000001e-1\n");
    }

    #[test]
    fn hash_is_sha256() {
        assert_eq!(config_hash(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
