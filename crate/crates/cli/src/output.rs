//! Output directory, CSV tables tagged with the config hash, check results.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub struct Output {
    pub dir: PathBuf,
    pub hash: String,
}

impl Output {
    pub fn create(dir: &Path, hash: String) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let probe = dir.join(".subdiff-write-test");
        File::create(&probe).with_context(|| format!("output directory {} is not writable", dir.display()))?;
        let _ = std::fs::remove_file(&probe);
        Ok(Output { dir: dir.to_path_buf(), hash })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn table(&self, name: &str, headers: &[&str]) -> Result<Table> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        let mut head: Vec<&str> = headers.to_vec();
        head.push("config_hash");
        w.write_record(&head)?;
        Ok(Table { w, path, hash: self.hash.clone(), width: headers.len() })
    }

    pub fn file(&self, name: &str) -> Result<(File, PathBuf)> {
        let path = self.path(name);
        let f = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        Ok((f, path))
    }
}

pub struct Table {
    w: csv::Writer<File>,
    path: PathBuf,
    hash: String,
    width: usize,
}

impl Table {
    pub fn row(&mut self, cells: Vec<String>) -> Result<()> {
        debug_assert_eq!(cells.len(), self.width);
        let mut cells = cells;
        cells.push(self.hash.clone());
        self.w.write_record(&cells)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.w.flush()?;
        Ok(self.path)
    }
}

/// Shortest round-trip decimal; `inf` for infinity.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Named pass/fail outcomes of a run; `--strict` turns a failure into a
/// nonzero exit.
#[derive(Debug, Default)]
pub struct Checks {
    pub items: Vec<(String, bool, String)>,
}

impl Checks {
    pub fn add(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.items.push((name.to_string(), pass, detail.into()));
    }

    pub fn all_pass(&self) -> bool {
        self.items.iter().all(|i| i.1)
    }
}
