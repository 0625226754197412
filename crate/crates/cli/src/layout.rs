//! Output directory layout and small file helpers. Every command writes
//! under `out_root/<run_name>/` with fixed subdirectories.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub const OUT_ENV_VAR: &str = "SFC_OUT";

/// Output root: `--out` flag, else $SFC_OUT, else ./out.
pub fn resolve_out_root(flag: Option<PathBuf>) -> PathBuf {
    if let Some(p) = flag {
        return p;
    }
    if let Ok(v) = std::env::var(OUT_ENV_VAR) {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    PathBuf::from("out")
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(out_root: &Path, run_name: &str) -> Self {
        RunDir { root: out_root.join(run_name) }
    }

    pub fn config_resolved(&self) -> PathBuf {
        self.root.join("config.resolved")
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn dataset_path(&self, task_id: usize) -> PathBuf {
        self.datasets_dir().join(format!("task_{task_id}.csv"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.datasets_dir().join("manifest.txt")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn sf_checkpoint(&self) -> PathBuf {
        self.checkpoints_dir().join("sf.ckpt")
    }

    pub fn policy_checkpoint(&self) -> PathBuf {
        self.checkpoints_dir().join("policy.ckpt")
    }

    pub fn curves_dir(&self) -> PathBuf {
        self.root.join("curves")
    }

    pub fn sf_curve(&self) -> PathBuf {
        self.curves_dir().join("sf.csv")
    }

    pub fn policy_curve(&self) -> PathBuf {
        self.curves_dir().join("policy.csv")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn adapt_results(&self) -> PathBuf {
        self.results_dir().join("adapt.csv")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.results_dir().join("embeddings.csv")
    }

    pub fn embeddings_pca(&self) -> PathBuf {
        self.results_dir().join("embeddings_pca.csv")
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Fixed scientific notation keeps curve and result files byte-stable.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.10e}")
}
