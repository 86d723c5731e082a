use std::path::{Path, PathBuf};

/// Output directory layout for one run. Every stage reads its inputs from
/// the previous stage's files rather than from memory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl AsRef<Path>) -> Self {
        Self {
            root: root.as_ref().to_path_buf(),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest(&self) -> PathBuf {
        self.data_dir().join("manifest.json")
    }

    pub fn modes_dir(&self) -> PathBuf {
        self.root.join("modes")
    }

    pub fn ckpt(&self, seed: u64) -> PathBuf {
        self.modes_dir().join(format!("mode-{seed}.mckp"))
    }

    pub fn modes_summary(&self) -> PathBuf {
        self.modes_dir().join("summary.csv")
    }

    pub fn dump_dir(&self, seed: u64, dataset: &str) -> PathBuf {
        self.root
            .join("dumps")
            .join(format!("mode-{seed}"))
            .join(dataset)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn runs_csv(&self) -> PathBuf {
        self.reports_dir().join("runs.csv")
    }

    pub fn aggregate_csv(&self) -> PathBuf {
        self.reports_dir().join("aggregate.csv")
    }

    pub fn landscape_dir(&self) -> PathBuf {
        self.root.join("landscape")
    }

    pub fn trajectories_dir(&self) -> PathBuf {
        self.landscape_dir().join("trajectories")
    }

    pub fn theory_report(&self) -> PathBuf {
        self.root.join("theory").join("report.json")
    }

    pub fn ablate_dir(&self) -> PathBuf {
        self.root.join("ablate")
    }
}
