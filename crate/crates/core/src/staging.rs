//! Stage output into a sibling temporary directory and rename it into place
//! only once every file has been written.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

static COUNTER: AtomicUsize = AtomicUsize::new(0);

pub(crate) struct StagingDir {
    tmp: PathBuf,
    target: PathBuf,
    committed: bool,
}

fn sibling(target: &Path, tag: &str) -> PathBuf {
    let name = target
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    target.with_file_name(format!(".{name}.{tag}-{}-{n}", std::process::id()))
}

impl StagingDir {
    pub(crate) fn new(target: &Path) -> io::Result<StagingDir> {
        if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let tmp = sibling(target, "tmp");
        fs::create_dir(&tmp)?;
        Ok(StagingDir {
            tmp,
            target: target.to_path_buf(),
            committed: false,
        })
    }


    pub(crate) fn file(&self, name: &str) -> PathBuf {
        self.tmp.join(name)
    }

    /// Moves the staged directory onto the target, replacing any previous one.
    pub(crate) fn commit(mut self) -> io::Result<()> {
        if self.target.exists() {
            let old = sibling(&self.target, "old");
            fs::rename(&self.target, &old)?;
            fs::rename(&self.tmp, &self.target)?;
            fs::remove_dir_all(&old)?;
        } else {
            fs::rename(&self.tmp, &self.target)?;
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for StagingDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}
