//! Atomic artifact writes. Each file lands via a temporary sibling and a
//! rename; a failed command removes whatever it already produced.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;

#[derive(Debug, Default)]
pub struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
        self.write_with(path, |w| w.write_all(bytes).map_err(Into::into))
    }

    /// Streams into a temporary file next to `path`, then renames it over.
    pub fn write_with(
        &mut self,
        path: &Path,
        fill: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>,
    ) -> anyhow::Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir)
            .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
        {
            let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
            fill(&mut buf).with_context(|| format!("writing {}", path.display()))?;
            buf.flush().with_context(|| format!("writing {}", path.display()))?;
        }
        tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
        self.written.push(path.to_path_buf());
        tracing::debug!(path = %path.display(), "wrote artifact");
        Ok(())
    }

    /// Removes every file written so far.
    pub fn rollback(self) {
        for path in self.written {
            if let Err(e) = std::fs::remove_file(&path) {
                tracing::warn!(path = %path.display(), error = %e, "could not remove partial artifact");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_rollback() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("sub/b.json");
        let mut out = Outputs::default();
        out.write(&a, b"{}\n").unwrap();
        out.write(&b, b"[]\n").unwrap();
        assert_eq!(std::fs::read(&b).unwrap(), b"[]\n");
        assert_eq!(out.written.len(), 2);
        out.rollback();
        assert!(!a.exists() && !b.exists());
    }

    #[test]
    fn failed_fill_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let mut out = Outputs::default();
        let err = out.write_with(&a, |w| {
            w.write_all(b"partial")?;
            anyhow::bail!("boom")
        });
        assert!(err.is_err());
        assert!(!a.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        assert!(out.written.is_empty());
    }
}
