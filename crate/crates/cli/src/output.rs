//! Output directories. Every file is first written under a `.partial` name
//! and renamed once complete.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ncell_core::compartment::Compartment;
use ncell_core::specfile::{write_spec, FieldStorage};

use crate::manifest::{FileDigest, RunManifest, MANIFEST_NAME};
use crate::CliError;

pub struct OutputDir {
    root: PathBuf,
    written: Vec<FileDigest>,
}

impl OutputDir {
    /// Create `root` if needed. A directory that already holds a manifest is
    /// refused unless `force` is set.
    pub fn create(root: &Path, force: bool) -> Result<OutputDir, CliError> {
        fs::create_dir_all(root).map_err(CliError::io(format!("creating {}", root.display())))?;
        if root.join(MANIFEST_NAME).exists() && !force {
            return Err(CliError::Usage(format!(
                "{} already contains a run manifest; pass --force to overwrite",
                root.display()
            )));
        }
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn written(&self) -> &[FileDigest] {
        &self.written
    }

    pub fn write_with(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        let partial = self.root.join(format!("{name}.partial"));
        let file = File::create(&partial).map_err(CliError::io(format!("creating {}", partial.display())))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(CliError::io(format!("writing {}", partial.display())))?;
        drop(w);
        self.commit(&partial, name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.write_with(name, |w| {
            w.write_all(bytes).map_err(CliError::io(format!("writing {name}")))
        })
    }

    pub fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(CliError::domain)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Write a compartment spec with its grid files, staged in a `.partial`
    /// directory first.
    pub fn write_spec(&mut self, c: &Compartment, name: &str) -> Result<(), CliError> {
        let stage = self.root.join(format!("{name}.partial.d"));
        if stage.exists() {
            fs::remove_dir_all(&stage).map_err(CliError::io(format!("clearing {}", stage.display())))?;
        }
        fs::create_dir_all(&stage).map_err(CliError::io(format!("creating {}", stage.display())))?;
        let files = write_spec(c, &stage.join(name), FieldStorage::Files).map_err(CliError::domain)?;
        for f in files {
            let file_name = f.file_name().unwrap().to_string_lossy().into_owned();
            self.commit(&f, &file_name)?;
        }
        fs::remove_dir(&stage).map_err(CliError::io(format!("removing {}", stage.display())))?;
        Ok(())
    }

    fn commit(&mut self, from: &Path, name: &str) -> Result<(), CliError> {
        let dest = self.root.join(name);
        fs::rename(from, &dest).map_err(CliError::io(format!("renaming to {}", dest.display())))?;
        let digest = FileDigest::of(&dest, name).map_err(CliError::io(format!("hashing {}", dest.display())))?;
        self.written.retain(|d| d.path != name);
        self.written.push(digest);
        Ok(())
    }

    /// Write the manifest last, listing every file written before it.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        manifest.outputs = self.written.clone();
        self.write_json(MANIFEST_NAME, &manifest)?;
        Ok(manifest)
    }
}
