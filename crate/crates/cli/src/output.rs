use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use crate::CliError;

/// Shortest round-trip form, with an exponent for very small or large
/// magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Vector values joined with `;` so outputs of any width fit one column.
pub fn vec(v: &DVector<f64>) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

pub struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn io_err(&self, name: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
        let path = self.dir.join(name);
        move |source| CliError::Io {
            path: path.clone(),
            source,
        }
    }

    /// Writes `header` and one line per row.
    pub fn csv(
        &mut self,
        name: &str,
        header: &str,
        rows: impl IntoIterator<Item = String>,
    ) -> Result<(), CliError> {
        let err = self.io_err(name);
        let file = File::create(self.dir.join(name)).map_err(&err)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{header}").map_err(&err)?;
        for row in rows {
            writeln!(w, "{row}").map_err(&err)?;
        }
        w.flush().map_err(&err)?;
        drop(err);
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn with_writer(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let err = self.io_err(name);
        let file = File::create(self.dir.join(name)).map_err(&err)?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(&err)?;
        drop(err);
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)?;
        let err = self.io_err(name);
        std::fs::write(self.dir.join(name), text + "\n").map_err(&err)?;
        drop(err);
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}
