//! Output files. Every CSV starts with a `#` line carrying the tool version
//! and config hash; every JSON document has `tool_version` and
//! `config_hash` fields.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

pub fn tool_version() -> String {
    format!("nlskam {}", env!("CARGO_PKG_VERSION"))
}

pub struct OutputDir {
    pub dir: PathBuf,
    pub hash: String,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::usage(format!("{}: {e}", path.display()))
}

impl OutputDir {
    pub fn new(dir: PathBuf, hash: String) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        Ok(OutputDir { dir, hash })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.path(name);
        let mut buf = format!("# {} config_hash={}\n", tool_version(), self.hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header).map_err(|e| io_error(&path, e))?;
            for r in rows {
                w.write_record(r).map_err(|e| io_error(&path, e))?;
            }
            w.flush().map_err(|e| io_error(&path, e))?;
        }
        fs::write(&path, buf).map_err(|e| io_error(&path, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, body: &T) -> Result<(), CliError> {
        let path = self.path(name);
        let mut value = serde_json::to_value(body).map_err(|e| io_error(&path, e))?;
        let obj = value.as_object_mut().expect("JSON documents are objects");
        obj.insert("tool_version".into(), tool_version().into());
        obj.insert("config_hash".into(), self.hash.clone().into());
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| io_error(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_error(&path, e))
    }

    /// Path of an artifact written by an earlier command.
    pub fn upstream(&self, name: &str, producer: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::usage(format!("missing upstream artifact {} (run `nlskam {producer}` first)", path.display())))
        }
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, producer: &str) -> Result<T, CliError> {
        let path = self.upstream(name, producer)?;
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        serde_json::from_str(&text).map_err(|e| io_error(&path, e))
    }

    /// Rows of an upstream CSV as maps from column name to field.
    pub fn read_csv(&self, name: &str, producer: &str) -> Result<Vec<std::collections::BTreeMap<String, String>>, CliError> {
        let path = self.upstream(name, producer)?;
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path).map_err(|e| io_error(&path, e))?;
        r.deserialize().collect::<Result<Vec<_>, _>>().map_err(|e| io_error(&path, e))
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn ints<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}
