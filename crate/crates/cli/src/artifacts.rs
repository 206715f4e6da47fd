//! Output files. CSVs start with one `#` comment line carrying the seed; JSON documents
//! carry it as a field.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use gne_core::game::JointState;

pub struct Artifacts {
    dir: PathBuf,
    header: String,
    command: String,
    config: String,
    seed: u64,
}

impl Artifacts {
    pub fn new(dir: &Path, command: &str, config: &Path, seed: u64) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let config = config.display().to_string();
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            header: format!("# gne {command} seed={seed} config={config}"),
            command: command.to_string(),
            config,
            seed,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> io::Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.header)?;
        body(&mut buf)?;
        fs::write(self.path(name), buf)
    }

    /// Writes `doc` with `command`, `config` and `seed` fields prepended.
    pub fn json(&self, name: &str, doc: Value) -> io::Result<Value> {
        let mut m = Map::new();
        m.insert("command".into(), json!(self.command));
        m.insert("config".into(), json!(self.config));
        m.insert("seed".into(), json!(self.seed));
        match doc {
            Value::Object(o) => m.extend(o),
            other => {
                m.insert("data".into(), other);
            }
        }
        let doc = Value::Object(m);
        let mut text = serde_json::to_string_pretty(&doc).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(doc)
    }
}

pub fn state_json(w: &JointState) -> Value {
    let n = w.layout().n_agents();
    json!({
        "x": w.x(),
        "lambda": (0..n).map(|i| w.lambda(i).to_vec()).collect::<Vec<_>>(),
        "nu": (0..n).map(|i| w.nu(i).to_vec()).collect::<Vec<_>>(),
    })
}
