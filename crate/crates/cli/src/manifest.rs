//! Run manifests: the resolved config as `key = value` lines, with run
//! metadata in `#` comments so the file can be fed back via `--config`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use arfa_core::error::Result;
use arfa_core::io::write_atomic;
use arfa_core::kv;

use crate::config::Settings;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct Manifest {
    pub command: &'static str,
    pub settings: Settings,
    pub artifacts: Vec<PathBuf>,
    pub wall: Duration,
    pub notes: Vec<(String, String)>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut out = format!("# arfa {} manifest\n# version: {VERSION}\n", self.command);
        for a in &self.artifacts {
            out += &format!("# artifact: {}\n", a.display());
        }
        for (k, v) in &self.notes {
            out += &format!("# {k}: {v}\n");
        }
        out += &format!("# wall_s: {:.3}\n", self.wall.as_secs_f64());
        out + &kv::format(self.settings.pairs())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}

