//! `run.meta`: what each command was run with, enough to repeat it exactly.

use std::path::Path;

use cpdnet_core::rng::RNG_ALGORITHM;
use cpdnet_core::util::write_atomic;
use cpdnet_core::{Error, Result};
use serde_json::{json, Map, Value};

pub const META_FILE: &str = "run.meta";

/// Records `command` in `<dir>/run.meta`, keeping entries of other commands.
pub fn record(
    dir: &Path,
    command: &str,
    argv: &[String],
    spec: Option<&[u8]>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(META_FILE);
    let mut all: Map<String, Value> = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?,
        Err(_) => Map::new(),
    };
    all.insert(
        command.to_string(),
        json!({
            "args": argv,
            "spec_crc32": spec.map(|b| format!("{:08x}", crc32fast::hash(b))),
            "version": concat!("cpdnet ", env!("CARGO_PKG_VERSION")),
            "seed": seed,
            "rng": RNG_ALGORITHM,
            "threads": threads,
            "platform": format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH),
        }),
    );
    let text = serde_json::to_string_pretty(&Value::Object(all)).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&path, format!("{text}\n").as_bytes())
}
