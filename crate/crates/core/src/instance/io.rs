//! JSON-lines persistence: one instance object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::cvrplib::{parse_cvrplib, scale_cvrplib};
use crate::instance::Instance;

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("{}: {e}", path.display()),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::file(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

/// Loads instances from a `.vrp` file (normalized to the unit square) or a
/// JSON-lines file, validating each one.
pub fn load_instances(path: &Path) -> Result<Vec<Instance>> {
    let is_vrp = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("vrp"));
    let instances = if is_vrp {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        vec![scale_cvrplib(&parse_cvrplib(&text)?)?]
    } else {
        read_jsonl::<Instance>(path)?
    };
    for inst in &instances {
        inst.validate()?;
    }
    Ok(instances)
}
