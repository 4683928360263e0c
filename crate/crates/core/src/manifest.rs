//! Model directory manifest.
//!
//! Plain text, one model per line: `id kind file [param]`. `kind` is
//! `bitswap` or `hyperprior`; `file` is relative to the manifest; `param`
//! (depth for bit-swap, quality for hyperprior) is informational and checked
//! against the file when present. Blank lines and `#` comments are ignored.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::roi::ModelRegistry;
use crate::weights::{read_file, ModelFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Bitswap,
    Hyperprior,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bitswap => "bitswap",
            ModelKind::Hyperprior => "hyperprior",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: u16,
    pub kind: ModelKind,
    pub file: PathBuf,
    pub param: Option<f64>,
}

impl ManifestEntry {
    pub fn line(&self) -> String {
        let mut s = format!("{} {} {}", self.id, self.kind.name(), self.file.display());
        if let Some(p) = self.param {
            s.push_str(&format!(" {p}"));
        }
        s
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out: Vec<ManifestEntry> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Config(format!("manifest line {}: {what}", n + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(bad("expected `id kind file [param]`"));
        }
        let id: u16 = fields[0].parse().map_err(|_| bad("id is not a 16-bit integer"))?;
        let kind = match fields[1] {
            "bitswap" => ModelKind::Bitswap,
            "hyperprior" => ModelKind::Hyperprior,
            _ => return Err(bad("kind must be bitswap or hyperprior")),
        };
        let param = match fields.get(3) {
            Some(p) => Some(p.parse().map_err(|_| bad("param is not a number"))?),
            None => None,
        };
        if out.iter().any(|e| e.id == id) {
            return Err(bad("duplicate id"));
        }
        out.push(ManifestEntry {
            id,
            kind,
            file: PathBuf::from(fields[2]),
            param,
        });
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries.iter().map(|e| e.line() + "\n").collect()
}

/// Loads every model the manifest at `path` lists.
pub fn load_registry(path: &Path) -> Result<ModelRegistry> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reg = ModelRegistry::new();
    for e in parse_manifest(&text)? {
        let model = read_file(&base.join(&e.file))?;
        let (kind, param) = match &model {
            ModelFile::Bitswap(m) => (ModelKind::Bitswap, m.depth() as f64),
            ModelFile::Hyperprior(m) => (ModelKind::Hyperprior, m.quality() as f64),
        };
        if kind != e.kind {
            return Err(Error::Config(format!("model {} is listed as {} but is {}", e.id, e.kind.name(), kind.name())));
        }
        if e.param.is_some_and(|p| (p - param).abs() > 1e-6 * param.abs().max(1.0)) {
            return Err(Error::Config(format!("model {} parameter differs from its file", e.id)));
        }
        reg.insert(e.id, model);
    }
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments() {
        let text = "# models\n1 hyperprior bg.rmlw 64\n\n2 bitswap blade.rmlw 2 # lossless\n";
        let e = parse_manifest(text).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[1].kind, ModelKind::Bitswap);
        assert_eq!(e[1].param, Some(2.0));
        assert_eq!(parse_manifest(&format_manifest(&e)).unwrap(), e);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(parse_manifest("1 jpeg x.rmlw").is_err());
        assert!(parse_manifest("70000 bitswap x.rmlw").is_err());
        assert!(parse_manifest("1 bitswap").is_err());
        assert!(parse_manifest("1 bitswap a\n1 bitswap b").is_err());
    }
}
