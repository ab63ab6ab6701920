//! Dataset manifests: directory scanning and the tab-separated manifest file.
//!
//! Expected layout is `root/<source>/<class>/<image>`, with class directories
//! named `normal` or `diabetic`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::DecoderSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal = 0,
    Diabetic = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Normal, Label::Diabetic];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Normal),
            1 => Some(Label::Diabetic),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Diabetic => "diabetic",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Label::Normal => "Normal",
            Label::Diabetic => "Diabetic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "0" => Some(Label::Normal),
            "diabetic" | "1" => Some(Label::Diabetic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path relative to the manifest root.
    pub path: PathBuf,
    pub label: Label,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// Files found during a scan that could not be used.
    pub rejects: Vec<Reject>,
}

pub const MANIFEST_HEADER: &str = "path\tlabel\tsource";

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Totals indexed by [`Label::index`].
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for e in &self.entries {
            counts[e.label.index()] += 1;
        }
        counts
    }

    pub fn source_counts(&self) -> BTreeMap<String, [usize; 2]> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            counts.entry(e.source.clone()).or_insert([0; 2])[e.label.index()] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<Label> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn absolute_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.entries[i].path)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", path_text(&e.path), e.label.as_str(), e.source);
        }
        out
    }

    /// Parses a manifest file; relative paths resolve against `root`.
    pub fn from_tsv(text: &str, root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() || (lineno == 0 && line == MANIFEST_HEADER) {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, label, source] = fields[..] else {
                return Err(Error::invalid(format!(
                    "manifest line {}: expected 3 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            };
            let label = Label::parse(label).ok_or_else(|| {
                Error::invalid(format!("manifest line {}: unknown label {label:?}", lineno + 1))
            })?;
            entries.push(ManifestEntry {
                path: PathBuf::from(path),
                label,
                source: source.to_string(),
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
            rejects: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new("."));
        Self::from_tsv(&text, root)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// One line per source and class plus the reject list.
    pub fn report(&self) -> String {
        let mut out = String::from("source\tnormal\tdiabetic\ttotal\n");
        for (source, [n, d]) in self.source_counts() {
            let _ = writeln!(out, "{source}\t{n}\t{d}\t{}", n + d);
        }
        let [n, d] = self.class_counts();
        let _ = writeln!(out, "total\t{n}\t{d}\t{}", n + d);
        if !self.rejects.is_empty() {
            let _ = writeln!(out, "\nrejected\treason");
            for r in &self.rejects {
                let _ = writeln!(out, "{}\t{}", path_text(&r.path), r.reason);
            }
        }
        out
    }
}

fn path_text(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut items = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<Vec<_>>>()?;
    items.sort();
    Ok(items)
}

/// Walks `root/<source>/<class>/` in lexicographic order, decoding every file
/// to confirm it is usable. Anything unusable is listed in `rejects`.
pub fn scan_manifest(root: &Path, decoders: &DecoderSet) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::invalid(format!("dataset root {} is not a directory", root.display())));
    }
    let mut manifest = DatasetManifest {
        root: root.to_path_buf(),
        ..Default::default()
    };
    let rel = |p: &Path| p.strip_prefix(root).unwrap_or(p).to_path_buf();
    for source_dir in sorted_dir(root)? {
        if !source_dir.is_dir() {
            continue;
        }
        let source = source_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for class_dir in sorted_dir(&source_dir)? {
            let name = class_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let label = match Label::parse(&name) {
                Some(l) if class_dir.is_dir() && name.parse::<u8>().is_err() => l,
                _ => {
                    manifest.rejects.push(Reject {
                        path: rel(&class_dir),
                        reason: "not a normal/ or diabetic/ class directory".into(),
                    });
                    continue;
                }
            };
            for file in sorted_dir(&class_dir)? {
                let reason = if file.is_dir() {
                    Some("unexpected directory".to_string())
                } else {
                    decoders.decode_file(&file).err().map(|e| match e {
                        Error::Decode { reason, .. } => reason,
                        other => other.to_string(),
                    })
                };
                match reason {
                    Some(reason) => manifest.rejects.push(Reject { path: rel(&file), reason }),
                    None => manifest.entries.push(ManifestEntry {
                        path: rel(&file),
                        label,
                        source: source.clone(),
                    }),
                }
            }
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_roundtrip() {
        let m = DatasetManifest {
            root: PathBuf::from("/data"),
            entries: vec![
                ManifestEntry {
                    path: "a/normal/x.ppm".into(),
                    label: Label::Normal,
                    source: "a".into(),
                },
                ManifestEntry {
                    path: "b/diabetic/y.ppm".into(),
                    label: Label::Diabetic,
                    source: "b".into(),
                },
            ],
            rejects: vec![],
        };
        let back = DatasetManifest::from_tsv(&m.to_tsv(), Path::new("/data")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.class_counts(), [1, 1]);
    }

    #[test]
    fn bad_label_is_rejected() {
        assert!(DatasetManifest::from_tsv("x.ppm\tmild\tsrc\n", Path::new(".")).is_err());
    }
}
