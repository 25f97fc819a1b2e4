//! `path,label` CSV listing labeled graph files.
//!
//! An optional first line `# classes: name0,name1,...` names the classes;
//! without it classes are named by their ids. Relative paths resolve
//! against the manifest's directory. Other `#` lines are comments.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const CLASSES_PREFIX: &str = "# classes:";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingManifest {
    entries: Vec<ManifestEntry>,
    classes: Vec<String>,
}

impl TrainingManifest {
    pub fn new(entries: Vec<ManifestEntry>, classes: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.label >= classes.len() {
                return Err(Error::LabelOutOfRange {
                    label: e.label,
                    classes: classes.len(),
                });
            }
            if !seen.insert(&e.path) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate manifest path {}",
                    e.path.display()
                )));
            }
        }
        Ok(Self { entries, classes })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct labels actually present.
    pub fn present_classes(&self) -> usize {
        self.entries.iter().map(|e| e.label).collect::<HashSet<_>>().len()
    }

    /// Same entries with labels permuted by `perm` (entry `i` of the
    /// result is entry `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            entries: perm.iter().map(|&i| self.entries[i].clone()).collect(),
            classes: self.classes.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let (named, body, offset) = match text.split_once('\n') {
            Some((first, rest)) if first.trim_start().starts_with(CLASSES_PREFIX) => {
                let names = first.trim_start()[CLASSES_PREFIX.len()..]
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .collect::<Vec<_>>();
                (Some(names), rest, 1)
            }
            _ => (None, text.as_str(), 0),
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .from_reader(body.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| parse_err(offset + 1, e.to_string()))?
            .clone();
        if header.iter().map(str::trim).collect::<Vec<_>>() != ["path", "label"] {
            return Err(parse_err(offset + 1, "expected header \"path,label\"".into()));
        }
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(line + offset, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize) + offset;
            let label: usize = record[1]
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("label {:?} is not a class id", &record[1])))?;
            entries.push(ManifestEntry {
                path: base.join(record[0].trim()),
                label,
            });
        }
        let classes = named.unwrap_or_else(|| {
            let c = entries.iter().map(|e| e.label + 1).max().unwrap_or(0);
            (0..c).map(|i| i.to_string()).collect()
        });
        Self::new(entries, classes)
    }

    /// Writes paths relative to the manifest's directory when possible.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_with_comments(path, &[])
    }

    /// `save` with extra `# ` comment lines after the class line.
    pub fn save_with_comments(&self, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = Vec::new();
        writeln!(out, "{CLASSES_PREFIX} {}", self.classes.join(",")).expect("vec write");
        for c in comments {
            writeln!(out, "# {c}").expect("vec write");
        }
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["path", "label"]).expect("vec write");
            for e in &self.entries {
                let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
                w.write_record([rel.to_string_lossy().as_ref(), &e.label.to_string()])
                    .expect("vec write");
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_class_names() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            ManifestEntry { path: dir.path().join("g/a.json"), label: 0 },
            ManifestEntry { path: dir.path().join("g/b.json"), label: 1 },
        ];
        let m = TrainingManifest::new(entries, vec!["clustered".into(), "dispersed".into()]).unwrap();
        let p = dir.path().join("m.csv");
        m.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("g/a.json,0"));
        assert_eq!(TrainingManifest::load(&p).unwrap(), m);
        m.save_with_comments(&p, &["seed=3".into()]).unwrap();
        assert_eq!(TrainingManifest::load(&p).unwrap(), m);
    }

    #[test]
    fn plain_csv_names_classes_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "path,label\na,0\nb,2\n").unwrap();
        let m = TrainingManifest::load(&p).unwrap();
        assert_eq!(m.classes(), ["0", "1", "2"]);
        assert_eq!(m.present_classes(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "file,label\na,0\n").unwrap();
        assert!(TrainingManifest::load(&p).is_err());
        std::fs::write(&p, "path,label\na,0\nb,x\n").unwrap();
        let err = TrainingManifest::load(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        std::fs::write(&p, "# classes: a\npath,label\na,0\nb,1\n").unwrap();
        assert!(matches!(TrainingManifest::load(&p), Err(Error::LabelOutOfRange { .. })));
        std::fs::write(&p, "path,label\na,0\na,1\n").unwrap();
        assert!(TrainingManifest::load(&p).is_err());
    }
}
