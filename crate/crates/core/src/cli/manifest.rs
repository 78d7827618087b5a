use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imagecore::{read_raw, read_rgb_png};
use crate::pipeline::ImagePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(format!("unknown split {other:?} (expected train or val)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub rgb: PathBuf,
    pub raw: PathBuf,
    pub split: Split,
}

/// Tab-separated `rgb_path  raw_path  split` lines. Relative paths are
/// resolved against the manifest's directory; `#` starts a comment and a
/// `# seed: N` line records the generating seed.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub seed: Option<u64>,
}

impl DatasetManifest {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut problems = Vec::new();
        let mut entries = Vec::new();
        let mut seed = None;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let t = line.trim();
            if let Some(c) = t.strip_prefix('#') {
                if let Some(v) = c.trim().strip_prefix("seed:") {
                    match v.trim().parse() {
                        Ok(s) => seed = Some(s),
                        Err(_) => problems.push(format!("line {n}: bad seed {:?}", v.trim())),
                    }
                }
                continue;
            }
            if t.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                problems.push(format!("line {n}: expected 3 tab-separated fields, found {}", fields.len()));
                continue;
            }
            let split = match fields[2].trim().parse::<Split>() {
                Ok(s) => s,
                Err(e) => {
                    problems.push(format!("line {n}: {e}"));
                    continue;
                }
            };
            entries.push(ManifestEntry { rgb: base.join(fields[0].trim()), raw: base.join(fields[1].trim()), split });
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert((&e.rgb, &e.raw)) {
                problems.push(format!("pair {} / {} listed more than once", e.rgb.display(), e.raw.display()));
            }
        }
        let train: BTreeSet<_> = entries.iter().filter(|e| e.split == Split::Train).map(|e| &e.rgb).collect();
        for e in entries.iter().filter(|e| e.split == Split::Val) {
            if train.contains(&e.rgb) {
                problems.push(format!("{} appears in both train and val", e.rgb.display()));
            }
        }
        if entries.is_empty() && problems.is_empty() {
            problems.push("manifest lists no image pairs".into());
        }
        if !problems.is_empty() {
            return Err(Error::Manifest { path: path.to_path_buf(), problems });
        }
        Ok(DatasetManifest { path: path.to_path_buf(), entries, seed })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Manifest { path: path.to_path_buf(), problems: vec![format!("cannot read: {e}")] })?;
        Self::parse(path, &text)
    }

    pub fn split(&self, s: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == s)
    }

    /// Reads every pair, collecting all missing files and size mismatches
    /// before failing.
    pub fn load_pairs(&self) -> Result<Vec<(ManifestEntry, ImagePair)>> {
        let mut problems = Vec::new();
        let mut out = Vec::new();
        for e in &self.entries {
            let rgb = read_rgb_png(&e.rgb);
            let raw = read_raw(&e.raw);
            match (rgb, raw) {
                (Ok(rgb), Ok(raw)) => {
                    if rgb.height != raw.height() || rgb.width != raw.width() {
                        problems.push(format!(
                            "{}: sRGB is {}x{} but RAW is {}x{}",
                            e.rgb.display(),
                            rgb.height,
                            rgb.width,
                            raw.height(),
                            raw.width()
                        ));
                    } else if rgb.height % 2 != 0 || rgb.width % 2 != 0 {
                        problems.push(format!("{}: odd dimensions {}x{}", e.rgb.display(), rgb.height, rgb.width));
                    } else {
                        out.push((e.clone(), ImagePair { rgb, raw }));
                    }
                }
                (a, b) => {
                    for err in [a.err(), b.err()].into_iter().flatten() {
                        problems.push(err.to_string());
                    }
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Manifest { path: self.path.clone(), problems });
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(seed) = self.seed {
            s.push_str(&format!("# seed: {seed}\n"));
        }
        let base = self.path.parent().unwrap_or(Path::new(""));
        for e in &self.entries {
            let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
            s.push_str(&format!("{}\t{}\t{}\n", rel(&e.rgb), rel(&e.raw), e.split));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let m = DatasetManifest::parse(Path::new("/data/m.tsv"), "# seed: 5\na.png\ta.raw\ttrain\n\nb.png\tb.raw\tval\n").unwrap();
        assert_eq!(m.seed, Some(5));
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[1].rgb, PathBuf::from("/data/b.png"));
        assert_eq!(m.split(Split::Val).count(), 1);
        assert_eq!(DatasetManifest::parse(Path::new("/data/m.tsv"), &m.to_text()).unwrap(), m);
    }

    #[test]
    fn lists_every_problem() {
        let text = "a.png\ta.raw\n b.png\tb.raw\ttest\nc.png\tc.raw\ttrain\nc.png\tc.raw\tval\n";
        match DatasetManifest::parse(Path::new("m.tsv"), text) {
            Err(Error::Manifest { problems, .. }) => assert_eq!(problems.len(), 4, "{problems:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_manifest_names_path() {
        let e = DatasetManifest::parse(Path::new("empty.tsv"), "# nothing\n").unwrap_err();
        assert!(e.to_string().contains("empty.tsv"));
    }
}
