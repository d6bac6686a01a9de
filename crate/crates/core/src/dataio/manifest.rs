use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{letterbox, load_ppm, parse_annotations, LetterboxTransform};
use crate::boxes::GroundTruthBox;
use crate::error::{Error, Result};
use crate::training::Sample;

/// Optional class-name table next to a manifest, one name per line.
pub const CLASS_TABLE: &str = "classes.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub annotation: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// Empty when no class table accompanies the manifest.
    pub classes: Vec<String>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_annotations(&self, index: usize) -> Result<Vec<GroundTruthBox>> {
        let entry = &self.entries[index];
        let boxes = parse_annotations(&entry.annotation).map_err(|e| Error::Manifest {
            path: entry.annotation.clone(),
            message: e.to_string(),
        })?;
        if !self.classes.is_empty() {
            if let Some(b) = boxes.iter().find(|b| b.class_id >= self.classes.len()) {
                return Err(Error::Manifest {
                    path: entry.annotation.clone(),
                    message: format!(
                        "class id {} not in the {}-entry class table",
                        b.class_id,
                        self.classes.len()
                    ),
                });
            }
        }
        Ok(boxes)
    }

    /// Image letterboxed to `input_size` with its boxes in network space.
    pub fn load_sample(&self, index: usize, input_size: usize) -> Result<(Sample, LetterboxTransform)> {
        let image = load_ppm(&self.entries[index].image)?;
        let (image, tr) = letterbox(&image, input_size)?;
        let boxes = self
            .load_annotations(index)?
            .into_iter()
            .map(|g| GroundTruthBox {
                class_id: g.class_id,
                bbox: tr.box_to_network(&g.bbox),
            })
            .collect();
        Ok((Sample { image, boxes }, tr))
    }

    pub fn load_samples(&self, input_size: usize) -> Result<Vec<Sample>> {
        (0..self.len())
            .map(|i| self.load_sample(i, input_size).map(|(s, _)| s))
            .collect()
    }
}

/// Reads a manifest: one image path per line, `#` comments, paths relative
/// to the manifest's directory. Every image and its sibling `.txt`
/// annotation must exist; all missing files are reported together.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    let mut missing = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let image = dir.join(line);
        let annotation = image.with_extension("txt");
        for p in [&image, &annotation] {
            if !p.is_file() {
                missing.push(p.display().to_string());
            }
        }
        entries.push(ManifestEntry { image, annotation });
    }
    if !missing.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: format!("missing files: {}", missing.join(", ")),
        });
    }
    if entries.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: "no images listed".into(),
        });
    }
    let table = dir.join(CLASS_TABLE);
    let classes = if table.is_file() {
        std::fs::read_to_string(&table)
            .map_err(|e| Error::io(&table, e))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    } else {
        Vec::new()
    };
    Ok(DatasetManifest {
        path: path.to_path_buf(),
        entries,
        classes,
    })
}

pub fn write_manifest(path: impl AsRef<Path>, images: &[impl AsRef<Path>]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for img in images {
        let _ = writeln!(out, "{}", img.as_ref().display());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) {
        std::fs::write(dir.join(name), "").unwrap();
    }

    #[test]
    fn order_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["b", "a", "c"] {
            touch(dir.path(), &format!("{n}.ppm"));
            touch(dir.path(), &format!("{n}.txt"));
        }
        let m = dir.path().join("list.txt");
        std::fs::write(&m, "# scenes\nb.ppm\n\na.ppm  # first\nc.ppm\n").unwrap();
        let manifest = load_manifest(&m).unwrap();
        let names: Vec<_> = manifest
            .entries
            .iter()
            .map(|e| e.image.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["b.ppm", "a.ppm", "c.ppm"]);
        assert_eq!(manifest.entries[0].annotation, dir.path().join("b.txt"));
        assert!(manifest.classes.is_empty());
    }

    #[test]
    fn missing_files_aggregated() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.ppm");
        touch(dir.path(), "b.txt");
        let m = dir.path().join("list.txt");
        std::fs::write(&m, "a.ppm\nb.ppm\n").unwrap();
        let msg = load_manifest(&m).unwrap_err().to_string();
        assert!(msg.contains("a.txt") && msg.contains("b.ppm"), "{msg}");
    }

    #[test]
    fn empty_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("list.txt");
        std::fs::write(&m, "# nothing\n").unwrap();
        assert!(matches!(load_manifest(&m), Err(Error::Manifest { .. })));
    }

    #[test]
    fn class_table_bounds_ids() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.ppm");
        std::fs::write(dir.path().join("a.txt"), "3 0.5 0.5 0.1 0.1\n").unwrap();
        std::fs::write(dir.path().join(CLASS_TABLE), "car\ntruck\n").unwrap();
        let m = dir.path().join("list.txt");
        std::fs::write(&m, "a.ppm\n").unwrap();
        let manifest = load_manifest(&m).unwrap();
        assert_eq!(manifest.classes, ["car", "truck"]);
        assert!(manifest.load_annotations(0).is_err());
    }
}
