use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Optional file in the dataset root listing class directory names, one per
/// line, in model output order.
pub const CLASS_LIST_FILE: &str = "classes.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub path: PathBuf,
    pub class_index: usize,
    /// `class_dir/file_stem`.
    pub image_id: String,
}

/// Images laid out as `root/<class_name>/*.ppm`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
    pub class_names: Vec<String>,
}

impl DatasetIndex {
    /// Scans `root`. Class indices follow `classes.txt` when present,
    /// otherwise the sorted directory names. At most `per_class_limit`
    /// images (in file-name order) are taken from each class.
    pub fn scan(root: &Path, per_class_limit: Option<usize>) -> Result<Self> {
        let mut dirs: Vec<String> = Vec::new();
        for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let entry = entry.map_err(|e| Error::io(root, e))?;
            if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
                dirs.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        dirs.sort();

        let list_path = root.join(CLASS_LIST_FILE);
        let class_names: Vec<String> = if list_path.is_file() {
            let text = fs::read_to_string(&list_path).map_err(|e| Error::io(&list_path, e))?;
            let names: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect();
            let unique: BTreeSet<&String> = names.iter().collect();
            if unique.len() != names.len() {
                return Err(Error::contract(format!("{} lists a class twice", list_path.display())));
            }
            if let Some(d) = dirs.iter().find(|d| !unique.contains(d)) {
                return Err(Error::contract(format!(
                    "class directory `{d}` is not listed in {}",
                    list_path.display()
                )));
            }
            names
        } else {
            dirs.clone()
        };

        let mut entries = Vec::new();
        for dir in &dirs {
            let class_index = class_names.iter().position(|c| c == dir).expect("validated above");
            let class_path = root.join(dir);
            let mut files: Vec<PathBuf> = fs::read_dir(&class_path)
                .map_err(|e| Error::io(&class_path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.is_file()
                        && p.extension()
                            .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
                })
                .collect();
            files.sort();
            if let Some(limit) = per_class_limit {
                files.truncate(limit);
            }
            for path in files {
                let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                entries.push(DatasetEntry {
                    image_id: format!("{dir}/{stem}"),
                    class_index,
                    path,
                });
            }
        }
        entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        Ok(Self {
            root: root.to_path_buf(),
            entries,
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
