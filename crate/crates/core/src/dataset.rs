//! Labeled image collections and the class-per-folder PNG layout.

use std::fs;
use std::path::{Path, PathBuf};

use crate::color::RgbImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<RgbImage>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Area-downsamples every image to `side x side`.
    pub fn downsampled(&self, side: usize) -> Dataset {
        Dataset {
            images: self.images.iter().map(|img| img.downsample_area(side)).collect(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Writes `<dir>/<class>/<class>_<index>.png`.
    pub fn write_class_folders(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut counters = vec![0usize; self.class_names.len()];
        let mut written = Vec::with_capacity(self.len());
        for (img, &label) in self.images.iter().zip(&self.labels) {
            let name = &self.class_names[label];
            let class_dir = dir.join(name);
            fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
            let path = class_dir.join(format!("{name}_{:04}.png", counters[label]));
            counters[label] += 1;
            img.save_png(&path)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Reads a class-per-folder tree. Classes are the sorted subdirectory
    /// names; files within a class are read in sorted order.
    pub fn load_class_folders(dir: &Path) -> Result<Dataset> {
        let mut classes: Vec<PathBuf> = read_dir_sorted(dir)?
            .into_iter()
            .filter(|p| p.is_dir())
            .collect();
        classes.sort();
        if classes.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "{} has no class subdirectories",
                dir.display()
            )));
        }
        let mut out = Dataset { images: Vec::new(), labels: Vec::new(), class_names: Vec::new() };
        for (label, class_dir) in classes.iter().enumerate() {
            out.class_names.push(
                class_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            );
            for file in list_pngs(class_dir)? {
                out.images.push(RgbImage::load(&file)?);
                out.labels.push(label);
            }
        }
        Ok(out)
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// PNG files directly inside `dir`, sorted by path.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_dir_sorted(dir)?
        .into_iter()
        .filter(|p| {
            p.is_file()
                && p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("png"))
        })
        .collect())
}
