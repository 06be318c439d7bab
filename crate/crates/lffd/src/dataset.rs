//! Annotated image sets on disk.

use std::fs;
use std::path::{Path, PathBuf};

use lffd_core::augment::Sample;

use crate::annotations::{read_annotations, write_annotations, Annotation};
use crate::image_io::{load_image, save_image};
use crate::{Error, Result};

pub const ANNOTATION_FILE: &str = "annotations.txt";

/// Images are resolved relative to the annotation file's directory.
pub fn load_dataset(annotation_file: &Path) -> Result<Vec<(PathBuf, Sample)>> {
    let root = annotation_file.parent().unwrap_or(Path::new("."));
    read_annotations(annotation_file)?
        .into_iter()
        .map(|a| {
            let image = load_image(&root.join(&a.path))?;
            Ok((
                a.path,
                Sample {
                    image,
                    faces: a.faces,
                },
            ))
        })
        .collect()
}

/// Writes `images/NNNNN.ppm` plus an annotation file under `dir`, and
/// returns the annotation file's path.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let rel = PathBuf::from("images").join(format!("{i:05}.ppm"));
        save_image(&dir.join(&rel), &s.image)?;
        entries.push(Annotation {
            path: rel,
            faces: s.faces.clone(),
        });
    }
    let ann = dir.join(ANNOTATION_FILE);
    write_annotations(&ann, &entries)?;
    Ok(ann)
}
