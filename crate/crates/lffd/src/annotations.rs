//! Annotation lists: one image per line, `relative/path x1 y1 x2 y2 ...`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lffd_core::assign::FaceBox;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    /// Relative to the annotation file's directory.
    pub path: PathBuf,
    pub faces: Vec<FaceBox>,
}

/// Blank lines and lines starting with `#` are skipped.
pub fn parse_annotations(text: &str, source: &Path) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Annotation {
            path: source.to_path_buf(),
            line: idx + 1,
            msg,
        };
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let path = fields.next().expect("non-empty line");
        let nums = fields
            .map(|f| f.parse::<f32>().map_err(|_| err(format!("'{f}' is not a number"))))
            .collect::<Result<Vec<f32>>>()?;
        if nums.len() % 4 != 0 {
            return Err(err(format!("{} coordinates is not a multiple of 4", nums.len())));
        }
        let faces = nums
            .chunks_exact(4)
            .map(|c| {
                let b = FaceBox::new(c[0], c[1], c[2], c[3]);
                if b.is_valid() {
                    Ok(b)
                } else {
                    Err(err(format!("degenerate box {c:?}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Annotation {
            path: PathBuf::from(path),
            faces,
        });
    }
    Ok(out)
}

pub fn format_annotations(items: &[Annotation]) -> String {
    let mut s = String::new();
    for a in items {
        s.push_str(&a.path.to_string_lossy());
        for f in &a.faces {
            let _ = write!(s, " {} {} {} {}", f.x1, f.y1, f.x2, f.y2);
        }
        s.push('\n');
    }
    s
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

pub fn write_annotations(path: &Path, items: &[Annotation]) -> Result<()> {
    fs::write(path, format_annotations(items)).map_err(|e| Error::io(path, e))
}
