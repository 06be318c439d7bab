//! JSON-lines detection output: one object per image,
//! `{"path": ..., "boxes": [[x1, y1, x2, y2, score, branch], ...]}`.

use lffd_core::assign::FaceBox;
use lffd_core::detect::Detection;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub path: String,
    pub boxes: Vec<[f32; 6]>,
}

impl DetectionRecord {
    pub fn new(path: &str, dets: &[Detection]) -> Self {
        Self {
            path: path.to_string(),
            boxes: dets
                .iter()
                .map(|d| {
                    let b = d.bbox;
                    [b.x1, b.y1, b.x2, b.y2, d.score, d.branch_id as f32]
                })
                .collect(),
        }
    }

    pub fn detections(&self) -> Vec<Detection> {
        self.boxes
            .iter()
            .map(|b| Detection {
                bbox: FaceBox::new(b[0], b[1], b[2], b[3]),
                score: b[4],
                branch_id: b[5] as usize,
            })
            .collect()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn parse_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Config(format!("bad detection line: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_line_round_trip() {
        let dets = vec![Detection {
            bbox: FaceBox::new(1.5, 2.0, 30.25, 41.0),
            score: 0.875,
            branch_id: 3,
        }];
        let r = DetectionRecord::new("a/b.ppm", &dets);
        let line = r.to_json_line();
        assert!(line.starts_with("{\"path\":\"a/b.ppm\",\"boxes\":[[1.5,2.0,30.25,41.0,0.875,3.0]]"));
        let back = DetectionRecord::parse_json_line(&line).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.detections(), dets);
    }
}
