//! Groundtruth and detection records, and their JSON-lines files.
//!
//! One JSON object per line:
//!
//! ```text
//! {"image_id":3,"box":[10.0,12.0,40.0,60.0],"class":"dog","score":0.87}
//! ```
//!
//! Groundtruth lines carry no `score`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};

pub type ImageId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundtruthRecord {
    pub image_id: ImageId,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: ImageId,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class: String,
    pub score: f64,
}

pub type GroundtruthSet = Vec<GroundtruthRecord>;
pub type DetectionResultSet = Vec<DetectionRecord>;

/// Groups records by image, preserving input order within an image.
pub fn by_image<T, F: Fn(&T) -> ImageId>(records: &[T], key: F) -> BTreeMap<ImageId, Vec<&T>> {
    let mut out: BTreeMap<ImageId, Vec<&T>> = BTreeMap::new();
    for r in records {
        out.entry(key(r)).or_default().push(r);
    }
    out
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: origin.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").expect("writing to a Vec");
    }
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

pub fn load_groundtruth(path: impl AsRef<Path>) -> Result<GroundtruthSet> {
    let path = path.as_ref();
    parse_jsonl(&read_text(path)?, &path.display().to_string())
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionResultSet> {
    let path = path.as_ref();
    let dets: DetectionResultSet = parse_jsonl(&read_text(path)?, &path.display().to_string())?;
    if let Some(d) = dets.iter().find(|d| !(0.0..=1.0).contains(&d.score)) {
        return Err(Error::invalid(format!(
            "detection score {} outside [0, 1] (image {})",
            d.score, d.image_id
        )));
    }
    Ok(dets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_schema() {
        let d = DetectionRecord {
            image_id: 3,
            bbox: BBox::new(1.0, 2.0, 3.0, 4.0).unwrap(),
            class: "dog".into(),
            score: 0.5,
        };
        let text = to_jsonl(&[d.clone()]).unwrap();
        assert_eq!(text, "{\"image_id\":3,\"box\":[1.0,2.0,3.0,4.0],\"class\":\"dog\",\"score\":0.5}\n");
        let back: Vec<DetectionRecord> = parse_jsonl(&text, "mem").unwrap();
        assert_eq!(back, vec![d]);
    }

    #[test]
    fn bad_line_reports_number() {
        let err = parse_jsonl::<GroundtruthRecord>("\n{\"image_id\":1}\n", "gt").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
