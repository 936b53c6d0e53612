//! VisDrone-style annotation text: one object per line,
//! `left,top,width,height,score,category,truncation,occlusion`.
//!
//! Category 0 marks ignore regions and is dropped, as are zero-extent boxes.
//! Image dimensions are not carried by the format and must be supplied.

use std::path::Path;

use crate::error::{Error, Result};
use crate::label::BoundingBox;
use crate::metrics::SceneAnnotation;

/// Parses annotation text into a scene.
pub fn parse_visdrone_str(text: &str, image_w: usize, image_h: usize) -> Result<SceneAnnotation> {
    let mut boxes = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
        // a trailing comma produces one empty field
        if fields.last() == Some(&"") {
            fields.pop();
        }
        if fields.len() != 8 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected 8 comma-separated fields, got {}", fields.len()),
            });
        }
        let nums: Vec<i64> = fields
            .iter()
            .map(|f| f.parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: idx + 1, msg: e.to_string() })?;
        let (left, top, w, h, _score, category) =
            (nums[0], nums[1], nums[2], nums[3], nums[4], nums[5]);
        if category == 0 || w <= 0 || h <= 0 {
            continue;
        }
        boxes.push(BoundingBox::new(
            left as f64 + w as f64 / 2.0,
            top as f64 + h as f64 / 2.0,
            w as f64,
            h as f64,
            category as i32,
        )?);
    }
    SceneAnnotation::new(image_w, image_h, boxes)
}

/// Reads an annotation file (see [`parse_visdrone_str`]).
pub fn parse_visdrone(path: &Path, image_w: usize, image_h: usize) -> Result<SceneAnnotation> {
    parse_visdrone_str(&std::fs::read_to_string(path)?, image_w, image_h)
}

/// Writes a scene back out in the same format (score 1, no truncation or
/// occlusion markers).
pub fn write_visdrone(path: &Path, scene: &SceneAnnotation) -> Result<()> {
    let mut out = String::new();
    for b in &scene.boxes {
        let (x1, y1, _, _) = b.corners();
        out.push_str(&format!(
            "{},{},{},{},1,{},0,0\n",
            x1.round() as i64,
            y1.round() as i64,
            b.w.round() as i64,
            b.h.round() as i64,
            b.category
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_format() {
        let sc = parse_visdrone_str("10,20,30,40,1,4,0,0\n", 200, 200).unwrap();
        assert_eq!(sc.boxes.len(), 1);
        let b = &sc.boxes[0];
        assert_eq!((b.xc, b.yc, b.w, b.h, b.category), (25.0, 40.0, 30.0, 40.0, 4));
    }

    #[test]
    fn empty_file_gives_empty_scene() {
        let sc = parse_visdrone_str("", 100, 100).unwrap();
        assert!(sc.is_empty());
    }

    #[test]
    fn ignore_regions_and_degenerate_boxes_dropped() {
        let text = "10,20,30,40,1,0,0,0\n10,20,0,40,1,3,0,0\n10,20,30,40,1,2,0,0,\n";
        let sc = parse_visdrone_str(text, 200, 200).unwrap();
        assert_eq!(sc.boxes.len(), 1);
        assert_eq!(sc.boxes[0].category, 2);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_visdrone_str("10,20,30,40,1,4,0,0\nbogus\n", 200, 200).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.txt");
        let sc = parse_visdrone_str("10,20,30,40,1,4,0,0\n50,60,7,8,1,2,0,0\n", 200, 200).unwrap();
        write_visdrone(&path, &sc).unwrap();
        let back = parse_visdrone(&path, 200, 200).unwrap();
        assert_eq!(back.boxes.len(), sc.boxes.len());
        for (a, b) in back.boxes.iter().zip(&sc.boxes) {
            assert_eq!((a.xc, a.yc, a.w, a.h, a.category), (b.xc, b.yc, b.w, b.h, b.category));
        }
    }
}
