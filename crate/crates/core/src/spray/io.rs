use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::DetectionRecord;

/// Parses `lat lon label confidence` tab-separated lines. Blank lines, `#`
/// comments and a leading `lat` header are skipped.
pub fn parse_detections(text: &str, origin: &Path) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty()
            || line.starts_with('#')
            || (out.is_empty() && line.starts_with("lat"))
        {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [lat, lon, label, conf] = fields.as_slice() else {
            return Err(err(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        };
        let num = |s: &str, what: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| err(format!("{what} {s:?}: {e}")))
        };
        let rec = DetectionRecord::new(
            num(lat, "latitude")?,
            num(lon, "longitude")?,
            label.parse().map_err(|e: Error| err(e.to_string()))?,
            num(conf, "confidence")?,
        )
        .map_err(|e| err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_detections_file(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    parse_detections(&std::fs::read_to_string(path)?, path)
}

pub fn write_detections(records: &[DetectionRecord]) -> String {
    let mut s = String::from("lat\tlon\tlabel\tconfidence\n");
    for r in records {
        writeln!(s, "{}\t{}\t{}\t{:.6}", r.lat, r.lon, r.label, r.confidence)
            .expect("string write");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spray::{LeafLabel, STUDY_SITE};

    #[test]
    fn written_records_parse_back() {
        let recs = vec![
            DetectionRecord::new(STUDY_SITE.0, STUDY_SITE.1, LeafLabel::Anthracnose, 0.75).unwrap(),
            DetectionRecord::new(11.5588, 79.4025, LeafLabel::Healthy, 1.0).unwrap(),
        ];
        let back = parse_detections(&write_detections(&recs), Path::new("d.tsv")).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "lat\tlon\tlabel\tconfidence\n1\t2\thealthy\t0.5\n1\t2\tblight\t0.5\n";
        match parse_detections(text, Path::new("d.tsv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
