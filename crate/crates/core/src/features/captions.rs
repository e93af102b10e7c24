use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Reference captions of one video; one JSON object per line on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub video_id: String,
    pub captions: Vec<String>,
}

/// Parses line-delimited JSON records of type `R`, skipping blank lines.
pub fn read_jsonl<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>, FeatureError> {
    let file = std::fs::File::open(path).map_err(|e| FeatureError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FeatureError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| FeatureError::Json {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<R: Serialize>(path: &Path, records: &[R]) -> Result<(), FeatureError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| FeatureError::io(path, e))?;
    f.write_all(&buf).map_err(|e| FeatureError::io(path, e))
}

pub fn validate_captions(records: &[CaptionRecord]) -> Result<(), FeatureError> {
    let mut seen = HashSet::new();
    for r in records {
        if r.captions.is_empty() {
            return Err(FeatureError::NoCaptions(r.video_id.clone()));
        }
        if !seen.insert(r.video_id.as_str()) {
            return Err(FeatureError::DuplicateVideoId(r.video_id.clone()));
        }
    }
    Ok(())
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>, FeatureError> {
    let records: Vec<CaptionRecord> = read_jsonl(path)?;
    validate_captions(&records)?;
    Ok(records)
}

pub fn write_captions(path: &Path, records: &[CaptionRecord]) -> Result<(), FeatureError> {
    validate_captions(records)?;
    write_jsonl(path, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let recs = vec![
            CaptionRecord {
                video_id: "v1".into(),
                captions: vec!["a man runs".into(), "someone runs".into()],
            },
            CaptionRecord {
                video_id: "v2".into(),
                captions: vec!["a cat sleeps".into()],
            },
        ];
        write_captions(&p, &recs).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap().lines().next().unwrap(),
            r#"{"video_id":"v1","captions":["a man runs","someone runs"]}"#
        );
        assert_eq!(read_captions(&p).unwrap(), recs);

        let dup = vec![recs[0].clone(), recs[0].clone()];
        assert!(matches!(validate_captions(&dup), Err(FeatureError::DuplicateVideoId(_))));
        let empty = vec![CaptionRecord {
            video_id: "x".into(),
            captions: vec![],
        }];
        assert!(matches!(validate_captions(&empty), Err(FeatureError::NoCaptions(_))));
    }

    #[test]
    fn bad_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, "{\"video_id\":\"a\",\"captions\":[\"x\"]}\nnot json\n").unwrap();
        match read_captions(&p) {
            Err(FeatureError::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
