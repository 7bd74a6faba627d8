//! Line-delimited JSON score records from external classifiers.
//!
//! Each non-empty line is one object, either
//! `{"logits": [..], "label": <int|null>, "group": "in"|"out"}` or
//! `{"score": <number>, "group": "in"|"out"}`. Score records may say
//! `"label": "pos"|"neg"` instead of `group`. All lines must share one shape.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::scores::{softmax, Logits, ScoreKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordShape {
    Score,
    Logits,
}

/// Scores split by group. `in`/`pos` records are the positive population.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePopulations {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub shape: RecordShape,
}

pub fn ingest_external_scores(path: impl AsRef<Path>, kind: ScoreKind) -> Result<ScorePopulations> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(BufReader::new(file), kind).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_records(reader: impl BufRead, kind: ScoreKind) -> Result<ScorePopulations> {
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    let mut shape = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::MalformedRecord {
            line: line_no,
            message,
        };
        let value: Value = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| bad("record is not a JSON object".into()))?;
        let (this_shape, score) = record_score(obj, kind).map_err(bad)?;
        match shape {
            None => shape = Some(this_shape),
            Some(s) if s != this_shape => {
                return Err(bad(format!(
                    "{this_shape:?} record after {s:?} records; shapes cannot be mixed"
                )))
            }
            Some(_) => {}
        }
        if record_is_positive(obj, this_shape).map_err(bad)? {
            positive.push(score);
        } else {
            negative.push(score);
        }
    }
    let shape = shape.ok_or_else(|| Error::MalformedRecord {
        line: 0,
        message: "no records".into(),
    })?;
    Ok(ScorePopulations {
        positive,
        negative,
        shape,
    })
}

fn record_score(obj: &Map<String, Value>, kind: ScoreKind) -> Result<(RecordShape, f64), String> {
    match (obj.get("score"), obj.get("logits")) {
        (Some(_), Some(_)) => Err("record has both score and logits".into()),
        (None, None) => Err("record needs score or logits".into()),
        (Some(s), None) => {
            let score = s
                .as_f64()
                .ok_or_else(|| format!("score is not a number: {s}"))?;
            if !score.is_finite() {
                return Err(format!("score is not finite: {s}"));
            }
            Ok((RecordShape::Score, score))
        }
        (None, Some(l)) => {
            let values = l
                .as_array()
                .ok_or_else(|| "logits is not an array".to_string())?
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| format!("non-numeric logit {v}")))
                .collect::<Result<Vec<f64>, String>>()?;
            let logits = Logits::new(values).map_err(|e| e.to_string())?;
            if let Some(label) = obj.get("label") {
                if !(label.is_null() || label.is_u64()) {
                    return Err(format!("logits label must be a class index or null, got {label}"));
                }
            }
            Ok((RecordShape::Logits, kind.score(&softmax(&logits))))
        }
    }
}

fn record_is_positive(obj: &Map<String, Value>, shape: RecordShape) -> Result<bool, String> {
    if let Some(g) = obj.get("group") {
        return match g.as_str() {
            Some("in") => Ok(true),
            Some("out") => Ok(false),
            _ => Err(format!("group must be \"in\" or \"out\", got {g}")),
        };
    }
    if shape == RecordShape::Score {
        if let Some(l) = obj.get("label") {
            return match l.as_str() {
                Some("pos") => Ok(true),
                Some("neg") => Ok(false),
                _ => Err(format!("label must be \"pos\" or \"neg\", got {l}")),
            };
        }
    }
    Err("missing group".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auroc;

    fn parse(text: &str) -> Result<ScorePopulations> {
        parse_records(text.as_bytes(), ScoreKind::MaxProb)
    }

    #[test]
    fn two_scores() {
        let p = parse("{\"score\": 0.9, \"group\": \"in\"}\n{\"score\": 0.1, \"group\": \"out\"}\n")
            .unwrap();
        assert_eq!(auroc(&p.positive, &p.negative).unwrap(), 1.0);
    }

    #[test]
    fn logits_are_scored() {
        let p = parse("{\"logits\": [2, 1, 0], \"label\": 0, \"group\": \"in\"}").unwrap();
        let e = [2.0f64.exp(), 1.0f64.exp(), 1.0];
        let expected = e[0] / e.iter().sum::<f64>();
        assert!((p.positive[0] - expected).abs() < 1e-15);
        assert!((p.positive[0] - 0.665).abs() < 1e-3);
        assert_eq!(p.shape, RecordShape::Logits);
    }

    #[test]
    fn pos_neg_labels_on_score_records() {
        let p = parse("{\"score\": 1, \"label\": \"pos\"}\n\n{\"score\": 2, \"label\": \"neg\"}").unwrap();
        assert_eq!((p.positive.len(), p.negative.len()), (1, 1));
    }

    #[test]
    fn malformed_line_is_reported() {
        let text = "{\"score\": 0.9, \"group\": \"in\"}\n{\"score\": 0.2, \"group\": \"out\"}\n{\"score\": \"x\", \"group\": \"out\"}\n";
        match parse(text) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected line 3 error, got {other:?}"),
        }
        for bad in [
            "{\"score\": 0.9}",
            "{\"score\": 0.9, \"group\": \"middle\"}",
            "[1, 2]",
            "{\"logits\": [1, \"a\"], \"group\": \"in\"}",
            "{\"logits\": [1], \"group\": \"in\"}",
            "{\"score\": 1, \"logits\": [1, 2], \"group\": \"in\"}",
            "not json",
            "",
        ] {
            assert!(parse(bad).is_err(), "{bad}");
        }
        let mixed = "{\"score\": 0.9, \"group\": \"in\"}\n{\"logits\": [1, 2], \"group\": \"in\"}";
        assert!(matches!(parse(mixed), Err(Error::MalformedRecord { line: 2, .. })));
    }
}
