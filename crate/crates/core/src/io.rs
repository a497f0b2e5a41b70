//! Text formats used by the command-line tool.
//!
//! Vectors are accepted either as a JSON array or as numbers separated by
//! whitespace or commas. `inf` (and JSON strings `"inf"`) denote unbounded
//! entries. Session scores are JSON-lines, one vector per step. Session
//! output is JSON-lines too: one `{"step": t, "attention": [...]}` record per
//! step followed by a single `{"final_beta": [...]}` record.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::session::SessionRun;
use crate::transforms::{ProjectionCertificate, Transform};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl IoError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        IoError::Parse {
            line,
            message: message.into(),
        }
    }
}

/// Reads `-` from stdin and anything else as a file path.
pub fn read_input(path: &str) -> Result<String, IoError> {
    let err = |source| IoError::Read {
        path: path.to_owned(),
        source,
    };
    if path == "-" {
        let mut text = String::new();
        std::io::stdin().read_to_string(&mut text).map_err(err)?;
        Ok(text)
    } else {
        fs::read_to_string(path).map_err(err)
    }
}

/// Like [`read_input`], but an argument that is not an existing file and
/// looks like numbers is taken as the vector itself.
pub fn read_vector_arg(arg: &str) -> Result<Vec<f64>, IoError> {
    if arg != "-" && !Path::new(arg).is_file() && looks_inline(arg) {
        return parse_vector(arg);
    }
    parse_vector(&read_input(arg)?)
}

fn looks_inline(arg: &str) -> bool {
    let t = arg.trim_start();
    t.starts_with('[')
        || t.chars()
            .next()
            .is_some_and(|c| c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'i' | 'I'))
            && (t.contains(char::is_whitespace) || t.contains(',') || t.parse::<f64>().is_ok())
}

/// Parses one vector (see the module docs for the accepted forms).
pub fn parse_vector(text: &str) -> Result<Vec<f64>, IoError> {
    parse_vector_at(text, 1)
}

fn parse_vector_at(text: &str, line: usize) -> Result<Vec<f64>, IoError> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        let values: Vec<Value> =
            serde_json::from_str(trimmed).map_err(|e| IoError::parse(line, e.to_string()))?;
        return values
            .iter()
            .map(|v| match v {
                Value::Number(n) => n
                    .as_f64()
                    .ok_or_else(|| IoError::parse(line, format!("bad number {n}"))),
                Value::String(s) => parse_number(s, line),
                other => Err(IoError::parse(
                    line,
                    format!("expected a number, got {other}"),
                )),
            })
            .collect();
    }
    trimmed
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| parse_number(s, line))
        .collect()
}

fn parse_number(s: &str, line: usize) -> Result<f64, IoError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| IoError::parse(line, format!("cannot parse number '{s}'")))?;
    if v.is_nan() {
        return Err(IoError::parse(line, "NaN is not allowed"));
    }
    Ok(v)
}

/// JSON-lines score file: one vector per non-blank line.
pub fn parse_score_lines(text: &str) -> Result<Vec<Vec<f64>>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse_vector_at(l, n + 1))
        .collect()
}

/// Output of a single projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectOutput {
    pub transform: Transform,
    pub attention: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<ProjectionCertificate>,
}

impl ProjectOutput {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite values serialise")
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        serde_json::from_str(text.trim()).map_err(|e| IoError::parse(1, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum SessionRecord {
    Step { step: usize, attention: Vec<f64> },
    Final { final_beta: Vec<f64> },
}

/// Serialises a session run as JSON-lines (steps numbered from 1).
pub fn write_session(run: &SessionRun) -> String {
    let mut out = String::new();
    for (t, row) in run.attention.iter().enumerate() {
        let rec = SessionRecord::Step {
            step: t + 1,
            attention: row.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("finite values serialise"));
        out.push('\n');
    }
    let rec = SessionRecord::Final {
        final_beta: run.cumulative.clone(),
    };
    out.push_str(&serde_json::to_string(&rec).expect("finite values serialise"));
    out.push('\n');
    out
}

/// Reads the output of [`write_session`] back.
pub fn read_session(text: &str) -> Result<SessionRun, IoError> {
    let mut attention = Vec::new();
    let mut cumulative = None;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = n + 1;
        if cumulative.is_some() {
            return Err(IoError::parse(line_no, "record after final_beta"));
        }
        let rec: SessionRecord =
            serde_json::from_str(line).map_err(|e| IoError::parse(line_no, e.to_string()))?;
        match rec {
            SessionRecord::Step {
                step,
                attention: row,
            } => {
                if step != attention.len() + 1 {
                    return Err(IoError::parse(line_no, format!("unexpected step {step}")));
                }
                attention.push(row);
            }
            SessionRecord::Final { final_beta } => cumulative = Some(final_beta),
        }
    }
    let cumulative = cumulative.ok_or_else(|| IoError::parse(0, "missing final_beta record"))?;
    Ok(SessionRun {
        attention,
        cumulative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_forms() {
        assert_eq!(parse_vector("1.2 0.8 -0.2").unwrap(), vec![1.2, 0.8, -0.2]);
        assert_eq!(
            parse_vector("1.2,0.8, -0.2\n").unwrap(),
            vec![1.2, 0.8, -0.2]
        );
        assert_eq!(
            parse_vector("[0.5, 1, \"inf\"]").unwrap(),
            vec![0.5, 1.0, f64::INFINITY]
        );
        assert_eq!(parse_vector("0.5 inf").unwrap(), vec![0.5, f64::INFINITY]);
        assert!(parse_vector("").unwrap().is_empty());
        assert!(parse_vector("1 x").is_err());
        assert!(parse_vector("1 NaN").is_err());
        assert!(parse_vector("[1, null]").is_err());
    }

    #[test]
    fn inline_detection() {
        assert_eq!(read_vector_arg("1 2").unwrap(), vec![1.0, 2.0]);
        assert_eq!(read_vector_arg("-0.5").unwrap(), vec![-0.5]);
        assert_eq!(read_vector_arg("[3]").unwrap(), vec![3.0]);
        assert!(matches!(
            read_vector_arg("missing.txt"),
            Err(IoError::Read { .. })
        ));
    }

    #[test]
    fn score_lines_report_line_numbers() {
        let v = parse_score_lines("[1, 2]\n\n[3, 4]\n").unwrap();
        assert_eq!(v, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        match parse_score_lines("[1]\n[oops]\n") {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn session_round_trip() {
        let run = SessionRun {
            attention: vec![vec![0.1, 0.2, 0.7], vec![1.0 / 3.0, 0.0, 2.0 / 3.0]],
            cumulative: vec![0.1 + 1.0 / 3.0, 0.2, 0.7 + 2.0 / 3.0],
        };
        let text = write_session(&run);
        assert!(text.starts_with("{\"step\":1,\"attention\":[0.1,0.2,0.7]}\n"));
        assert_eq!(read_session(&text).unwrap(), run);
        assert!(read_session("{\"step\":1,\"attention\":[1]}\n").is_err());
        assert!(read_session("{\"step\":2,\"attention\":[1]}\n{\"final_beta\":[1]}").is_err());
    }

    #[test]
    fn project_output_round_trip() {
        let out = ProjectOutput {
            transform: Transform::Sparsemax,
            attention: vec![0.7, 0.3, 0.0],
            certificate: Some(ProjectionCertificate {
                tau: 0.5,
                free: vec![0, 1],
                zero: vec![2],
                clipped: vec![],
            }),
        };
        assert_eq!(ProjectOutput::from_json(&out.to_json()).unwrap(), out);
        let soft = ProjectOutput {
            transform: Transform::Softmax,
            attention: vec![0.5, 0.5],
            certificate: None,
        };
        assert!(!soft.to_json().contains("certificate"));
        assert_eq!(ProjectOutput::from_json(&soft.to_json()).unwrap(), soft);
    }
}
