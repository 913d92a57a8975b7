//! CSV tables: external scores, tampered test sets and training logs.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use chronocheck_core::train::EpochLog;
use chronocheck_core::types::{Label, Sample, Timestamp, VerificationTuple};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: duplicate id {id}")]
    DuplicateId { path: PathBuf, id: String },
    #[error("unknown ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),
    #[error("{path}:{line}: {message}")]
    Invalid { path: PathBuf, line: u64, message: String },
    #[error("tuple {id} has no score")]
    MissingScore { id: String },
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> TableError + '_ {
    move |source| TableError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoreRow {
    id: String,
    score: f64,
}

/// Read an `id,score` CSV (with header). An empty file gives an empty list.
pub fn import_external_scores(path: &Path) -> Result<Vec<(String, f64)>, TableError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rd.deserialize::<ScoreRow>() {
        let row = row.map_err(csv_err(path))?;
        if !seen.insert(row.id.clone()) {
            return Err(TableError::DuplicateId {
                path: path.to_path_buf(),
                id: row.id,
            });
        }
        out.push((row.id, row.score));
    }
    Ok(out)
}

pub fn export_scores(path: &Path, scores: &[(String, f64)]) -> Result<(), TableError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for (id, score) in scores {
        w.serialize(ScoreRow { id: id.clone(), score: *score }).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| csv_err(path)(e.into()))
}

/// Order imported scores like `tuple_ids`. Ids not among the tuples are
/// reported together; tuples without a score are an error too.
pub fn join_scores(scores: &[(String, f64)], tuple_ids: &[String]) -> Result<Vec<f64>, TableError> {
    let known: HashSet<&str> = tuple_ids.iter().map(String::as_str).collect();
    let unknown: Vec<String> = scores.iter().filter(|(id, _)| !known.contains(id.as_str())).map(|(id, _)| id.clone()).collect();
    if !unknown.is_empty() {
        return Err(TableError::UnknownIds(unknown));
    }
    let by_id: HashMap<&str, f64> = scores.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    tuple_ids
        .iter()
        .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| TableError::MissingScore { id: id.clone() }))
        .collect()
}

/// One row of a tampered test-set file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamperedRow {
    pub id: String,
    pub true_month: u32,
    pub true_hour: u32,
    pub alleged_month: u32,
    pub alleged_hour: u32,
    pub label: u8,
}

pub fn export_tampered(path: &Path, samples: &[Sample], tuples: &[VerificationTuple]) -> Result<(), TableError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for t in tuples {
        let s = &samples[t.sample];
        w.serialize(TamperedRow {
            id: s.id.clone(),
            true_month: s.timestamp.month(),
            true_hour: s.timestamp.hour(),
            alleged_month: t.alleged.month(),
            alleged_hour: t.alleged.hour(),
            label: t.label.as_u8(),
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| csv_err(path)(e.into()))
}

/// Rebuild tuples from a tampered test-set file; ids must name `samples`.
pub fn import_tampered(path: &Path, samples: &[Sample]) -> Result<Vec<VerificationTuple>, TableError> {
    let index: HashMap<&str, usize> = samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut rd = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    let mut unknown = Vec::new();
    for row in rd.deserialize::<TamperedRow>() {
        let row = row.map_err(csv_err(path))?;
        let line = out.len() as u64 + unknown.len() as u64 + 2;
        let invalid = |message: String| TableError::Invalid {
            path: path.to_path_buf(),
            line,
            message,
        };
        let Some(&i) = index.get(row.id.as_str()) else {
            unknown.push(row.id);
            continue;
        };
        if (samples[i].timestamp.month(), samples[i].timestamp.hour()) != (row.true_month, row.true_hour) {
            return Err(invalid(format!("true time of {} does not match the manifest", row.id)));
        }
        let label = match row.label {
            0 => Label::Consistent,
            1 => Label::Inconsistent,
            l => return Err(invalid(format!("label {l} is not 0 or 1"))),
        };
        let alleged = Timestamp::new(row.alleged_month, row.alleged_hour).map_err(|e| invalid(e.to_string()))?;
        out.push(VerificationTuple { sample: i, alleged, label });
    }
    if !unknown.is_empty() {
        return Err(TableError::UnknownIds(unknown));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub val_auc: Option<f64>,
}

impl From<&EpochLog> for LogRow {
    fn from(l: &EpochLog) -> Self {
        Self {
            epoch: l.epoch,
            train_loss: l.train_loss,
            val_acc: l.val.map(|m| m.accuracy),
            val_auc: l.val.map(|m| m.auc),
        }
    }
}

/// Training log as CSV `epoch,train_loss,val_acc,val_auc` (empty cells
/// without validation).
pub fn write_training_log(path: &Path, logs: &[EpochLog]) -> Result<(), TableError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for l in logs {
        w.serialize(LogRow::from(l)).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| csv_err(path)(e.into()))
}

pub fn read_training_log(path: &Path) -> Result<Vec<LogRow>, TableError> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err(path))?;
    rd.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chronocheck_core::eval::{exchange_tuples, Metrics};
    use chronocheck_core::world::generate_dataset;
    use std::fs;

    #[test]
    fn scores_import_and_join() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "id,score\nb,0.25\na,0.75\n").unwrap();
        let s = import_external_scores(&p).unwrap();
        assert_eq!(s, [("b".to_string(), 0.25), ("a".to_string(), 0.75)]);
        assert_eq!(join_scores(&s, &["a".into(), "b".into()]).unwrap(), [0.75, 0.25]);
        let err = join_scores(&s, &["a".into()]).unwrap_err();
        assert!(matches!(&err, TableError::UnknownIds(ids) if ids == &["b"]));
        assert!(matches!(join_scores(&s, &["a".into(), "b".into(), "c".into()]), Err(TableError::MissingScore { .. })));

        fs::write(&p, "id,score\na,0.1\na,0.2\n").unwrap();
        assert!(matches!(import_external_scores(&p), Err(TableError::DuplicateId { .. })));
        fs::write(&p, "").unwrap();
        assert!(import_external_scores(&p).unwrap().is_empty());
        fs::write(&p, "id,score\n").unwrap();
        assert!(import_external_scores(&p).unwrap().is_empty());
        export_scores(&p, &s).unwrap();
        assert_eq!(import_external_scores(&p).unwrap(), s);
    }

    #[test]
    fn tampered_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let data = generate_dataset(2, 3, 1, 8);
        let tuples = exchange_tuples(&data, 4).unwrap();
        export_tampered(&p, &data, &tuples).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("id,true_month,true_hour,alleged_month,alleged_hour,label\n"));
        assert_eq!(import_tampered(&p, &data).unwrap(), tuples);
        assert!(matches!(import_tampered(&p, &data[..3]), Err(TableError::UnknownIds(_))));
    }

    #[test]
    fn training_log_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let logs = [
            EpochLog { epoch: 1, train_loss: 0.5, val: None },
            EpochLog {
                epoch: 2,
                train_loss: 0.25,
                val: Some(Metrics { accuracy: 0.75, auc: 0.875, count: 8 }),
            },
        ];
        write_training_log(&p, &logs).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "epoch,train_loss,val_acc,val_auc\n1,0.5,,\n2,0.25,0.75,0.875\n");
        assert_eq!(read_training_log(&p).unwrap()[1].val_auc, Some(0.875));
    }
}
