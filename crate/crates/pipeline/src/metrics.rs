//! Token error rate and the per-run metrics ledger.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transducer_distill_core::LabelSequence;

use crate::error::{PipelineError, Result};

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn edit_distance(reference: &LabelSequence, hypothesis: &LabelSequence) -> usize {
    let r = reference.tokens();
    let h = hypothesis.tokens();
    let mut prev: Vec<usize> = (0..=h.len()).collect();
    let mut cur = vec![0; h.len() + 1];
    for (i, &rt) in r.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &ht) in h.iter().enumerate() {
            let sub = prev[j] + usize::from(rt != ht);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[h.len()]
}

/// Total edits over total reference tokens.
pub fn token_error_rate<'a>(
    pairs: impl IntoIterator<Item = (&'a LabelSequence, &'a LabelSequence)>,
) -> f64 {
    let (mut edits, mut tokens) = (0usize, 0usize);
    for (r, h) in pairs {
        edits += edit_distance(r, h);
        tokens += r.len();
    }
    if tokens == 0 {
        return if edits == 0 { 0.0 } else { f64::INFINITY };
    }
    edits as f64 / tokens as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub role: Role,
    pub generation: usize,
    pub ter: f64,
    pub final_loss: f64,
    /// `(optimizer step, mean batch loss)`.
    pub loss_curve: Vec<(usize, f64)>,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str = "run_id,role,generation,ter,final_loss";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.run_id,
            self.role.as_str(),
            self.generation,
            self.ter,
            self.final_loss
        )
    }
}

/// Collects one record per train or distill invocation, optionally mirroring
/// them into `metrics.csv` and `metrics.json` under a run directory.
#[derive(Debug, Default)]
pub struct Ledger {
    dir: Option<PathBuf>,
    records: Vec<MetricsRecord>,
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// A ledger that appends to the files already present in `dir`.
    pub fn at_dir(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
        let json = dir.join("metrics.json");
        let records = if json.exists() {
            let text = fs::read_to_string(&json).map_err(PipelineError::io(&json))?;
            serde_json::from_str(&text)
                .map_err(|e| PipelineError::Invalid(format!("{}: {e}", json.display())))?
        } else {
            Vec::new()
        };
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            records,
        })
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn append(&mut self, record: MetricsRecord) -> Result<()> {
        if let Some(dir) = &self.dir {
            let csv = dir.join("metrics.csv");
            let fresh = !csv.exists();
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&csv)
                .map_err(PipelineError::io(&csv))?;
            let mut text = String::new();
            if fresh {
                text.push_str(MetricsRecord::CSV_HEADER);
                text.push('\n');
            }
            text.push_str(&record.csv_row());
            text.push('\n');
            file.write_all(text.as_bytes())
                .map_err(PipelineError::io(&csv))?;

            let mut all = self.records.clone();
            all.push(record.clone());
            let json = dir.join("metrics.json");
            let body = serde_json::to_string_pretty(&all).expect("records serialize");
            fs::write(&json, body).map_err(PipelineError::io(&json))?;
        }
        self.records.push(record);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(ids: &[usize]) -> LabelSequence {
        LabelSequence::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(&seq(&[1, 2, 3]), &seq(&[1, 2, 3])), 0);
        assert_eq!(edit_distance(&seq(&[1, 2, 3]), &seq(&[1, 4, 3])), 1);
        assert_eq!(edit_distance(&seq(&[1, 2, 3]), &seq(&[])), 3);
        assert_eq!(edit_distance(&seq(&[]), &seq(&[2, 2])), 2);
        assert_eq!(edit_distance(&seq(&[1, 2, 3, 4]), &seq(&[2, 3, 4, 5])), 2);
    }

    #[test]
    fn ter_aggregates_over_reference_tokens() {
        let r1 = seq(&[1, 2]);
        let h1 = seq(&[1]);
        let r2 = seq(&[3, 4, 5]);
        let h2 = seq(&[3, 4, 5]);
        assert_eq!(token_error_rate([(&r1, &h1), (&r2, &h2)]), 0.2);
    }

    #[test]
    fn ledger_appends_csv_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let rec = |g| MetricsRecord {
            run_id: format!("run-{g}"),
            role: Role::Student,
            generation: g,
            ter: 0.25,
            final_loss: 1.5,
            loss_curve: vec![(1, 2.0), (2, 1.5)],
        };
        let mut ledger = Ledger::at_dir(dir.path()).unwrap();
        ledger.append(rec(0)).unwrap();
        let mut ledger = Ledger::at_dir(dir.path()).unwrap();
        ledger.append(rec(1)).unwrap();
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(
            csv,
            "run_id,role,generation,ter,final_loss\nrun-0,student,0,0.25,1.5\nrun-1,student,1,0.25,1.5\n"
        );
        let json: Vec<MetricsRecord> =
            serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap())
                .unwrap();
        assert_eq!(json, vec![rec(0), rec(1)]);
        assert_eq!(ledger.records().len(), 2);
    }
}
