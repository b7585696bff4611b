//! Scoring a dataset with trained classifiers and turning the scores into a
//! screening report.

use std::collections::BTreeMap;
use std::fmt::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{Task, NUM_FEATURES};
use crate::metrics::{evaluate_scores, EvalReport, MetricsError};
use crate::model::BrighteyeModel;
use crate::preprocess::to_unit_pixels;
use crate::tensor::TensorError;
use crate::train::{ClassifierBank, PreparedSample};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no glaucoma classifier available")]
    NoGlaucomaModel,
    #[error("score table is malformed: {0}")]
    BadTable(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// `predict` for every sample, in order.
pub fn score_prepared(model: &BrighteyeModel<f32>, data: &[PreparedSample]) -> Result<Vec<f64>, TensorError> {
    data.par_iter()
        .map(|s| Ok(model.predict(&to_unit_pixels(&s.image))? as f64))
        .collect()
}

/// Per-sample truth and scores for every task a model was available for.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub ids: Vec<String>,
    pub rg: Vec<bool>,
    pub features: Vec<[bool; NUM_FEATURES]>,
    pub scores: BTreeMap<Task, Vec<f64>>,
}

impl ScoreTable {
    pub fn score_bank(bank: &ClassifierBank, data: &[PreparedSample]) -> Result<Self, TensorError> {
        let mut scores = BTreeMap::new();
        for (task, model) in &bank.models {
            scores.insert(*task, score_prepared(model, data)?);
        }
        Ok(Self {
            ids: data.iter().map(|s| s.id.clone()).collect(),
            rg: data.iter().map(|s| s.rg).collect(),
            features: data.iter().map(|s| s.features).collect(),
            scores,
        })
    }

    /// Glaucoma AUC and TPR@95, plus feature NHD when at least one feature
    /// classifier is present. Features without a classifier are predicted
    /// absent.
    pub fn report(&self, threshold: f64) -> Result<EvalReport, EvalError> {
        let glaucoma = self.scores.get(&Task::Glaucoma).ok_or(EvalError::NoGlaucomaModel)?;
        let any_feature = self.scores.keys().any(|t| matches!(t, Task::Feature(_)));
        let features: Vec<(Vec<f64>, Vec<bool>)> = if any_feature {
            (0..self.ids.len())
                .map(|i| {
                    let probs = (1..=NUM_FEATURES as u8)
                        .map(|k| self.scores.get(&Task::Feature(k)).map_or(0.0, |s| s[i]))
                        .collect();
                    (probs, self.features[i].to_vec())
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(evaluate_scores(glaucoma, &self.rg, &features, threshold)?)
    }

    /// CSV dump: `id,rg,f1..f10` truth, then one score column per task.
    /// Scores are written with round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,rg");
        for k in 1..=NUM_FEATURES {
            let _ = write!(s, ",f{k}");
        }
        for task in self.scores.keys() {
            let _ = write!(s, ",p_{task}");
        }
        s.push('\n');
        for i in 0..self.ids.len() {
            let _ = write!(s, "{},{}", self.ids[i], self.rg[i] as u8);
            for f in self.features[i] {
                let _ = write!(s, ",{}", f as u8);
            }
            for scores in self.scores.values() {
                let _ = write!(s, ",{}", scores[i]);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let bad = |m: String| EvalError::BadTable(m);
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        let tasks = header
            .iter()
            .skip(2 + NUM_FEATURES)
            .map(|h| {
                h.strip_prefix("p_")
                    .ok_or_else(|| bad(format!("unexpected column {h}")))?
                    .parse::<Task>()
                    .map_err(bad)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut table = Self {
            ids: Vec::new(),
            rg: Vec::new(),
            features: Vec::new(),
            scores: tasks.iter().map(|t| (*t, Vec::new())).collect(),
        };
        let flag = |v: &str| match v {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(format!("bad flag {v}"))),
        };
        for rec in reader.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            table.ids.push(rec[0].to_string());
            table.rg.push(flag(&rec[1])?);
            let mut f = [false; NUM_FEATURES];
            for (k, v) in f.iter_mut().enumerate() {
                *v = flag(&rec[2 + k])?;
            }
            table.features.push(f);
            for (j, task) in tasks.iter().enumerate() {
                let v: f64 = rec[2 + NUM_FEATURES + j].parse().map_err(|_| bad(format!("bad score {}", &rec[2 + NUM_FEATURES + j])))?;
                table.scores.get_mut(task).expect("column registered").push(v);
            }
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ScoreTable {
        let mut scores = BTreeMap::new();
        scores.insert(Task::Glaucoma, vec![0.9, 0.1, 0.7]);
        scores.insert(Task::Feature(2), vec![0.6, 0.5, 0.123456789012345]);
        let mut f = [false; NUM_FEATURES];
        f[1] = true;
        ScoreTable {
            ids: vec!["a".into(), "b".into(), "c".into()],
            rg: vec![true, false, true],
            features: vec![f, [false; NUM_FEATURES], [false; NUM_FEATURES]],
            scores,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = table();
        assert_eq!(ScoreTable::from_csv(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn missing_features_predicted_absent() {
        let r = table().report(0.5).unwrap();
        assert_eq!(r.tpr_at_95, 1.0);
        // only sample a has a feature; all predictions are correct
        assert_eq!(r.nhd_mean, Some(0.0));
        let mut t = table();
        t.scores.remove(&Task::Feature(2));
        assert_eq!(t.report(0.5).unwrap().nhd_mean, None);
        t.scores.remove(&Task::Glaucoma);
        assert!(matches!(t.report(0.5), Err(EvalError::NoGlaucomaModel)));
    }
}
