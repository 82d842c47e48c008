//! Five-fold experiment harness, error and event metrics, and paired
//! t-tests.

mod harness;
mod metrics;
mod ttest;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{FoldAssignment, StationId, N_FOLDS};
use crate::error::{Error, Result};

pub use harness::{
    ablation_from_tables, build_prediction_tables, draw_subset, fold_from_tables, run_fold_experiment,
    run_station_ablation, AblationResult, EvaluationReport, ExperimentConfig, PredictionTable, REPORT_VERSION,
};
pub use metrics::{event_confusion, event_confusion_flags, rmse, ConfusionCounts, DEFAULT_TRIGGER};
pub use ttest::{incomplete_beta, ln_gamma, paired_t_test, student_t_two_sided, PValueMatrix, TTest, P_UNDERFLOW};

/// Seeded shuffle of the sorted ids, dealt round-robin into five folds.
pub fn make_folds(stations: &[StationId], seed: u64) -> Result<FoldAssignment> {
    if stations.len() < N_FOLDS {
        return Err(Error::InvalidInput(format!(
            "need at least {N_FOLDS} stations for {N_FOLDS} folds, got {}",
            stations.len()
        )));
    }
    let mut ids = stations.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != stations.len() {
        return Err(Error::InvalidInput("duplicate station ids".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); N_FOLDS];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % N_FOLDS].push(id);
    }
    FoldAssignment::new(folds)
}

/// Ways of producing a prediction for a test station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Average,
    WeightedAverage,
    WeightedVote,
    Idw,
    Ok,
    /// On-site model trained on the station's own history.
    Baseline,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Average,
        Method::WeightedAverage,
        Method::WeightedVote,
        Method::Idw,
        Method::Ok,
        Method::Baseline,
    ];

    /// Short command-line token.
    pub fn token(self) -> &'static str {
        match self {
            Method::Average => "avg",
            Method::WeightedAverage => "wavg",
            Method::WeightedVote => "vote",
            Method::Idw => "idw",
            Method::Ok => "ok",
            Method::Baseline => "baseline",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Average => "average",
            Method::WeightedAverage => "weighted_average",
            Method::WeightedVote => "weighted_vote",
            Method::Idw => "idw",
            Method::Ok => "ok",
            Method::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts either the short token or the full name.
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.token() == s || m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

/// Parses a count list such as `1..10,10..60:10` (inclusive ranges with an
/// optional step; plain integers allowed). The result is sorted and
/// deduplicated.
pub fn parse_counts(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidInput(format!("bad count list '{spec}'"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (range, step) = match part.split_once(':') {
            Some((r, s)) => (r, s.parse::<usize>().map_err(|_| bad())?),
            None => (part, 1),
        };
        if step == 0 {
            return Err(bad());
        }
        match range.split_once("..") {
            Some((a, b)) => {
                let a: usize = a.parse().map_err(|_| bad())?;
                let b: usize = b.parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend((a..=b).step_by(step));
            }
            None => out.push(range.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() || out.contains(&0) {
        return Err(bad());
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<StationId> {
        (0..n).map(|i| StationId::new(format!("s{i:03}")).unwrap()).collect()
    }

    #[test]
    fn fold_sizes() {
        let f = make_folds(&ids(75), 3).unwrap();
        assert!(f.folds().iter().all(|f| f.len() == 15));
        let mut sizes: Vec<usize> = make_folds(&ids(7), 3).unwrap().folds().iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![2, 2, 1, 1, 1]);
        assert_eq!(make_folds(&ids(75), 9).unwrap(), make_folds(&ids(75), 9).unwrap());
        assert_ne!(make_folds(&ids(75), 9).unwrap(), make_folds(&ids(75), 10).unwrap());
        assert!(make_folds(&ids(4), 1).is_err());
    }

    #[test]
    fn fold_order_does_not_depend_on_input_order() {
        let mut rev = ids(20);
        rev.reverse();
        assert_eq!(make_folds(&rev, 5).unwrap(), make_folds(&ids(20), 5).unwrap());
    }

    #[test]
    fn method_tokens() {
        for m in Method::ALL {
            assert_eq!(m.token().parse::<Method>().unwrap(), m);
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("median".parse::<Method>().is_err());
    }

    #[test]
    fn count_lists() {
        let c = parse_counts("1..10,10..60:10").unwrap();
        assert_eq!(c, vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 20, 30, 40, 50, 60]);
        assert_eq!(parse_counts("5").unwrap(), vec![5]);
        for bad in ["", "0..3", "3..1", "1..5:0", "a"] {
            assert!(parse_counts(bad).is_err(), "{bad}");
        }
    }
}
