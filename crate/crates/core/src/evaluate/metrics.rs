use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default frost trigger temperature, °C.
pub const DEFAULT_TRIGGER: f64 = 0.0;

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), actual.len())?;
    if pred.is_empty() {
        return Err(Error::EmptyData("rmse of empty vectors".into()));
    }
    let sse: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: b, actual: a });
    }
    Ok(())
}

/// Event confusion counts; an event is a temperature below the trigger.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// Captured events over actual events; `None` without actual events.
    pub fn tpr(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// False alarms over predicted events; `None` without predicted events.
    pub fn fdr(&self) -> Option<f64> {
        let d = self.fp + self.tp;
        (d > 0).then(|| self.fp as f64 / d as f64)
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

pub fn event_confusion(pred: &[f64], actual: &[f64], trigger: f64) -> Result<ConfusionCounts> {
    check_lengths(pred.len(), actual.len())?;
    let mut c = ConfusionCounts::default();
    for (p, a) in pred.iter().zip(actual) {
        c.record(*p < trigger, *a < trigger);
    }
    Ok(c)
}

/// Like [`event_confusion`] with predicted events given as frost flags.
pub fn event_confusion_flags(pred: &[bool], actual: &[f64], trigger: f64) -> Result<ConfusionCounts> {
    check_lengths(pred.len(), actual.len())?;
    let mut c = ConfusionCounts::default();
    for (p, a) in pred.iter().zip(actual) {
        c.record(*p, *a < trigger);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(rmse(&[5.0], &[3.0]).unwrap(), 2.0);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn confusion_cases() {
        let c = event_confusion(&[-1.0, 1.0, -1.0], &[-1.0, -1.0, 1.0], 0.0).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 0 });
        assert_eq!(c.tpr(), Some(0.5));
        assert_eq!(c.fdr(), Some(0.5));
        let none = event_confusion(&[1.0, -1.0], &[2.0, 3.0], 0.0).unwrap();
        assert_eq!(none.tpr(), None);
        let right = event_confusion(&[-2.0, 4.0], &[-1.0, 3.0], 0.0).unwrap();
        assert_eq!(right.fdr(), Some(0.0));
        let flags = event_confusion_flags(&[true, false, true], &[-1.0, -1.0, 1.0], 0.0).unwrap();
        assert_eq!(flags, c);
        assert!(event_confusion(&[1.0], &[], 0.0).is_err());
        assert!(serde_json::to_string(&c).unwrap().contains("\"fn\":1"));
    }

    proptest! {
        #[test]
        fn confusion_partitions(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 0..50), trig in -2.0f64..2.0) {
            let (p, a): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let c = event_confusion(&p, &a, trig).unwrap();
            prop_assert_eq!(c.total() as usize, p.len());
            for r in [c.tpr(), c.fdr()].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&r));
            }
        }
    }
}
