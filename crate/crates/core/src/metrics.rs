//! Binary confusion metrics. Label 1 (sick) is the positive class.

use std::ops::AddAssign;

use crate::{Error, Result};

/// WBA weight on sick recall used for calibration early stopping.
pub const DEFAULT_WBA_ALPHA: f64 = 0.7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Confusion { tp, fp, tn, fn_ }
    }

    pub fn from_predictions(truth: &[u8], predicted: &[u8]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::invalid(format!("{} labels vs {} predictions", truth.len(), predicted.len())));
        }
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            c.record(t, p)?;
        }
        Ok(c)
    }

    pub fn record(&mut self, truth: u8, predicted: u8) -> Result<()> {
        match (truth, predicted) {
            (1, 1) => self.tp += 1,
            (1, 0) => self.fn_ += 1,
            (0, 0) => self.tn += 1,
            (0, 1) => self.fp += 1,
            _ => return Err(Error::invalid(format!("labels must be 0 or 1, got ({truth}, {predicted})"))),
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    /// True when one of the two classes has no trials.
    pub fn class_absent(&self) -> bool {
        self.positives() == 0 || self.negatives() == 0
    }

    pub fn sick_recall(&self) -> f64 {
        ratio(self.tp, self.positives())
    }

    pub fn non_sick_recall(&self) -> f64 {
        ratio(self.tn, self.negatives())
    }
}

impl AddAssign for Confusion {
    fn add_assign(&mut self, o: Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Mean of the two recalls; an absent class contributes 0.
pub fn balanced_accuracy(c: &Confusion) -> f64 {
    0.5 * (c.sick_recall() + c.non_sick_recall())
}

pub fn f1_score(c: &Confusion) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

pub fn weighted_balanced_accuracy(c: &Confusion, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0,1], got {alpha}")));
    }
    Ok(alpha * c.sick_recall() + (1.0 - alpha) * c.non_sick_recall())
}

/// Everything the reports need from one confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub confusion: Confusion,
    pub balanced_accuracy: f64,
    pub f1: f64,
    pub wba: f64,
    /// Set when a recall term was forced to 0 by an absent class.
    pub class_absent: bool,
}

impl Scores {
    pub fn new(c: Confusion, alpha: f64) -> Result<Self> {
        Ok(Scores {
            confusion: c,
            balanced_accuracy: balanced_accuracy(&c),
            f1: f1_score(&c),
            wba: weighted_balanced_accuracy(&c, alpha)?,
            class_absent: c.class_absent(),
        })
    }
}
