use std::fmt;

/// Binary confusion counts; "positive" is label 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl Confusion {
    pub fn record(&mut self, predicted: u8, actual: u8) {
        match (predicted, actual) {
            (1, 1) => self.true_pos += 1,
            (1, 0) => self.false_pos += 1,
            (0, 1) => self.false_neg += 1,
            _ => self.true_neg += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// Positive-class F1: `2PR/(P+R)`, defined as 0 whenever precision and
/// recall cannot both be formed (no true positives).
pub fn f1_score(confusion: &Confusion) -> f64 {
    let tp = confusion.true_pos as f64;
    if confusion.true_pos == 0 {
        return 0.0;
    }
    let precision = tp / (tp + confusion.false_pos as f64);
    let recall = tp / (tp + confusion.false_neg as f64);
    2.0 * precision * recall / (precision + recall)
}

/// Accuracy as a percentage.
pub fn accuracy(confusion: &Confusion) -> f64 {
    let total = confusion.total();
    if total == 0 {
        return 0.0;
    }
    100.0 * (confusion.true_pos + confusion.true_neg) as f64 / total as f64
}

/// Evaluation summary: F1 in [0, 1], accuracy in percent, the confusion
/// counts and the mean cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub f1: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
    pub loss: f64,
}

impl Metrics {
    pub fn from_confusion(confusion: Confusion, loss: f64) -> Self {
        Metrics {
            f1: f1_score(&confusion),
            accuracy: accuracy(&confusion),
            confusion,
            loss,
        }
    }

    /// One CSV row in the history format `epoch,split,loss,accuracy,f1,seconds`.
    pub fn csv_row(&self, epoch: usize, split: &str, seconds: f64) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.3}\n",
            epoch, split, self.loss, self.accuracy, self.f1, seconds
        )
    }
}

/// Header line for the metrics history CSV.
pub const METRICS_CSV_HEADER: &str = "epoch,split,loss,accuracy,f1,seconds\n";

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "f1={:.4} accuracy={:.2} loss={:.4}",
            self.f1, self.accuracy, self.loss
        )
    }
}
