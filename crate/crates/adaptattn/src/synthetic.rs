//! Synthetic review generator for end-to-end runs: the label of every
//! document is determined by its planted keyword ratio, and lengths are
//! spread across all three bins of a scaled-down bin config.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::BinConfig;
use crate::error::{Error, Result};

const FILLERS: &[&str] = &[
    "the", "a", "this", "that", "movie", "film", "story", "plot", "scene", "actor", "actress",
    "director", "script", "screen", "camera", "music", "score", "cast", "role", "character",
    "dialogue", "ending", "beginning", "middle", "watched", "saw", "went", "came", "looked",
    "felt", "seemed", "was", "were", "very", "quite", "rather", "really", "just", "then",
    "when", "while", "after", "before", "during", "again", "once", "here", "there", "about",
];

const POSITIVE: &[&str] = &[
    "superb", "wonderful", "delightful", "brilliant", "masterful", "captivating", "charming",
    "uplifting", "stunning", "flawless",
];

const NEGATIVE: &[&str] = &[
    "dreadful", "awful", "tedious", "clumsy", "grating", "lifeless", "incoherent", "bland",
    "painful", "forgettable",
];

/// Generator settings. The default bin config is scaled down (L1=16, L2=32,
/// cap 64) so a full training run stays within a desk-scale time budget
/// while still exercising all three head counts.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub train_docs: usize,
    pub test_docs: usize,
    pub seed: u64,
    /// Probability that a position holds a sentiment keyword.
    pub keyword_rate: f64,
    /// Probability that a keyword comes from the document's target class.
    pub class_bias: f64,
    pub bins: BinConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_docs: 500,
            test_docs: 200,
            seed: 1234,
            keyword_rate: 0.3,
            class_bias: 0.75,
            bins: BinConfig::new(16, 32, 64).expect("scaled bin defaults are valid"),
        }
    }
}

/// One generated review.
#[derive(Debug, Clone)]
pub struct SyntheticDoc {
    pub text: String,
    /// 0 = negative, 1 = positive; always the majority keyword class.
    pub label: u8,
}

fn generate_doc(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> SyntheticDoc {
    // draw the bin first so lengths cover Small, Medium and Large evenly
    let bin = rng.random_range(0..3usize);
    let (lo, hi) = match bin {
        0 => (4, cfg.bins.l1),
        1 => (cfg.bins.l1 + 1, cfg.bins.l2),
        _ => (cfg.bins.l2 + 1, cfg.bins.max_len_cap),
    };
    let len = rng.random_range(lo..=hi);
    let target = rng.random_range(0..2u8);

    #[derive(Clone, Copy, PartialEq)]
    enum Slot {
        Filler(usize),
        Pos(usize),
        Neg(usize),
    }
    let mut slots: Vec<Slot> = (0..len)
        .map(|_| {
            if rng.random_bool(cfg.keyword_rate) {
                let of_target = rng.random_bool(cfg.class_bias);
                let positive = (target == 1) == of_target;
                if positive {
                    Slot::Pos(rng.random_range(0..POSITIVE.len()))
                } else {
                    Slot::Neg(rng.random_range(0..NEGATIVE.len()))
                }
            } else {
                Slot::Filler(rng.random_range(0..FILLERS.len()))
            }
        })
        .collect();

    let count = |slots: &[Slot]| {
        let pos = slots.iter().filter(|s| matches!(s, Slot::Pos(_))).count();
        let neg = slots.iter().filter(|s| matches!(s, Slot::Neg(_))).count();
        (pos, neg)
    };
    let (pos, neg) = count(&slots);
    if pos == neg {
        // break the tie toward the target class by replacing the first slot
        // that is not already a target-class keyword
        let replacement = if target == 1 {
            Slot::Pos(rng.random_range(0..POSITIVE.len()))
        } else {
            Slot::Neg(rng.random_range(0..NEGATIVE.len()))
        };
        let victim = slots
            .iter()
            .position(|s| match (target, s) {
                (1, Slot::Pos(_)) => false,
                (0, Slot::Neg(_)) => false,
                _ => true,
            })
            .expect("a tied document always has a non-target slot");
        slots[victim] = replacement;
    }
    let (pos, neg) = count(&slots);
    debug_assert_ne!(pos, neg);

    let words: Vec<&str> = slots
        .iter()
        .map(|s| match s {
            Slot::Filler(i) => FILLERS[*i],
            Slot::Pos(i) => POSITIVE[*i],
            Slot::Neg(i) => NEGATIVE[*i],
        })
        .collect();
    SyntheticDoc {
        text: words.join(" "),
        label: (pos > neg) as u8,
    }
}

/// Generates the train and test sets.
pub fn generate(cfg: &SyntheticConfig) -> (Vec<SyntheticDoc>, Vec<SyntheticDoc>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = (0..cfg.train_docs)
        .map(|_| generate_doc(&mut rng, cfg))
        .collect();
    let test = (0..cfg.test_docs)
        .map(|_| generate_doc(&mut rng, cfg))
        .collect();
    (train, test)
}

/// Writes the generated corpus in the standard directory layout
/// `root/{train,test}/{pos,neg}/*.txt`.
pub fn write_corpus(root: &Path, cfg: &SyntheticConfig) -> Result<()> {
    let (train, test) = generate(cfg);
    for (split, docs) in [("train", train), ("test", test)] {
        for dir in ["pos", "neg"] {
            let d = root.join(split).join(dir);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        for (i, doc) in docs.iter().enumerate() {
            let dir = if doc.label == 1 { "pos" } else { "neg" };
            let path = root.join(split).join(dir).join(format!("{i:05}.txt"));
            fs::write(&path, &doc.text).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
