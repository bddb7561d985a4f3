use std::fmt;

use super::vocab::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};

/// Length class of a document. Every length maps to exactly one bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LengthBin {
    Small,
    Medium,
    Large,
}

impl LengthBin {
    pub const ALL: [LengthBin; 3] = [LengthBin::Small, LengthBin::Medium, LengthBin::Large];

    pub fn index(self) -> usize {
        match self {
            LengthBin::Small => 0,
            LengthBin::Medium => 1,
            LengthBin::Large => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LengthBin::Small => "Small",
            LengthBin::Medium => "Medium",
            LengthBin::Large => "Large",
        }
    }
}

impl fmt::Display for LengthBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Word-count thresholds and the per-bin head count and pad length.
///
/// Classification is half-open: length ≤ L1 is Small, L1 < length ≤ L2 is
/// Medium, length > L2 is Large. With `single_bin` set, every document is
/// routed to Large — the non-adaptive baseline in which the whole corpus
/// passes through 8 heads at the full pad length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinConfig {
    pub l1: usize,
    pub l2: usize,
    /// Attention head count per bin, indexed by [`LengthBin::index`].
    pub heads: [usize; 3],
    /// Padded sequence length per bin, indexed by [`LengthBin::index`].
    pub pad_len: [usize; 3],
    /// Documents longer than this are truncated before binning.
    pub max_len_cap: usize,
    pub single_bin: bool,
}

impl BinConfig {
    /// Thresholds with default heads 2/4/8 and minimal per-bin padding:
    /// Small pads to L1, Medium to L2, Large to the cap.
    pub fn new(l1: usize, l2: usize, max_len_cap: usize) -> Result<Self> {
        let cfg = BinConfig {
            l1,
            l2,
            heads: [2, 4, 8],
            pad_len: [l1, l2, max_len_cap],
            max_len_cap,
            single_bin: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// L1 = 75, L2 = 150.
    pub fn approach1() -> Self {
        BinConfig::new(75, 150, 512).expect("approach1 defaults are valid")
    }

    /// L1 = 110, L2 = 200.
    pub fn approach2() -> Self {
        BinConfig::new(110, 200, 512).expect("approach2 defaults are valid")
    }

    /// Single Large bin: every document is padded to the cap and processed
    /// by 8 heads.
    pub fn non_adaptive(max_len_cap: usize) -> Self {
        let mut cfg = BinConfig::new(
            max_len_cap.saturating_sub(2).max(1),
            max_len_cap.saturating_sub(1).max(2),
            max_len_cap,
        )
        .expect("non-adaptive defaults are valid");
        cfg.single_bin = true;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.l1 && self.l1 < self.l2 && self.l2 < self.max_len_cap) {
            return Err(Error::Config(format!(
                "bin thresholds must satisfy 0 < L1 < L2 < max_len_cap, got L1={} L2={} cap={}",
                self.l1, self.l2, self.max_len_cap
            )));
        }
        for (i, &h) in self.heads.iter().enumerate() {
            if h == 0 {
                return Err(Error::Config(format!(
                    "head count for {} must be positive",
                    LengthBin::ALL[i]
                )));
            }
        }
        if self.pad_len[0] < self.l1
            || self.pad_len[1] < self.l2
            || self.pad_len[2] != self.max_len_cap
        {
            return Err(Error::Config(format!(
                "pad lengths {:?} must cover L1={} / L2={} / cap={}",
                self.pad_len, self.l1, self.l2, self.max_len_cap
            )));
        }
        Ok(())
    }

    pub fn heads_for(&self, bin: LengthBin) -> usize {
        self.heads[bin.index()]
    }

    pub fn pad_for(&self, bin: LengthBin) -> usize {
        self.pad_len[bin.index()]
    }

    pub fn max_pad_len(&self) -> usize {
        *self.pad_len.iter().max().unwrap()
    }
}

/// Assigns the length bin: Small if length ≤ L1, Medium if L1 < length ≤ L2,
/// Large otherwise (or always Large for a single-bin config).
pub fn classify_length(length: usize, cfg: &BinConfig) -> LengthBin {
    if cfg.single_bin {
        LengthBin::Large
    } else if length <= cfg.l1 {
        LengthBin::Small
    } else if length <= cfg.l2 {
        LengthBin::Medium
    } else {
        LengthBin::Large
    }
}

/// Maps tokens to ids, truncates to the cap, assigns the bin from the
/// truncated length and pads with [`PAD_ID`] to the bin's pad length.
/// The mask holds 1 at real-token positions and 0 at padding.
pub fn encode_document(
    tokens: &[String],
    vocab: &Vocabulary,
    cfg: &BinConfig,
) -> (Vec<u32>, Vec<u8>, LengthBin) {
    let keep = tokens.len().min(cfg.max_len_cap);
    let bin = classify_length(keep, cfg);
    let pad = cfg.pad_for(bin);
    let mut ids = Vec::with_capacity(pad);
    let mut mask = Vec::with_capacity(pad);
    for token in &tokens[..keep] {
        ids.push(vocab.id(token));
        mask.push(1);
    }
    ids.resize(pad, PAD_ID);
    mask.resize(pad, 0);
    (ids, mask, bin)
}
