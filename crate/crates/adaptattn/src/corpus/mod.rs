//! Corpus ingestion: tokenization, vocabulary construction, length binning
//! and per-bin statistics over an IMDB-style directory layout
//! (`root/{train,test}/{pos,neg}/*.txt`).

mod bins;
mod text;
mod vocab;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

pub use bins::{classify_length, encode_document, BinConfig, LengthBin};
pub use text::tokenize;
pub use vocab::{build_vocab, Vocabulary, PAD_ID, UNK_ID};

use crate::error::{Error, Result};

/// Which half of the corpus directory to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// A tokenized review with its binary label and assigned length bin.
#[derive(Debug, Clone)]
pub struct LabeledDocument {
    pub tokens: Vec<String>,
    /// 0 = negative, 1 = positive.
    pub label: u8,
    /// Word count before any padding or truncation.
    pub length: usize,
    pub bin: LengthBin,
}

impl LabeledDocument {
    pub fn new(tokens: Vec<String>, label: u8, cfg: &BinConfig) -> Self {
        let length = tokens.len();
        let bin = classify_length(length.min(cfg.max_len_cap), cfg);
        LabeledDocument {
            tokens,
            label,
            length,
            bin,
        }
    }
}

/// Loads one split of a corpus: one document per file, label from the
/// `pos` / `neg` directory name, deterministic order sorted by path.
pub fn load_corpus(root: &Path, split: Split, cfg: &BinConfig) -> Result<Vec<LabeledDocument>> {
    let mut files: Vec<(PathBuf, u8)> = Vec::new();
    for (dir, label) in [("neg", 0u8), ("pos", 1u8)] {
        let dir_path = root.join(split.dir_name()).join(dir);
        let entries = fs::read_dir(&dir_path).map_err(|e| Error::io(&dir_path, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir_path, e))?;
            let path = entry.path();
            if path.is_file() {
                files.push((path, label));
            }
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));

    let mut docs = Vec::with_capacity(files.len());
    for (path, label) in files {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        docs.push(LabeledDocument::new(tokenize(&text), label, cfg));
    }
    Ok(docs)
}

/// Per-bin document counts and percentages plus a raw-length histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStats {
    /// Indexed by [`LengthBin::index`].
    pub counts: [usize; 3],
    /// Percentages summing to 100; `None` when the corpus is empty.
    pub fractions: Option<[f64; 3]>,
    pub histogram: BTreeMap<usize, usize>,
}

impl BinStats {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// CSV with header `bin,count,fraction`; the fraction column is empty for
    /// an empty corpus.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,count,fraction\n");
        for bin in LengthBin::ALL {
            let frac = match self.fractions {
                Some(f) => format!("{:.4}", f[bin.index()]),
                None => String::new(),
            };
            out.push_str(&format!("{},{},{}\n", bin, self.counts[bin.index()], frac));
        }
        out
    }

    /// CSV with header `length,count`, ascending by length.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("length,count\n");
        for (length, count) in &self.histogram {
            out.push_str(&format!("{length},{count}\n"));
        }
        out
    }
}

impl fmt::Display for BinStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} documents", self.total())?;
        for bin in LengthBin::ALL {
            match self.fractions {
                Some(fr) => writeln!(
                    f,
                    "  {:<6} {:>7}  {:6.2}%",
                    bin.name(),
                    self.counts[bin.index()],
                    fr[bin.index()]
                )?,
                None => writeln!(f, "  {:<6} {:>7}  (fraction undefined)", bin.name(), 0)?,
            }
        }
        Ok(())
    }
}

/// Exact per-bin counts, percentages and a length histogram. An empty corpus
/// yields zero counts with the fractions flagged undefined.
pub fn length_stats(docs: &[LabeledDocument], cfg: &BinConfig) -> BinStats {
    let mut counts = [0usize; 3];
    let mut histogram = BTreeMap::new();
    for doc in docs {
        let bin = classify_length(doc.length.min(cfg.max_len_cap), cfg);
        counts[bin.index()] += 1;
        *histogram.entry(doc.length).or_insert(0) += 1;
    }
    let total: usize = counts.iter().sum();
    let fractions = if total == 0 {
        None
    } else {
        Some([
            100.0 * counts[0] as f64 / total as f64,
            100.0 * counts[1] as f64 / total as f64,
            100.0 * counts[2] as f64 / total as f64,
        ])
    };
    BinStats {
        counts,
        fractions,
        histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_corpus(root: &Path, split: &str, pos: &[&str], neg: &[&str]) {
        for (dir, texts) in [("pos", pos), ("neg", neg)] {
            let d = root.join(split).join(dir);
            fs::create_dir_all(&d).unwrap();
            for (i, text) in texts.iter().enumerate() {
                fs::write(d.join(format!("{i:03}.txt")), text).unwrap();
            }
        }
    }

    #[test]
    fn load_counts_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(
            dir.path(),
            "train",
            &["good one", "fine film", "loved it"],
            &["bad one", "awful"],
        );
        let cfg = BinConfig::approach1();
        let docs = load_corpus(dir.path(), Split::Train, &cfg).unwrap();
        assert_eq!(docs.len(), 5);
        assert_eq!(docs.iter().filter(|d| d.label == 1).count(), 3);
        // sorted by path: neg/* precedes pos/*
        assert_eq!(docs[0].label, 0);
        assert_eq!(docs[4].label, 1);
    }

    #[test]
    fn load_empty_dirs() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), "train", &[], &[]);
        let cfg = BinConfig::approach1();
        let docs = load_corpus(dir.path(), Split::Train, &cfg).unwrap();
        assert!(docs.is_empty());
    }

    #[test]
    fn load_missing_directory_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BinConfig::approach1();
        let err = load_corpus(dir.path(), Split::Train, &cfg).unwrap_err();
        assert!(err.to_string().contains("neg"), "{err}");
    }

    fn doc_of_len(len: usize, cfg: &BinConfig) -> LabeledDocument {
        LabeledDocument::new(vec!["w".to_string(); len], 1, cfg)
    }

    #[test]
    fn stats_counts_by_hand() {
        // 10 docs: lengths 10×3, 100×4, 300×3 under 75/150 -> 30/40/30
        let cfg = BinConfig::approach1();
        let mut docs = Vec::new();
        for _ in 0..3 {
            docs.push(doc_of_len(10, &cfg));
        }
        for _ in 0..4 {
            docs.push(doc_of_len(100, &cfg));
        }
        for _ in 0..3 {
            docs.push(doc_of_len(300, &cfg));
        }
        let stats = length_stats(&docs, &cfg);
        assert_eq!(stats.counts, [3, 4, 3]);
        let f = stats.fractions.unwrap();
        assert_eq!(f, [30.0, 40.0, 30.0]);
        assert_eq!(stats.histogram[&100], 4);
    }

    #[test]
    fn stats_empty_corpus_flagged() {
        let cfg = BinConfig::approach1();
        let stats = length_stats(&[], &cfg);
        assert_eq!(stats.counts, [0, 0, 0]);
        assert!(stats.fractions.is_none());
        // CSV renders without a division error
        let csv = stats.to_csv();
        assert!(csv.starts_with("bin,count,fraction\n"));
        assert!(csv.contains("Small,0,"));
    }

    #[test]
    fn stats_match_brute_force_recount() {
        let cfg = BinConfig::approach2();
        let lengths = [5, 110, 111, 200, 201, 512, 600, 0, 75, 333];
        let docs: Vec<_> = lengths.iter().map(|&l| doc_of_len(l, &cfg)).collect();
        let stats = length_stats(&docs, &cfg);

        // independent recount
        let mut expect = [0usize; 3];
        for &l in &lengths {
            let l = l.min(cfg.max_len_cap);
            if l <= 110 {
                expect[0] += 1;
            } else if l <= 200 {
                expect[1] += 1;
            } else {
                expect[2] += 1;
            }
        }
        assert_eq!(stats.counts, expect);
        assert_eq!(stats.total(), lengths.len());
        let f = stats.fractions.unwrap();
        assert!((f[0] + f[1] + f[2] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn csv_formats() {
        let cfg = BinConfig::approach1();
        let docs = vec![doc_of_len(10, &cfg), doc_of_len(10, &cfg)];
        let stats = length_stats(&docs, &cfg);
        assert_eq!(
            stats.to_csv(),
            "bin,count,fraction\nSmall,2,100.0000\nMedium,0,0.0000\nLarge,0,0.0000\n"
        );
        assert_eq!(stats.histogram_csv(), "length,count\n10,2\n");
    }
}
