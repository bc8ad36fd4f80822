//! Dataset ingestion: svmlight/libsvm parsing, vertical feature partitions
//! and the per-party feature stores derived from them.

mod partition;
pub mod synthetic;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub use partition::{make_partition, PartitionSpec, VerticalPartition};

use crate::model::SparseVector;
use crate::{Error, Result};

/// Feature count used for a9a regardless of the largest index seen in the files.
pub const A9A_FEATURES: usize = 124;
/// The a9a split into two parties.
pub const A9A_PARTY_SIZES: [usize; 2] = [67, 57];

/// Sparse rows with 0/1 labels, row-aligned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<SparseVector>,
    pub labels: Vec<u8>,
    /// Feature space width `d`; every row index is below it.
    pub dim: usize,
}

impl Dataset {
    pub fn new(rows: Vec<SparseVector>, labels: Vec<u8>, dim: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::config("rows and labels differ in length"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::config(format!("label {bad} is not 0 or 1")));
        }
        let needed = rows.iter().map(SparseVector::min_dim).max().unwrap_or(0);
        if needed > dim {
            return Err(Error::config(format!(
                "row uses feature {} but the dataset has {dim} features",
                needed - 1
            )));
        }
        Ok(Dataset { rows, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Widens the feature space to `dim`; narrowing below the used width fails.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        let needed = self.rows.iter().map(SparseVector::min_dim).max().unwrap_or(0);
        if needed > dim {
            return Err(Error::config(format!(
                "cannot narrow dataset to {dim} features, feature {} is used",
                needed - 1
            )));
        }
        self.dim = dim;
        Ok(self)
    }

    /// Writes the dataset back out in svmlight format (labels as +1/-1, 1-based indices).
    pub fn write_svmlight<W: Write>(&self, mut out: W) -> Result<()> {
        for (row, &y) in self.rows.iter().zip(&self.labels) {
            write!(out, "{}", if y == 1 { "+1" } else { "-1" })?;
            for (i, v) in row.iter() {
                write!(out, " {}:{}", i + 1, v)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Train and test halves sharing one feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub test: Dataset,
}

impl DatasetSplit {
    /// Aligns both halves on the wider of their feature spaces and `min_dim`.
    pub fn new(train: Dataset, test: Dataset, min_dim: usize) -> Result<Self> {
        let dim = train.dim.max(test.dim).max(min_dim);
        Ok(DatasetSplit {
            train: train.with_dim(dim)?,
            test: test.with_dim(dim)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.train.dim
    }
}

fn parse_label(token: &str, line: usize) -> Result<u8> {
    match token {
        "+1" | "1" | "1.0" | "+1.0" => Ok(1),
        "-1" | "0" | "-1.0" | "0.0" => Ok(0),
        other => Err(Error::Parse {
            line,
            message: format!("label `{other}` is not one of +1, 1, -1, 0"),
        }),
    }
}

/// Parses svmlight/libsvm text: `label idx:val idx:val ...` with 1-based indices.
///
/// Labels map `-1 -> 0` and `+1 -> 1`. Blank lines, trailing whitespace and
/// `#` comments are ignored. Indices must strictly increase within a line.
pub fn parse_svmlight<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0;
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = parse_label(tokens.next().unwrap_or_default(), lineno)?;
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for token in tokens {
            let bad = |message: String| Error::Parse {
                line: lineno,
                message,
            };
            let (idx, val) = token
                .split_once(':')
                .ok_or_else(|| bad(format!("malformed feature token `{token}`")))?;
            let idx: u32 = idx
                .parse()
                .map_err(|_| bad(format!("malformed feature index in `{token}`")))?;
            if idx == 0 {
                return Err(bad(format!("feature indices are 1-based, got `{token}`")));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| bad(format!("malformed feature value in `{token}`")))?;
            if !val.is_finite() {
                return Err(bad(format!("non-finite feature value in `{token}`")));
            }
            let idx = idx - 1;
            if indices.last().is_some_and(|&last| last >= idx) {
                return Err(bad(format!("feature index in `{token}` is not increasing")));
            }
            indices.push(idx);
            values.push(val);
        }
        if let Some(&last) = indices.last() {
            dim = dim.max(last as usize + 1);
        }
        rows.push(SparseVector::new(indices, values)?);
        labels.push(label);
    }
    Dataset::new(rows, labels, dim)
}

pub fn load_svmlight(path: &Path) -> Result<Dataset> {
    let file = File::open(path)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    parse_svmlight(BufReader::new(file))
}

/// Loads a train/test pair and aligns their feature spaces.
pub fn load_split(train: &Path, test: &Path, min_dim: usize) -> Result<DatasetSplit> {
    DatasetSplit::new(load_svmlight(train)?, load_svmlight(test)?, min_dim)
}

/// Counts samples in an svmlight file without materializing features.
pub fn count_svmlight_rows(path: &Path) -> Result<usize> {
    let file = File::open(path)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    let mut count = 0;
    for line in BufReader::new(file).lines() {
        if !line?.split('#').next().unwrap_or("").trim().is_empty() {
            count += 1;
        }
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        parse_svmlight(text.as_bytes())
    }

    #[test]
    fn shifts_indices_and_maps_labels() {
        let ds = parse("+1 3:1 11:1\n").unwrap();
        assert_eq!(ds.labels, vec![1]);
        assert_eq!(ds.rows[0].indices(), &[2, 10]);
        assert_eq!(ds.rows[0].values(), &[1.0, 1.0]);
        assert_eq!(ds.dim, 11);
    }

    #[test]
    fn featureless_row_is_an_all_zero_sample() {
        let ds = parse("-1\n").unwrap();
        assert_eq!(ds.labels, vec![0]);
        assert!(ds.rows[0].is_empty());
    }

    #[test]
    fn tolerates_blank_lines_comments_and_trailing_space() {
        let ds = parse("\n+1 1:0.5   \n\n-1 2:2 # note\r\n   \n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.rows[1].values(), &[2.0]);
    }

    #[test]
    fn reports_line_numbers() {
        match parse("+1 1:1\n\n-1 2:x\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse("+1 4:1 2:1\n") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("not increasing"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse("+1 3:1 3:2\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("+1 0:1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("+1 31\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("2 1:1\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn svmlight_writer_round_trips() {
        let ds = parse("+1 3:1 11:0.25\n-1\n-1 1:-2.5\n").unwrap();
        let mut buf = Vec::new();
        ds.write_svmlight(&mut buf).unwrap();
        assert_eq!(parse_svmlight(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn split_aligns_feature_spaces() {
        let train = parse("+1 3:1\n").unwrap();
        let test = parse("-1 5:1\n").unwrap();
        let split = DatasetSplit::new(train, test, A9A_FEATURES).unwrap();
        assert_eq!(split.train.dim, 124);
        assert_eq!(split.test.dim, 124);
        assert!(parse("+1 130:1\n").unwrap().with_dim(124).is_err());
    }
}
