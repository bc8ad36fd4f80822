use serde::Deserialize;

use crate::model::SparseVector;
use crate::{Error, Result};

const NOT_OWNED: u32 = u32::MAX;

/// How to split `d` features across parties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionSpec {
    /// Contiguous blocks: the first `sizes[0]` features go to party 0, and so on.
    Sizes(Vec<usize>),
    /// Explicit global index lists; a party's local index is the list position.
    Explicit {
        parties: Vec<Vec<usize>>,
        allow_overlap: bool,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionFile {
    parties: Option<Vec<Vec<usize>>>,
    sizes: Option<Vec<usize>>,
    #[serde(default)]
    allow_overlap: bool,
}

impl PartitionSpec {
    /// Reads `{"parties": [[...], ...]}` or `{"sizes": [67, 57]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: PartitionFile = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("bad partition file: {e}")))?;
        match (file.parties, file.sizes) {
            (Some(parties), None) => Ok(PartitionSpec::Explicit {
                parties,
                allow_overlap: file.allow_overlap,
            }),
            (None, Some(sizes)) => Ok(PartitionSpec::Sizes(sizes)),
            _ => Err(Error::config(
                "partition file needs exactly one of `parties` or `sizes`",
            )),
        }
    }

    /// Contiguous split into `m` blocks whose sizes differ by at most one.
    pub fn even(d: usize, m: usize) -> Self {
        let m = m.max(1);
        PartitionSpec::Sizes(
            (0..m)
                .map(|j| d / m + usize::from(j < d % m))
                .collect(),
        )
    }
}

/// Assignment of global feature indices to parties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerticalPartition {
    dim: usize,
    parties: Vec<Vec<usize>>,
    /// `local_index[j][global]`, `NOT_OWNED` where party `j` lacks the feature.
    local_index: Vec<Vec<u32>>,
    disjoint: bool,
}

/// Builds and validates a partition of `d` features.
pub fn make_partition(d: usize, spec: &PartitionSpec) -> Result<VerticalPartition> {
    let (parties, allow_overlap) = match spec {
        PartitionSpec::Sizes(sizes) => {
            let total: usize = sizes.iter().sum();
            if total > d {
                return Err(Error::config(format!(
                    "party sizes sum to {total}, beyond the {d} available features"
                )));
            }
            let mut offset = 0;
            let parties = sizes
                .iter()
                .map(|&s| {
                    let block = (offset..offset + s).collect::<Vec<_>>();
                    offset += s;
                    block
                })
                .collect();
            (parties, false)
        }
        PartitionSpec::Explicit {
            parties,
            allow_overlap,
        } => (parties.clone(), *allow_overlap),
    };
    if parties.is_empty() {
        return Err(Error::config("a partition needs at least one party"));
    }

    let mut local_index = vec![vec![NOT_OWNED; d]; parties.len()];
    let mut owners = vec![0usize; d];
    for (j, slice) in parties.iter().enumerate() {
        for (local, &g) in slice.iter().enumerate() {
            if g >= d {
                return Err(Error::config(format!(
                    "party {j} lists feature {g}, outside 0..{d}"
                )));
            }
            if local_index[j][g] != NOT_OWNED {
                return Err(Error::config(format!("party {j} lists feature {g} twice")));
            }
            local_index[j][g] = local as u32;
            owners[g] += 1;
        }
    }
    if let Some(gap) = owners.iter().position(|&c| c == 0) {
        return Err(Error::config(format!("feature {gap} is not assigned to any party")));
    }
    let disjoint = owners.iter().all(|&c| c == 1);
    if !disjoint && !allow_overlap {
        let shared = owners.iter().position(|&c| c > 1).unwrap_or_default();
        return Err(Error::config(format!(
            "feature {shared} is assigned to several parties but overlap is not enabled"
        )));
    }
    Ok(VerticalPartition {
        dim: d,
        parties,
        local_index,
        disjoint,
    })
}

impl VerticalPartition {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn party_count(&self) -> usize {
        self.parties.len()
    }

    /// Width `d^j` of party `j`'s slice.
    pub fn party_dim(&self, j: usize) -> usize {
        self.parties[j].len()
    }

    pub fn party_indices(&self, j: usize) -> &[usize] {
        &self.parties[j]
    }

    pub fn is_disjoint(&self) -> bool {
        self.disjoint
    }

    /// Cut points between consecutive contiguous blocks, when the partition is
    /// contiguous and in party order (e.g. `[67]` for the a9a split).
    pub fn contiguous_boundaries(&self) -> Option<Vec<usize>> {
        if !self.disjoint {
            return None;
        }
        let mut offset = 0;
        let mut cuts = Vec::new();
        for (j, slice) in self.parties.iter().enumerate() {
            if slice.iter().enumerate().any(|(k, &g)| g != offset + k) {
                return None;
            }
            offset += slice.len();
            if j + 1 < self.parties.len() {
                cuts.push(offset);
            }
        }
        Some(cuts)
    }

    /// Restricts a sample to party `j`'s features, re-indexed locally.
    pub fn project(&self, sample: &SparseVector, j: usize) -> SparseVector {
        let lookup = &self.local_index[j];
        let mut pairs: Vec<(u32, f64)> = sample
            .iter()
            .filter(|&(g, _)| g < self.dim && lookup[g] != NOT_OWNED)
            .map(|(g, v)| (lookup[g], v))
            .collect();
        pairs.sort_unstable_by_key(|&(i, _)| i);
        SparseVector::from_pairs(pairs).expect("projection preserves validity")
    }

    pub fn project_rows(&self, rows: &[SparseVector], j: usize) -> Vec<SparseVector> {
        rows.iter().map(|r| self.project(r, j)).collect()
    }

    /// Inverse of [`project`](Self::project) for disjoint partitions.
    pub fn reassemble(&self, parts: &[SparseVector]) -> Result<SparseVector> {
        if !self.disjoint {
            return Err(Error::config("only disjoint partitions can be reassembled"));
        }
        if parts.len() != self.parties.len() {
            return Err(Error::config("one projection per party is required"));
        }
        let mut pairs: Vec<(u32, f64)> = parts
            .iter()
            .enumerate()
            .flat_map(|(j, part)| part.iter().map(move |(l, v)| (self.parties[j][l] as u32, v)))
            .collect();
        pairs.sort_unstable_by_key(|&(g, _)| g);
        SparseVector::from_pairs(pairs)
    }
}
