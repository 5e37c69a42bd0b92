use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub splits: Vec<Split>,
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.splits.len())
            .filter(|&i| self.splits[i] == which)
            .collect()
    }
}

/// Stratified, seeded split into train/validation/test.
///
/// Split sizes are fixed globally from the ratios. The per-class counts form a
/// classes × 3 table whose ideal entries `n_c · size_j / n` are rounded down and
/// then raised by one in exactly enough cells to restore both the class totals
/// and the split sizes, so every entry is within one sample of its proportion.
/// Members of each class are shuffled before being dealt out.
pub fn split_dataset(labels: &[usize], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    if ratios.iter().any(|&r| !(0.0..=1.0).contains(&r))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!(
            "split ratios {ratios:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = labels.len();
    let n_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut warnings = Vec::new();
    let mut r = rng::rng(seed);
    for (class, m) in members.iter_mut().enumerate() {
        if !m.is_empty() && m.len() < 3 {
            warnings.push(format!(
                "class {class} has only {} samples and cannot be stratified over three splits",
                m.len()
            ));
        }
        m.shuffle(&mut r);
    }

    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let sizes = [n_train, n_val, n - n_train - n_val];

    // Floors of the ideal table; integer arithmetic keeps it exact.
    let mut table: Vec<[usize; 3]> = members
        .iter()
        .map(|m| std::array::from_fn(|j| m.len() * sizes[j] / n))
        .collect();
    let mut row_need: Vec<usize> = members
        .iter()
        .zip(&table)
        .map(|(m, t)| m.len() - t.iter().sum::<usize>())
        .collect();
    let mut col_need: [usize; 3] =
        std::array::from_fn(|j| sizes[j] - table.iter().map(|t| t[j]).sum::<usize>());
    // Realize the remaining row/column degrees greedily, largest column first,
    // each column taking the rows with the most outstanding need.
    let mut cols = [0usize, 1, 2];
    cols.sort_by_key(|&j| std::cmp::Reverse(col_need[j]));
    for j in cols {
        let mut rows: Vec<usize> = (0..n_classes).filter(|&c| row_need[c] > 0).collect();
        rows.sort_by_key(|&c| std::cmp::Reverse((row_need[c], (members[c].len() * sizes[j]) % n)));
        for &c in rows.iter().take(col_need[j]) {
            table[c][j] += 1;
            row_need[c] -= 1;
        }
        col_need[j] = 0;
    }
    debug_assert!(row_need.iter().all(|&x| x == 0));

    let mut splits = vec![Split::Test; n];
    for (m, counts) in members.iter().zip(&table) {
        for (pos, &i) in m.iter().enumerate() {
            splits[i] = if pos < counts[0] {
                Split::Train
            } else if pos < counts[0] + counts[1] {
                Split::Validation
            } else {
                Split::Test
            };
        }
    }
    Ok(SplitAssignment { splits, warnings })
}
