use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::signal::EpochSet;
use crate::{Error, Result};

/// Whether the split shuffles individual epochs or whole subjects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    Epoch,
    Subject,
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epoch" => Ok(SplitMode::Epoch),
            "subject" => Ok(SplitMode::Subject),
            other => Err(Error::Parameter(format!("unknown split mode {other:?} (expected epoch or subject)"))),
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::Epoch => "epoch",
            SplitMode::Subject => "subject",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_frac: 0.70, val_frac: 0.15, test_frac: 0.15, seed: 7, mode: SplitMode::Epoch }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|&f| !(f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "split fractions must be positive and sum to 1, got {fr:?}"
            )));
        }
        Ok(())
    }

    /// Part sizes for `n` units: floors for val and test, remainder to train.
    fn sizes(&self, n: usize) -> [usize; 3] {
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let val = floor(self.val_frac);
        let test = floor(self.test_frac);
        [n.saturating_sub(val + test), val, test]
    }
}

/// Epoch indices of the train, validation and test parts, each ascending.
pub fn split_indices(set: &EpochSet, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    match spec.mode {
        SplitMode::Epoch => {
            let n = set.len();
            let sizes = spec.sizes(n);
            if sizes.contains(&0) {
                return Err(Error::Split(format!(
                    "{n} epochs cannot fill train/val/test parts of sizes {sizes:?}"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let (train, rest) = order.split_at(sizes[0]);
            let (val, test) = rest.split_at(sizes[1]);
            parts = [train.to_vec(), val.to_vec(), test.to_vec()];
        }
        SplitMode::Subject => {
            let subjects: Vec<&String> = set.group_ids().iter().collect::<BTreeSet<_>>().into_iter().collect();
            let sizes = spec.sizes(subjects.len());
            if sizes.contains(&0) {
                return Err(Error::Split(format!(
                    "{} subjects cannot fill train/val/test parts of sizes {sizes:?}",
                    subjects.len()
                )));
            }
            let mut order = subjects;
            order.shuffle(&mut rng);
            let part_of = |g: &String| {
                let pos = order.iter().position(|s| *s == g).expect("known subject");
                if pos < sizes[0] {
                    0
                } else if pos < sizes[0] + sizes[1] {
                    1
                } else {
                    2
                }
            };
            for (i, g) in set.group_ids().iter().enumerate() {
                parts[part_of(g)].push(i);
            }
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Splits into (train, validation, test) sets.
pub fn split(set: &EpochSet, spec: &SplitSpec) -> Result<(EpochSet, EpochSet, EpochSet)> {
    let [tr, va, te] = split_indices(set, spec)?;
    Ok((set.subset(&tr), set.subset(&va), set.subset(&te)))
}
