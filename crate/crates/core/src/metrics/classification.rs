use crate::{Error, Result, Warned};

/// `K × K` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-class counts of true labels.
    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.k).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Per-class counts of predictions.
    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k).map(|j| (0..self.k).map(|i| self.get(i, j)).sum()).collect()
    }

    /// `trace / n`; 0 when empty.
    pub fn accuracy(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        (0..self.k).map(|i| self.get(i, i)).sum::<u64>() as f64 / n as f64
    }
}

pub fn confusion(labels: &[usize], predictions: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::dim("confusion", &[labels.len()], &[predictions.len()]));
    }
    if k == 0 {
        return Err(Error::Contract("confusion matrix needs at least one class".into()));
    }
    let mut counts = vec![0u64; k * k];
    for (i, (&t, &p)) in labels.iter().zip(predictions).enumerate() {
        if t >= k || p >= k {
            return Err(Error::Contract(format!("entry {i} (true {t}, predicted {p}) outside [0, {k})")));
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

/// Per-class and macro-averaged precision, recall and F1.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Ratios with an empty denominator are 0 and produce a warning.
pub fn prf(cm: &ConfusionMatrix) -> Warned<ClassMetrics> {
    let k = cm.num_classes();
    let (rows, cols) = (cm.row_sums(), cm.col_sums());
    let mut warnings = Vec::new();
    let mut ratio = |num: u64, den: u64, what: &str, class: usize| {
        if den == 0 {
            warnings.push(format!("{what} of class {class} is 0/0, reported as 0"));
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let mut m = ClassMetrics {
        precision: Vec::with_capacity(k),
        recall: Vec::with_capacity(k),
        f1: Vec::with_capacity(k),
        macro_precision: 0.0,
        macro_recall: 0.0,
        macro_f1: 0.0,
    };
    for c in 0..k {
        let tp = cm.get(c, c);
        let p = ratio(tp, cols[c], "precision", c);
        let r = ratio(tp, rows[c], "recall", c);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        m.precision.push(p);
        m.recall.push(r);
        m.f1.push(f);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
    m.macro_precision = mean(&m.precision);
    m.macro_recall = mean(&m.recall);
    m.macro_f1 = mean(&m.f1);
    Warned::new(m, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_counted_example() {
        let cm = confusion(&[0, 1, 0], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm.row(0), &[1, 1]);
        assert_eq!(cm.row(1), &[0, 1]);
        let m = prf(&cm);
        assert!(m.warnings.is_empty());
        assert_eq!(m.value.precision, vec![1.0, 0.5]);
        assert_eq!(m.value.recall, vec![0.5, 1.0]);
        for f in &m.value.f1 {
            assert!((f - 2.0 / 3.0).abs() < 1e-15);
        }
        assert!((cm.accuracy() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_degenerate() {
        let cm = confusion(&[0, 2, 2, 1], &[0, 2, 2, 1], 3).unwrap();
        assert_eq!(cm.row_sums(), vec![1, 1, 2]);
        let m = prf(&cm).value;
        assert!(m.precision.iter().chain(&m.recall).chain(&m.f1).all(|&v| v == 1.0));

        let empty = confusion(&[], &[], 2).unwrap();
        assert_eq!(empty.total(), 0);
        assert_eq!(empty.accuracy(), 0.0);

        // class 2 neither true nor predicted
        let cm = confusion(&[0, 1], &[0, 1], 3).unwrap();
        let m = prf(&cm);
        assert_eq!((m.value.precision[2], m.value.recall[2], m.value.f1[2]), (0.0, 0.0, 0.0));
        assert_eq!(m.warnings.len(), 2);
    }

    #[test]
    fn contract_errors() {
        assert!(matches!(confusion(&[0, 3], &[0, 1], 3), Err(Error::Contract(_))));
        assert!(matches!(confusion(&[0], &[0, 1], 3), Err(Error::Dimension { .. })));
    }

    proptest! {
        #[test]
        fn sums_reconstruct_histograms(pairs in proptest::collection::vec((0usize..4, 0usize..4), 0..60)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let cm = confusion(&t, &p, 4).unwrap();
            let hist = |v: &[usize]| (0..4).map(|c| v.iter().filter(|&&x| x == c).count() as u64).collect::<Vec<_>>();
            prop_assert_eq!(cm.row_sums(), hist(&t));
            prop_assert_eq!(cm.col_sums(), hist(&p));
            prop_assert_eq!(cm.total(), t.len() as u64);
            let m = prf(&cm).value;
            prop_assert!(m.precision.iter().chain(&m.recall).chain(&m.f1).all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn macro_f1_invariant_under_relabeling(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60),
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let a = prf(&confusion(&t, &p, 4).unwrap()).value;
            let relabel = |v: &[usize]| v.iter().map(|&x| perm[x]).collect::<Vec<_>>();
            let b = prf(&confusion(&relabel(&t), &relabel(&p), 4).unwrap()).value;
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            for c in 0..4 {
                prop_assert_eq!(a.f1[c], b.f1[perm[c]]);
            }
        }
    }
}
