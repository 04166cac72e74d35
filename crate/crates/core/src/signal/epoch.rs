use super::Recording;
use crate::tensor::Tensor;
use crate::{Error, Result, Warned};

/// Windowed, labelled examples of shape `window_samples × num_channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    data: Vec<f64>,
    window_samples: usize,
    num_channels: usize,
    labels: Vec<usize>,
    group_ids: Vec<String>,
    class_names: Vec<String>,
}

impl EpochSet {
    pub fn empty(window_samples: usize, num_channels: usize, class_names: Vec<String>) -> Self {
        Self {
            data: Vec::new(),
            window_samples,
            num_channels,
            labels: Vec::new(),
            group_ids: Vec::new(),
            class_names,
        }
    }

    /// `data` is `num_epochs × window_samples × num_channels`, row-major.
    pub fn new(
        data: Vec<f64>,
        window_samples: usize,
        num_channels: usize,
        labels: Vec<usize>,
        group_ids: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let per = window_samples * num_channels;
        if per == 0 {
            return Err(Error::Parameter("epoch window and channel count must be positive".into()));
        }
        if data.len() != labels.len() * per || labels.len() != group_ids.len() {
            return Err(Error::Contract(format!(
                "{} values, {} labels and {} group ids do not describe whole {window_samples}×{num_channels} epochs",
                data.len(),
                labels.len(),
                group_ids.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Contract(format!("label {l} outside [0, {})", class_names.len())));
        }
        Ok(Self { data, window_samples, num_channels, labels, group_ids, class_names })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_samples(&self) -> usize {
        self.window_samples
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn group_ids(&self) -> &[String] {
        &self.group_ids
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    fn epoch_len(&self) -> usize {
        self.window_samples * self.num_channels
    }

    /// Samples of epoch `i`, row-major `window_samples × num_channels`.
    pub fn epoch(&self, i: usize) -> &[f64] {
        let w = self.epoch_len();
        &self.data[i * w..(i + 1) * w]
    }

    /// New set holding the listed epochs in the listed order.
    pub fn subset(&self, indices: &[usize]) -> EpochSet {
        let mut data = Vec::with_capacity(indices.len() * self.epoch_len());
        for &i in indices {
            data.extend_from_slice(self.epoch(i));
        }
        EpochSet {
            data,
            window_samples: self.window_samples,
            num_channels: self.num_channels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            group_ids: indices.iter().map(|&i| self.group_ids[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Appends all epochs of `other`, which must share layout and classes.
    pub fn extend(&mut self, other: &EpochSet) -> Result<()> {
        if other.window_samples != self.window_samples || other.num_channels != self.num_channels {
            return Err(Error::dim(
                "epoch concat",
                &[self.window_samples, self.num_channels],
                &[other.window_samples, other.num_channels],
            ));
        }
        if other.class_names != self.class_names {
            return Err(Error::Contract("cannot concatenate epoch sets with different classes".into()));
        }
        self.data.extend_from_slice(&other.data);
        self.labels.extend_from_slice(&other.labels);
        self.group_ids.extend(other.group_ids.iter().cloned());
        Ok(())
    }

    /// Stacks the listed epochs into a `[n, window_samples, num_channels]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.epoch_len());
        for &i in indices {
            data.extend_from_slice(self.epoch(i));
        }
        Tensor::new([indices.len(), self.window_samples, self.num_channels], data)
            .expect("batch of at least one epoch")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Cuts a recording into windows of `window_samples` every `stride_samples`.
///
/// Every window carries `class` and the recording's subject id. A window longer
/// than the recording yields an empty set with a warning.
pub fn epoch(
    rec: &Recording,
    window_samples: usize,
    stride_samples: usize,
    class: usize,
    class_names: &[String],
) -> Result<Warned<EpochSet>> {
    if window_samples == 0 || stride_samples == 0 {
        return Err(Error::Parameter(format!(
            "window ({window_samples}) and stride ({stride_samples}) must be at least 1"
        )));
    }
    if class >= class_names.len() {
        return Err(Error::Contract(format!("class {class} outside [0, {})", class_names.len())));
    }
    let c = rec.num_channels();
    let n = rec.num_samples();
    let mut set = EpochSet::empty(window_samples, c, class_names.to_vec());
    if window_samples > n {
        let msg = format!(
            "recording {} has {n} samples, shorter than the {window_samples}-sample window; no epochs",
            rec.subject_id
        );
        return Ok(Warned::new(set, vec![msg]));
    }
    let count = (n - window_samples) / stride_samples + 1;
    set.data.reserve(count * window_samples * c);
    for e in 0..count {
        let start = e * stride_samples * c;
        set.data.extend_from_slice(&rec.samples()[start..start + window_samples * c]);
        set.labels.push(class);
        set.group_ids.push(rec.subject_id.clone());
    }
    Ok(Warned::clean(set))
}

/// Drops epochs in which any channel's peak-to-peak amplitude exceeds the threshold.
pub fn reject_epochs(set: &EpochSet, peak_to_peak_uv: f64) -> Result<EpochSet> {
    if !(peak_to_peak_uv > 0.0) {
        return Err(Error::Parameter(format!("rejection threshold must be > 0, got {peak_to_peak_uv}")));
    }
    let c = set.num_channels;
    let keep: Vec<usize> = (0..set.len())
        .filter(|&i| {
            let ep = set.epoch(i);
            (0..c).all(|ch| {
                let (lo, hi) = ep
                    .iter()
                    .skip(ch)
                    .step_by(c)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                hi - lo <= peak_to_peak_uv
            })
        })
        .collect();
    Ok(set.subset(&keep))
}

/// Per-channel mean and standard deviation over every sample of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Zero-variance channels get `std = 1` and a warning.
    pub fn fit(set: &EpochSet) -> Result<Warned<ChannelStats>> {
        if set.is_empty() {
            return Err(Error::Contract("standardization statistics need a non-empty set".into()));
        }
        let c = set.num_channels;
        let count = (set.len() * set.window_samples) as f64;
        let mut mean = vec![0.0; c];
        for row in set.data.chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for row in set.data.chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut warnings = Vec::new();
        let std = var
            .into_iter()
            .enumerate()
            .map(|(ch, s)| {
                let sd = (s / count).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    warnings.push(format!("channel {ch} has zero variance; std clamped to 1"));
                    1.0
                }
            })
            .collect();
        Ok(Warned::new(ChannelStats { mean, std }, warnings))
    }

    pub fn apply(&self, set: &EpochSet) -> Result<EpochSet> {
        let c = set.num_channels;
        if c != self.mean.len() {
            return Err(Error::dim("standardize", &[self.mean.len()], &[c]));
        }
        let mut out = set.clone();
        for row in out.data.chunks_exact_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Standardizes `set` with statistics computed on `stats_from` (the training split).
pub fn standardize(set: &EpochSet, stats_from: &EpochSet) -> Result<Warned<EpochSet>> {
    let stats = ChannelStats::fit(stats_from)?;
    Ok(Warned { value: stats.value.apply(set)?, warnings: stats.warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    fn ramp(n: usize, c: usize) -> Recording {
        let names = (0..c).map(|i| format!("ch{i}")).collect();
        Recording::new((0..n * c).map(|v| v as f64).collect(), names, 128.0, "s1").unwrap()
    }

    #[test]
    fn epoch_counts() {
        let rec = ramp(1280, 2);
        assert_eq!(epoch(&rec, 256, 256, 0, &names(1)).unwrap().value.len(), 5);
        assert_eq!(epoch(&rec, 256, 128, 0, &names(1)).unwrap().value.len(), 9);
        let short = ramp(100, 2);
        let out = epoch(&short, 256, 128, 0, &names(1)).unwrap();
        assert!(out.value.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn epoch_carries_label_and_subject() {
        let rec = ramp(300, 3);
        let set = epoch(&rec, 100, 50, 1, &names(2)).unwrap().value;
        assert!(set.labels().iter().all(|&l| l == 1));
        assert!(set.group_ids().iter().all(|g| g == "s1"));
        assert_eq!(set.epoch(1)[0], (50 * 3) as f64);
        assert!(epoch(&rec, 100, 0, 0, &names(2)).is_err());
        assert!(epoch(&rec, 100, 10, 2, &names(2)).is_err());
    }

    fn constant_epochs(values: &[f64]) -> EpochSet {
        let w = 4;
        let mut data = Vec::new();
        for &v in values {
            data.extend(std::iter::repeat_n(v, w));
        }
        let n = values.len();
        EpochSet::new(data, w, 1, vec![0; n], vec!["g".into(); n], names(1)).unwrap()
    }

    #[test]
    fn reject_identity_at_infinity() {
        let rec = ramp(1000, 2);
        let set = epoch(&rec, 100, 100, 0, &names(1)).unwrap().value;
        assert_eq!(reject_epochs(&set, f64::INFINITY).unwrap(), set);
        assert!(reject_epochs(&set, 0.0).is_err());
    }

    #[test]
    fn reject_removes_spiky_epoch() {
        let mut data = vec![0.0; 3 * 10 * 2];
        data[10 * 2 + 7] = 1000.0; // epoch 1, sample 3, channel 1
        data[10 * 2 + 9] = -1000.0;
        let set = EpochSet::new(data, 10, 2, vec![0, 1, 0], vec!["a".into(), "b".into(), "c".into()], names(2)).unwrap();
        let kept = reject_epochs(&set, 200.0).unwrap();
        assert_eq!(kept.group_ids(), &["a".to_string(), "c".to_string()]);
    }

    #[test]
    fn reject_preserves_survivor_order() {
        let w = 8;
        let mut data = Vec::new();
        let bad = [1, 4, 8];
        for e in 0..10 {
            for t in 0..w {
                let amp = if bad.contains(&e) { 150.0 } else { 50.0 };
                data.push(if t % 2 == 0 { amp } else { -amp });
            }
        }
        let ids: Vec<String> = (0..10).map(|e| format!("e{e}")).collect();
        let set = EpochSet::new(data, w, 1, vec![0; 10], ids, names(1)).unwrap();
        let kept = reject_epochs(&set, 200.0).unwrap();
        let want: Vec<String> = [0, 2, 3, 5, 6, 7, 9].iter().map(|e| format!("e{e}")).collect();
        assert_eq!(kept.group_ids(), want.as_slice());
    }

    #[test]
    fn standardize_hand_values() {
        let train = constant_epochs(&[1.0, 3.0]);
        let out = standardize(&train, &train).unwrap();
        assert!(out.warnings.is_empty());
        assert_eq!(out.value.epoch(0), &[-1.0; 4]);
        assert_eq!(out.value.epoch(1), &[1.0; 4]);
    }

    #[test]
    fn standardize_constant_channel_warns() {
        let train = constant_epochs(&[5.0, 5.0]);
        let out = standardize(&train, &train).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.value.epoch(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_uses_train_statistics() {
        let train = constant_epochs(&[1.0, 3.0]);
        let test = constant_epochs(&[10.0, 20.0]);
        let out = standardize(&test, &train).unwrap().value;
        assert_eq!(out.epoch(0), &[8.0; 4]);
        assert_eq!(out.epoch(1), &[18.0; 4]);
        let empty = EpochSet::empty(4, 1, names(1));
        assert!(standardize(&test, &empty).is_err());
    }

    #[test]
    fn standardized_train_has_zero_mean_unit_std() {
        let rec = Recording::new(
            (0..2000).map(|i| ((i * 7919) % 113) as f64 * 0.3 + (i % 2) as f64 * 40.0).collect(),
            vec!["a".into(), "b".into()],
            128.0,
            "s",
        )
        .unwrap();
        let set = epoch(&rec, 50, 25, 0, &names(1)).unwrap().value;
        let z = standardize(&set, &set).unwrap().value;
        let stats = ChannelStats::fit(&z).unwrap().value;
        for c in 0..2 {
            assert!(stats.mean[c].abs() < 1e-9);
            assert!((stats.std[c] - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn epoch_count_formula(len in 1usize..3000, window in 1usize..600, stride in 1usize..400) {
            prop_assume!(window <= len);
            let rec = ramp(len, 1);
            let set = epoch(&rec, window, stride, 0, &names(1)).unwrap().value;
            prop_assert_eq!(set.len(), (len - window) / stride + 1);
        }

        #[test]
        fn non_overlapping_epochs_reconstruct_prefix(len in 1usize..2000, window in 1usize..300, c in 1usize..4) {
            prop_assume!(window <= len);
            let rec = ramp(len, c);
            let set = epoch(&rec, window, window, 0, &names(1)).unwrap().value;
            let joined: Vec<f64> = (0..set.len()).flat_map(|i| set.epoch(i).to_vec()).collect();
            let kept = set.len() * window * c;
            prop_assert_eq!(&joined[..], &rec.samples()[..kept]);
        }
    }
}
