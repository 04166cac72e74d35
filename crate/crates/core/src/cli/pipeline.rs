use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::RunConfig;
use crate::dataio::{label_scheme, load_recording, split, Manifest};
use crate::signal::{bandpass_filter, epoch, reject_epochs, ChannelStats, EpochSet};
use crate::{Error, Result, Warned};

/// Loads, filters, epochs and cleans every recording listed in `manifest`.
///
/// Entries whose metadata cannot be labelled are collected and reported together.
pub fn load_epochs(manifest: &Path, cfg: &RunConfig) -> Result<Warned<EpochSet>> {
    let m = Manifest::load(manifest)?;
    if m.is_empty() {
        return Err(Error::Contract(format!("manifest {} lists no recordings", manifest.display())));
    }
    let mut classes = Vec::with_capacity(m.len());
    let mut unmappable = Vec::new();
    for e in m.entries() {
        match label_scheme(&e.labels, cfg.scheme) {
            Ok(c) => classes.push(c),
            Err(Error::UnmappableLabel(msg)) => unmappable.push(format!("{} ({msg})", e.path.display())),
            Err(other) => return Err(other),
        }
    }
    if !unmappable.is_empty() {
        return Err(Error::UnmappableLabel(format!(
            "{} manifest entries: {}",
            unmappable.len(),
            unmappable.join("; ")
        )));
    }

    let s = &cfg.signal;
    let names = cfg.scheme.class_names();
    let mut set: Option<EpochSet> = None;
    let mut warnings = Vec::new();
    for (e, &class) in m.entries().iter().zip(&classes) {
        let mut rec = load_recording(&e.path, s.sample_rate_hz)?;
        rec.subject_id = e.subject_id.clone();
        let rec = bandpass_filter(&rec, s.low_hz, s.high_hz)?;
        let ep = epoch(&rec, s.window_samples, s.stride_samples, class, &names)?;
        warnings.extend(ep.warnings);
        let kept = reject_epochs(&ep.value, s.reject_uv)?;
        if kept.len() < ep.value.len() {
            warnings.push(format!(
                "{}: rejected {} of {} epochs",
                e.path.display(),
                ep.value.len() - kept.len(),
                ep.value.len()
            ));
        }
        match set.as_mut() {
            None => set = Some(kept),
            Some(all) => all.extend(&kept)?,
        }
    }
    let set = set.expect("manifest is non-empty");
    if set.is_empty() {
        return Err(Error::Contract("no epochs survive windowing and rejection".into()));
    }
    Ok(Warned::new(set, warnings))
}

/// Train, validation and test parts, standardized with training statistics.
pub struct Prepared {
    pub train: EpochSet,
    pub val: EpochSet,
    pub test: EpochSet,
    pub stats: ChannelStats,
}

pub fn prepare(set: &EpochSet, cfg: &RunConfig) -> Result<Prepared> {
    let (train, val, test) = split(set, &cfg.split)?;
    let stats = ChannelStats::fit(&train)?.value;
    Ok(Prepared { train: stats.apply(&train)?, val: stats.apply(&val)?, test: stats.apply(&test)?, stats })
}

pub fn stats_to_text(stats: &ChannelStats) -> String {
    let mut out = String::from("channel\tmean\tstd\n");
    for (c, (m, s)) in stats.mean.iter().zip(&stats.std).enumerate() {
        let _ = writeln!(out, "{c}\t{m}\t{s}");
    }
    out
}

pub fn load_stats(path: &Path) -> Result<ChannelStats> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate().skip(1) {
        let err = |msg: &str| Error::Format { path: path.to_path_buf(), line: i + 1, msg: msg.into() };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err("expected channel, mean and std"));
        }
        mean.push(f[1].parse().map_err(|_| err("bad mean"))?);
        std.push(f[2].parse().map_err(|_| err("bad std"))?);
    }
    Ok(ChannelStats { mean, std })
}
