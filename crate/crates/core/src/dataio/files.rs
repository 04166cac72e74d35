//! Text formats.
//!
//! Recording file: UTF-8, one row per sample, cells separated by whitespace
//! and/or commas. An optional first row of channel names acts as header;
//! without one the file must have the 14 default channels.
//!
//! Manifest file: one recording per line,
//! `path subject_id gender age_years segment rating`, `-` for absent fields,
//! `#` starts a comment line. Relative paths resolve against the manifest's
//! directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::signal::{LabelFields, Recording, STEW_CHANNELS};
use crate::{Error, Result};

fn cells(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty())
}

/// Reads a recording file sampled at `sample_rate_hz`.
///
/// The subject id defaults to the file stem.
pub fn load_recording(path: &Path, sample_rate_hz: f64) -> Result<Recording> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let format_err = |line: usize, msg: String| Error::Format { path: path.to_path_buf(), line, msg };

    let mut names: Option<Vec<String>> = None;
    let mut samples = Vec::new();
    let mut rows = 0usize;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let row: Vec<&str> = cells(line).collect();
        if row.is_empty() {
            continue;
        }
        if names.is_none() && rows == 0 && row.iter().any(|c| c.parse::<f64>().is_err()) {
            names = Some(row.iter().map(|s| s.to_string()).collect());
            continue;
        }
        let names = names.get_or_insert_with(|| STEW_CHANNELS.iter().map(|s| s.to_string()).collect());
        if row.len() != names.len() {
            return Err(format_err(
                lineno,
                format!("expected {} columns, found {}", names.len(), row.len()),
            ));
        }
        for (col, cell) in row.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => samples.push(v),
                _ => {
                    return Err(format_err(lineno, format!("column {}: {cell:?} is not a finite number", col + 1)))
                }
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(format_err(text.lines().count().max(1), "no sample rows".into()));
    }
    let subject = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Recording::new(samples, names.unwrap_or_default(), sample_rate_hz, subject)
}

/// Writes a recording with a channel-name header row, comma separated.
pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    let c = rec.num_channels();
    let mut out = String::with_capacity(rec.samples().len() * 10);
    out.push_str(&rec.channel_names().join(","));
    out.push('\n');
    for row in rec.samples().chunks_exact(c) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("write to string");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub subject_id: String,
    pub labels: LabelFields,
}

/// List of recordings and their metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.path) {
                return Err(Error::Contract(format!("duplicate manifest path {}", e.path.display())));
            }
            if let Some(r) = e.labels.workload_rating {
                if !(1..=9).contains(&r) {
                    return Err(Error::Contract(format!(
                        "rating {r} for {} outside 1-9",
                        e.path.display()
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses manifest text; relative paths are joined onto `base_dir`.
    pub fn parse(text: &str, base_dir: &Path, source: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Format { path: source.to_path_buf(), line: i + 1, msg };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = cells(line).collect();
            if f.len() != 6 {
                return Err(err(format!(
                    "expected 6 fields (path subject_id gender age_years segment rating), found {}",
                    f.len()
                )));
            }
            let opt = |s: &str| (s != "-").then(|| s.to_string());
            let gender = opt(f[2]).map(|s| s.parse()).transpose().map_err(err)?;
            let age_years = opt(f[3])
                .map(|s| s.parse::<u32>().map_err(|_| format!("age {s:?} is not a whole number")))
                .transpose()
                .map_err(err)?;
            let task_segment = opt(f[4]).map(|s| s.parse()).transpose().map_err(err)?;
            let workload_rating = opt(f[5])
                .map(|s| match s.parse::<u8>() {
                    Ok(r) if (1..=9).contains(&r) => Ok(r),
                    _ => Err(format!("rating {s:?} is not an integer in 1-9")),
                })
                .transpose()
                .map_err(err)?;
            let path = base_dir.join(f[0]);
            if !seen.insert(path.clone()) {
                return Err(err(format!("duplicate path {}", f[0])));
            }
            entries.push(ManifestEntry {
                path,
                subject_id: f[1].to_string(),
                labels: LabelFields { gender, age_years, workload_rating, task_segment },
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base, path)
    }

    /// Serializes entries; paths are written as stored.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# path subject_id gender age_years segment rating\n");
        for e in &self.entries {
            let l = &e.labels;
            let dash = |o: Option<String>| o.unwrap_or_else(|| "-".into());
            writeln!(
                out,
                "{} {} {} {} {} {}",
                e.path.display(),
                e.subject_id,
                dash(l.gender.map(|g| g.to_string())),
                dash(l.age_years.map(|a| a.to_string())),
                dash(l.task_segment.map(|s| s.to_string())),
                dash(l.workload_rating.map(|r| r.to_string())),
            )
            .expect("write to string");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Gender, Segment};

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn loads_headerless_stew_file() {
        let dir = tmp();
        let p = dir.path().join("sub01_lo.txt");
        let mut text = String::new();
        for t in 0..19200 {
            let row: Vec<String> = (0..14).map(|c| format!("{}", 4000.0 + (t * 14 + c) as f64 * 0.01)).collect();
            text.push_str(&row.join("  "));
            text.push('\n');
        }
        fs::write(&p, text).unwrap();
        let rec = load_recording(&p, 128.0).unwrap();
        assert_eq!(rec.num_channels(), 14);
        assert_eq!(rec.num_samples(), 19200);
        assert!((rec.duration_secs() - 150.0).abs() < 1e-12);
        assert_eq!(rec.channel_names()[0], "AF3");
        assert_eq!(rec.subject_id, "sub01_lo");
    }

    #[test]
    fn header_defines_channels() {
        let dir = tmp();
        let p = dir.path().join("r.csv");
        fs::write(&p, "Fz,Cz,Pz\n1,2,3\n4,5,6\n").unwrap();
        let rec = load_recording(&p, 256.0).unwrap();
        assert_eq!(rec.num_channels(), 3);
        assert_eq!(rec.channel(1), vec![2.0, 5.0]);
    }

    #[test]
    fn format_errors_carry_line_numbers() {
        let dir = tmp();
        let header: Vec<&str> = STEW_CHANNELS.to_vec();
        let p = dir.path().join("short.txt");
        let row13 = vec!["1"; 13].join(" ");
        fs::write(&p, format!("{}\n{}\n", header.join(" "), row13)).unwrap();
        match load_recording(&p, 128.0).unwrap_err() {
            Error::Format { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("13"), "{msg}");
            }
            e => panic!("{e}"),
        }

        let p = dir.path().join("ragged.txt");
        fs::write(&p, "1 2\n3 4\n5\n").unwrap();
        assert!(matches!(load_recording(&p, 128.0), Err(Error::Format { .. })));

        let p = dir.path().join("nan.txt");
        let row: String = vec!["1"; 14].join(" ");
        let bad = format!("{row}\n{} oops\n", vec!["1"; 13].join(" "));
        fs::write(&p, bad).unwrap();
        match load_recording(&p, 128.0).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }

        let p = dir.path().join("empty.txt");
        fs::write(&p, "").unwrap();
        assert!(matches!(load_recording(&p, 128.0), Err(Error::Format { .. })));
        let p = dir.path().join("header_only.txt");
        fs::write(&p, "a b c\n").unwrap();
        assert!(matches!(load_recording(&p, 128.0), Err(Error::Format { .. })));

        assert!(matches!(load_recording(&dir.path().join("missing.txt"), 128.0), Err(Error::Io { .. })));
    }

    #[test]
    fn write_then_load_is_exact() {
        let dir = tmp();
        let p = dir.path().join("w.txt");
        let v: Vec<f64> = (0..14 * 9).map(|i| (i as f64 * 1.37).sin() * 123.456).collect();
        let rec = Recording::with_stew_channels(v, 128.0, "w").unwrap();
        write_recording(&p, &rec).unwrap();
        assert_eq!(load_recording(&p, 128.0).unwrap(), rec);
    }

    #[test]
    fn manifest_parse_and_round_trip() {
        let text = "# comment\n\
                    a.txt S01 male 14 rest 2\n\
                    b.txt,S02,female,-,simkap,8\n\
                    c.txt S03 - 30 - -\n";
        let m = Manifest::parse(text, Path::new("/data"), Path::new("m.txt")).unwrap();
        assert_eq!(m.len(), 3);
        let e = &m.entries()[1];
        assert_eq!(e.path, PathBuf::from("/data/b.txt"));
        assert_eq!(e.labels.gender, Some(Gender::Female));
        assert_eq!(e.labels.age_years, None);
        assert_eq!(e.labels.task_segment, Some(Segment::Simkap));
        assert_eq!(e.labels.workload_rating, Some(8));
        let again = Manifest::parse(&m.to_text(), Path::new("/"), Path::new("m.txt")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn manifest_errors() {
        let src = Path::new("m.txt");
        let base = Path::new(".");
        for (text, line) in [
            ("a.txt S01 male 14 rest\n", 1),
            ("a.txt S01 male 14 rest 2\nb.txt S01 male 14 rest 10\n", 2),
            ("a.txt S01 male 14 rest 2\na.txt S02 male 14 rest 2\n", 2),
            ("a.txt S01 robot 14 rest 2\n", 1),
            ("a.txt S01 male fourteen rest 2\n", 1),
            ("\n\na.txt S01 male 14 nap 2\n", 3),
        ] {
            match Manifest::parse(text, base, src) {
                Err(Error::Format { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }
}
