use std::fmt;
use std::str::FromStr;

use crate::signal::{Gender, LabelFields, Segment};
use crate::{Error, Result};

/// Inclusive age ranges of the six age classes. Ages in the gaps are unmappable.
pub const AGE_BRACKETS: [(u32, u32); 6] = [(6, 11), (12, 16), (18, 24), (25, 30), (33, 39), (42, 56)];

/// How recording metadata becomes a class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelScheme {
    /// male 0, female 1
    Gender,
    /// six age brackets
    Age6,
    /// rest 0, SIMKAP 1
    Load2,
    /// workload rating 1–3 low, 4–6 moderate, 7–9 high
    Load3,
}

impl LabelScheme {
    pub fn num_classes(self) -> usize {
        match self {
            LabelScheme::Gender | LabelScheme::Load2 => 2,
            LabelScheme::Load3 => 3,
            LabelScheme::Age6 => 6,
        }
    }

    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            LabelScheme::Gender => &["male", "female"],
            LabelScheme::Age6 => &["6-11", "12-16", "18-24", "25-30", "33-39", "42-56"],
            LabelScheme::Load2 => &["rest", "simkap"],
            LabelScheme::Load3 => &["low", "moderate", "high"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelScheme::Gender => "gender",
            LabelScheme::Age6 => "age6",
            LabelScheme::Load2 => "load2",
            LabelScheme::Load3 => "load3",
        }
    }
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gender" => Ok(LabelScheme::Gender),
            "age6" => Ok(LabelScheme::Age6),
            "load2" => Ok(LabelScheme::Load2),
            "load3" => Ok(LabelScheme::Load3),
            other => Err(Error::Parameter(format!(
                "unknown label scheme {other:?} (expected gender, age6, load2 or load3)"
            ))),
        }
    }
}

/// Maps one recording's metadata to a class id under `scheme`.
pub fn label_scheme(fields: &LabelFields, scheme: LabelScheme) -> Result<usize> {
    let missing = |what: &str| Error::UnmappableLabel(format!("{what} is required by the {scheme} scheme"));
    match scheme {
        LabelScheme::Gender => match fields.gender.ok_or_else(|| missing("gender"))? {
            Gender::Male => Ok(0),
            Gender::Female => Ok(1),
        },
        LabelScheme::Age6 => {
            let age = fields.age_years.ok_or_else(|| missing("age"))?;
            AGE_BRACKETS
                .iter()
                .position(|&(lo, hi)| (lo..=hi).contains(&age))
                .ok_or_else(|| {
                    let brackets: Vec<String> = AGE_BRACKETS.iter().map(|(lo, hi)| format!("{lo}-{hi}")).collect();
                    Error::UnmappableLabel(format!(
                        "age {age} falls outside every bracket ({})",
                        brackets.join(", ")
                    ))
                })
        }
        LabelScheme::Load2 => match fields.task_segment.ok_or_else(|| missing("segment"))? {
            Segment::Rest => Ok(0),
            Segment::Simkap => Ok(1),
        },
        LabelScheme::Load3 => match fields.workload_rating.ok_or_else(|| missing("workload rating"))? {
            1..=3 => Ok(0),
            4..=6 => Ok(1),
            7..=9 => Ok(2),
            r => Err(Error::UnmappableLabel(format!("workload rating {r} outside 1-9"))),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn age(a: u32) -> LabelFields {
        LabelFields { age_years: Some(a), ..Default::default() }
    }

    fn rating(r: u8) -> LabelFields {
        LabelFields { workload_rating: Some(r), ..Default::default() }
    }

    #[test]
    fn age_brackets() {
        assert_eq!(label_scheme(&age(14), LabelScheme::Age6).unwrap(), 1);
        assert_eq!(label_scheme(&age(6), LabelScheme::Age6).unwrap(), 0);
        assert_eq!(label_scheme(&age(56), LabelScheme::Age6).unwrap(), 5);
        for gap in [5, 17, 31, 32, 40, 41, 57] {
            let err = label_scheme(&age(gap), LabelScheme::Age6).unwrap_err();
            assert!(matches!(err, Error::UnmappableLabel(_)));
            assert!(err.to_string().contains("18-24"), "{err}");
        }
    }

    #[test]
    fn rating_bands() {
        let got: Vec<usize> = (1..=9).map(|r| label_scheme(&rating(r), LabelScheme::Load3).unwrap()).collect();
        assert_eq!(got, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
        assert_eq!(label_scheme(&rating(5), LabelScheme::Load3).unwrap(), 1);
        assert!(label_scheme(&LabelFields::default(), LabelScheme::Load3).is_err());
    }

    #[test]
    fn gender_and_segment() {
        let f = LabelFields {
            gender: Some(Gender::Female),
            task_segment: Some(Segment::Rest),
            ..Default::default()
        };
        assert_eq!(label_scheme(&f, LabelScheme::Gender).unwrap(), 1);
        assert_eq!(label_scheme(&f, LabelScheme::Load2).unwrap(), 0);
        assert!(label_scheme(&f, LabelScheme::Age6).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [LabelScheme::Gender, LabelScheme::Age6, LabelScheme::Load2, LabelScheme::Load3] {
            assert_eq!(s.as_str().parse::<LabelScheme>().unwrap(), s);
            assert_eq!(s.class_names().len(), s.num_classes());
        }
        assert!("age5".parse::<LabelScheme>().is_err());
    }
}
