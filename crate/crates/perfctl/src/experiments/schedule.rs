use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::rng::{SeedPair, Stream};

const ASCENDING: &str = include_str!("../../data/ascending.txt");
const DESCENDING: &str = include_str!("../../data/descending.txt");
const RANDOM: &str = include_str!("../../data/random.txt");

/// SHA-256 of the three bundled 60-day schedule files.
pub const ASSET_CHECKSUMS: [(&str, &str); 3] = [
    ("ascending", "0be87d53f75d3b73a616ee0da4ed1f759a5dcb43ac53fa48b0bad0f1111a0e8f"),
    ("descending", "3e07bf7d542fde8238520f29131b9c9b5c1e6273c65cf2a86922a301b115ed41"),
    ("random", "ce0361209a6f1a0d0d76fedd0f79f19ba7a54197f1fafc389a0a1759c5df18e1"),
];

/// Largest value in the bundled schedules.
pub const BUNDLED_MAX_SENSITIVITY: f64 = 1.35861276e-01;

/// Horizon of the bundled schedules.
pub const ASSET_DAYS: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScheduleOrder {
    Ascending,
    Descending,
    Random { seed: u64 },
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySchedule {
    pub order: ScheduleOrder,
    pub values: Vec<f64>,
    /// Decimal text the values were parsed from, when read from an asset.
    pub text: Option<Vec<String>>,
    /// True when the values were interpolated rather than read from an asset.
    pub synthetic: bool,
}

impl SensitivitySchedule {
    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        ensure(values.iter().all(|v| v.is_finite() && *v >= 0.0), || {
            "explicit sensitivities must be finite and nonnegative".into()
        })?;
        Ok(SensitivitySchedule {
            order: ScheduleOrder::Explicit,
            values,
            text: None,
            synthetic: false,
        })
    }

    pub fn name(&self) -> &'static str {
        match self.order {
            ScheduleOrder::Ascending => "ascending",
            ScheduleOrder::Descending => "descending",
            ScheduleOrder::Random { .. } => "random",
            ScheduleOrder::Explicit => "explicit",
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        SensitivitySchedule {
            order: self.order.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
            text: None,
            synthetic: self.synthetic,
        }
    }

    /// Parses one decimal value per line.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        let values = lines
            .iter()
            .map(|l| l.parse::<f64>().map_err(|e| Error::Parse(format!("schedule value {l:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut s = Self::explicit(values)?;
        s.text = Some(lines);
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaperSchedules {
    pub ascending: SensitivitySchedule,
    pub descending: SensitivitySchedule,
    pub random: SensitivitySchedule,
}

impl PaperSchedules {
    pub fn by_name(&self, name: &str) -> Option<&SensitivitySchedule> {
        match name {
            "ascend" | "ascending" => Some(&self.ascending),
            "descend" | "descending" => Some(&self.descending),
            "random" => Some(&self.random),
            _ => None,
        }
    }
}

fn checksum(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn asset(name: &str, text: &str, order: ScheduleOrder) -> Result<SensitivitySchedule> {
    let expected = ASSET_CHECKSUMS.iter().find(|(n, _)| *n == name).map(|(_, c)| *c).expect("known asset");
    let found = checksum(text);
    if found != expected {
        return Err(Error::InvalidConfig(format!("schedule asset {name} has checksum {found}, expected {expected}")));
    }
    let mut s = SensitivitySchedule::parse(text)?;
    s.order = order;
    Ok(s)
}

/// The three orderings of one sensitivity multiset. For 60 days these are the
/// bundled lists; any other horizon interpolates geometrically between the
/// bundled extremes and is marked synthetic.
pub fn paper_schedules(days: usize) -> Result<PaperSchedules> {
    ensure(days >= 1, || "schedule needs at least one day".into())?;
    let ascending = asset("ascending", ASCENDING, ScheduleOrder::Ascending)?;
    if days == ASSET_DAYS {
        return Ok(PaperSchedules {
            ascending,
            descending: asset("descending", DESCENDING, ScheduleOrder::Descending)?,
            random: asset("random", RANDOM, ScheduleOrder::Random { seed: 0 })?,
        });
    }
    let lo = ascending.values[0];
    let hi = ascending.values[ASSET_DAYS - 1];
    let values: Vec<f64> = if days == 1 {
        vec![hi]
    } else {
        (0..days).map(|i| lo * (hi / lo).powf(i as f64 / (days - 1) as f64)).collect()
    };
    let synth = |order: ScheduleOrder, values: Vec<f64>| SensitivitySchedule {
        order,
        values,
        text: None,
        synthetic: true,
    };
    Ok(PaperSchedules {
        ascending: synth(ScheduleOrder::Ascending, values.clone()),
        descending: synth(ScheduleOrder::Descending, values.iter().rev().copied().collect()),
        random: synth(ScheduleOrder::Random { seed: 0 }, shuffled(&values, 0)),
    })
}

/// Permutation of `values` drawn from `seed`.
pub fn shuffled(values: &[f64], seed: u64) -> Vec<f64> {
    let mut out = values.to_vec();
    out.shuffle(&mut SeedPair::new(seed, 0).rng(Stream::Init));
    out
}
