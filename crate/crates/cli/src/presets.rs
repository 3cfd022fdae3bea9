//! Named hyper-parameter presets: selected values per target and scheme,
//! and the search grids they were selected from.

use slocal_core::schedule::ScheduleSpec;
use slocal_core::targets::TargetSpec;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Standard,
    Geom11,
    Geom21,
}

impl Scheme {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "standard" => Ok(Scheme::Standard),
            "geom11" => Ok(Scheme::Geom11),
            "geom21" => Ok(Scheme::Geom21),
            _ => Err(CliError::key("preset", format!("unknown scheme '{s}' (standard, geom11, geom21)"))),
        }
    }

    pub fn schedule(self) -> ScheduleSpec {
        match self {
            Scheme::Standard => ScheduleSpec::STANDARD,
            Scheme::Geom11 => ScheduleSpec::Geom { alpha1: 1.0, alpha2: 1.0 },
            Scheme::Geom21 => ScheduleSpec::Geom { alpha1: 2.0, alpha2: 1.0 },
        }
    }

    pub fn of_schedule(spec: &ScheduleSpec) -> Option<Self> {
        [Scheme::Standard, Scheme::Geom11, Scheme::Geom21]
            .into_iter()
            .find(|s| s.schedule() == *spec)
    }
}

/// Selected `(eta, t0)` per scheme, in the order standard, geom11, geom21.
const TABLE4: &[(&str, [(f64, f64); 3])] = &[
    ("8gauss", [(5.7, 0.60), (5.7, 0.35), (5.0, 0.35)]),
    ("rings", [(4.6, 1.20), (4.6, 0.10), (4.6, 0.30)]),
    ("funnel", [(5.0, 1.00), (4.6, 0.30), (4.6, 0.40)]),
    ("gmm8", [(5.0, 0.40), (5.0, 0.25), (5.0, 0.45)]),
    ("gmm16", [(5.0, 0.20), (5.0, 0.15), (5.0, 0.35)]),
    ("gmm32", [(5.0, 0.10), (5.0, 0.10), (5.0, 0.25)]),
    ("gmm64", [(5.0, 0.05), (5.0, 0.05), (5.0, 0.20)]),
    ("ionosphere", [(5.0, 0.03), (5.0, 0.03), (5.0, 0.15)]),
    ("sonar", [(5.0, 0.03), (5.0, 0.03), (5.0, 0.15)]),
    ("phi4:0", [(5.7, 0.80), (5.7, 0.30), (5.7, 0.40)]),
    ("phi4:0.025", [(5.7, 1.80), (5.7, 0.35), (6.1, 0.45)]),
    ("phi4:0.05", [(6.1, 1.00), (5.7, 0.30), (5.7, 0.40)]),
    ("phi4:0.075", [(5.7, 1.80), (5.7, 0.35), (5.7, 0.40)]),
    ("phi4:0.1", [(5.7, 1.40), (5.7, 0.45), (5.7, 0.40)]),
];

/// Values a preset contributes to a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetValues {
    /// `None` for datasets, whose path must be supplied separately.
    pub target: Option<String>,
    pub schedule: ScheduleSpec,
    pub eta: f64,
    pub t0: f64,
}

fn scheme_index(s: Scheme) -> usize {
    match s {
        Scheme::Standard => 0,
        Scheme::Geom11 => 1,
        Scheme::Geom21 => 2,
    }
}

fn target_for_key(key: &str) -> Option<String> {
    if let Some(d) = key.strip_prefix("gmm") {
        return Some(format!("gmm:{d}"));
    }
    match key {
        "ionosphere" | "sonar" => None,
        other => Some(other.to_string()),
    }
}

/// Resolves `table4:<target>:<scheme>`.
pub fn table4(name: &str) -> CliResult<PresetValues> {
    let rest = name
        .strip_prefix("table4:")
        .ok_or_else(|| CliError::key("preset", format!("'{name}' is not a table4 preset")))?;
    let (key, scheme) = rest
        .rsplit_once(':')
        .ok_or_else(|| CliError::key("preset", "expected table4:<target>:<scheme>"))?;
    let scheme = Scheme::parse(scheme)?;
    let row = TABLE4
        .iter()
        .find(|(k, _)| *k == key)
        .ok_or_else(|| CliError::key("preset", format!("no table4 row for target '{key}'")))?;
    let (eta, t0) = row.1[scheme_index(scheme)];
    Ok(PresetValues {
        target: target_for_key(key),
        schedule: scheme.schedule(),
        eta,
        t0,
    })
}

/// Search grid: `eta` values and `t0` values.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    pub etas: Vec<f64>,
    pub t0s: Vec<f64>,
}

/// Resolves `table3:<group>[:<scheme>]`, with groups `gmm` (mixtures and
/// logistic regression), `phi4` and `others`. Without a scheme the
/// configured schedule picks the row.
pub fn table3(name: &str, schedule: &ScheduleSpec) -> CliResult<SearchGrid> {
    let rest = name
        .strip_prefix("table3:")
        .ok_or_else(|| CliError::key("preset", format!("'{name}' is not a table3 preset")))?;
    let (group, scheme) = match rest.split_once(':') {
        Some((g, s)) => (g, Scheme::parse(s)?),
        None => (
            rest,
            Scheme::of_schedule(schedule)
                .ok_or_else(|| CliError::key("schedule", format!("no table3 grid for schedule {schedule}")))?,
        ),
    };
    let grid = |etas: &[f64], t0s: &[f64]| SearchGrid {
        etas: etas.to_vec(),
        t0s: t0s.to_vec(),
    };
    Ok(match (group, scheme) {
        ("gmm", Scheme::Standard) => grid(&[5.0], &[0.03, 0.05, 0.1, 0.2, 0.4]),
        ("gmm", Scheme::Geom11) => grid(&[5.0], &[0.03, 0.05, 0.1, 0.15, 0.25]),
        ("gmm", Scheme::Geom21) => grid(&[5.0], &[0.15, 0.20, 0.25, 0.35, 0.45]),
        ("phi4", Scheme::Standard) => grid(&[5.7, 6.1], &[0.8, 1.0, 1.2, 1.4, 1.8]),
        ("phi4", Scheme::Geom11) => grid(&[5.7, 6.1], &[0.30, 0.35, 0.40, 0.45]),
        ("phi4", Scheme::Geom21) => grid(&[5.7, 6.1], &[0.40, 0.45, 0.50, 0.55]),
        ("others", Scheme::Standard) => grid(&[5.0, 5.7], &[0.1, 0.2, 0.4, 1.0, 1.2]),
        ("others", Scheme::Geom11) => grid(&[4.6, 5.0], &[0.1, 0.15, 0.20]),
        ("others", Scheme::Geom21) => grid(&[4.6, 5.0], &[0.30, 0.35, 0.45]),
        _ => return Err(CliError::key("preset", format!("unknown table3 group '{group}' (gmm, phi4, others)"))),
    })
}

/// Default MCMC steps per estimate for a target: 32, except the larger
/// mixtures (48/64/96 at d = 32/64/128) and phi4 (64).
pub fn default_mcmc_steps(target: &TargetSpec) -> usize {
    match target {
        TargetSpec::Gmm { d } if *d >= 128 => 96,
        TargetSpec::Gmm { d } if *d >= 64 => 64,
        TargetSpec::Gmm { d } if *d >= 32 => 48,
        TargetSpec::Phi4 { .. } => 64,
        _ => 32,
    }
}
