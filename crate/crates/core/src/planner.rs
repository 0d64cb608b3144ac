//! Data-mix plans and resource advice.
//!
//! * Baseline: the same count for every ability.
//! * Reconstruct: resistant abilities cut to a floor, saturated abilities
//!   held at a cap, the rest of a fixed budget spread evenly over the
//!   responsive abilities.
//! * Maximum: everything available, with per-ability overrides.
//!
//! Integer remainders in Reconstruct go one each to the first responsive
//! abilities in catalog (lexicographic) order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::AbilityId;
use crate::error::{Error, Result};
use crate::table::{read_csv, write_csv};
use crate::Scalar;

pub type Availability = BTreeMap<AbilityId, u64>;

/// Default resistant floor.
pub const DEFAULT_FLOOR: u64 = 64;
pub const DEFAULT_SATURATED_CAP: u64 = 1000;
pub const DEFAULT_RESISTANT_THRESHOLD: f64 = 0.25;
pub const DEFAULT_PLATEAU_EPSILON: f64 = 0.01;
/// Synthetic quotas above this fraction of the human total get a warning.
pub const DEFAULT_SYNTHETIC_WARN_RATIO: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Baseline,
    Reconstruct,
    Maximum,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Baseline => "baseline",
            Strategy::Reconstruct => "reconstruct",
            Strategy::Maximum => "maximum",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Strategy::Baseline),
            "reconstruct" => Ok(Strategy::Reconstruct),
            "maximum" => Ok(Strategy::Maximum),
            other => Err(Error::invalid(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixPlan {
    pub strategy: Strategy,
    pub counts: BTreeMap<AbilityId, u64>,
    pub synthetic_count: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MixPlan {
    fn new(strategy: Strategy, counts: BTreeMap<AbilityId, u64>) -> Self {
        MixPlan {
            strategy,
            counts,
            synthetic_count: 0,
            warnings: Vec::new(),
        }
    }

    /// Human-curated instances; synthetic ones are counted separately.
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Row label such as `Maximum+2.56k`.
    pub fn label(&self) -> String {
        let name = match self.strategy {
            Strategy::Baseline => "Baseline",
            Strategy::Reconstruct => "Reconstruct",
            Strategy::Maximum => "Maximum",
        };
        if self.synthetic_count == 0 {
            name.to_owned()
        } else {
            format!("{name}+{}", compact_count(self.synthetic_count))
        }
    }

    pub fn check_availability(&self, availability: &Availability) -> Result<()> {
        for (a, &count) in &self.counts {
            let available = availability.get(a).copied().unwrap_or(0);
            if count > available {
                return Err(Error::AvailabilityExceeded {
                    ability: a.to_string(),
                    count,
                    available,
                });
            }
        }
        Ok(())
    }
}

/// `2560 -> "2.56k"`, `41000 -> "41k"`, `500 -> "500"`.
pub fn compact_count(n: u64) -> String {
    if n < 1000 {
        return n.to_string();
    }
    let whole = n / 1000;
    let frac = format!("{:03}", n % 1000);
    let frac = frac.trim_end_matches('0');
    if frac.is_empty() {
        format!("{whole}k")
    } else {
        format!("{whole}.{frac}k")
    }
}

pub fn plan_baseline(
    abilities: &[AbilityId],
    per_ability: u64,
    availability: Option<&Availability>,
) -> Result<MixPlan> {
    let plan = MixPlan::new(
        Strategy::Baseline,
        abilities.iter().map(|a| (a.clone(), per_ability)).collect(),
    );
    if plan.counts.len() != abilities.len() {
        return Err(Error::invalid("duplicate ability in baseline plan"));
    }
    if let Some(av) = availability {
        plan.check_availability(av)?;
    }
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ClassKind {
    /// Barely moves with data or parameters; cut to `floor`.
    Resistant { floor: u64 },
    /// Already at its plateau; held at `cap`.
    Saturated { cap: u64 },
    Responsive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbilityClass {
    pub ability: AbilityId,
    #[serde(flatten)]
    pub class: ClassKind,
}

pub fn plan_reconstruct(
    classes: &[AbilityClass],
    budget: u64,
    availability: Option<&Availability>,
) -> Result<MixPlan> {
    let mut sorted: Vec<&AbilityClass> = classes.iter().collect();
    sorted.sort_by(|a, b| a.ability.cmp(&b.ability));
    for w in sorted.windows(2) {
        if w[0].ability == w[1].ability {
            return Err(Error::invalid(format!("`{}` classified twice", w[0].ability)));
        }
    }

    let mut counts = BTreeMap::new();
    let mut reserved: u64 = 0;
    let mut responsive = Vec::new();
    for c in sorted {
        match c.class {
            ClassKind::Resistant { floor } => {
                counts.insert(c.ability.clone(), floor);
                reserved += floor;
            }
            ClassKind::Saturated { cap } => {
                counts.insert(c.ability.clone(), cap);
                reserved += cap;
            }
            ClassKind::Responsive => responsive.push(&c.ability),
        }
    }
    if responsive.is_empty() {
        return Err(Error::NoResponsive);
    }
    if budget < reserved {
        return Err(Error::InfeasibleBudget {
            budget,
            required: reserved,
        });
    }
    let residual = budget - reserved;
    let share = residual / responsive.len() as u64;
    let extra = (residual % responsive.len() as u64) as usize;
    for (i, a) in responsive.into_iter().enumerate() {
        counts.insert(a.clone(), share + u64::from(i < extra));
    }
    let plan = MixPlan::new(Strategy::Reconstruct, counts);
    debug_assert_eq!(plan.total(), budget);
    if let Some(av) = availability {
        plan.check_availability(av)?;
    }
    Ok(plan)
}

pub fn plan_maximum(availability: &Availability, overrides: &Availability) -> Result<MixPlan> {
    let mut counts = availability.clone();
    for (a, &v) in overrides {
        let available = *availability.get(a).ok_or_else(|| {
            Error::invalid(format!("override for `{a}`, which has no availability"))
        })?;
        if v > available {
            return Err(Error::AvailabilityExceeded {
                ability: a.to_string(),
                count: v,
                available,
            });
        }
        counts.insert(a.clone(), v);
    }
    Ok(MixPlan::new(Strategy::Maximum, counts))
}

/// Sets the synthetic quota; human counts are untouched. Quotas larger than
/// `warn_ratio` times the human total are annotated with a warning.
pub fn add_synthetic(plan: &MixPlan, quota: u64, warn_ratio: f64) -> MixPlan {
    let mut out = plan.clone();
    out.synthetic_count = quota;
    out.warnings.retain(|w| !w.starts_with("synthetic"));
    if quota as f64 > warn_ratio * plan.total() as f64 {
        out.warnings.push(format!(
            "synthetic quota {quota} exceeds {warn_ratio} of the {} human instances; large synthetic additions tend to hurt",
            plan.total()
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    ScaleParameters,
    ScaleData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AdvisorRecommendation<T: Scalar = f64> {
    pub ability: Option<AbilityId>,
    pub param_sensitivity: T,
    pub data_sensitivity: T,
    pub recommendation: Recommendation,
}

/// Parameters when strictly more parameter-sensitive, data otherwise
/// (ties included).
pub fn advise_axis<T: Scalar>(param_sensitivity: T, data_sensitivity: T) -> Result<AdvisorRecommendation<T>> {
    for (what, v) in [("param_sensitivity", param_sensitivity), ("data_sensitivity", data_sensitivity)] {
        if !(v >= T::zero() && v <= T::one()) {
            return Err(Error::OutOfRange {
                what: what.into(),
                value: v.to_f64_lossy(),
            });
        }
    }
    Ok(AdvisorRecommendation {
        ability: None,
        param_sensitivity,
        data_sensitivity,
        recommendation: if param_sensitivity > data_sensitivity {
            Recommendation::ScaleParameters
        } else {
            Recommendation::ScaleData
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    pub resistant_threshold: f64,
    pub floor: u64,
    pub saturated_cap: u64,
}

impl Default for ClassThresholds {
    fn default() -> Self {
        ClassThresholds {
            resistant_threshold: DEFAULT_RESISTANT_THRESHOLD,
            floor: DEFAULT_FLOOR,
            saturated_cap: DEFAULT_SATURATED_CAP,
        }
    }
}

/// Resistant when both normalized sensitivities are below the threshold,
/// otherwise Saturated when flagged as plateaued, otherwise Responsive.
/// Abilities missing from `plateau` count as not plateaued.
pub fn classify_abilities<T: Scalar>(
    norm_param: &BTreeMap<AbilityId, T>,
    norm_data: &BTreeMap<AbilityId, T>,
    thresholds: &ClassThresholds,
    plateau: &BTreeMap<AbilityId, bool>,
) -> Result<Vec<AbilityClass>> {
    let keys: BTreeSet<_> = norm_param.keys().collect();
    if keys != norm_data.keys().collect::<BTreeSet<_>>() {
        return Err(Error::DimensionMismatch(
            "parameter and data sensitivities cover different abilities".into(),
        ));
    }
    let threshold = T::from_f64_lossy(thresholds.resistant_threshold);
    Ok(norm_param
        .iter()
        .map(|(a, &p)| {
            let d = norm_data[a];
            let class = if p < threshold && d < threshold {
                ClassKind::Resistant {
                    floor: thresholds.floor,
                }
            } else if plateau.get(a).copied().unwrap_or(false) {
                ClassKind::Saturated {
                    cap: thresholds.saturated_cap,
                }
            } else {
                ClassKind::Responsive
            };
            AbilityClass {
                ability: a.clone(),
                class,
            }
        })
        .collect())
}

/// True when the accuracy gain between the last two volumes is below
/// `epsilon`. Volumes must be strictly increasing.
pub fn detect_plateau<T: Scalar>(pairs: &[(u64, T)], epsilon: T) -> Result<bool> {
    if pairs.len() < 2 {
        return Err(Error::invalid("plateau detection needs at least 2 volumes"));
    }
    if pairs.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::invalid("volumes must be strictly increasing"));
    }
    let last = pairs[pairs.len() - 1].1;
    let prev = pairs[pairs.len() - 2].1;
    Ok(last - prev < epsilon)
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanRow {
    ability: AbilityId,
    count: u64,
}

/// Writes `# key=value` header lines followed by an `ability,count` table.
pub fn write_plan<W: Write>(plan: &MixPlan, mut w: W) -> Result<()> {
    let io = |e| Error::io("<plan>", e);
    writeln!(w, "# strategy={}", plan.strategy).map_err(io)?;
    writeln!(w, "# total={}", plan.total()).map_err(io)?;
    writeln!(w, "# synthetic_count={}", plan.synthetic_count).map_err(io)?;
    for warning in &plan.warnings {
        writeln!(w, "# warning={warning}").map_err(io)?;
    }
    let rows: Vec<PlanRow> = plan
        .counts
        .iter()
        .map(|(a, &c)| PlanRow {
            ability: a.clone(),
            count: c,
        })
        .collect();
    write_csv(&rows, w)
}

pub fn read_plan<R: BufRead>(reader: R) -> Result<MixPlan> {
    let text = std::io::read_to_string(reader).map_err(|e| Error::io("<plan>", e))?;
    let mut strategy = None;
    let mut total = None;
    let mut synthetic_count = 0;
    let mut warnings = Vec::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("# ") else { continue };
        let Some((k, v)) = rest.split_once('=') else { continue };
        match k {
            "strategy" => strategy = Some(v.parse::<Strategy>()?),
            "total" => total = Some(v.parse::<u64>().map_err(|e| Error::invalid(e.to_string()))?),
            "synthetic_count" => {
                synthetic_count = v.parse().map_err(|e: std::num::ParseIntError| Error::invalid(e.to_string()))?
            }
            "warning" => warnings.push(v.to_owned()),
            _ => {}
        }
    }
    let rows: Vec<PlanRow> = read_csv(text.as_bytes())?;
    let plan = MixPlan {
        strategy: strategy.ok_or_else(|| Error::invalid("plan file has no strategy header"))?,
        counts: rows.into_iter().map(|r| (r.ability, r.count)).collect(),
        synthetic_count,
        warnings,
    };
    if total != Some(plan.total()) {
        return Err(Error::invalid("plan header total does not match its rows"));
    }
    Ok(plan)
}
