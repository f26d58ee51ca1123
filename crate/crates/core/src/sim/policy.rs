//! Policy identifiers and ablation switches.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controller::{Arbitration, ControllerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Proposed,
    Static,
    Greedy,
    NoQkd,
    Oracle,
}

impl Policy {
    pub const ALL: [Policy; 5] = [Policy::Proposed, Policy::Static, Policy::Greedy, Policy::NoQkd, Policy::Oracle];

    pub fn label(self) -> &'static str {
        match self {
            Policy::Proposed => "proposed",
            Policy::Static => "static",
            Policy::Greedy => "greedy",
            Policy::NoQkd => "no_qkd",
            Policy::Oracle => "oracle",
        }
    }

    /// Whether the policy runs the price controller and so wants a plan.
    pub fn needs_plan(self) -> bool {
        matches!(self, Policy::Proposed | Policy::Oracle)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

/// One switch removed from the proposed controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Last-value persistence instead of forecasts.
    NoForecast,
    /// `reserve_margin = 0`.
    NoReserve,
    /// No S1 to S2 degradation.
    NoDegradation,
    /// Round-robin class order instead of loss-weighted arbitration.
    RoundRobin,
}

impl Ablation {
    pub const SWITCHES: [Ablation; 4] = [
        Ablation::NoForecast,
        Ablation::NoReserve,
        Ablation::NoDegradation,
        Ablation::RoundRobin,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoForecast => "no_forecast",
            Ablation::NoReserve => "no_reserve",
            Ablation::NoDegradation => "no_degradation",
            Ablation::RoundRobin => "round_robin",
        }
    }
}

/// A policy plus at most one ablation switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variant {
    pub policy: Policy,
    pub ablation: Ablation,
}

impl Variant {
    pub fn plain(policy: Policy) -> Self {
        Self {
            policy,
            ablation: Ablation::None,
        }
    }

    pub fn ablated(ablation: Ablation) -> Self {
        Self {
            policy: Policy::Proposed,
            ablation,
        }
    }

    pub fn label(&self) -> String {
        match self.ablation {
            Ablation::None => self.policy.label().to_string(),
            a => format!("{}-{}", self.policy.label(), a.label()),
        }
    }

    pub fn controller_config(&self) -> ControllerConfig {
        let mut cfg = ControllerConfig::default();
        match self.ablation {
            Ablation::NoForecast => cfg.forecasting = false,
            Ablation::NoDegradation => cfg.degradation = false,
            Ablation::RoundRobin => cfg.arbitration = Arbitration::RoundRobin,
            Ablation::None | Ablation::NoReserve => {}
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_parse_back() {
        for p in Policy::ALL {
            assert_eq!(p.label().parse::<Policy>().unwrap(), p);
        }
        assert!("nope".parse::<Policy>().is_err());
        assert_eq!(Variant::ablated(Ablation::NoReserve).label(), "proposed-no_reserve");
    }

    #[test]
    fn switches_map_onto_controller_config() {
        assert!(!Variant::ablated(Ablation::NoForecast).controller_config().forecasting);
        assert!(!Variant::ablated(Ablation::NoDegradation).controller_config().degradation);
        assert_eq!(
            Variant::ablated(Ablation::RoundRobin).controller_config().arbitration,
            Arbitration::RoundRobin
        );
        assert_eq!(Variant::ablated(Ablation::NoReserve).controller_config(), ControllerConfig::default());
    }
}
