//! Per-slot fractional master: MSV-ordered greedy over concave upgrade chains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StrategyColumn;

/// One candidate column of a class, priced for the slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MenuPoint {
    pub col: StrategyColumn,
    /// Key bits the class consumes in the slot under this column.
    pub cost: f64,
    /// Objective contribution (expected risk plus penalties), currency.
    pub risk: f64,
}

/// The candidate columns of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMenu {
    pub class: usize,
    /// Tie-break key: higher loss goes first.
    pub unit_loss: f64,
    /// Extra per-bit price the class pays on top of the common threshold
    /// (node and domain duals).
    pub premium: f64,
    pub points: Vec<MenuPoint>,
}

/// A step between consecutive points of a class's envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Upgrade {
    pub class: usize,
    /// Position in the class chain, 0 = first step above base.
    pub step: usize,
    pub d_cost: f64,
    pub d_risk: f64,
    /// Risk reduction per bit, net of the class premium.
    pub msv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAllocation {
    pub class: usize,
    /// Envelope points, base first.
    pub envelope: Vec<MenuPoint>,
    /// Number of fully applied upgrades.
    pub level: usize,
    /// Fraction of upgrade `level` applied (0 when none).
    pub fraction: f64,
}

impl ClassAllocation {
    pub fn cost(&self) -> f64 {
        self.mix(|p| p.cost)
    }

    pub fn risk(&self) -> f64 {
        self.mix(|p| p.risk)
    }

    fn mix(&self, f: impl Fn(&MenuPoint) -> f64) -> f64 {
        let here = f(&self.envelope[self.level]);
        match self.envelope.get(self.level + 1) {
            Some(next) if self.fraction > 0.0 => here + self.fraction * (f(next) - here),
            _ => here,
        }
    }

    /// Column holding the larger share.
    pub fn dominant(&self) -> MenuPoint {
        if self.fraction >= 0.5 && self.level + 1 < self.envelope.len() {
            self.envelope[self.level + 1]
        } else {
            self.envelope[self.level]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FractionalAllocation {
    pub classes: Vec<ClassAllocation>,
    pub threshold: f64,
    pub base_cost: f64,
    pub applied: Vec<Upgrade>,
    pub rejected: Vec<Upgrade>,
    /// The split upgrade and its applied fraction.
    pub partial: Option<(Upgrade, f64)>,
}

impl FractionalAllocation {
    pub fn cost(&self) -> f64 {
        self.classes.iter().map(|c| c.cost()).sum()
    }

    pub fn risk(&self) -> f64 {
        self.classes.iter().map(|c| c.risk()).sum()
    }

    /// Applied upgrades clear the threshold, rejected ones do not.
    pub fn certificate_holds(&self) -> bool {
        self.applied.iter().all(|u| u.msv >= self.threshold)
            && self.rejected.iter().all(|u| u.msv <= self.threshold)
    }
}

/// Lower convex envelope of `(cost, risk)` with strictly decreasing risk and
/// strictly decreasing slopes. The first point is the cheapest (ties: least
/// risky).
pub fn concave_envelope(points: &[MenuPoint]) -> Vec<MenuPoint> {
    let mut pts: Vec<MenuPoint> = points.to_vec();
    pts.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.risk.total_cmp(&b.risk)));
    let mut mono: Vec<MenuPoint> = Vec::with_capacity(pts.len());
    for p in pts {
        match mono.last() {
            None => mono.push(p),
            Some(last) if p.risk < last.risk && p.cost > last.cost => mono.push(p),
            _ => {}
        }
    }
    let mut hull: Vec<MenuPoint> = Vec::with_capacity(mono.len());
    for p in mono {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Pop b unless slope(a,b) is strictly steeper than slope(b,p).
            let lhs = (a.risk - b.risk) * (p.cost - b.cost);
            let rhs = (b.risk - p.risk) * (b.cost - a.cost);
            if lhs <= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Greedy fractional knapsack.
///
/// `budget` counts total bits including the base columns. Upgrades are taken
/// in descending net MSV while it exceeds `reserve_price`; the first one that
/// does not fit is split. The returned threshold is the net MSV of the split
/// upgrade, or `reserve_price` when every worthwhile upgrade fits.
pub fn solve_slot_fractional(
    menus: &[ClassMenu],
    budget: f64,
    reserve_price: f64,
) -> Result<FractionalAllocation> {
    let mut classes = Vec::with_capacity(menus.len());
    let mut upgrades = Vec::new();
    let mut base_cost = 0.0;
    for (pos, m) in menus.iter().enumerate() {
        assert!(!m.points.is_empty(), "class {} has no columns", m.class);
        let env = concave_envelope(&m.points);
        base_cost += env[0].cost;
        for (k, w) in env.windows(2).enumerate() {
            let d_cost = w[1].cost - w[0].cost;
            let d_risk = w[0].risk - w[1].risk;
            upgrades.push((
                m.unit_loss,
                pos,
                Upgrade {
                    class: m.class,
                    step: k,
                    d_cost,
                    d_risk,
                    msv: d_risk / d_cost - m.premium,
                },
            ));
        }
        classes.push(ClassAllocation {
            class: m.class,
            envelope: env,
            level: 0,
            fraction: 0.0,
        });
    }
    if base_cost > budget {
        return Err(Error::InfeasibleBase {
            base_cost,
            budget,
        });
    }
    upgrades.sort_by(|(la, _, a), (lb, _, b)| {
        b.msv
            .total_cmp(&a.msv)
            .then(lb.total_cmp(la))
            .then(a.class.cmp(&b.class))
            .then(a.step.cmp(&b.step))
    });

    let mut left = budget - base_cost;
    let mut threshold = reserve_price;
    let mut applied = Vec::new();
    let mut rejected = Vec::new();
    let mut partial = None;
    let mut open = true;
    for (_, pos, u) in upgrades {
        if !open {
            rejected.push(u);
            continue;
        }
        if u.msv <= reserve_price {
            open = false;
            rejected.push(u);
            continue;
        }
        let ca = &mut classes[pos];
        if u.d_cost <= left {
            left -= u.d_cost;
            ca.level += 1;
            applied.push(u);
        } else {
            let f = (left / u.d_cost).clamp(0.0, 1.0);
            ca.fraction = f;
            threshold = u.msv;
            partial = Some((u, f));
            open = false;
        }
    }

    Ok(FractionalAllocation {
        classes,
        threshold,
        base_cost,
        applied,
        rejected,
        partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Strategy;

    fn pt(cost: f64, risk: f64) -> MenuPoint {
        MenuPoint {
            col: StrategyColumn::new(Strategy::AesWc, cost, 1),
            cost,
            risk,
        }
    }

    fn single(class: usize, msv: f64, d_cost: f64, loss: f64) -> ClassMenu {
        ClassMenu {
            class,
            unit_loss: loss,
            premium: 0.0,
            points: vec![pt(10.0, 100.0), pt(10.0 + d_cost, 100.0 - msv * d_cost)],
        }
    }

    fn three() -> Vec<ClassMenu> {
        vec![
            single(0, 0.05, 100.0, 1.0),
            single(1, 0.02, 200.0, 1.0),
            single(2, 0.01, 300.0, 1.0),
        ]
    }

    #[test]
    fn three_class_example() {
        let a = solve_slot_fractional(&three(), 30.0 + 250.0, 0.0).unwrap();
        assert_eq!(a.classes[0].level, 1);
        assert_eq!(a.classes[1].level, 0);
        assert!((a.classes[1].fraction - 0.75).abs() < 1e-12);
        assert_eq!(a.classes[2].level, 0);
        assert_eq!(a.classes[2].fraction, 0.0);
        assert!((a.threshold - 0.02).abs() < 1e-12);
        assert!(a.certificate_holds());
    }

    #[test]
    fn slack_and_empty_budgets() {
        let a = solve_slot_fractional(&three(), 30.0 + 600.0, 0.0).unwrap();
        assert!(a.classes.iter().all(|c| c.level == 1));
        assert_eq!(a.threshold, 0.0);

        let a = solve_slot_fractional(&three(), 30.0, 0.0).unwrap();
        assert!(a.classes.iter().all(|c| c.level == 0 && c.fraction == 0.0));
        assert!((a.threshold - 0.05).abs() < 1e-12);
        assert!(a.certificate_holds());

        let err = solve_slot_fractional(&three(), 29.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBase { .. }));
    }

    #[test]
    fn exact_fill_sets_threshold_to_next() {
        let a = solve_slot_fractional(&three(), 30.0 + 300.0, 0.0).unwrap();
        assert_eq!(a.classes[1].level, 1);
        assert!((a.threshold - 0.01).abs() < 1e-12);
        assert!(a.certificate_holds());
    }

    #[test]
    fn reserve_price_stops_greedy() {
        let a = solve_slot_fractional(&three(), 1e9, 0.015).unwrap();
        assert_eq!(a.classes[0].level, 1);
        assert_eq!(a.classes[1].level, 1);
        assert_eq!(a.classes[2].level, 0);
        assert_eq!(a.threshold, 0.015);
        assert!(a.certificate_holds());
    }

    #[test]
    fn ties_prefer_higher_loss_then_lower_id() {
        let menus = vec![
            single(0, 0.02, 100.0, 1.0),
            single(1, 0.02, 100.0, 5.0),
            single(2, 0.02, 100.0, 5.0),
        ];
        let a = solve_slot_fractional(&menus, 30.0 + 150.0, 0.0).unwrap();
        assert_eq!(a.classes[1].level, 1);
        assert!((a.classes[2].fraction - 0.5).abs() < 1e-12);
        assert_eq!(a.classes[0].level, 0);
        assert_eq!(a.classes[0].fraction, 0.0);
    }

    #[test]
    fn envelope_drops_dominated_and_collinear() {
        let pts = vec![
            pt(0.0, 10.0),
            pt(1.0, 6.0),
            pt(2.0, 3.5),
            pt(3.0, 2.0), // inside the hull
            pt(4.0, 0.0),
            pt(5.0, 3.0), // dominated
            pt(0.0, 12.0),
            pt(1.5, 8.0), // above the hull
        ];
        let env = concave_envelope(&pts);
        let got: Vec<(f64, f64)> = env.iter().map(|p| (p.cost, p.risk)).collect();
        assert_eq!(got, vec![(0.0, 10.0), (1.0, 6.0), (2.0, 3.5), (4.0, 0.0)]);

        let env = concave_envelope(&[pt(0.0, 10.0), pt(1.0, 6.0), pt(2.0, 2.0)]);
        let got: Vec<(f64, f64)> = env.iter().map(|p| (p.cost, p.risk)).collect();
        assert_eq!(got, vec![(0.0, 10.0), (2.0, 2.0)]);
    }

    #[test]
    fn premium_shifts_net_msv() {
        let mut menus = three();
        menus[0].premium = 0.04;
        let a = solve_slot_fractional(&menus, 1e9, 0.015).unwrap();
        // Class 0 nets 0.01, below the reserve.
        assert_eq!(a.classes[0].level, 0);
        assert_eq!(a.classes[1].level, 1);
    }
}
