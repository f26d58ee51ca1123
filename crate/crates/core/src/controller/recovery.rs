//! Minimum-weight demand relaxation when even base columns do not fit.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxOption {
    /// Cost per relieved bit.
    pub weight: f64,
    /// Most bits this class can shed.
    pub cap: f64,
}

/// Solves `min sum w_i z_i` s.t. `sum z_i >= sum deficits`, `0 <= z_i <= cap_i`
/// by filling the cheapest options first (ties to the lower index).
pub fn recover_feasibility(deficits: &[f64], options: &[RelaxOption]) -> Result<Vec<f64>> {
    let deficit: f64 = deficits.iter().map(|d| d.max(0.0)).sum();
    let mut z = vec![0.0; options.len()];
    if deficit <= 0.0 {
        return Ok(z);
    }
    let capacity: f64 = options.iter().map(|o| o.cap.max(0.0)).sum();
    if capacity < deficit {
        return Err(Error::RecoveryFailed {
            deficit,
            capacity,
            slot: None,
        });
    }
    let mut order: Vec<usize> = (0..options.len()).collect();
    order.sort_by(|&a, &b| options[a].weight.total_cmp(&options[b].weight).then(a.cmp(&b)));
    let mut left = deficit;
    for i in order {
        if left <= 0.0 {
            break;
        }
        let take = options[i].cap.max(0.0).min(left);
        z[i] = take;
        left -= take;
    }
    Ok(z)
}
