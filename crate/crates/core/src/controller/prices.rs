//! Shadow prices on key availability and their projected subgradient step.

use serde::{Deserialize, Serialize};

use crate::model::ValidatedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowPrices {
    pub node: Vec<f64>,
    pub domain: Vec<f64>,
    /// Network-wide price; the common threshold of the allocation rule.
    pub pool: f64,
}

impl ShadowPrices {
    pub fn zeros(n_nodes: usize, n_domains: usize) -> Self {
        Self {
            node: vec![0.0; n_nodes],
            domain: vec![0.0; n_domains],
            pool: 0.0,
        }
    }

    pub fn for_model(m: &ValidatedModel) -> Self {
        Self::zeros(m.nodes().len(), m.domains().len())
    }

    /// Per-bit premium a class pays on top of the pool price: the mean node
    /// and domain price over the nodes it draws from.
    pub fn class_premium(&self, model: &ValidatedModel, class: usize) -> f64 {
        let nodes = model.class_nodes(class);
        if nodes.is_empty() {
            return 0.0;
        }
        let sum: f64 = nodes
            .iter()
            .map(|&u| {
                let d = model.node_domain(u);
                self.node[u] + self.domain.get(d).copied().unwrap_or(0.0)
            })
            .sum();
        sum / nodes.len() as f64
    }

    pub fn mean_node(&self) -> f64 {
        if self.node.is_empty() {
            0.0
        } else {
            self.node.iter().sum::<f64>() / self.node.len() as f64
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.node.iter().chain(&self.domain).all(|&p| p >= 0.0) && self.pool >= 0.0
    }
}

/// Consumption against availability for one slot, all in bits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotUsage {
    pub node_consumption: Vec<f64>,
    pub node_available: Vec<f64>,
    pub domain_usage: Vec<f64>,
    pub domain_quota: Vec<f64>,
}

impl SlotUsage {
    pub fn pool_excess(&self) -> f64 {
        self.node_consumption.iter().sum::<f64>() - self.node_available.iter().sum::<f64>()
    }
}

/// `[pi + gamma * excess]+`, rounded once.
pub fn dual_step(price: f64, excess: f64, gamma: f64) -> f64 {
    gamma.mul_add(excess, price).max(0.0)
}

/// One projected subgradient step on every price.
pub fn update_duals(prices: &ShadowPrices, usage: &SlotUsage, gamma: f64) -> ShadowPrices {
    let node = prices
        .node
        .iter()
        .enumerate()
        .map(|(u, &p)| {
            let c = usage.node_consumption.get(u).copied().unwrap_or(0.0);
            let a = usage.node_available.get(u).copied().unwrap_or(0.0);
            dual_step(p, c - a, gamma)
        })
        .collect();
    let domain = prices
        .domain
        .iter()
        .enumerate()
        .map(|(d, &p)| {
            let c = usage.domain_usage.get(d).copied().unwrap_or(0.0);
            let q = usage.domain_quota.get(d).copied().unwrap_or(f64::INFINITY);
            dual_step(p, c - q, gamma)
        })
        .collect();
    ShadowPrices {
        node,
        domain,
        pool: dual_step(prices.pool, usage.pool_excess(), gamma),
    }
}
