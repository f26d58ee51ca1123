//! Key supply: pool evolution with TTL expiry and relay routing.

mod maxflow;
mod pool;
mod routing;

pub use maxflow::FlowGraph;
pub use pool::{
    expire_in_place, expire_keys, step_in_place, step_pool, KeyPool, PoolFlows, StepOutcome,
};
pub use routing::{route_keys, InfeasibilityCertificate, KeyFlows, RoutingOutcome, Topology};

/// Turns fractional expected consumption into integer draws while keeping
/// the running total within half a bit of the exact sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CarryRegister {
    carry: f64,
}

impl CarryRegister {
    pub fn draw(&mut self, expected: f64) -> u64 {
        let want = (expected.max(0.0) + self.carry).max(0.0);
        let n = want.round_ties_even();
        self.carry = want - n;
        n as u64
    }

    pub fn carry(&self) -> f64 {
        self.carry
    }
}
