//! Online stage: per-slot price-threshold decisions with proximal knob
//! refinement, one dual step per slot, and Beta attack calibration.

mod belief;
mod decide;
mod prices;
mod recovery;
mod refine;

pub use belief::{calibrate_attack, AttackBelief};
pub use decide::{
    Arbitration, Controller, ControllerConfig, EwTracker, SlotDecision, SlotFeedback, SlotInput, MAX_CANDIDATES,
};
pub use prices::{dual_step, update_duals, ShadowPrices, SlotUsage};
pub use recovery::{recover_feasibility, RelaxOption};
pub use refine::{a_floor, coordinate_r_search, proximal_a_step, LocalTerms};
