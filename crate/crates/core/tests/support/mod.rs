pub mod exact_lp;
