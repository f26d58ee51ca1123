//! Exogenous processes: traffic, link weather and yields, attacks.
//!
//! An [`EnvSeries`] is generated once per seed and shared by every policy
//! run on that seed, so comparisons use common random numbers.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Pareto, Poisson};
use serde::{Deserialize, Serialize};

use crate::crypto::AttackContext;
use crate::model::ValidatedModel;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Normal,
    Degraded,
    Outage,
}

/// Secret-key yield of a link: `yield_max * max(0, 1 - Q/Q_th) * snr * availability`.
pub fn link_yield(yield_max: f64, qber: f64, qber_threshold: f64, snr: f64, availability: f64) -> f64 {
    yield_max * (1.0 - qber / qber_threshold).max(0.0) * snr * availability
}

/// Poisson arrival count; zero intensity always yields zero.
pub fn poisson_count(lambda: f64, rng: &mut ChaCha8Rng) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// Hour of day at the start of slot `t`.
pub fn hour_of(t: usize, slot_seconds: f64) -> f64 {
    (t as f64 * slot_seconds / 3600.0) % 24.0
}

fn diurnal(curve: &[f64], hour: f64) -> f64 {
    let h0 = hour.floor() as usize % 24;
    let frac = hour - hour.floor();
    curve[h0] * (1.0 - frac) + curve[(h0 + 1) % 24] * frac
}

/// How much randomness a generated series carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvKnobs {
    /// Scales every noise standard deviation; 0 gives the forecast mean.
    pub noise_scale: f64,
    /// Overrides the configured expected shock count.
    pub shocks: Option<usize>,
    pub pulses: bool,
    pub maintenance: bool,
}

impl Default for EnvKnobs {
    fn default() -> Self {
        Self {
            noise_scale: 1.0,
            shocks: None,
            pulses: true,
            maintenance: true,
        }
    }
}

impl EnvKnobs {
    pub fn mean() -> Self {
        Self {
            noise_scale: 0.0,
            shocks: Some(0),
            pulses: false,
            maintenance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shock {
    pub start: usize,
    pub end: usize,
    pub severity: f64,
    /// Affected links.
    pub links: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub start: usize,
    pub end: usize,
    pub magnitude: f64,
    pub classes: Vec<usize>,
}

/// Every exogenous series for one episode; indices are `[slot][item]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSeries {
    pub horizon: usize,
    /// Arrival intensity per class, messages/slot.
    pub lambda: Vec<Vec<f64>>,
    pub arrivals: Vec<Vec<u64>>,
    pub qber: Vec<Vec<f64>>,
    pub regime: Vec<Vec<Regime>>,
    /// Expected yield before integer truncation.
    pub yield_mean: Vec<Vec<f64>>,
    pub yields: Vec<Vec<u64>>,
    /// Day-ahead yield forecast.
    pub yield_forecast: Vec<Vec<f64>>,
    pub attack: Vec<Vec<AttackContext>>,
    pub attempts: Vec<Vec<bool>>,
    /// Uniform draws compared against the deployed residual success.
    pub success_draw: Vec<Vec<f64>>,
    pub peak: Vec<bool>,
    pub shock_active: Vec<bool>,
    pub pulse_active: Vec<bool>,
    pub shocks: Vec<Shock>,
    pub pulses: Vec<Pulse>,
}

impl EnvSeries {
    pub fn generate(model: &ValidatedModel, horizon: usize, seed: u64) -> Self {
        Self::generate_with(model, horizon, seed, &EnvKnobs::default())
    }

    pub fn generate_with(model: &ValidatedModel, horizon: usize, seed: u64, knobs: &EnvKnobs) -> Self {
        let sim = model.sim();
        let n_links = model.links().len();
        let n_classes = model.classes().len();

        let hours: Vec<f64> = (0..horizon).map(|t| hour_of(t, sim.slot_seconds)).collect();
        let peak_amp: Vec<f64> = hours
            .iter()
            .map(|&h| {
                sim.traffic
                    .peak_windows
                    .iter()
                    .filter(|w| h >= w.start_hour && h < w.end_hour)
                    .map(|w| w.amp)
                    .sum()
            })
            .collect();
        let peak: Vec<bool> = hours
            .iter()
            .map(|&h| {
                sim.traffic
                    .peak_windows
                    .iter()
                    .any(|w| h >= w.start_hour && h < w.end_hour)
            })
            .collect();

        let lambda: Vec<Vec<f64>> = (0..horizon)
            .map(|t| {
                let m = diurnal(&sim.traffic.diurnal, hours[t]) * (1.0 + peak_amp[t]);
                model.classes().iter().map(|c| c.lambda_base * m).collect()
            })
            .collect();
        let arrivals = (0..horizon)
            .map(|t| gen_traffic(&lambda[t], seed, t))
            .collect();

        let shocks = weather_shocks(model, horizon, seed, knobs);
        let (qber, regime, yield_mean, yields, yield_forecast, shock_active) =
            weather(model, horizon, seed, knobs, &shocks);

        let pulses = attack_pulses(model, horizon, seed, knobs, &peak, &shocks);
        let drift_phase: Vec<f64> = {
            let mut rng = stream_rng(seed, Stream::Attack, 0);
            (0..n_classes).map(|_| rng.gen::<f64>() * TAU).collect()
        };
        let amp = sim.attack.peak_amp;
        let day_slots = 86_400.0 / sim.slot_seconds;
        let mut attack = vec![Vec::with_capacity(n_classes); horizon];
        let mut pulse_active = vec![false; horizon];
        for t in 0..horizon {
            let theta = (1.0 + amp * peak[t] as u8 as f64) / (1.0 + amp);
            for (i, c) in model.classes().iter().enumerate() {
                let drift = 1.0
                    + knobs.noise_scale.min(1.0)
                        * sim.attack.drift_amp
                        * (TAU * t as f64 / day_slots + drift_phase[i]).sin();
                let mut p = c.attack_baseline * drift.max(0.0);
                let mut q = sim.attack.q_base;
                let mut age = 0usize;
                for pl in &pulses {
                    if t >= pl.start && t < pl.end && pl.classes.contains(&i) {
                        p += pl.magnitude;
                        q += sim.attack.q_pulse;
                        age = age.max(t - pl.start);
                        pulse_active[t] = true;
                    }
                }
                let tau = 1.0 + (age as f64).min((sim.attack.tau_cap - 1.0).max(0.0));
                attack[t].push(AttackContext::new(p.clamp(0.0, 1.0), q, tau, theta));
            }
        }

        let mut attempts = Vec::with_capacity(horizon);
        let mut success_draw = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let (a, u) = gen_outcomes(&attack[t], seed, t);
            attempts.push(a);
            success_draw.push(u);
        }

        debug_assert!(yields.iter().all(|y: &Vec<u64>| y.len() == n_links));
        Self {
            horizon,
            lambda,
            arrivals,
            qber,
            regime,
            yield_mean,
            yields,
            yield_forecast,
            attack,
            attempts,
            success_draw,
            peak,
            shock_active,
            pulse_active,
            shocks,
            pulses,
        }
    }
}

/// Poisson arrivals per class for one slot.
pub fn gen_traffic(lambda: &[f64], seed: u64, slot: usize) -> Vec<u64> {
    let mut rng = stream_rng(seed, Stream::Traffic, slot as u64);
    lambda.iter().map(|&l| poisson_count(l, &mut rng)).collect()
}

/// Attempt indicators and success uniforms for one slot.
pub fn gen_outcomes(ctx: &[AttackContext], seed: u64, slot: usize) -> (Vec<bool>, Vec<f64>) {
    let mut rng = stream_rng(seed, Stream::Outcome, slot as u64);
    let attempts = ctx.iter().map(|c| rng.gen::<f64>() < c.attempt_prob).collect();
    let draws = ctx.iter().map(|_| rng.gen::<f64>()).collect();
    (attempts, draws)
}

fn weather_shocks(model: &ValidatedModel, horizon: usize, seed: u64, knobs: &EnvKnobs) -> Vec<Shock> {
    let w = &model.sim().weather;
    let n_links = model.links().len();
    let mut out = Vec::new();
    for s in &w.scripted_shocks {
        out.push(Shock {
            start: s.start_slot.min(horizon),
            end: s.end_slot.min(horizon),
            severity: s.severity,
            links: (0..n_links).collect(),
        });
    }
    if horizon == 0 {
        return out;
    }
    let mut rng = stream_rng(seed, Stream::Weather, 1);
    let day_frac = horizon as f64 * model.sim().slot_seconds / 86_400.0;
    let count = match knobs.shocks {
        Some(n) => n,
        None => poisson_count(w.shocks_per_episode * day_frac, &mut rng) as usize,
    };
    let n_domains = model.domains().len().max(1);
    for _ in 0..count {
        let start = rng.gen_range(0..horizon);
        let len = rng.gen_range(w.shock_slots_lo..=w.shock_slots_hi.max(w.shock_slots_lo)) as usize;
        let severity = if w.shock_severity_hi > w.shock_severity_lo {
            rng.gen_range(w.shock_severity_lo..w.shock_severity_hi)
        } else {
            w.shock_severity_lo
        };
        let domain = rng.gen_range(0..n_domains);
        let links = model
            .link_domains()
            .iter()
            .enumerate()
            .filter(|(_, ds)| ds.contains(&domain) || model.domains().is_empty())
            .map(|(e, _)| e)
            .collect();
        out.push(Shock {
            start,
            end: (start + len.max(1)).min(horizon),
            severity,
            links,
        });
    }
    out
}

type WeatherOut = (
    Vec<Vec<f64>>,
    Vec<Vec<Regime>>,
    Vec<Vec<f64>>,
    Vec<Vec<u64>>,
    Vec<Vec<f64>>,
    Vec<bool>,
);

fn weather(
    model: &ValidatedModel,
    horizon: usize,
    seed: u64,
    knobs: &EnvKnobs,
    shocks: &[Shock],
) -> WeatherOut {
    let w = &model.sim().weather;
    let links = model.links();
    let n_links = links.len();
    let ns = knobs.noise_scale;

    // Global AR(1) weather severity.
    let mut sev = vec![0.0; horizon];
    if ns > 0.0 && w.noise_sd > 0.0 {
        let mut rng = stream_rng(seed, Stream::Weather, 0);
        let sd = w.noise_sd * ns;
        let innov = Normal::new(0.0, sd).expect("sd > 0");
        let stat = Normal::new(0.0, sd / (1.0 - w.ar_coef * w.ar_coef).sqrt()).expect("sd > 0");
        let mut x = stat.sample(&mut rng);
        for s in sev.iter_mut() {
            *s = x;
            x = w.ar_coef * x + innov.sample(&mut rng);
        }
    }

    let mut down = vec![vec![false; n_links]; horizon];
    if knobs.maintenance && horizon > 0 {
        let mut rng = stream_rng(seed, Stream::Maintenance, 0);
        let day_frac = horizon as f64 * model.sim().slot_seconds / 86_400.0;
        for e in 0..n_links {
            let k = poisson_count(w.maintenance_rate * day_frac, &mut rng);
            for _ in 0..k {
                let start = rng.gen_range(0..horizon);
                let end = (start + w.maintenance_slots as usize).min(horizon);
                for row in &mut down[start..end] {
                    row[e] = true;
                }
            }
        }
    }

    let mut qber = Vec::with_capacity(horizon);
    let mut regime = Vec::with_capacity(horizon);
    let mut yield_mean = Vec::with_capacity(horizon);
    let mut yields = Vec::with_capacity(horizon);
    let mut forecast = Vec::with_capacity(horizon);
    let mut shock_active = vec![false; horizon];
    let snr_noise = Normal::new(0.0, (w.snr_sd * ns).max(1e-300)).expect("sd > 0");
    let fc_sd = w.forecast_noise_sd * ns;
    let fc_noise = Normal::new(-fc_sd * fc_sd / 2.0, fc_sd.max(1e-300)).expect("sd > 0");
    for t in 0..horizon {
        let mut shock = vec![0.0f64; n_links];
        for s in shocks {
            if t >= s.start && t < s.end {
                shock_active[t] = true;
                for &e in &s.links {
                    shock[e] = shock[e].max(s.severity);
                }
            }
        }
        let mut snr_rng = stream_rng(seed, Stream::Snr, t as u64);
        let mut fc_rng = stream_rng(seed, Stream::Forecast, t as u64);
        let mut q_row = Vec::with_capacity(n_links);
        let mut r_row = Vec::with_capacity(n_links);
        let mut m_row = Vec::with_capacity(n_links);
        let mut y_row = Vec::with_capacity(n_links);
        let mut f_row = Vec::with_capacity(n_links);
        for (e, l) in links.iter().enumerate() {
            let q = l.qber_base * (1.0 + l.env_sensitivity * (sev[t].abs() + shock[e]));
            let reg = if down[t][e] || q >= l.qber_threshold {
                Regime::Outage
            } else if q >= w.degraded_frac * l.qber_threshold {
                Regime::Degraded
            } else {
                Regime::Normal
            };
            let snr = if ns > 0.0 {
                (-snr_noise.sample(&mut snr_rng).abs()).exp()
            } else {
                1.0
            };
            let avail = if reg == Regime::Outage { 0.0 } else { 1.0 };
            let g = link_yield(l.yield_max, q, l.qber_threshold, snr, avail);
            let f = if fc_sd > 0.0 {
                g * fc_noise.sample(&mut fc_rng).exp()
            } else {
                g
            };
            q_row.push(q);
            r_row.push(reg);
            m_row.push(g);
            y_row.push(g.floor() as u64);
            f_row.push(f);
        }
        qber.push(q_row);
        regime.push(r_row);
        yield_mean.push(m_row);
        yields.push(y_row);
        forecast.push(f_row);
    }
    (qber, regime, yield_mean, yields, forecast, shock_active)
}

fn attack_pulses(
    model: &ValidatedModel,
    horizon: usize,
    seed: u64,
    knobs: &EnvKnobs,
    peak: &[bool],
    shocks: &[Shock],
) -> Vec<Pulse> {
    let a = &model.sim().attack;
    let n_classes = model.classes().len();
    let mut out = Vec::new();

    for s in &model.sim().weather.scripted_shocks {
        if s.attack_magnitude > 0.0 && s.start_slot < horizon {
            out.push(Pulse {
                start: s.start_slot,
                end: s.end_slot.min(horizon),
                magnitude: s.attack_magnitude,
                classes: (0..n_classes).collect(),
            });
        }
    }
    if !knobs.pulses {
        return out;
    }

    let mut rng = stream_rng(seed, Stream::Attack, 1);
    let pareto = Pareto::new(a.pareto_scale, a.pareto_shape).expect("positive params");
    let draw = |rng: &mut ChaCha8Rng, start: usize| {
        let len = (pareto.sample(rng).ceil() as usize).clamp(1, a.max_pulse_slots.max(1) as usize);
        let magnitude = if a.magnitude_hi > a.magnitude_lo {
            rng.gen_range(a.magnitude_lo..a.magnitude_hi)
        } else {
            a.magnitude_lo
        };
        let mut classes: Vec<usize> = (0..n_classes).filter(|_| rng.gen::<f64>() < 0.7).collect();
        if classes.is_empty() {
            classes.push(rng.gen_range(0..n_classes));
        }
        Pulse {
            start,
            end: (start + len).min(horizon),
            magnitude,
            classes,
        }
    };
    for t in 0..horizon {
        let rate = a.pulse_rate * if peak[t] { a.peak_sync } else { 1.0 };
        if rng.gen::<f64>() < rate {
            out.push(draw(&mut rng, t));
        }
    }
    // Random weather shocks may trigger synchronized pulses; scripted ones
    // carry their own attack magnitude above.
    let scripted = model.sim().weather.scripted_shocks.len();
    for s in shocks.iter().skip(scripted) {
        if rng.gen::<f64>() < a.weather_trigger {
            out.push(draw(&mut rng, s.start));
        }
    }
    out
}
