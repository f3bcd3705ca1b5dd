//! Pairs of processes on shared randomness that stay ordered sitewise.

use crate::clocks::{ClockStream, SeedSpec};
use crate::dynamics::{ring_events, InitField, Lattice};
use crate::error::{check_probability, Error, Result};
use crate::grid::{BoundaryPolicy, Rect, SpinConfig};

/// Density gained by the upper process of the continuity coupling during
/// `[0, delta]`: a closed site opens if its clock rings in that interval.
pub fn delta_prime(p: f64, delta: f64) -> f64 {
    (1.0 - p - delta) * -(-delta).exp_m1()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingMeta {
    pub p_lower: f64,
    pub p_upper: f64,
    /// Time at which both configurations are reported.
    pub end_time: f64,
    pub delta: Option<f64>,
    pub delta_prime: Option<f64>,
    pub master_seed: u64,
    pub replica: u64,
}

/// Sitewise comparison made at one checkpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Checkpoint {
    pub time: f64,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledPair {
    pub lower: SpinConfig,
    pub upper: SpinConfig,
    /// Upper configuration at the end of the first phase (continuity pair).
    pub upper_at_delta: Option<SpinConfig>,
    pub meta: CouplingMeta,
    pub checkpoints: Vec<Checkpoint>,
}

impl CoupledPair {
    pub fn total_violations(&self) -> usize {
        self.checkpoints.iter().map(|c| c.violations).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CheckMode {
    /// Compare at the start, at phase boundaries and at the end.
    #[default]
    Checkpoints,
    /// Compare after every ring as well.
    EveryEvent,
}

struct Lockstep {
    lattice: Lattice,
    lower: Vec<bool>,
    upper: Vec<bool>,
    checkpoints: Vec<Checkpoint>,
}

impl Lockstep {
    fn checkpoint(&mut self, time: f64) -> Result<()> {
        let bad = self.lower.iter().zip(&self.upper).position(|(l, u)| l > u);
        self.checkpoints.push(Checkpoint { time, violations: bad.is_some() as usize });
        match bad {
            Some(i) => Err(Error::OrderViolation { site: self.lattice.region.site_at(i), time }),
            None => Ok(()),
        }
    }

    fn config(&self, upper: bool) -> SpinConfig {
        let v = if upper { &self.upper } else { &self.lower };
        SpinConfig::from_bools(self.lattice.region, v).expect("state matches region")
    }
}

fn check_time(name: &str, t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and non-negative, got {t}")))
    }
}

/// Two densities on the same uniforms and clocks, evolved to time `t`.
#[allow(clippy::too_many_arguments)]
pub fn monotone_p_pair(
    p1: f64,
    p2: f64,
    t: f64,
    region: &Rect,
    policy: BoundaryPolicy,
    master_seed: u64,
    replica: u64,
    mode: CheckMode,
) -> Result<CoupledPair> {
    check_probability("p1", p1)?;
    check_probability("p2", p2)?;
    check_time("t", t)?;
    if p1 > p2 {
        return Err(Error::InvalidParameter(format!("need p1 <= p2, got {p1} > {p2}")));
    }
    let seed = SeedSpec::new(master_seed, replica, "init");
    let clocks = ClockStream::new(SeedSpec::new(master_seed, replica, "clock"), t);
    let mut run = Lockstep {
        lattice: Lattice::new(*region, policy),
        lower: InitField::new(&seed, p1)?.config(region).to_bools(),
        upper: InitField::new(&seed, p2)?.config(region).to_bools(),
        checkpoints: Vec::new(),
    };
    run.checkpoint(0.0)?;
    for (time, i) in ring_events(&clocks, region, None, t) {
        run.lower[i] = run.lattice.target(&run.lower, i);
        run.upper[i] = run.lattice.target(&run.upper, i);
        if mode == CheckMode::EveryEvent && run.lower[i] && !run.upper[i] {
            run.checkpoints.push(Checkpoint { time, violations: 1 });
            return Err(Error::OrderViolation { site: region.site_at(i), time });
        }
    }
    run.checkpoint(t)?;
    Ok(CoupledPair {
        lower: run.config(false),
        upper: run.config(true),
        upper_at_delta: None,
        meta: CouplingMeta {
            p_lower: p1,
            p_upper: p2,
            end_time: t,
            delta: None,
            delta_prime: None,
            master_seed,
            replica,
        },
        checkpoints: run.checkpoints,
    })
}

/// The continuity coupling. Both processes start from the same
/// Bernoulli(`p + delta`) configuration and share clocks. The lower one
/// follows majority dynamics up to time `t + delta`. The upper one sets
/// every ringing site to 1 during `[0, delta]` and then follows majority
/// dynamics for the remaining time `t`.
#[allow(clippy::too_many_arguments)]
pub fn continuity_pair(
    p: f64,
    delta: f64,
    t: f64,
    region: &Rect,
    policy: BoundaryPolicy,
    master_seed: u64,
    replica: u64,
    mode: CheckMode,
) -> Result<CoupledPair> {
    check_probability("p", p)?;
    check_time("t", t)?;
    if !(delta > 0.0) || p + delta > 1.0 {
        return Err(Error::InvalidParameter(format!("need delta > 0 and p + delta <= 1, got p={p} delta={delta}")));
    }
    let end = t + delta;
    let init = InitField::new(&SeedSpec::new(master_seed, replica, "init"), p + delta)?.config(region);
    let clocks = ClockStream::new(SeedSpec::new(master_seed, replica, "clock"), end);
    let mut run = Lockstep {
        lattice: Lattice::new(*region, policy),
        lower: init.to_bools(),
        upper: init.to_bools(),
        checkpoints: Vec::new(),
    };
    run.checkpoint(0.0)?;
    let mut upper_at_delta = None;
    for (time, i) in ring_events(&clocks, region, None, end) {
        if time > delta && upper_at_delta.is_none() {
            run.checkpoint(delta)?;
            upper_at_delta = Some(run.config(true));
        }
        run.lower[i] = run.lattice.target(&run.lower, i);
        run.upper[i] = if time <= delta { true } else { run.lattice.target(&run.upper, i) };
        if mode == CheckMode::EveryEvent && run.lower[i] && !run.upper[i] {
            run.checkpoints.push(Checkpoint { time, violations: 1 });
            return Err(Error::OrderViolation { site: region.site_at(i), time });
        }
    }
    if upper_at_delta.is_none() {
        run.checkpoint(delta)?;
        upper_at_delta = Some(run.config(true));
    }
    run.checkpoint(end)?;
    Ok(CoupledPair {
        lower: run.config(false),
        upper: run.config(true),
        upper_at_delta,
        meta: CouplingMeta {
            p_lower: p + delta,
            p_upper: p + delta + delta_prime(p, delta),
            end_time: end,
            delta: Some(delta),
            delta_prime: Some(delta_prime(p, delta)),
            master_seed,
            replica,
        },
        checkpoints: run.checkpoints,
    })
}
