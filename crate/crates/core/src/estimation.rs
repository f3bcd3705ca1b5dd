//! Monte Carlo estimates: event probabilities, crossing thresholds,
//! two-point covariances and finite-size percolation certificates.

use std::fmt;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;

use crate::clocks::{uniform_field, ClockStream, SeedSpec};
use crate::dynamics::{evolve_forward, plane_padding, Domain, InitField, LazyEvaluator, PadBound};
use crate::error::{check_probability, Error, Result};
use crate::grid::{BoundaryPolicy, Rect, Site, SpinConfig};
use crate::percolation::{connects, has_circuit, has_h_crossing, Connectivity};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;
/// Two-sided 99% normal quantile, used for sequential decisions.
pub const Z99: f64 = 2.5758293035489004;

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    /// Left-right crossing of `[1, floor(lambda n)] x [1, n]`.
    HCrossing { lambda: f64, n: u32 },
    /// Open circuit in `[-outer, outer]^2` around `[-inner, inner]^2`.
    Circuit { inner: u32, outer: u32 },
    /// Open path from `a` to `b` inside `region`.
    Connects { region: Rect, a: Vec<Site>, b: Vec<Site> },
}

impl EventKind {
    pub fn h_crossing(lambda: f64, n: u32) -> Self {
        EventKind::HCrossing { lambda, n }
    }

    /// Region the event depends on.
    pub fn window(&self) -> Result<Rect> {
        match self {
            EventKind::HCrossing { lambda, n } => {
                if !(*lambda > 0.0) || !lambda.is_finite() {
                    return Err(Error::InvalidParameter(format!("aspect must be positive, got {lambda}")));
                }
                let width = (lambda * *n as f64).floor();
                if *n == 0 || width < 1.0 {
                    return Err(Error::InvalidParameter(format!("empty crossing rectangle for lambda={lambda} n={n}")));
                }
                Rect::new(1, width as i32, 1, *n as i32)
            }
            EventKind::Circuit { inner, outer } => {
                if inner >= outer {
                    return Err(Error::Geometry(format!("circuit needs inner < outer, got {inner} >= {outer}")));
                }
                Ok(Rect::centered_box(*outer))
            }
            EventKind::Connects { region, .. } => Ok(*region),
        }
    }

    pub fn occurs(&self, config: &SpinConfig) -> Result<bool> {
        match self {
            EventKind::HCrossing { .. } => has_h_crossing(config, &self.window()?),
            EventKind::Circuit { inner, outer } => has_circuit(config, *inner, *outer),
            EventKind::Connects { region, a, b } => {
                Ok(connects(config, region, a, b, Connectivity::NearestNeighbor)?.connected)
            }
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::HCrossing { lambda, n } => write!(f, "h_crossing(lambda={lambda},n={n})"),
            EventKind::Circuit { inner, outer } => write!(f, "circuit(m={inner},n={outer})"),
            EventKind::Connects { region, a, b } => {
                write!(f, "connects(region={region},|A|={},|B|={})", a.len(), b.len())
            }
        }
    }
}

/// An event observed at time `t` from density `p`.
///
/// With a pad, the dynamics run on the window enlarged by `pad.m` under the
/// policy, which approximates the process on the whole lattice. Without a
/// pad, the window itself is the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSpec {
    pub kind: EventKind,
    pub t: f64,
    pub p: f64,
    pub policy: BoundaryPolicy,
    pub pad: Option<PadBound>,
}

impl EventSpec {
    /// Lattice approximation: frozen-zero padding sized from the cone bound.
    pub fn on_plane(kind: EventKind, t: f64, p: f64) -> Result<Self> {
        check_probability("p", p)?;
        let pad = plane_padding(t, &kind.window()?)?;
        Ok(EventSpec { kind, t, p, policy: BoundaryPolicy::FrozenZero, pad: Some(pad) })
    }

    /// The window as a finite graph of its own.
    pub fn on_window(kind: EventKind, t: f64, p: f64, policy: BoundaryPolicy) -> Result<Self> {
        check_probability("p", p)?;
        kind.window()?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidParameter(format!("time must be finite and non-negative, got {t}")));
        }
        Ok(EventSpec { kind, t, p, policy, pad: None })
    }

    pub fn with_p(&self, p: f64) -> Result<Self> {
        check_probability("p", p)?;
        Ok(EventSpec { p, ..self.clone() })
    }

    pub fn simulation_box(&self) -> Result<Rect> {
        let w = self.kind.window()?;
        Ok(match self.pad {
            Some(pad) => w.expand(pad.m),
            None => w,
        })
    }

    /// Final configuration of one replica on the simulation box.
    pub fn replica_config(&self, master_seed: u64, replica: u64) -> Result<SpinConfig> {
        let region = self.simulation_box()?;
        let init = InitField::new(&SeedSpec::new(master_seed, replica, "init"), self.p)?.config(&region);
        if self.t == 0.0 {
            return Ok(init);
        }
        let clocks = ClockStream::new(SeedSpec::new(master_seed, replica, "clock"), self.t);
        evolve_forward(&init, &clocks, self.t, self.policy)
    }

    pub fn replica_outcome(&self, master_seed: u64, replica: u64) -> Result<bool> {
        self.kind.occurs(&self.replica_config(master_seed, replica)?)
    }

    /// Outcomes of replicas `first..first + count`, in replica order.
    pub fn outcomes(&self, master_seed: u64, first: u64, count: u64) -> Result<Vec<bool>> {
        (first..first + count)
            .into_par_iter()
            .map(|r| self.replica_outcome(master_seed, r))
            .collect()
    }
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let phat = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (phat + z2 / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo.min(phat), hi.max(phat))
}

/// Seeds used by an estimate: replicas `first..first + count` of `master_seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedRange {
    pub master_seed: u64,
    pub first: u64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventProbEstimate {
    pub spec: EventSpec,
    pub replicas: u64,
    pub successes: u64,
    pub p_hat: f64,
    pub ci: (f64, f64),
    pub seeds: SeedRange,
}

pub fn mc_event_prob(spec: &EventSpec, replicas: u64, master_seed: u64) -> Result<EventProbEstimate> {
    if replicas == 0 {
        return Err(Error::InvalidParameter("replicas must be at least 1".into()));
    }
    let successes = spec.outcomes(master_seed, 0, replicas)?.iter().filter(|&&b| b).count() as u64;
    Ok(EventProbEstimate {
        spec: spec.clone(),
        replicas,
        successes,
        p_hat: successes as f64 / replicas as f64,
        ci: wilson_interval(successes, replicas, Z95),
        seeds: SeedRange { master_seed, first: 0, count: replicas },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    /// Crossing probability confidently below the target.
    Below,
    /// Crossing probability confidently above the target.
    Above,
    Undecided,
}

/// One evaluated density of a threshold search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BisectionStep {
    pub p: f64,
    pub replicas: u64,
    pub successes: u64,
    pub decision: Decision,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdConfig {
    pub target: f64,
    /// Bracket width at which the search stops.
    pub tol: f64,
    pub first_batch: u64,
    /// Largest sample size spent on a single density.
    pub max_replicas_per_point: u64,
    /// Total replica budget across all densities.
    pub max_total_replicas: u64,
    /// Normal quantile of the sequential decision interval.
    pub decision_z: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            target: 0.5,
            tol: 0.002,
            first_batch: 64,
            max_replicas_per_point: 1 << 15,
            max_total_replicas: 1 << 22,
            decision_z: Z99,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdEstimate {
    pub t: f64,
    pub n: u32,
    pub lambda: f64,
    pub target: f64,
    pub p_star: f64,
    /// Densities decided below and above the target that bracket it.
    pub ci: (f64, f64),
    pub trace: Vec<BisectionStep>,
    pub replicas_used: u64,
    pub master_seed: u64,
    /// The total budget ran out before the bracket reached `tol`.
    pub budget_exhausted: bool,
}

struct Search<'a> {
    base: &'a EventSpec,
    cfg: &'a ThresholdConfig,
    master_seed: u64,
    used: u64,
    trace: Vec<BisectionStep>,
}

impl Search<'_> {
    /// Doubling batches at density `p` until the interval excludes the
    /// target or the per-point cap is reached. Replica ids are shared
    /// between densities, which couples the estimates monotonically in `p`.
    fn decide(&mut self, p: f64) -> Result<Option<Decision>> {
        let spec = self.base.with_p(p)?;
        let (mut n, mut successes) = (0u64, 0u64);
        let mut batch = self.cfg.first_batch.max(1);
        loop {
            let batch_now = batch.min(self.cfg.max_replicas_per_point - n);
            if self.used + batch_now > self.cfg.max_total_replicas {
                return Ok(None);
            }
            successes += spec.outcomes(self.master_seed, n, batch_now)?.iter().filter(|&&b| b).count() as u64;
            n += batch_now;
            self.used += batch_now;
            let (lo, hi) = wilson_interval(successes, n, self.cfg.decision_z);
            let decision = if hi < self.cfg.target {
                Decision::Below
            } else if lo > self.cfg.target {
                Decision::Above
            } else if n >= self.cfg.max_replicas_per_point {
                Decision::Undecided
            } else {
                batch = n;
                continue;
            };
            self.trace.push(BisectionStep { p, replicas: n, successes, decision });
            return Ok(Some(decision));
        }
    }
}

/// Density at which the crossing probability of `H(lambda n, n)` at time
/// `t` equals `target`, by bisection with sequential sampling.
///
/// The returned interval has a density decided below the target at its
/// left end and one decided above at its right end. An undecided midpoint
/// splits the search into one bisection for each end.
pub fn threshold_search(
    t: f64,
    n: u32,
    lambda: f64,
    cfg: &ThresholdConfig,
    master_seed: u64,
) -> Result<ThresholdEstimate> {
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {}", cfg.tol)));
    }
    if !(cfg.target > 0.0 && cfg.target < 1.0) {
        return Err(Error::InvalidParameter(format!("target must lie in (0, 1), got {}", cfg.target)));
    }
    if cfg.max_replicas_per_point == 0 {
        return Err(Error::InvalidParameter("per-point replica cap must be positive".into()));
    }
    let base = EventSpec::on_plane(EventKind::h_crossing(lambda, n), t, 0.5)?;
    let mut s = Search { base: &base, cfg, master_seed, used: 0, trace: Vec::new() };
    // the crossing probability is 0 at p = 0 and 1 at p = 1
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut exhausted = false;
    let mut undecided = None;
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        match s.decide(mid)? {
            Some(Decision::Below) => lo = mid,
            Some(Decision::Above) => hi = mid,
            Some(Decision::Undecided) => {
                undecided = Some(mid);
                break;
            }
            None => {
                exhausted = true;
                break;
            }
        }
    }
    if let (Some(m), false) = (undecided, exhausted) {
        let mut upper = m;
        while upper - lo > cfg.tol / 2.0 && !exhausted {
            let mid = 0.5 * (lo + upper);
            match s.decide(mid)? {
                Some(Decision::Below) => lo = mid,
                Some(_) => upper = mid,
                None => exhausted = true,
            }
        }
        let mut lower = m;
        while hi - lower > cfg.tol / 2.0 && !exhausted {
            let mid = 0.5 * (lower + hi);
            match s.decide(mid)? {
                Some(Decision::Above) => hi = mid,
                Some(_) => lower = mid,
                None => exhausted = true,
            }
        }
    }
    Ok(ThresholdEstimate {
        t,
        n,
        lambda,
        target: cfg.target,
        p_star: 0.5 * (lo + hi),
        ci: (lo, hi),
        trace: s.trace,
        replicas_used: s.used,
        master_seed,
        budget_exhausted: exhausted,
    })
}

/// Initial-configuration sweep over all densities at once: sites are
/// opened in increasing order of their uniforms, tracking the largest
/// cluster and the first density at which a left-right crossing appears.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepEstimate {
    pub lambda: f64,
    pub n: u32,
    pub samples: u64,
    /// Median of the per-sample crossing densities.
    pub p_star: f64,
    /// 95% order-statistic interval for that median.
    pub ci: (f64, f64),
    /// `(p, crossing fraction, mean largest-cluster fraction)` on a grid of densities.
    pub curve: Vec<(f64, f64, f64)>,
}

struct SweepSample {
    crossing_at: f64,
    largest_at_grid: Vec<usize>,
}

fn sweep_one(window: &Rect, seed: &SeedSpec, grid: &[f64]) -> SweepSample {
    let field = uniform_field(seed, window);
    let mut order: Vec<usize> = (0..window.area()).collect();
    order.sort_by(|&a, &b| field.values()[a].total_cmp(&field.values()[b]));
    let n = window.area();
    let mut uf = UnionFind::<usize>::new(n);
    // per root: cluster size and which sides it touches
    let mut size = vec![1usize; n];
    let mut touches = vec![(false, false); n];
    let mut open = vec![false; n];
    let mut largest = 0usize;
    let mut crossing_at = f64::NAN;
    let mut largest_at_grid = vec![0; grid.len()];
    let mut g = 0;
    for &i in &order {
        let u = field.values()[i];
        while g < grid.len() && grid[g] < u {
            largest_at_grid[g] = largest;
            g += 1;
        }
        open[i] = true;
        let s = window.site_at(i);
        touches[i] = (s.x == window.x0, s.x == window.x1);
        for t in s.lattice_neighbors() {
            let Some(j) = window.index_of(t) else { continue };
            if !open[j] {
                continue;
            }
            let (ri, rj) = (uf.find(i), uf.find(j));
            if ri != rj {
                uf.union(ri, rj);
                let r = uf.find(ri);
                size[r] = size[ri] + size[rj];
                touches[r] = (touches[ri].0 || touches[rj].0, touches[ri].1 || touches[rj].1);
            }
        }
        let r = uf.find(i);
        largest = largest.max(size[r]);
        if crossing_at.is_nan() && touches[r] == (true, true) {
            crossing_at = u;
        }
    }
    while g < grid.len() {
        largest_at_grid[g] = largest;
        g += 1;
    }
    SweepSample { crossing_at, largest_at_grid }
}

/// Order-statistic interval for the median of `sorted` at 95%.
fn median_interval(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len() as f64;
    let half = Z95 * n.sqrt() / 2.0;
    let lo = ((n / 2.0 - half).floor().max(0.0)) as usize;
    let hi = ((n / 2.0 + half).ceil() as usize).min(sorted.len() - 1);
    (sorted[lo], sorted[hi])
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Threshold of `H(lambda n, n)` at time 0 from cluster sweeps, using seeds
/// `(master_seed, r, "sweep")`.
pub fn sweep_threshold(lambda: f64, n: u32, samples: u64, master_seed: u64) -> Result<SweepEstimate> {
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be at least 1".into()));
    }
    let window = EventKind::h_crossing(lambda, n).window()?;
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let runs: Vec<SweepSample> = (0..samples)
        .into_par_iter()
        .map(|r| sweep_one(&window, &SeedSpec::new(master_seed, r, "sweep"), &grid))
        .collect();
    let mut thresholds: Vec<f64> = runs.iter().map(|r| r.crossing_at).collect();
    thresholds.sort_by(f64::total_cmp);
    let area = window.area() as f64;
    let curve = grid
        .iter()
        .enumerate()
        .map(|(g, &p)| {
            let crossing = thresholds.partition_point(|&x| x <= p) as f64 / samples as f64;
            let largest = runs.iter().map(|r| r.largest_at_grid[g] as f64).sum::<f64>() / (samples as f64 * area);
            (p, crossing, largest)
        })
        .collect();
    Ok(SweepEstimate {
        lambda,
        n,
        samples,
        p_star: median(&thresholds),
        ci: median_interval(&thresholds),
        curve,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceEstimate {
    pub cov: f64,
    pub std_error: f64,
    pub ci: (f64, f64),
    /// Empirical marginals at the two sites.
    pub mean_x: f64,
    pub mean_y: f64,
    pub replicas: u64,
}

/// Sample covariance of `eta_t(x)` and `eta_t(y)` on the whole lattice.
pub fn covariance_estimate(
    p: f64,
    t: f64,
    x: Site,
    y: Site,
    replicas: u64,
    master_seed: u64,
) -> Result<CovarianceEstimate> {
    check_probability("p", p)?;
    if replicas < 2 {
        return Err(Error::InvalidParameter("covariance needs at least 2 replicas".into()));
    }
    let pairs: Vec<(f64, f64)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let init = InitField::new(&SeedSpec::new(master_seed, r, "init"), p)?;
            let clocks = ClockStream::new(SeedSpec::new(master_seed, r, "clock"), t);
            let mut ev = LazyEvaluator::new(&clocks, init, Domain::Plane, t);
            Ok((ev.eval(x, t)? as u8 as f64, ev.eval(y, t)? as u8 as f64))
        })
        .collect::<Result<_>>()?;
    let n = replicas as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let products: Vec<f64> = pairs.iter().map(|&(a, b)| (a - mean_x) * (b - mean_y)).collect();
    let cov = products.iter().sum::<f64>() / (n - 1.0);
    let mean_prod = products.iter().sum::<f64>() / n;
    let var_prod = products.iter().map(|v| (v - mean_prod).powi(2)).sum::<f64>() / (n - 1.0);
    let std_error = (var_prod / n).sqrt();
    Ok(CovarianceEstimate {
        cov,
        std_error,
        ci: (cov - Z95 * std_error, cov + Z95 * std_error),
        mean_x,
        mean_y,
        replicas,
    })
}

/// Threshold below which `P[H(4n, n)^c]` starts the renormalization.
pub const CERTIFICATE_EPSILON: f64 = 1.0 / (4.0 * 196.0);

/// Constant-free decoupling term of one renormalization step at scale `l`:
/// `64 l^2 e^{-l/2}` for factor 3 and `100 l^2 e^{-l}` for factor 4.
pub fn decoupling_term(l: f64, factor: u32) -> Result<f64> {
    match factor {
        3 => Ok(64.0 * l * l * (-l / 2.0).exp()),
        4 => Ok(100.0 * l * l * (-l).exp()),
        _ => Err(Error::InvalidParameter(format!("factor must be 3 or 4, got {factor}"))),
    }
}

/// Bound on the next-scale failure probability given the current one.
pub fn recursion_bound(q: f64, l: f64, factor: u32, c: f64) -> Result<f64> {
    let prefactor = if factor == 3 { 49.0 } else { 196.0 };
    Ok(prefactor * (q * q + c * decoupling_term(l, factor)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertificateConfig {
    pub replicas: u64,
    /// Stand-in for the decoupling constant.
    pub c: f64,
    /// Smallest admissible scale.
    pub n0: u32,
    /// Largest admissible time.
    pub t_max: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        CertificateConfig { replicas: 4000, c: 1.0, n0: 1, t_max: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertificateStatus {
    Certified,
    Undecided,
}

impl fmt::Display for CertificateStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertificateStatus::Certified => "CERTIFIED",
            CertificateStatus::Undecided => "UNDECIDED",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub p: f64,
    pub t: f64,
    pub n: u32,
    pub epsilon: f64,
    pub q_hat: f64,
    pub ci: (f64, f64),
    pub replicas: u64,
    pub master_seed: u64,
    pub config: CertificateConfig,
    /// Recursion bound on the failure probability at scale `4n`, at the measured `q`.
    pub predicted_next: f64,
    pub status: CertificateStatus,
}

impl Certificate {
    pub fn report(&self) -> String {
        let f = crate::fmt17;
        let mut out = String::new();
        out.push_str(&format!("status={}\n", self.status));
        out.push_str(&format!("p={}\nt={}\nn={}\n", f(self.p), f(self.t), self.n));
        out.push_str(&format!("event=H(4n,n)^c\nrectangle=[1,{}]x[1,{}]\n", 4 * self.n, self.n));
        out.push_str(&format!("epsilon={}\nepsilon_formula=1/(4*14^2)\n", f(self.epsilon)));
        out.push_str(&format!("q_hat={}\nci_lo={}\nci_hi={}\n", f(self.q_hat), f(self.ci.0), f(self.ci.1)));
        out.push_str(&format!("replicas={}\nmaster_seed={}\n", self.replicas, self.master_seed));
        out.push_str(&format!(
            "decoupling_c={}\nn0={}\nt_max={}\n",
            f(self.config.c),
            self.config.n0,
            f(self.config.t_max)
        ));
        out.push_str(&format!("predicted_next_formula=14^2*(q^2+100*c*n^2*exp(-n))\npredicted_next={}\n", f(self.predicted_next)));
        out
    }
}

/// Estimates `q = P[H(4n, n)^c]` at time `t` and certifies when the 95%
/// upper bound on `q` is below [`CERTIFICATE_EPSILON`].
pub fn percolation_certificate(
    p: f64,
    t: f64,
    n: u32,
    cfg: &CertificateConfig,
    master_seed: u64,
) -> Result<Certificate> {
    if n < cfg.n0 {
        return Err(Error::InvalidParameter(format!("scale {n} is below the configured minimum {}", cfg.n0)));
    }
    if t > cfg.t_max {
        return Err(Error::InvalidParameter(format!("time {t} exceeds the configured maximum {}", cfg.t_max)));
    }
    let spec = EventSpec::on_plane(EventKind::h_crossing(4.0, n), t, p)?;
    let est = mc_event_prob(&spec, cfg.replicas, master_seed)?;
    let failures = est.replicas - est.successes;
    let q_hat = failures as f64 / est.replicas as f64;
    let ci = wilson_interval(failures, est.replicas, Z95);
    let status = if ci.1 < CERTIFICATE_EPSILON { CertificateStatus::Certified } else { CertificateStatus::Undecided };
    Ok(Certificate {
        p,
        t,
        n,
        epsilon: CERTIFICATE_EPSILON,
        q_hat,
        ci,
        replicas: est.replicas,
        master_seed,
        config: *cfg,
        predicted_next: recursion_bound(q_hat, n as f64, 4, cfg.c)?,
        status,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenormRow {
    pub k: u32,
    pub scale: u32,
    pub q_hat: f64,
    pub ci: (f64, f64),
    pub replicas: u64,
    /// Bound on `q_{k+1}` from the measured `q_k`.
    pub bound_next: f64,
    /// For `k >= 1`: whether `q_k` respects the bound from row `k - 1`.
    pub within_bound: Option<bool>,
}

/// Largest number of sites simulated per replica in a trace.
pub const RENORM_MAX_SITES: usize = 20_000_000;

/// Failure probabilities `q_k = P[H(factor L_k, L_k)^c]` at scales
/// `L_k = L0 factor^k`, `k = 0..=k_max`, with the recursion bound.
#[allow(clippy::too_many_arguments)]
pub fn renorm_trace(
    p: f64,
    t: f64,
    l0: u32,
    factor: u32,
    k_max: u32,
    replicas: u64,
    c: f64,
    master_seed: u64,
) -> Result<Vec<RenormRow>> {
    decoupling_term(1.0, factor)?;
    let mut rows: Vec<RenormRow> = Vec::new();
    for k in 0..=k_max {
        let scale = (l0 as u64)
            .checked_mul((factor as u64).pow(k))
            .filter(|&s| s <= i32::MAX as u64 / 8)
            .ok_or_else(|| Error::InvalidParameter("scale overflows".into()))? as u32;
        let spec = EventSpec::on_plane(EventKind::h_crossing(factor as f64, scale), t, p)?;
        let area = spec.simulation_box()?.area();
        if area > RENORM_MAX_SITES {
            return Err(Error::InvalidParameter(format!(
                "scale {scale} needs {area} sites, above the limit {RENORM_MAX_SITES}"
            )));
        }
        let est = mc_event_prob(&spec, replicas, master_seed.wrapping_add(k as u64))?;
        let failures = est.replicas - est.successes;
        let q_hat = failures as f64 / replicas as f64;
        let within_bound = rows.last().map(|prev| q_hat <= prev.bound_next);
        rows.push(RenormRow {
            k,
            scale,
            q_hat,
            ci: wilson_interval(failures, replicas, Z95),
            replicas,
            bound_next: recursion_bound(q_hat, scale as f64, factor, c)?,
            within_bound,
        });
    }
    Ok(rows)
}
