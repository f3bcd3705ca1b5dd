//! Majority dynamics: the update rule, the forward event-driven engine, the
//! lazy backward evaluator, cones of influence and pad sizing.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

use crate::clocks::{uniform_at, ClockStream, RingIter, SeedSpec};
use crate::error::{check_probability, Error, Result};
use crate::grid::{neighbors_unchecked, BoundaryPolicy, NeighborSource, Rect, Site, SpinConfig};

/// The update rule: strict majority of the neighbours present, ties keep
/// the current opinion. With four neighbours this is "at least three ones
/// turns a 0 into a 1, at most one turns a 1 into a 0".
#[inline]
pub fn majority_rule(own: bool, ones: u32, degree: u32) -> bool {
    match (2 * ones).cmp(&degree) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => own,
    }
}

/// Opinion `s` would adopt if its clock rang now. Does not mutate.
pub fn step_site(config: &SpinConfig, s: Site, policy: BoundaryPolicy) -> Result<bool> {
    let own = config.at(s)?;
    let (mut ones, mut degree) = (0, 0);
    for n in neighbors_unchecked(s, config.region(), policy) {
        degree += 1;
        let v = match n {
            NeighborSource::Site(t) => config.get(t).expect("neighbour resolved inside region"),
            NeighborSource::Constant(c) => c,
        };
        ones += v as u32;
    }
    Ok(majority_rule(own, ones, degree))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlipEvent {
    pub time: f64,
    pub site: Site,
    pub old: bool,
    pub new: bool,
}

/// Global processing order of rings: by time, exact ties by site.
#[inline]
pub(crate) fn event_cmp(a: (f64, Site), b: (f64, Site)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Nbr {
    Index(u32),
    Constant(bool),
    Absent,
}

/// Neighbourhood table of a region under a policy.
pub(crate) struct Lattice {
    pub(crate) region: Rect,
    pub(crate) nbrs: Vec<[Nbr; 4]>,
}

impl Lattice {
    pub(crate) fn new(region: Rect, policy: BoundaryPolicy) -> Self {
        let nbrs = region
            .sites()
            .map(|s| {
                let mut slots = [Nbr::Absent; 4];
                for (slot, n) in slots.iter_mut().zip(neighbors_unchecked(s, &region, policy)) {
                    *slot = match n {
                        NeighborSource::Site(t) => Nbr::Index(region.index_of(t).unwrap() as u32),
                        NeighborSource::Constant(c) => Nbr::Constant(c),
                    };
                }
                slots
            })
            .collect();
        Lattice { region, nbrs }
    }

    #[inline]
    pub(crate) fn target(&self, state: &[bool], i: usize) -> bool {
        let (mut ones, mut degree) = (0, 0);
        for n in &self.nbrs[i] {
            match *n {
                Nbr::Index(j) => {
                    degree += 1;
                    ones += state[j as usize] as u32;
                }
                Nbr::Constant(c) => {
                    degree += 1;
                    ones += c as u32;
                }
                Nbr::Absent => {}
            }
        }
        majority_rule(state[i], ones, degree)
    }
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    time: f64,
    site: Site,
    index: u32,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        event_cmp((self.time, self.site), (other.time, other.site))
    }
}

/// Event-driven forward simulation on a finite region.
///
/// Only sites whose next update would flip them (the unstable set) have a
/// pending ring in the queue; rings of stable sites are skipped as no-ops.
pub struct ForwardEngine<'a> {
    lattice: Lattice,
    clocks: &'a ClockStream,
    state: Vec<bool>,
    cursors: Vec<Option<RingIter<'a>>>,
    next_ring: Vec<f64>,
    scheduled: Vec<bool>,
    queue: BinaryHeap<Reverse<Pending>>,
    now: f64,
    flips: Vec<u32>,
    last_flip: f64,
    log: Option<Vec<FlipEvent>>,
}

impl<'a> ForwardEngine<'a> {
    pub fn new(init: &SpinConfig, clocks: &'a ClockStream, policy: BoundaryPolicy) -> Self {
        let region = *init.region();
        let n = region.area();
        let mut engine = ForwardEngine {
            lattice: Lattice::new(region, policy),
            clocks,
            state: init.to_bools(),
            cursors: (0..n).map(|_| None).collect(),
            next_ring: vec![f64::NEG_INFINITY; n],
            scheduled: vec![false; n],
            queue: BinaryHeap::new(),
            now: 0.0,
            flips: vec![0; n],
            last_flip: 0.0,
            log: None,
        };
        for i in 0..n {
            if engine.lattice.target(&engine.state, i) != engine.state[i] {
                engine.schedule_after(i, (f64::NEG_INFINITY, region.site_at(0)));
            }
        }
        engine
    }

    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    /// Schedules site `i` at its first ring ordered after `after`.
    fn schedule_after(&mut self, i: usize, after: (f64, Site)) {
        let site = self.lattice.region.site_at(i);
        let clocks = self.clocks;
        let cursor = self.cursors[i].get_or_insert_with(|| clocks.ring_iter(site));
        let mut t = self.next_ring[i];
        while t == f64::NEG_INFINITY || event_cmp((t, site), after) != Ordering::Greater {
            t = cursor.next().unwrap_or(f64::INFINITY);
            if t == f64::INFINITY {
                break;
            }
        }
        self.next_ring[i] = t;
        if t.is_finite() {
            self.scheduled[i] = true;
            self.queue.push(Reverse(Pending { time: t, site, index: i as u32 }));
        }
    }

    fn peek_live(&mut self) -> Option<Pending> {
        while let Some(Reverse(top)) = self.queue.peek().copied() {
            let i = top.index as usize;
            if self.scheduled[i] && self.next_ring[i] == top.time {
                return Some(top);
            }
            self.queue.pop();
        }
        None
    }

    fn process(&mut self, ev: Pending) {
        self.queue.pop();
        let i = ev.index as usize;
        let old = self.state[i];
        self.state[i] = !old;
        self.flips[i] += 1;
        self.last_flip = ev.time;
        self.now = ev.time;
        if let Some(log) = self.log.as_mut() {
            log.push(FlipEvent { time: ev.time, site: ev.site, old, new: !old });
        }
        self.scheduled[i] = false;
        let key = (ev.time, ev.site);
        for slot in 0..4 {
            if let Nbr::Index(j) = self.lattice.nbrs[i][slot] {
                let j = j as usize;
                let unstable = self.lattice.target(&self.state, j) != self.state[j];
                if unstable && !self.scheduled[j] {
                    self.schedule_after(j, key);
                } else if !unstable {
                    self.scheduled[j] = false;
                }
            }
        }
    }

    /// Processes every ring with time `<= t`.
    pub fn advance_to(&mut self, t: f64) {
        while let Some(ev) = self.peek_live() {
            if ev.time > t {
                break;
            }
            self.process(ev);
        }
        self.now = self.now.max(t);
    }

    pub fn is_quiescent(&mut self) -> bool {
        self.peek_live().is_none()
    }

    pub fn config(&self) -> SpinConfig {
        SpinConfig::from_bools(self.lattice.region, &self.state).expect("state matches region")
    }

    pub fn flip_counts(&self) -> &[u32] {
        &self.flips
    }

    pub fn take_log(&mut self) -> Vec<FlipEvent> {
        self.log.take().unwrap_or_default()
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("time must be finite and non-negative, got {t}")))
    }
}

/// `eta_t` from `init` on the finite region of `init`.
pub fn evolve_forward(
    init: &SpinConfig,
    clocks: &ClockStream,
    t: f64,
    policy: BoundaryPolicy,
) -> Result<SpinConfig> {
    check_time(t)?;
    let mut engine = ForwardEngine::new(init, clocks, policy);
    engine.advance_to(t);
    Ok(engine.config())
}

/// As [`evolve_forward`], also returning the time-ordered flip log.
pub fn evolve_trajectory(
    init: &SpinConfig,
    clocks: &ClockStream,
    t: f64,
    policy: BoundaryPolicy,
) -> Result<(SpinConfig, Vec<FlipEvent>)> {
    check_time(t)?;
    let mut engine = ForwardEngine::new(init, clocks, policy).with_log();
    engine.advance_to(t);
    Ok((engine.config(), engine.take_log()))
}

/// Applies a flip log to `init`.
pub fn replay(init: &SpinConfig, events: &[FlipEvent]) -> Result<SpinConfig> {
    let mut c = init.clone();
    for e in events {
        if c.at(e.site)? != e.old {
            return Err(Error::InvalidParameter(format!(
                "flip at ({}, {}) time {} does not match the replayed state",
                e.site.x, e.site.y, e.time
            )));
        }
        c.set(e.site, e.new)?;
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QuiescenceOutcome {
    /// Time of the last flip (0 if the initial configuration was already quiescent).
    Quiescent(f64),
    Timeout,
}

#[derive(Clone, Debug)]
pub struct QuiescenceReport {
    pub config: SpinConfig,
    pub outcome: QuiescenceOutcome,
    pub flip_counts: Vec<u32>,
    pub events: Vec<FlipEvent>,
}

/// Runs until no site would change, or until `t_max`.
pub fn run_to_quiescence(
    init: &SpinConfig,
    clocks: &ClockStream,
    policy: BoundaryPolicy,
    t_max: f64,
) -> Result<QuiescenceReport> {
    if !(t_max > 0.0) {
        return Err(Error::InvalidParameter(format!("t_max must be positive, got {t_max}")));
    }
    let mut engine = ForwardEngine::new(init, clocks, policy).with_log();
    engine.advance_to(t_max);
    let outcome = if engine.is_quiescent() {
        QuiescenceOutcome::Quiescent(engine.last_flip)
    } else {
        QuiescenceOutcome::Timeout
    };
    Ok(QuiescenceReport {
        config: engine.config(),
        outcome,
        flip_counts: engine.flip_counts().to_vec(),
        events: engine.take_log(),
    })
}

/// Rule applied when a clock rings during a phase of a phased evolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateRule {
    Majority,
    /// The ringing site is set to 1 regardless of its neighbours.
    SetOpen,
}

/// All rings of the sites of `region` in `(after, until]` (or `[0, until]`
/// when `after` is `None`), in global processing order.
pub(crate) fn ring_events(
    clocks: &ClockStream,
    region: &Rect,
    after: Option<f64>,
    until: f64,
) -> Vec<(f64, usize)> {
    let mut events: Vec<(f64, usize)> = Vec::new();
    for (i, s) in region.sites().enumerate() {
        for r in clocks.ring_iter(s).take_while(|&r| r <= until) {
            if after.is_none_or(|a| r > a) {
                events.push((r, i));
            }
        }
    }
    events.sort_by(|a, b| event_cmp((a.0, region.site_at(a.1)), (b.0, region.site_at(b.1))));
    events
}

/// Straightforward evolution that visits every ring, including no-ops.
/// Independent of the unstable-set engine; used for phased couplings and as
/// a cross-check.
pub fn evolve_all_rings(
    init: &SpinConfig,
    clocks: &ClockStream,
    policy: BoundaryPolicy,
    phases: &[(f64, UpdateRule)],
) -> Result<SpinConfig> {
    let lattice = Lattice::new(*init.region(), policy);
    let mut state = init.to_bools();
    let mut start = None;
    for &(until, rule) in phases {
        check_time(until)?;
        for (_, i) in ring_events(clocks, init.region(), start, until) {
            state[i] = match rule {
                UpdateRule::Majority => lattice.target(&state, i),
                UpdateRule::SetOpen => true,
            };
        }
        start = Some(until);
    }
    SpinConfig::from_bools(*init.region(), &state)
}

/// Trajectory export, `time,site_x,site_y,old,new`.
pub fn trajectory_csv(events: &[FlipEvent]) -> String {
    let mut out = String::from("time,site_x,site_y,old,new\n");
    for e in events {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            crate::fmt17(e.time),
            e.site.x,
            e.site.y,
            e.old as u8,
            e.new as u8
        ));
    }
    out
}

/// Initial opinions defined on all of Z^2: `eta_0(x) = 1{U_x <= p}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitField {
    key: u64,
    p: f64,
}

impl InitField {
    pub fn new(seed: &SeedSpec, p: f64) -> Result<Self> {
        check_probability("p", p)?;
        Ok(InitField { key: seed.key(), p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    #[inline]
    pub fn opinion(&self, s: Site) -> bool {
        uniform_at(self.key, s) <= self.p
    }

    /// Same values as `random_init(p, uniform_field(seed, region))`.
    pub fn config(&self, region: &Rect) -> SpinConfig {
        SpinConfig::from_fn(*region, |s| self.opinion(s))
    }
}

/// Where the lazy evaluator runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    /// The whole lattice, with the initial field defined everywhere.
    Plane,
    /// A finite region read through a boundary policy.
    Bounded { region: Rect, policy: BoundaryPolicy },
}

const DEFAULT_LAZY_BUDGET: usize = 50_000_000;

/// Backward evaluation of `eta_t(x)` through the graphical construction.
///
/// The opinion of `x` after its `k`-th ring is the rule applied to its own
/// opinion after ring `k - 1` and to each neighbour's opinion just before
/// that ring. Values are memoized per `(site, k)`, so many queries against
/// the same randomness share work.
pub struct LazyEvaluator<'a> {
    clocks: &'a ClockStream,
    init: InitField,
    domain: Domain,
    horizon: f64,
    rings: HashMap<Site, Vec<f64>>,
    memo: HashMap<(Site, u32), bool>,
    reads: HashSet<Site>,
    budget: usize,
}

impl<'a> LazyEvaluator<'a> {
    pub fn new(clocks: &'a ClockStream, init: InitField, domain: Domain, horizon: f64) -> Self {
        LazyEvaluator {
            clocks,
            init,
            domain,
            horizon,
            rings: HashMap::new(),
            memo: HashMap::new(),
            reads: HashSet::new(),
            budget: DEFAULT_LAZY_BUDGET,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    fn rings_of(&mut self, s: Site) -> &[f64] {
        let (clocks, horizon) = (self.clocks, self.horizon);
        self.rings.entry(s).or_insert_with(|| clocks.rings(s, horizon))
    }

    fn neighbor_sources(&self, s: Site) -> Vec<NeighborSource> {
        match self.domain {
            Domain::Plane => s.lattice_neighbors().iter().map(|&n| NeighborSource::Site(n)).collect(),
            Domain::Bounded { region, policy } => neighbors_unchecked(s, &region, policy),
        }
    }

    /// Number of rings of `n` processed before the ring of `s` at time `r`.
    fn rings_before(&mut self, n: Site, r: f64, s: Site) -> u32 {
        self.rings_of(n).partition_point(|&x| event_cmp((x, n), (r, s)) == Ordering::Less) as u32
    }

    pub fn eval(&mut self, s: Site, t: f64) -> Result<bool> {
        check_time(t)?;
        if t > self.horizon {
            return Err(Error::InvalidParameter(format!(
                "query time {t} exceeds evaluator horizon {}",
                self.horizon
            )));
        }
        if let Domain::Bounded { region, .. } = self.domain {
            if !region.contains(s) {
                return Err(Error::SiteOutsideRegion { site: s, region });
            }
        }
        let k = self.rings_of(s).partition_point(|&x| x <= t) as u32;
        self.value(s, k)
    }

    fn value(&mut self, root: Site, root_k: u32) -> Result<bool> {
        let mut stack = vec![(root, root_k)];
        let mut deps: Vec<(Site, u32)> = Vec::with_capacity(5);
        let mut consts: Vec<bool> = Vec::with_capacity(4);
        while let Some(&(s, k)) = stack.last() {
            if self.memo.contains_key(&(s, k)) {
                stack.pop();
                continue;
            }
            if k == 0 {
                self.reads.insert(s);
                let v = self.init.opinion(s);
                self.memo.insert((s, 0), v);
                stack.pop();
                continue;
            }
            let r = self.rings_of(s)[k as usize - 1];
            deps.clear();
            consts.clear();
            deps.push((s, k - 1));
            for n in self.neighbor_sources(s) {
                match n {
                    NeighborSource::Site(t) => {
                        let j = self.rings_before(t, r, s);
                        deps.push((t, j));
                    }
                    NeighborSource::Constant(c) => consts.push(c),
                }
            }
            let missing: Vec<(Site, u32)> =
                deps.iter().copied().filter(|d| !self.memo.contains_key(d)).collect();
            if !missing.is_empty() {
                stack.extend(missing);
                continue;
            }
            let own = self.memo[&deps[0]];
            let degree = (deps.len() - 1 + consts.len()) as u32;
            let ones = deps[1..].iter().filter(|d| self.memo[d]).count() as u32
                + consts.iter().filter(|&&c| c).count() as u32;
            self.memo.insert((s, k), majority_rule(own, ones, degree));
            stack.pop();
            if self.memo.len() > self.budget {
                return Err(Error::EvaluationBudget { budget: self.budget });
            }
        }
        Ok(self.memo[&(root, root_k)])
    }

    /// Sites whose initial opinion has been read so far.
    pub fn initial_reads(&self) -> &HashSet<Site> {
        &self.reads
    }
}

/// `eta_t(s)` by backward recursion.
pub fn evaluate_lazy(
    s: Site,
    t: f64,
    clocks: &ClockStream,
    init: InitField,
    domain: Domain,
) -> Result<bool> {
    LazyEvaluator::new(clocks, init, domain, t).eval(s, t)
}

/// The cone of light `C_t(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceSet {
    pub root: Site,
    pub t: f64,
    pub members: BTreeSet<Site>,
}

impl InfluenceSet {
    pub fn contains(&self, s: Site) -> bool {
        self.members.contains(&s)
    }

    /// Largest l-infinity distance from the root.
    pub fn radius(&self) -> u32 {
        self.members
            .iter()
            .map(|m| (m.x - self.root.x).unsigned_abs().max((m.y - self.root.y).unsigned_abs()))
            .max()
            .unwrap_or(0)
    }
}

/// Sites whose initial opinion determines `eta_t(s)` on the plane. Depends
/// only on the clocks: every unfolded ring reads all of its inputs.
pub fn influence_set(s: Site, t: f64, clocks: &ClockStream) -> Result<InfluenceSet> {
    let dummy = InitField { key: 0, p: 0.0 };
    let mut ev = LazyEvaluator::new(clocks, dummy, Domain::Plane, t);
    ev.eval(s, t)?;
    Ok(InfluenceSet { root: s, t, members: ev.reads.into_iter().collect() })
}

/// `3 e^2 t`, the linear growth scale of the cone of light.
pub fn cone_scale(t: f64) -> f64 {
    3.0 * std::f64::consts::E.powi(2) * t
}

/// Union bound on the cone of `x` reaching `x + dB_m` by time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PadBound {
    pub t: f64,
    pub u: f64,
    pub m: u32,
    pub bound: f64,
}

/// `4 * 3^m * e^{-t} * sum_{k >= m} t^k / k!`, capped at 1.
pub fn cone_escape_bound(t: f64, m: u32) -> f64 {
    log_cone_escape_bound(t, m).exp().min(1.0)
}

fn log_cone_escape_bound(t: f64, m: u32) -> f64 {
    let log_tail = if t == 0.0 {
        if m == 0 {
            0.0
        } else {
            return f64::NEG_INFINITY;
        }
    } else {
        // sum_{k>=m} t^k/k! = t^m/m! * sum_j t^j m!/(m+j)!
        let log_lead = m as f64 * t.ln() - (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
        let (mut term, mut sum, mut j) = (1.0f64, 0.0f64, 0u32);
        while term > 1e-18 * sum || j < 4 {
            sum += term;
            j += 1;
            term *= t / (m + j) as f64;
        }
        log_lead + sum.ln()
    };
    4f64.ln() + m as f64 * 3f64.ln() - t + log_tail
}

/// Bound for a given slack `u >= 0`, with `m = ceil(3 e^2 t + u)`.
pub fn pad_bound(t: f64, u: f64) -> PadBound {
    let m = (cone_scale(t) + u).ceil() as u32;
    PadBound { t, u, m, bound: cone_escape_bound(t, m) }
}

/// Smallest integer slack whose bound is at most `eps`.
pub fn pad_radius(t: f64, eps: f64) -> Result<PadBound> {
    check_time(t)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let m0 = cone_scale(t).ceil() as u32;
    let mut u = 0u32;
    loop {
        let m = m0 + u;
        let bound = cone_escape_bound(t, m);
        if bound <= eps {
            return Ok(PadBound { t, u: u as f64, m, bound });
        }
        u += 1;
    }
}

/// Padding used to approximate Z^2 around `window`: total error budget
/// `1e-6` spread over the window boundary.
pub fn plane_padding(t: f64, window: &Rect) -> Result<PadBound> {
    pad_radius(t, 1e-6 / window.boundary_size() as f64)
}
