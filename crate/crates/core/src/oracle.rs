//! Exact law of the configuration at time `t` on very small graphs.
//!
//! All clocks together ring as a Poisson process of rate `n t` on `[0, t]`
//! whose marks are uniform over the `n` sites, independent of the count.
//! So the law after `k` rings is `mu_0 M^k` with `M = (1/n) sum_s T_s`,
//! where `T_s` applies the update rule at `s`, and the law at time `t` is
//! the Poisson(`n t`) mixture over `k`. Truncating at `k <= K` loses
//! exactly `P[Poisson(n t) > K]` of the mass.

use crate::dynamics::step_site;
use crate::error::{check_probability, Error, Result};
use crate::grid::{BoundaryPolicy, Rect, Site, SpinConfig};
use crate::percolation::{connects, has_h_crossing, has_v_crossing, largest_cluster_size, Connectivity};

/// Largest graph the oracle accepts (configurations are enumerated).
pub const MAX_SITES: usize = 16;
/// Truncation target for the Poisson tail when `K` is not given.
pub const DEFAULT_TAIL: f64 = 1e-6;

/// `P[Poisson(mean) = k]` for `k = 0..=k_max`.
pub fn poisson_weights(mean: f64, k_max: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(k_max + 1);
    let mut term = (-mean).exp();
    for k in 0..=k_max {
        w.push(term);
        term *= mean / (k + 1) as f64;
    }
    w
}

/// `P[Poisson(mean) > k]`, summed forward from `k + 1`.
pub fn poisson_tail(mean: f64, k: usize) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    // log of the first omitted term, built from logs to avoid overflow
    let j = k + 1;
    let log_first = -mean + j as f64 * mean.ln() - (1..=j).map(|i| (i as f64).ln()).sum::<f64>();
    let mut term = log_first.exp();
    let mut sum = 0.0;
    let mut i = j;
    while term > 0.0 && (term > 1e-18 * sum || (i as f64) < mean) {
        sum += term;
        i += 1;
        term *= mean / i as f64;
    }
    sum
}

/// Smallest `K` with `P[Poisson(mean) > K] < tail`.
pub fn truncation_for(mean: f64, tail: f64) -> usize {
    let mut k = 0;
    while poisson_tail(mean, k) >= tail {
        k += 1;
    }
    k
}

/// Truncated law of the configuration at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactLaw {
    pub region: Rect,
    pub policy: BoundaryPolicy,
    pub t: f64,
    pub p: f64,
    pub k: usize,
    /// `P[Poisson(n t) > K]`: the mass missing from `masses`.
    pub tail: f64,
    /// Mass per configuration; bit `i` is the site with row-major index `i`.
    pub masses: Vec<f64>,
}

impl ExactLaw {
    pub fn sites(&self) -> usize {
        self.region.area()
    }

    pub fn config(&self, bits: usize) -> SpinConfig {
        config_from_bits(&self.region, bits)
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Export as `config_bits,mass`, bits written in row-major site order.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# region={}\n# policy={}\n# t={}\n# p={}\n# K={}\n# tail={}\nconfig_bits,mass\n",
            self.region,
            self.policy,
            crate::fmt17(self.t),
            crate::fmt17(self.p),
            self.k,
            crate::fmt17(self.tail)
        );
        for (bits, m) in self.masses.iter().enumerate() {
            let s: String = (0..self.sites()).map(|i| if (bits >> i) & 1 == 1 { '1' } else { '0' }).collect();
            out.push_str(&format!("{s},{}\n", crate::fmt17(*m)));
        }
        out
    }
}

pub(crate) fn config_from_bits(region: &Rect, bits: usize) -> SpinConfig {
    SpinConfig::from_fn(*region, |s| (bits >> region.index_of(s).unwrap()) & 1 == 1)
}

fn bits_of(config: &SpinConfig) -> usize {
    (0..config.region().area()).filter(|&i| config.get_index(i)).map(|i| 1 << i).sum()
}

/// `next[c * n + s]`: configuration after site `s` rings in configuration `c`.
pub(crate) fn transition_table(region: &Rect, policy: BoundaryPolicy) -> Result<Vec<u32>> {
    let n = region.area();
    let mut next = Vec::with_capacity(n << n);
    for bits in 0..1usize << n {
        let c = config_from_bits(region, bits);
        for i in 0..n {
            let v = step_site(&c, region.site_at(i), policy)?;
            next.push(((bits & !(1 << i)) | ((v as usize) << i)) as u32);
        }
    }
    Ok(next)
}

/// Product Bernoulli(`p`) law.
fn initial_law(n: usize, p: f64) -> Vec<f64> {
    (0..1usize << n)
        .map(|bits| {
            let ones = bits.count_ones() as i32;
            p.powi(ones) * (1.0 - p).powi(n as i32 - ones)
        })
        .collect()
}

/// Law of the configuration at time `t` from Bernoulli(`p`), truncated
/// after `k` rings (default: smallest `K` with tail below 1e-6).
pub fn exact_law(region: &Rect, policy: BoundaryPolicy, t: f64, p: f64, k: Option<usize>) -> Result<ExactLaw> {
    check_probability("p", p)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("time must be finite and non-negative, got {t}")));
    }
    let n = region.area();
    if n > MAX_SITES {
        return Err(Error::OracleBudget(format!("{n} sites exceed the oracle limit of {MAX_SITES}")));
    }
    let mean = n as f64 * t;
    let k = k.unwrap_or_else(|| truncation_for(mean, DEFAULT_TAIL));
    if (k as u64).saturating_mul((n as u64) << n) > 1u64 << 36 {
        return Err(Error::OracleBudget(format!("K={k} on {n} sites is too much work")));
    }
    let next = transition_table(region, policy)?;
    let weights = poisson_weights(mean, k);
    let mut current = initial_law(n, p);
    let mut masses: Vec<f64> = current.iter().map(|m| m * weights[0]).collect();
    for &w in &weights[1..] {
        let mut stepped = vec![0.0; current.len()];
        for (bits, &m) in current.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let share = m / n as f64;
            for &to in &next[bits * n..(bits + 1) * n] {
                stepped[to as usize] += share;
            }
        }
        for (acc, m) in masses.iter_mut().zip(&stepped) {
            *acc += w * m;
        }
        current = stepped;
    }
    Ok(ExactLaw { region: *region, policy, t, p, k, tail: poisson_tail(mean, k), masses })
}

/// Bounds on the probability of an event: the enumerated mass, and that
/// plus the truncated tail.
pub fn oracle_event_prob(law: &ExactLaw, event: impl Fn(&SpinConfig) -> bool) -> (f64, f64) {
    let lower: f64 = law
        .masses
        .iter()
        .enumerate()
        .filter(|(bits, _)| event(&law.config(*bits)))
        .map(|(_, m)| m)
        .sum();
    (lower, (lower + law.tail).min(1.0))
}

/// Fails unless opening any single site never turns the event off.
pub fn check_increasing(region: &Rect, name: &str, event: &dyn Fn(&SpinConfig) -> bool) -> Result<()> {
    let n = region.area();
    let values: Vec<bool> = (0..1usize << n).map(|b| event(&config_from_bits(region, b))).collect();
    for bits in 0..1usize << n {
        for i in 0..n {
            if bits & (1 << i) == 0 && values[bits] && !values[bits | (1 << i)] {
                return Err(Error::NotIncreasing(format!(
                    "{name}: holds for {bits:#b} but not after opening site {i}"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FkgReport {
    pub p_a: f64,
    pub p_b: f64,
    pub p_ab: f64,
    /// `P[A and B] - P[A] P[B]` from the enumerated masses.
    pub margin: f64,
    /// Smallest margin compatible with the truncation.
    pub margin_lower_bound: f64,
    pub tail: f64,
    pub pass: bool,
}

/// Positive association check for two increasing events.
pub fn oracle_fkg_check(
    law: &ExactLaw,
    a: &dyn Fn(&SpinConfig) -> bool,
    b: &dyn Fn(&SpinConfig) -> bool,
) -> Result<FkgReport> {
    check_increasing(&law.region, "A", a)?;
    check_increasing(&law.region, "B", b)?;
    let (p_a, _) = oracle_event_prob(law, a);
    let (p_b, _) = oracle_event_prob(law, b);
    let (p_ab, _) = oracle_event_prob(law, |c| a(c) && b(c));
    let margin = p_ab - p_a * p_b;
    let margin_lower_bound = p_ab - ((p_a + law.tail) * (p_b + law.tail)).min(1.0);
    Ok(FkgReport {
        p_a,
        p_b,
        p_ab,
        margin,
        margin_lower_bound,
        tail: law.tail,
        pass: margin_lower_bound >= -3.0 * law.tail,
    })
}

/// Named increasing event on a small box.
pub struct NamedEvent {
    pub name: &'static str,
    pub holds: Box<dyn Fn(&SpinConfig) -> bool + Send + Sync>,
}

/// A fixed list of increasing events on the box `region`.
pub fn standard_events(region: &Rect) -> Vec<NamedEvent> {
    let r = *region;
    let (x0, x1, y0, y1) = (r.x0, r.x1, r.y0, r.y1);
    let (cx, cy) = ((x0 + x1) / 2, (y0 + y1) / 2);
    let area = r.area();
    let open = |c: &SpinConfig, s: Site| c.get(s) == Some(true);
    let ev = |name: &'static str, f: Box<dyn Fn(&SpinConfig) -> bool + Send + Sync>| NamedEvent { name, holds: f };
    vec![
        ev("centre_open", Box::new(move |c| open(c, Site::new(cx, cy)))),
        ev("h_crossing", Box::new(move |c| has_h_crossing(c, &r).unwrap())),
        ev("v_crossing", Box::new(move |c| has_v_crossing(c, &r).unwrap())),
        ev("left_column_has_open", Box::new(move |c| r.left_column().iter().any(|&s| open(c, s)))),
        ev("right_column_has_open", Box::new(move |c| r.right_column().iter().any(|&s| open(c, s)))),
        ev("majority_open", Box::new(move |c| 2 * c.count_ones() > area)),
        ev("at_least_three_open", Box::new(move |c| c.count_ones() >= 3)),
        ev("corner_low_open", Box::new(move |c| open(c, Site::new(x0, y0)))),
        ev("corner_high_open", Box::new(move |c| open(c, Site::new(x1, y1)))),
        ev("top_row_all_open", Box::new(move |c| r.top_row().iter().all(|&s| open(c, s)))),
        ev("bottom_row_two_open", Box::new(move |c| r.bottom_row().iter().filter(|&&s| open(c, s)).count() >= 2)),
        ev(
            "opposite_corners_connected",
            Box::new(move |c| {
                connects(c, &r, &[Site::new(x0, y0)], &[Site::new(x1, y1)], Connectivity::NearestNeighbor)
                    .unwrap()
                    .connected
            }),
        ),
        ev(
            "plus_mostly_open",
            Box::new(move |c| {
                let centre = Site::new(cx, cy);
                let plus = std::iter::once(centre).chain(centre.lattice_neighbors());
                plus.filter(|&s| open(c, s)).count() >= 3
            }),
        ),
        ev("cluster_of_four", Box::new(move |c| largest_cluster_size(c) >= 4)),
        ev(
            "middle_ends_open",
            Box::new(move |c| open(c, Site::new(x0, cy)) && open(c, Site::new(x1, cy))),
        ),
        ev(
            "some_corner_open",
            Box::new(move |c| [(x0, y0), (x0, y1), (x1, y0), (x1, y1)].iter().any(|&(x, y)| open(c, Site::new(x, y)))),
        ),
    ]
}

/// Twenty pairs of indices into [`standard_events`].
pub const FKG_PAIRS: [(usize, usize); 20] = [
    (0, 0),
    (1, 2),
    (3, 4),
    (0, 1),
    (1, 5),
    (7, 8),
    (9, 10),
    (11, 1),
    (12, 13),
    (14, 15),
    (5, 6),
    (2, 9),
    (11, 13),
    (0, 12),
    (3, 8),
    (4, 7),
    (1, 13),
    (6, 15),
    (10, 11),
    (2, 14),
];

/// Outcome of the FKG check on every standard pair.
pub fn fkg_suite(law: &ExactLaw) -> Result<Vec<(String, FkgReport)>> {
    let events = standard_events(&law.region);
    FKG_PAIRS
        .iter()
        .map(|&(i, j)| {
            let report = oracle_fkg_check(law, &*events[i].holds, &*events[j].holds)?;
            Ok((format!("{}&{}", events[i].name, events[j].name), report))
        })
        .collect()
}

/// Probability that `config` is the final state, looked up in the law.
pub fn mass_of(law: &ExactLaw, config: &SpinConfig) -> Option<f64> {
    (config.region() == &law.region).then(|| law.masses[bits_of(config)])
}
