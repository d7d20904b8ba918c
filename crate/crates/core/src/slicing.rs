//! Slicing domain model: requests, the rate model, and the resource-block pool.
//!
//! The pool tracks which of the `F` resource blocks are free and which active
//! services hold the others. Allocation and release keep the conservation
//! identity `free + held = F` at every slot boundary; [`RbPool::check_invariants`]
//! verifies it.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest pool size representable by [`RbSet`].
pub const MAX_RBS: usize = 64;

/// Set of resource-block indices stored as a bitmask (bit `i` = RB `i`).
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RbSet(pub u64);

impl RbSet {
    pub const EMPTY: RbSet = RbSet(0);

    /// All RBs `0..n`.
    pub fn full(n: usize) -> Self {
        debug_assert!(n <= MAX_RBS);
        if n == MAX_RBS {
            RbSet(u64::MAX)
        } else {
            RbSet((1u64 << n) - 1)
        }
    }

    pub fn single(rb: usize) -> Self {
        RbSet(1u64 << rb)
    }

    pub fn contains(self, rb: usize) -> bool {
        rb < MAX_RBS && self.0 & (1u64 << rb) != 0
    }

    pub fn insert(&mut self, rb: usize) {
        self.0 |= 1u64 << rb;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: RbSet) -> RbSet {
        RbSet(self.0 | other.0)
    }

    pub fn intersection(self, other: RbSet) -> RbSet {
        RbSet(self.0 & other.0)
    }

    pub fn difference(self, other: RbSet) -> RbSet {
        RbSet(self.0 & !other.0)
    }

    pub fn is_disjoint(self, other: RbSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn is_subset(self, other: RbSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Complement within a pool of `n` RBs.
    pub fn complement(self, n: usize) -> RbSet {
        RbSet(!self.0 & RbSet::full(n).0)
    }

    /// Lowest RB index in the set.
    pub fn first(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    /// Indices in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(i)
        })
    }
}

impl FromIterator<usize> for RbSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = RbSet::EMPTY;
        for rb in iter {
            s.insert(rb);
        }
        s
    }
}

impl fmt::Debug for RbSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// `|`-separated RB indices, e.g. `2|5`; empty string for the empty set.
impl fmt::Display for RbSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for rb in self.iter() {
            if !first {
                f.write_str("|")?;
            }
            write!(f, "{rb}")?;
            first = false;
        }
        Ok(())
    }
}

/// One slicing request from a UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub ue_id: u32,
    /// Unique per UE; the arrival slot, since a UE issues at most one request per slot.
    pub req_id: u64,
    /// Priority weight in `1..=5`.
    pub weight: u8,
    /// Minimum rate in bits per second.
    pub min_rate: f64,
    /// Service duration in slots.
    pub lifetime: u32,
    pub deadline_slot: u64,
    pub arrival_slot: u64,
    /// Linear SNR.
    pub snr: f64,
}

impl Request {
    /// Whether the request may be granted at slot `t`.
    pub fn is_grantable_at(&self, t: u64) -> bool {
        self.arrival_slot <= t && t <= self.deadline_slot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntRange {
    pub lo: u32,
    pub hi: u32,
}

impl IntRange {
    pub const fn new(lo: u32, hi: u32) -> Self {
        Self { lo, hi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealRange {
    pub lo: f64,
    pub hi: f64,
}

impl RealRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// Workload and radio parameters of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub ue_count: u32,
    /// Per-UE, per-slot arrival probability.
    pub arrival_prob: f64,
    pub weight: IntRange,
    pub lifetime: IntRange,
    /// Slots a request may wait, counting its arrival slot.
    pub deadline_offset: IntRange,
    pub snr: RealRange,
    /// Minimum-rate demand in bits per second.
    pub min_rate: RealRange,
    /// Number of resource blocks `F`.
    pub rbs: usize,
    pub rate: RateModel,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            ue_count: 30,
            arrival_prob: 0.05,
            weight: IntRange::new(1, 5),
            lifetime: IntRange::new(1, 10),
            deadline_offset: IntRange::new(1, 20),
            snr: RealRange::new(1.5, 3.0),
            min_rate: RealRange::new(0.5e6, 2.0e6),
            rbs: 11,
            rate: RateModel::default(),
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.arrival_prob) {
            return Err(Error::config(format!(
                "arrival probability {} outside [0,1]",
                self.arrival_prob
            )));
        }
        for (name, r) in [
            ("weight", self.weight),
            ("lifetime", self.lifetime),
            ("deadline", self.deadline_offset),
        ] {
            if r.lo > r.hi {
                return Err(Error::config(format!(
                    "empty {name} range {}..{}",
                    r.lo, r.hi
                )));
            }
        }
        if self.weight.lo < 1 || self.weight.hi > 5 {
            return Err(Error::config("weight range must lie within [1,5]"));
        }
        if self.lifetime.lo < 1 {
            return Err(Error::config("lifetime must be at least 1 slot"));
        }
        if self.deadline_offset.lo < 1 {
            return Err(Error::config("deadline offset must be at least 1 slot"));
        }
        for (name, r) in [("snr", self.snr), ("min_rate", self.min_rate)] {
            if !(r.lo.is_finite() && r.hi.is_finite()) || r.lo > r.hi {
                return Err(Error::config(format!(
                    "empty {name} range {}..{}",
                    r.lo, r.hi
                )));
            }
            if r.lo <= 0.0 {
                return Err(Error::config(format!("{name} range must be positive")));
            }
        }
        if self.rbs == 0 || self.rbs > MAX_RBS {
            return Err(Error::config(format!("rbs must be in 1..={MAX_RBS}")));
        }
        self.rate.validate()
    }

    /// Rate one RB delivers at `snr`: the achievable rate split evenly over `F` RBs.
    pub fn per_rb_rate(&self, snr: f64) -> Result<f64> {
        Ok(achievable_rate(snr, &self.rate)? / self.rbs as f64)
    }

    /// RBs a request needs in this scenario.
    pub fn rbs_for(&self, request: &Request) -> Result<usize> {
        rbs_needed(request, self.per_rb_rate(request.snr)?)
    }

    /// Worst-case RB demand over the configured SNR and rate ranges.
    pub fn max_rbs(&self) -> Result<usize> {
        // Rate is non-decreasing in SNR, so the lowest SNR and highest demand bound it.
        let per_rb = self.per_rb_rate(self.snr.lo)?;
        Ok(ceil_units(self.min_rate.hi, per_rb))
    }
}

/// Draws this slot's arrivals: each UE independently issues one request with
/// probability `arrival_prob`, with fields uniform over the configured ranges.
pub fn generate_arrivals<R: Rng + ?Sized>(
    rng: &mut R,
    t: u64,
    params: &ScenarioParams,
) -> Result<Vec<Request>> {
    params.validate()?;
    let mut out = Vec::new();
    for ue_id in 0..params.ue_count {
        if !rng.gen_bool(params.arrival_prob) {
            continue;
        }
        let weight = rng.gen_range(params.weight.lo..=params.weight.hi) as u8;
        let lifetime = rng.gen_range(params.lifetime.lo..=params.lifetime.hi);
        let offset = rng.gen_range(params.deadline_offset.lo..=params.deadline_offset.hi);
        let snr = params.snr.sample(rng);
        let min_rate = params.min_rate.sample(rng);
        out.push(Request {
            ue_id,
            req_id: t,
            weight,
            min_rate,
            lifetime,
            deadline_slot: t + u64::from(offset) - 1,
            arrival_slot: t,
            snr,
        });
    }
    Ok(out)
}

/// Bit-error-rate curve as a function of linear SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BerCurve {
    /// Uncoded QPSK: `Q(sqrt(2 snr))`, clamped to `[0, 0.5]`.
    QpskGaussianTail,
    /// Piecewise-linear interpolation through `(snr, ber)` points, held constant past the ends.
    Table(Vec<(f64, f64)>),
}

impl BerCurve {
    pub fn table(points: Vec<(f64, f64)>) -> Result<Self> {
        let curve = BerCurve::Table(points);
        curve.validate()?;
        Ok(curve)
    }

    fn validate(&self) -> Result<()> {
        let BerCurve::Table(points) = self else {
            return Ok(());
        };
        if points.is_empty() {
            return Err(Error::config("BER table is empty"));
        }
        for (i, &(snr, ber)) in points.iter().enumerate() {
            if !(0.0..=0.5).contains(&ber) || !snr.is_finite() {
                return Err(Error::config(format!("BER table point {i} out of range")));
            }
            if i > 0 {
                let (prev_snr, prev_ber) = points[i - 1];
                if snr <= prev_snr {
                    return Err(Error::config("BER table SNRs must be strictly increasing"));
                }
                if ber > prev_ber {
                    return Err(Error::config("BER table must be non-increasing in SNR"));
                }
            }
        }
        Ok(())
    }

    pub fn ber(&self, snr: f64) -> f64 {
        match self {
            BerCurve::QpskGaussianTail => gaussian_tail((2.0 * snr).sqrt()).clamp(0.0, 0.5),
            BerCurve::Table(points) => {
                let first = points[0];
                let last = points[points.len() - 1];
                if snr <= first.0 {
                    return first.1;
                }
                if snr >= last.0 {
                    return last.1;
                }
                let i = points.partition_point(|p| p.0 <= snr);
                let (x0, y0) = points[i - 1];
                let (x1, y1) = points[i];
                y0 + (y1 - y0) * (snr - x0) / (x1 - x0)
            }
        }
    }
}

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn gaussian_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Downlink rate model `D = c K (1 - BER(snr))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    /// Bits per second for one carrier at zero BER.
    pub c: f64,
    pub carriers: u32,
    pub ber_curve: BerCurve,
}

impl Default for RateModel {
    fn default() -> Self {
        Self {
            c: 12.59e6,
            carriers: 1,
            ber_curve: BerCurve::QpskGaussianTail,
        }
    }
}

impl RateModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::config("rate constant must be positive"));
        }
        if self.carriers == 0 {
            return Err(Error::config("carrier count must be at least 1"));
        }
        self.ber_curve.validate()
    }
}

pub fn achievable_rate(snr: f64, model: &RateModel) -> Result<f64> {
    if snr.is_nan() || snr <= 0.0 {
        return Err(Error::Domain(format!("SNR must be positive, got {snr}")));
    }
    Ok(model.c * f64::from(model.carriers) * (1.0 - model.ber_curve.ber(snr)))
}

/// Smallest RB count whose combined rate meets the request's minimum rate.
pub fn rbs_needed(request: &Request, per_rb_rate: f64) -> Result<usize> {
    if per_rb_rate.is_nan() || per_rb_rate <= 0.0 {
        return Err(Error::Domain(format!(
            "per-RB rate must be positive, got {per_rb_rate}"
        )));
    }
    Ok(ceil_units(request.min_rate, per_rb_rate))
}

fn ceil_units(demand: f64, unit: f64) -> usize {
    let mut n = (demand / unit).ceil().max(1.0) as usize;
    // Correct for rounding in the division so that n is exactly minimal.
    while (n as f64) * unit < demand {
        n += 1;
    }
    while n > 1 && ((n - 1) as f64) * unit >= demand {
        n -= 1;
    }
    n
}

/// A granted request holding RBs from `grant_slot` through `end_slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveService {
    pub request: Request,
    pub rb_set: RbSet,
    pub grant_slot: u64,
    pub end_slot: u64,
}

/// Availability of the `F` resource blocks plus the services holding them.
#[derive(Debug, Clone, PartialEq)]
pub struct RbPool {
    total: usize,
    available: RbSet,
    services: Vec<ActiveService>,
}

impl RbPool {
    pub fn new(total: usize) -> Result<Self> {
        if total == 0 || total > MAX_RBS {
            return Err(Error::config(format!("pool size must be in 1..={MAX_RBS}")));
        }
        Ok(Self {
            total,
            available: RbSet::full(total),
            services: Vec::new(),
        })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn available(&self) -> RbSet {
        self.available
    }

    pub fn occupied(&self) -> RbSet {
        self.available.complement(self.total)
    }

    pub fn free_count(&self) -> usize {
        self.available.len()
    }

    pub fn services(&self) -> &[ActiveService] {
        &self.services
    }

    /// Starts a service for `request` on `rb_set` at slot `t`.
    pub fn allocate(&mut self, request: Request, rb_set: RbSet, t: u64) -> Result<()> {
        if rb_set.is_empty() {
            return Err(Error::internal(t, "allocation of an empty RB set"));
        }
        if !rb_set.is_subset(self.available) {
            return Err(Error::internal(
                t,
                format!("allocation {rb_set:?} overlaps busy RBs"),
            ));
        }
        if request.lifetime == 0 {
            return Err(Error::internal(t, "request with zero lifetime"));
        }
        self.available = self.available.difference(rb_set);
        let end_slot = t + u64::from(request.lifetime) - 1;
        self.services.push(ActiveService {
            request,
            rb_set,
            grant_slot: t,
            end_slot,
        });
        Ok(())
    }

    /// Cuts a service short so that it ends at slot `t` (released by the next step).
    pub fn end_service_at(&mut self, ue_id: u32, req_id: u64, t: u64) -> Result<()> {
        let svc = self
            .services
            .iter_mut()
            .find(|s| s.request.ue_id == ue_id && s.request.req_id == req_id)
            .ok_or_else(|| Error::internal(t, format!("no service for ue {ue_id} req {req_id}")))?;
        svc.end_slot = svc.end_slot.min(t);
        Ok(())
    }

    /// Advances to slot `t`: every service with `end_slot < t` is released.
    /// Returns the released RBs.
    pub fn step(&mut self, t: u64) -> Result<RbSet> {
        self.check_invariants().map_err(|m| Error::internal(t, m))?;
        let mut released = RbSet::EMPTY;
        self.services.retain(|s| {
            if s.end_slot < t {
                released = released.union(s.rb_set);
                false
            } else {
                true
            }
        });
        self.available = self.available.union(released);
        Ok(released)
    }

    /// Verifies conservation and disjointness.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut held = RbSet::EMPTY;
        let mut held_count = 0usize;
        for s in &self.services {
            if s.rb_set.is_empty() {
                return Err("service with empty RB set".into());
            }
            if s.end_slot < s.grant_slot {
                return Err("service ends before it starts".into());
            }
            if !held.is_disjoint(s.rb_set) {
                return Err(format!(
                    "RB overlap between services at {:?}",
                    held.intersection(s.rb_set)
                ));
            }
            held = held.union(s.rb_set);
            held_count += s.rb_set.len();
        }
        if !self.available.is_subset(RbSet::full(self.total)) {
            return Err("availability bits beyond pool size".into());
        }
        if self.available.len() + held_count != self.total {
            return Err(format!(
                "conservation broken: {} free + {} held != {}",
                self.available.len(),
                held_count,
                self.total
            ));
        }
        if !held.is_disjoint(self.available) {
            return Err("an RB is both free and held".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn req(min_rate: f64) -> Request {
        Request {
            ue_id: 0,
            req_id: 0,
            weight: 3,
            min_rate,
            lifetime: 2,
            deadline_slot: 5,
            arrival_slot: 0,
            snr: 2.0,
        }
    }

    fn zero_ber() -> RateModel {
        RateModel {
            ber_curve: BerCurve::table(vec![(1.0, 0.0)]).unwrap(),
            ..RateModel::default()
        }
    }

    #[test]
    fn rate_at_zero_and_half_ber() {
        assert_eq!(achievable_rate(2.0, &zero_ber()).unwrap(), 12.59e6);
        let half = RateModel {
            ber_curve: BerCurve::table(vec![(1.0, 0.5)]).unwrap(),
            ..RateModel::default()
        };
        assert!((achievable_rate(2.0, &half).unwrap() - 6.295e6).abs() < 1e-6);
    }

    #[test]
    fn rate_rejects_nonpositive_snr() {
        assert!(matches!(
            achievable_rate(0.0, &RateModel::default()),
            Err(Error::Domain(_))
        ));
        assert!(achievable_rate(-1.0, &RateModel::default()).is_err());
    }

    #[test]
    fn default_ber_matches_integrated_tail() {
        // Independent oracle: composite Simpson integration of the normal density on [x, x+12].
        fn tail_by_quadrature(x: f64) -> f64 {
            let n = 200_000;
            let (a, b) = (x, x + 12.0);
            let h = (b - a) / n as f64;
            let pdf = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let mut s = pdf(a) + pdf(b);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * pdf(a + i as f64 * h);
            }
            s * h / 3.0
        }
        let q = tail_by_quadrature(3f64.sqrt());
        let expected = 12.59e6 * (1.0 - q);
        let got = achievable_rate(1.5, &RateModel::default()).unwrap();
        assert!((got - expected).abs() < 1e-3, "{got} vs {expected}");
    }

    #[test]
    fn ber_table_interpolates_and_rejects_increasing() {
        let c = BerCurve::table(vec![(1.0, 0.2), (3.0, 0.0)]).unwrap();
        assert!((c.ber(2.0) - 0.1).abs() < 1e-12);
        assert_eq!(c.ber(0.5), 0.2);
        assert_eq!(c.ber(10.0), 0.0);
        assert!(BerCurve::table(vec![(1.0, 0.1), (2.0, 0.2)]).is_err());
        assert!(BerCurve::table(vec![(1.0, 0.6)]).is_err());
    }

    #[test]
    fn rbs_needed_ceiling() {
        assert_eq!(rbs_needed(&req(1.0e6), 1.0e6).unwrap(), 1);
        assert_eq!(rbs_needed(&req(2.5e6), 1.0e6).unwrap(), 3);
        let per = 1.0e6 / 3.0;
        assert_eq!(rbs_needed(&req(1.0e6), per).unwrap(), 3);
        assert!(rbs_needed(&req(1.0), 0.0).is_err());
    }

    #[test]
    fn default_demand_needs_one_or_two_rbs() {
        // Brute-force sweep of the default SNR and demand ranges.
        let p = ScenarioParams::default();
        let mut seen = [false; 3];
        for i in 0..=300 {
            let snr = p.snr.lo + (p.snr.hi - p.snr.lo) * i as f64 / 300.0;
            let per = p.per_rb_rate(snr).unwrap();
            for j in 0..=300 {
                let d = p.min_rate.lo + (p.min_rate.hi - p.min_rate.lo) * j as f64 / 300.0;
                let n = rbs_needed(&req(d), per).unwrap();
                assert!((1..=2).contains(&n), "snr {snr} demand {d} -> {n}");
                assert!(n as f64 * per >= d);
                seen[n] = true;
            }
        }
        assert!(seen[1] && seen[2]);
        assert_eq!(p.max_rbs().unwrap(), 2);
    }

    #[test]
    fn arrivals_mean_and_weight_mean() {
        let p = ScenarioParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut count = 0usize;
        let mut weight_sum = 0u64;
        let mut slots = 0u64;
        while count < 100_000 {
            let a = generate_arrivals(&mut rng, slots, &p).unwrap();
            for r in &a {
                assert!((1..=5).contains(&r.weight));
                assert!((1..=10).contains(&r.lifetime));
                assert!(r.deadline_slot >= r.arrival_slot && r.deadline_slot < r.arrival_slot + 20);
                weight_sum += u64::from(r.weight);
            }
            count += a.len();
            slots += 1;
        }
        let per_slot = count as f64 / slots as f64;
        assert!((per_slot - 1.5).abs() < 0.03, "{per_slot}");
        let mean_w = weight_sum as f64 / count as f64;
        assert!((mean_w - 3.0).abs() < 0.05, "{mean_w}");
    }

    #[test]
    fn arrivals_zero_probability_and_bad_params() {
        let mut p = ScenarioParams {
            arrival_prob: 0.0,
            ..ScenarioParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..100 {
            assert!(generate_arrivals(&mut rng, t, &p).unwrap().is_empty());
        }
        p.arrival_prob = 1.5;
        assert!(matches!(
            generate_arrivals(&mut rng, 0, &p),
            Err(Error::Config { .. })
        ));
        p.arrival_prob = 0.5;
        p.lifetime = IntRange::new(5, 2);
        assert!(generate_arrivals(&mut rng, 0, &p).is_err());
    }

    #[test]
    fn arrivals_replay_identically() {
        let p = ScenarioParams::default();
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        for t in 0..500 {
            assert_eq!(
                generate_arrivals(&mut a, t, &p).unwrap(),
                generate_arrivals(&mut b, t, &p).unwrap()
            );
        }
    }

    #[test]
    fn step_with_no_services_is_identity() {
        let mut pool = RbPool::new(5).unwrap();
        let before = pool.clone();
        assert_eq!(pool.step(3).unwrap(), RbSet::EMPTY);
        assert_eq!(pool, before);
    }

    #[test]
    fn step_releases_ended_service() {
        let mut pool = RbPool::new(11).unwrap();
        let mut r = req(1.0);
        r.lifetime = 1;
        let set: RbSet = [3, 7].into_iter().collect();
        pool.allocate(r, set, 4).unwrap();
        assert!(!pool.available().contains(3));
        assert_eq!(pool.step(4).unwrap(), RbSet::EMPTY);
        assert_eq!(pool.step(5).unwrap(), set);
        assert!(pool.available().contains(3) && pool.available().contains(7));
        assert_eq!(pool.free_count(), 11);
    }

    #[test]
    fn allocate_rejects_busy_rbs() {
        let mut pool = RbPool::new(4).unwrap();
        pool.allocate(req(1.0), RbSet::single(1), 0).unwrap();
        assert!(pool.allocate(req(1.0), RbSet::single(1), 0).is_err());
        assert!(pool.allocate(req(1.0), RbSet::EMPTY, 0).is_err());
    }

    #[test]
    fn random_trace_conserves_rbs() {
        // Replay oracle: recompute held RBs from scratch every slot.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pool = RbPool::new(11).unwrap();
        for t in 0..10_000u64 {
            pool.step(t).unwrap();
            for _ in 0..rng.gen_range(0..4) {
                let free: Vec<usize> = pool.available().iter().collect();
                if free.is_empty() {
                    break;
                }
                let n = rng.gen_range(1..=free.len().min(3));
                let set: RbSet = free[..n].iter().copied().collect();
                let mut r = req(1.0);
                r.ue_id = rng.gen_range(0..30);
                r.req_id = t;
                r.lifetime = rng.gen_range(1..=10);
                pool.allocate(r, set, t).unwrap();
            }
            let held: usize = pool.services().iter().map(|s| s.rb_set.len()).sum();
            assert_eq!(pool.free_count() + held, 11);
            pool.check_invariants().unwrap();
        }
    }

    #[test]
    fn rbset_display_and_complement() {
        let s: RbSet = [2, 5].into_iter().collect();
        assert_eq!(s.to_string(), "2|5");
        assert_eq!(RbSet::EMPTY.to_string(), "");
        let occ = RbSet(0b10110);
        assert_eq!(occ.complement(5), RbSet(0b01001));
    }
}
