//! Exact simulation of the density dependent jump process.
//!
//! `N` is the population scale: a count `n` at a site corresponds to the
//! proportion `n / N`. Each site carries eight event channels, laid out at
//! `8 i + k`:
//!
//! | k | event |
//! |---|-------|
//! | 0 | infection `S -> I` at rate `beta nS nI / (nS + nI + nR)` |
//! | 1 | recovery `I -> R` at rate `alpha nI` |
//! | 2, 3 | `S` moves to the right / left neighbour at rate `mu_S eps^-2 nS` each |
//! | 4, 5 | same for `I` |
//! | 6, 7 | same for `R` |
//!
//! The direct method draws two uniforms per event, first the waiting time
//! `-ln(1 - u1) / Lambda`, then the channel as the first index whose
//! cumulative rate exceeds `u2 Lambda`, scanning channels in layout order.
//! The total rate is summed afresh over all channels before every event.
//! Keeping this order is what makes runs reproducible across
//! implementations.

use std::io::Write;

use serde::Serialize;

use crate::deterministic::{Compartment, ModelParams, SirState, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{Grid, LatticeField};
use crate::rng::{rng_from_seed, uniform};

pub const CHANNELS_PER_SITE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Infection,
    Recovery,
    Migration(Compartment, Direction),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Channel {
    pub site: usize,
    pub kind: ChannelKind,
}

impl Channel {
    pub fn from_index(index: usize) -> Self {
        let site = index / CHANNELS_PER_SITE;
        let kind = match index % CHANNELS_PER_SITE {
            0 => ChannelKind::Infection,
            1 => ChannelKind::Recovery,
            k => {
                let c = Compartment::ALL[(k - 2) / 2];
                let d = if k % 2 == 0 { Direction::Plus } else { Direction::Minus };
                ChannelKind::Migration(c, d)
            }
        };
        Self { site, kind }
    }

    pub fn index(&self) -> usize {
        let k = match self.kind {
            ChannelKind::Infection => 0,
            ChannelKind::Recovery => 1,
            ChannelKind::Migration(c, d) => 2 + 2 * c.index() + usize::from(d == Direction::Minus),
        };
        CHANNELS_PER_SITE * self.site + k
    }
}

/// Integer counts per site and compartment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JumpState {
    grid: Grid,
    population: u64,
    counts: [Vec<u64>; 3],
}

impl JumpState {
    pub fn new(grid: Grid, population: u64, n_s: Vec<u64>, n_i: Vec<u64>, n_r: Vec<u64>) -> Result<Self> {
        for v in [&n_s, &n_i, &n_r] {
            if v.len() != grid.ell() {
                return Err(Error::InvalidArgument(format!(
                    "{} counts for a grid of {} sites",
                    v.len(),
                    grid.ell()
                )));
            }
        }
        Ok(Self {
            grid,
            population,
            counts: [n_s, n_i, n_r],
        })
    }

    /// Rounds `N x` for each proportion `x`.
    pub fn from_proportions(state: &SirState, population: u64) -> Result<Self> {
        let n = population as f64;
        let round = |f: &LatticeField| -> Result<Vec<u64>> {
            f.values()
                .iter()
                .map(|&x| {
                    if !(x.is_finite() && x >= 0.0) {
                        return Err(Error::InvalidArgument(format!("cannot turn proportion {x} into a count")));
                    }
                    Ok((n * x).round() as u64)
                })
                .collect()
        };
        Self::new(state.grid(), population, round(&state.s)?, round(&state.i)?, round(&state.r)?)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Population scale `N`.
    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn counts(&self, c: Compartment) -> &[u64] {
        &self.counts[c.index()]
    }

    /// Total number of individuals over all sites and compartments.
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn compartment_total(&self, c: Compartment) -> u64 {
        self.counts[c.index()].iter().sum()
    }

    /// Counts divided by `N`.
    pub fn to_proportions(&self) -> Result<SirState> {
        if self.population == 0 {
            return Err(Error::InvalidArgument("population scale N must be > 0".into()));
        }
        let n = self.population as f64;
        let f = |c: Compartment| {
            LatticeField::new(self.grid, self.counts(c).iter().map(|&k| k as f64 / n).collect())
        };
        SirState::new(f(Compartment::S)?, f(Compartment::I)?, f(Compartment::R)?)
    }
}

/// Rates of the eight channels of one site. Works for counts and for
/// proportions alike.
#[inline]
pub fn site_rates(beta: f64, alpha: f64, mu: [f64; 3], inv_eps2: f64, s: f64, i: f64, r: f64) -> [f64; 8] {
    let a = s + i + r;
    let inf = if a > 0.0 { beta * s * i / a } else { 0.0 };
    let ms = mu[0] * inv_eps2 * s;
    let mi = mu[1] * inv_eps2 * i;
    let mr = mu[2] * inv_eps2 * r;
    [inf, alpha * i, ms, ms, mi, mi, mr, mr]
}

fn fill_site(state: &JumpState, params: &ModelParams, site: usize, out: &mut [f64]) {
    let r = site_rates(
        params.beta().values()[site],
        params.alpha().values()[site],
        params.mus(),
        params.grid().inv_eps2(),
        state.counts[0][site] as f64,
        state.counts[1][site] as f64,
        state.counts[2][site] as f64,
    );
    out[CHANNELS_PER_SITE * site..CHANNELS_PER_SITE * (site + 1)].copy_from_slice(&r);
}

/// Rates of all `8 ell` channels in layout order.
pub fn channel_rates(state: &JumpState, params: &ModelParams) -> Result<Vec<f64>> {
    state.grid.ensure_same(&params.grid())?;
    let mut out = vec![0.0; CHANNELS_PER_SITE * state.grid.ell()];
    for site in 0..state.grid.ell() {
        fill_site(state, params, site, &mut out);
    }
    Ok(out)
}

/// Applies one event in place, returning the other site it touched, if any.
/// Errors when the channel's source compartment is empty or its rate is zero.
pub fn apply_event(state: &mut JumpState, params: &ModelParams, channel: Channel) -> Result<Option<usize>> {
    state.grid.ensure_same(&params.grid())?;
    let i = channel.site;
    if i >= state.grid.ell() {
        return Err(Error::InfeasibleEvent(format!("site {i} outside a grid of {} sites", state.grid.ell())));
    }
    let rates = site_rates(
        params.beta().values()[i],
        params.alpha().values()[i],
        params.mus(),
        params.grid().inv_eps2(),
        state.counts[0][i] as f64,
        state.counts[1][i] as f64,
        state.counts[2][i] as f64,
    );
    if !(rates[channel.index() % CHANNELS_PER_SITE] > 0.0) {
        return Err(Error::InfeasibleEvent(format!("{channel:?} has zero rate")));
    }
    Ok(apply_unchecked(state, channel))
}

#[inline]
fn apply_unchecked(state: &mut JumpState, channel: Channel) -> Option<usize> {
    let i = channel.site;
    match channel.kind {
        ChannelKind::Infection => {
            state.counts[0][i] -= 1;
            state.counts[1][i] += 1;
            None
        }
        ChannelKind::Recovery => {
            state.counts[1][i] -= 1;
            state.counts[2][i] += 1;
            None
        }
        ChannelKind::Migration(c, d) => {
            let j = match d {
                Direction::Plus => state.grid.right(i),
                Direction::Minus => state.grid.left(i),
            };
            state.counts[c.index()][i] -= 1;
            state.counts[c.index()][j] += 1;
            Some(j)
        }
    }
}

#[derive(Serialize)]
struct EventRecord {
    t: f64,
    kind: &'static str,
    site: usize,
    compartment: Option<&'static str>,
    direction: Option<Direction>,
}

impl EventRecord {
    fn new(t: f64, ch: Channel) -> Self {
        let (kind, compartment, direction) = match ch.kind {
            ChannelKind::Infection => ("infection", None, None),
            ChannelKind::Recovery => ("recovery", None, None),
            ChannelKind::Migration(c, d) => ("migration", Some(c.as_str()), Some(d)),
        };
        Self {
            t,
            kind,
            site: ch.site,
            compartment,
            direction,
        }
    }
}

/// Outcome of one simulation.
#[derive(Debug, Clone)]
pub struct JumpRun {
    pub trajectory: Trajectory<JumpState>,
    pub events: u64,
}

/// Direct-method simulation on `[0, t_end]`, recording the state in force
/// at each of `sample_times` (last value before or at the time).
pub fn gillespie(
    state0: &JumpState,
    params: &ModelParams,
    t_end: f64,
    seed: u64,
    sample_times: &[f64],
) -> Result<JumpRun> {
    run(state0, params, t_end, seed, sample_times, None)
}

/// As [`gillespie`], also writing one JSON line per event to `log`.
pub fn gillespie_with_log(
    state0: &JumpState,
    params: &ModelParams,
    t_end: f64,
    seed: u64,
    sample_times: &[f64],
    log: &mut dyn Write,
) -> Result<JumpRun> {
    run(state0, params, t_end, seed, sample_times, Some(log))
}

fn run(
    state0: &JumpState,
    params: &ModelParams,
    t_end: f64,
    seed: u64,
    sample_times: &[f64],
    mut log: Option<&mut dyn Write>,
) -> Result<JumpRun> {
    state0.grid.ensure_same(&params.grid())?;
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be >= 0, got {t_end}")));
    }
    if sample_times.windows(2).any(|w| w[1] <= w[0])
        || sample_times.iter().any(|&t| !(0.0..=t_end).contains(&t))
    {
        return Err(Error::Misaligned("sample times must be strictly increasing inside [0, T]".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut state = state0.clone();
    let total0 = state.total();
    let mut rates = channel_rates(&state, params)?;
    let mut samples = Vec::with_capacity(sample_times.len());
    let mut next = 0;
    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        let lambda: f64 = rates.iter().sum();
        if !lambda.is_finite() {
            return Err(Error::NonFinite(format!(
                "total event rate {lambda} at t = {t} after {events} events"
            )));
        }
        let u1 = uniform(&mut rng);
        let u2 = uniform(&mut rng);
        let t_next = if lambda > 0.0 { t - (1.0 - u1).ln() / lambda } else { f64::INFINITY };
        while next < sample_times.len() && sample_times[next] < t_next {
            samples.push(state.clone());
            next += 1;
        }
        if t_next > t_end {
            break;
        }
        let target = u2 * lambda;
        let mut acc = 0.0;
        let mut chosen = None;
        let mut last_positive = 0;
        for (k, &r) in rates.iter().enumerate() {
            if r > 0.0 {
                acc += r;
                last_positive = k;
                if acc > target {
                    chosen = Some(k);
                    break;
                }
            }
        }
        // Rounding can leave target just above the running sum.
        let ch = Channel::from_index(chosen.unwrap_or(last_positive));
        t = t_next;
        let other = apply_unchecked(&mut state, ch);
        events += 1;
        fill_site(&state, params, ch.site, &mut rates);
        if let Some(j) = other {
            fill_site(&state, params, j, &mut rates);
        }
        debug_assert_eq!(state.total(), total0, "event {ch:?} broke conservation");
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &EventRecord::new(t, ch))?;
            w.write_all(b"\n")?;
        }
    }
    Ok(JumpRun {
        trajectory: Trajectory::new(sample_times.to_vec(), samples)?,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deterministic::{integrate_ode, Preset};
    use crate::rng::derive_replica_seed;
    use proptest::prelude::*;

    fn params(grid: Grid, beta: f64, alpha: f64, mu: f64) -> ModelParams {
        ModelParams::new(LatticeField::constant(grid, beta), LatticeField::constant(grid, alpha), mu, mu, mu).unwrap()
    }

    #[test]
    fn channel_layout_round_trips() {
        for k in 0..80 {
            assert_eq!(Channel::from_index(k).index(), k);
        }
        let c = Channel::from_index(8 * 2 + 3);
        assert_eq!(c.site, 2);
        assert_eq!(c.kind, ChannelKind::Migration(Compartment::S, Direction::Minus));
    }

    #[test]
    fn rate_examples() {
        let g = Grid::new(3).unwrap();
        let p = ModelParams::new(LatticeField::constant(g, 1.0), LatticeField::constant(g, 0.5), 0.1, 0.2, 0.3).unwrap();
        let st = JumpState::new(g, 100, vec![5, 0, 0], vec![0; 3], vec![0; 3]).unwrap();
        let r = channel_rates(&st, &p).unwrap();
        assert_eq!(r.len(), 24);
        assert!((r[2] - 4.5).abs() < 1e-12 && (r[3] - 4.5).abs() < 1e-12);
        assert!(r[0] == 0.0 && r[1] == 0.0);
        assert!(r[8..].iter().all(|&v| v == 0.0));

        let one = JumpState::new(g, 100, vec![0, 0, 0], vec![1, 0, 0], vec![0; 3]).unwrap();
        let r = channel_rates(&one, &p).unwrap();
        assert!((0..3).all(|i| r[8 * i] == 0.0));
    }

    #[test]
    fn apply_event_examples() {
        let g = Grid::new(3).unwrap();
        let p = params(g, 1.0, 1.0, 0.1);
        let mut st = JumpState::new(g, 10, vec![3, 1, 1], vec![1, 1, 0], vec![0, 0, 2]).unwrap();
        let before = st.clone();
        apply_event(&mut st, &p, Channel { site: 0, kind: ChannelKind::Infection }).unwrap();
        assert_eq!(st.counts(Compartment::S)[0], 2);
        assert_eq!(st.counts(Compartment::I)[0], 2);
        assert_eq!(st.total(), before.total());
        let to = apply_event(&mut st, &p, Channel { site: 2, kind: ChannelKind::Migration(Compartment::R, Direction::Plus) }).unwrap();
        assert_eq!(to, Some(0));
        assert_eq!(st.counts(Compartment::R), &[1, 0, 1]);
        let err = apply_event(&mut st, &p, Channel { site: 2, kind: ChannelKind::Recovery });
        assert!(matches!(err, Err(Error::InfeasibleEvent(_))));
        assert_eq!(st.total(), before.total());
    }

    #[test]
    fn proportions() {
        let g = Grid::new(3).unwrap();
        let st = JumpState::new(g, 100, vec![50, 10, 0], vec![1, 2, 3], vec![0, 0, 34]).unwrap();
        let p = st.to_proportions().unwrap();
        assert_eq!(p.s.values()[0], 0.5);
        let back = JumpState::from_proportions(&p, 100).unwrap();
        assert_eq!(back, st);
        // eps * sum of all proportions = total / (N ell)
        let one = LatticeField::constant(g, 1.0);
        let m = crate::grid::inner(&p.total(), &one).unwrap();
        assert!((m - 100.0 / 300.0).abs() < 1e-15);
        let zero = JumpState::new(g, 0, vec![0; 3], vec![0; 3], vec![0; 3]).unwrap();
        assert!(zero.to_proportions().is_err());
    }

    proptest! {
        #[test]
        fn events_conserve_and_stay_nonnegative(
            seed in 0u64..1000,
            counts in proptest::collection::vec(0u64..6, 15),
        ) {
            let g = Grid::new(5).unwrap();
            let p = params(g, 2.0, 1.0, 0.05);
            let st = JumpState::new(g, 10, counts[..5].to_vec(), counts[5..10].to_vec(), counts[10..].to_vec()).unwrap();
            let run = gillespie(&st, &p, 2.0, seed, &[0.0, 1.0, 2.0]).unwrap();
            for s in &run.trajectory.states {
                prop_assert_eq!(s.total(), st.total());
            }
        }
    }

    #[test]
    fn migration_only_conserves_compartments() {
        let g = Grid::new(5).unwrap();
        let p = params(g, 0.0, 0.0, 0.02);
        let st = JumpState::new(g, 100, vec![40, 0, 0, 0, 0], vec![0; 5], vec![0, 0, 7, 0, 0]).unwrap();
        let run = gillespie(&st, &p, 5.0, 3, &[1.0, 2.0, 5.0]).unwrap();
        assert!(run.events > 0);
        for s in &run.trajectory.states {
            assert_eq!(s.compartment_total(Compartment::S), 40);
            assert_eq!(s.compartment_total(Compartment::R), 7);
            assert_eq!(s.compartment_total(Compartment::I), 0);
        }
    }

    #[test]
    fn migration_spreads_uniformly() {
        // The walk generator on the cycle is symmetric, so its stationary law
        // is uniform: check that the generator annihilates the uniform vector.
        let ell = 5;
        let q = |i: usize, j: usize| -> f64 {
            if i == j {
                -2.0
            } else if (i + 1) % ell == j || (j + 1) % ell == i {
                1.0
            } else {
                0.0
            }
        };
        for j in 0..ell {
            let s: f64 = (0..ell).map(|i| q(i, j) / ell as f64).sum();
            assert!(s.abs() < 1e-15);
        }
        let g = Grid::new(ell).unwrap();
        let p = params(g, 0.0, 0.0, 0.05);
        let n = 2000u64;
        let st = JumpState::new(g, n, vec![n, 0, 0, 0, 0], vec![0; 5], vec![0; 5]).unwrap();
        let run = gillespie(&st, &p, 20.0, 11, &[20.0]).unwrap();
        let last = run.trajectory.last().unwrap();
        let mean = n as f64 / ell as f64;
        let sd = (n as f64 * 0.2 * 0.8).sqrt();
        for &k in last.counts(Compartment::S) {
            assert!((k as f64 - mean).abs() <= 3.0 * sd, "{k}");
        }
    }

    #[test]
    fn same_seed_same_run() {
        let g = Grid::new(5).unwrap();
        let pre = Preset::default();
        let p = pre.params(g).unwrap();
        let st = JumpState::from_proportions(&pre.initial_state(g).unwrap(), 500).unwrap();
        let a = gillespie(&st, &p, 0.5, 42, &[0.25, 0.5]).unwrap();
        let b = gillespie(&st, &p, 0.5, 42, &[0.25, 0.5]).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.events, b.events);
        let c = gillespie(&st, &p, 0.5, 43, &[0.25, 0.5]).unwrap();
        assert_ne!(a.trajectory, c.trajectory);
    }

    #[test]
    fn event_log_lines() {
        let g = Grid::new(3).unwrap();
        let p = params(g, 1.0, 1.0, 0.1);
        let st = JumpState::new(g, 10, vec![2, 0, 0], vec![1, 0, 0], vec![0; 3]).unwrap();
        let mut buf = Vec::new();
        let run = gillespie_with_log(&st, &p, 1.0, 5, &[1.0], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count() as u64, run.events);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("t").is_some() && v.get("kind").is_some() && v.get("site").is_some());
        }
    }

    #[test]
    fn sample_validation() {
        let g = Grid::new(3).unwrap();
        let p = params(g, 1.0, 1.0, 0.1);
        let st = JumpState::new(g, 10, vec![2, 0, 0], vec![1, 0, 0], vec![0; 3]).unwrap();
        assert!(gillespie(&st, &p, 1.0, 5, &[0.5, 0.2]).is_err());
        assert!(gillespie(&st, &p, 1.0, 5, &[2.0]).is_err());
    }

    #[test]
    fn replica_mean_tracks_ode() {
        let g = Grid::new(5).unwrap();
        let pre = Preset::default();
        let p = pre.params(g).unwrap();
        let n = 1000u64;
        let js = JumpState::from_proportions(&pre.initial_state(g).unwrap(), n).unwrap();
        let z0 = js.to_proportions().unwrap();
        let t_end = 0.5;
        let h = crate::deterministic::aligned_step(t_end, p.stable_step());
        let det = integrate_ode(&z0, &p, t_end, h, &[t_end]).unwrap();
        let reps = 200;
        let finals: Vec<Vec<f64>> = (0..reps)
            .map(|k| {
                let run = gillespie(&js, &p, t_end, derive_replica_seed(9, k), &[t_end]).unwrap();
                run.trajectory.states[0].to_proportions().unwrap().s.values().to_vec()
            })
            .collect();
        for site in 0..5 {
            let xs: Vec<f64> = finals.iter().map(|v| v[site]).collect();
            let mean = xs.iter().sum::<f64>() / reps as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let se = (var / reps as f64).sqrt();
            let want = det.states[0].s.values()[site];
            assert!((mean - want).abs() <= 3.0 * se, "site {site}: {mean} vs {want} (se {se})");
        }
    }
}
