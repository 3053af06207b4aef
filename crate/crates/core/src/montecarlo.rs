//! Exact event-driven simulation of `{X_t, Y_t, φ_t}`.
//!
//! Between events `X` and `Y` are linear in time, so the simulation jumps from
//! one event to the next: a phase change, `X` reaching zero or a rate
//! breakpoint, `Y` reaching zero, or the time horizon. Each path draws from its
//! own ChaCha stream keyed by `(seed, path index)`, so results do not depend on
//! how paths are scheduled across threads.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("every path was censored at the horizon")]
    NoRetainedPaths,
    #[error("invalid simulation setting: {0}")]
    InvalidSetting(String),
}

impl SimulationError {
    pub fn code(&self) -> &'static str {
        match self {
            SimulationError::NoRetainedPaths => "NoRetainedPaths",
            SimulationError::InvalidSetting(_) => "InvalidSetting",
        }
    }
}

/// Simulation state; `x` and `y` never go negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub phase: usize,
}

/// One linear stretch of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: SimState,
    pub dt: f64,
    pub x_slope: f64,
    pub y_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Jump,
    XBoundary(usize),
    XZero,
    YZero,
    Horizon,
}

/// Outcome of one first-return path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRecord {
    pub tau: f64,
    /// `(X_τ, φ_τ)`, absent when the path was censored at the horizon.
    pub hit: Option<(f64, usize)>,
}

impl PathRecord {
    pub fn censored(&self) -> bool {
        self.hit.is_none()
    }
}

/// Model data laid out for fast event sampling.
#[derive(Debug, Clone)]
pub struct Simulator {
    c: Vec<f64>,
    exit: Vec<f64>,
    jumps: Vec<Vec<(usize, f64)>>,
    breakpoints: Vec<f64>,
    /// `rates[phase][j]` holds on `(breakpoints[j-1], breakpoints[j])`.
    rates: Vec<Vec<f64>>,
    at_zero: Vec<f64>,
}

impl Simulator {
    pub fn new(model: &ModelSpec<f64>) -> Self {
        let s = model.n_phases();
        let t: &DMatrix<f64> = &model.generator;
        let exit = (0..s).map(|i| -t[(i, i)]).collect();
        let jumps =
            (0..s).map(|i| (0..s).filter(|&j| j != i && t[(i, j)] > 0.0).map(|j| (j, t[(i, j)])).collect()).collect();
        let breakpoints = model.rates.breakpoints();
        let mut probe = vec![0.0];
        probe.extend(breakpoints.iter().copied());
        let rates = (0..s).map(|i| probe.iter().map(|&x| model.rates.interior_rate(i, x)).collect()).collect();
        let at_zero = (0..s).map(|i| model.rates.rate(i, 0.0)).collect();
        Self { c: model.c.clone(), exit, jumps, breakpoints, rates, at_zero }
    }

    /// Rate of `Y` before any clipping at `Y = 0`.
    fn y_rate(&self, phase: usize, x: f64, x_slope: f64) -> f64 {
        if x == 0.0 && x_slope == 0.0 {
            return self.at_zero[phase];
        }
        let bp = &self.breakpoints;
        let region = if x_slope < 0.0 { bp.partition_point(|&b| b < x) } else { bp.partition_point(|&b| b <= x) };
        self.rates[phase][region]
    }

    fn slopes(&self, st: &SimState) -> (f64, f64) {
        let mut xs = self.c[st.phase];
        if st.x == 0.0 && xs < 0.0 {
            xs = 0.0;
        }
        let mut ys = self.y_rate(st.phase, st.x, xs);
        if st.y == 0.0 && ys < 0.0 {
            ys = 0.0;
        }
        (xs, ys)
    }

    /// Advances to the next event, returning the segment just traversed.
    fn step<R: Rng>(&self, st: &mut SimState, horizon: f64, rng: &mut R) -> (Segment, Event) {
        let (xs, ys) = self.slopes(st);
        let start = *st;
        let mut dt = if self.exit[st.phase] > 0.0 {
            let e: f64 = rng.sample(Exp1);
            e / self.exit[st.phase]
        } else {
            f64::INFINITY
        };
        let mut ev = Event::Jump;
        let bp = &self.breakpoints;
        if xs > 0.0 {
            let j = bp.partition_point(|&b| b <= st.x);
            if j < bp.len() {
                let d = (bp[j] - st.x) / xs;
                if d < dt {
                    dt = d;
                    ev = Event::XBoundary(j);
                }
            }
        } else if xs < 0.0 {
            let j = bp.partition_point(|&b| b < st.x);
            let (target, event) = if j > 0 { (bp[j - 1], Event::XBoundary(j - 1)) } else { (0.0, Event::XZero) };
            let d = (st.x - target) / -xs;
            if d < dt {
                dt = d;
                ev = event;
            }
        }
        if ys < 0.0 {
            let d = st.y / -ys;
            if d < dt {
                dt = d;
                ev = Event::YZero;
            }
        }
        if st.t + dt >= horizon {
            dt = horizon - st.t;
            ev = Event::Horizon;
        }
        st.t += dt;
        st.x = (st.x + xs * dt).max(0.0);
        st.y = (st.y + ys * dt).max(0.0);
        match ev {
            Event::XBoundary(j) => st.x = bp[j],
            Event::XZero => st.x = 0.0,
            Event::YZero => st.y = 0.0,
            Event::Jump => st.phase = self.jump_target(st.phase, rng),
            Event::Horizon => st.t = horizon,
        }
        (Segment { start, dt, x_slope: xs, y_slope: ys }, ev)
    }

    fn jump_target<R: Rng>(&self, phase: usize, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.exit[phase];
        let mut acc = 0.0;
        for &(j, rate) in &self.jumps[phase] {
            acc += rate;
            if u < acc {
                return j;
            }
        }
        self.jumps[phase].last().map(|&(j, _)| j).unwrap_or(phase)
    }

    /// Runs one path to the first return of `Y` to zero after it has been
    /// positive, or to the horizon. `trace` receives every segment.
    pub fn first_return_traced<R: Rng>(
        &self,
        init: SimState,
        horizon: f64,
        rng: &mut R,
        mut trace: impl FnMut(&Segment),
    ) -> PathRecord {
        let mut st = SimState { t: 0.0, ..init };
        let mut left_zero = st.y > 0.0;
        loop {
            let (seg, ev) = self.step(&mut st, horizon, rng);
            trace(&seg);
            if st.y > 0.0 || seg.y_slope > 0.0 {
                left_zero = true;
            }
            match ev {
                Event::YZero if left_zero => return PathRecord { tau: st.t, hit: Some((st.x, st.phase)) },
                Event::Horizon => return PathRecord { tau: horizon, hit: None },
                _ => {}
            }
        }
    }

    pub fn first_return<R: Rng>(&self, init: SimState, horizon: f64, rng: &mut R) -> PathRecord {
        self.first_return_traced(init, horizon, rng, |_| {})
    }
}

/// Per-path generator for `(seed, index)`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates `paths` independent first-return paths from `(x0, y0, phase0)`.
pub fn simulate_first_return(
    model: &ModelSpec<f64>,
    init: (f64, f64, usize),
    paths: usize,
    horizon: f64,
    seed: u64,
) -> Result<Vec<PathRecord>, SimulationError> {
    let (x0, y0, phase) = init;
    if !(x0 >= 0.0 && y0 >= 0.0 && phase < model.n_phases() && horizon > 0.0) {
        return Err(SimulationError::InvalidSetting(format!("start ({x0}, {y0}, {phase}) with horizon {horizon}")));
    }
    let sim = Simulator::new(model);
    let start = SimState { t: 0.0, x: x0, y: y0, phase };
    Ok((0..paths as u64).into_par_iter().map(|i| sim.first_return(start, horizon, &mut path_rng(seed, i))).collect())
}

/// Empirical distribution of `(X_τ, φ_τ)` over retained paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalReturn {
    pub total: usize,
    pub retained: usize,
    /// Sorted `X_τ` samples for each phase.
    pub samples: Vec<Vec<f64>>,
}

impl EmpiricalReturn {
    pub fn censored_fraction(&self) -> f64 {
        (self.total - self.retained) as f64 / self.total as f64
    }

    /// `P(X_τ ≤ x, φ_τ = phase)` among retained paths.
    pub fn cdf(&self, phase: usize, x: f64) -> f64 {
        let s = &self.samples[phase];
        s.partition_point(|&v| v <= x) as f64 / self.retained as f64
    }

    pub fn phase_fraction(&self, phase: usize) -> f64 {
        self.samples[phase].len() as f64 / self.retained as f64
    }
}

pub fn empirical_return_cdf(records: &[PathRecord], phases: usize) -> Result<EmpiricalReturn, SimulationError> {
    let mut samples = vec![Vec::new(); phases];
    for (x, p) in records.iter().filter_map(|r| r.hit) {
        samples[p].push(x);
    }
    let retained: usize = samples.iter().map(Vec::len).sum();
    if retained == 0 {
        return Err(SimulationError::NoRetainedPaths);
    }
    for s in &mut samples {
        s.sort_by(f64::total_cmp);
    }
    Ok(EmpiricalReturn { total: records.len(), retained, samples })
}

/// `sup_x |F(x) − G(x)|` between the step function `G` with jumps of `1/n`
/// at `sorted` (offset by `base`) and a nondecreasing `F`. Both one-sided
/// limits are compared at every sample and every point of `extra`; left
/// limits of `F` are taken a relative `1e-12` below the point.
pub fn kolmogorov_distance(sorted: &[f64], n: usize, base: f64, f: impl Fn(f64) -> f64, extra: &[f64]) -> f64 {
    let step = 1.0 / n as f64;
    let g = |x: f64| base + sorted.partition_point(|&v| v <= x) as f64 * step;
    let g_left = |x: f64| base + sorted.partition_point(|&v| v < x) as f64 * step;
    sorted
        .iter()
        .chain(extra)
        .map(|&x| {
            let left = x - 1e-12 * x.abs().max(1.0);
            (f(x) - g(x)).abs().max((f(left) - g_left(x)).abs())
        })
        .fold(0.0, f64::max)
}

/// Long-run occupation estimates from independent chains.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationEstimate {
    pub p_y_zero: f64,
    pub p_y_zero_se: f64,
    pub p_y_zero_by_phase: Vec<f64>,
    /// Fraction of time with `X = 0` exactly.
    pub x_atom: f64,
    /// Bin edges of the X-histogram; the last bin is unbounded.
    pub x_edges: Vec<f64>,
    /// Fraction of time in `(edges[j], edges[j+1]]`, and beyond the last edge.
    pub x_hist: Vec<f64>,
    pub chains: usize,
}

impl OccupationEstimate {
    pub fn p_y_positive(&self) -> f64 {
        1.0 - self.p_y_zero
    }

    /// Time-average `P(X ≤ x)` at each bin edge.
    pub fn x_cdf(&self) -> Vec<(f64, f64)> {
        let mut acc = self.x_atom;
        let mut out = vec![(self.x_edges[0], acc)];
        for (j, &e) in self.x_edges.iter().enumerate().skip(1) {
            acc += self.x_hist[j - 1];
            out.push((e, acc));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupationSettings {
    pub burn_in: f64,
    /// Run length per chain after burn-in.
    pub run: f64,
    pub chains: usize,
    pub seed: u64,
    /// Histogram edges starting at zero.
    pub x_edges: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Occupation {
    y_zero: Vec<f64>,
    x_atom: f64,
    hist: Vec<f64>,
}

impl Occupation {
    fn add(&mut self, seg: &Segment, edges: &[f64]) {
        let s = &seg.start;
        if seg.dt <= 0.0 {
            return;
        }
        if s.y == 0.0 && seg.y_slope == 0.0 {
            self.y_zero[s.phase] += seg.dt;
        }
        if seg.x_slope == 0.0 {
            if s.x == 0.0 {
                self.x_atom += seg.dt;
            } else {
                let j = edges.partition_point(|&e| e < s.x).max(1) - 1;
                self.hist[j] += seg.dt;
            }
            return;
        }
        let (a, b) = {
            let end = s.x + seg.x_slope * seg.dt;
            if end > s.x {
                (s.x, end)
            } else {
                (end, s.x)
            }
        };
        let per_len = seg.dt / (b - a);
        let last = edges.len() - 1;
        let mut j = edges.partition_point(|&e| e <= a).max(1) - 1;
        loop {
            let lo = edges[j].max(a);
            let hi = if j < last { edges[j + 1].min(b) } else { b };
            if hi > lo {
                self.hist[j] += (hi - lo) * per_len;
            }
            if j == last || edges[j + 1] >= b {
                break;
            }
            j += 1;
        }
    }
}

pub fn estimate_stationary(
    model: &ModelSpec<f64>,
    settings: &OccupationSettings,
) -> Result<OccupationEstimate, SimulationError> {
    let edges = &settings.x_edges;
    let valid = settings.chains > 0
        && settings.run > 0.0
        && settings.burn_in >= 0.0
        && edges.len() >= 2
        && edges[0] == 0.0
        && edges.windows(2).all(|w| w[0] < w[1]);
    if !valid {
        return Err(SimulationError::InvalidSetting("chains, run length or histogram edges".into()));
    }
    let sim = Simulator::new(model);
    let s = model.n_phases();
    let start_phase = model.c.iter().position(|&c| c < 0.0).unwrap_or(0);
    let per_chain: Vec<Occupation> = (0..settings.chains as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(settings.seed, i);
            let mut st = SimState { t: 0.0, x: 0.0, y: 0.0, phase: start_phase };
            while st.t < settings.burn_in {
                sim.step(&mut st, settings.burn_in, &mut rng);
            }
            st.t = 0.0;
            let mut occ = Occupation { y_zero: vec![0.0; s], x_atom: 0.0, hist: vec![0.0; edges.len()] };
            while st.t < settings.run {
                let (seg, _) = sim.step(&mut st, settings.run, &mut rng);
                occ.add(&seg, edges);
            }
            occ
        })
        .collect();

    let n = settings.chains as f64;
    let run = settings.run;
    let fractions: Vec<f64> = per_chain.iter().map(|o| o.y_zero.iter().sum::<f64>() / run).collect();
    let mean = fractions.iter().sum::<f64>() / n;
    let se = if settings.chains > 1 {
        (fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        f64::NAN
    };
    let avg = |f: &dyn Fn(&Occupation) -> f64| per_chain.iter().map(f).sum::<f64>() / (n * run);
    Ok(OccupationEstimate {
        p_y_zero: mean,
        p_y_zero_se: se,
        p_y_zero_by_phase: (0..s).map(|i| avg(&|o| o.y_zero[i])).collect(),
        x_atom: avg(&|o| o.x_atom),
        x_edges: edges.clone(),
        x_hist: (0..edges.len()).map(|j| avg(&|o| o.hist[j])).collect(),
        chains: settings.chains,
    })
}
