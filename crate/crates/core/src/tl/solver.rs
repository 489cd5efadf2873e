//! Time-domain integration of the transmission line.
//!
//! Per section the law of motion is `v̇ = (1+ε)q − g + Q` with
//! `g = ω²y + δωv − ϱω²y(t−τ)` and `Q = Σ_k b_k (v̇ + g)[t − kΔt]`; the
//! pressure term `q` comes from the tridiagonal fluid-coupling system
//! `A q = g − Q` solved at every stage. The `(1+ε)` factor carries the
//! gain regressor of each filter so that β̂(0) = 1 holds in the time domain.

use crate::error::{Error, Result};
use crate::lut::FilterLut;
use crate::params::ModelParams;
use crate::tl::config::{Geometry, TlConfig};
use crate::tl::envelope::Envelope;
use crate::tl::interp::{catmull_rom_weights, lagrange3_weights, DelayLine};
use crate::tl::nonlinear::{g_strength, Knees, Triplet};
use crate::tl::tridiag::{ThomasFactor, Tridiagonal};

/// How the local BM mechanics are set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mechanics {
    /// Delay-free damped oscillator with the configured passive damping.
    Passive,
    /// Linear, every section at its starting pole.
    Starting,
    /// Linear, every section at its saturating pole.
    Saturating,
    /// Pole follows the instantaneous speed between the knees.
    Compressive,
}

/// Which focusing-correction filters are active.
#[derive(Debug, Clone, Copy)]
pub enum Filters<'a> {
    /// No correction (the V-1D model).
    None,
    /// Table entries nearest to a fixed G in every section.
    Fixed { lut: &'a FilterLut, g: f64 },
    /// G driven by the envelope every `update_period` base steps.
    Dynamic(&'a FilterLut),
}

#[derive(Debug, Clone)]
pub struct RunOptions<'a> {
    pub mechanics: Mechanics,
    pub filters: Filters<'a>,
    /// Required for compressive mechanics and dynamic filters.
    pub knees: Option<Knees>,
    pub update_period: usize,
    /// Sections whose traces are kept.
    pub record: Vec<usize>,
    /// Keep every `decimation`-th base sample.
    pub decimation: usize,
}

impl<'a> RunOptions<'a> {
    pub fn new(mechanics: Mechanics, filters: Filters<'a>, record: Vec<usize>) -> Self {
        Self {
            mechanics,
            filters,
            knees: None,
            update_period: 6,
            record,
            decimation: 1,
        }
    }

    pub fn with_knees(mut self, knees: Knees) -> Self {
        self.knees = Some(knees);
        self
    }

    pub fn with_update_period(mut self, period: usize) -> Self {
        self.update_period = period;
        self
    }

    pub fn with_decimation(mut self, decimation: usize) -> Self {
        self.decimation = decimation;
        self
    }
}

/// Recorded per-section traces, sampled at `fs / decimation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    pub fs: f64,
    pub decimation: usize,
    pub sections: Vec<usize>,
    pub v: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    /// Largest number of RK substeps used in one base step.
    pub max_substeps: usize,
}

impl Traces {
    pub fn len(&self) -> usize {
        self.v.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row of `sections` holding section `n`.
    pub fn row(&self, n: usize) -> Option<usize> {
        self.sections.iter().position(|&s| s == n)
    }
}

/// Immutable model: parameters, calibration and derived geometry.
#[derive(Debug, Clone)]
pub struct TlModel {
    pub params: ModelParams,
    pub config: TlConfig,
    pub geometry: Geometry,
}

impl TlModel {
    pub fn new(params: ModelParams, config: TlConfig) -> Result<Self> {
        let geometry = Geometry::new(&params, &config)?;
        Ok(Self {
            params,
            config,
            geometry,
        })
    }

    pub fn n_sections(&self) -> usize {
        self.geometry.len()
    }

    /// Runs `stimulus` (pascals, sampled at fs) through the line.
    pub fn simulate(&self, stimulus: &[f64], opts: &RunOptions) -> Result<Traces> {
        let mut sim = Simulator::new(self, opts)?;
        let rows = opts.record.len();
        let cap = stimulus.len() / opts.decimation + 1;
        let mut out = Traces {
            fs: self.params.fs / opts.decimation as f64,
            decimation: opts.decimation,
            sections: opts.record.clone(),
            v: vec![Vec::with_capacity(cap); rows],
            y: vec![Vec::with_capacity(cap); rows],
            g: vec![Vec::with_capacity(cap); rows],
            max_substeps: 1,
        };
        for i in 0..stimulus.len() {
            if i % opts.decimation == 0 {
                for (r, &n) in opts.record.iter().enumerate() {
                    out.v[r].push(sim.state.v[n]);
                    out.y[r].push(sim.state.y[n]);
                    out.g[r].push(sim.state.g_active[n]);
                }
            }
            let next = stimulus.get(i + 1).copied().unwrap_or(0.0);
            sim.step(stimulus[i], next)?;
            out.max_substeps = out.max_substeps.max(sim.last_substeps);
        }
        Ok(out)
    }
}

/// Per-section dynamic state.
#[derive(Debug, Clone)]
pub struct TlState {
    /// Index of the current base sample; the state holds values at `i Δt`.
    pub step: u64,
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    /// Current delayed-stiffness parameters.
    pub triplet: Vec<Triplet>,
    /// Current active strength per section (G from the envelope).
    pub g_active: Vec<f64>,
    /// Table step currently loaded per section.
    pub g_index: Vec<usize>,
    /// Current filter coefficients, `b[n * k + j]` holds b_{n, j+1}.
    pub b: Vec<f64>,
    pub eps: Vec<f64>,
}

/// `ω²y + δωv − ϱω²y_delayed`.
pub fn compute_g(omega: f64, t: &Triplet, y: f64, v: f64, y_delayed: f64) -> f64 {
    omega * omega * (y - t.rho * y_delayed) + t.delta * omega * v
}

/// `Σ_k b_k h_k` where `history[k-1]` holds `(v̇ + g)[t − kΔt]`.
pub fn history_sum(b: &[f64], history: &[f64]) -> f64 {
    b.iter().zip(history).map(|(b, h)| b * h).sum()
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth- minus fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Stepper holding state, histories and the factored coupling matrix.
pub struct Simulator<'m, 'l> {
    model: &'m TlModel,
    mechanics: Mechanics,
    filters: Filters<'l>,
    knees: Option<Knees>,
    update_period: usize,
    pub state: TlState,
    k: usize,
    has_filters: bool,
    drive: f64,
    dt: f64,
    /// Delay per section in base steps (ψ/ω · fs).
    delay: Vec<f64>,
    ydelay: DelayLine,
    env: Envelope,
    /// Ring of committed (v̇ + g) samples, `hist[slot * n + section]`.
    hist: Vec<f64>,
    depth: usize,
    /// Spline points S_{i−1..i+2} of the k ≥ 2 history sum.
    spline: [Vec<f64>; 4],
    spline_valid: bool,
    /// b_1 h[i−2], b_1 h[i−1], b_1 h[i].
    lag: [Vec<f64>; 3],
    base_matrix: Tridiagonal<f64>,
    factor: ThomasFactor<f64>,
    start_triplets: Vec<Triplet>,
    sat_triplets: Vec<Triplet>,
    substeps: usize,
    pub last_substeps: usize,
    scratch: Scratch,
}

#[derive(Default)]
struct Scratch {
    ky: Vec<Vec<f64>>,
    kv: Vec<Vec<f64>>,
    g: Vec<f64>,
    rhs: Vec<f64>,
    y: Vec<f64>,
    v: Vec<f64>,
    y0: Vec<f64>,
    v0: Vec<f64>,
    k1: Vec<f64>,
    buf: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            ky: vec![vec![0.0; n]; 7],
            kv: vec![vec![0.0; n]; 7],
            g: vec![0.0; n],
            rhs: vec![0.0; n],
            y: vec![0.0; n],
            v: vec![0.0; n],
            y0: vec![0.0; n],
            v0: vec![0.0; n],
            k1: vec![0.0; n],
            buf: vec![0.0; n],
        }
    }
}

/// Outcome of integrating one base step with a fixed substep count.
enum Attempt {
    Accepted { max_err: f64 },
    Rejected { section: usize },
}

impl<'m, 'l> Simulator<'m, 'l> {
    pub fn new(model: &'m TlModel, opts: &RunOptions<'l>) -> Result<Self> {
        let p = &model.params;
        let geom = &model.geometry;
        let n = geom.len();
        if opts.decimation == 0 || opts.update_period == 0 {
            return Err(Error::Config("decimation and update period must be at least 1".into()));
        }
        if let Some(&bad) = opts.record.iter().find(|&&s| s >= n) {
            return Err(Error::Config(format!("recorded section {bad} out of range 0..{n}")));
        }
        let needs_knees = opts.mechanics == Mechanics::Compressive
            || matches!(opts.filters, Filters::Dynamic(_));
        if needs_knees && opts.knees.is_none() {
            return Err(Error::Config("compressive runs need calibrated knees".into()));
        }
        let k = p.k;
        let (has_filters, lut) = match opts.filters {
            Filters::None => (false, None),
            Filters::Fixed { lut, .. } | Filters::Dynamic(lut) => (true, Some(lut)),
        };
        if let Some(lut) = lut {
            lut.check_params(p)?;
        }

        let mut start_triplets = Vec::with_capacity(n);
        let mut sat_triplets = Vec::with_capacity(n);
        for s in &geom.sections {
            start_triplets.push(Triplet::from_pole(s.poles.start)?);
            sat_triplets.push(Triplet::from_pole(s.poles.sat)?);
        }
        let triplet: Vec<Triplet> = match opts.mechanics {
            Mechanics::Passive => vec![Triplet::passive(model.config.passive_delta); n],
            Mechanics::Starting | Mechanics::Compressive => start_triplets.clone(),
            Mechanics::Saturating => sat_triplets.clone(),
        };
        let max_delay = if opts.mechanics == Mechanics::Passive {
            0.0
        } else {
            let lo = geom.min_delay_steps(p.fs)?;
            if lo <= 2.0 {
                return Err(Error::Config(format!(
                    "delayed-stiffness lag of {lo:.2} samples is too short for fs = {} Hz",
                    p.fs
                )));
            }
            geom.max_delay_steps(p.fs)?
        };
        let delay = triplet
            .iter()
            .zip(&geom.sections)
            .map(|(t, s)| t.psi / s.omega * p.fs)
            .collect();

        let mut lower = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for i in 0..n {
            let (l, d, u) = geom.coupling(i);
            lower.push(l);
            diag.push(d);
            upper.push(u);
        }
        let base_matrix = Tridiagonal::new(lower, diag, upper)?;
        let mut a = base_matrix.clone();
        for d in &mut a.diag {
            *d += 1.0;
        }
        let factor = a.factor()?;

        let g0 = match opts.filters {
            Filters::Fixed { g, .. } => g,
            _ => p.g_max,
        };
        let depth = k + 3;
        let mut sim = Self {
            model,
            mechanics: opts.mechanics,
            filters: opts.filters,
            knees: opts.knees,
            update_period: opts.update_period,
            state: TlState {
                step: 0,
                y: vec![0.0; n],
                v: vec![0.0; n],
                triplet,
                g_active: vec![g0; n],
                g_index: vec![usize::MAX; n],
                b: vec![0.0; n * k],
                eps: vec![0.0; n],
            },
            k,
            has_filters,
            drive: geom.drive_coefficient(&model.config),
            dt: p.dt(),
            delay,
            ydelay: DelayLine::new(n, max_delay)?,
            env: Envelope::for_sections(&geom.cf_hz(), p.fs)?,
            hist: vec![0.0; depth * n],
            depth,
            spline: std::array::from_fn(|_| vec![0.0; n]),
            spline_valid: false,
            lag: std::array::from_fn(|_| vec![0.0; n]),
            base_matrix,
            factor,
            start_triplets,
            sat_triplets,
            substeps: 1,
            last_substeps: 1,
            scratch: Scratch::new(n),
        };
        if let Filters::Fixed { lut, g } = opts.filters {
            let gi = lut.g_index(g);
            sim.load_filters(lut, &vec![gi; n])?;
        }
        Ok(sim)
    }

    pub fn n_sections(&self) -> usize {
        self.state.y.len()
    }

    pub fn envelope(&self) -> &[f64] {
        self.env.levels()
    }

    fn load_filters(&mut self, lut: &FilterLut, idx: &[usize]) -> Result<()> {
        let k = self.k;
        let mut changed = false;
        for (n, &gi) in idx.iter().enumerate() {
            if self.state.g_index[n] == gi {
                continue;
            }
            let (b, eps) = lut.coefficients(n, gi);
            self.state.b[n * k..(n + 1) * k].copy_from_slice(b);
            self.state.eps[n] = eps;
            self.state.g_index[n] = gi;
            changed = true;
        }
        if changed {
            let mut a = self.base_matrix.clone();
            for (d, e) in a.diag.iter_mut().zip(&self.state.eps) {
                *d += 1.0 + e;
            }
            self.factor = a.factor()?;
            self.spline_valid = false;
        }
        Ok(())
    }

    fn hist_at(&self, idx: i64, n: usize) -> f64 {
        if idx < 0 {
            return 0.0;
        }
        let slot = (idx as u64 % self.depth as u64) as usize;
        self.hist[slot * self.n_sections() + n]
    }

    /// `S_j = Σ_{k≥2} b_k h[j − k]` for all sections into `out`.
    fn spline_point(&self, j: i64, out: &mut [f64]) {
        let n_sec = self.n_sections();
        out.iter_mut().for_each(|x| *x = 0.0);
        for kk in 2..=self.k {
            let idx = j - kk as i64;
            if idx < 0 {
                continue;
            }
            let slot = (idx as u64 % self.depth as u64) as usize;
            let h = &self.hist[slot * n_sec..(slot + 1) * n_sec];
            for (n, o) in out.iter_mut().enumerate() {
                *o += self.state.b[n * self.k + kk - 1] * h[n];
            }
        }
    }

    /// Level-dependent updates performed at the base-step boundary.
    fn boundary_updates(&mut self) -> Result<()> {
        let i = self.state.step;
        let p = &self.model.params;
        self.env.update(&self.state.v);
        if self.mechanics == Mechanics::Compressive {
            let knees = self.knees.expect("checked at construction");
            let (v1, v2) = (knees.v1(), knees.v2());
            for n in 0..self.n_sections() {
                let s = &self.model.geometry.sections[n];
                let speed = self.state.v[n].abs();
                let t = if speed <= v1 {
                    self.start_triplets[n]
                } else if speed >= v2 {
                    self.sat_triplets[n]
                } else {
                    Triplet::from_pole(s.poles.pole(speed, &knees))?
                };
                self.state.triplet[n] = t;
                self.delay[n] = t.psi / s.omega * p.fs;
            }
        }
        if let Filters::Dynamic(lut) = self.filters {
            if i.is_multiple_of(self.update_period as u64) {
                let knees = self.knees.expect("checked at construction");
                let mut idx = Vec::with_capacity(self.n_sections());
                for (n, &level) in self.env.levels().iter().enumerate() {
                    let i_db = if level > 0.0 { 10.0 * level.log10() } else { f64::NEG_INFINITY };
                    let g = g_strength(i_db, &knees, p.g_min, p.g_max);
                    self.state.g_active[n] = g;
                    idx.push(lut.g_index(g));
                }
                self.load_filters(lut, &idx)?;
            }
        }
        Ok(())
    }

    /// Prepares the history interpolants that do not need h[i].
    fn prepare_history(&mut self) {
        if !self.has_filters {
            return;
        }
        let i = self.state.step as i64;
        let n_sec = self.n_sections();
        let k = self.k;
        for n in 0..n_sec {
            let b1 = self.state.b[n * k];
            self.lag[0][n] = b1 * self.hist_at(i - 2, n);
            self.lag[1][n] = b1 * self.hist_at(i - 1, n);
        }
        if self.spline_valid {
            self.spline.rotate_left(1);
        } else {
            let mut buf = std::mem::take(&mut self.scratch.buf);
            for (j, off) in [-1i64, 0, 1].into_iter().enumerate() {
                self.spline_point(i + off, &mut buf);
                self.spline[j].copy_from_slice(&buf);
            }
            self.scratch.buf = buf;
        }
        self.spline_valid = false;
    }

    /// Stores h[i] and completes the interpolants that need it.
    fn commit_history(&mut self, sc: &Scratch) {
        if !self.has_filters {
            return;
        }
        let i = self.state.step as i64;
        let n_sec = self.n_sections();
        let slot = (i as u64 % self.depth as u64) as usize;
        for n in 0..n_sec {
            self.hist[slot * n_sec + n] = sc.kv[0][n] + sc.g[n];
        }
        for n in 0..n_sec {
            self.lag[2][n] = self.state.b[n * self.k] * self.hist_at(i, n);
        }
        let mut s3 = std::mem::take(&mut self.spline[3]);
        self.spline_point(i + 2, &mut s3);
        self.spline[3] = s3;
        self.spline_valid = true;
    }


    /// Acceleration at base-step fraction `theta` for state `(y, v)` with
    /// stimulus pressure `stim`. Leaves the restoring term in `g`.
    #[allow(clippy::too_many_arguments)]
    fn accel(
        &self,
        y: &[f64],
        v: &[f64],
        theta: f64,
        stim: f64,
        g: &mut [f64],
        rhs: &mut [f64],
        acc: &mut [f64],
    ) {
        let sections = &self.model.geometry.sections;
        let pos = self.state.step as f64 + theta;
        for n in 0..y.len() {
            let t = &self.state.triplet[n];
            let yd = if t.rho != 0.0 {
                self.ydelay.read(n, pos - self.delay[n])
            } else {
                0.0
            };
            g[n] = compute_g(sections[n].omega, t, y[n], v[n], yd);
        }
        if self.has_filters {
            let wl = lagrange3_weights(1.0 + theta);
            let wc = catmull_rom_weights(theta);
            for n in 0..y.len() {
                let q = wl[0] * self.lag[0][n]
                    + wl[1] * self.lag[1][n]
                    + wl[2] * self.lag[2][n]
                    + wc[0] * self.spline[0][n]
                    + wc[1] * self.spline[1][n]
                    + wc[2] * self.spline[2][n]
                    + wc[3] * self.spline[3][n];
                acc[n] = q;
                rhs[n] = g[n] - q;
            }
        } else {
            rhs.copy_from_slice(g);
            acc.iter_mut().for_each(|a| *a = 0.0);
        }
        rhs[0] += self.drive * stim;
        self.factor.solve_in_place(rhs);
        for n in 0..y.len() {
            acc[n] += (1.0 + self.state.eps[n]) * rhs[n] - g[n];
        }
    }

    /// Advances the state by one base step; `s_now` and `s_next` are the
    /// stimulus samples at the step's ends.
    pub fn step(&mut self, s_now: f64, s_next: f64) -> Result<()> {
        self.boundary_updates()?;
        self.ydelay.push(&self.state.y);
        self.prepare_history();

        let mut sc = std::mem::take(&mut self.scratch);
        {
            let Scratch { kv, g, rhs, .. } = &mut sc;
            self.accel(&self.state.y, &self.state.v, 0.0, s_now, g, rhs, &mut kv[0]);
        }
        self.commit_history(&sc);
        sc.k1.copy_from_slice(&sc.kv[0]);
        sc.y0.copy_from_slice(&self.state.y);
        sc.v0.copy_from_slice(&self.state.v);

        let mut m = self.substeps;
        let result = loop {
            match self.integrate(&mut sc, m, s_now, s_next) {
                Attempt::Accepted { max_err } => break Ok(max_err),
                Attempt::Rejected { section } => {
                    self.state.y.copy_from_slice(&sc.y0);
                    self.state.v.copy_from_slice(&sc.v0);
                    if 2 * m > self.model.config.max_substeps {
                        break Err(Error::Stiffness {
                            t: self.state.step as f64 * self.dt,
                            section,
                            dt: self.dt / (2 * m) as f64,
                        });
                    }
                    m *= 2;
                }
            }
        };
        self.scratch = sc;
        let max_err = result?;
        self.last_substeps = m;
        // fifth order: doubling the substep scales the error by 32
        self.substeps = if m > 1 && max_err < 1.0 / 64.0 { m / 2 } else { m };
        self.state.step += 1;
        Ok(())
    }

    fn integrate(&mut self, sc: &mut Scratch, m: usize, s_now: f64, s_next: f64) -> Attempt {
        let n_sec = self.n_sections();
        let h = self.dt / m as f64;
        let mut max_err: f64 = 0.0;
        sc.kv[0].copy_from_slice(&sc.k1);
        for sub in 0..m {
            let theta0 = sub as f64 / m as f64;
            sc.ky[0].copy_from_slice(&self.state.v);
            for j in 1..7 {
                {
                    let Scratch { ky, kv, y, v, .. } = &mut *sc;
                    for n in 0..n_sec {
                        let mut dy = 0.0;
                        let mut dv = 0.0;
                        for l in 0..j {
                            dy += A[j][l] * ky[l][n];
                            dv += A[j][l] * kv[l][n];
                        }
                        y[n] = self.state.y[n] + h * dy;
                        v[n] = self.state.v[n] + h * dv;
                    }
                }
                let theta = theta0 + C[j] / m as f64;
                let stim = s_now + theta * (s_next - s_now);
                let Scratch { ky, kv, g, rhs, y, v, .. } = &mut *sc;
                ky[j].copy_from_slice(v);
                self.accel(y, v, theta, stim, g, rhs, &mut kv[j]);
            }
            // stage 7 sits at the fifth-order solution
            let sections = &self.model.geometry.sections;
            let mut scale: f64 = 0.0;
            let mut worst = (0.0f64, 0usize);
            for n in 0..n_sec {
                let w = sections[n].omega;
                let mut ey = 0.0;
                let mut ev = 0.0;
                for j in 0..7 {
                    ey += E[j] * sc.ky[j][n];
                    ev += E[j] * sc.kv[j][n];
                }
                let e = (h * ev).abs().max(w * (h * ey).abs());
                if !(e <= worst.0) {
                    worst = (e, n);
                }
                scale = scale
                    .max(self.state.v[n].abs())
                    .max(w * self.state.y[n].abs())
                    .max(sc.v[n].abs())
                    .max(w * sc.y[n].abs());
            }
            let err = worst.0 / (self.model.config.atol + self.model.config.rtol * scale);
            if !(err <= 1.0) {
                return Attempt::Rejected { section: worst.1 };
            }
            max_err = max_err.max(err);
            self.state.y.copy_from_slice(&sc.y);
            self.state.v.copy_from_slice(&sc.v);
            let (head, tail) = sc.kv.split_at_mut(6);
            head[0].copy_from_slice(&tail[0]);
        }
        Attempt::Accepted { max_err }
    }
}
