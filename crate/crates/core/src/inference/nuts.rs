//! No-U-Turn sampler with multinomial trajectory sampling, a diagonal
//! metric, and windowed warmup (dual-averaging step size plus metric
//! estimation in doubling windows).

use crate::model::{LogDensity, ModelError};
use rand::Rng;
use rand_distr::StandardNormal;

/// Energy error beyond which a trajectory is declared divergent.
const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NutsOptions {
    pub warmup: usize,
    pub draws: usize,
    pub max_depth: usize,
    pub target_accept: f64,
}

impl Default for NutsOptions {
    fn default() -> Self {
        Self {
            warmup: 2000,
            draws: 2000,
            max_depth: 10,
            target_accept: 0.8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// One row per kept draw.
    pub draws: Vec<Vec<f64>>,
    pub divergences: usize,
    pub max_depth_hits: usize,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub mean_accept: f64,
    pub gradient_evals: usize,
}

#[derive(Debug, Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Hamiltonian<'a, D: LogDensity> {
    target: &'a D,
    inv_metric: Vec<f64>,
    evals: usize,
}

impl<D: LogDensity> Hamiltonian<'_, D> {
    fn update(&mut self, z: &mut State) {
        self.evals += 1;
        z.logp = match self.target.log_density_and_gradient(&z.q, &mut z.grad) {
            Ok(v) if v.is_finite() && z.grad.iter().all(|g| g.is_finite()) => v,
            _ => f64::NEG_INFINITY,
        };
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_metric)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    fn energy(&self, z: &State) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn leapfrog(&mut self, z: &mut State, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        self.update(z);
        if z.logp.is_finite() {
            for (p, g) in z.p.iter_mut().zip(&z.grad) {
                *p += 0.5 * eps * g;
            }
        }
    }

    fn sample_momentum<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        for (p, m) in p.iter_mut().zip(&self.inv_metric) {
            let z: f64 = rng.sample(StandardNormal);
            *p = z / m.sqrt();
        }
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Per-transition bookkeeping shared by the recursion.
struct TreeStats {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Edge momenta of a subtree: `(p, p_sharp)` at its start and end.
struct Edges {
    p_beg: Vec<f64>,
    ps_beg: Vec<f64>,
    p_end: Vec<f64>,
    ps_end: Vec<f64>,
}

struct Transition {
    state: State,
    accept: f64,
    depth: usize,
    divergent: bool,
}

struct Sampler<'a, D: LogDensity, R: Rng> {
    ham: Hamiltonian<'a, D>,
    rng: &'a mut R,
    eps: f64,
    max_depth: usize,
}

impl<D: LogDensity, R: Rng> Sampler<'_, D, R> {
    /// Builds a subtree of `2^depth` leapfrog steps from `z`, which is
    /// advanced in place. Returns `None` when the subtree is invalid.
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut State,
        z_propose: &mut State,
        rho: &mut [f64],
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
        stats: &mut TreeStats,
    ) -> Option<Edges> {
        if depth == 0 {
            self.ham.leapfrog(z, sign * self.eps);
            stats.n_leapfrog += 1;
            let h = self.ham.energy(z);
            if h - h0 > MAX_DELTA_H {
                stats.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            stats.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            if stats.divergent {
                return None;
            }
            let ps = self.ham.p_sharp(&z.p);
            return Some(Edges {
                p_beg: z.p.clone(),
                ps_beg: ps.clone(),
                p_end: z.p.clone(),
                ps_end: ps,
            });
        }

        let dim = rho.len();
        let mut rho_init = vec![0.0; dim];
        let mut lsw_init = f64::NEG_INFINITY;
        let init = self.build_tree(
            depth - 1,
            z,
            z_propose,
            &mut rho_init,
            h0,
            sign,
            &mut lsw_init,
            stats,
        )?;

        let mut z_propose_final = z.clone();
        let mut rho_final = vec![0.0; dim];
        let mut lsw_final = f64::NEG_INFINITY;
        let fin = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut rho_final,
            h0,
            sign,
            &mut lsw_final,
            stats,
        )?;

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || self.rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = no_u_turn(&init.ps_beg, &fin.ps_end, &rho_subtree);
        persist &= no_u_turn(&init.ps_beg, &fin.ps_beg, &add(&rho_init, &fin.p_beg));
        persist &= no_u_turn(&init.ps_end, &fin.ps_end, &add(&rho_final, &init.p_end));
        persist.then_some(Edges {
            p_beg: init.p_beg,
            ps_beg: init.ps_beg,
            p_end: fin.p_end,
            ps_end: fin.ps_end,
        })
    }

    fn transition(&mut self, current: &State) -> Transition {
        let mut z0 = current.clone();
        self.ham.sample_momentum(&mut z0.p, self.rng);
        let h0 = self.ham.energy(&z0);
        let ps0 = self.ham.p_sharp(&z0.p);

        let mut z_fwd = z0.clone();
        let mut z_bck = z0.clone();
        let mut z_sample = z0.clone();
        let mut z_propose = z0.clone();

        // Outer edges of the whole trajectory, as (p, p_sharp) pairs.
        let mut ps_fwd_fwd = ps0.clone();
        let (mut p_fwd_bck, mut ps_fwd_bck) = (z0.p.clone(), ps0.clone());
        let (mut p_bck_fwd, mut ps_bck_fwd) = (z0.p.clone(), ps0.clone());
        let mut ps_bck_bck = ps0;
        let mut rho = z0.p.clone();
        let mut log_sum_weight = 0.0;
        let mut depth = 0;
        let mut stats = TreeStats {
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
        };
        let dim = rho.len();

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid;
            if self.rng.random::<f64>() > 0.5 {
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                ps_bck_fwd.clone_from(&ps_fwd_bck);
                let edges = self.build_tree(
                    depth,
                    &mut z_fwd,
                    &mut z_propose,
                    &mut rho_fwd,
                    h0,
                    1.0,
                    &mut lsw_subtree,
                    &mut stats,
                );
                valid = edges.is_some();
                if let Some(e) = edges {
                    p_fwd_bck = e.p_beg;
                    ps_fwd_bck = e.ps_beg;
                    ps_fwd_fwd = e.ps_end;
                }
            } else {
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                ps_fwd_bck.clone_from(&ps_bck_fwd);
                let edges = self.build_tree(
                    depth,
                    &mut z_bck,
                    &mut z_propose,
                    &mut rho_bck,
                    h0,
                    -1.0,
                    &mut lsw_subtree,
                    &mut stats,
                );
                valid = edges.is_some();
                if let Some(e) = edges {
                    p_bck_fwd = e.p_beg;
                    ps_bck_fwd = e.ps_beg;
                    ps_bck_bck = e.ps_end;
                }
            }
            if !valid {
                break;
            }
            depth += 1;

            // Biased progressive sampling favours the new subtree.
            if lsw_subtree > log_sum_weight
                || self.rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp()
            {
                z_sample.clone_from(&z_propose);
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

            rho = add(&rho_bck, &rho_fwd);
            let mut persist = no_u_turn(&ps_bck_bck, &ps_fwd_fwd, &rho);
            persist &= no_u_turn(&ps_bck_bck, &ps_fwd_bck, &add(&rho_bck, &p_fwd_bck));
            persist &= no_u_turn(&ps_bck_fwd, &ps_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
            if !persist {
                break;
            }
        }
        Transition {
            state: z_sample,
            accept: if stats.n_leapfrog > 0 {
                stats.sum_metro_prob / stats.n_leapfrog as f64
            } else {
                0.0
            },
            depth,
            divergent: stats.divergent,
        }
    }

    /// Doubles or halves the step size until a single leapfrog step crosses
    /// an acceptance probability of 0.8.
    fn init_step_size(&mut self, current: &State) {
        let mut z = current.clone();
        self.ham.sample_momentum(&mut z.p, self.rng);
        let h0 = self.ham.energy(&z);
        let delta_h = |s: &mut Self, z0: &State| {
            let mut z = z0.clone();
            s.ham.leapfrog(&mut z, s.eps);
            h0 - s.ham.energy(&z)
        };
        let mut dh = delta_h(self, &z);
        let direction = if dh > (0.8f64).ln() { 1.0 } else { -1.0 };
        for _ in 0..100 {
            self.ham.sample_momentum(&mut z.p, self.rng);
            let h0_new = self.ham.energy(&z);
            let mut zz = z.clone();
            self.ham.leapfrog(&mut zz, self.eps);
            dh = h0_new - self.ham.energy(&zz);
            if direction == 1.0 && !(dh > (0.8f64).ln()) {
                break;
            }
            if direction == -1.0 && !(dh < (0.8f64).ln()) {
                break;
            }
            self.eps = if direction == 1.0 {
                2.0 * self.eps
            } else {
                0.5 * self.eps
            };
            if !(1e-8..=1e7).contains(&self.eps) {
                self.eps = self.eps.clamp(1e-8, 1e7);
                break;
            }
        }
    }
}

/// Nesterov dual averaging of the log step size.
#[derive(Debug, Clone)]
struct DualAveraging {
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, delta: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
            delta,
        }
    }

    fn learn(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup schedule: fast initial buffer, doubling slow windows, final buffer.
#[derive(Debug, Clone)]
struct Windows {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    window_end: usize,
}

impl Windows {
    fn new(warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        if init + base + term > warmup {
            init = (0.15 * warmup as f64) as usize;
            term = (0.1 * warmup as f64) as usize;
            base = warmup.saturating_sub(init + term);
        }
        Self {
            warmup,
            init_buffer: init,
            term_buffer: term,
            window_size: base,
            window_end: init + base,
        }
    }

    fn in_slow_window(&self, it: usize) -> bool {
        it >= self.init_buffer
            && it < self.warmup.saturating_sub(self.term_buffer)
            && self.window_size > 0
    }

    fn is_window_end(&self, it: usize) -> bool {
        self.in_slow_window(it) && it + 1 == self.window_end
    }

    fn advance(&mut self) {
        let last = self.warmup - self.term_buffer;
        self.window_size *= 2;
        self.window_end += self.window_size;
        if self.window_end + 2 * self.window_size > last {
            self.window_end = last;
        }
    }
}

#[derive(Debug, Clone)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Sample variance shrunk towards `1e-3` as in standard practice.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| (n / (n + 5.0)) * s / (n - 1.0) + 1e-3 * (5.0 / (n + 5.0)))
            .collect()
    }
}

/// Runs one chain from `init`, returning kept draws after warmup.
pub fn run_chain<D: LogDensity, R: Rng>(
    target: &D,
    init: &[f64],
    opts: &NutsOptions,
    rng: &mut R,
) -> Result<ChainOutput, ModelError> {
    let dim = target.dim();
    let mut ham = Hamiltonian {
        target,
        inv_metric: vec![1.0; dim],
        evals: 0,
    };
    let mut current = State {
        q: init.to_vec(),
        p: vec![0.0; dim],
        grad: vec![0.0; dim],
        logp: 0.0,
    };
    ham.update(&mut current);
    if !current.logp.is_finite() {
        // Surface the model's own error message for the starting point.
        let mut g = vec![0.0; dim];
        target.log_density_and_gradient(init, &mut g)?;
        return Err(ModelError::NonFinite {
            index: 0,
            name: "initial point".into(),
        });
    }
    let mut s = Sampler {
        ham,
        rng,
        eps: 1.0,
        max_depth: opts.max_depth,
    };
    s.init_step_size(&current);
    let mut da = DualAveraging::new(s.eps, opts.target_accept);
    let mut windows = Windows::new(opts.warmup);
    let mut welford = Welford::new(dim);

    for it in 0..opts.warmup {
        let t = s.transition(&current);
        current = t.state;
        s.eps = da.learn(t.accept);
        if windows.in_slow_window(it) {
            welford.add(&current.q);
        }
        if windows.is_window_end(it) {
            s.ham.inv_metric = welford.regularized_variance();
            welford = Welford::new(dim);
            s.init_step_size(&current);
            da = DualAveraging::new(s.eps, opts.target_accept);
            windows.advance();
        }
    }
    if opts.warmup > 0 {
        s.eps = da.final_step();
    }

    let mut draws = Vec::with_capacity(opts.draws);
    let mut divergences = 0;
    let mut max_depth_hits = 0;
    let mut accept_sum = 0.0;
    for _ in 0..opts.draws {
        let t = s.transition(&current);
        current = t.state;
        divergences += t.divergent as usize;
        max_depth_hits += (t.depth >= opts.max_depth) as usize;
        accept_sum += t.accept;
        draws.push(current.q.clone());
    }
    Ok(ChainOutput {
        draws,
        divergences,
        max_depth_hits,
        step_size: s.eps,
        inv_metric: s.ham.inv_metric,
        mean_accept: accept_sum / opts.draws.max(1) as f64,
        gradient_evals: s.ham.evals,
    })
}
