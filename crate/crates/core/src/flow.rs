//! Minimizing-movement scheme over an abstract metric space.

use crate::error::{Result, VkError};
use crate::lbfgs::{self, LbfgsOptions};

/// Incremental objective `Phi(tau, prev; .)` in dof coordinates.
pub trait Incremental {
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// A metric space with an energy, discretized by finitely many dofs.
pub trait MetricSpace: Sync {
    type State: Clone + Send + Sync;

    fn energy(&self, s: &Self::State) -> Result<f64>;
    fn dist2(&self, a: &Self::State, b: &Self::State) -> Result<f64>;
    fn dofs(&self, s: &Self::State) -> Vec<f64>;
    /// Admissible state with dofs `x`; constraints are taken from `template`.
    fn project(&self, template: &Self::State, x: &[f64]) -> Result<Self::State>;
    fn incremental<'a>(&'a self, tau: f64, prev: &'a Self::State) -> Result<Box<dyn Incremental + 'a>>;

    /// Positive diagonal approximating the Hessian of the incremental objective at `prev`.
    fn preconditioner(&self, _tau: f64, _prev: &Self::State) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }

    /// Local slope of the energy, if the space can compute it.
    fn slope(&self, _s: &Self::State) -> Option<Result<f64>> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowOptions {
    pub lbfgs: LbfgsOptions,
    pub record_slopes: bool,
    pub precondition: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            lbfgs: LbfgsOptions::default(),
            record_slopes: false,
            precondition: true,
        }
    }
}

/// Inner-solver statistics of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    pub objective: f64,
    pub converged: bool,
    /// The solver ended above the warm start and the previous state was kept.
    pub kept_prev: bool,
}

/// One minimizing-movement step warm-started at `prev`.
pub fn mm_step<S: MetricSpace>(space: &S, tau: f64, prev: &S::State, opts: &FlowOptions) -> Result<(S::State, StepStats)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(VkError::config("run.tau", format!("must be positive, got {tau}")));
    }
    let prob = space.incremental(tau, prev)?;
    let h0 = if opts.precondition {
        space.preconditioner(tau, prev)?
    } else {
        None
    };
    let x0 = space.dofs(prev);
    let (f0, _) = prob.value_grad(&x0)?;
    if !f0.is_finite() {
        return Err(VkError::Numeric(format!("incremental objective not finite at the warm start: {f0}")));
    }
    let res = lbfgs::minimize(|x| prob.value_grad(x), x0.clone(), h0.as_deref(), &opts.lbfgs)?;
    let mut stats = StepStats {
        iterations: res.iterations,
        evaluations: res.evaluations,
        grad_norm: res.grad_norm,
        objective: res.f,
        converged: res.converged,
        kept_prev: false,
    };
    if res.f > f0 {
        stats.objective = f0;
        stats.kept_prev = true;
        return Ok((space.project(prev, &x0)?, stats));
    }
    Ok((space.project(prev, &res.x)?, stats))
}

/// Number of steps needed to reach `t_end`.
pub fn step_count(tau: f64, t_end: f64) -> usize {
    (t_end / tau - 1e-9).ceil().max(0.0) as usize
}

/// Record of a minimizing-movement run.
#[derive(Debug)]
pub struct Trajectory<T> {
    pub tau: f64,
    pub states: Vec<T>,
    /// `phi(Y_n)` for `n = 0..=N`.
    pub energies: Vec<f64>,
    /// `d_n = D(Y_{n-1}, Y_n)` for `n = 1..=N`.
    pub increments: Vec<f64>,
    /// Slopes at each recorded state, when requested.
    pub slopes: Option<Vec<f64>>,
    pub stats: Vec<StepStats>,
    /// Set when a step failed; the trajectory then stops early.
    pub failure: Option<VkError>,
    pub requested_steps: usize,
}

impl<T> Trajectory<T> {
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none() && self.n_steps() == self.requested_steps
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|n| n as f64 * self.tau).collect()
    }

    /// Piecewise-constant interpolant: `Y_n` on `((n-1) tau, n tau]`.
    pub fn index_at(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        step_count(self.tau, t).min(self.n_steps())
    }

    pub fn state_at(&self, t: f64) -> &T {
        &self.states[self.index_at(t)]
    }

    /// Metric speeds `d_n / tau`.
    pub fn speeds(&self) -> Vec<f64> {
        self.increments.iter().map(|d| d / self.tau).collect()
    }

    /// Tolerance of the per-step minimality certificate.
    pub fn certificate_eps(&self) -> f64 {
        1e-10 * (1.0 + self.energies[0].abs())
    }

    /// Largest excess of `phi(Y_n) + d_n^2/(2 tau)` over `phi(Y_{n-1})`; nonpositive when every
    /// step beats its warm start.
    pub fn certificate_excess(&self) -> f64 {
        (1..self.states.len())
            .map(|n| self.energies[n] + self.increments[n - 1].powi(2) / (2.0 * self.tau) - self.energies[n - 1])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum d_n^2/(2 tau) + sum tau g_n^2 / 2 + phi(Y_N) - phi(Y_0)` with slopes at `n = 1..=N`.
    pub fn energy_identity_defect(&self, slopes: &[f64]) -> Result<f64> {
        if slopes.len() != self.states.len() {
            return Err(VkError::LengthMismatch {
                expected: self.states.len(),
                got: slopes.len(),
            });
        }
        let tau = self.tau;
        let diss: f64 = self.increments.iter().map(|d| d * d / (2.0 * tau)).sum();
        let slope: f64 = slopes[1..].iter().map(|g| 0.5 * tau * g * g).sum();
        let n = self.n_steps();
        Ok(diss + slope + self.energies[n] - self.energies[0])
    }
}

/// Run `ceil(t_end/tau)` steps from `init`.
pub fn mm_run<S: MetricSpace>(
    space: &S,
    tau: f64,
    t_end: f64,
    init: S::State,
    opts: &FlowOptions,
) -> Result<Trajectory<S::State>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(VkError::config("run.tau", format!("must be positive, got {tau}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(VkError::config("run.t_end", format!("must be nonnegative, got {t_end}")));
    }
    let steps = step_count(tau, t_end);
    let e0 = space.energy(&init)?;
    let mut traj = Trajectory {
        tau,
        energies: vec![e0],
        increments: Vec::with_capacity(steps),
        slopes: None,
        stats: Vec::with_capacity(steps),
        failure: None,
        requested_steps: steps,
        states: vec![init],
    };
    let mut slopes = Vec::new();
    if opts.record_slopes {
        slopes.push(slope_of(space, &traj.states[0])?);
    }
    for _ in 0..steps {
        let prev = traj.states.last().expect("nonempty");
        let (next, stats) = match mm_step(space, tau, prev, opts) {
            Ok(r) => r,
            Err(e) => {
                traj.failure = Some(e);
                break;
            }
        };
        let d = space.dist2(prev, &next)?.max(0.0).sqrt();
        traj.energies.push(space.energy(&next)?);
        traj.increments.push(d);
        traj.stats.push(stats);
        if opts.record_slopes {
            slopes.push(slope_of(space, &next)?);
        }
        traj.states.push(next);
    }
    if opts.record_slopes {
        traj.slopes = Some(slopes);
    }
    Ok(traj)
}

fn slope_of<S: MetricSpace>(space: &S, s: &S::State) -> Result<f64> {
    space
        .slope(s)
        .unwrap_or_else(|| Err(VkError::Precondition("this space cannot compute slopes".into())))
}

/// `phi(x) = x^2/2` on the real line with `dist2(x, y) = (x - y)^2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ToySpace;

struct ToyIncremental {
    tau: f64,
    x0: f64,
}

impl Incremental for ToyIncremental {
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let y = x[0];
        let d = y - self.x0;
        Ok((0.5 * y * y + d * d / (2.0 * self.tau), vec![y + d / self.tau]))
    }
}

impl MetricSpace for ToySpace {
    type State = f64;

    fn energy(&self, s: &f64) -> Result<f64> {
        Ok(0.5 * s * s)
    }

    fn dist2(&self, a: &f64, b: &f64) -> Result<f64> {
        Ok((a - b) * (a - b))
    }

    fn dofs(&self, s: &f64) -> Vec<f64> {
        vec![*s]
    }

    fn project(&self, _template: &f64, x: &[f64]) -> Result<f64> {
        if x.len() != 1 {
            return Err(VkError::LengthMismatch { expected: 1, got: x.len() });
        }
        Ok(x[0])
    }

    fn incremental<'a>(&'a self, tau: f64, prev: &'a f64) -> Result<Box<dyn Incremental + 'a>> {
        Ok(Box::new(ToyIncremental { tau, x0: *prev }))
    }

    fn preconditioner(&self, tau: f64, _prev: &f64) -> Result<Option<Vec<f64>>> {
        Ok(Some(vec![1.0 + 1.0 / tau]))
    }

    fn slope(&self, s: &f64) -> Option<Result<f64>> {
        Some(Ok(s.abs()))
    }
}
