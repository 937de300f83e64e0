//! Diffeomorphic registration of coefficient volumes: momentum
//! parameterisation, flow, matching energy, adjoint gradient and the
//! conjugate-gradient optimiser.

mod energy;
mod flow;
mod kernel;

pub use energy::{gradient_e, matching_energy, MatchEval, MatchingProblem, ROTATION_DELTA};
pub use flow::{adjoint_backward, flow_forward, kinetic_energy, metric_per_step, Adjoint, Flow};
pub use kernel::{kernel_apply, GaussianKernel};

use crate::error::{Error, Result};
use crate::field::{CoefficientField, DeformationField, Grid};

/// Momentum vectors at the control points for each Euler step.
///
/// A path with `T` time samples has `T − 1` steps of size `1/(T − 1)`;
/// `alpha` holds one slice of control-point momenta per step.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumTrajectory {
    grid: Grid,
    control: Vec<usize>,
    sigma: f64,
    time_samples: usize,
    alpha: Vec<[f64; 3]>,
}

impl MomentumTrajectory {
    pub fn zeros(grid: Grid, control: Vec<usize>, sigma: f64, time_samples: usize) -> Result<Self> {
        let n = (time_samples.max(2) - 1) * control.len();
        Self::new(grid, control, sigma, time_samples, vec![[0.0; 3]; n])
    }

    pub fn new(grid: Grid, control: Vec<usize>, sigma: f64, time_samples: usize, alpha: Vec<[f64; 3]>) -> Result<Self> {
        if time_samples < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 time samples, got {time_samples}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("kernel width must be positive, got {sigma}")));
        }
        if control.is_empty() {
            return Err(Error::Empty("control points"));
        }
        if let Some(&c) = control.iter().find(|&&c| c >= grid.len()) {
            return Err(Error::InvalidArgument(format!("control point {c} outside grid")));
        }
        let expected = (time_samples - 1) * control.len();
        if alpha.len() != expected {
            return Err(Error::Dimension { expected, got: alpha.len() });
        }
        Ok(MomentumTrajectory { grid, control, sigma, time_samples, alpha })
    }

    /// Every `stride`-th voxel along each axis as control points.
    pub fn strided(grid: Grid, stride: usize, sigma: f64, time_samples: usize) -> Result<Self> {
        Self::zeros(grid, grid.strided(stride), sigma, time_samples)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn control(&self) -> &[usize] {
        &self.control
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn time_samples(&self) -> usize {
        self.time_samples
    }

    pub fn steps(&self) -> usize {
        self.time_samples - 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps() as f64
    }

    pub fn alpha(&self) -> &[[f64; 3]] {
        &self.alpha
    }

    pub fn alpha_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.alpha
    }

    /// Momenta of step `k`.
    pub fn slice(&self, k: usize) -> &[[f64; 3]] {
        let c = self.control.len();
        &self.alpha[k * c..(k + 1) * c]
    }

    pub fn is_zero(&self) -> bool {
        self.alpha.iter().flatten().all(|v| *v == 0.0)
    }

    /// `α ← α + s·d`.
    pub fn axpy(&mut self, s: f64, d: &[[f64; 3]]) {
        for (a, b) in self.alpha.iter_mut().zip(d) {
            for i in 0..3 {
                a[i] += s * b[i];
            }
        }
    }

    fn with_step(&self, s: f64, d: &[[f64; 3]]) -> Self {
        let mut m = self.clone();
        m.axpy(s, d);
        m
    }
}

/// Optimiser settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationParams {
    /// Kernel width in mm.
    pub sigma_v: f64,
    /// Weight of the matching term.
    pub lambda: f64,
    /// Number of time samples `T` (steps = `T − 1`).
    pub time_samples: usize,
    pub max_iter: usize,
    /// Stop when the relative decrease of `J` stays below this for three
    /// consecutive iterations.
    pub tol: f64,
    /// Control-point stride along each axis.
    pub stride: usize,
    /// Include the reorientation part of the gradient.
    pub term_b: bool,
    /// Objective evaluations per golden-section search (at most 20).
    pub line_search_evals: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            sigma_v: 10.0,
            lambda: 1.0,
            time_samples: 10,
            max_iter: 100,
            tol: 1e-4,
            stride: 1,
            term_b: true,
            line_search_evals: 12,
        }
    }
}

impl RegistrationParams {
    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.sigma_v > 0.0 && self.sigma_v.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma_v must be positive, got {}", self.sigma_v)));
        }
        if self.time_samples < 2 {
            return Err(Error::InvalidArgument("at least 2 time samples are required".into()));
        }
        if !(3..=20).contains(&self.line_search_evals) {
            return Err(Error::InvalidArgument("line search evaluations must lie in 3..=20".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of the optimiser log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationReport {
    pub iter: usize,
    pub j: f64,
    /// Kinetic energy `Σ_k dt⟨α_k, Kα_k⟩`.
    pub metric: f64,
    pub energy: f64,
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
    /// No step along the search direction decreased `J`; the best iterate
    /// is returned.
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct Registration {
    pub momentum: MomentumTrajectory,
    pub phi: DeformationField,
    pub report: Vec<IterationReport>,
    pub status: Status,
}

impl Registration {
    pub fn initial_energy(&self) -> f64 {
        self.report[0].energy
    }

    pub fn final_energy(&self) -> f64 {
        self.report.last().expect("report starts at iteration 0").energy
    }

    pub fn final_objective(&self) -> f64 {
        self.report.last().expect("report starts at iteration 0").j
    }
}

/// Objective `J(α) = Σ_k dt⟨α_k, Kα_k⟩ + λ E(φ_1)`.
pub struct Objective<'a> {
    problem: &'a MatchingProblem,
    lambda: f64,
    term_b: bool,
}

/// State of the objective at one momentum.
#[derive(Clone, Debug)]
pub struct ObjectivePoint {
    pub j: f64,
    pub metric: f64,
    pub energy: f64,
    pub flow: Flow,
    pub eval: MatchEval,
}

/// Derivatives of `J` with respect to the momenta.
#[derive(Clone, Debug)]
pub struct ObjectiveGradient {
    /// Euclidean gradient `∂J/∂α`.
    pub euclidean: Vec<[f64; 3]>,
    /// Search direction used by the optimiser (`2α + η` when every grid
    /// voxel is a control point, `∂J/∂α / dt` otherwise).
    pub direction: Vec<[f64; 3]>,
}

impl<'a> Objective<'a> {
    pub fn new(problem: &'a MatchingProblem, lambda: f64, term_b: bool) -> Self {
        Objective { problem, lambda, term_b }
    }

    pub fn evaluate(&self, m: &MomentumTrajectory) -> Result<ObjectivePoint> {
        let flow = flow_forward(m)?;
        let metric = kinetic_energy(m, &flow)?;
        let eval = self.problem.evaluate(&flow.endpoint()?)?;
        Ok(ObjectivePoint { j: metric + self.lambda * eval.energy, metric, energy: eval.energy, flow, eval })
    }

    pub fn gradient(&self, m: &MomentumTrajectory, at: &ObjectivePoint) -> Result<ObjectiveGradient> {
        let mut terminal = self.problem.gradient(&at.eval, self.term_b)?;
        for v in terminal.iter_mut() {
            for x in v.iter_mut() {
                *x *= self.lambda;
            }
        }
        let adj = adjoint_backward(m, &at.flow, &terminal)?;
        let direction = if m.control().len() == m.grid().len() {
            adj.kernel_gradient
        } else {
            let inv = 1.0 / m.dt();
            adj.gradient.iter().map(|g| [g[0] * inv, g[1] * inv, g[2] * inv]).collect()
        };
        Ok(ObjectiveGradient { euclidean: adj.gradient, direction })
    }
}

fn dot(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x[0] * y[0] + x[1] * y[1] + x[2] * y[2]).sum()
}

/// Register `atlas` onto `subject`: find momenta whose flow `φ_1` makes
/// `φ_1 · atlas` match `subject`.
pub fn register(atlas: &CoefficientField, subject: &CoefficientField, params: &RegistrationParams) -> Result<Registration> {
    let problem = MatchingProblem::new(atlas.clone(), subject.clone(), None)?;
    register_problem(&problem, params, None)
}

/// Optimiser on an arbitrary matching problem, optionally warm-started.
pub fn register_problem(
    problem: &MatchingProblem,
    params: &RegistrationParams,
    init: Option<MomentumTrajectory>,
) -> Result<Registration> {
    params.validate()?;
    let grid = *problem.atlas().grid();
    let mut m = match init {
        Some(m) => m,
        None => MomentumTrajectory::strided(grid, params.stride, params.sigma_v, params.time_samples)?,
    };
    let objective = Objective::new(problem, params.lambda, params.term_b);
    let mut cur = objective.evaluate(&m)?;
    let mut report = vec![IterationReport { iter: 0, j: cur.j, metric: cur.metric, energy: cur.energy, step: 0.0 }];
    let mut status = Status::MaxIterations;
    let mut eps_max: Option<f64> = None;
    let mut prev: Option<(ObjectiveGradient, Vec<[f64; 3]>)> = None;
    let mut since_restart = 0;
    let mut small = 0;

    if cur.energy == 0.0 && m.is_zero() {
        status = Status::Converged;
    }
    let mut iter = 0;
    while status == Status::MaxIterations && iter < params.max_iter {
        iter += 1;
        let grad = objective.gradient(&m, &cur)?;
        let gp = dot(&grad.euclidean, &grad.direction);
        if !(gp > 0.0) {
            status = Status::Converged;
            break;
        }
        let mut d = grad.direction.clone();
        if let Some((pg, pd)) = &prev {
            if since_restart < 10 {
                let num: f64 = grad
                    .euclidean
                    .iter()
                    .zip(grad.direction.iter().zip(&pg.direction))
                    .map(|(g, (p, q))| g[0] * (p[0] - q[0]) + g[1] * (p[1] - q[1]) + g[2] * (p[2] - q[2]))
                    .sum();
                let den = dot(&pg.euclidean, &pg.direction);
                let beta = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
                if beta > 0.0 {
                    for (di, pi) in d.iter_mut().zip(pd) {
                        for k in 0..3 {
                            di[k] += beta * pi[k];
                        }
                    }
                }
            }
        }
        let mut steepest = false;
        if !(dot(&grad.euclidean, &d) > 0.0) || since_restart >= 10 {
            d = grad.direction.clone();
            steepest = true;
        }
        let emax = match eps_max {
            Some(e) => e,
            None => initial_step(&m, &cur.flow, &d, grid.min_spacing())?,
        };

        let mut accepted = None;
        let mut trial_max = emax;
        for _attempt in 0..4 {
            let (eps, point) = golden_section(&objective, &m, &d, trial_max, params.line_search_evals);
            if let Some(p) = point.filter(|p| p.j < cur.j) {
                accepted = Some((eps, p, trial_max));
                break;
            }
            if !steepest {
                d = grad.direction.clone();
                steepest = true;
            } else {
                trial_max *= 0.1;
            }
        }
        let Some((eps, point, used_max)) = accepted else {
            status = Status::LineSearchFailed;
            break;
        };
        eps_max = Some(if eps > 0.7 * used_max {
            2.0 * used_max
        } else if eps < 0.2 * used_max {
            0.5 * used_max
        } else {
            used_max
        });
        m.axpy(-eps, &d);
        let rel = (cur.j - point.j) / cur.j.abs().max(f64::MIN_POSITIVE);
        cur = point;
        report.push(IterationReport { iter, j: cur.j, metric: cur.metric, energy: cur.energy, step: eps });
        since_restart = if steepest { 1 } else { since_restart + 1 };
        prev = Some((grad, d));
        small = if rel < params.tol { small + 1 } else { 0 };
        if small >= 3 {
            status = Status::Converged;
        }
    }
    let phi = cur.flow.endpoint()?;
    Ok(Registration { momentum: m, phi, report, status })
}

/// Step length that moves the fastest particle by about one voxel.
fn initial_step(m: &MomentumTrajectory, flow: &Flow, d: &[[f64; 3]], spacing: f64) -> Result<f64> {
    let kernel = GaussianKernel::new(m.sigma())?;
    let c = m.control().len();
    let mut vmax: f64 = 0.0;
    for k in 0..m.steps() {
        let pos = flow.positions(k);
        let ctrl: Vec<[f64; 3]> = m.control().iter().map(|&i| pos[i]).collect();
        let v = kernel.apply(&ctrl, &ctrl, &d[k * c..(k + 1) * c]);
        for x in v {
            vmax = vmax.max((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt());
        }
    }
    if !(vmax > 0.0) {
        return Err(Error::Divergence("search direction has no velocity".into()));
    }
    Ok(spacing / vmax)
}

/// Golden-section search for the minimum of `J(α − ε d)` on `[0, eps_max]`,
/// treating failed evaluations (folding, divergence) as `+∞`.
fn golden_section(
    objective: &Objective,
    m: &MomentumTrajectory,
    d: &[[f64; 3]],
    eps_max: f64,
    evals: usize,
) -> (f64, Option<ObjectivePoint>) {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut best: (f64, Option<ObjectivePoint>) = (0.0, None);
    let mut best_j = f64::INFINITY;
    let mut f = |eps: f64, best: &mut (f64, Option<ObjectivePoint>)| -> f64 {
        match objective.evaluate(&m.with_step(-eps, d)) {
            Ok(p) if p.j.is_finite() => {
                let j = p.j;
                if j < best_j {
                    best_j = j;
                    *best = (eps, Some(p));
                }
                j
            }
            _ => f64::INFINITY,
        }
    };
    let (mut a, mut b) = (0.0, eps_max);
    f(b, &mut best);
    let mut c = b - ratio * (b - a);
    let mut e = a + ratio * (b - a);
    let mut fc = f(c, &mut best);
    let mut fe = f(e, &mut best);
    for _ in 3..evals {
        if fc <= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - ratio * (b - a);
            fc = f(c, &mut best);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + ratio * (b - a);
            fe = f(e, &mut best);
        }
    }
    best
}

/// Weighted (modified) registration: minimise
/// `⟨m, Km⟩ + (1/σ²) Σ α(y) ‖(φ·c₀)(y) − target(y)‖² ΔV`, optionally
/// warm-started from `init`.
pub fn weighted_register(
    hyperatlas: &CoefficientField,
    target: &CoefficientField,
    weights: &[f64],
    sigma2: f64,
    params: &RegistrationParams,
    init: Option<MomentumTrajectory>,
) -> Result<Registration> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma² must be positive, got {sigma2}")));
    }
    let w: Vec<f64> = weights.iter().map(|a| a / sigma2).collect();
    let problem = MatchingProblem::new(hyperatlas.clone(), target.clone(), Some(w))?;
    let params = RegistrationParams { lambda: 1.0, ..params.clone() };
    register_problem(&problem, &params, init)
}
