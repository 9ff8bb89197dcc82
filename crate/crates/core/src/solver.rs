//! Decision solvers: nominal projected ascent and two sampler-robust
//! variants, plus the robust-criterion evaluator they certify against.
//!
//! All three solvers share one driver so that a degenerate radius collapses
//! the robust methods onto the nominal one bit for bit: with `rho = 0` the
//! adversary never runs and the decision loop executes the identical
//! instruction sequence.
//!
//! The first-order method linearizes the inner minimization at the calibrated
//! parameters each step: the worst perturbation of a linear model over a norm
//! ball is the dual-norm step, applied here to the negated utility gradient
//! because the adversary descends utility. The two-timescale method instead
//! runs slow projected descent in parameters against fast projected ascent in
//! weights, tracking a genuinely adversarial parameter trajectory.
//!
//! Everything is deterministic given the config: the latent batch is sampled
//! once from the seed, reductions are sequential, and no time-dependent state
//! enters the loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{GenWorkspace, GeneratorError, GeneratorSpec, LatentBatch};
use crate::geometry::{
    dual_norm_step, lp_norm, project_ball, project_simplex, GeometryError, NormExponent,
    PerturbationBall,
};
use crate::loss::{
    dot, empirical_utility, grad_weights_into, DecisionProblem, LossError, PortfolioWeights,
};
use crate::scalar::{real, Scalar};
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("step size {which} must be positive and finite, got {value}")]
    BadStep { which: &'static str, value: f64 },
    #[error("timescale ordering violated: alpha_theta {alpha_theta} must be smaller than alpha_omega {alpha_omega}")]
    TimescaleOrdering { alpha_theta: f64, alpha_omega: f64 },
    #[error("radius must be non-negative and finite, got {rho}")]
    BadRadius { rho: f64 },
    #[error("{which} must be at least 1")]
    ZeroCount { which: &'static str },
    #[error("parameter mask has {got} entries but the generator has {expected} parameters")]
    MaskLength { expected: usize, got: usize },
    #[error("generator outputs {generator} assets but the problem has {problem}")]
    AssetMismatch { generator: usize, problem: usize },
    #[error("weight vector length {got} does not match asset count {expected}")]
    WeightLength { expected: usize, got: usize },
    #[error("non-finite {quantity} at iterate {iteration}")]
    NonFinite { quantity: &'static str, iteration: usize },
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Hyperparameters of the robust refinement run.
///
/// `rho = 0` is allowed and turns every solver into the nominal one. The
/// optional `theta_mask` freezes parameters where it is `false`: the adversary
/// only sees (and the ball only measures) the unmasked coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default = "RobustConfig::baseline")]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct RobustConfig<T> {
    /// Perturbation budget around the calibrated parameters.
    pub rho: T,
    /// Ball norm; the dual step supports any p > 1, projection needs 2 or inf.
    pub exponent: NormExponent,
    /// Adversary (slow) step size.
    pub alpha_theta: T,
    /// Decision (fast) step size.
    pub alpha_omega: T,
    /// Outer iterations K.
    pub iterations: usize,
    /// Latent scenarios per run.
    pub batch: usize,
    /// Seed for the latent batch.
    pub seed: u64,
    /// Adversary iterations when evaluating the robust criterion.
    pub inner_iterations: usize,
    /// Record a weight snapshot every this many iterations.
    pub trace_stride: usize,
    /// Optional per-parameter perturbation mask (`true` = perturbable).
    pub theta_mask: Option<Vec<bool>>,
}

impl<T: Scalar> RobustConfig<T> {
    /// Experiment defaults: rho 0.3 on an l2 ball, slow/fast steps 1e-3/0.1,
    /// 12000 iterations, 200 scenarios.
    pub fn baseline() -> Self {
        RobustConfig {
            rho: real(0.3),
            exponent: NormExponent::TWO,
            alpha_theta: real(1e-3),
            alpha_omega: real(0.1),
            iterations: 12_000,
            batch: 200,
            seed: 40,
            inner_iterations: 2_000,
            trace_stride: 1,
            theta_mask: None,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let rho = self.rho.to_f64().unwrap_or(f64::NAN);
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(SolverError::BadRadius { rho });
        }
        for (which, value) in [("alpha_theta", self.alpha_theta), ("alpha_omega", self.alpha_omega)] {
            let v = value.to_f64().unwrap_or(f64::NAN);
            if !(v > 0.0) || !v.is_finite() {
                return Err(SolverError::BadStep { which, value: v });
            }
        }
        if self.alpha_theta >= self.alpha_omega {
            return Err(SolverError::TimescaleOrdering {
                alpha_theta: self.alpha_theta.to_f64().unwrap_or(f64::NAN),
                alpha_omega: self.alpha_omega.to_f64().unwrap_or(f64::NAN),
            });
        }
        if self.iterations == 0 {
            return Err(SolverError::ZeroCount { which: "iterations" });
        }
        if self.batch == 0 {
            return Err(SolverError::ZeroCount { which: "batch" });
        }
        if self.inner_iterations == 0 {
            return Err(SolverError::ZeroCount { which: "inner_iterations" });
        }
        if self.trace_stride == 0 {
            return Err(SolverError::ZeroCount { which: "trace_stride" });
        }
        Ok(())
    }

    fn validate_for(&self, param_count: usize) -> Result<(), SolverError> {
        self.validate()?;
        if let Some(mask) = &self.theta_mask {
            if mask.len() != param_count {
                return Err(SolverError::MaskLength { expected: param_count, got: mask.len() });
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for RobustConfig<T> {
    fn default() -> Self {
        Self::baseline()
    }
}

/// One recorded iteration: objective after the decision update and the
/// p-norm distance of the adversarial parameters from the calibrated ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint<T> {
    pub iteration: usize,
    pub objective: T,
    pub theta_distance: T,
}

/// Weight iterate recorded at the trace stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot<T> {
    pub iteration: usize,
    pub weights: Vec<T>,
}

/// Full record of a solve: one point per iteration, snapshots at the stride,
/// and the terminal adversarial parameters for the two-timescale method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace<T> {
    pub points: Vec<TracePoint<T>>,
    pub snapshots: Vec<WeightSnapshot<T>>,
    pub terminal_theta: Option<Vec<T>>,
}

impl<T: Scalar> SolveTrace<T> {
    /// Writes `iteration,objective,theta_dist,w0..w{d-1}`; weight columns are
    /// filled on snapshot rows and left empty elsewhere.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W, n_assets: usize) -> std::io::Result<()> {
        write!(out, "iteration,objective,theta_dist")?;
        for j in 0..n_assets {
            write!(out, ",w{j}")?;
        }
        writeln!(out)?;
        let mut snap = self.snapshots.iter().peekable();
        for point in &self.points {
            write!(out, "{},{},{}", point.iteration, point.objective, point.theta_distance)?;
            if snap.peek().map(|s| s.iteration) == Some(point.iteration) {
                let s = snap.next().expect("peeked snapshot");
                for w in &s.weights {
                    write!(out, ",{w}")?;
                }
            } else {
                for _ in 0..n_assets {
                    write!(out, ",")?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Adversary {
    None,
    FirstOrder,
    TwoTimescale,
}

/// Nominal solver: projected gradient ascent of the empirical utility at the
/// calibrated parameters.
pub fn solve_nominal<T: Scalar>(
    gen: &GeneratorSpec<T>,
    x: &[T],
    problem: &DecisionProblem<T>,
    cfg: &RobustConfig<T>,
) -> Result<(PortfolioWeights<T>, SolveTrace<T>), SolverError>
where
    StandardNormal: Distribution<T>,
{
    run_loop(gen, x, problem, cfg, Adversary::None)
}

/// First-order robust solver: each iteration takes the closed-form worst
/// linearized perturbation (dual-norm step against the utility gradient) and
/// ascends the decision at the perturbed parameters.
pub fn solve_sro_first_order<T: Scalar>(
    gen: &GeneratorSpec<T>,
    x: &[T],
    problem: &DecisionProblem<T>,
    cfg: &RobustConfig<T>,
) -> Result<(PortfolioWeights<T>, SolveTrace<T>), SolverError>
where
    StandardNormal: Distribution<T>,
{
    run_loop(gen, x, problem, cfg, Adversary::FirstOrder)
}

/// Two-timescale robust solver: slow projected utility descent in the
/// generator parameters against fast projected ascent in the weights.
pub fn solve_sro_two_timescale<T: Scalar>(
    gen: &GeneratorSpec<T>,
    x: &[T],
    problem: &DecisionProblem<T>,
    cfg: &RobustConfig<T>,
) -> Result<(PortfolioWeights<T>, SolveTrace<T>), SolverError>
where
    StandardNormal: Distribution<T>,
{
    run_loop(gen, x, problem, cfg, Adversary::TwoTimescale)
}

struct Buffers<T> {
    scenarios: Vec<T>,
    scenarios_hat: Vec<T>,
    grad_w: Vec<T>,
    grad_theta: Vec<T>,
    ws: GenWorkspace<T>,
}

fn fill_scenarios<T: Scalar>(
    gen: &GeneratorSpec<T>,
    batch: &LatentBatch<T>,
    x: &[T],
    ws: &mut GenWorkspace<T>,
    buf: &mut [T],
) {
    let d = gen.dims.output;
    for i in 0..batch.len() {
        gen.forward_into(batch.row(i), x, ws, &mut buf[i * d..(i + 1) * d]);
    }
}

/// Mean utility gradient in theta over the batch, written into `grad`.
/// `scenarios` must hold the batch outputs of `gen` at its current theta.
///
/// Uses linearity of the VJP in the upstream vector: the scenario gradient
/// `(1 - lambda pi_i) w` is `w` scaled, so the coefficient folds into the
/// accumulation scale and no per-scenario vector is materialized.
fn fill_grad_theta<T: Scalar>(
    gen: &GeneratorSpec<T>,
    batch: &LatentBatch<T>,
    x: &[T],
    w: &[T],
    lambda: T,
    scenarios: &[T],
    ws: &mut GenWorkspace<T>,
    grad: &mut [T],
) {
    grad.iter_mut().for_each(|g| *g = T::zero());
    let d = gen.dims.output;
    let inv_n = real::<T>(1.0 / batch.len() as f64);
    for i in 0..batch.len() {
        let y = &scenarios[i * d..(i + 1) * d];
        let coeff = (T::one() - lambda * dot(w, y)) * inv_n;
        gen.vjp_theta_accumulate(batch.row(i), x, w, coeff, ws, grad);
    }
}

fn apply_mask<T: Scalar>(mask: Option<&[bool]>, grad: &mut [T]) {
    if let Some(mask) = mask {
        for (g, keep) in grad.iter_mut().zip(mask) {
            if !keep {
                *g = T::zero();
            }
        }
    }
}

fn check_finite_slice<T: Scalar>(
    v: &[T],
    quantity: &'static str,
    iteration: usize,
) -> Result<(), SolverError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::NonFinite { quantity, iteration });
    }
    Ok(())
}

fn run_loop<T: Scalar>(
    gen: &GeneratorSpec<T>,
    x: &[T],
    problem: &DecisionProblem<T>,
    cfg: &RobustConfig<T>,
    adversary: Adversary,
) -> Result<(PortfolioWeights<T>, SolveTrace<T>), SolverError>
where
    StandardNormal: Distribution<T>,
{
    gen.validate()?;
    cfg.validate_for(gen.param_count())?;
    if x.len() != gen.dims.context {
        return Err(GeneratorError::Shape {
            axis: "context",
            expected: gen.dims.context,
            got: x.len(),
        }
        .into());
    }
    let d = gen.dims.output;
    if problem.n_assets != d {
        return Err(SolverError::AssetMismatch { generator: d, problem: problem.n_assets });
    }

    let batch = LatentBatch::<T>::sample(cfg.seed, cfg.batch, gen.dims.latent)?;
    let active = adversary != Adversary::None && cfg.rho > T::zero();
    let p = gen.param_count();
    let theta_hat = gen.theta.clone();
    let ball = PerturbationBall::new(theta_hat.clone(), cfg.rho, cfg.exponent)?;
    let mask = cfg.theta_mask.as_deref();

    let mut bufs = Buffers {
        scenarios: vec![T::zero(); cfg.batch * d],
        scenarios_hat: vec![T::zero(); cfg.batch * d],
        grad_w: vec![T::zero(); d],
        grad_theta: vec![T::zero(); p],
        ws: gen.workspace(),
    };
    // Working copy whose theta tracks the adversary; starts at theta_hat.
    let mut work = gen.clone();

    let mut w: Vec<T> = PortfolioWeights::uniform(d)?.into_vec();
    let mut trace = SolveTrace {
        points: Vec::with_capacity(cfg.iterations),
        snapshots: Vec::new(),
        terminal_theta: None,
    };

    // The nominal scenario matrix is constant; fill it once. The first-order
    // adversary also linearizes at theta_hat every step, so it reuses this.
    fill_scenarios(gen, &batch, x, &mut bufs.ws, &mut bufs.scenarios_hat);
    if !active {
        bufs.scenarios.copy_from_slice(&bufs.scenarios_hat);
    }

    for k in 0..cfg.iterations {
        let mut theta_distance = T::zero();
        if active {
            match adversary {
                Adversary::FirstOrder => {
                    // Gradient of the batch utility in theta, at theta_hat.
                    fill_grad_theta(
                        gen,
                        &batch,
                        x,
                        &w,
                        problem.lambda,
                        &bufs.scenarios_hat,
                        &mut bufs.ws,
                        &mut bufs.grad_theta,
                    );
                    apply_mask(mask, &mut bufs.grad_theta);
                    check_finite_slice(&bufs.grad_theta, "parameter gradient", k)?;
                    // Adversary minimizes utility: step against the gradient.
                    for g in bufs.grad_theta.iter_mut() {
                        *g = -*g;
                    }
                    let (eps, _) = dual_norm_step(&bufs.grad_theta, &ball)?;
                    theta_distance = lp_norm(&eps, cfg.exponent);
                    for (t, (h, e)) in work.theta.iter_mut().zip(theta_hat.iter().zip(&eps)) {
                        *t = *h + *e;
                    }
                    fill_scenarios(&work, &batch, x, &mut bufs.ws, &mut bufs.scenarios);
                }
                Adversary::TwoTimescale => {
                    // Slow descent step at the current adversarial theta
                    // (scenarios already hold this theta's outputs), then
                    // projection of the deviation back into the ball.
                    fill_grad_theta(
                        &work,
                        &batch,
                        x,
                        &w,
                        problem.lambda,
                        &bufs.scenarios,
                        &mut bufs.ws,
                        &mut bufs.grad_theta,
                    );
                    apply_mask(mask, &mut bufs.grad_theta);
                    check_finite_slice(&bufs.grad_theta, "parameter gradient", k)?;
                    let mut deviation: Vec<T> = work
                        .theta
                        .iter()
                        .zip(&theta_hat)
                        .zip(&bufs.grad_theta)
                        .map(|((t, h), g)| *t - cfg.alpha_theta * *g - *h)
                        .collect();
                    deviation = project_ball(&deviation, &ball)?;
                    theta_distance = lp_norm(&deviation, cfg.exponent);
                    for (t, (h, e)) in work.theta.iter_mut().zip(theta_hat.iter().zip(&deviation)) {
                        *t = *h + *e;
                    }
                    fill_scenarios(&work, &batch, x, &mut bufs.ws, &mut bufs.scenarios);
                }
                Adversary::None => unreachable!(),
            }
        } else if k == 0 {
            // Scenario matrix is constant at theta_hat; filled before the loop.
        }

        grad_weights_into(&w, &bufs.scenarios, problem.lambda, &mut bufs.grad_w)?;
        check_finite_slice(&bufs.grad_w, "decision gradient", k)?;
        let stepped: Vec<T> =
            w.iter().zip(&bufs.grad_w).map(|(wi, gi)| *wi + cfg.alpha_omega * *gi).collect();
        w = project_simplex(&stepped)?;

        let objective = empirical_utility(&w, &bufs.scenarios, problem.lambda)?;
        if !objective.is_finite() {
            return Err(SolverError::NonFinite { quantity: "objective", iteration: k });
        }
        trace.points.push(TracePoint { iteration: k, objective, theta_distance });
        if k % cfg.trace_stride == 0 || k + 1 == cfg.iterations {
            if trace.snapshots.last().map(|s| s.iteration) != Some(k) {
                trace.snapshots.push(WeightSnapshot { iteration: k, weights: w.clone() });
            }
        }
    }

    if adversary == Adversary::TwoTimescale {
        trace.terminal_theta = Some(work.theta.clone());
    }
    let weights = PortfolioWeights::new(w)?;
    Ok((weights, trace))
}

/// Empirical robust criterion: the lowest batch utility the projected-descent
/// adversary finds within the ball, for a frozen decision.
///
/// The reported minimum always includes the value at the calibrated
/// parameters and at the closed-form dual-norm boundary point, so it never
/// exceeds the nominal utility and is monotone under ball nesting whenever
/// the inner objective is concave along the probe ray.
pub fn robust_objective<T: Scalar>(
    gen: &GeneratorSpec<T>,
    x: &[T],
    problem: &DecisionProblem<T>,
    w: &[T],
    cfg: &RobustConfig<T>,
) -> Result<T, SolverError>
where
    StandardNormal: Distribution<T>,
{
    gen.validate()?;
    cfg.validate_for(gen.param_count())?;
    if x.len() != gen.dims.context {
        return Err(GeneratorError::Shape {
            axis: "context",
            expected: gen.dims.context,
            got: x.len(),
        }
        .into());
    }
    let d = gen.dims.output;
    if problem.n_assets != d {
        return Err(SolverError::AssetMismatch { generator: d, problem: problem.n_assets });
    }
    if w.len() != d {
        return Err(SolverError::WeightLength { expected: d, got: w.len() });
    }

    let batch = LatentBatch::<T>::sample(cfg.seed, cfg.batch, gen.dims.latent)?;
    let p = gen.param_count();
    let theta_hat = gen.theta.clone();
    let ball = PerturbationBall::new(theta_hat.clone(), cfg.rho, cfg.exponent)?;
    let mask = cfg.theta_mask.as_deref();

    let mut ws = gen.workspace();
    let mut scenarios = vec![T::zero(); cfg.batch * d];
    let mut grad_theta = vec![T::zero(); p];

    fill_scenarios(gen, &batch, x, &mut ws, &mut scenarios);
    let nominal = empirical_utility(w, &scenarios, problem.lambda)?;
    if !nominal.is_finite() {
        return Err(SolverError::NonFinite { quantity: "objective", iteration: 0 });
    }
    let mut best = nominal;

    if cfg.rho > T::zero() {
        let mut work = gen.clone();

        // Closed-form probe: utility at the dual-norm boundary point of the
        // linearization at theta_hat.
        fill_grad_theta(gen, &batch, x, w, problem.lambda, &scenarios, &mut ws, &mut grad_theta);
        apply_mask(mask, &mut grad_theta);
        check_finite_slice(&grad_theta, "parameter gradient", 0)?;
        let negated: Vec<T> = grad_theta.iter().map(|g| -*g).collect();
        let (eps, _) = dual_norm_step(&negated, &ball)?;
        for (t, (h, e)) in work.theta.iter_mut().zip(theta_hat.iter().zip(&eps)) {
            *t = *h + *e;
        }
        fill_scenarios(&work, &batch, x, &mut ws, &mut scenarios);
        let probe = empirical_utility(w, &scenarios, problem.lambda)?;
        if probe.is_finite() {
            best = best.min(probe);
        }

        // Projected-descent adversary from the calibrated parameters.
        work.theta.copy_from_slice(&theta_hat);
        fill_scenarios(&work, &batch, x, &mut ws, &mut scenarios);
        for k in 0..cfg.inner_iterations {
            fill_grad_theta(
                &work,
                &batch,
                x,
                w,
                problem.lambda,
                &scenarios,
                &mut ws,
                &mut grad_theta,
            );
            apply_mask(mask, &mut grad_theta);
            check_finite_slice(&grad_theta, "parameter gradient", k)?;
            let mut deviation: Vec<T> = work
                .theta
                .iter()
                .zip(&theta_hat)
                .zip(&grad_theta)
                .map(|((t, h), g)| *t - cfg.alpha_theta * *g - *h)
                .collect();
            deviation = project_ball(&deviation, &ball)?;
            for (t, (h, e)) in work.theta.iter_mut().zip(theta_hat.iter().zip(&deviation)) {
                *t = *h + *e;
            }
            fill_scenarios(&work, &batch, x, &mut ws, &mut scenarios);
            let value = empirical_utility(w, &scenarios, problem.lambda)?;
            if !value.is_finite() {
                return Err(SolverError::NonFinite { quantity: "objective", iteration: k });
            }
            best = best.min(value);
        }
    }

    Ok(best)
}

/// Sharpness: nominal batch utility minus the robust criterion, both on the
/// same latent batch. Non-negative by construction and zero at `rho = 0`.
pub fn sharpness<T: Scalar>(
    gen: &GeneratorSpec<T>,
    x: &[T],
    problem: &DecisionProblem<T>,
    w: &[T],
    cfg: &RobustConfig<T>,
) -> Result<T, SolverError>
where
    StandardNormal: Distribution<T>,
{
    let robust = robust_objective(gen, x, problem, w, cfg)?;
    let batch = LatentBatch::<T>::sample(cfg.seed, cfg.batch, gen.dims.latent)?;
    let d = gen.dims.output;
    let mut ws = gen.workspace();
    let mut scenarios = vec![T::zero(); cfg.batch * d];
    fill_scenarios(gen, &batch, x, &mut ws, &mut scenarios);
    let nominal = empirical_utility(w, &scenarios, problem.lambda)?;
    Ok(nominal - robust)
}
