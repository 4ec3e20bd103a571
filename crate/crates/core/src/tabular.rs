//! Exact policies over finite prompt and outcome sets.
//!
//! A [`TabularPolicy`] stores one row of logits per prompt; the policy is the
//! row-wise softmax, so every outcome has positive probability. The closed
//! forms ([`exact_gibbs`], [`exact_ppo_minimizer`]) and the brute-force
//! expected ERA loss over all ordered outcome pairs live here, together with
//! descent on the logits (fixed-step gradient or damped Newton). Prompts are
//! weighted uniformly.

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::{DpoParams, PreferenceRecord, PolicyScores};
use crate::error::{AlignError, Result};
use crate::params::AlignmentParams;
use crate::prob::{log_sigmoid, sigmoid};

pub const DEFAULT_MAX_OUTCOMES: usize = 64;

fn log_softmax_row(row: ArrayView1<f64>) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn check_matrix(name: &str, m: &Array2<f64>) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(AlignError::InvalidArgument(format!("{name} must be non-empty")));
    }
    if let Some(v) = m.iter().find(|v| !v.is_finite()) {
        return Err(AlignError::InvalidArgument(format!("{name} has a non-finite entry {v}")));
    }
    Ok(())
}

/// Softmax policy over `num_outcomes` outcomes for each of `num_prompts`
/// prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    logits: Array2<f64>,
}

impl TabularPolicy {
    pub fn from_logits(logits: Array2<f64>) -> Result<Self> {
        Self::with_outcome_cap(logits, DEFAULT_MAX_OUTCOMES)
    }

    pub fn with_outcome_cap(logits: Array2<f64>, cap: usize) -> Result<Self> {
        check_matrix("logits", &logits)?;
        if logits.ncols() > cap {
            return Err(AlignError::InvalidArgument(format!(
                "{} outcomes exceed the cap of {cap}",
                logits.ncols()
            )));
        }
        Ok(Self { logits })
    }

    pub fn uniform(num_prompts: usize, num_outcomes: usize) -> Result<Self> {
        Self::from_logits(Array2::zeros((num_prompts, num_outcomes)))
    }

    /// Policy with the given (positive) probabilities.
    pub fn from_probs(probs: &Array2<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(AlignError::InvalidArgument("probabilities must be positive".into()));
        }
        Self::from_logits(probs.mapv(f64::ln))
    }

    pub fn num_prompts(&self) -> usize {
        self.logits.nrows()
    }

    pub fn num_outcomes(&self) -> usize {
        self.logits.ncols()
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn log_probs(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.logits.raw_dim());
        for (x, row) in self.logits.axis_iter(Axis(0)).enumerate() {
            for (y, v) in log_softmax_row(row).into_iter().enumerate() {
                out[[x, y]] = v;
            }
        }
        out
    }

    pub fn probs(&self) -> Array2<f64> {
        self.log_probs().mapv(f64::exp)
    }

    /// Adds `g(x)` to every logit of prompt `x`. The policy is unchanged.
    pub fn gauge_shifted(&self, gauge: &GaugeFunction) -> Result<Self> {
        gauge.check_len(self.num_prompts())?;
        let mut logits = self.logits.clone();
        for (mut row, g) in logits.axis_iter_mut(Axis(0)).zip(&gauge.offsets) {
            row.mapv_inplace(|v| v + g);
        }
        Self::from_logits(logits)
    }

    /// Shannon entropy of each prompt's distribution.
    pub fn entropies(&self) -> Vec<f64> {
        self.log_probs()
            .axis_iter(Axis(0))
            .map(|row| -row.iter().map(|lp| lp.exp() * lp).sum::<f64>())
            .collect()
    }

    pub fn mean_entropy(&self) -> f64 {
        let e = self.entropies();
        e.iter().sum::<f64>() / e.len() as f64
    }

    fn same_shape(&self, other_rows: usize, other_cols: usize, what: &str) -> Result<()> {
        if self.logits.dim() != (other_rows, other_cols) {
            return Err(AlignError::InvalidArgument(format!(
                "{what} shape {other_rows}x{other_cols} does not match policy shape {:?}",
                self.logits.dim()
            )));
        }
        Ok(())
    }
}

/// Energies `U(x, y)`, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTable {
    values: Array2<f64>,
}

impl EnergyTable {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_matrix("energy table", &values)?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// `U(x, y) + c(x)`.
    pub fn gauge_shifted(&self, gauge: &GaugeFunction) -> Result<Self> {
        gauge.check_len(self.values.nrows())?;
        let mut values = self.values.clone();
        for (mut row, g) in values.axis_iter_mut(Axis(0)).zip(&gauge.offsets) {
            row.mapv_inplace(|v| v + g);
        }
        Self::new(values)
    }
}

/// Per-prompt offsets `g(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeFunction {
    offsets: Vec<f64>,
}

impl GaugeFunction {
    pub fn new(offsets: Vec<f64>) -> Result<Self> {
        if offsets.iter().any(|v| !v.is_finite()) {
            return Err(AlignError::InvalidArgument("gauge offsets must be finite".into()));
        }
        Ok(Self { offsets })
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.offsets.len() != n {
            return Err(AlignError::InvalidArgument(format!(
                "gauge has {} offsets for {n} prompts",
                self.offsets.len()
            )));
        }
        Ok(())
    }
}

/// Largest per-prompt total variation distance `max_x 1/2 sum_y |p - q|`.
pub fn total_variation(p: &TabularPolicy, q: &TabularPolicy) -> Result<f64> {
    p.same_shape(q.num_prompts(), q.num_outcomes(), "policy")?;
    let (pp, qp) = (p.probs(), q.probs());
    Ok(pp
        .axis_iter(Axis(0))
        .zip(qp.axis_iter(Axis(0)))
        .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max))
}

fn normalized_rows(mut log_unnorm: Array2<f64>) -> Result<TabularPolicy> {
    for mut row in log_unnorm.axis_iter_mut(Axis(0)) {
        let normalized = log_softmax_row(row.view());
        row.iter_mut().zip(normalized).for_each(|(r, v)| *r = v);
    }
    TabularPolicy::from_logits(log_unnorm)
}

/// Regularized optimum `pi*(y|x) ∝ exp(-beta' U + gamma' log pi_ref)`, with
/// the partition function summed exactly. Logits of the result are
/// normalized log-probabilities.
pub fn exact_gibbs(energy: &EnergyTable, reference: &TabularPolicy, params: &AlignmentParams) -> Result<TabularPolicy> {
    reference.same_shape(energy.values.nrows(), energy.values.ncols(), "energy table")?;
    let ref_lp = reference.log_probs();
    let (bp, gp) = (params.beta_prime(), params.gamma_prime());
    let log_unnorm = ndarray::Zip::from(&energy.values).and(&ref_lp).map_collect(|&u, &r| -bp * u + gp * r);
    normalized_rows(log_unnorm)
}

/// Minimizer of the KL-regularized reward objective,
/// `∝ exp(-(beta/gamma) U + log pi_ref)`. Needs `gamma > 0`.
pub fn exact_ppo_minimizer(
    energy: &EnergyTable,
    reference: &TabularPolicy,
    params: &AlignmentParams,
) -> Result<TabularPolicy> {
    reference.same_shape(energy.values.nrows(), energy.values.ncols(), "energy table")?;
    if params.gamma() == 0.0 {
        return Err(AlignError::InvalidArgument("the PPO minimizer requires gamma > 0".into()));
    }
    let ref_lp = reference.log_probs();
    let ratio = params.beta() / params.gamma();
    let log_unnorm = ndarray::Zip::from(&energy.values).and(&ref_lp).map_collect(|&u, &r| -ratio * u + r);
    normalized_rows(log_unnorm)
}

/// Free energy `E_x sum_y pi (U + beta^-1 ((1 + gamma) log pi - gamma log pi_ref))`.
pub fn objective_value(
    policy: &TabularPolicy,
    energy: &EnergyTable,
    reference: &TabularPolicy,
    params: &AlignmentParams,
) -> Result<f64> {
    policy.same_shape(energy.values.nrows(), energy.values.ncols(), "energy table")?;
    policy.same_shape(reference.num_prompts(), reference.num_outcomes(), "reference")?;
    let lp = policy.log_probs();
    let ref_lp = reference.log_probs();
    let (beta, gamma) = (params.beta(), params.gamma());
    let mut total = 0.0;
    for ((&l, &r), &u) in lp.iter().zip(ref_lp.iter()).zip(energy.values.iter()) {
        total += l.exp() * (u + ((1.0 + gamma) * l - gamma * r) / beta);
    }
    Ok(total / policy.num_prompts() as f64)
}

/// Update rule for [`era_descent`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentMethod {
    /// Fixed-step gradient descent.
    Gradient,
    /// Damped Newton steps on the (convex) expected loss with a backtracking
    /// line search. Converges where fixed-step descent stalls on saturated
    /// pair sigmoids at large `beta`.
    Newton,
}

/// Settings for the tabular fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: DescentMethod,
    /// Step of [`DescentMethod::Gradient`] and of the DPO fit.
    pub step_size: f64,
    pub max_steps: usize,
    /// Total-variation tolerance for ERA fits; max-abs gradient tolerance for
    /// DPO fits, which have no finite minimizer to compare against.
    pub tolerance: f64,
    pub check_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { method: DescentMethod::Newton, step_size: 0.5, max_steps: 50_000, tolerance: 1e-3, check_every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularFit {
    pub policy: TabularPolicy,
    pub steps: usize,
    pub tv_distance: f64,
    pub converged: bool,
}

impl TabularFit {
    pub fn result(&self) -> TabularResult {
        TabularResult { tv_distance: self.tv_distance, steps: self.steps, converged: self.converged }
    }
}

/// Precomputed per-prompt pair targets for the expected ERA loss.
struct PairTable {
    ny: usize,
    // [x][y * ny + y'] = pi_ref(y) pi_ref(y')
    weights: Vec<Vec<f64>>,
    // [x][y * ny + y'] = p_target(y > y')
    targets: Vec<Vec<f64>>,
    targets_log: Vec<Vec<(f64, f64)>>,
}

impl PairTable {
    fn new(energy: &EnergyTable, reference: &TabularPolicy, params: &AlignmentParams) -> Result<Self> {
        reference.same_shape(energy.values.nrows(), energy.values.ncols(), "energy table")?;
        let ny = reference.num_outcomes();
        let ref_lp = reference.log_probs();
        let (bp, gp) = (params.beta_prime(), params.gamma_prime());
        let mut weights = Vec::new();
        let mut targets = Vec::new();
        let mut targets_log = Vec::new();
        for x in 0..reference.num_prompts() {
            let mut w = vec![0.0; ny * ny];
            let mut t = vec![0.0; ny * ny];
            let mut tl = vec![(0.0, 0.0); ny * ny];
            for y in 0..ny {
                for z in 0..ny {
                    if y == z {
                        continue;
                    }
                    let logit = bp * (energy.values[[x, z]] - energy.values[[x, y]])
                        + gp * (ref_lp[[x, y]] - ref_lp[[x, z]]);
                    w[y * ny + z] = (ref_lp[[x, y]] + ref_lp[[x, z]]).exp();
                    t[y * ny + z] = sigmoid(logit);
                    tl[y * ny + z] = (log_sigmoid(logit), log_sigmoid(-logit));
                }
            }
            weights.push(w);
            targets.push(t);
            targets_log.push(tl);
        }
        Ok(Self { ny, weights, targets, targets_log })
    }

    fn loss(&self, logits: &Array2<f64>) -> f64 {
        let ny = self.ny;
        let mut total = 0.0;
        for (x, row) in logits.axis_iter(Axis(0)).enumerate() {
            for y in 0..ny {
                for z in 0..ny {
                    if y == z {
                        continue;
                    }
                    let k = y * ny + z;
                    let d = row[y] - row[z];
                    let (ltp, ltq) = self.targets_log[x][k];
                    let kl = ltp.exp() * (ltp - log_sigmoid(d)) + ltq.exp() * (ltq - log_sigmoid(-d));
                    total += self.weights[x][k] * kl;
                }
            }
        }
        total / logits.nrows() as f64
    }

    /// Newton direction `-(H + ridge I)^-1 g`, solved prompt by prompt.
    fn newton_direction(&self, logits: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
        let ny = self.ny;
        let scale = 2.0 / logits.nrows() as f64;
        let mut dir = Array2::zeros(logits.raw_dim());
        for (x, row) in logits.axis_iter(Axis(0)).enumerate() {
            let w = &self.weights[x];
            let mut h = vec![0.0; ny * ny];
            for y in 0..ny {
                for z in (y + 1)..ny {
                    let s = sigmoid(row[y] - row[z]);
                    let c = scale * w[y * ny + z] * s * (1.0 - s);
                    h[y * ny + y] += c;
                    h[z * ny + z] += c;
                    h[y * ny + z] -= c;
                    h[z * ny + y] -= c;
                }
            }
            let max_diag = (0..ny).map(|i| h[i * ny + i]).fold(0.0, f64::max);
            let ridge = 1e-10 * max_diag + 1e-300;
            for i in 0..ny {
                h[i * ny + i] += ridge;
            }
            let rhs: Vec<f64> = grad.row(x).iter().map(|g| -g).collect();
            for (y, v) in cholesky_solve(&mut h, ny, rhs).into_iter().enumerate() {
                dir[[x, y]] = v;
            }
        }
        dir
    }

    fn grad(&self, logits: &Array2<f64>, out: &mut Array2<f64>) {
        let ny = self.ny;
        let scale = 2.0 / logits.nrows() as f64;
        out.fill(0.0);
        for (x, row) in logits.axis_iter(Axis(0)).enumerate() {
            let (w, t) = (&self.weights[x], &self.targets[x]);
            for y in 0..ny {
                let mut g = 0.0;
                for z in 0..ny {
                    if y != z {
                        let k = y * ny + z;
                        g += w[k] * (sigmoid(row[y] - row[z]) - t[k]);
                    }
                }
                out[[x, y]] = scale * g;
            }
        }
    }
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major, `n x n`),
/// overwriting `a` with its Cholesky factor.
fn cholesky_solve(a: &mut [f64], n: usize, mut b: Vec<f64>) -> Vec<f64> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        let d = d.max(f64::MIN_POSITIVE).sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    for i in 0..n {
        for k in 0..i {
            b[i] -= a[i * n + k] * b[k];
        }
        b[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            b[i] -= a[k * n + i] * b[k];
        }
        b[i] /= a[i * n + i];
    }
    b
}

/// Expected ERA loss with every ordered pair `(y, y')` weighted by
/// `pi_ref(y) pi_ref(y')`, averaged over prompts.
pub fn expected_era_loss(
    policy: &TabularPolicy,
    energy: &EnergyTable,
    reference: &TabularPolicy,
    params: &AlignmentParams,
) -> Result<f64> {
    policy.same_shape(reference.num_prompts(), reference.num_outcomes(), "reference")?;
    Ok(PairTable::new(energy, reference, params)?.loss(&policy.logits))
}

/// Analytic gradient of [`expected_era_loss`] with respect to the logits.
pub fn expected_era_grad(
    policy: &TabularPolicy,
    energy: &EnergyTable,
    reference: &TabularPolicy,
    params: &AlignmentParams,
) -> Result<Array2<f64>> {
    policy.same_shape(reference.num_prompts(), reference.num_outcomes(), "reference")?;
    let table = PairTable::new(energy, reference, params)?;
    let mut out = Array2::zeros(policy.logits.raw_dim());
    table.grad(&policy.logits, &mut out);
    Ok(out)
}

/// Cross entropy `-E_x E_{y~target} ln pi(y|x)`, averaged over prompts.
pub fn tabular_cross_entropy(policy: &TabularPolicy, target: &TabularPolicy) -> Result<f64> {
    policy.same_shape(target.num_prompts(), target.num_outcomes(), "target")?;
    let q = target.probs();
    let total: f64 = (&q * &policy.log_probs()).sum();
    Ok(-total / policy.num_prompts() as f64)
}

/// Gradient of [`tabular_cross_entropy`] with respect to the logits.
pub fn tabular_cross_entropy_grad(policy: &TabularPolicy, target: &TabularPolicy) -> Result<Array2<f64>> {
    policy.same_shape(target.num_prompts(), target.num_outcomes(), "target")?;
    Ok((policy.probs() - target.probs()) / policy.num_prompts() as f64)
}

/// Descent on the expected ERA loss, stopping once the total
/// variation to [`exact_gibbs`] drops below `opt.tolerance`. Starts from
/// `init` or, by default, the reference logits.
pub fn era_descent(
    energy: &EnergyTable,
    reference: &TabularPolicy,
    params: &AlignmentParams,
    opt: &OptimizerConfig,
    init: Option<&TabularPolicy>,
) -> Result<TabularFit> {
    let table = PairTable::new(energy, reference, params)?;
    let target = exact_gibbs(energy, reference, params)?;
    let mut policy = init.unwrap_or(reference).clone();
    policy.same_shape(reference.num_prompts(), reference.num_outcomes(), "initial policy")?;
    let mut grad = Array2::zeros(policy.logits.raw_dim());
    let check_every = opt.check_every.max(1);
    let mut steps = 0;
    loop {
        if steps % check_every == 0 || steps == opt.max_steps {
            let tv = total_variation(&policy, &target)?;
            if tv <= opt.tolerance || steps == opt.max_steps {
                return Ok(TabularFit { policy, steps, tv_distance: tv, converged: tv <= opt.tolerance });
            }
        }
        table.grad(&policy.logits, &mut grad);
        match opt.method {
            DescentMethod::Gradient => policy.logits.scaled_add(-opt.step_size, &grad),
            DescentMethod::Newton => {
                let dir = table.newton_direction(&policy.logits, &grad);
                let slope: f64 = grad.iter().zip(dir.iter()).map(|(g, d)| g * d).sum();
                let current = table.loss(&policy.logits);
                let mut t = 1.0;
                let mut candidate = &policy.logits + &dir;
                // Armijo backtracking; once the decrease is below rounding
                // the full step is kept
                for _ in 0..40 {
                    let next = table.loss(&candidate);
                    if next <= current + 1e-4 * t * slope || (current - next).abs() <= 1e-15 * current.abs() {
                        break;
                    }
                    t *= 0.5;
                    candidate = &policy.logits + &(&dir * t);
                }
                policy.logits = candidate;
            }
        }
        if policy.logits.iter().any(|v| !v.is_finite()) {
            return Err(AlignError::InvalidArgument("logits diverged".into()));
        }
        steps += 1;
    }
}

/// [`era_descent`], failing with [`AlignError::NoConvergence`] when the
/// tolerance is not reached within `opt.max_steps`.
pub fn fit_era_tabular(
    energy: &EnergyTable,
    reference: &TabularPolicy,
    params: &AlignmentParams,
    opt: &OptimizerConfig,
    init: Option<&TabularPolicy>,
) -> Result<TabularFit> {
    let fit = era_descent(energy, reference, params, opt, init)?;
    if fit.converged {
        Ok(fit)
    } else {
        Err(AlignError::NoConvergence { steps: fit.steps, tv_distance: fit.tv_distance })
    }
}

/// One observed preference `winner > loser` for a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedPair {
    pub prompt: usize,
    pub winner: usize,
    pub loser: usize,
}

/// Mean DPO loss over `pairs`; zero for an empty list.
pub fn dpo_tabular_loss(
    policy: &TabularPolicy,
    pairs: &[ObservedPair],
    reference: &TabularPolicy,
    dpo: &DpoParams,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let lp = policy.log_probs();
    let ref_lp = reference.log_probs();
    let mut total = 0.0;
    for p in pairs {
        let rec = PreferenceRecord::from_scalars(0.0, 0.0, ref_lp[[p.prompt, p.winner]], ref_lp[[p.prompt, p.loser]]);
        let scores = PolicyScores::new(lp[[p.prompt, p.winner]], lp[[p.prompt, p.loser]]);
        total += crate::align::dpo_pairwise_loss(&rec, &scores, dpo, crate::align::Winner::A)?;
    }
    Ok(total / pairs.len() as f64)
}

fn check_pairs(pairs: &[ObservedPair], reference: &TabularPolicy) -> Result<()> {
    for p in pairs {
        if p.prompt >= reference.num_prompts()
            || p.winner >= reference.num_outcomes()
            || p.loser >= reference.num_outcomes()
            || p.winner == p.loser
        {
            return Err(AlignError::InvalidArgument(format!("invalid observed pair {p:?}")));
        }
    }
    Ok(())
}

/// Gradient descent on the DPO loss over `pairs`. Stops when the largest
/// gradient entry falls below `opt.tolerance` or after `opt.max_steps`;
/// `tv_distance` reports how far the policy moved from its start.
pub fn dpo_descent(
    pairs: &[ObservedPair],
    reference: &TabularPolicy,
    dpo: &DpoParams,
    opt: &OptimizerConfig,
    init: Option<&TabularPolicy>,
) -> Result<TabularFit> {
    check_pairs(pairs, reference)?;
    let start = init.unwrap_or(reference).clone();
    start.same_shape(reference.num_prompts(), reference.num_outcomes(), "initial policy")?;
    let ref_lp = reference.log_probs();
    let mut logits = start.logits.clone();
    let mut grad = Array2::<f64>::zeros(logits.raw_dim());
    let t = dpo.temperature;
    let n = pairs.len().max(1) as f64;
    let mut steps = 0;
    let mut converged = false;
    while steps < opt.max_steps {
        grad.fill(0.0);
        for p in pairs {
            // the softmax normalizer cancels in the margin
            let margin = (logits[[p.prompt, p.winner]] - ref_lp[[p.prompt, p.winner]])
                - (logits[[p.prompt, p.loser]] - ref_lp[[p.prompt, p.loser]]);
            let d = -t * sigmoid(-t * margin) / n;
            grad[[p.prompt, p.winner]] += d;
            grad[[p.prompt, p.loser]] -= d;
        }
        if grad.iter().all(|g| g.abs() <= opt.tolerance) {
            converged = true;
            break;
        }
        logits.scaled_add(-opt.step_size, &grad);
        steps += 1;
    }
    if !converged {
        converged = grad.iter().all(|g| g.abs() <= opt.tolerance);
    }
    let policy = TabularPolicy::from_logits(logits)?;
    let tv_distance = total_variation(&policy, &start)?;
    Ok(TabularFit { policy, steps, tv_distance, converged })
}

/// [`dpo_descent`] with the convergence-failure contract of
/// [`fit_era_tabular`].
pub fn fit_dpo_tabular(
    pairs: &[ObservedPair],
    reference: &TabularPolicy,
    dpo: &DpoParams,
    opt: &OptimizerConfig,
    init: Option<&TabularPolicy>,
) -> Result<TabularFit> {
    let fit = dpo_descent(pairs, reference, dpo, opt, init)?;
    if fit.converged {
        Ok(fit)
    } else {
        Err(AlignError::NoConvergence { steps: fit.steps, tv_distance: fit.tv_distance })
    }
}

/// Instance file: energies, reference logits and alignment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularInstance {
    pub prompts: Vec<String>,
    pub outcomes: Vec<String>,
    pub energy_matrix: Vec<Vec<f64>>,
    pub ref_logits: Vec<Vec<f64>>,
    pub beta: f64,
    pub gamma: f64,
}

/// Outcome of fitting one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabularResult {
    pub tv_distance: f64,
    pub steps: usize,
    pub converged: bool,
}

fn to_array(name: &str, rows: &[Vec<f64>], nx: usize, ny: usize) -> Result<Array2<f64>> {
    if rows.len() != nx || rows.iter().any(|r| r.len() != ny) {
        return Err(AlignError::InvalidArgument(format!("{name} must be {nx}x{ny}")));
    }
    Ok(Array2::from_shape_fn((nx, ny), |(x, y)| rows[x][y]))
}

impl TabularInstance {
    /// Random instance with energies uniform in `[0, max_energy)` and
    /// reference logits uniform in `[-1, 1)`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        num_prompts: usize,
        num_outcomes: usize,
        max_energy: f64,
        params: AlignmentParams,
    ) -> Self {
        let mut matrix = |lo: f64, hi: f64| -> Vec<Vec<f64>> {
            (0..num_prompts).map(|_| (0..num_outcomes).map(|_| rng.gen_range(lo..hi)).collect()).collect()
        };
        let energy_matrix = matrix(0.0, max_energy);
        let ref_logits = matrix(-1.0, 1.0);
        Self {
            prompts: (0..num_prompts).map(|i| format!("x{i}")).collect(),
            outcomes: (0..num_outcomes).map(|i| format!("y{i}")).collect(),
            energy_matrix,
            ref_logits,
            beta: params.beta(),
            gamma: params.gamma(),
        }
    }

    pub fn params(&self) -> Result<AlignmentParams> {
        AlignmentParams::new(self.beta, self.gamma)
    }

    pub fn energy(&self) -> Result<EnergyTable> {
        EnergyTable::new(to_array("energy_matrix", &self.energy_matrix, self.prompts.len(), self.outcomes.len())?)
    }

    pub fn reference(&self) -> Result<TabularPolicy> {
        TabularPolicy::from_logits(to_array("ref_logits", &self.ref_logits, self.prompts.len(), self.outcomes.len())?)
    }

    /// Fits the instance with [`era_descent`] and reports the distance to the
    /// exact optimum.
    pub fn solve(&self, opt: &OptimizerConfig) -> Result<TabularFit> {
        era_descent(&self.energy()?, &self.reference()?, &self.params()?, opt, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(beta: f64, gamma: f64) -> AlignmentParams {
        AlignmentParams::new(beta, gamma).unwrap()
    }

    fn assert_probs(policy: &TabularPolicy, expected: &[f64]) {
        let p = policy.probs();
        for (a, b) in p.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{:?} vs {expected:?}", p.row(0));
        }
    }

    #[test]
    fn gibbs_examples() {
        let uniform = TabularPolicy::uniform(1, 4).unwrap();
        let flat = EnergyTable::new(Array2::from_elem((1, 4), 2.0)).unwrap();
        assert_probs(&exact_gibbs(&flat, &uniform, &params(3.0, 0.5)).unwrap(), &[0.25; 4]);

        let u = EnergyTable::new(array![[0.0, 2f64.ln(), 4f64.ln()]]).unwrap();
        let g = exact_gibbs(&u, &TabularPolicy::uniform(1, 3).unwrap(), &params(1.0, 0.0)).unwrap();
        assert_probs(&g, &[4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]);

        let u = EnergyTable::new(array![[0.0, 4f64.ln()]]).unwrap();
        let g = exact_gibbs(&u, &TabularPolicy::uniform(1, 2).unwrap(), &params(1.0, 1.0)).unwrap();
        assert_probs(&g, &[2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn ppo_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = TabularInstance::random(&mut rng, 2, 5, 5.0, params(1.0, 1.0));
        let reference = inst.reference().unwrap();
        let zero = EnergyTable::new(Array2::zeros((2, 5))).unwrap();
        let m = exact_ppo_minimizer(&zero, &reference, &params(2.0, 0.3)).unwrap();
        assert!(total_variation(&m, &reference).unwrap() < 1e-15);

        let u = EnergyTable::new(array![[0.0, 4f64.ln()]]).unwrap();
        let m = exact_ppo_minimizer(&u, &TabularPolicy::uniform(1, 2).unwrap(), &params(1.0, 1.0)).unwrap();
        assert_probs(&m, &[0.8, 0.2]);

        assert!(exact_ppo_minimizer(&u, &TabularPolicy::uniform(1, 2).unwrap(), &params(1.0, 0.0)).is_err());
    }

    #[test]
    fn ppo_and_gibbs_rank_outcomes_alike_on_uniform_reference() {
        // With a uniform reference both minimizers are monotone in U.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let inst = TabularInstance::random(&mut rng, 1, 8, 5.0, params(1.0, 1.0));
            let u = inst.energy().unwrap();
            let reference = TabularPolicy::uniform(1, 8).unwrap();
            let g = exact_gibbs(&u, &reference, &params(1.0, 1.0)).unwrap().probs();
            let m = exact_ppo_minimizer(&u, &reference, &params(1.0, 1.0)).unwrap().probs();
            let argmax = |r: ndarray::ArrayView1<f64>| {
                r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
            };
            assert_eq!(argmax(g.row(0)), argmax(m.row(0)));
        }
    }

    #[test]
    fn objective_examples() {
        let u = EnergyTable::new(array![[0.0, 1.0]]).unwrap();
        let uni = TabularPolicy::uniform(1, 2).unwrap();
        let j = objective_value(&uni, &u, &uni, &params(1.0, 0.0)).unwrap();
        assert!((j - (0.5 - 2f64.ln())).abs() < 1e-15);
        assert!((j + 0.193147).abs() < 1e-6);

        let single = EnergyTable::new(array![[3.25]]).unwrap();
        let one = TabularPolicy::uniform(1, 1).unwrap();
        assert_eq!(objective_value(&one, &single, &one, &params(2.0, 0.7)).unwrap(), 3.25);
    }

    #[test]
    fn gibbs_minimizes_the_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(beta, gamma) in &[(0.5, 0.0), (1.0, 0.1), (5.0, 1.0)] {
            let inst = TabularInstance::random(&mut rng, 3, 10, 5.0, params(beta, gamma));
            let (u, r, p) = (inst.energy().unwrap(), inst.reference().unwrap(), inst.params().unwrap());
            let star = exact_gibbs(&u, &r, &p).unwrap();
            let j_star = objective_value(&star, &u, &r, &p).unwrap();
            for _ in 0..100 {
                let noise = Array2::from_shape_fn((3, 10), |_| rng.gen_range(-0.5..0.5));
                let q = TabularPolicy::from_logits(star.logits() + &noise).unwrap();
                if total_variation(&q, &star).unwrap() >= 0.01 {
                    assert!(objective_value(&q, &u, &r, &p).unwrap() > j_star);
                }
            }
        }
    }

    #[test]
    fn gauge_shift_leaves_gibbs_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inst = TabularInstance::random(&mut rng, 3, 6, 5.0, params(2.0, 0.5));
        let (u, r, p) = (inst.energy().unwrap(), inst.reference().unwrap(), inst.params().unwrap());
        let g = GaugeFunction::new(vec![3.0, -7.5, 0.25]).unwrap();
        let base = exact_gibbs(&u, &r, &p).unwrap().probs();
        let shifted_u = exact_gibbs(&u.gauge_shifted(&g).unwrap(), &r, &p).unwrap().probs();
        let shifted_ref = exact_gibbs(&u, &r.gauge_shifted(&g).unwrap(), &p).unwrap().probs();
        for ((a, b), c) in base.iter().zip(shifted_u.iter()).zip(shifted_ref.iter()) {
            assert!((a - b).abs() <= 1e-12 && (a - c).abs() <= 1e-12);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = TabularPolicy::from_logits(Array2::from_shape_fn((3, 5), |_| rng.gen_range(-2.0..2.0))).unwrap();
        let logits = Array2::from_shape_fn((3, 5), |_| rng.gen_range(-2.0..2.0));
        let analytic = tabular_cross_entropy_grad(&TabularPolicy::from_logits(logits.clone()).unwrap(), &target).unwrap();
        let h = 1e-4;
        let f = |l: Array2<f64>| tabular_cross_entropy(&TabularPolicy::from_logits(l).unwrap(), &target).unwrap();
        for ((x, y), g) in analytic.indexed_iter() {
            let (mut plus, mut minus) = (logits.clone(), logits.clone());
            plus[[x, y]] += h;
            minus[[x, y]] -= h;
            let num = (f(plus) - f(minus)) / (2.0 * h);
            assert!((num - g).abs() <= 1e-9, "{num} vs {g}");
        }
        // minimized at the target itself
        assert!(tabular_cross_entropy_grad(&target, &target).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn expected_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(beta, gamma) in &[(0.5, 0.0), (1.0, 0.1), (5.0, 1.0)] {
            let inst = TabularInstance::random(&mut rng, 2, 7, 5.0, params(beta, gamma));
            let (u, r, p) = (inst.energy().unwrap(), inst.reference().unwrap(), inst.params().unwrap());
            let logits = Array2::from_shape_fn((2, 7), |_| rng.gen_range(-2.0..2.0));
            let policy = TabularPolicy::from_logits(logits.clone()).unwrap();
            let analytic = expected_era_grad(&policy, &u, &r, &p).unwrap();
            let h = 1e-4;
            let mut num = Array2::zeros((2, 7));
            for idx in 0..14 {
                let (x, y) = (idx / 7, idx % 7);
                let mut plus = logits.clone();
                plus[[x, y]] += h;
                let mut minus = logits.clone();
                minus[[x, y]] -= h;
                let f = |l: Array2<f64>| expected_era_loss(&TabularPolicy::from_logits(l).unwrap(), &u, &r, &p).unwrap();
                num[[x, y]] = (f(plus) - f(minus)) / (2.0 * h);
            }
            let err = (&analytic - &num).mapv(|v| v * v).sum().sqrt();
            let scale = analytic.mapv(|v| v * v).sum().sqrt().max(num.mapv(|v| v * v).sum().sqrt());
            assert!(err / scale <= 1e-5, "relative error {}", err / scale);
        }
    }

    #[test]
    fn era_fit_matches_gibbs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = TabularInstance::random(&mut rng, 1, 16, 5.0, params(1.0, 0.1));
        let fit = fit_era_tabular(
            &inst.energy().unwrap(),
            &inst.reference().unwrap(),
            &inst.params().unwrap(),
            &OptimizerConfig::default(),
            None,
        )
        .unwrap();
        let star = exact_gibbs(&inst.energy().unwrap(), &inst.reference().unwrap(), &inst.params().unwrap()).unwrap();
        assert!(total_variation(&fit.policy, &star).unwrap() <= 1e-3);
        assert!(fit.converged);
    }

    #[test]
    fn era_fit_constant_energy_at_zero_gamma_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = TabularInstance::random(&mut rng, 2, 5, 5.0, params(1.0, 0.0));
        let u = EnergyTable::new(Array2::from_elem((2, 5), 1.5)).unwrap();
        let fit = fit_era_tabular(&u, &inst.reference().unwrap(), &params(1.0, 0.0), &OptimizerConfig::default(), None)
            .unwrap();
        let uniform = TabularPolicy::uniform(2, 5).unwrap();
        assert!(total_variation(&fit.policy, &uniform).unwrap() <= 1e-3);
    }

    #[test]
    fn era_fit_from_gauge_shifted_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = TabularInstance::random(&mut rng, 2, 8, 5.0, params(1.0, 1.0));
        let (u, r, p) = (inst.energy().unwrap(), inst.reference().unwrap(), inst.params().unwrap());
        let init = r.gauge_shifted(&GaugeFunction::new(vec![40.0, -12.0]).unwrap()).unwrap();
        let a = fit_era_tabular(&u, &r, &p, &OptimizerConfig::default(), None).unwrap();
        let b = fit_era_tabular(&u, &r, &p, &OptimizerConfig::default(), Some(&init)).unwrap();
        assert!(total_variation(&a.policy, &b.policy).unwrap() <= 2e-3);
    }

    #[test]
    fn era_fit_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inst = TabularInstance::random(&mut rng, 1, 8, 5.0, params(5.0, 0.0));
        let opt = OptimizerConfig { max_steps: 3, ..OptimizerConfig::default() };
        let err = fit_era_tabular(&inst.energy().unwrap(), &inst.reference().unwrap(), &inst.params().unwrap(), &opt, None)
            .unwrap_err();
        match err {
            AlignError::NoConvergence { steps, tv_distance } => {
                assert_eq!(steps, 3);
                assert!(tv_distance > 1e-3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dpo_concentrates_on_the_single_winner() {
        let r = TabularPolicy::uniform(1, 2).unwrap();
        let pairs = [ObservedPair { prompt: 0, winner: 0, loser: 1 }];
        let opt = OptimizerConfig { max_steps: 10_000, tolerance: 0.0, ..OptimizerConfig::default() };
        let fit = dpo_descent(&pairs, &r, &DpoParams::default(), &opt, None).unwrap();
        let p = fit.policy.probs();
        assert_eq!(fit.steps, 10_000);
        assert!(p[[0, 0]] > 0.99 && p[[0, 1]] < 0.01);
    }

    #[test]
    fn dpo_without_pairs_keeps_the_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inst = TabularInstance::random(&mut rng, 2, 4, 5.0, params(1.0, 0.0));
        let r = inst.reference().unwrap();
        let fit = fit_dpo_tabular(&[], &r, &DpoParams::default(), &OptimizerConfig::default(), None).unwrap();
        assert_eq!(fit.policy, r);
        assert_eq!(fit.steps, 0);
        assert_eq!(dpo_tabular_loss(&r, &[], &r, &DpoParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn dpo_symmetric_pairs_balance() {
        let r = TabularPolicy::from_logits(array![[0.3, -0.2, 0.1]]).unwrap();
        let pairs = [
            ObservedPair { prompt: 0, winner: 0, loser: 1 },
            ObservedPair { prompt: 0, winner: 1, loser: 0 },
        ];
        let init = TabularPolicy::from_logits(array![[1.0, -1.0, 0.0]]).unwrap();
        let opt = OptimizerConfig { tolerance: 1e-10, ..OptimizerConfig::default() };
        let fit = fit_dpo_tabular(&pairs, &r, &DpoParams { temperature: 1.0 }, &opt, Some(&init)).unwrap();
        let lp = fit.policy.log_probs();
        let rl = r.log_probs();
        // the optimum equalizes the implicit rewards of 0 and 1
        assert!(((lp[[0, 0]] - rl[[0, 0]]) - (lp[[0, 1]] - rl[[0, 1]])).abs() < 1e-8);
    }

    #[test]
    fn dpo_rejects_bad_pairs() {
        let r = TabularPolicy::uniform(1, 2).unwrap();
        let bad = [ObservedPair { prompt: 0, winner: 1, loser: 1 }];
        assert!(dpo_descent(&bad, &r, &DpoParams::default(), &OptimizerConfig::default(), None).is_err());
        let bad = [ObservedPair { prompt: 2, winner: 0, loser: 1 }];
        assert!(dpo_descent(&bad, &r, &DpoParams::default(), &OptimizerConfig::default(), None).is_err());
    }

    #[test]
    fn policy_invariants() {
        assert!(TabularPolicy::from_logits(Array2::zeros((1, 65))).is_err());
        assert!(TabularPolicy::from_logits(array![[0.0, f64::NAN]]).is_err());
        assert!(EnergyTable::new(array![[0.0, f64::INFINITY]]).is_err());
        let p = TabularPolicy::from_logits(array![[500.0, -500.0, 3.0], [0.0, 1.0, 2.0]]).unwrap();
        for row in p.probs().axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn instance_json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let inst = TabularInstance::random(&mut rng, 2, 3, 5.0, params(0.5, 0.1));
        let text = serde_json::to_string(&inst).unwrap();
        let back: TabularInstance = serde_json::from_str(&text).unwrap();
        assert_eq!(back, inst);
        let fit = back.solve(&OptimizerConfig::default()).unwrap();
        let json = serde_json::to_value(fit.result()).unwrap();
        assert!(json.get("tv_distance").is_some() && json.get("steps").is_some() && json.get("converged").is_some());
    }
}
