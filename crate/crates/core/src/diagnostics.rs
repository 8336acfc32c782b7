//! Offline analysis of recorded runs: the slow-iterate target `y(theta)`,
//! Lyapunov functions, span semi-norm, linearization gap, Lipschitz probes,
//! the kernel contraction coefficient, TV mixing time and the `c0` estimate.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::approximator::{mean_offset, TwoLayerReluNet};
use crate::env::{sample_next, ArmModel, FeatureMap};
use crate::error::{Error, Result};
use crate::learner::{train_index, Algorithm, StepSchedule, TrainConfig, TrainOutcome};
use crate::par::map_ordered;

fn value(net: &TwoLayerReluNet, phi: &[f64], linearized: bool) -> f64 {
    if linearized {
        net.value_linearized_unchecked(phi)
    } else {
        net.value_unchecked(phi)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `y(theta) = r(s,1) - r(s,0) + sum_s' [p(s'|s,1) - p(s'|s,0)] max_a f(theta; phi(s',a))`,
/// or `y0` with `f0` when `linearized` is set.
pub fn y_of_theta(
    arm: &ArmModel,
    features: &FeatureMap,
    net: &TwoLayerReluNet,
    target_state: usize,
    linearized: bool,
) -> f64 {
    let s = target_state;
    let mut acc = arm.reward(s, 1) - arm.reward(s, 0);
    for next in 0..arm.num_states {
        let w = arm.row(s, 1)[next] - arm.row(s, 0)[next];
        if w != 0.0 {
            let best = value(net, features.get(next, 0), linearized)
                .max(value(net, features.get(next, 1), linearized));
            acc += w * best;
        }
    }
    acc
}

/// Proxies for the fixed points used by the Lyapunov functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    /// Converged weights of a full-network run.
    pub theta_star: Option<Vec<f64>>,
    /// Converged weights of a linearized-network run.
    pub theta0_star: Option<Vec<f64>>,
    /// Oracle index of the target state.
    pub lambda_star: f64,
    pub provenance: String,
}

impl ReferenceSolution {
    /// Builds a reference from finished runs, refusing runs that did not meet
    /// the convergence criterion.
    pub fn from_runs(
        full: Option<&TrainOutcome>,
        linearized: Option<&TrainOutcome>,
        lambda_star: f64,
    ) -> Result<Self> {
        let take = |run: Option<&TrainOutcome>| -> Result<Option<Vec<f64>>> {
            match run {
                None => Ok(None),
                Some(r) if r.meets_reference_criterion() => Ok(Some(r.model.params())),
                Some(r) => Err(Error::ReferenceNotConverged(format!(
                    "{} run for state {} (seed {}): lambda oscillation {:e}, mean step change {:e}",
                    r.algorithm.name(),
                    r.target_state + 1,
                    r.seed,
                    r.lambda_oscillation,
                    r.last_step_change
                ))),
            }
        };
        let describe = |r: Option<&TrainOutcome>| {
            r.map(|r| format!("{}:seed={}:T={}", r.algorithm.name(), r.seed, r.checkpoints.last().map_or(0, |c| c.k)))
        };
        let provenance = [describe(full), describe(linearized)]
            .into_iter()
            .flatten()
            .collect::<Vec<_>>()
            .join(";");
        Ok(ReferenceSolution {
            theta_star: take(full)?,
            theta0_star: take(linearized)?,
            lambda_star,
            provenance,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LyapunovKind {
    /// Against the full network and `theta*`.
    Full,
    /// Against the linearization and `theta0*`.
    Linearized,
}

/// Inputs shared by every Lyapunov evaluation of one run.
#[derive(Debug, Clone, Copy)]
pub struct LyapunovContext<'a> {
    pub arm: &'a ArmModel,
    pub features: &'a FeatureMap,
    /// Supplies output signs and the frozen initialization.
    pub net: &'a TwoLayerReluNet,
    pub target_state: usize,
    pub schedule: StepSchedule,
    pub reference: &'a ReferenceSolution,
}

/// Residual pair `(||theta_k - theta_ref||, |lambda_k - y(theta_k)|)`.
fn residuals(ctx: &LyapunovContext, theta: &[f64], lambda: f64, which: LyapunovKind) -> Result<(f64, f64)> {
    let (reference, linearized) = match which {
        LyapunovKind::Full => (&ctx.reference.theta_star, false),
        LyapunovKind::Linearized => (&ctx.reference.theta0_star, true),
    };
    let reference = reference
        .as_ref()
        .ok_or_else(|| Error::MissingReference(format!("{which:?} reference weights not set")))?;
    if reference.len() != theta.len() {
        return Err(Error::InvalidInput("reference and iterate differ in length".into()));
    }
    let net = ctx.net.with_theta(theta)?;
    let y = y_of_theta(ctx.arm, ctx.features, &net, ctx.target_state, linearized);
    Ok((dist(theta, reference), (lambda - y).abs()))
}

/// `M = (eta_k/alpha_k) ||theta_k - theta_ref||^2 + |lambda_k - y(theta_k)|^2`.
pub fn lyapunov(ctx: &LyapunovContext, k: usize, theta: &[f64], lambda: f64, which: LyapunovKind) -> Result<f64> {
    let (t, l) = residuals(ctx, theta, lambda, which)?;
    Ok(ctx.schedule.ratio(k) * t * t + l * l)
}

/// One row of `diagnostics.csv`, plus the linearized residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub k: usize,
    pub theta_residual: f64,
    pub lambda_residual: f64,
    pub theta_residual_hat: f64,
    pub lambda_residual_hat: f64,
    pub lyapunov_m: f64,
    pub lyapunov_m_hat: f64,
    pub ratio: f64,
}

pub const DIAGNOSTICS_HEADER: [&str; 6] = [
    "k",
    "theta_residual",
    "lambda_residual",
    "lyapunov_m",
    "lyapunov_m_hat",
    "ratio",
];

impl DiagnosticsRecord {
    pub fn csv_row(&self) -> [String; 6] {
        [
            self.k.to_string(),
            self.theta_residual.to_string(),
            self.lambda_residual.to_string(),
            self.lyapunov_m.to_string(),
            self.lyapunov_m_hat.to_string(),
            self.ratio.to_string(),
        ]
    }
}

/// Evaluates both Lyapunov functions at one recorded iterate.
pub fn diagnostics_record(ctx: &LyapunovContext, k: usize, theta: &[f64], lambda: f64) -> Result<DiagnosticsRecord> {
    let ratio = ctx.schedule.ratio(k);
    let (t, l) = residuals(ctx, theta, lambda, LyapunovKind::Full)?;
    let (th, lh) = residuals(ctx, theta, lambda, LyapunovKind::Linearized)?;
    Ok(DiagnosticsRecord {
        k,
        theta_residual: t,
        lambda_residual: l,
        theta_residual_hat: th,
        lambda_residual_hat: lh,
        lyapunov_m: ratio * t * t + l * l,
        lyapunov_m_hat: ratio * th * th + lh * lh,
        ratio,
    })
}

/// `max(v) - min(v)`.
pub fn span_seminorm(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::InvalidInput("span of an empty vector".into()));
    }
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    Ok(hi - lo)
}

/// `max_{(s,a)} |f(theta; phi) - f0(theta; phi)|` at the given weights.
pub fn gap_at(net: &TwoLayerReluNet, features: &FeatureMap, theta: &[f64]) -> Result<f64> {
    let probe = net.with_theta(theta)?;
    Ok(features
        .table
        .iter()
        .map(|phi| (probe.value_unchecked(phi) - probe.value_linearized_unchecked(phi)).abs())
        .fold(0.0, f64::max))
}

/// Largest `|f - f0|` over `num_probes` weight vectors on the sphere of the
/// given radius around `theta_0`, and over all state-action pairs.
pub fn linearization_gap<R: Rng + ?Sized>(
    net: &TwoLayerReluNet,
    features: &FeatureMap,
    radius: f64,
    num_probes: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidInput(format!("radius must be nonnegative, got {radius}")));
    }
    let theta0 = net.theta0();
    let mut worst: f64 = 0.0;
    for _ in 0..num_probes {
        let dir: Vec<f64> = (0..theta0.len()).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&dir);
        let scale = if n > 0.0 { radius / n } else { 0.0 };
        let theta: Vec<f64> = theta0.iter().zip(&dir).map(|(t, d)| t + scale * d).collect();
        worst = worst.max(gap_at(net, features, &theta)?);
    }
    Ok(worst)
}

/// A sampled point `X = (S, A, S')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePoint {
    pub state: usize,
    pub action: u8,
    pub next_state: usize,
}

/// `h0(X, theta, lambda) = grad f0(phi(S,A)) * Delta0` with `Delta0` built from
/// `f0` and `I0`.
pub fn h0(arm: &ArmModel, features: &FeatureMap, net: &TwoLayerReluNet, x: ProbePoint, lambda: f64) -> Vec<f64> {
    let phi = features.get(x.state, x.action);
    let f_next = value(net, features.get(x.next_state, 0), true).max(value(net, features.get(x.next_state, 1), true));
    let gated = if x.action == 0 { lambda } else { 0.0 };
    let delta = arm.reward(x.state, x.action) + gated - mean_offset(net, features, true) + f_next
        - value(net, phi, true);
    let mut g = net.grad_linearized(phi).expect("feature dimension matches net");
    g.iter_mut().for_each(|v| *v *= delta);
    g
}

/// `g0(theta) = f0(theta; phi(s,1)) - f0(theta; phi(s,0))`.
pub fn g0(features: &FeatureMap, net: &TwoLayerReluNet, target_state: usize) -> f64 {
    value(net, features.get(target_state, 1), true) - value(net, features.get(target_state, 0), true)
}

/// Observed Lipschitz ratios for one probe pair; `None` entries mark
/// zero-difference pairs, which are skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzRatios {
    /// `||h0_1 - h0_2|| / (3 ||dtheta|| + |dlambda|)`.
    pub h0: Option<f64>,
    /// `|g0_1 - g0_2| / (2 ||dtheta||)`.
    pub g0: Option<f64>,
    /// `|y0_1 - y0_2| / (2 ||dtheta||)`.
    pub y0: Option<f64>,
}

pub const LIPSCHITZ_H_THETA: f64 = 3.0;
pub const LIPSCHITZ_H_LAMBDA: f64 = 1.0;
pub const LIPSCHITZ_G: f64 = 2.0;
pub const LIPSCHITZ_Y: f64 = 2.0;

#[allow(clippy::too_many_arguments)]
pub fn lipschitz_ratios(
    arm: &ArmModel,
    features: &FeatureMap,
    template: &TwoLayerReluNet,
    target_state: usize,
    x: ProbePoint,
    (theta1, lambda1): (&[f64], f64),
    (theta2, lambda2): (&[f64], f64),
) -> Result<LipschitzRatios> {
    let n1 = template.with_theta(theta1)?;
    let n2 = template.with_theta(theta2)?;
    let dtheta = dist(theta1, theta2);
    let dlambda = (lambda1 - lambda2).abs();
    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);

    let dh = dist(&h0(arm, features, &n1, x, lambda1), &h0(arm, features, &n2, x, lambda2));
    let dg = (g0(features, &n1, target_state) - g0(features, &n2, target_state)).abs();
    let dy = (y_of_theta(arm, features, &n1, target_state, true) - y_of_theta(arm, features, &n2, target_state, true)).abs();
    Ok(LipschitzRatios {
        h0: ratio(dh, LIPSCHITZ_H_THETA * dtheta + LIPSCHITZ_H_LAMBDA * dlambda),
        g0: ratio(dg, LIPSCHITZ_G * dtheta),
        y0: ratio(dy, LIPSCHITZ_Y * dtheta),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantProbe {
    pub max_ratio: f64,
    pub violations: usize,
    pub evaluated: usize,
}

impl ConstantProbe {
    fn record(&mut self, r: Option<f64>) {
        if let Some(r) = r {
            self.evaluated += 1;
            self.max_ratio = self.max_ratio.max(r);
            if r > 1.0 + 1e-9 {
                self.violations += 1;
            }
        }
    }
}

/// Empirical check of the Lipschitz constants `(3, 1)` for `h0`, `2` for
/// `g0` and `2` for `y0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub pairs: usize,
    pub h0: ConstantProbe,
    pub g0: ConstantProbe,
    pub y0: ConstantProbe,
}

impl LipschitzReport {
    pub fn total_violations(&self) -> usize {
        self.h0.violations + self.g0.violations + self.y0.violations
    }
}

/// Samples `num_pairs` random `(theta_1, lambda_1)`, `(theta_2, lambda_2)` and
/// `X`. Weights are Gaussian perturbations of scale 1 around `theta_0`,
/// subsidies are standard normal, `(S, A)` is uniform and `S'` follows the
/// kernel. The target state of `g0`/`y0` is drawn uniformly per pair.
pub fn lipschitz_probe<R: Rng + ?Sized>(
    arm: &ArmModel,
    features: &FeatureMap,
    template: &TwoLayerReluNet,
    num_pairs: usize,
    rng: &mut R,
) -> Result<LipschitzReport> {
    let mut report = LipschitzReport { pairs: num_pairs, ..Default::default() };
    let theta0 = template.theta0().to_vec();
    let perturb = |rng: &mut R| -> Vec<f64> {
        theta0
            .iter()
            .map(|t| {
                let z: f64 = StandardNormal.sample(rng);
                t + z
            })
            .collect()
    };
    for _ in 0..num_pairs {
        let t1 = perturb(rng);
        let t2 = perturb(rng);
        let l1: f64 = StandardNormal.sample(rng);
        let l2: f64 = StandardNormal.sample(rng);
        let state = rng.random_range(0..arm.num_states);
        let action = u8::from(rng.random::<bool>());
        let next_state = sample_next(arm, state, action, rng)?.next_state;
        let target = rng.random_range(0..arm.num_states);
        let x = ProbePoint { state, action, next_state };
        let r = lipschitz_ratios(arm, features, template, target, x, (&t1, l1), (&t2, l2))?;
        report.h0.record(r.h0);
        report.g0.record(r.g0);
        report.y0.record(r.y0);
    }
    Ok(report)
}

/// `kappa = max over state-action pairs of d_TV(p(.|s,a), p(.|s',a'))` with
/// `d_TV = (1/2) sum |p - p'|`.
pub fn kappa_estimate(arm: &ArmModel) -> f64 {
    let rows: Vec<&[f64]> = (0..arm.num_states)
        .flat_map(|s| [arm.row(s, 0), arm.row(s, 1)])
        .collect();
    let mut best: f64 = 0.0;
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            let tv = 0.5 * a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>();
            best = best.max(tv);
        }
    }
    best.min(1.0)
}

/// A frozen stationary policy: probability of the active action per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub active_prob: Vec<f64>,
}

impl PolicySpec {
    pub fn uniform(num_states: usize) -> Self {
        PolicySpec { active_prob: vec![0.5; num_states] }
    }

    /// Epsilon-greedy around fixed greedy actions.
    pub fn epsilon_greedy(greedy: &[u8], epsilon: f64) -> Self {
        PolicySpec {
            active_prob: greedy
                .iter()
                .map(|&a| epsilon / 2.0 + (1.0 - epsilon) * f64::from(a))
                .collect(),
        }
    }

    fn prob(&self, state: usize, action: u8) -> f64 {
        if action == 1 {
            self.active_prob[state]
        } else {
            1.0 - self.active_prob[state]
        }
    }
}

/// Transition matrix of `X = (S, A, S')` under a frozen policy, indexed by
/// `(s * 2 + a) * S + s'`.
pub fn transition_chain(arm: &ArmModel, policy: &PolicySpec) -> Vec<Vec<f64>> {
    let n = arm.num_states;
    let size = 2 * n * n;
    let idx = |s: usize, a: u8, s2: usize| (s * 2 + a as usize) * n + s2;
    let mut p = vec![vec![0.0; size]; size];
    for s in 0..n {
        for a in 0..2u8 {
            for mid in 0..n {
                let row = &mut p[idx(s, a, mid)];
                for a2 in 0..2u8 {
                    let pa = policy.prob(mid, a2);
                    for (end, &q) in arm.row(mid, a2).iter().enumerate() {
                        row[idx(mid, a2, end)] += pa * q;
                    }
                }
            }
        }
    }
    p
}

fn vec_mat(v: &[f64], p: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (vi, row) in v.iter().zip(p) {
        if *vi != 0.0 {
            for (o, q) in out.iter_mut().zip(row) {
                *o += vi * q;
            }
        }
    }
    out
}

const MIXING_CAP: usize = 10_000;

/// Stationary distribution by power iteration from the uniform distribution.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = p.len();
    let mut mu = vec![1.0 / n as f64; n];
    for _ in 0..MIXING_CAP * 10 {
        let next = vec_mat(&mu, p);
        let change: f64 = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
        mu = next;
        if change < 1e-15 {
            return Ok(mu);
        }
    }
    Err(Error::AssumptionViolation(
        "power iteration for the stationary distribution did not converge".into(),
    ))
}

/// Smallest `k >= 1` with `max_x d_TV(P^k(x, .), mu) <= delta` for the chain
/// on `(S, A, S')` induced by `policy`.
pub fn mixing_time_estimate(arm: &ArmModel, policy: &PolicySpec, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("delta must lie in (0,1), got {delta}")));
    }
    if policy.active_prob.len() != arm.num_states {
        return Err(Error::InvalidInput("policy does not match the arm".into()));
    }
    let p = transition_chain(arm, policy);
    mixing_time_of_chain(&p, delta)
}

/// Mixing time of an explicit chain.
pub fn mixing_time_of_chain(p: &[Vec<f64>], delta: f64) -> Result<usize> {
    let mu = stationary_distribution(p)?;
    let mut rows: Vec<Vec<f64>> = p.to_vec();
    for k in 1..=MIXING_CAP {
        let worst = rows
            .iter()
            .map(|r| 0.5 * r.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        if worst <= delta {
            return Ok(k);
        }
        rows = rows.iter().map(|r| vec_mat(r, p)).collect();
    }
    Err(Error::AssumptionViolation(format!(
        "chain did not mix to within {delta} in {MIXING_CAP} steps (reducible or periodic)"
    )))
}

/// `c0` for one width, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C0Estimate {
    pub width: usize,
    /// Seed-averaged estimate; `None` when every seed was indeterminate.
    pub mean: Option<f64>,
    /// Per-seed values, `None` where the span was below `1e-10`.
    pub per_seed: Vec<Option<f64>>,
}

/// Ratio `||theta0* - theta*|| / span(f0(theta0*) - f(theta*))` from a full
/// and a linearized run sharing their initialization; `None` if the span is
/// below `1e-10`.
pub fn c0_ratio(features: &FeatureMap, full: &TwoLayerReluNet, linearized: &TwoLayerReluNet) -> Result<Option<f64>> {
    let diffs: Vec<f64> = features
        .table
        .iter()
        .map(|phi| linearized.value_linearized_unchecked(phi) - full.value_unchecked(phi))
        .collect();
    let span = span_seminorm(&diffs)?;
    if span < 1e-10 {
        return Ok(None);
    }
    Ok(Some(dist(linearized.theta(), full.theta()) / span))
}

/// For each width, trains a full and a linearized network per seed (same
/// seed, hence the same initialization) on `target_state` and reports `c0`.
pub fn c0_estimate(
    arm: &ArmModel,
    features: &FeatureMap,
    widths: &[usize],
    base: &TrainConfig,
    seeds: &[u64],
    target_state: usize,
    parallel: bool,
) -> Result<Vec<C0Estimate>> {
    let jobs: Vec<(usize, u64)> = widths
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let results = map_ordered(jobs, parallel, |(m, seed)| -> Result<Option<f64>> {
        let cfg = TrainConfig { width: m, seed, ..base.clone() };
        let full = train_index(arm, features, Algorithm::Neural, target_state, &cfg)?;
        let lin = train_index(arm, features, Algorithm::Linearized, target_state, &cfg)?;
        ReferenceSolution::from_runs(Some(&full), Some(&lin), f64::NAN)?;
        c0_ratio(features, full.model.net().unwrap(), lin.model.net().unwrap())
    });
    let mut it = results.into_iter();
    widths
        .iter()
        .map(|&width| {
            let per_seed = it.by_ref().take(seeds.len()).collect::<Result<Vec<_>>>()?;
            let vals: Vec<f64> = per_seed.iter().flatten().copied().collect();
            let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
            Ok(C0Estimate { width, mean, per_seed })
        })
        .collect()
}
