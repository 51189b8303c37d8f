//! Fiber-bundle gating over finite spaces.
//!
//! A finite bundle is a surjection from total-space points onto base points;
//! densities are signed weights per point. Gating splits a total-space
//! density into the reflected pushforward K(π₊σ) — the global component —
//! and the residual σ − K(π₊σ), gates each with its own pointwise map, and
//! adds the two back together. The reflecting condition π₊ ∘ K = id makes
//! the residual carry no base-level information, so the two gates cannot
//! double-count.

use serde::{Deserialize, Serialize};

use crate::core::{finite_diff_gradient, Batch, PolicyTable, RatioTuple};
use crate::error::{Error, Result};

/// A finite fiber bundle: total points 0..total, base points 0..base, and a
/// total, surjective projection (every fiber non-empty).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "BundleRepr", into = "BundleRepr")]
pub struct FiniteBundle {
    projection: Vec<usize>,
    base_count: usize,
    fibers: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct BundleRepr {
    total_points: usize,
    base_points: usize,
    projection: Vec<usize>,
}

impl TryFrom<BundleRepr> for FiniteBundle {
    type Error = Error;
    fn try_from(r: BundleRepr) -> Result<Self> {
        if r.projection.len() != r.total_points {
            return Err(Error::InvalidBundle("projection length mismatch".into()));
        }
        FiniteBundle::new(r.base_points, r.projection)
    }
}

impl From<FiniteBundle> for BundleRepr {
    fn from(b: FiniteBundle) -> Self {
        BundleRepr {
            total_points: b.projection.len(),
            base_points: b.base_count,
            projection: b.projection,
        }
    }
}

impl FiniteBundle {
    pub fn new(base_count: usize, projection: Vec<usize>) -> Result<Self> {
        if base_count == 0 || projection.is_empty() {
            return Err(Error::InvalidBundle("empty bundle".into()));
        }
        let mut fibers = vec![Vec::new(); base_count];
        for (e, &b) in projection.iter().enumerate() {
            if b >= base_count {
                return Err(Error::InvalidBundle(format!(
                    "point {e} projects to unknown base point {b}"
                )));
            }
            fibers[b].push(e);
        }
        if let Some(b) = fibers.iter().position(Vec::is_empty) {
            return Err(Error::InvalidBundle(format!(
                "base point {b} has an empty fiber"
            )));
        }
        Ok(Self {
            projection,
            base_count,
            fibers,
        })
    }

    pub fn total_count(&self) -> usize {
        self.projection.len()
    }

    pub fn base_count(&self) -> usize {
        self.base_count
    }

    pub fn project(&self, total_point: usize) -> usize {
        self.projection[total_point]
    }

    pub fn fiber(&self, base_point: usize) -> &[usize] {
        &self.fibers[base_point]
    }
}

/// A signed weight per point of a finite space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub weights: Vec<f64>,
}

impl Density {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            weights: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn max_abs_diff(&self, other: &Density) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A base→total Markov kernel stored as one weight per total point (the
/// conditional mass of that point inside its own fiber; entries across
/// fibers are structurally zero).
///
/// Serialized as (total point, base point, weight) triplets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovKernel {
    weights: Vec<f64>,
}

impl MarkovKernel {
    pub fn new(bundle: &FiniteBundle, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != bundle.total_count() {
            return Err(Error::InvalidBundle("kernel weight length mismatch".into()));
        }
        if let Some(e) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidBundle(format!(
                "kernel weight at point {e} must be finite and >= 0"
            )));
        }
        Ok(Self { weights })
    }

    /// The uniform reflecting kernel: 1/|fiber| on each point.
    pub fn uniform(bundle: &FiniteBundle) -> Self {
        let mut weights = vec![0.0; bundle.total_count()];
        for b in 0..bundle.base_count() {
            let fiber = bundle.fiber(b);
            for &e in fiber {
                weights[e] = 1.0 / fiber.len() as f64;
            }
        }
        Self { weights }
    }

    pub fn weight(&self, total_point: usize) -> f64 {
        self.weights[total_point]
    }

    /// Kernel as (total point, base point, weight) triplets for fixtures.
    pub fn triplets(&self, bundle: &FiniteBundle) -> Vec<(usize, usize, f64)> {
        self.weights
            .iter()
            .enumerate()
            .map(|(e, &w)| (e, bundle.project(e), w))
            .collect()
    }

    /// Rebuild a kernel from fixture triplets, validating each entry against
    /// the bundle's projection.
    pub fn from_triplets(bundle: &FiniteBundle, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut weights = vec![0.0; bundle.total_count()];
        let mut seen = vec![false; bundle.total_count()];
        for &(e, b, w) in triplets {
            if e >= bundle.total_count() || bundle.project(e) != b {
                return Err(Error::InvalidBundle(format!(
                    "triplet ({e}, {b}) does not match the bundle projection"
                )));
            }
            if seen[e] {
                return Err(Error::InvalidBundle(format!(
                    "duplicate triplet for point {e}"
                )));
            }
            seen[e] = true;
            weights[e] = w;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidBundle("missing kernel triplet".into()));
        }
        Self::new(bundle, weights)
    }
}

/// Pushforward: (π₊σ)_b = Σ_{e ∈ fiber(b)} σ_e.
pub fn pushforward(bundle: &FiniteBundle, sigma: &Density) -> Density {
    debug_assert_eq!(sigma.len(), bundle.total_count());
    let mut out = vec![0.0; bundle.base_count()];
    for (e, &w) in sigma.weights.iter().enumerate() {
        out[bundle.project(e)] += w;
    }
    Density::new(out)
}

/// Kernel application: (Kp)_e = k_e · p_{π(e)}.
pub fn kernel_apply(bundle: &FiniteBundle, kernel: &MarkovKernel, p: &Density) -> Density {
    debug_assert_eq!(p.len(), bundle.base_count());
    let out = (0..bundle.total_count())
        .map(|e| kernel.weight(e) * p.weights[bundle.project(e)])
        .collect();
    Density::new(out)
}

/// True iff π₊ ∘ K = id within 1e-12, i.e. each fiber's kernel weights sum
/// to 1.
pub fn check_reflecting(bundle: &FiniteBundle, kernel: &MarkovKernel) -> bool {
    (0..bundle.base_count()).all(|b| {
        let sum: f64 = bundle.fiber(b).iter().map(|&e| kernel.weight(e)).sum();
        (sum - 1.0).abs() <= 1e-12
    })
}

/// Residual σ − K(π₊σ). For a reflecting kernel its pushforward is
/// identically zero.
pub fn residual(bundle: &FiniteBundle, kernel: &MarkovKernel, sigma: &Density) -> Density {
    let reflected = kernel_apply(bundle, kernel, &pushforward(bundle, sigma));
    Density::new(
        sigma
            .weights
            .iter()
            .zip(&reflected.weights)
            .map(|(s, k)| s - k)
            .collect(),
    )
}

/// Pointwise gate on base points: arguments are (base point, value).
pub type BaseGate = Box<dyn Fn(usize, f64) -> f64>;
/// Pointwise gate on total points: arguments are (total point, value, base
/// density). The base-density argument is plumbed through for gates
/// conditioned on global context; the concrete instantiations ignore it.
pub type FiberGate = Box<dyn Fn(usize, f64, &Density) -> f64>;
/// Converts a ratio tuple into a total-space density.
pub type DecomposeMap = Box<dyn Fn(&RatioTuple) -> Density>;
/// Converts a (gated) total-space density back into per-token ratio values.
pub type RecoverMap = Box<dyn Fn(&Density) -> Vec<f64>>;

/// A full gating instance: bundle, reflecting kernel, atomic gates, the
/// decomposition/recovery maps, and the per-token objective weights μ.
pub struct FbgInstance {
    pub bundle: FiniteBundle,
    pub kernel: MarkovKernel,
    pub base_gate: BaseGate,
    pub fiber_gate: FiberGate,
    pub decompose: DecomposeMap,
    pub recover: RecoverMap,
    pub weights: Vec<f64>,
}

/// The two-term gating operator
/// G(σ) = K(g_Base(π₊σ)) + g_Fiber(σ − K(π₊σ)).
pub fn fbg_gate(instance: &FbgInstance, sigma: &Density) -> Density {
    let bundle = &instance.bundle;
    let base = pushforward(bundle, sigma);
    let gated_base = Density::new(
        base.weights
            .iter()
            .enumerate()
            .map(|(b, &v)| (instance.base_gate)(b, v))
            .collect(),
    );
    let reflected = kernel_apply(bundle, &instance.kernel, &gated_base);
    let raw_reflected = kernel_apply(bundle, &instance.kernel, &base);
    let out = (0..bundle.total_count())
        .map(|e| {
            let res = sigma.weights[e] - raw_reflected.weights[e];
            reflected.weights[e] + (instance.fiber_gate)(e, res, &base)
        })
        .collect();
    Density::new(out)
}

/// Gate a ratio tuple through the instance: 𝒢 = 𝓡 ∘ G ∘ 𝓕.
pub fn gate_ratios(instance: &FbgInstance, ratios: &RatioTuple) -> Vec<f64> {
    let sigma = (instance.decompose)(ratios);
    let gated = fbg_gate(instance, &sigma);
    (instance.recover)(&gated)
}

/// Result of the first-order agreement check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FirstOrderReport {
    /// An atomic gate fails the identity conditions at the on-policy
    /// density; agreement is not expected and the check does not apply.
    PreconditionViolated { what: String },
    /// Gates pass the identity conditions; gaps between the gated objective
    /// and the linear surrogate at/near on-policy.
    Agreement {
        value_gap: f64,
        max_rel_grad_err: f64,
    },
}

/// Verify that the instance's objective matches the identity-gate (linear
/// surrogate) objective at on-policy: equal value, and equal
/// finite-difference logit gradients up to relative error.
///
/// Atomic gates violating the identity conditions (value or unit derivative
/// at the on-policy density) are reported as a precondition violation rather
/// than an agreement failure.
pub fn first_order_check(
    instance: &FbgInstance,
    batch: &Batch,
    old_policy: &PolicyTable,
    step: f64,
) -> Result<FirstOrderReport> {
    let ones = RatioTuple::from_token_values(batch, vec![1.0; batch.total()])?;
    let sigma_one = (instance.decompose)(&ones);
    let base_one = pushforward(&instance.bundle, &sigma_one);
    let res_one = residual(&instance.bundle, &instance.kernel, &sigma_one);

    // Identity conditions at the on-policy density, value and slope.
    let probe = step.max(1e-7);
    for b in 0..instance.bundle.base_count() {
        let x = base_one.weights[b];
        let g = (instance.base_gate)(b, x);
        if (g - x).abs() > 1e-12 {
            return Ok(FirstOrderReport::PreconditionViolated {
                what: format!("base gate at point {b}: g({x}) = {g}"),
            });
        }
        let slope = ((instance.base_gate)(b, x + probe) - (instance.base_gate)(b, x - probe))
            / (2.0 * probe);
        if (slope - 1.0).abs() > 1e-5 {
            return Ok(FirstOrderReport::PreconditionViolated {
                what: format!("base gate slope at point {b}: {slope}"),
            });
        }
    }
    for e in 0..instance.bundle.total_count() {
        let x = res_one.weights[e];
        let g = (instance.fiber_gate)(e, x, &base_one);
        if (g - x).abs() > 1e-12 {
            return Ok(FirstOrderReport::PreconditionViolated {
                what: format!("fiber gate at point {e}: g({x}) = {g}"),
            });
        }
        let slope = ((instance.fiber_gate)(e, x + probe, &base_one)
            - (instance.fiber_gate)(e, x - probe, &base_one))
            / (2.0 * probe);
        if (slope - 1.0).abs() > 1e-5 {
            return Ok(FirstOrderReport::PreconditionViolated {
                what: format!("fiber gate slope at point {e}: {slope}"),
            });
        }
    }

    let space = old_policy.space();
    let advantages = batch.advantages();
    let gated_objective = |flat: &[f64]| -> Result<f64> {
        let policy = PolicyTable::from_flat_logits(&space, flat)?;
        let ratios = RatioTuple::from_policies(&policy, old_policy, batch)?;
        let gated = gate_ratios(instance, &ratios);
        Ok(gated
            .iter()
            .zip(&instance.weights)
            .zip(&advantages)
            .map(|((g, w), a)| w * g * a)
            .sum())
    };
    let linear_objective = |flat: &[f64]| -> Result<f64> {
        let policy = PolicyTable::from_flat_logits(&space, flat)?;
        let ratios = RatioTuple::from_policies(&policy, old_policy, batch)?;
        Ok(ratios
            .values()
            .iter()
            .zip(&instance.weights)
            .zip(&advantages)
            .map(|((r, w), a)| w * r * a)
            .sum())
    };

    let flat = old_policy.flat_logits();
    let value_gap = (gated_objective(&flat)? - linear_objective(&flat)?).abs();
    let grad_gated = finite_diff_gradient(gated_objective, &flat, step)?;
    let grad_linear = finite_diff_gradient(linear_objective, &flat, step)?;
    let norm: f64 = grad_linear.iter().map(|g| g * g).sum::<f64>().sqrt();
    let diff: f64 = grad_gated
        .iter()
        .zip(&grad_linear)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let max_rel_grad_err = if norm > 0.0 { diff / norm } else { diff };
    Ok(FirstOrderReport::Agreement {
        value_gap,
        max_rel_grad_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_fiber_bundle() -> FiniteBundle {
        // Base {0, 1}; fiber(0) = {0, 1, 2}, fiber(1) = {3, 4}.
        FiniteBundle::new(2, vec![0, 0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn bundle_validation() {
        assert!(FiniteBundle::new(2, vec![0, 0]).is_err()); // empty fiber 1
        assert!(FiniteBundle::new(1, vec![0, 2]).is_err()); // unknown base
        assert!(FiniteBundle::new(0, vec![]).is_err());
    }

    #[test]
    fn bundle_and_kernel_fixture_round_trip() {
        let bundle = three_fiber_bundle();
        let json = serde_json::to_string(&bundle).unwrap();
        assert!(json.contains("\"projection\":[0,0,0,1,1]"));
        let back: FiniteBundle = serde_json::from_str(&json).unwrap();
        assert_eq!(back.fiber(0), bundle.fiber(0));

        let kernel = MarkovKernel::uniform(&bundle);
        let triplets = kernel.triplets(&bundle);
        let rebuilt = MarkovKernel::from_triplets(&bundle, &triplets).unwrap();
        for e in 0..bundle.total_count() {
            assert_eq!(rebuilt.weight(e), kernel.weight(e));
        }
        // Mismatched projection rejected.
        let mut bad = triplets.clone();
        bad[0].1 = 1;
        assert!(MarkovKernel::from_triplets(&bundle, &bad).is_err());
    }

    #[test]
    fn pushforward_sums_fibers() {
        let bundle = three_fiber_bundle();
        let zero = pushforward(&bundle, &Density::zeros(5));
        assert_eq!(zero.weights, vec![0.0, 0.0]);

        let sigma = Density::new(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let p = pushforward(&bundle, &sigma);
        assert_eq!(p.weights, vec![6.0, 9.0]);
    }

    #[test]
    fn kernel_apply_uniform() {
        let bundle = three_fiber_bundle();
        let kernel = MarkovKernel::uniform(&bundle);
        let p = Density::new(vec![6.0, 1.0]);
        let lifted = kernel_apply(&bundle, &kernel, &p);
        assert_eq!(lifted.weights, vec![2.0, 2.0, 2.0, 0.5, 0.5]);

        let zero = kernel_apply(&bundle, &kernel, &Density::zeros(2));
        assert!(zero.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn reflecting_round_trip() {
        let bundle = three_fiber_bundle();
        let kernel = MarkovKernel::uniform(&bundle);
        assert!(check_reflecting(&bundle, &kernel));
        let p = Density::new(vec![0.3, -1.7]);
        let back = pushforward(&bundle, &kernel_apply(&bundle, &kernel, &p));
        assert!(back.max_abs_diff(&p) <= 1e-12);
    }

    #[test]
    fn non_reflecting_kernel_detected() {
        let bundle = three_fiber_bundle();
        let kernel = MarkovKernel::new(&bundle, vec![0.3, 0.3, 0.3, 0.5, 0.5]).unwrap();
        assert!(!check_reflecting(&bundle, &kernel));
    }

    #[test]
    fn residual_has_zero_pushforward() {
        let bundle = three_fiber_bundle();
        let kernel = MarkovKernel::uniform(&bundle);
        // Fiber weights {1, 3} with a two-point fiber: residual {−1, +1}.
        let small = FiniteBundle::new(1, vec![0, 0]).unwrap();
        let k = MarkovKernel::uniform(&small);
        let r = residual(&small, &k, &Density::new(vec![1.0, 3.0]));
        assert_eq!(r.weights, vec![-1.0, 1.0]);

        let sigma = Density::new(vec![0.4, -0.2, 1.1, 0.9, -2.0]);
        let r = residual(&bundle, &kernel, &sigma);
        let pushed = pushforward(&bundle, &r);
        assert!(pushed.weights.iter().all(|w| w.abs() <= 1e-12));

        // σ in the image of K has zero residual.
        let lifted = kernel_apply(&bundle, &kernel, &Density::new(vec![2.5, -0.5]));
        let r = residual(&bundle, &kernel, &lifted);
        assert!(r.weights.iter().all(|w| w.abs() <= 1e-15));
    }

    fn identity_instance(bundle: FiniteBundle) -> FbgInstance {
        let total = bundle.total_count();
        let kernel = MarkovKernel::uniform(&bundle);
        FbgInstance {
            bundle,
            kernel,
            base_gate: Box::new(|_, x| x),
            fiber_gate: Box::new(|_, x, _| x),
            decompose: Box::new(|r: &RatioTuple| Density::new(r.values().to_vec())),
            recover: Box::new(|d: &Density| d.weights.clone()),
            weights: vec![1.0; total],
        }
    }

    #[test]
    fn identity_gates_give_identity_operator() {
        let instance = identity_instance(three_fiber_bundle());
        let sigma = Density::new(vec![0.2, -0.4, 1.0, 0.6, 0.9]);
        let gated = fbg_gate(&instance, &sigma);
        assert!(gated.max_abs_diff(&sigma) <= 1e-15);
    }

    #[test]
    fn zero_fiber_gate_keeps_only_base_term() {
        let bundle = three_fiber_bundle();
        let kernel = MarkovKernel::uniform(&bundle);
        let instance = FbgInstance {
            bundle: bundle.clone(),
            kernel: kernel.clone(),
            base_gate: Box::new(|_, x| x),
            fiber_gate: Box::new(|_, _, _| 0.0),
            decompose: Box::new(|r: &RatioTuple| Density::new(r.values().to_vec())),
            recover: Box::new(|d: &Density| d.weights.clone()),
            weights: vec![1.0; 5],
        };
        let sigma = Density::new(vec![0.2, -0.4, 1.0, 0.6, 0.9]);
        let gated = fbg_gate(&instance, &sigma);
        let expect = kernel_apply(&bundle, &kernel, &pushforward(&bundle, &sigma));
        assert!(gated.max_abs_diff(&expect) <= 1e-15);
    }
}
