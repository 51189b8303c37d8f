//! Gating over a chain of fibrations, and the four-level
//! domain / prompt-group / trajectory / token instantiation.
//!
//! A chain B_0 ← B_1 ← … ← B_n carries one reflecting kernel per link and
//! one pointwise gate per stratum. The gating operator pushes the total
//! density down to every stratum, gates the stratum-0 density directly and
//! each higher stratum's residual against the reflected coarser density,
//! then lifts all contributions back to B_n and sums. With n = 1 this is
//! exactly the two-space bundle operator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::core::{Batch, GatingConfig, RatioTuple};
use crate::error::{Error, Result};
use crate::fbg::Density;
use crate::fiberpo::{
    g_agg, gated_residual, signed_aggregates_all, token_gate_states, SignedAggregates,
};
use crate::rgf::trajectory_weights;

/// Pointwise gate on one stratum: arguments are (point, value).
pub type StratumGate = Box<dyn Fn(usize, f64) -> f64>;

/// A chain of strata with projections π_k: B_k → B_{k−1}, reflecting kernels
/// K_k: B_k → B_{k+1}, and a pointwise gate per stratum.
pub struct FibrationChain {
    strata_sizes: Vec<usize>,
    /// `projections[k-1][p]` is π_k(p) for p ∈ B_k, k = 1..n.
    projections: Vec<Vec<usize>>,
    /// `kernels[k][p]` is the kernel weight of p ∈ B_{k+1} within its fiber,
    /// k = 0..n−1.
    kernels: Vec<Vec<f64>>,
    gates: Vec<StratumGate>,
}

impl FibrationChain {
    /// Validates totals, surjectivity, and the reflecting condition at every
    /// level (within 1e-12).
    pub fn new(
        strata_sizes: Vec<usize>,
        projections: Vec<Vec<usize>>,
        kernels: Vec<Vec<f64>>,
        gates: Vec<StratumGate>,
    ) -> Result<Self> {
        let n = strata_sizes
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::InvalidBundle("chain needs at least one stratum".into()))?;
        if n == 0 {
            return Err(Error::InvalidBundle("chain needs depth >= 1".into()));
        }
        if projections.len() != n || kernels.len() != n || gates.len() != n + 1 {
            return Err(Error::InvalidBundle(format!(
                "expected {n} projections/kernels and {} gates",
                n + 1
            )));
        }
        for (k, proj) in projections.iter().enumerate() {
            let upper = strata_sizes[k + 1];
            let lower = strata_sizes[k];
            if proj.len() != upper {
                return Err(Error::InvalidBundle(format!(
                    "projection {} has wrong length",
                    k + 1
                )));
            }
            let mut hit = vec![false; lower];
            for &b in proj {
                if b >= lower {
                    return Err(Error::InvalidBundle(format!(
                        "projection {} maps outside stratum {k}",
                        k + 1
                    )));
                }
                hit[b] = true;
            }
            if !hit.iter().all(|&h| h) {
                return Err(Error::InvalidBundle(format!(
                    "projection {} is not surjective",
                    k + 1
                )));
            }
        }
        let chain = Self {
            strata_sizes,
            projections,
            kernels,
            gates,
        };
        for k in 0..n {
            if !chain.kernel_reflecting(k) {
                return Err(Error::InvalidBundle(format!(
                    "kernel {k} violates the reflecting condition"
                )));
            }
        }
        Ok(chain)
    }

    pub fn depth(&self) -> usize {
        self.strata_sizes.len() - 1
    }

    pub fn stratum_size(&self, k: usize) -> usize {
        self.strata_sizes[k]
    }

    /// π_{k+1,*} ∘ K_k = id within 1e-12.
    pub fn kernel_reflecting(&self, k: usize) -> bool {
        let lower = self.strata_sizes[k];
        let mut sums = vec![0.0; lower];
        for (p, &w) in self.kernels[k].iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return false;
            }
            sums[self.projections[k][p]] += w;
        }
        sums.iter().all(|s| (s - 1.0).abs() <= 1e-12)
    }

    fn push_once(&self, k: usize, sigma: &Density) -> Density {
        // π_{k*}: density on B_k → density on B_{k−1}.
        let mut out = vec![0.0; self.strata_sizes[k - 1]];
        for (p, &w) in sigma.weights.iter().enumerate() {
            out[self.projections[k - 1][p]] += w;
        }
        Density::new(out)
    }

    fn lift_once(&self, k: usize, p: &Density) -> Density {
        // K_k: density on B_k → density on B_{k+1}.
        let out = (0..self.strata_sizes[k + 1])
            .map(|point| self.kernels[k][point] * p.weights[self.projections[k][point]])
            .collect();
        Density::new(out)
    }

    /// K_{n←k}: lift a stratum-k density all the way to B_n.
    pub fn lift_to_top(&self, k: usize, p: &Density) -> Density {
        let mut current = p.clone();
        for level in k..self.depth() {
            current = self.lift_once(level, &current);
        }
        current
    }

    /// Mutate one kernel weight (test hook for fault injection; the
    /// reflecting condition is deliberately *not* re-checked).
    pub fn corrupt_kernel_weight(&mut self, level: usize, point: usize, weight: f64) {
        self.kernels[level][point] = weight;
    }
}

/// π_{k←n,*}: push a top density down to stratum k.
pub fn compose_pushforward(chain: &FibrationChain, sigma: &Density, k: usize) -> Result<Density> {
    let n = chain.depth();
    if k > n {
        return Err(Error::InvalidBundle(format!("stratum {k} out of range")));
    }
    if sigma.len() != chain.stratum_size(n) {
        return Err(Error::InvalidBundle("density/stratum size mismatch".into()));
    }
    let mut current = sigma.clone();
    for level in (k + 1..=n).rev() {
        current = chain.push_once(level, &current);
    }
    Ok(current)
}

/// Per-stratum contribution K_{n←k}(G_k(σ_k)) of the gating operator;
/// the full operator is their sum over k = 0..n.
pub fn fgh_stratum_term(chain: &FibrationChain, sigma: &Density, k: usize) -> Result<Density> {
    let sigma_k = compose_pushforward(chain, sigma, k)?;
    let gated_k = if k == 0 {
        Density::new(
            sigma_k
                .weights
                .iter()
                .enumerate()
                .map(|(p, &v)| (chain.gates[0])(p, v))
                .collect(),
        )
    } else {
        let below = chain.push_once(k, &sigma_k);
        let reflected = chain.lift_once(k - 1, &below);
        Density::new(
            sigma_k
                .weights
                .iter()
                .zip(&reflected.weights)
                .enumerate()
                .map(|(p, (&v, &r))| (chain.gates[k])(p, v - r))
                .collect(),
        )
    };
    Ok(chain.lift_to_top(k, &gated_k))
}

/// The full gating operator G(σ) = Σ_k K_{n←k}(G_k(π_{k←n,*}σ)).
pub fn fgh_gate(chain: &FibrationChain, sigma: &Density) -> Result<Density> {
    let mut out = Density::zeros(chain.stratum_size(chain.depth()));
    for k in 0..=chain.depth() {
        let term = fgh_stratum_term(chain, sigma, k)?;
        for (o, t) in out.weights.iter_mut().zip(&term.weights) {
            *o += t;
        }
    }
    Ok(out)
}

/// Per-level channel budget override.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LevelBudgets {
    pub c_plus: f64,
    pub c_minus: f64,
}

impl LevelBudgets {
    fn channel(&self, sign: i8) -> f64 {
        if sign >= 0 {
            self.c_plus
        } else {
            self.c_minus
        }
    }
}

/// Gating configuration for the four-level objective. By default the same
/// (C⁺, C⁻) applies at every level; per-level overrides are available since
/// different levels may warrant different radii.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainGatingConfig {
    pub gating: GatingConfig,
    #[serde(default)]
    pub domain_budgets: Option<LevelBudgets>,
    #[serde(default)]
    pub group_budgets: Option<LevelBudgets>,
    #[serde(default)]
    pub trajectory_budgets: Option<LevelBudgets>,
}

impl DomainGatingConfig {
    pub fn uniform(gating: GatingConfig) -> Self {
        Self {
            gating,
            domain_budgets: None,
            group_budgets: None,
            trajectory_budgets: None,
        }
    }

    fn budget(&self, level: Option<LevelBudgets>, sign: i8) -> f64 {
        level
            .map(|b| b.channel(sign))
            .unwrap_or_else(|| self.gating.channel_budget(sign))
    }

    pub fn domain_budget(&self, sign: i8) -> f64 {
        self.budget(self.domain_budgets, sign)
    }

    pub fn group_budget(&self, sign: i8) -> f64 {
        self.budget(self.group_budgets, sign)
    }

    pub fn trajectory_budget(&self, sign: i8) -> f64 {
        self.budget(self.trajectory_budgets, sign)
    }
}

/// Per-group or per-domain bookkeeping.
#[derive(Debug, Clone)]
pub struct UnitInfo {
    pub id: usize,
    /// Member slots: trajectory slots for groups, group slots for domains.
    pub members: Vec<usize>,
    /// Total token count (T_g or T_D).
    pub token_count: usize,
    /// Number of trajectories in the unit.
    pub traj_count: usize,
}

/// A batch plus a two-level assignment: every trajectory belongs to exactly
/// one prompt group, every group to exactly one domain.
#[derive(Debug, Clone)]
pub struct DomainBatch {
    batch: Batch,
    group_of_traj: Vec<usize>,
    domain_of_group: Vec<usize>,
    groups: Vec<UnitInfo>,
    domains: Vec<UnitInfo>,
}

impl DomainBatch {
    /// `assignment` maps trajectory id → (group id, domain id).
    pub fn new(batch: Batch, assignment: &BTreeMap<usize, (usize, usize)>) -> Result<Self> {
        let mut group_ids: BTreeMap<usize, usize> = BTreeMap::new(); // group id → domain id
        let mut group_members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (slot, info) in batch.trajectories().iter().enumerate() {
            let &(group, domain) = assignment.get(&info.id).ok_or_else(|| {
                Error::InvalidAssignment(format!("trajectory {} has no assignment", info.id))
            })?;
            if let Some(&existing) = group_ids.get(&group) {
                if existing != domain {
                    return Err(Error::InvalidAssignment(format!(
                        "group {group} assigned to two domains ({existing}, {domain})"
                    )));
                }
            } else {
                group_ids.insert(group, domain);
            }
            group_members.entry(group).or_default().push(slot);
        }

        let mut groups = Vec::new();
        let mut group_slot_of_id: BTreeMap<usize, usize> = BTreeMap::new();
        for (gid, members) in &group_members {
            group_slot_of_id.insert(*gid, groups.len());
            let token_count = members
                .iter()
                .map(|&slot| batch.trajectories()[slot].len)
                .sum();
            groups.push(UnitInfo {
                id: *gid,
                members: members.clone(),
                token_count,
                traj_count: members.len(),
            });
        }

        let mut domain_members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (gid, did) in &group_ids {
            domain_members
                .entry(*did)
                .or_default()
                .push(group_slot_of_id[gid]);
        }
        let mut domains = Vec::new();
        let mut domain_slot_of_id: BTreeMap<usize, usize> = BTreeMap::new();
        for (did, members) in &domain_members {
            domain_slot_of_id.insert(*did, domains.len());
            let token_count = members.iter().map(|&g| groups[g].token_count).sum();
            let traj_count = members.iter().map(|&g| groups[g].traj_count).sum();
            domains.push(UnitInfo {
                id: *did,
                members: members.clone(),
                token_count,
                traj_count,
            });
        }

        let group_of_traj = batch
            .trajectories()
            .iter()
            .map(|info| group_slot_of_id[&assignment[&info.id].0])
            .collect();
        let domain_of_group = groups
            .iter()
            .map(|g| domain_slot_of_id[&group_ids[&g.id]])
            .collect();

        Ok(Self {
            batch,
            group_of_traj,
            domain_of_group,
            groups,
            domains,
        })
    }

    /// Degenerate hierarchy: every trajectory its own prompt group, one
    /// domain.
    pub fn degenerate(batch: Batch) -> Result<Self> {
        let assignment: BTreeMap<usize, (usize, usize)> = batch
            .trajectories()
            .iter()
            .map(|info| (info.id, (info.id, 0)))
            .collect();
        Self::new(batch, &assignment)
    }

    pub fn batch(&self) -> &Batch {
        &self.batch
    }

    pub fn groups(&self) -> &[UnitInfo] {
        &self.groups
    }

    pub fn domains(&self) -> &[UnitInfo] {
        &self.domains
    }

    pub fn group_of_traj(&self, traj_slot: usize) -> usize {
        self.group_of_traj[traj_slot]
    }

    pub fn domain_of_group(&self, group_slot: usize) -> usize {
        self.domain_of_group[group_slot]
    }
}

/// Aggregates at every level of the hierarchy.
#[derive(Debug, Clone)]
pub struct HierarchicalAggregates {
    pub trajectory: Vec<SignedAggregates>,
    pub group: Vec<SignedAggregates>,
    pub domain: Vec<SignedAggregates>,
}

/// Group aggregates are unweighted trajectory means (even for unequal T_τ);
/// domain aggregates weight each group by its trajectory count.
pub fn group_domain_aggregates(
    dbatch: &DomainBatch,
    ratios: &RatioTuple,
) -> HierarchicalAggregates {
    let trajectory = signed_aggregates_all(dbatch.batch(), ratios);
    let group: Vec<SignedAggregates> = dbatch
        .groups()
        .iter()
        .map(|g| {
            let mut plus = 0.0;
            let mut minus = 0.0;
            for &slot in &g.members {
                plus += trajectory[slot].log_s_plus;
                minus += trajectory[slot].log_s_minus;
            }
            SignedAggregates {
                log_s_plus: plus / g.traj_count as f64,
                log_s_minus: minus / g.traj_count as f64,
            }
        })
        .collect();
    let domain = dbatch
        .domains()
        .iter()
        .map(|d| {
            let mut plus = 0.0;
            let mut minus = 0.0;
            for &gslot in &d.members {
                let w = dbatch.groups()[gslot].traj_count as f64 / d.traj_count as f64;
                plus += w * group[gslot].log_s_plus;
                minus += w * group[gslot].log_s_minus;
            }
            SignedAggregates {
                log_s_plus: plus,
                log_s_minus: minus,
            }
        })
        .collect();
    HierarchicalAggregates {
        trajectory,
        group,
        domain,
    }
}

fn domain_exponent_channel(
    dbatch: &DomainBatch,
    aggs: &HierarchicalAggregates,
    config: &DomainGatingConfig,
    traj_slot: usize,
    sign: i8,
) -> f64 {
    let gslot = dbatch.group_of_traj(traj_slot);
    let dslot = dbatch.domain_of_group(gslot);
    let s_tau = aggs.trajectory[traj_slot].channel(sign);
    let s_g = aggs.group[gslot].channel(sign);
    let s_d = aggs.domain[dslot].channel(sign);
    let t_tau = dbatch.batch().trajectories()[traj_slot].len as u64;
    let t_g = dbatch.groups()[gslot].token_count as u64;
    let t_d = dbatch.domains()[dslot].token_count as u64;
    g_agg(s_d, config.domain_budget(sign), t_d)
        + g_agg(s_g - s_d, config.group_budget(sign), t_g)
        + g_agg(s_tau - s_g, config.trajectory_budget(sign), t_tau)
}

/// Base weight per trajectory: exp of the six gated aggregate terms, three
/// per sign channel (domain drift, group residual, trajectory residual).
pub fn domain_base_weights(
    dbatch: &DomainBatch,
    aggs: &HierarchicalAggregates,
    config: &DomainGatingConfig,
) -> Vec<f64> {
    (0..dbatch.batch().num_trajectories())
        .map(|slot| {
            (domain_exponent_channel(dbatch, aggs, config, slot, 1)
                - domain_exponent_channel(dbatch, aggs, config, slot, -1))
            .exp()
        })
        .collect()
}

/// Full four-level gate per token: base weight times the trajectory-level
/// gated residual (identical to the two-level fiber gate).
pub fn fiberpo_domain_gate(
    dbatch: &DomainBatch,
    ratios: &RatioTuple,
    config: &DomainGatingConfig,
) -> Result<Vec<f64>> {
    let batch = dbatch.batch();
    let aggs = group_domain_aggregates(dbatch, ratios);
    let base = domain_base_weights(dbatch, &aggs, config);
    let states = token_gate_states(batch, ratios, &config.gating);
    Ok((0..batch.total())
        .map(|i| {
            base[batch.token_trajectory(i)] * gated_residual(&states[i], config.gating.epsilon())
        })
        .collect())
}

/// Objective Σ_i (1/(|Tj|·T_τ)) · w_Base · r̃_Fiber · Â_i.
pub fn fiberpo_domain_objective(
    dbatch: &DomainBatch,
    ratios: &RatioTuple,
    config: &DomainGatingConfig,
) -> Result<f64> {
    let batch = dbatch.batch();
    let gated = fiberpo_domain_gate(dbatch, ratios, config)?;
    let mu = trajectory_weights(batch);
    Ok(gated
        .iter()
        .zip(&mu)
        .zip(batch.tokens())
        .map(|((g, w), t)| w * g * t.advantage)
        .sum())
}

/// Build the depth-3 chain realizing the four-level gate:
/// strata are domains, groups, trajectories, and tokens (each × sign
/// channel); kernels spread mass by trajectory share, trajectory count, and
/// token count; the stratum gates are the scaled aggregate gates and the
/// token-level ε/T_τ clip.
pub fn build_domain_chain(
    dbatch: &DomainBatch,
    config: &DomainGatingConfig,
) -> Result<FibrationChain> {
    let batch = dbatch.batch();
    let t = batch.total();
    let num_traj = batch.num_trajectories();
    let num_groups = dbatch.groups().len();
    let num_domains = dbatch.domains().len();

    let strata_sizes = vec![2 * num_domains, 2 * num_groups, 2 * num_traj, 2 * t];

    // π_1: groups → domains, π_2: trajectories → groups, π_3: tokens → trajectories.
    let proj_groups: Vec<usize> = (0..2 * num_groups)
        .map(|p| 2 * dbatch.domain_of_group(p / 2) + p % 2)
        .collect();
    let proj_trajs: Vec<usize> = (0..2 * num_traj)
        .map(|p| 2 * dbatch.group_of_traj(p / 2) + p % 2)
        .collect();
    let proj_tokens: Vec<usize> = (0..2 * t)
        .map(|p| 2 * batch.token_trajectory(p / 2) + p % 2)
        .collect();

    // K_0: group share |Tj(g)|/|Tj(D)|; K_1: 1/|Tj(g)|; K_2: 1/T_τ.
    let k0: Vec<f64> = (0..2 * num_groups)
        .map(|p| {
            let g = &dbatch.groups()[p / 2];
            g.traj_count as f64 / dbatch.domains()[dbatch.domain_of_group(p / 2)].traj_count as f64
        })
        .collect();
    let k1: Vec<f64> = (0..2 * num_traj)
        .map(|p| 1.0 / dbatch.groups()[dbatch.group_of_traj(p / 2)].traj_count as f64)
        .collect();
    let k2: Vec<f64> = (0..2 * t)
        .map(|p| 1.0 / batch.token_traj_len(p / 2) as f64)
        .collect();

    let sign_of = |point: usize| -> i8 {
        if point.is_multiple_of(2) {
            1
        } else {
            -1
        }
    };

    let domain_params: Vec<(f64, f64, u64)> = (0..2 * num_domains)
        .map(|p| {
            let d = &dbatch.domains()[p / 2];
            (
                d.traj_count as f64,
                config.domain_budget(sign_of(p)),
                d.token_count as u64,
            )
        })
        .collect();
    let group_params: Vec<(f64, f64, u64)> = (0..2 * num_groups)
        .map(|p| {
            let g = &dbatch.groups()[p / 2];
            (
                g.traj_count as f64,
                config.group_budget(sign_of(p)),
                g.token_count as u64,
            )
        })
        .collect();
    let traj_params: Vec<(f64, u64)> = (0..2 * num_traj)
        .map(|p| {
            (
                config.trajectory_budget(sign_of(p)),
                batch.trajectories()[p / 2].len as u64,
            )
        })
        .collect();
    let token_params: Vec<f64> = (0..2 * t)
        .map(|p| batch.token_traj_len(p / 2) as f64)
        .collect();
    let epsilon = config.gating.epsilon();

    let gates: Vec<StratumGate> = vec![
        Box::new(move |p, x| {
            let (count, c, k) = domain_params[p];
            count * g_agg(x / count, c, k)
        }),
        Box::new(move |p, x| {
            let (count, c, k) = group_params[p];
            count * g_agg(x / count, c, k)
        }),
        Box::new(move |p, x| {
            let (c, k) = traj_params[p];
            g_agg(x, c, k)
        }),
        Box::new(move |p, x| {
            let len = token_params[p];
            (len * x).clamp(-epsilon, epsilon) / len
        }),
    ];

    FibrationChain::new(
        strata_sizes,
        vec![proj_groups, proj_trajs, proj_tokens],
        vec![k0, k1, k2],
        gates,
    )
}

/// Decompose ratios onto the chain's top stratum (tokens × sign channels).
pub fn domain_decompose(batch: &Batch, ratios: &RatioTuple) -> Density {
    let t = batch.total();
    let mut weights = vec![0.0; 2 * t];
    for i in 0..t {
        let lg = ratios.log(i);
        let len = batch.token_traj_len(i) as f64;
        weights[2 * i] = lg.max(0.0) / len;
        weights[2 * i + 1] = (-lg).max(0.0) / len;
    }
    Density::new(weights)
}

/// Recover per-token ratio values from a (gated) top density.
pub fn domain_recover(batch: &Batch, density: &Density) -> Vec<f64> {
    (0..batch.total())
        .map(|i| {
            let len = batch.token_traj_len(i) as f64;
            (len * (density.weights[2 * i] - density.weights[2 * i + 1])).exp()
        })
        .collect()
}

/// One trajectory's assignment in the on-disk JSON map.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub group: usize,
    pub domain: usize,
}

/// Parse the assignment file: a JSON object mapping trajectory id →
/// {group, domain}.
pub fn assignment_from_json(text: &str) -> Result<BTreeMap<usize, (usize, usize)>> {
    let raw: BTreeMap<String, AssignmentEntry> =
        serde_json::from_str(text).map_err(|e| Error::InvalidAssignment(e.to_string()))?;
    raw.into_iter()
        .map(|(key, entry)| {
            let id: usize = key
                .parse()
                .map_err(|_| Error::InvalidAssignment(format!("bad trajectory id '{key}'")))?;
            Ok((id, (entry.group, entry.domain)))
        })
        .collect()
}

/// Serialize an assignment map to the JSON file format.
pub fn assignment_to_json(assignment: &BTreeMap<usize, (usize, usize)>) -> String {
    let raw: BTreeMap<String, AssignmentEntry> = assignment
        .iter()
        .map(|(&id, &(group, domain))| (id.to_string(), AssignmentEntry { group, domain }))
        .collect();
    serde_json::to_string_pretty(&raw).expect("assignment map serializes")
}

/// One row of the per-level drift report: the channel drifts each level's
/// gate actually sees (raw domain aggregates; residuals against the coarser
/// level for groups and trajectories) and the resulting gate regime.
#[derive(Debug, Clone, Serialize)]
pub struct DriftRow {
    pub level: &'static str,
    pub unit: usize,
    pub log_s_plus: f64,
    pub log_s_minus: f64,
    pub regime: crate::fiberpo::GlobalRegime,
}

/// Per-level drift report over domains, prompt groups, and trajectories.
pub fn drift_report(
    dbatch: &DomainBatch,
    ratios: &RatioTuple,
    config: &DomainGatingConfig,
) -> Vec<DriftRow> {
    use crate::fiberpo::{channel_zone, global_regime};
    let aggs = group_domain_aggregates(dbatch, ratios);
    let mut rows = Vec::new();
    let regime_of = |plus: f64, minus: f64, c_plus: f64, c_minus: f64, k: u64| {
        let zp = channel_zone(plus, c_plus, k);
        let zm = channel_zone(minus, c_minus, k);
        global_regime(zp, zm)
    };
    for (slot, d) in dbatch.domains().iter().enumerate() {
        rows.push(DriftRow {
            level: "domain",
            unit: d.id,
            log_s_plus: aggs.domain[slot].log_s_plus,
            log_s_minus: aggs.domain[slot].log_s_minus,
            regime: regime_of(
                aggs.domain[slot].log_s_plus,
                aggs.domain[slot].log_s_minus,
                config.domain_budget(1),
                config.domain_budget(-1),
                d.token_count as u64,
            ),
        });
    }
    for (slot, g) in dbatch.groups().iter().enumerate() {
        let dslot = dbatch.domain_of_group(slot);
        let plus = aggs.group[slot].log_s_plus - aggs.domain[dslot].log_s_plus;
        let minus = aggs.group[slot].log_s_minus - aggs.domain[dslot].log_s_minus;
        rows.push(DriftRow {
            level: "group",
            unit: g.id,
            log_s_plus: plus,
            log_s_minus: minus,
            regime: regime_of(
                plus,
                minus,
                config.group_budget(1),
                config.group_budget(-1),
                g.token_count as u64,
            ),
        });
    }
    for (slot, info) in dbatch.batch().trajectories().iter().enumerate() {
        let gslot = dbatch.group_of_traj(slot);
        let plus = aggs.trajectory[slot].log_s_plus - aggs.group[gslot].log_s_plus;
        let minus = aggs.trajectory[slot].log_s_minus - aggs.group[gslot].log_s_minus;
        rows.push(DriftRow {
            level: "trajectory",
            unit: info.id,
            log_s_plus: plus,
            log_s_minus: minus,
            regime: regime_of(
                plus,
                minus,
                config.trajectory_budget(1),
                config.trajectory_budget(-1),
                info.len as u64,
            ),
        });
    }
    rows
}

/// The four-level gate computed through the generic chain machinery; agrees
/// with [`fiberpo_domain_gate`] within 1e-10.
pub fn domain_gate_via_chain(
    dbatch: &DomainBatch,
    ratios: &RatioTuple,
    config: &DomainGatingConfig,
) -> Result<Vec<f64>> {
    let chain = build_domain_chain(dbatch, config)?;
    let sigma = domain_decompose(dbatch.batch(), ratios);
    let gated = fgh_gate(&chain, &sigma)?;
    Ok(domain_recover(dbatch.batch(), &gated))
}
