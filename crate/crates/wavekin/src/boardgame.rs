//! The Duhamel-expansion board game.
//!
//! A history map `μ` assigns to every level `j ∈ {k+2, k+4, …, k+2n}` the
//! slot `μ(j) ∈ {1, …, j−2}` hit by the hierarchy operator acting on the
//! `j`-particle marginal. Together with a permutation `σ` of the levels,
//! which orders the Duhamel times, it indexes one iterated Duhamel integral
//! `𝓘_{n,k}(μ, σ)`. An acceptable move at `j` (allowed when
//! `μ(j+2) < μ(j)`) conjugates `μ` by adjacent transpositions and swaps two
//! times; it leaves the integral unchanged up to the swap operator
//! `S_{j,j+2}`.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::CollisionConfig;
use crate::error::{invalid, Error, Result};
use crate::exec::{nan_max, Exec};
use crate::hierarchy::{Marginal, Probe, TermSelection};
use crate::collision::Term;
use crate::phase::{DistributionField, Vec3};
use crate::quadrature::gauss_legendre_on;

/// Default cap on the number of enumerated history maps.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// `μ ∈ M_{n,k}`: `values[ℓ−1] = μ(k+2ℓ)` for `ℓ = 1..n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HistoryMap {
    pub k: usize,
    pub n: usize,
    pub values: Vec<usize>,
}

fn check_kn(k: usize, n: usize) -> Result<()> {
    if k == 0 || n < 2 {
        return invalid(format!("board game needs k >= 1 and n >= 2, got k = {k}, n = {n}"));
    }
    Ok(())
}

impl HistoryMap {
    /// Validates `1 ≤ μ(j) < j − 1` at every level.
    pub fn new(k: usize, n: usize, values: Vec<usize>) -> Result<Self> {
        check_kn(k, n)?;
        if values.len() != n {
            return invalid(format!("history map needs {n} values, got {}", values.len()));
        }
        let m = HistoryMap { k, n, values };
        for j in m.levels() {
            let v = m.get(j);
            if v == 0 || v + 1 >= j {
                return invalid(format!("mu({j}) = {v} violates 1 <= mu(j) < j - 1"));
            }
        }
        Ok(m)
    }

    /// Levels `k+2, k+4, …, k+2n`.
    pub fn levels(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=self.n).map(move |l| self.k + 2 * l)
    }

    fn index(&self, j: usize) -> usize {
        debug_assert!(j >= self.k + 2 && (j - self.k) % 2 == 0);
        (j - self.k) / 2 - 1
    }

    /// `μ(j)`.
    pub fn get(&self, j: usize) -> usize {
        self.values[self.index(j)]
    }

    /// `μ(j) ≤ μ(j+2)` for all applicable `j`.
    pub fn is_echelon(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }

    /// `Σ_ℓ μ(k+2ℓ) B^{n−ℓ}` with `B = k + 2n − 1`: the rank of `μ` in the
    /// lexicographic order over levels. Strictly decreases under every move.
    pub fn lex_potential(&self) -> u128 {
        let b = (self.k + 2 * self.n - 1) as u128;
        self.values.iter().fold(0u128, |acc, &v| acc * b + v as u128)
    }
}

/// `|M_{n,k}| = ∏_{ℓ=1}^{n} (k + 2ℓ − 2)`.
pub fn history_count(k: usize, n: usize) -> Result<u128> {
    check_kn(k, n)?;
    (1..=n).try_fold(1u128, |acc, l| acc.checked_mul((k + 2 * l - 2) as u128))
        .ok_or_else(|| Error::CapExceeded("history count overflows".into()))
}

/// `2^{k+3n−2}`.
pub fn echelon_bound(k: usize, n: usize) -> u128 {
    1u128.checked_shl((k + 3 * n - 2) as u32).unwrap_or(u128::MAX)
}

/// All of `M_{n,k}` in lexicographic order.
pub fn enumerate_histories(k: usize, n: usize, cap: u128) -> Result<Vec<HistoryMap>> {
    let total = history_count(k, n)?;
    if total > cap {
        return Err(Error::CapExceeded(format!("|M_(n={n},k={k})| = {total} exceeds cap {cap}")));
    }
    let mut out = Vec::with_capacity(total as usize);
    let mut cur = vec![1usize; n];
    loop {
        out.push(HistoryMap { k, n, values: cur.clone() });
        // Odometer with the last level varying fastest.
        let mut l = n;
        loop {
            if l == 0 {
                return Ok(out);
            }
            l -= 1;
            let max = k + 2 * (l + 1) - 2;
            if cur[l] < max {
                cur[l] += 1;
                break;
            }
            cur[l] = 1;
        }
    }
}

/// `(μ, σ)` with `σ` a permutation of the levels: `sigma[ℓ−1] = σ(k+2ℓ)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoardState {
    pub mu: HistoryMap,
    pub sigma: Vec<usize>,
}

impl BoardState {
    pub fn new(mu: HistoryMap, sigma: Vec<usize>) -> Result<Self> {
        let levels: BTreeSet<usize> = mu.levels().collect();
        let image: BTreeSet<usize> = sigma.iter().copied().collect();
        if sigma.len() != mu.n || image != levels {
            return invalid("sigma must be a permutation of the levels");
        }
        Ok(BoardState { mu, sigma })
    }

    /// `σ = id`.
    pub fn identity(mu: HistoryMap) -> Self {
        let sigma = mu.levels().collect();
        BoardState { mu, sigma }
    }

    /// Seeded uniformly random state.
    pub fn random(k: usize, n: usize, seed: u64) -> Result<Self> {
        check_kn(k, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (1..=n).map(|l| rng.random_range(1..=k + 2 * l - 2)).collect();
        let mu = HistoryMap::new(k, n, values)?;
        let mut sigma: Vec<usize> = mu.levels().collect();
        for i in (1..sigma.len()).rev() {
            let j = rng.random_range(0..=i);
            sigma.swap(i, j);
        }
        BoardState::new(mu, sigma)
    }

    /// `σ⁻¹(ℓ)`.
    pub fn sigma_inverse(&self, level: usize) -> usize {
        let i = self.sigma.iter().position(|&s| s == level).expect("level in range");
        self.mu.k + 2 * (i + 1)
    }
}

/// Levels `j ∈ {k+2, …, k+2n−2}` with `μ(j+2) < μ(j)`.
pub fn applicable_moves(s: &BoardState) -> Vec<usize> {
    let mu = &s.mu;
    mu.levels()
        .take(mu.n - 1)
        .filter(|&j| mu.get(j + 2) < mu.get(j))
        .collect()
}

fn transpose(a: usize, b: usize, x: usize) -> usize {
    if x == a {
        b
    } else if x == b {
        a
    } else {
        x
    }
}

/// `μ′ = (j−1, j+1)∘(j, j+2)∘μ∘(j, j+2)`, `σ′ = (j, j+2)∘σ`.
pub fn apply_move(s: &BoardState, j: usize) -> Result<BoardState> {
    if !applicable_moves(s).contains(&j) {
        return invalid(format!("no acceptable move at j = {j}"));
    }
    let mu = &s.mu;
    let values = mu
        .levels()
        .map(|l| {
            let src = transpose(j, j + 2, l);
            transpose(j - 1, j + 1, transpose(j, j + 2, mu.get(src)))
        })
        .collect();
    let mu2 = HistoryMap::new(mu.k, mu.n, values)?;
    let sigma = s.sigma.iter().map(|&x| transpose(j, j + 2, x)).collect();
    BoardState::new(mu2, sigma)
}

/// Which applicable move a reduction takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Smallest,
    Largest,
    Random(u64),
}

/// One step of a reduction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub j: usize,
    pub before: BoardState,
    pub after: BoardState,
}

/// Result of [`reduce_to_echelon`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reduction {
    pub start: BoardState,
    pub echelon: HistoryMap,
    pub end: BoardState,
    pub trace: Vec<MoveRecord>,
}

/// Default step cap `|M_{n,k}|²`.
pub fn default_step_cap(k: usize, n: usize) -> Result<u128> {
    let m = history_count(k, n)?;
    Ok(m.saturating_mul(m))
}

/// Applies moves with `strategy` until none applies.
pub fn reduce_with(s: &BoardState, strategy: Strategy, cap: u128) -> Result<Reduction> {
    let mut rng = match strategy {
        Strategy::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut cur = s.clone();
    let mut trace = Vec::new();
    loop {
        let moves = applicable_moves(&cur);
        if moves.is_empty() {
            break;
        }
        if trace.len() as u128 >= cap {
            return Err(Error::CapExceeded(format!("reduction exceeded {cap} moves")));
        }
        let j = match strategy {
            Strategy::Smallest => moves[0],
            Strategy::Largest => *moves.last().expect("nonempty"),
            Strategy::Random(_) => moves[rng.as_mut().expect("rng").random_range(0..moves.len())],
        };
        let next = apply_move(&cur, j)?;
        trace.push(MoveRecord { j, before: cur, after: next.clone() });
        cur = next;
    }
    Ok(Reduction {
        start: s.clone(),
        echelon: cur.mu.clone(),
        end: cur,
        trace,
    })
}

/// Smallest-first reduction with the default cap.
pub fn reduce_to_echelon(s: &BoardState) -> Result<Reduction> {
    reduce_with(s, Strategy::Smallest, default_step_cap(s.mu.k, s.mu.n)?)
}

/// Every echelon map reachable from `mu` by some sequence of moves
/// (exhaustive search over move orders; `σ` does not affect `μ`).
pub fn reachable_echelons(mu: &HistoryMap) -> Result<BTreeSet<HistoryMap>> {
    let mut seen = BTreeSet::new();
    let mut ends = BTreeSet::new();
    let mut stack = vec![BoardState::identity(mu.clone())];
    while let Some(s) = stack.pop() {
        if !seen.insert(s.mu.clone()) {
            continue;
        }
        let moves = applicable_moves(&s);
        if moves.is_empty() {
            ends.insert(s.mu.clone());
        }
        for j in moves {
            stack.push(apply_move(&s, j)?);
        }
    }
    Ok(ends)
}

/// Classes of `M_{n,k}` keyed by the smallest-first echelon representative
/// reached from `σ = id`.
pub fn partition_classes(k: usize, n: usize, exec: Exec) -> Result<BTreeMap<HistoryMap, Vec<HistoryMap>>> {
    let all = enumerate_histories(k, n, DEFAULT_ENUMERATION_CAP)?;
    let reps = exec.map(all.len(), |i| reduce_to_echelon(&BoardState::identity(all[i].clone())));
    let mut classes: BTreeMap<HistoryMap, Vec<HistoryMap>> = BTreeMap::new();
    for (mu, r) in all.into_iter().zip(reps) {
        classes.entry(r?.echelon).or_default().push(mu);
    }
    Ok(classes)
}

/// Count of monotone maps in `M_{n,k}` against the bound `2^{k+3n−2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EchelonCount {
    pub k: usize,
    pub n: usize,
    pub histories: u128,
    pub echelon: u128,
    pub bound: u128,
    pub within_bound: bool,
}

/// Exact number of echelon maps by dynamic programming over levels.
pub fn count_echelon(k: usize, n: usize) -> Result<EchelonCount> {
    check_kn(k, n)?;
    // ways[v] = number of monotone prefixes ending with value v.
    let top = k + 2 * n - 2;
    let mut ways = vec![0u128; top + 1];
    for v in 1..=k {
        ways[v] = 1;
    }
    for l in 2..=n {
        let max = k + 2 * l - 2;
        let mut next = vec![0u128; top + 1];
        let mut prefix = 0u128;
        for v in 1..=max {
            prefix += ways[v];
            next[v] = prefix;
        }
        ways = next;
    }
    let echelon: u128 = ways.iter().sum();
    let bound = echelon_bound(k, n);
    Ok(EchelonCount {
        k,
        n,
        histories: history_count(k, n)?,
        echelon,
        bound,
        within_bound: echelon <= bound,
    })
}

/// `S_{j,j+2}`: exchanges slots `(j−1, j)` with `(j+1, j+2)` in both `X` and `V`.
pub fn swap_apply(f: &Marginal, j: usize) -> Result<Marginal> {
    let l = f.order();
    if j < 2 || l <= j + 1 {
        return invalid(format!("swap S_(j,j+2) with j = {j} needs 2 <= j and order > j + 1, got order {l}"));
    }
    let mut p: Vec<usize> = (0..l).collect();
    // Zero-based slots j−2, j−1 exchange with j, j+1.
    p.swap(j - 2, j);
    p.swap(j - 1, j + 1);
    f.permuted(&p)
}

/// Position of `μ(ℓ)` relative to the swapped slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotCase {
    /// Outside `{j−1, j, j+1, j+2}`.
    Outside,
    /// In `{j, j+2}`.
    Paired,
    /// In `{j−1, j+1}`.
    Shifted,
}

pub fn slot_case(j: usize, mu_l: usize) -> SlotCase {
    if mu_l == j || mu_l == j + 2 {
        SlotCase::Paired
    } else if mu_l + 1 == j || mu_l == j + 1 {
        SlotCase::Shifted
    } else {
        SlotCase::Outside
    }
}

/// Gap between `S_{j,j+2} 𝔠^λ_{τ(μℓ), ℓ} F` and `𝔠^λ_{μℓ, ℓ} S_{j,j+2} F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapReport {
    pub term: Term,
    pub level: usize,
    pub j: usize,
    pub mu_l: usize,
    pub case: SlotCase,
    pub probes: usize,
    pub max_gap: f64,
    pub scale: f64,
}

/// Labeled, non-symmetric Gaussian product `∏ᵢ hᵢ(xᵢ, vᵢ)` of order `l`.
pub fn labeled_gaussian_product(l: usize) -> Result<Marginal> {
    let factors = (0..l)
        .map(|i| {
            let c = i as f64;
            let cx = Vec3::new(0.3 * (c * 1.7).sin(), 0.2 * (c * 0.9).cos(), -0.1 * c / l as f64);
            let cv = Vec3::new(0.4 * (c * 2.3).cos(), -0.3 * (c * 1.1).sin(), 0.25 * c / l as f64);
            let ax = 0.6 + 0.1 * c;
            let av = 0.5 + 0.07 * c;
            DistributionField::formula(move |x, v| (-ax * (x - cx).norm2() - av * (v - cv).norm2()).exp())
        })
        .collect();
    Marginal::product(factors)
}

/// Evaluates both sides of the swap identity at the probes (order `ℓ − 2`).
pub fn verify_identity_swap(
    term: Term,
    level: usize,
    j: usize,
    mu_l: usize,
    f: &Marginal,
    probes: &[Probe],
    cfg: &CollisionConfig,
) -> Result<SwapReport> {
    if level <= j + 2 || f.order() != level {
        return invalid(format!("swap identity needs order = level > j + 2 (level {level}, j {j}, order {})", f.order()));
    }
    if mu_l == 0 || mu_l + 1 >= level {
        return invalid(format!("mu(l) = {mu_l} outside 1..l-2"));
    }
    if probes.iter().any(|(xs, vs)| xs.len() != level - 2 || vs.len() != level - 2) {
        return invalid("probe order must be level - 2");
    }
    let tau = transpose(j - 1, j + 1, transpose(j, j + 2, mu_l));
    let sel = TermSelection::One(term);
    let lhs = swap_apply(&Marginal::collided(f, tau, sel, cfg)?, j)?;
    let rhs = Marginal::collided(&swap_apply(f, j)?, mu_l, sel, cfg)?;
    let pairs = cfg.exec.map(probes.len(), |i| {
        let (xs, vs) = &probes[i];
        (lhs.eval(xs, vs), rhs.eval(xs, vs))
    });
    let scale = pairs.iter().fold(0.0f64, |m, (a, b)| m.max(a.abs()).max(b.abs()));
    let gap = pairs.iter().fold(0.0, |m, (a, b)| nan_max(m, (a - b).abs()));
    Ok(SwapReport {
        term,
        level,
        j,
        mu_l,
        case: slot_case(j, mu_l),
        probes: probes.len(),
        max_gap: if scale > 0.0 { gap / scale } else { gap },
        scale,
    })
}

/// Collapsed Gauss–Legendre rule on the simplex `t ≥ s₁ ≥ … ≥ s_n ≥ 0`.
pub fn simplex_rule(t: f64, n: usize, per_dim: usize) -> Vec<(Vec<f64>, f64)> {
    let (u, wu) = gauss_legendre_on(0.0, 1.0, per_dim);
    let mut out = vec![(Vec::new(), 1.0, t)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * per_dim);
        for (pts, w, top) in &out {
            for (ui, wi) in u.iter().zip(&wu) {
                let s = top * ui;
                let mut p = pts.clone();
                p.push(s);
                next.push((p, w * wi * top, s));
            }
        }
        out = next;
    }
    out.into_iter().map(|(p, w, _)| (p, w)).collect()
}

/// `J_{n,k}(τ; μ) g = T_k^{−τ₁} 𝔠_{μ(k+2),k+2} T^{τ₁−τ₂} ⋯ 𝔠_{μ(k+2n),k+2n} T^{τ_n} g`
/// with level times `τ`.
fn duhamel_chain(mu: &HistoryMap, times: &[f64], g: &Marginal, cfg: &CollisionConfig) -> Result<Marginal> {
    let n = mu.n;
    let mut m = g.transport(times[n - 1]);
    for l in (0..n).rev() {
        let level = mu.k + 2 * (l + 1);
        let c = Marginal::collided(&m, mu.get(level), TermSelection::Full, cfg)?;
        let next_t = if l == 0 { 0.0 } else { times[l - 1] };
        m = c.transport(next_t - times[l]);
    }
    Ok(m)
}

/// `𝓘_{n,k}(μ, σ) g` at a probe, where the `(k+2n)`-particle input is
/// `f(t) = T^t g` and the simplex is discretized by [`simplex_rule`].
pub fn duhamel_integral(
    state: &BoardState,
    g: &Marginal,
    t: f64,
    per_dim: usize,
    probe: &Probe,
    cfg: &CollisionConfig,
) -> Result<f64> {
    let mu = &state.mu;
    if g.order() != mu.k + 2 * mu.n {
        return invalid(format!("input marginal must have order {}", mu.k + 2 * mu.n));
    }
    let mut total = 0.0;
    for (sorted, w) in simplex_rule(t, mu.n, per_dim) {
        // Level ℓ receives the sorted time with index σ⁻¹(ℓ).
        let times: Vec<f64> = mu
            .levels()
            .map(|level| sorted[(state.sigma_inverse(level) - mu.k) / 2 - 1])
            .collect();
        let m = duhamel_chain(mu, &times, g, cfg)?;
        total += w * m.eval(&probe.0, &probe.1);
    }
    Ok(total)
}

/// Comparison of `𝓘(μ′, σ′) g` with `𝓘(μ, σ) S_{j,j+2} g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub before: BoardState,
    pub after: BoardState,
    pub j: Option<usize>,
    pub probes: usize,
    pub values_after: Vec<f64>,
    pub values_before: Vec<f64>,
    pub max_gap: f64,
    pub per_probe_gap: Vec<f64>,
}

/// Evaluates both nested Duhamel integrals of one acceptable move on shared
/// quadrature nodes. For a state without moves the state is compared with itself.
pub fn verify_move_invariance(
    state: &BoardState,
    g: &Marginal,
    t: f64,
    per_dim: usize,
    probes: &[Probe],
    cfg: &CollisionConfig,
) -> Result<InvarianceReport> {
    if !cfg.sphere.is_antipodal() {
        return invalid("move invariance needs an antipodally symmetric sphere rule");
    }
    let moves = applicable_moves(state);
    let (after, j, input_before) = match moves.first() {
        Some(&j) => (apply_move(state, j)?, Some(j), swap_apply(g, j)?),
        None => (state.clone(), None, g.clone()),
    };
    let rows = cfg.exec.map(probes.len(), |i| -> Result<(f64, f64)> {
        let a = duhamel_integral(&after, g, t, per_dim, &probes[i], cfg)?;
        let b = duhamel_integral(state, &input_before, t, per_dim, &probes[i], cfg)?;
        Ok((a, b))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let per_probe_gap: Vec<f64> = rows
        .iter()
        .map(|(a, b)| {
            let s = a.abs().max(b.abs());
            if s > 0.0 { (a - b).abs() / s } else { (a - b).abs() }
        })
        .collect();
    Ok(InvarianceReport {
        before: state.clone(),
        after,
        j,
        probes: probes.len(),
        values_after: rows.iter().map(|r| r.0).collect(),
        values_before: rows.iter().map(|r| r.1).collect(),
        max_gap: per_probe_gap.iter().copied().fold(0.0, nan_max),
        per_probe_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::random_probes;
    use approx::assert_relative_eq;
    use crate::quadrature::{BoxRule, SphereRule};

    fn mu(k: usize, n: usize, v: &[usize]) -> HistoryMap {
        HistoryMap::new(k, n, v.to_vec()).unwrap()
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_histories(1, 2, 100).unwrap().len(), 3);
        assert_eq!(enumerate_histories(2, 2, 100).unwrap().len(), 8);
        assert_eq!(enumerate_histories(1, 3, 100).unwrap().len(), 15);
        assert!(matches!(enumerate_histories(3, 4, 10), Err(Error::CapExceeded(_))));
        assert!(enumerate_histories(1, 1, 10).is_err());
    }

    #[test]
    fn history_validation() {
        assert!(HistoryMap::new(2, 2, vec![3, 1]).is_err());
        assert!(HistoryMap::new(2, 2, vec![0, 1]).is_err());
        assert!(HistoryMap::new(2, 2, vec![2, 5]).is_err());
        assert!(HistoryMap::new(2, 2, vec![2, 4]).is_ok());
    }

    #[test]
    fn hand_move() {
        let s = BoardState::identity(mu(2, 2, &[2, 1]));
        assert_eq!(applicable_moves(&s), vec![4]);
        let t = apply_move(&s, 4).unwrap();
        assert_eq!(t.mu.values, vec![1, 2]);
        assert_eq!(t.sigma, vec![6, 4]);
        assert!(apply_move(&t, 4).is_err());
        let r = reduce_to_echelon(&s).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.echelon.values, vec![1, 2]);
    }

    #[test]
    fn k1_n2_has_no_moves() {
        for m in enumerate_histories(1, 2, 100).unwrap() {
            assert!(applicable_moves(&BoardState::identity(m)).is_empty());
        }
        assert_eq!(partition_classes(1, 2, Exec::Sequential).unwrap().len(), 3);
    }

    #[test]
    fn k2_n2_has_seven_classes() {
        let classes = partition_classes(2, 2, Exec::Sequential).unwrap();
        assert_eq!(classes.len(), 7);
        let merged = &classes[&mu(2, 2, &[1, 2])];
        assert_eq!(merged.len(), 2);
        assert_eq!(count_echelon(2, 2).unwrap().echelon, 7);
        assert_eq!(count_echelon(1, 2).unwrap().echelon, 3);
    }

    #[test]
    fn exhaustive_small_sizes() {
        for k in 1..=3 {
            for n in 2..=4 {
                let all = enumerate_histories(k, n, DEFAULT_ENUMERATION_CAP).unwrap();
                assert_eq!(all.len() as u128, history_count(k, n).unwrap());
                let classes = partition_classes(k, n, Exec::Parallel).unwrap();
                let covered: usize = classes.values().map(Vec::len).sum();
                assert_eq!(covered, all.len());
                let count = count_echelon(k, n).unwrap();
                assert_eq!(count.echelon, all.iter().filter(|m| m.is_echelon()).count() as u128);
                assert!(count.within_bound);
                assert!(classes.len() as u128 <= count.bound);
                for (rep, members) in &classes {
                    assert!(rep.is_echelon());
                    assert!(members.contains(rep));
                }
                for m in &all {
                    let ends = reachable_echelons(m).unwrap();
                    assert_eq!(ends.len(), 1, "{m:?} reaches {ends:?}");
                    let s = BoardState::identity(m.clone());
                    for j in applicable_moves(&s) {
                        let t = apply_move(&s, j).unwrap();
                        assert!(t.mu.lex_potential() < m.lex_potential());
                    }
                }
            }
        }
    }

    #[test]
    fn strategies_agree() {
        for seed in 0..50 {
            let s = BoardState::random(3, 4, seed).unwrap();
            let cap = default_step_cap(3, 4).unwrap();
            let a = reduce_with(&s, Strategy::Smallest, cap).unwrap();
            let b = reduce_with(&s, Strategy::Largest, cap).unwrap();
            let c = reduce_with(&s, Strategy::Random(seed), cap).unwrap();
            assert_eq!(a.echelon, b.echelon);
            assert_eq!(a.echelon, c.echelon);
        }
    }

    #[test]
    fn swap_slots() {
        let g = labeled_gaussian_product(6).unwrap();
        let s = swap_apply(&g, 3).unwrap();
        let (xs, vs) = random_probes(6, 1, 1.0, 1.0, 3).remove(0);
        // Slots (2,3) and (4,5) exchange, one-based.
        let mut ys = xs.clone();
        let mut ws = vs.clone();
        for (a, b) in [(1, 3), (2, 4)] {
            ys.swap(a, b);
            ws.swap(a, b);
        }
        // Products regroup under the permutation, so agreement is up to rounding.
        assert_relative_eq!(s.eval(&xs, &vs), g.eval(&ys, &ws), max_relative = 1e-14);
        let twice = swap_apply(&s, 3).unwrap();
        assert_relative_eq!(twice.eval(&xs, &vs), g.eval(&xs, &vs), max_relative = 1e-14);
        assert!(swap_apply(&g, 5).is_err());
        assert!(swap_apply(&g, 1).is_err());
        let sym = Marginal::tensor(DistributionField::formula(|x, v| (-x.norm2() - v.norm2()).exp()), 6).unwrap();
        assert_relative_eq!(swap_apply(&sym, 3).unwrap().eval(&xs, &vs), sym.eval(&xs, &vs), max_relative = 1e-14);
    }

    #[test]
    fn swap_identity_cases() {
        let cfg = CollisionConfig::new(BoxRule::gauss(3.0, 3).unwrap(), SphereRule::product_gauss(2, 4).unwrap())
            .with_exec(Exec::Sequential);
        let f = labeled_gaussian_product(8).unwrap();
        let probes = random_probes(6, 2, 1.0, 1.5, 4);
        for term in Term::ALL {
            for mu_l in [1, 4, 3] {
                let r = verify_identity_swap(term, 8, 4, mu_l, &f, &probes, &cfg).unwrap();
                assert!(r.max_gap <= 1e-12, "{r:?}");
            }
        }
        assert!(verify_identity_swap(Term::L0, 6, 4, 1, &labeled_gaussian_product(6).unwrap(), &probes, &cfg).is_err());
    }

    #[test]
    fn simplex_rule_volume() {
        let t = 1.3;
        let r = simplex_rule(t, 2, 3);
        let vol: f64 = r.iter().map(|(_, w)| w).sum();
        assert!((vol - t * t / 2.0).abs() < 1e-14);
        assert!(r.iter().all(|(p, _)| p[0] >= p[1] && p[0] <= t));
    }

    #[test]
    fn no_move_state_is_self_consistent() {
        let cfg = CollisionConfig::new(BoxRule::gauss(3.0, 2).unwrap(), SphereRule::product_gauss(2, 2).unwrap())
            .with_exec(Exec::Sequential);
        let s = BoardState::identity(mu(2, 2, &[1, 3]));
        let g = labeled_gaussian_product(6).unwrap();
        let probes = random_probes(2, 1, 0.5, 1.0, 1);
        let r = verify_move_invariance(&s, &g, 0.5, 1, &probes, &cfg).unwrap();
        assert_eq!(r.j, None);
        assert_eq!(r.max_gap, 0.0);
    }
}
