//! Assignment of training cases to ensemble members.
//!
//! Every case is trained on by exactly `R` of the `L` learners. Loads and
//! pairwise overlaps are capped at `floor(N*R/L) + 1` and
//! `floor(N*R^2/L^2) + 1`, which for eight learners and replication four are
//! `N/2 + 1` and `N/4 + 1`. For other shapes the caps are met when the
//! search finds a plan within its budget, and approached otherwise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

/// Refuse to enumerate more learner subsets than this.
const MAX_SUBSETS: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub n_cases: usize,
    pub n_learners: usize,
    pub replication: usize,
    pub seed: u64,
    /// Sorted learner indices that train on each case.
    pub membership: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn load_bound(&self) -> usize {
        load_bound(self.n_cases, self.n_learners, self.replication)
    }

    pub fn overlap_bound(&self) -> usize {
        overlap_bound(self.n_cases, self.n_learners, self.replication)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPlan(path.to_path_buf()));
        }
        let plan: PartitionPlan = fsio::read_json(path)?;
        if plan.membership.len() != plan.n_cases {
            return Err(Error::format(
                path,
                format!(
                    "membership lists {} cases, n_cases is {}",
                    plan.membership.len(),
                    plan.n_cases
                ),
            ));
        }
        Ok(plan)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsio::write_json(path, self)
    }
}

fn load_bound(n: usize, l: usize, r: usize) -> usize {
    n * r / l + 1
}

fn overlap_bound(n: usize, l: usize, r: usize) -> usize {
    n * r * r / (l * l) + 1
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// All `r`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..r).collect();
    loop {
        out.push(cur.clone());
        // rightmost index that can still advance
        let Some(i) = (0..r).rev().find(|&i| cur[i] < n - r + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..r {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Incremental load/overlap counts over a growing prefix of assignments.
struct Tally {
    l: usize,
    load: Vec<usize>,
    pair: Vec<usize>,
}

impl Tally {
    fn new(l: usize) -> Self {
        Tally {
            l,
            load: vec![0; l],
            pair: vec![0; l * l],
        }
    }

    fn fits(&self, s: &[usize], max_load: usize, max_overlap: usize) -> bool {
        s.iter().all(|&a| self.load[a] < max_load)
            && s.iter().enumerate().all(|(i, &a)| {
                s[i + 1..].iter().all(|&b| self.pair[a * self.l + b] < max_overlap)
            })
    }

    fn add(&mut self, s: &[usize]) {
        for (i, &a) in s.iter().enumerate() {
            self.load[a] += 1;
            for &b in &s[i + 1..] {
                self.pair[a * self.l + b] += 1;
            }
        }
    }

    fn remove(&mut self, s: &[usize]) {
        for (i, &a) in s.iter().enumerate() {
            self.load[a] -= 1;
            for &b in &s[i + 1..] {
                self.pair[a * self.l + b] -= 1;
            }
        }
    }
}

/// Node budget of one backtracking search in [`select`].
const SEARCH_BUDGET: usize = 20_000;

/// Picks `t` distinct subsets from `pool` whose combined loads and pairwise
/// overlaps stay within the caps. Depth-first with backtracking; at each
/// step the least loaded candidates are tried first, ties going to the
/// earlier pool entry. Gives up after [`SEARCH_BUDGET`] nodes.
fn select(pool: &[Vec<usize>], t: usize, l: usize, max_load: usize, max_overlap: usize) -> Option<Vec<usize>> {
    struct Search<'a> {
        pool: &'a [Vec<usize>],
        t: usize,
        caps: (usize, usize),
        used: Vec<bool>,
        chosen: Vec<usize>,
        tally: Tally,
        budget: usize,
    }

    impl Search<'_> {
        fn cost(&self, s: &[usize]) -> usize {
            let load: usize = s.iter().map(|&a| self.tally.load[a]).sum();
            let pair: usize = s
                .iter()
                .enumerate()
                .flat_map(|(i, &a)| s[i + 1..].iter().map(move |&b| (a, b)))
                .map(|(a, b)| self.tally.pair[a * self.tally.l + b])
                .sum();
            load + pair
        }

        fn run(&mut self) -> bool {
            if self.chosen.len() == self.t {
                return true;
            }
            let mut candidates: Vec<(usize, usize)> = (0..self.pool.len())
                .filter(|&i| !self.used[i] && self.tally.fits(&self.pool[i], self.caps.0, self.caps.1))
                .map(|i| (self.cost(&self.pool[i]), i))
                .collect();
            candidates.sort_unstable();
            for (_, i) in candidates {
                if self.budget == 0 {
                    return false;
                }
                self.budget -= 1;
                self.used[i] = true;
                self.tally.add(&self.pool[i]);
                self.chosen.push(i);
                if self.run() {
                    return true;
                }
                self.chosen.pop();
                self.tally.remove(&self.pool[i]);
                self.used[i] = false;
            }
            false
        }
    }

    let mut search = Search {
        pool,
        t,
        caps: (max_load, max_overlap),
        used: vec![false; pool.len()],
        chosen: Vec::with_capacity(t),
        tally: Tally::new(l),
        budget: SEARCH_BUDGET,
    };
    search.run().then_some(search.chosen)
}

/// Seeded, deterministic assignment of `n_cases` cases to `replication` of
/// `n_learners` learners each.
///
/// All `C(L, R)` learner subsets are listed lexicographically and shuffled
/// with the seed. Cases cycle through that list, so each full cycle adds the
/// same load to every learner and the same overlap to every pair. The
/// subsets of the final partial cycle are chosen, by backtracking search
/// over the shuffled list, to keep the totals within the caps. Plain
/// round-robin over the shuffled list does not: four subsets sharing a
/// learner at the front of the list break the `N/2 + 1` cap for `N = 4`.
///
/// A few small `N` admit no plan within the caps at all (`N = 3` for eight
/// learners and replication four: three 4-subsets of 8 learners cannot
/// pairwise share at most one learner). The caps are then relaxed one step
/// at a time and the result fails [`verify_plan`] by the smallest margin.
pub fn plan_partition(
    n_cases: usize,
    n_learners: usize,
    replication: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    if n_learners < 2 {
        return Err(Error::InfeasibleConfig(format!(
            "need at least 2 learners, got {n_learners}"
        )));
    }
    if replication == 0 || replication > n_learners {
        return Err(Error::InfeasibleConfig(format!(
            "replication {replication} must be in 1..={n_learners}"
        )));
    }
    let count = binomial(n_learners, replication)
        .filter(|&c| c <= MAX_SUBSETS)
        .ok_or_else(|| {
            Error::InfeasibleConfig(format!(
                "C({n_learners}, {replication}) is too large to enumerate"
            ))
        })?;

    let mut pool = subsets(n_learners, replication);
    debug_assert_eq!(pool.len(), count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);

    // per full cycle: every learner in C(L-1, R-1) subsets, every pair in C(L-2, R-2)
    let cycles = n_cases / count;
    let rem = n_cases % count;
    let cycle_load = binomial(n_learners - 1, replication - 1).unwrap_or(0);
    let cycle_pair = if replication >= 2 {
        binomial(n_learners - 2, replication - 2).unwrap_or(0)
    } else {
        0
    };
    let load_cap = load_bound(n_cases, n_learners, replication).saturating_sub(cycles * cycle_load);
    let overlap_cap = overlap_bound(n_cases, n_learners, replication).saturating_sub(cycles * cycle_pair);

    let mut picked = select(&pool, rem, n_learners, load_cap, overlap_cap);
    let mut slack = 0;
    while picked.is_none() {
        slack += 1;
        picked = select(&pool, rem, n_learners, load_cap, overlap_cap + slack)
            .or_else(|| select(&pool, rem, n_learners, load_cap + slack, overlap_cap + slack));
    }
    if slack > 0 {
        log::warn!(
            "no plan for {n_cases} cases within the load/overlap caps; relaxed both by {slack}"
        );
    }
    let picked = picked.expect("loop exits with a selection");

    let mut cycle: Vec<Vec<usize>> = picked.iter().map(|&i| pool[i].clone()).collect();
    if cycles > 0 {
        cycle.extend(
            pool.iter()
                .enumerate()
                .filter(|(i, _)| !picked.contains(i))
                .map(|(_, s)| s.clone()),
        );
    }
    let membership = (0..n_cases).map(|c| cycle[c % cycle.len()].clone()).collect();
    Ok(PartitionPlan {
        n_cases,
        n_learners,
        replication,
        seed,
        membership,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanReport {
    /// Cases whose membership is not exactly `R` distinct in-range learners.
    pub bad_membership: Vec<usize>,
    pub loads: Vec<usize>,
    pub max_load: usize,
    pub load_bound: usize,
    pub max_overlap: usize,
    pub overlap_bound: usize,
}

impl PlanReport {
    pub fn membership_ok(&self) -> bool {
        self.bad_membership.is_empty()
    }

    pub fn load_ok(&self) -> bool {
        self.max_load <= self.load_bound
    }

    pub fn overlap_ok(&self) -> bool {
        self.max_overlap <= self.overlap_bound
    }

    pub fn passed(&self) -> bool {
        self.membership_ok() && self.load_ok() && self.overlap_ok()
    }
}

impl std::fmt::Display for PlanReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
        writeln!(
            f,
            "membership: {} ({} bad cases)",
            mark(self.membership_ok()),
            self.bad_membership.len()
        )?;
        writeln!(
            f,
            "max load:    {} (bound {}) {}",
            self.max_load,
            self.load_bound,
            mark(self.load_ok())
        )?;
        write!(
            f,
            "max overlap: {} (bound {}) {}",
            self.max_overlap,
            self.overlap_bound,
            mark(self.overlap_ok())
        )
    }
}

pub fn verify_plan(plan: &PartitionPlan) -> PlanReport {
    let l = plan.n_learners;
    let mut bad_membership = Vec::new();
    let mut tally = Tally::new(l);
    for (case, m) in plan.membership.iter().enumerate() {
        let mut s = m.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != plan.replication || m.len() != plan.replication || s.iter().any(|&a| a >= l) {
            bad_membership.push(case);
        }
        s.retain(|&a| a < l);
        tally.add(&s);
    }
    if plan.membership.len() != plan.n_cases {
        bad_membership.extend(plan.membership.len()..plan.n_cases);
    }
    let max_overlap = (0..l)
        .flat_map(|a| (a + 1..l).map(move |b| (a, b)))
        .map(|(a, b)| tally.pair[a * l + b])
        .max()
        .unwrap_or(0);
    PlanReport {
        bad_membership,
        max_load: tally.load.iter().copied().max().unwrap_or(0),
        loads: tally.load,
        load_bound: plan.load_bound(),
        max_overlap,
        overlap_bound: plan.overlap_bound(),
    }
}

/// Learners that did not train on `case`: the complement of its membership.
pub fn holdout_learners(plan: &PartitionPlan, case: usize) -> Result<Vec<usize>> {
    let members = plan.membership.get(case).ok_or(Error::CaseOutOfRange {
        case,
        n_cases: plan.n_cases,
    })?;
    Ok((0..plan.n_learners).filter(|a| !members.contains(a)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plan_with(n_learners: usize, membership: Vec<Vec<usize>>) -> PartitionPlan {
        PartitionPlan {
            n_cases: membership.len(),
            n_learners,
            replication: membership.first().map_or(4, Vec::len),
            seed: 0,
            membership,
        }
    }

    #[test]
    fn subsets_are_lexicographic() {
        let s = subsets(4, 2);
        assert_eq!(s, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(subsets(8, 4).len(), 70);
        assert_eq!(binomial(8, 4), Some(70));
    }

    #[test]
    fn seventy_cases_use_every_subset_once() {
        let plan = plan_partition(70, 8, 4, 11).unwrap();
        let report = verify_plan(&plan);
        assert!(report.passed(), "{report}");
        assert!(report.loads.iter().all(|&l| l == 35));
        assert_eq!(report.max_load, 35);
        assert_eq!(report.max_overlap, 15);
        let mut seen = plan.membership.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 70);
    }

    #[test]
    fn single_case() {
        let plan = plan_partition(1, 8, 4, 3).unwrap();
        assert_eq!(plan.membership[0].len(), 4);
        let r = verify_plan(&plan);
        assert!(r.passed());
        assert!(r.max_load <= 1 && r.max_overlap <= 1);
    }

    #[test]
    fn paper_sized_training_set() {
        let r = verify_plan(&plan_partition(679, 8, 4, 2024).unwrap());
        assert!(r.passed(), "{r}");
        assert_eq!(r.load_bound, 340);
        assert_eq!(r.overlap_bound, 170);
    }

    /// Three 4-subsets of 8 learners that pairwise share at most one learner
    /// would cover at least 12 - 3 = 9 learners.
    #[test]
    fn three_cases_cannot_meet_the_overlap_cap() {
        let all = subsets(8, 4);
        let share = |a: &[usize], b: &[usize]| a.iter().filter(|x| b.contains(x)).count();
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate().skip(i) {
                for c in &all[j..] {
                    assert!(share(a, b) > 1 || share(a, c) > 1 || share(b, c) > 1);
                }
            }
        }
        let r = verify_plan(&plan_partition(3, 8, 4, 1).unwrap());
        assert!(r.membership_ok() && r.load_ok());
        assert_eq!((r.max_overlap, r.overlap_bound), (2, 1));
    }

    #[test]
    fn every_other_size_up_to_seven_hundred() {
        for n in (1..=700).filter(|&n| n != 3) {
            let r = verify_plan(&plan_partition(n, 8, 4, 42).unwrap());
            assert!(r.passed(), "N={n}: {r}");
        }
    }

    #[test]
    fn identical_subsets_fail_overlap() {
        let plan = plan_with(8, vec![vec![0, 1, 2, 3]; 8]);
        let r = verify_plan(&plan);
        assert!(!r.passed());
        assert!(r.membership_ok());
        assert_eq!(r.max_overlap, 8);
        assert_eq!(r.overlap_bound, 3);
    }

    #[test]
    fn empty_plan_passes() {
        let plan = plan_with(8, vec![]);
        assert!(verify_plan(&plan).passed());
        assert!(plan_partition(0, 8, 4, 0).unwrap().membership.is_empty());
    }

    #[test]
    fn malformed_membership_is_reported() {
        let mut plan = plan_with(8, vec![vec![0, 1, 2, 3], vec![0, 0, 1, 2], vec![0, 1, 2, 9]]);
        plan.replication = 4;
        assert_eq!(verify_plan(&plan).bad_membership, vec![1, 2]);
    }

    #[test]
    fn holdout_is_complement() {
        let plan = plan_with(8, vec![vec![0, 1, 2, 3], vec![0, 2, 4, 6]]);
        assert_eq!(holdout_learners(&plan, 0).unwrap(), vec![4, 5, 6, 7]);
        assert_eq!(holdout_learners(&plan, 1).unwrap(), vec![1, 3, 5, 7]);
        assert!(matches!(
            holdout_learners(&plan, 2),
            Err(Error::CaseOutOfRange { case: 2, n_cases: 2 })
        ));
    }

    #[test]
    fn infeasible_configs() {
        assert!(matches!(plan_partition(10, 8, 9, 0), Err(Error::InfeasibleConfig(_))));
        assert!(matches!(plan_partition(10, 1, 1, 0), Err(Error::InfeasibleConfig(_))));
        assert!(matches!(plan_partition(10, 8, 0, 0), Err(Error::InfeasibleConfig(_))));
    }

    #[test]
    fn other_shapes_respect_generalized_bounds() {
        for (l, r) in [(2, 1), (2, 2), (4, 2), (4, 3), (6, 2), (6, 3), (8, 1), (8, 2), (8, 3), (10, 3)] {
            for n in [1, 2, 3, 5, 17, 64, 257] {
                let plan = plan_partition(n, l, r, 5).unwrap();
                let rep = verify_plan(&plan);
                assert!(rep.passed(), "L={l} R={r} N={n}: {rep}");
            }
        }
    }

    #[test]
    fn plan_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        let plan = plan_partition(20, 8, 4, 9).unwrap();
        plan.write(&path).unwrap();
        assert_eq!(PartitionPlan::read(&path).unwrap(), plan);
        assert!(matches!(
            PartitionPlan::read(&dir.path().join("nope.json")),
            Err(Error::MissingPlan(_))
        ));
    }

    proptest! {
        #[test]
        fn membership_and_holdout_partition_learners(n in 1usize..200, seed in any::<u64>()) {
            let plan = plan_partition(n, 8, 4, seed).unwrap();
            for c in 0..n {
                let hold = holdout_learners(&plan, c).unwrap();
                prop_assert_eq!(hold.len(), 4);
                let mut all: Vec<usize> = plan.membership[c].iter().chain(&hold).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..8).collect::<Vec<_>>());
            }
        }

        #[test]
        fn planning_is_deterministic(n in 1usize..300, seed in any::<u64>()) {
            prop_assert_eq!(plan_partition(n, 8, 4, seed).unwrap(), plan_partition(n, 8, 4, seed).unwrap());
        }

        #[test]
        fn any_seed_meets_bounds(n in (1usize..=700).prop_filter("infeasible", |&n| n != 3), seed in any::<u64>()) {
            let rep = verify_plan(&plan_partition(n, 8, 4, seed).unwrap());
            prop_assert!(rep.passed(), "N={} seed={}: {}", n, seed, rep);
        }
    }
}
