//! Exact planning over the window MDP, cyclic-policy statistics, and a
//! brute-force oracle used to check the planner.
//!
//! A tallying bandit is a deterministic finite-horizon MDP whose state is the
//! window of the last `m` actions (`(K+1)^m` states including the unplayed
//! sentinel). [`dp_optimal`] runs backward induction over that state space.

use serde::Serialize;

use crate::env::{ActionId, TallyKernel, TallyWindow};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Default bound on `(K+1)^m`.
pub const DEFAULT_STATE_CAP: u64 = 1_000_000;
/// Default bound on `K^T` for [`exhaustive_oracle`].
pub const DEFAULT_ORACLE_BUDGET: u64 = 10_000_000;
/// Default bound on the number of enumerated cyclic policies.
pub const DEFAULT_POLICY_CAP: u64 = 1 << 20;

// Layers smaller than this are not worth dispatching to the thread pool.
const PAR_LAYER_MIN: usize = 4096;

/// `base^exp` if it fits under `cap`.
pub(crate) fn bounded_pow(base: u64, exp: usize, cap: u64) -> Option<u64> {
    let mut acc: u64 = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
        if acc > cap {
            return None;
        }
    }
    Some(acc)
}

fn pow_u128_saturating(base: u64, exp: usize) -> u128 {
    (0..exp).fold(1u128, |acc, _| acc.saturating_mul(base as u128))
}

/// A window encoded in base `K+1`, oldest slot most significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MdpIndex(pub u64);

impl MdpIndex {
    pub fn encode(window: &TallyWindow, k: usize) -> MdpIndex {
        let base = k as u64 + 1;
        MdpIndex(window.slots().iter().fold(0u64, |acc, &s| acc * base + s as u64))
    }

    pub fn decode(self, k: usize, m: usize) -> TallyWindow {
        let base = k as u64 + 1;
        let mut slots = vec![0u32; m];
        let mut code = self.0;
        for slot in slots.iter_mut().rev() {
            *slot = (code % base) as u32;
            code /= base;
        }
        TallyWindow::from_slots(slots).expect("m >= 1")
    }
}

/// Transition and loss tables of the window MDP.
#[derive(Debug)]
pub struct WindowMdp<'k> {
    kernel: &'k TallyKernel,
    base: u64,
    n_states: usize,
    tail_mod: u64,
    // tally[s * K + (a - 1)] = tally of a when played from state s
    tally: Vec<u8>,
}

impl<'k> WindowMdp<'k> {
    pub fn new(kernel: &'k TallyKernel, state_cap: u64, exec: Execution) -> Result<Self> {
        let k = kernel.k();
        let m = kernel.m();
        let base = k as u64 + 1;
        let n_states = bounded_pow(base, m, state_cap).ok_or(Error::Capacity {
            what: "MDP state space (K+1)^m",
            needed: pow_u128_saturating(base, m),
            cap: state_cap as u128,
            hint: "",
        })? as usize;
        if m > u8::MAX as usize {
            return Err(Error::Unsupported(format!("memory m = {m} exceeds 255")));
        }
        let tail_mod = base.pow(m as u32 - 1);
        let mut tally = vec![0u8; n_states * k];
        let fill_exec = if n_states >= PAR_LAYER_MIN {
            exec
        } else {
            Execution::Sequential
        };
        fill_exec.fill(&mut tally, |i| {
            let s = (i / k) as u64;
            let a = (i % k) as u64 + 1;
            let mut tail = s % tail_mod;
            let mut count = 1u8;
            for _ in 0..m - 1 {
                if tail % base == a {
                    count += 1;
                }
                tail /= base;
            }
            count
        });
        Ok(WindowMdp {
            kernel,
            base,
            n_states,
            tail_mod,
            tally,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    fn next(&self, s: usize, a: u32) -> usize {
        ((s as u64 % self.tail_mod) * self.base + a as u64) as usize
    }

    #[inline]
    fn loss(&self, s: usize, a: u32) -> f64 {
        let k = self.kernel.k();
        let y = self.tally[s * k + a as usize - 1] as usize;
        self.kernel.loss(ActionId::new_unchecked(a), y)
    }

    // Smallest action index wins ties.
    #[inline]
    fn best_action(&self, s: usize, to_go: &[f64]) -> (u32, f64) {
        let mut best = (1u32, f64::INFINITY);
        for a in 1..=self.kernel.k() as u32 {
            let q = self.loss(s, a) + to_go[self.next(s, a)];
            if q < best.1 {
                best = (a, q);
            }
        }
        best
    }

    fn backup(&self, to_go: &[f64], out: &mut [f64], exec: Execution) {
        let exec = if self.n_states >= PAR_LAYER_MIN {
            exec
        } else {
            Execution::Sequential
        };
        exec.fill(out, |s| self.best_action(s, to_go).1);
    }
}

/// Optimal open-loop plan from a given window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpPlan {
    /// Minimum expected cumulative loss over the horizon.
    pub value: f64,
    pub actions: Vec<ActionId>,
}

/// Limits and execution strategy shared by the planners.
#[derive(Debug, Clone, Copy)]
pub struct PlanOptions {
    pub state_cap: u64,
    pub exec: Execution,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            state_cap: DEFAULT_STATE_CAP,
            exec: Execution::default(),
        }
    }
}

/// Minimum expected cumulative loss over `horizon` steps from `start`, and one
/// action sequence attaining it (ties toward the smallest action index).
///
/// Keeps value layers only at every `ceil(sqrt(T))`-th step and recomputes the
/// layers in between during the forward pass, so memory is
/// `O(sqrt(T) * (K+1)^m)` rather than `O(T * (K+1)^m)`.
pub fn dp_optimal(kernel: &TallyKernel, horizon: usize, start: &TallyWindow, opts: PlanOptions) -> Result<DpPlan> {
    if start.m() != kernel.m() {
        return Err(Error::Config(format!(
            "start window length {} does not match m = {}",
            start.m(),
            kernel.m()
        )));
    }
    if let Some(&bad) = start.slots().iter().find(|&&s| s as usize > kernel.k()) {
        return Err(Error::InvalidAction {
            index: bad,
            k: kernel.k(),
        });
    }
    let mdp = WindowMdp::new(kernel, opts.state_cap, opts.exec)?;
    if horizon == 0 {
        return Ok(DpPlan {
            value: 0.0,
            actions: Vec::new(),
        });
    }
    let n = mdp.n_states();
    let block = (horizon as f64).sqrt().ceil() as usize;

    // checkpoints[c] = V_{c * block}, where V_r is the value with r steps to go.
    let mut checkpoints: Vec<Vec<f64>> = vec![vec![0.0; n]];
    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    for r in 1..=horizon {
        mdp.backup(&prev, &mut cur, opts.exec);
        std::mem::swap(&mut prev, &mut cur);
        if r % block == 0 && r < horizon {
            checkpoints.push(prev.clone());
        }
    }
    let mut state = MdpIndex::encode(start, kernel.k()).0 as usize;
    let value = prev[state];
    drop(prev);
    drop(cur);

    let mut actions = Vec::with_capacity(horizon);
    // Step with r steps to go needs V_{r-1}; walk blocks from the top down.
    let n_blocks = horizon.div_ceil(block);
    for c in (0..n_blocks).rev() {
        let lo = c * block;
        let hi = ((c + 1) * block).min(horizon); // layers lo..hi
        let mut layers: Vec<Vec<f64>> = Vec::with_capacity(hi - lo);
        layers.push(checkpoints[c].clone());
        for _ in lo + 1..hi {
            let mut next = vec![0.0; n];
            mdp.backup(layers.last().expect("nonempty"), &mut next, opts.exec);
            layers.push(next);
        }
        for r_minus_1 in (lo..hi).rev() {
            let (a, _) = mdp.best_action(state, &layers[r_minus_1 - lo]);
            actions.push(ActionId::new_unchecked(a));
            state = mdp.next(state, a);
        }
    }
    debug_assert_eq!(actions.len(), horizon);
    Ok(DpPlan { value, actions })
}

/// Brute-force minimum over all `K^T` action sequences from the empty window.
/// The lexicographically first minimizer is returned.
pub fn exhaustive_oracle(kernel: &TallyKernel, horizon: usize, budget: u64) -> Result<DpPlan> {
    let k = kernel.k();
    if bounded_pow(k as u64, horizon, budget).is_none() {
        return Err(Error::Capacity {
            what: "exhaustive enumeration K^T",
            needed: pow_u128_saturating(k as u64, horizon),
            cap: budget as u128,
            hint: "",
        });
    }

    struct Search<'a> {
        kernel: &'a TallyKernel,
        horizon: usize,
        prefix: Vec<ActionId>,
        best: DpPlan,
    }

    impl Search<'_> {
        fn descend(&mut self, window: &TallyWindow, loss: f64) {
            if self.prefix.len() == self.horizon {
                if loss < self.best.value {
                    self.best = DpPlan {
                        value: loss,
                        actions: self.prefix.clone(),
                    };
                }
                return;
            }
            for a in self.kernel.actions() {
                let (next, tally) = window.pushed(a);
                self.prefix.push(a);
                self.descend(&next, loss + self.kernel.loss(a, tally));
                self.prefix.pop();
            }
        }
    }

    let mut search = Search {
        kernel,
        horizon,
        prefix: Vec::with_capacity(horizon),
        best: DpPlan {
            value: f64::INFINITY,
            actions: Vec::new(),
        },
    };
    search.descend(&TallyWindow::empty(kernel.m()), 0.0);
    if horizon == 0 {
        search.best.value = 0.0;
    }
    Ok(search.best)
}

/// A period-`L` action sequence, repeated forever.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct CyclicPolicy {
    seq: Vec<ActionId>,
}

impl CyclicPolicy {
    pub fn new(seq: Vec<ActionId>) -> Result<Self> {
        if seq.is_empty() {
            return Err(Error::Parameter("cyclic policy needs period >= 1".into()));
        }
        Ok(CyclicPolicy { seq })
    }

    /// From raw action indices; convenient in tests and configs.
    pub fn from_indices(seq: &[u32]) -> Result<Self> {
        let seq = seq.iter().map(|&i| ActionId::new(i)).collect::<Result<Vec<_>>>()?;
        CyclicPolicy::new(seq)
    }

    /// The `index`-th policy of period `period` in lexicographic order.
    pub fn from_lex_index(mut index: u64, k: usize, period: usize) -> Self {
        let mut seq = vec![ActionId::new_unchecked(1); period];
        for slot in seq.iter_mut().rev() {
            *slot = ActionId::new_unchecked((index % k as u64) as u32 + 1);
            index /= k as u64;
        }
        CyclicPolicy { seq }
    }

    /// Repeats `base` until the sequence has length `period`, truncating the
    /// last copy if needed.
    pub fn tiled(base: &CyclicPolicy, period: usize) -> Self {
        CyclicPolicy {
            seq: base.seq.iter().copied().cycle().take(period).collect(),
        }
    }

    pub fn period(&self) -> usize {
        self.seq.len()
    }

    pub fn seq(&self) -> &[ActionId] {
        &self.seq
    }

    /// Action at 1-based time `t`.
    pub fn action_at(&self, t: usize) -> ActionId {
        self.seq[(t - 1) % self.seq.len()]
    }

    pub fn indices(&self) -> Vec<u32> {
        self.seq.iter().map(|a| a.index()).collect()
    }
}

/// Visit frequencies of `(action, tally)` pairs over one steady-state period,
/// kept as integer counts so sums are exact.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NxyTable {
    k: usize,
    m: usize,
    period: usize,
    counts: Vec<u32>,
}

impl NxyTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// Number of steps in one period where `x` is played with tally `y`.
    pub fn count(&self, x: ActionId, y: usize) -> u32 {
        self.counts[x.row() * self.m + y - 1]
    }

    pub(crate) fn count_at(&self, pair: usize) -> u32 {
        self.counts[pair]
    }

    pub fn get(&self, x: ActionId, y: usize) -> f64 {
        self.count(x, y) as f64 / self.period as f64
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// `sum_xy N_xy * h_x(y)`.
    pub fn mu(&self, kernel: &TallyKernel) -> f64 {
        assert_eq!((kernel.k(), kernel.m()), (self.k, self.m), "kernel shape mismatch");
        let mut acc = 0.0;
        for (pair, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                acc += c as f64 * kernel.loss(ActionId::new_unchecked((pair / self.m) as u32 + 1), pair % self.m + 1);
            }
        }
        acc / self.period as f64
    }

    /// Dense `K x m` table of frequencies.
    pub fn entries(&self) -> Vec<Vec<f64>> {
        self.counts
            .chunks(self.m)
            .map(|row| row.iter().map(|&c| c as f64 / self.period as f64).collect())
            .collect()
    }
}

impl Serialize for NxyTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("NxyTable", 4)?;
        st.serialize_field("K", &self.k)?;
        st.serialize_field("m", &self.m)?;
        st.serialize_field("period", &self.period)?;
        st.serialize_field("entries", &self.entries())?;
        st.end()
    }
}

fn check_period(policy: &CyclicPolicy, m: usize) -> Result<()> {
    if m > policy.period() {
        return Err(Error::Unsupported(format!(
            "memory m = {m} exceeds policy period L = {}",
            policy.period()
        )));
    }
    Ok(())
}

/// Counts over the last of `warmup + 1` periods, played after `prefix`.
pub fn n_xy_after(policy: &CyclicPolicy, k: usize, m: usize, prefix: &[ActionId], warmup: usize) -> Result<NxyTable> {
    check_period(policy, m)?;
    if warmup < 1 {
        return Err(Error::Parameter("at least one warmup period is required".into()));
    }
    if let Some(bad) = policy.seq().iter().chain(prefix).find(|a| a.index() as usize > k) {
        return Err(Error::InvalidAction { index: bad.index(), k });
    }
    let mut window = TallyWindow::empty(m);
    for &a in prefix {
        window.push_and_tally(a);
    }
    for _ in 0..warmup {
        for &a in policy.seq() {
            window.push_and_tally(a);
        }
    }
    let mut counts = vec![0u32; k * m];
    for &a in policy.seq() {
        let y = window.push_and_tally(a);
        counts[a.row() * m + y - 1] += 1;
    }
    Ok(NxyTable {
        k,
        m,
        period: policy.period(),
        counts,
    })
}

/// Steady-state visit frequencies of `policy` for memory `m` and `k` actions.
pub fn n_xy(policy: &CyclicPolicy, k: usize, m: usize) -> Result<NxyTable> {
    n_xy_after(policy, k, m, &[], 1)
}

/// Per-step expected loss of a steady-state period of `policy`.
pub fn mu(policy: &CyclicPolicy, kernel: &TallyKernel) -> Result<f64> {
    Ok(n_xy(policy, kernel.k(), kernel.m())?.mu(kernel))
}

/// Exact minimizer of `mu` over all `K^L` period-`L` policies; ties go to the
/// lexicographically smallest sequence.
pub fn best_cyclic(kernel: &TallyKernel, period: usize, cap: u64, exec: Execution) -> Result<(CyclicPolicy, f64)> {
    let k = kernel.k();
    let m = kernel.m();
    if m > period {
        return Err(Error::Unsupported(format!(
            "memory m = {m} exceeds period L = {period}"
        )));
    }
    let total = bounded_pow(k as u64, period, cap).ok_or(Error::Capacity {
        what: "cyclic policy enumeration K^L",
        needed: pow_u128_saturating(k as u64, period),
        cap: cap as u128,
        hint: "; use a smaller L or a period-limited pool",
    })?;
    let (best, value) = exec
        .argmin_range(total as usize, |i| {
            let policy = CyclicPolicy::from_lex_index(i as u64, k, period);
            n_xy(&policy, k, m).expect("period checked").mu(kernel)
        })
        .expect("K^L >= 1");
    Ok((CyclicPolicy::from_lex_index(best as u64, k, period), value))
}

/// `floor(sqrt(T))`, computed without floating-point error.
pub fn cycle_length(horizon: usize) -> usize {
    let mut l = (horizon as f64).sqrt() as usize;
    while l * l > horizon {
        l -= 1;
    }
    while (l + 1) * (l + 1) <= horizon {
        l += 1;
    }
    l
}
