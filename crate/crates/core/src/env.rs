//! The tallying-bandit environment.
//!
//! The loss of playing action `x` is `h_x(y)`, where `y` is the number of
//! times `x` appears among the last `m` actions, the current one included.
//! The window of the last `m` actions is all the state there is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// A real action, numbered from 1. Zero is reserved for unplayed window slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ActionId(u32);

impl ActionId {
    pub fn new(index: u32) -> Result<Self> {
        if index == 0 {
            return Err(Error::InvalidAction { index, k: 0 });
        }
        Ok(ActionId(index))
    }

    /// Caller guarantees `index >= 1`.
    pub(crate) const fn new_unchecked(index: u32) -> Self {
        ActionId(index)
    }

    pub fn index(self) -> u32 {
        self.0
    }

    pub(crate) fn row(self) -> usize {
        self.0 as usize - 1
    }
}

impl TryFrom<u32> for ActionId {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        ActionId::new(v)
    }
}

impl From<ActionId> for u32 {
    fn from(a: ActionId) -> u32 {
        a.0
    }
}

impl std::fmt::Display for ActionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Loss table `h_x(y)` for `x in 1..=K`, `y in 1..=m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelJson", into = "KernelJson")]
pub struct TallyKernel {
    k: usize,
    m: usize,
    // row-major: h[(x - 1) * m + (y - 1)]
    h: Vec<f64>,
}

/// Wire form of a kernel: `{"K": .., "m": .., "h": [[..], ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelJson {
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    pub h: Vec<Vec<f64>>,
}

impl KernelJson {
    /// Checks every kernel invariant without constructing the kernel.
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("kernel needs K >= 2, got {}", self.k)));
        }
        if self.m < 1 {
            return Err(Error::Config("kernel needs m >= 1".into()));
        }
        if self.h.len() != self.k {
            return Err(Error::Config(format!(
                "kernel has {} rows, expected K = {}",
                self.h.len(),
                self.k
            )));
        }
        for (x, row) in self.h.iter().enumerate() {
            if row.len() != self.m {
                return Err(Error::Config(format!(
                    "kernel row {} has {} entries, expected m = {}",
                    x + 1,
                    row.len(),
                    self.m
                )));
            }
            for (y, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("h_{}({}) = {v} is outside [0, 1]", x + 1, y + 1)));
                }
            }
        }
        Ok(())
    }
}

impl TryFrom<KernelJson> for TallyKernel {
    type Error = Error;
    fn try_from(raw: KernelJson) -> Result<Self> {
        raw.validate()?;
        Ok(TallyKernel {
            k: raw.k,
            m: raw.m,
            h: raw.h.into_iter().flatten().collect(),
        })
    }
}

impl From<TallyKernel> for KernelJson {
    fn from(kernel: TallyKernel) -> Self {
        KernelJson {
            k: kernel.k,
            m: kernel.m,
            h: kernel.h.chunks(kernel.m).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl TallyKernel {
    /// Builds a kernel from `K` rows of `m` entries each.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        KernelJson { k, m, h: rows }.try_into()
    }

    /// Builds a kernel with `h_x(y) = f(x, y)`, both 1-based.
    pub fn from_fn(k: usize, m: usize, mut f: impl FnMut(u32, usize) -> f64) -> Result<Self> {
        let rows = (1..=k as u32).map(|x| (1..=m).map(|y| f(x, y)).collect()).collect();
        KernelJson { k, m, h: rows }.try_into()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `h_x(y)`. Panics if `x > K` or `y` is outside `1..=m`.
    pub fn loss(&self, action: ActionId, tally: usize) -> f64 {
        assert!((1..=self.m).contains(&tally), "tally {tally} outside 1..={}", self.m);
        self.h[action.row() * self.m + tally - 1]
    }

    /// Row of `h_x(1..=m)`.
    pub fn row(&self, action: ActionId) -> &[f64] {
        let start = action.row() * self.m;
        &self.h[start..start + self.m]
    }

    pub fn actions(&self) -> impl Iterator<Item = ActionId> + Clone {
        (1..=self.k as u32).map(ActionId::new_unchecked)
    }

    pub fn check_action(&self, action: ActionId) -> Result<()> {
        if action.index() as usize > self.k {
            return Err(Error::InvalidAction {
                index: action.index(),
                k: self.k,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("kernel serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Exact expected cumulative loss of replaying `actions` from `start`.
    pub fn replay_loss(&self, start: &TallyWindow, actions: &[ActionId]) -> f64 {
        let mut window = start.clone();
        actions.iter().map(|&a| self.loss(a, window.push_and_tally(a))).sum()
    }
}

/// The last `m` actions, oldest first; unplayed slots hold 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TallyWindow {
    slots: Vec<u32>,
}

impl TallyWindow {
    pub fn empty(m: usize) -> Self {
        assert!(m >= 1, "window length must be at least 1");
        TallyWindow { slots: vec![0; m] }
    }

    /// Raw slots, oldest first, 0 meaning unplayed.
    pub fn from_slots(slots: Vec<u32>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::Config("window length must be at least 1".into()));
        }
        Ok(TallyWindow { slots })
    }

    pub fn m(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[u32] {
        &self.slots
    }

    /// Tally `action` would get if played now.
    pub fn tally_if_played(&self, action: ActionId) -> usize {
        1 + self.slots[1..].iter().filter(|&&s| s == action.index()).count()
    }

    /// Shifts `action` into the window and returns its tally in the new window.
    pub fn push_and_tally(&mut self, action: ActionId) -> usize {
        self.slots.rotate_left(1);
        let last = self.slots.len() - 1;
        self.slots[last] = action.index();
        self.slots.iter().filter(|&&s| s == action.index()).count()
    }

    /// Non-mutating form of [`push_and_tally`](Self::push_and_tally).
    pub fn pushed(&self, action: ActionId) -> (TallyWindow, usize) {
        let mut next = self.clone();
        let tally = next.push_and_tally(action);
        (next, tally)
    }
}

/// How observations are drawn around the mean `h_x(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackModel {
    Deterministic,
    #[default]
    Bernoulli,
}

/// One environment step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    pub action: ActionId,
    pub tally: u32,
    pub observed: f64,
    pub expected: f64,
}

/// Plays `action` against `kernel`, advancing `window`.
///
/// Bernoulli feedback consumes exactly one uniform from `rng`; deterministic
/// feedback consumes none.
pub fn step(
    window: &mut TallyWindow,
    action: ActionId,
    kernel: &TallyKernel,
    model: FeedbackModel,
    rng: &mut RandomStream,
) -> Result<LossSample> {
    kernel.check_action(action)?;
    if window.m() != kernel.m() {
        return Err(Error::Config(format!(
            "window length {} does not match kernel memory m = {}",
            window.m(),
            kernel.m()
        )));
    }
    let tally = window.push_and_tally(action);
    let expected = kernel.loss(action, tally);
    let observed = match model {
        FeedbackModel::Deterministic => expected,
        FeedbackModel::Bernoulli => {
            if rng.bernoulli(expected) {
                1.0
            } else {
                0.0
            }
        }
    };
    Ok(LossSample {
        action,
        tally: tally as u32,
        observed,
        expected,
    })
}

/// A budgeted environment: a kernel, a window, a feedback model, and a record
/// of every step taken.
#[derive(Debug)]
pub struct TallyEnv<'k> {
    kernel: &'k TallyKernel,
    model: FeedbackModel,
    window: TallyWindow,
    rng: RandomStream,
    horizon: usize,
    steps: Vec<LossSample>,
    cum_expected: f64,
}

impl<'k> TallyEnv<'k> {
    pub fn new(kernel: &'k TallyKernel, model: FeedbackModel, horizon: usize, rng: RandomStream) -> Self {
        TallyEnv {
            kernel,
            model,
            window: TallyWindow::empty(kernel.m()),
            rng,
            horizon,
            steps: Vec::with_capacity(horizon),
            cum_expected: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.kernel.k()
    }

    pub fn m(&self) -> usize {
        self.kernel.m()
    }

    pub fn model(&self) -> FeedbackModel {
        self.model
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn elapsed(&self) -> usize {
        self.steps.len()
    }

    pub fn remaining(&self) -> usize {
        self.horizon - self.steps.len()
    }

    pub fn window(&self) -> &TallyWindow {
        &self.window
    }

    /// The true kernel. Learners must not read this; it exists for run
    /// diagnostics that compare estimates against ground truth.
    pub fn oracle_kernel(&self) -> &'k TallyKernel {
        self.kernel
    }

    pub fn play(&mut self, action: ActionId) -> Result<LossSample> {
        if self.remaining() == 0 {
            return Err(Error::Protocol(format!("horizon of {} steps exhausted", self.horizon)));
        }
        let sample = step(&mut self.window, action, self.kernel, self.model, &mut self.rng)?;
        self.cum_expected += sample.expected;
        self.steps.push(sample);
        Ok(sample)
    }

    pub fn cum_expected(&self) -> f64 {
        self.cum_expected
    }

    pub fn into_steps(self) -> (Vec<LossSample>, f64) {
        (self.steps, self.cum_expected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(i: u32) -> ActionId {
        ActionId::new(i).unwrap()
    }

    fn alternating() -> TallyKernel {
        TallyKernel::from_rows(vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn first_play_tallies_one() {
        let mut w = TallyWindow::empty(2);
        assert_eq!(w.push_and_tally(a(1)), 1);
        assert_eq!(w.slots(), &[0, 1]);
    }

    #[test]
    fn saturated_window() {
        let mut w = TallyWindow::from_slots(vec![1, 1]).unwrap();
        assert_eq!(w.push_and_tally(a(1)), 2);
        assert_eq!(w.slots(), &[1, 1]);
    }

    #[test]
    fn counts_new_window() {
        let mut w = TallyWindow::from_slots(vec![1, 2, 1]).unwrap();
        assert_eq!(w.tally_if_played(a(1)), 2);
        assert_eq!(w.push_and_tally(a(1)), 2);
        assert_eq!(w.slots(), &[2, 1, 1]);
    }

    #[test]
    fn sentinel_is_rejected() {
        assert!(matches!(ActionId::new(0), Err(Error::InvalidAction { index: 0, .. })));
        assert!(serde_json::from_str::<ActionId>("0").is_err());
    }

    #[test]
    fn alternating_kernel_steps() {
        let k = alternating();
        let mut rng = RandomStream::new(0, 0);
        let mut w = TallyWindow::from_slots(vec![2, 1]).unwrap();
        let s = step(&mut w, a(2), &k, FeedbackModel::Bernoulli, &mut rng).unwrap();
        assert_eq!((s.tally, s.expected), (1, 0.0));

        let mut w = TallyWindow::from_slots(vec![1, 1]).unwrap();
        let s = step(&mut w, a(1), &k, FeedbackModel::Bernoulli, &mut rng).unwrap();
        assert_eq!((s.tally, s.expected), (2, 1.0));
    }

    #[test]
    fn step_rejects_bad_input() {
        let k = alternating();
        let mut rng = RandomStream::new(0, 0);
        let mut w = TallyWindow::empty(3);
        assert!(matches!(
            step(&mut w, a(1), &k, FeedbackModel::Deterministic, &mut rng),
            Err(Error::Config(_))
        ));
        let mut w = TallyWindow::empty(2);
        assert!(matches!(
            step(&mut w, a(3), &k, FeedbackModel::Deterministic, &mut rng),
            Err(Error::InvalidAction { index: 3, k: 2 })
        ));
    }

    #[test]
    fn deterministic_consumes_no_randomness() {
        let k = TallyKernel::from_rows(vec![vec![0.3, 0.7], vec![0.5, 0.1]]).unwrap();
        let mut rng = RandomStream::new(5, 5);
        let mut w = TallyWindow::empty(2);
        for i in [1, 2, 2, 1, 1] {
            let s = step(&mut w, a(i), &k, FeedbackModel::Deterministic, &mut rng).unwrap();
            assert_eq!(s.observed, s.expected);
        }
        let mut fresh = RandomStream::new(5, 5);
        assert_eq!(rng.uniform(), fresh.uniform());
    }

    #[test]
    fn bernoulli_consumes_one_draw() {
        let k = TallyKernel::from_rows(vec![vec![0.3, 0.7], vec![0.5, 0.1]]).unwrap();
        let mut rng = RandomStream::new(5, 5);
        let mut w = TallyWindow::empty(2);
        step(&mut w, a(1), &k, FeedbackModel::Bernoulli, &mut rng).unwrap();
        let mut twin = RandomStream::new(5, 5);
        twin.uniform();
        assert_eq!(rng.uniform(), twin.uniform());
    }

    #[test]
    fn kernel_json_layout() {
        let k = TallyKernel::from_rows(vec![vec![0.0, 0.25], vec![0.5, 1.0]]).unwrap();
        assert_eq!(k.to_json(), r#"{"K":2,"m":2,"h":[[0.0,0.25],[0.5,1.0]]}"#);
        let back = TallyKernel::from_json(&k.to_json()).unwrap();
        assert_eq!(back, k);
        assert_eq!(back.loss(a(1), 2), 0.25);
        assert_eq!(back.loss(a(2), 1), 0.5);
    }

    #[test]
    fn kernel_validation() {
        assert!(TallyKernel::from_json(r#"{"K":2,"m":1,"h":[[0.5],[1.5]]}"#).is_err());
        assert!(TallyKernel::from_json(r#"{"K":1,"m":1,"h":[[0.5]]}"#).is_err());
        assert!(TallyKernel::from_json(r#"{"K":2,"m":2,"h":[[0.5],[0.5,0.1]]}"#).is_err());
        assert!(TallyKernel::from_json(r#"{"K":2,"m":1,"h":[[0.5],[0.2]],"x":1}"#).is_err());
        assert!(TallyKernel::from_json(r#"{"K":2,"m":1,"h":[[0.5],[0.5]]}"#).is_ok());
    }

    #[test]
    fn env_budget() {
        let k = alternating();
        let mut env = TallyEnv::new(&k, FeedbackModel::Deterministic, 3, RandomStream::new(0, 0));
        for i in [1, 2, 1] {
            env.play(a(i)).unwrap();
        }
        assert_eq!(env.cum_expected(), 0.0);
        assert!(matches!(env.play(a(1)), Err(Error::Protocol(_))));
    }
}
