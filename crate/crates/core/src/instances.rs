//! Instance families.
//!
//! - `alternating`: two actions, `m = 2`, zero loss at tally 1 and unit loss at
//!   tally 2. Alternating is free; any constant action pays `T - 1`.
//! - `needle`: one hidden action has zero loss at tally `m`, everything else
//!   costs 1.
//! - `gap`: every entry is 1/2 except one hidden `(x*, y*)` with `y*` near `m`,
//!   which is `1/2 - epsilon`.
//! - `random`: i.i.d. uniform entries rounded to 6 decimals.
//! - `explicit`: a kernel given verbatim.

use serde::{Deserialize, Serialize};

use crate::env::{ActionId, KernelJson, TallyKernel};
use crate::error::{Error, Result};
use crate::planning::CyclicPolicy;
use crate::rng::{RandomStream, INSTANCE_STREAM_BASE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Alternating,
    Needle,
    Gap,
    Random,
    Explicit,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Alternating => "alternating",
            Family::Needle => "needle",
            Family::Gap => "gap",
            Family::Random => "random",
            Family::Explicit => "explicit",
        }
    }
}

/// Instance description as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub family: Family,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Gap size; when absent the gap family uses [`default_epsilon`] per horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Generator seed; defaults to the experiment's master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelJson>,
}

/// What the generator knows about an instance's optimum.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InstanceMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_star: Option<ActionId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_star: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// A cyclic policy with a known loss guarantee.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_policy: Option<CyclicPolicy>,
    /// Closed-form optimal cumulative loss as a function of T, if known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimal_loss: Option<String>,
    /// Closed-form cumulative loss of the best constant action, if known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_constant_loss: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Instance {
    pub family: Family,
    pub kernel: TallyKernel,
    pub meta: InstanceMeta,
}

pub fn gen_alternating() -> Instance {
    let kernel = TallyKernel::from_rows(vec![vec![0.0, 1.0], vec![0.0, 1.0]]).expect("valid");
    Instance {
        family: Family::Alternating,
        kernel,
        meta: InstanceMeta {
            reference_policy: Some(CyclicPolicy::from_indices(&[1, 2]).expect("valid")),
            optimal_loss: Some("0".into()),
            best_constant_loss: Some("T-1".into()),
            ..InstanceMeta::default()
        },
    }
}

fn check_shape(k: usize, m: usize, min_m: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Parameter(format!("need K >= 2, got {k}")));
    }
    if m < min_m {
        return Err(Error::Parameter(format!("need m >= {min_m}, got {m}")));
    }
    Ok(())
}

pub fn gen_needle(k: usize, m: usize, rng: &mut RandomStream) -> Result<Instance> {
    check_shape(k, m, 1)?;
    let star = rng.int_inclusive(1, k as u64) as u32;
    let kernel = TallyKernel::from_fn(k, m, |x, y| if x == star && y == m { 0.0 } else { 1.0 })?;
    let x_star = ActionId::new(star)?;
    Ok(Instance {
        family: Family::Needle,
        kernel,
        meta: InstanceMeta {
            x_star: Some(x_star),
            reference_policy: Some(CyclicPolicy::new(vec![x_star])?),
            optimal_loss: Some(format!("min(T, {})", m - 1)),
            ..InstanceMeta::default()
        },
    })
}

/// Smallest tally eligible for the special gap entry: `ceil(23m/24)`.
pub fn gap_min_tally(m: usize) -> usize {
    (23 * m).div_ceil(24)
}

pub fn gen_gap(k: usize, m: usize, epsilon: f64, rng: &mut RandomStream) -> Result<Instance> {
    check_shape(k, m, 2)?;
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::Parameter(format!(
            "gap epsilon must lie in (0, 1/2], got {epsilon}"
        )));
    }
    let y_lo = gap_min_tally(m);
    let n_tallies = m - y_lo + 1;
    let pick = rng.int_inclusive(0, (k * n_tallies - 1) as u64) as usize;
    let star = (pick / n_tallies) as u32 + 1;
    let y_star = y_lo + pick % n_tallies;
    let kernel = TallyKernel::from_fn(k, m, |x, y| if x == star && y == y_star { 0.5 - epsilon } else { 0.5 })?;
    let x_star = ActionId::new(star)?;
    let other = ActionId::new(star % k as u32 + 1)?;
    let mut period = vec![x_star; y_star];
    period.resize(m, other);
    let mut flags = Vec::new();
    if !m.is_multiple_of(24) {
        flags.push("gap_tally_range_ceiling".to_string());
    }
    Ok(Instance {
        family: Family::Gap,
        kernel,
        meta: InstanceMeta {
            x_star: Some(x_star),
            y_star: Some(y_star),
            epsilon: Some(epsilon),
            reference_policy: Some(CyclicPolicy::new(period)?),
            flags,
            ..InstanceMeta::default()
        },
    })
}

/// Upper bound on the reference policy's cumulative loss on a gap instance:
/// `T/2 - 23 eps T / 24 + 23 m eps / 24`.
pub fn gap_reference_bound(horizon: usize, m: usize, epsilon: f64) -> f64 {
    let t = horizon as f64;
    t / 2.0 - 23.0 * epsilon * t / 24.0 + 23.0 * m as f64 * epsilon / 24.0
}

/// `sqrt(mK/T)` clipped to `(0, 1/4]`.
pub fn default_epsilon(m: usize, k: usize, horizon: usize) -> f64 {
    ((m * k) as f64 / horizon.max(1) as f64).sqrt().min(0.25)
}

pub fn gen_random(k: usize, m: usize, rng: &mut RandomStream) -> Result<Instance> {
    check_shape(k, m, 1)?;
    let kernel = TallyKernel::from_fn(k, m, |_, _| (rng.uniform() * 1e6).round() / 1e6)?;
    Ok(Instance {
        family: Family::Random,
        kernel,
        meta: InstanceMeta::default(),
    })
}

impl InstanceSpec {
    pub fn alternating() -> Self {
        InstanceSpec {
            id: None,
            family: Family::Alternating,
            k: None,
            m: None,
            epsilon: None,
            seed: None,
            kernel: None,
        }
    }

    fn shape(&self) -> Result<(usize, usize)> {
        match (self.k, self.m) {
            (Some(k), Some(m)) => Ok((k, m)),
            _ => Err(Error::Config(format!(
                "{} instance needs both K and m",
                self.family.as_str()
            ))),
        }
    }

    /// Rejects fields that do not apply to the family and missing required ones.
    pub fn validate(&self) -> Result<()> {
        let fam = self.family.as_str();
        let reject = |present: bool, field: &str| {
            if present {
                Err(Error::Config(format!(
                    "field `{field}` does not apply to {fam} instances"
                )))
            } else {
                Ok(())
            }
        };
        match self.family {
            Family::Alternating => {
                reject(self.k.is_some(), "K")?;
                reject(self.m.is_some(), "m")?;
                reject(self.seed.is_some(), "seed")?;
                reject(self.epsilon.is_some(), "epsilon")?;
                reject(self.kernel.is_some(), "kernel")?;
            }
            Family::Needle | Family::Random => {
                self.shape()?;
                reject(self.epsilon.is_some(), "epsilon")?;
                reject(self.kernel.is_some(), "kernel")?;
            }
            Family::Gap => {
                self.shape()?;
                reject(self.kernel.is_some(), "kernel")?;
                if let Some(e) = self.epsilon {
                    if !(e > 0.0 && e <= 0.5) {
                        return Err(Error::Config(format!("gap epsilon must lie in (0, 1/2], got {e}")));
                    }
                }
            }
            Family::Explicit => {
                reject(self.k.is_some(), "K")?;
                reject(self.m.is_some(), "m")?;
                reject(self.seed.is_some(), "seed")?;
                reject(self.epsilon.is_some(), "epsilon")?;
                self.kernel
                    .as_ref()
                    .ok_or_else(|| Error::Config("explicit instance needs a `kernel`".into()))?
                    .validate()?;
            }
        }
        Ok(())
    }

    /// Whether the generated kernel depends on the horizon.
    pub fn depends_on_horizon(&self) -> bool {
        self.family == Family::Gap && self.epsilon.is_none()
    }

    /// Generates the instance. `index` is the instance's position in the
    /// config and only matters when no explicit seed is given.
    pub fn generate(&self, master_seed: u64, index: usize, horizon: usize) -> Result<Instance> {
        self.validate()?;
        let mut rng = match self.seed {
            Some(seed) => RandomStream::new(seed, INSTANCE_STREAM_BASE),
            None => RandomStream::new(master_seed, INSTANCE_STREAM_BASE + index as u64),
        };
        match self.family {
            Family::Alternating => Ok(gen_alternating()),
            Family::Needle => {
                let (k, m) = self.shape()?;
                gen_needle(k, m, &mut rng)
            }
            Family::Gap => {
                let (k, m) = self.shape()?;
                let eps = self.epsilon.unwrap_or_else(|| default_epsilon(m, k, horizon));
                gen_gap(k, m, eps, &mut rng)
            }
            Family::Random => {
                let (k, m) = self.shape()?;
                gen_random(k, m, &mut rng)
            }
            Family::Explicit => Ok(Instance {
                family: Family::Explicit,
                kernel: self.kernel.clone().expect("validated").try_into()?,
                meta: InstanceMeta::default(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planning::{mu, n_xy};

    #[test]
    fn alternating_table() {
        let inst = gen_alternating();
        assert_eq!(inst.kernel.to_json(), r#"{"K":2,"m":2,"h":[[0.0,1.0],[0.0,1.0]]}"#);
    }

    #[test]
    fn needle_rows() {
        let mut rng = RandomStream::new(11, 0);
        let inst = gen_needle(3, 4, &mut rng).unwrap();
        let star = inst.meta.x_star.unwrap();
        for x in inst.kernel.actions() {
            let expect: &[f64] = if x == star { &[1.0, 1.0, 1.0, 0.0] } else { &[1.0; 4] };
            assert_eq!(inst.kernel.row(x), expect);
        }
        let sm = gen_needle(4, 1, &mut rng).unwrap();
        let zeros = sm.kernel.actions().filter(|&x| sm.kernel.loss(x, 1) == 0.0).count();
        assert_eq!(zeros, 1);
    }

    #[test]
    fn needle_star_is_uniform_enough() {
        let mut hits = [0usize; 3];
        for s in 0..300 {
            let inst = gen_needle(3, 2, &mut RandomStream::new(s, 0)).unwrap();
            hits[inst.meta.x_star.unwrap().index() as usize - 1] += 1;
        }
        assert!(hits.iter().all(|&h| h > 60), "{hits:?}");
    }

    #[test]
    fn gap_entries() {
        let mut rng = RandomStream::new(3, 0);
        let inst = gen_gap(2, 24, 0.1, &mut rng).unwrap();
        let (xs, ys) = (inst.meta.x_star.unwrap(), inst.meta.y_star.unwrap());
        assert!(ys == 23 || ys == 24);
        for x in inst.kernel.actions() {
            for y in 1..=24 {
                let v = inst.kernel.loss(x, y);
                if (x, y) == (xs, ys) {
                    assert!((v - 0.4).abs() < 1e-15);
                } else {
                    assert_eq!(v, 0.5);
                }
            }
        }
        assert!(inst.meta.flags.is_empty());
    }

    #[test]
    fn gap_reference_policy_mu() {
        for seed in 0..20 {
            let inst = gen_gap(3, 7, 0.2, &mut RandomStream::new(seed, 0)).unwrap();
            let ys = inst.meta.y_star.unwrap() as f64;
            let p = inst.meta.reference_policy.as_ref().unwrap();
            assert_eq!(p.period(), 7);
            let got = mu(p, &inst.kernel).unwrap();
            assert!((got - (0.5 - 0.2 * ys / 7.0)).abs() < 1e-12, "seed {seed}: {got}");
            // x* is only ever observed at its special tally.
            let t = n_xy(p, 3, 7).unwrap();
            assert_eq!(t.count(inst.meta.x_star.unwrap(), ys as usize) as f64, ys);
            assert_eq!(inst.meta.flags, vec!["gap_tally_range_ceiling".to_string()]);
        }
    }

    #[test]
    fn gap_rejects_bad_epsilon() {
        let mut rng = RandomStream::new(0, 0);
        assert!(gen_gap(2, 4, 0.0, &mut rng).is_err());
        assert!(gen_gap(2, 4, 0.6, &mut rng).is_err());
        assert!(gen_gap(2, 1, 0.1, &mut rng).is_err());
    }

    #[test]
    fn random_is_seeded() {
        let a = gen_random(3, 4, &mut RandomStream::new(9, 0)).unwrap();
        let b = gen_random(3, 4, &mut RandomStream::new(9, 0)).unwrap();
        assert_eq!(a.kernel, b.kernel);
        let mut distinct = 0;
        for s in 0..100u64 {
            let x = gen_random(2, 3, &mut RandomStream::new(2 * s, 0)).unwrap();
            let y = gen_random(2, 3, &mut RandomStream::new(2 * s + 1, 0)).unwrap();
            distinct += (x.kernel != y.kernel) as usize;
        }
        assert_eq!(distinct, 100);
    }

    #[test]
    fn default_epsilon_clips() {
        assert_eq!(default_epsilon(4, 2, 8), 0.25);
        assert!((default_epsilon(4, 2, 2048) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn spec_json() {
        let s: InstanceSpec = serde_json::from_str(r#"{"family":"gap","K":2,"m":4,"epsilon":0.15,"seed":3}"#).unwrap();
        let inst = s.generate(0, 0, 100).unwrap();
        assert_eq!(inst.meta.epsilon, Some(0.15));
        assert!(serde_json::from_str::<InstanceSpec>(r#"{"family":"gap","K":2,"m":4,"bogus":1}"#).is_err());
        let alt: InstanceSpec = serde_json::from_str(r#"{"family":"alternating","K":2}"#).unwrap();
        assert!(alt.validate().is_err());
        let exp: InstanceSpec =
            serde_json::from_str(r#"{"family":"explicit","kernel":{"K":2,"m":1,"h":[[0.1],[0.2]]}}"#).unwrap();
        assert_eq!(
            exp.generate(0, 0, 1).unwrap().kernel.loss(ActionId::new(2).unwrap(), 1),
            0.2
        );
        let bad: InstanceSpec =
            serde_json::from_str(r#"{"family":"explicit","kernel":{"K":2,"m":1,"h":[[0.1],[1.5]]}}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
