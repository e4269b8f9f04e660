use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{ActionDistribution, Interaction, InteractionSet, RunRecord, SetKind};
use crate::envs::EnvId;
use crate::error::{Error, Result};

/// Per-action frequency over every interaction in `set`.
pub fn empirical_action_distribution(set: &InteractionSet) -> Result<ActionDistribution> {
    if set.is_empty() {
        return Err(Error::contract("action distribution of an empty set"));
    }
    Ok(ActionDistribution::from_counts(&action_counts(
        set.action_count,
        set.interactions.iter(),
    )))
}

fn action_counts<'a>(actions: usize, it: impl Iterator<Item = &'a Interaction>) -> Vec<usize> {
    let mut counts = vec![0; actions];
    for i in it {
        counts[i.action] += 1;
    }
    counts
}

/// Fraction of runs that reached the goal, kept as exact counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WinRate {
    pub successes: usize,
    pub runs: usize,
}

impl WinRate {
    pub fn of(runs: &[RunRecord]) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::contract("win probability of zero runs"));
        }
        Ok(Self {
            successes: runs.iter().filter(|r| r.success).count(),
            runs: runs.len(),
        })
    }

    pub fn probability(&self) -> f64 {
        self.successes as f64 / self.runs as f64
    }

    /// `round(P(g|E) · total)`, halves rounded up, computed exactly.
    pub fn post_size(&self, total: usize) -> usize {
        let (s, e, n) = (self.successes as u128, self.runs as u128, total as u128);
        ((2 * s * n + e) / (2 * e)) as usize
    }

    /// Complement of [`WinRate::post_size`].
    pub fn pre_size(&self, total: usize) -> usize {
        total - self.post_size(total)
    }
}

pub fn win_probability(runs: &[RunRecord]) -> Result<f64> {
    Ok(WinRate::of(runs)?.probability())
}

/// Distribution of actions over successful post-demonstration runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PostDistribution {
    /// `Σ_e v_e · P(A|e) / |E|` before renormalization.
    pub raw: Vec<f64>,
    /// `raw` rescaled to sum to one, or all zeros when no run succeeded.
    pub normalized: ActionDistribution,
}

/// Average of per-run action distributions over successful runs, divided by
/// the total number of runs.
pub fn post_demo_distribution(set: &InteractionSet) -> Result<PostDistribution> {
    let win = WinRate::of(&set.runs)?;
    let k = set.action_count;
    // (counts, run length) per successful, non-empty run
    let per_run: Vec<(Vec<usize>, usize)> = set
        .runs
        .iter()
        .filter(|r| r.success && !r.indices.is_empty())
        .map(|r| {
            let counts = action_counts(k, r.indices.iter().map(|&i| &set.interactions[i]));
            (counts, r.indices.len())
        })
        .collect();
    if per_run.is_empty() {
        return Ok(PostDistribution {
            raw: vec![0.0; k],
            normalized: ActionDistribution::zeros(k),
        });
    }
    if let Some(exact) = exact_post(&per_run, k, win.runs) {
        return Ok(exact);
    }
    let mut raw = vec![0.0; k];
    for (counts, len) in &per_run {
        for a in 0..k {
            raw[a] += counts[a] as f64 / *len as f64;
        }
    }
    raw.iter_mut().for_each(|v| *v /= win.runs as f64);
    let total: f64 = raw.iter().sum();
    let normalized = ActionDistribution {
        probs: raw.iter().map(|v| v / total).collect(),
    };
    Ok(PostDistribution { raw, normalized })
}

/// Rational evaluation with a single final rounding; `None` on overflow.
fn exact_post(per_run: &[(Vec<usize>, usize)], k: usize, runs: usize) -> Option<PostDistribution> {
    let mut acc = vec![Ratio::ZERO; k];
    for (counts, len) in per_run {
        for a in 0..k {
            acc[a] = acc[a].add(Ratio::new(counts[a] as u128, *len as u128)?)?;
        }
    }
    let total = acc.iter().try_fold(Ratio::ZERO, |t, r| t.add(*r))?;
    let raw = acc
        .iter()
        .map(|r| r.div_int(runs as u128).map(Ratio::to_f64))
        .collect::<Option<Vec<_>>>()?;
    let probs = acc
        .iter()
        .map(|r| r.div(total).map(Ratio::to_f64))
        .collect::<Option<Vec<_>>>()?;
    Some(PostDistribution {
        raw,
        normalized: ActionDistribution { probs },
    })
}

#[derive(Debug, Clone, Copy)]
struct Ratio {
    num: u128,
    den: u128,
}

impl Ratio {
    const ZERO: Ratio = Ratio { num: 0, den: 1 };

    fn new(num: u128, den: u128) -> Option<Self> {
        if den == 0 {
            return None;
        }
        let g = gcd(num, den);
        Some(Self {
            num: num / g,
            den: den / g,
        })
    }

    fn add(self, o: Ratio) -> Option<Self> {
        let g = gcd(self.den, o.den);
        let den = (self.den / g).checked_mul(o.den)?;
        let num = self
            .num
            .checked_mul(o.den / g)?
            .checked_add(o.num.checked_mul(self.den / g)?)?;
        Self::new(num, den)
    }

    fn div_int(self, d: u128) -> Option<Self> {
        Self::new(self.num, self.den.checked_mul(d)?)
    }

    fn div(self, o: Ratio) -> Option<Self> {
        Self::new(self.num.checked_mul(o.den)?, self.den.checked_mul(o.num)?)
    }

    fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Splits `total` across actions in proportion to `weights` by the
/// largest-remainder method. Remainders within 1e-9 of each other count as
/// tied and go to the lower action id.
pub fn quotas(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let shares: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<usize> = shares.iter().map(|s| (s + 1e-9).floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&a| weights[a] > 0.0).collect();
    let rem = |a: usize| (shares[a] - out[a] as f64).max(0.0);
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem(a), rem(b));
        if (ra - rb).abs() <= 1e-9 {
            a.cmp(&b)
        } else {
            rb.total_cmp(&ra)
        }
    });
    let mut left = total.saturating_sub(assigned);
    for a in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        out[a] += 1;
        left -= 1;
    }
    out
}

/// Draws `quota[a]` interactions for each action `a` from `strata[a]`:
/// without replacement when the stratum is large enough, with replacement
/// otherwise.
fn draw_stratified<R: Rng + ?Sized>(
    source: &[Interaction],
    strata: &[Vec<usize>],
    quota: &[usize],
    rng: &mut R,
) -> Result<Vec<Interaction>> {
    let mut out = Vec::with_capacity(quota.iter().sum());
    for (a, (&q, stratum)) in quota.iter().zip(strata).enumerate() {
        if q == 0 {
            continue;
        }
        if stratum.is_empty() {
            return Err(Error::contract(format!(
                "quota of {q} for action {a} but no interactions carry it"
            )));
        }
        if stratum.len() >= q {
            for i in index::sample(rng, stratum.len(), q) {
                out.push(source[stratum[i]].clone());
            }
        } else {
            for _ in 0..q {
                out.push(source[stratum[rng.gen_range(0..stratum.len())]].clone());
            }
        }
    }
    Ok(out)
}

/// Post-demonstration sample: `round(P(g|E)·total)` interactions from
/// successful runs only, with action mix matching [`post_demo_distribution`].
pub fn sample_post<R: Rng + ?Sized>(
    pos: &InteractionSet,
    total: usize,
    rng: &mut R,
) -> Result<Vec<Interaction>> {
    let win = WinRate::of(&pos.runs)?;
    let n_pos = win.post_size(total);
    if n_pos == 0 || win.successes == 0 {
        return Ok(Vec::new());
    }
    let dist = post_demo_distribution(pos)?;
    let quota = quotas(n_pos, &dist.normalized.probs);
    let mut strata = vec![Vec::new(); pos.action_count];
    for run in pos.runs.iter().filter(|r| r.success) {
        for &i in &run.indices {
            strata[pos.interactions[i].action].push(i);
        }
    }
    draw_stratified(&pos.interactions, &strata, &quota, rng)
}

/// Pre-demonstration sample of the complementary size, with action mix
/// matching the pre-set's empirical distribution.
pub fn sample_pre<R: Rng + ?Sized>(
    pre: &InteractionSet,
    win: WinRate,
    total: usize,
    rng: &mut R,
) -> Result<Vec<Interaction>> {
    let n_pre = win.pre_size(total);
    if n_pre == 0 {
        return Ok(Vec::new());
    }
    let dist = empirical_action_distribution(pre)?;
    let quota = quotas(n_pre, &dist.probs);
    let mut strata = vec![Vec::new(); pre.action_count];
    for (i, it) in pre.interactions.iter().enumerate() {
        strata[it.action].push(i);
    }
    draw_stratified(&pre.interactions, &strata, &quota, rng)
}

/// Every post-demonstration interaction, failed runs included, plus the
/// pre-demonstration sample sized as in the partial scheme.
pub fn sample_whole<R: Rng + ?Sized>(
    pre: &InteractionSet,
    pos: &InteractionSet,
    total: usize,
    rng: &mut R,
) -> Result<(Vec<Interaction>, Vec<Interaction>)> {
    let win = WinRate::of(&pos.runs)?;
    let pre_sample = sample_pre(pre, win, total, rng)?;
    Ok((pre_sample, pos.interactions.clone()))
}

/// Concatenates both samples and shuffles them. Run ids of the post sample
/// are shifted past the pre sample's so runs from the two sources stay
/// distinct.
pub fn compose_training_set<R: Rng + ?Sized>(
    env: EnvId,
    pre_sample: Vec<Interaction>,
    pos_sample: Vec<Interaction>,
    rng: &mut R,
) -> InteractionSet {
    let offset = pre_sample.iter().map(|i| i.run_id + 1).max().unwrap_or(0);
    let mut all = pre_sample;
    all.extend(pos_sample.into_iter().map(|mut i| {
        i.run_id += offset;
        i
    }));
    all.shuffle(rng);
    let mut set = InteractionSet::new(env, SetKind::Composed);
    set.interactions = all;
    set.reindex_runs(&[]);
    set
}
