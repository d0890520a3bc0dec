//! Two-class datasets split into per-agent train/validation/test shards.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vector,
    /// Class index in `{0, 1}`.
    pub label: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AgentShard {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    p: usize,
    shards: Vec<AgentShard>,
}

impl Dataset {
    /// Shuffles, deals examples round-robin to `m` agents, then splits each
    /// agent's examples 40/40/20 into train/validation/test.
    pub fn partition(mut examples: Vec<Example>, p: usize, m: usize, s: &mut RngStream) -> Result<Self> {
        if m == 0 || p == 0 {
            return Err(Error::invalid("dataset: m and p must be >= 1"));
        }
        if let Some(e) = examples.iter().find(|e| e.features.dim() != p || e.label > 1) {
            return Err(Error::invalid(format!(
                "dataset: example with dimension {} and label {} (expected p = {p}, label in {{0, 1}})",
                e.features.dim(),
                e.label
            )));
        }
        s.shuffle(&mut examples);
        let mut per_agent = vec![Vec::new(); m];
        for (k, e) in examples.into_iter().enumerate() {
            per_agent[k % m].push(e);
        }
        let shards = per_agent.into_iter().map(split_40_40_20).collect::<Result<_>>()?;
        Ok(Dataset { p, shards })
    }

    pub fn from_shards(p: usize, shards: Vec<AgentShard>) -> Result<Self> {
        if p == 0 || shards.is_empty() {
            return Err(Error::invalid("dataset: p and the number of shards must be >= 1"));
        }
        let all = shards.iter().flat_map(|s| s.train.iter().chain(&s.val).chain(&s.test));
        for e in all {
            if e.features.dim() != p || e.label > 1 {
                return Err(Error::invalid("dataset: example dimension or label out of range"));
            }
        }
        Ok(Dataset { p, shards })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn num_agents(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, agent: usize) -> &AgentShard {
        &self.shards[agent]
    }

    pub fn shards(&self) -> &[AgentShard] {
        &self.shards
    }

    pub fn max_feature_norm(&self) -> f64 {
        self.shards
            .iter()
            .flat_map(|s| s.train.iter().chain(&s.val).chain(&s.test))
            .map(|e| e.features.norm())
            .fold(0.0, f64::max)
    }
}

fn split_40_40_20(mut xs: Vec<Example>) -> Result<AgentShard> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::invalid(format!("dataset: an agent holds {n} examples, need >= 2")));
    }
    let n_train = ((0.4 * n as f64).round() as usize).max(1);
    let n_val = ((0.4 * n as f64).round() as usize).clamp(1, n - n_train);
    let test = xs.split_off(n_train + n_val);
    let val = xs.split_off(n_train);
    Ok(AgentShard { train: xs, val, test })
}

/// Two Gaussian blobs: `a = (z ± (separation/2)·u) / √p` with `z ~ N(0, I)`,
/// `u` a random unit direction and balanced random labels. The Bayes error
/// is `Φ(−separation/2)`.
pub fn make_synthetic_dataset(
    m: usize,
    n_per_agent: usize,
    p: usize,
    separation: f64,
    s: &mut RngStream,
) -> Result<Dataset> {
    if n_per_agent < 2 || p == 0 || m == 0 {
        return Err(Error::invalid("synthetic dataset: need n_per_agent >= 2, p >= 1, m >= 1"));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::invalid(format!("synthetic dataset: bad separation {separation}")));
    }
    let mut u = s.gaussian(p, 1.0)?;
    u.scale(1.0 / u.norm());
    let scale = 1.0 / (p as f64).sqrt();
    let examples = (0..m * n_per_agent)
        .map(|_| {
            let label = usize::from(s.uniform() < 0.5);
            let sign = if label == 1 { 0.5 } else { -0.5 };
            let mut a = s.gaussian(p, 1.0)?;
            a.axpy(sign * separation, &u);
            a.scale(scale);
            Ok(Example { features: a, label })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::partition(examples, p, m, s)
}

/// Parses `label idx:val …` lines with 1-based feature indices. Labels
/// `-1`/`0` map to class 0 and `+1`/`1` to class 1. With `p = None` the
/// dimension is the largest index seen.
pub fn parse_libsvm(text: &str, p: Option<usize>) -> Result<(Vec<Example>, usize)> {
    let mut rows: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
    let mut max_idx = 0;
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: line_no, message };
        let mut toks = line.split_whitespace();
        let label_tok = toks.next().unwrap_or_default();
        let label = match label_tok.parse::<f64>() {
            Ok(1.0) => 1,
            Ok(v) if v == -1.0 || v == 0.0 => 0,
            _ => return Err(err(format!("bad label {label_tok:?}"))),
        };
        let mut entries = Vec::new();
        for tok in toks {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected idx:val, got {tok:?}")))?;
            let i: usize = i.parse().map_err(|_| err(format!("bad feature index in {tok:?}")))?;
            let v: f64 = v.parse().map_err(|_| err(format!("bad feature value in {tok:?}")))?;
            if i == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            if let Some(p) = p {
                if i > p {
                    return Err(err(format!("feature index {i} exceeds p = {p}")));
                }
            }
            max_idx = max_idx.max(i);
            entries.push((i - 1, v));
        }
        rows.push((label, entries));
    }
    let p = p.unwrap_or(max_idx).max(1);
    let examples = rows
        .into_iter()
        .map(|(label, entries)| {
            let mut features = Vector::zeros(p);
            for (i, v) in entries {
                features[i] = v;
            }
            Example { features, label }
        })
        .collect();
    Ok((examples, p))
}

pub fn load_libsvm(path: &Path, p: Option<usize>, m: usize, s: &mut RngStream) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let (examples, p) = parse_libsvm(&text, p)?;
    Dataset::partition(examples, p, m, s)
}
