//! Options `(mu, beta)` and the policy over options.
//!
//! Option ids are stable: ids `0..n_actions` are the primitive options, in
//! action order, followed by learned options in the order they were added.
//! Every option can be initiated in every state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::mdp::NORMALIZATION_TOL;
use crate::network::{Activations, Architecture, DiffParams, Init};

/// Entries of the second KL argument are floored at this value.
pub const KL_FLOOR: f64 = 1e-12;

pub const OPTION_SET_FORMAT: &str = "optlearn.option_set";
pub const OPTION_SET_VERSION: u32 = 1;

/// One-hot encoding of a state id.
pub fn encode_state(s: usize, n_states: usize) -> Vec<f64> {
    let mut x = vec![0.0; n_states];
    x[s] = 1.0;
    x
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let shift = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - shift).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `sum_i p_i ln(p_i / max(q_i, KL_FLOOR))`, skipping `p_i = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.max(KL_FLOOR).ln()))
        .sum())
}

/// A learned option: a shared trunk with a softmax action head (`mu`) and a
/// sigmoid termination head (`beta`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedOption {
    pub params: DiffParams,
}

impl LearnedOption {
    pub fn new<R: Rng + ?Sized>(n_states: usize, n_actions: usize, hidden: usize, init: Init, rng: &mut R) -> Self {
        let arch = Architecture::two_layer(n_states, hidden, vec![n_actions, 1]);
        Self {
            params: DiffParams::init(arch, init, rng),
        }
    }

    pub fn n_states(&self) -> usize {
        self.params.architecture.input
    }

    pub fn n_actions(&self) -> usize {
        self.params.architecture.heads[0]
    }

    /// Forward pass at `s`: heads are `[mu logits, [beta logit]]`.
    pub fn activations(&self, s: usize) -> Activations {
        self.params.forward(&encode_state(s, self.n_states()))
    }

    pub fn mu(&self, s: usize) -> Vec<f64> {
        softmax(&self.activations(s).heads[0])
    }

    pub fn beta(&self, s: usize) -> f64 {
        sigmoid(self.activations(s).heads[1][0])
    }

    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let heads = &self.params.architecture.heads;
        if heads.len() != 2 || heads[1] != 1 {
            return Err(Error::InvalidConfig(format!("learned option heads {heads:?}, expected [n_actions, 1]")));
        }
        Ok(())
    }
}

/// Borrowed view of a single option.
#[derive(Debug, Clone, Copy)]
pub enum OptionModel<'a> {
    Primitive { action: usize, n_actions: usize },
    Learned(&'a LearnedOption),
}

impl OptionModel<'_> {
    pub fn is_primitive(&self) -> bool {
        matches!(self, OptionModel::Primitive { .. })
    }

    pub fn forward_mu(&self, s: usize) -> Vec<f64> {
        match self {
            OptionModel::Primitive { action, n_actions } => {
                let mut p = vec![0.0; *n_actions];
                p[*action] = 1.0;
                p
            }
            OptionModel::Learned(o) => o.mu(s),
        }
    }

    pub fn forward_beta(&self, s: usize) -> f64 {
        match self {
            OptionModel::Primitive { .. } => 1.0,
            OptionModel::Learned(o) => o.beta(s),
        }
    }
}

/// Primitive options for every action plus learned options.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionSet {
    n_states: usize,
    n_actions: usize,
    learned: Vec<LearnedOption>,
}

impl OptionSet {
    /// Primitive options only.
    pub fn primitives(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            learned: Vec::new(),
        }
    }

    pub fn with_learned(n_states: usize, n_actions: usize, learned: Vec<LearnedOption>) -> Result<Self> {
        let mut set = Self::primitives(n_states, n_actions);
        for o in learned {
            set.push(o)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, option: LearnedOption) -> Result<()> {
        option.validate()?;
        if option.n_states() != self.n_states || option.n_actions() != self.n_actions {
            return Err(Error::DimensionMismatch {
                expected: self.n_states * self.n_actions,
                found: option.n_states() * option.n_actions(),
            });
        }
        self.learned.push(option);
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Total number of options, primitives included.
    pub fn len(&self) -> usize {
        self.n_actions + self.learned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_learned(&self) -> usize {
        self.learned.len()
    }

    pub fn learned(&self) -> &[LearnedOption] {
        &self.learned
    }

    pub fn learned_mut(&mut self) -> &mut [LearnedOption] {
        &mut self.learned
    }

    pub fn option(&self, id: usize) -> OptionModel<'_> {
        if id < self.n_actions {
            OptionModel::Primitive {
                action: id,
                n_actions: self.n_actions,
            }
        } else {
            OptionModel::Learned(&self.learned[id - self.n_actions])
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = OptionModel<'_>> {
        (0..self.len()).map(|id| self.option(id))
    }

    pub fn to_document(&self) -> OptionSetDocument {
        OptionSetDocument {
            format: OPTION_SET_FORMAT.to_string(),
            version: OPTION_SET_VERSION,
            n_states: self.n_states,
            n_actions: self.n_actions,
            primitives: (0..self.n_actions).collect(),
            learned: self
                .learned
                .iter()
                .enumerate()
                .map(|(i, o)| LearnedEntry {
                    id: self.n_actions + i,
                    params: o.params.clone(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: OptionSetDocument) -> Result<Self> {
        if doc.format != OPTION_SET_FORMAT || doc.version != OPTION_SET_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported option set document {} v{}",
                doc.format, doc.version
            )));
        }
        if doc.primitives != (0..doc.n_actions).collect::<Vec<_>>() {
            return Err(Error::InvalidConfig("primitive ids must be 0..n_actions".into()));
        }
        let mut set = Self::primitives(doc.n_states, doc.n_actions);
        for (i, entry) in doc.learned.into_iter().enumerate() {
            if entry.id != doc.n_actions + i {
                return Err(Error::InvalidConfig(format!("learned option id {} out of order", entry.id)));
            }
            set.push(LearnedOption { params: entry.params })?;
        }
        Ok(set)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

/// Versioned on-disk form of an [`OptionSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionSetDocument {
    pub format: String,
    pub version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    pub primitives: Vec<usize>,
    pub learned: Vec<LearnedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedEntry {
    pub id: usize,
    pub params: DiffParams,
}

/// Softmax policy over a fixed number of options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOverOptions {
    pub params: DiffParams,
}

impl PolicyOverOptions {
    pub fn new<R: Rng + ?Sized>(n_states: usize, n_options: usize, hidden: usize, init: Init, rng: &mut R) -> Self {
        let arch = Architecture::two_layer(n_states, hidden, vec![n_options]);
        Self {
            params: DiffParams::init(arch, init, rng),
        }
    }

    pub fn n_states(&self) -> usize {
        self.params.architecture.input
    }

    pub fn n_options(&self) -> usize {
        self.params.architecture.heads[0]
    }

    pub fn activations(&self, s: usize) -> Activations {
        self.params.forward(&encode_state(s, self.n_states()))
    }

    pub fn forward_pi(&self, s: usize) -> Vec<f64> {
        softmax(&self.activations(s).heads[0])
    }
}

/// `mu` and `beta` of every option tabulated over every state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionTable {
    n_options: usize,
    n_states: usize,
    n_actions: usize,
    mu: Vec<f64>,
    beta: Vec<f64>,
}

/// Hand-specified learned option: `mu[s]` is a distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularOption {
    pub mu: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
}

impl OptionTable {
    pub fn from_options(options: &OptionSet) -> Self {
        let learned = options
            .learned()
            .iter()
            .map(|o| {
                let (mu, beta) = (0..options.n_states())
                    .map(|s| {
                        let acts = o.activations(s);
                        (softmax(&acts.heads[0]), sigmoid(acts.heads[1][0]))
                    })
                    .unzip();
                TabularOption { mu, beta }
            })
            .collect::<Vec<_>>();
        Self::build(options.n_states(), options.n_actions(), &learned)
    }

    /// Primitives followed by the given tabular options, after validation.
    pub fn new(n_states: usize, n_actions: usize, learned: &[TabularOption]) -> Result<Self> {
        for (k, o) in learned.iter().enumerate() {
            if o.mu.len() != n_states || o.beta.len() != n_states {
                return Err(Error::DimensionMismatch {
                    expected: n_states,
                    found: o.mu.len().min(o.beta.len()),
                });
            }
            for row in &o.mu {
                if row.len() != n_actions {
                    return Err(Error::DimensionMismatch {
                        expected: n_actions,
                        found: row.len(),
                    });
                }
                check_simplex(row, &format!("mu of learned option {k}"))?;
            }
            if o.beta.iter().any(|b| !(0.0..=1.0).contains(b)) {
                return Err(Error::InvalidConfig(format!("beta of learned option {k} outside [0, 1]")));
            }
        }
        Ok(Self::build(n_states, n_actions, learned))
    }

    fn build(n_states: usize, n_actions: usize, learned: &[TabularOption]) -> Self {
        let n_options = n_actions + learned.len();
        let mut mu = vec![0.0; n_options * n_states * n_actions];
        let mut beta = vec![1.0; n_options * n_states];
        for a in 0..n_actions {
            for s in 0..n_states {
                mu[(a * n_states + s) * n_actions + a] = 1.0;
            }
        }
        for (k, o) in learned.iter().enumerate() {
            let id = n_actions + k;
            for s in 0..n_states {
                let base = (id * n_states + s) * n_actions;
                mu[base..base + n_actions].copy_from_slice(&o.mu[s]);
                beta[id * n_states + s] = o.beta[s];
            }
        }
        Self {
            n_options,
            n_states,
            n_actions,
            mu,
            beta,
        }
    }

    pub fn n_options(&self) -> usize {
        self.n_options
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn is_primitive(&self, o: usize) -> bool {
        o < self.n_actions
    }

    pub fn mu_row(&self, o: usize, s: usize) -> &[f64] {
        let base = (o * self.n_states + s) * self.n_actions;
        &self.mu[base..base + self.n_actions]
    }

    pub fn mu(&self, o: usize, s: usize, a: usize) -> f64 {
        self.mu[(o * self.n_states + s) * self.n_actions + a]
    }

    pub fn beta(&self, o: usize, s: usize) -> f64 {
        self.beta[o * self.n_states + s]
    }
}

/// `pi(s, .)` tabulated over every state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_options: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn from_policy(policy: &PolicyOverOptions) -> Self {
        let n_states = policy.n_states();
        let n_options = policy.n_options();
        let probs = (0..n_states).flat_map(|s| policy.forward_pi(s)).collect();
        Self {
            n_states,
            n_options,
            probs,
        }
    }

    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_options = rows.first().map_or(0, Vec::len);
        for row in &rows {
            if row.len() != n_options {
                return Err(Error::DimensionMismatch {
                    expected: n_options,
                    found: row.len(),
                });
            }
            check_simplex(row, "policy over options")?;
        }
        Ok(Self {
            n_states,
            n_options,
            probs: rows.concat(),
        })
    }

    pub fn uniform(n_states: usize, n_options: usize) -> Self {
        Self {
            n_states,
            n_options,
            probs: vec![1.0 / n_options as f64; n_states * n_options],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_options(&self) -> usize {
        self.n_options
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_options..(s + 1) * self.n_options]
    }

    pub fn prob(&self, s: usize, o: usize) -> f64 {
        self.probs[s * self.n_options + o]
    }
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidConfig(format!("{what} is not a distribution (sum {total})")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn one_hot_encoding() {
        assert_eq!(encode_state(0, 4), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(encode_state(3, 4), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn primitive_options_are_point_masses_that_always_terminate() {
        let set = OptionSet::primitives(5, 4);
        let up = set.option(0);
        assert_eq!(up.forward_mu(3), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(up.forward_beta(3), 1.0);
        assert!(up.is_primitive());
    }

    #[test]
    fn fresh_learned_option_is_uniform_with_even_termination() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = LearnedOption::new(6, 4, 32, Init::default(), &mut rng);
        assert_eq!(o.mu(2), vec![0.25; 4]);
        assert_eq!(o.beta(2), 0.5);
    }

    #[test]
    fn fresh_policy_is_uniform_and_deterministic() {
        let p = PolicyOverOptions::new(5, 6, 32, Init::default(), &mut ChaCha8Rng::seed_from_u64(1));
        for x in p.forward_pi(4) {
            assert!((x - 1.0 / 6.0).abs() < 1e-15);
        }
        let q = PolicyOverOptions::new(5, 6, 32, Init::Gaussian { std: 0.5 }, &mut ChaCha8Rng::seed_from_u64(1));
        let r = PolicyOverOptions::new(5, 6, 32, Init::Gaussian { std: 0.5 }, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(q.forward_pi(2), r.forward_pi(2));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn kl_floors_zero_entries_of_q() {
        let v = kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        let expected = 0.5 * (0.5f64).ln() + 0.5 * (0.5f64.ln() - KL_FLOOR.ln());
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn document_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let learned = vec![
            LearnedOption::new(7, 2, 8, Init::Gaussian { std: 0.9 }, &mut rng),
            LearnedOption::new(7, 2, 8, Init::Gaussian { std: 0.9 }, &mut rng),
        ];
        let set = OptionSet::with_learned(7, 2, learned).unwrap();
        let back = OptionSet::from_json(&set.to_json().unwrap()).unwrap();
        assert_eq!(back, set);
        let doc = set.to_document();
        assert_eq!(doc.learned[1].id, 3);
    }

    #[test]
    fn mismatched_learned_option_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut set = OptionSet::primitives(7, 2);
        assert!(set.push(LearnedOption::new(6, 2, 4, Init::default(), &mut rng)).is_err());
    }

    #[test]
    fn table_matches_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let o = LearnedOption::new(4, 3, 6, Init::Gaussian { std: 1.0 }, &mut rng);
        let set = OptionSet::with_learned(4, 3, vec![o.clone()]).unwrap();
        let table = OptionTable::from_options(&set);
        assert_eq!(table.n_options(), 4);
        for s in 0..4 {
            assert_eq!(table.mu_row(3, s), o.mu(s).as_slice());
            assert_eq!(table.beta(3, s), o.beta(s));
            assert_eq!(table.mu_row(1, s), &[0.0, 1.0, 0.0]);
            assert_eq!(table.beta(1, s), 1.0);
        }
    }

    #[test]
    fn table_validation() {
        let bad = TabularOption {
            mu: vec![vec![0.5, 0.6]],
            beta: vec![0.5],
        };
        assert!(OptionTable::new(1, 2, &[bad]).is_err());
        assert!(PolicyTable::new(vec![vec![0.2, 0.2]]).is_err());
    }
}
