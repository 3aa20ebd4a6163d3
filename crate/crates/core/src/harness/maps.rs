//! Per-option grids over the gridworld: most likely action, its probability,
//! termination probability, and how often a trained agent picks the option.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::QTable;
use crate::error::{Error, Result};
use crate::gridworld::{GridWorld, ACTION_NAMES};
use crate::options::OptionSet;

pub const MAP_HEADER: &str = "x,y,wall,best_action,mu_max,beta,usage";

/// Greedy option choices of a collection of trained Q tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionUsage {
    pub tables: usize,
    /// Per state: tables in which the state was a decision point, i.e. has at
    /// least one updated entry.
    pub visited: Vec<usize>,
    /// `greedy[o][s]`: tables visiting `s` whose greedy choice there is `o`.
    pub greedy: Vec<Vec<usize>>,
}

impl OptionUsage {
    pub fn from_q_tables<'a>(tables: impl IntoIterator<Item = &'a QTable>, n_states: usize, n_options: usize, initial_q: f64) -> Result<Self> {
        let mut usage = Self {
            tables: 0,
            visited: vec![0; n_states],
            greedy: vec![vec![0; n_states]; n_options],
        };
        for q in tables {
            if q.n_states() != n_states || q.n_choices() != n_options {
                return Err(Error::DimensionMismatch {
                    expected: n_options,
                    found: q.n_choices(),
                });
            }
            usage.tables += 1;
            for s in 0..n_states {
                if q.row(s).iter().any(|&v| v != initial_q) {
                    usage.visited[s] += 1;
                    usage.greedy[q.greedy(s)][s] += 1;
                }
            }
        }
        Ok(usage)
    }

    /// Fraction of visiting tables that pick `o` at `s`; `None` if unvisited.
    pub fn fraction(&self, o: usize, s: usize) -> Option<f64> {
        (self.visited[s] > 0).then(|| self.greedy[o][s] as f64 / self.visited[s] as f64)
    }
}

/// CSV grid for option `id`, one row per cell in row-major order. Wall cells
/// leave every per-state column empty, as do unvisited cells for `usage`.
pub fn option_map_csv(world: &GridWorld, options: &OptionSet, id: usize, usage: Option<&OptionUsage>) -> Result<String> {
    if id >= options.len() || options.n_states() != world.n_states() {
        return Err(Error::InvalidConfig(format!("option {id} does not belong to this gridworld")));
    }
    let option = options.option(id);
    let mut out = String::from(MAP_HEADER);
    out.push('\n');
    for y in 0..world.height() {
        for x in 0..world.width() {
            let Some(s) = world.state_at(x, y) else {
                writeln!(out, "{x},{y},1,,,,").expect("writing to a String");
                continue;
            };
            let mu = option.forward_mu(s);
            let best = (1..mu.len()).fold(0, |b, a| if mu[a] > mu[b] { a } else { b });
            let used = usage
                .and_then(|u| u.fraction(id, s))
                .map(|f| f.to_string())
                .unwrap_or_default();
            writeln!(out, "{x},{y},0,{},{},{},{used}", ACTION_NAMES[best], mu[best], option.forward_beta(s)).expect("writing to a String");
        }
    }
    Ok(out)
}

/// Writes `option_<id>.csv` for every option (primitives included) into `dir`.
pub fn emit_option_maps(world: &GridWorld, options: &OptionSet, usage: Option<&OptionUsage>, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..options.len())
        .map(|id| {
            let path = dir.join(format!("option_{id}.csv"));
            std::fs::write(&path, option_map_csv(world, options, id, usage)?).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
