//! Offline transition datasets: the in-memory model, CSV persistence and
//! subsampling.
//!
//! A dataset row is one environment transition `(s, a, r, s', gamma)`. The
//! per-transition discount unifies episodic and continuing tasks: terminal
//! transitions carry `gamma = 0`, all others the task discount.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One observed transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub discount: f64,
}

/// An immutable batch of transitions with declared dimensions.
///
/// `gamma_c` is the observed discount ceiling `max_i gamma_i`; it is stored
/// per dataset because both the substochasticity check and the value-bias
/// bound need it.
#[derive(Debug, Clone)]
pub struct Dataset {
    transitions: Vec<Transition>,
    d_s: usize,
    d_a: usize,
    gamma_c: f64,
}

impl Dataset {
    /// Builds a dataset, validating dimensions and the discount range.
    pub fn new(transitions: Vec<Transition>, d_s: usize, d_a: usize) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::domain("dataset must contain at least one transition"));
        }
        let mut gamma_c: f64 = 0.0;
        for (i, t) in transitions.iter().enumerate() {
            if t.state.len() != d_s || t.next_state.len() != d_s {
                return Err(Error::Dimension {
                    expected: d_s,
                    got: t.state.len().max(t.next_state.len()),
                    context: "transition state length",
                });
            }
            if t.action.len() != d_a {
                return Err(Error::Dimension {
                    expected: d_a,
                    got: t.action.len(),
                    context: "transition action length",
                });
            }
            if !t.discount.is_finite() || t.discount < 0.0 || t.discount >= 1.0 {
                return Err(Error::domain(format!(
                    "transition {i}: discount {} outside [0, 1)",
                    t.discount
                )));
            }
            if !t.reward.is_finite() {
                return Err(Error::domain(format!("transition {i}: non-finite reward")));
            }
            gamma_c = gamma_c.max(t.discount);
        }
        Ok(Dataset {
            transitions,
            d_s,
            d_a,
            gamma_c,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn d_a(&self) -> usize {
        self.d_a
    }

    /// Observed discount ceiling, strictly below 1.
    pub fn gamma_c(&self) -> f64 {
        self.gamma_c
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    pub fn discounts(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.discount).collect()
    }

    /// Largest absolute reward, the `R_max` of the value bound.
    pub fn reward_max_abs(&self) -> f64 {
        self.transitions
            .iter()
            .map(|t| t.reward.abs())
            .fold(0.0, f64::max)
    }

    /// Column `dim` of the state block, one entry per transition.
    pub fn state_column(&self, dim: usize) -> Vec<f64> {
        self.transitions.iter().map(|t| t.state[dim]).collect()
    }

    pub fn action_column(&self, dim: usize) -> Vec<f64> {
        self.transitions.iter().map(|t| t.action[dim]).collect()
    }

    pub fn next_state_column(&self, dim: usize) -> Vec<f64> {
        self.transitions.iter().map(|t| t.next_state[dim]).collect()
    }

    /// Uniform random subset of size `n` without replacement,
    /// deterministic per seed. `gamma_c` is recomputed on the subset.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n < 1 || n > self.len() {
            return Err(Error::domain(format!(
                "subsample size {n} outside 1..={}",
                self.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = rand::seq::index::sample(&mut rng, self.len(), n);
        let transitions: Vec<Transition> =
            idx.iter().map(|i| self.transitions[i].clone()).collect();
        Dataset::new(transitions, self.d_s, self.d_a)
    }
}

fn expected_header(d_s: usize, d_a: usize) -> String {
    let mut cols = Vec::with_capacity(2 * d_s + d_a + 2);
    for i in 0..d_s {
        cols.push(format!("s{i}"));
    }
    for i in 0..d_a {
        cols.push(format!("a{i}"));
    }
    cols.push("r".to_string());
    for i in 0..d_s {
        cols.push(format!("sn{i}"));
    }
    cols.push("gamma".to_string());
    cols.join(",")
}

/// Loads a transition dataset from CSV.
///
/// Expected layout: header `s0..s{d_s-1},a0..a{d_a-1},r,sn0..sn{d_s-1},gamma`,
/// one numeric row per transition. Lines starting with `#` are skipped.
pub fn load_dataset(path: &Path, d_s: usize, d_a: usize) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let n_cols = 2 * d_s + d_a + 2;
    let mut transitions = Vec::new();
    let mut saw_header = false;
    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !saw_header {
            // The first data-bearing line must be the header.
            if trimmed != expected_header(d_s, d_a) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!(
                        "header `{trimmed}` does not match `{}`",
                        expected_header(d_s, d_a)
                    ),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != n_cols {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected {n_cols} columns, found {}", fields.len()),
            });
        }
        let mut values = Vec::with_capacity(n_cols);
        for f in &fields {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("non-numeric field `{f}`"),
            })?;
            values.push(v);
        }
        let state = values[0..d_s].to_vec();
        let action = values[d_s..d_s + d_a].to_vec();
        let reward = values[d_s + d_a];
        let next_state = values[d_s + d_a + 1..d_s + d_a + 1 + d_s].to_vec();
        let discount = values[n_cols - 1];
        if discount >= 1.0 {
            return Err(Error::domain(format!(
                "{}:{line_no}: discount {discount} >= 1",
                path.display()
            )));
        }
        transitions.push(Transition {
            state,
            action,
            reward,
            next_state,
            discount,
        });
    }
    Dataset::new(transitions, d_s, d_a)
}

/// Writes a dataset as CSV in the `load_dataset` layout.
///
/// Floats are printed with the shortest representation that round-trips
/// exactly, so `load(save(d)) == d` bit for bit.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    writeln!(w, "{}", expected_header(dataset.d_s, dataset.d_a)).map_err(io_err)?;
    for t in &dataset.transitions {
        let mut fields: Vec<String> = Vec::with_capacity(2 * dataset.d_s + dataset.d_a + 2);
        fields.extend(t.state.iter().map(|v| v.to_string()));
        fields.extend(t.action.iter().map(|v| v.to_string()));
        fields.push(t.reward.to_string());
        fields.extend(t.next_state.iter().map(|v| v.to_string()));
        fields.push(t.discount.to_string());
        writeln!(w, "{}", fields.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}
