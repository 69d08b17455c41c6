//! Character-level noising used for robustness probes.
//!
//! All strategies act on Unicode scalar values, never raw bytes, and are pure
//! functions of `(text, spec)`.

use rand::seq::index::sample;
use rand::Rng as _;

use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseStrategy {
    /// Uppercase every character and separate them with single spaces.
    AntSpeak,
    /// Remove `floor(rate * n)` characters.
    Drop,
    /// Each cased character becomes uppercase with probability `rate`, else lowercase.
    RandomCase,
    /// Repeat `floor(rate * n)` characters 1 to 3 extra times each.
    Repeat,
    UpperCase,
}

impl NoiseStrategy {
    pub fn default_rate(self) -> f64 {
        match self {
            NoiseStrategy::Drop => 0.10,
            NoiseStrategy::RandomCase => 0.50,
            NoiseStrategy::Repeat => 0.20,
            NoiseStrategy::AntSpeak | NoiseStrategy::UpperCase => 1.0,
        }
    }
}

impl std::str::FromStr for NoiseStrategy {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Ok(match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "antspeak" => NoiseStrategy::AntSpeak,
            "drop" => NoiseStrategy::Drop,
            "randomcase" => NoiseStrategy::RandomCase,
            "repeat" => NoiseStrategy::Repeat,
            "uppercase" => NoiseStrategy::UpperCase,
            _ => return Err(crate::Error::Config(format!("unknown noise strategy '{s}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseTarget {
    Prompt,
    Completion,
    Both,
}

impl std::str::FromStr for NoiseTarget {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "prompt" => Ok(NoiseTarget::Prompt),
            "completion" => Ok(NoiseTarget::Completion),
            "both" => Ok(NoiseTarget::Both),
            _ => Err(crate::Error::Config(format!("unknown noise target '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    pub strategy: NoiseStrategy,
    pub rate: f64,
    pub seed: u64,
    pub target: NoiseTarget,
}

impl NoiseSpec {
    pub fn new(strategy: NoiseStrategy, seed: u64) -> Self {
        NoiseSpec {
            strategy,
            rate: strategy.default_rate(),
            seed,
            target: NoiseTarget::Both,
        }
    }

    pub fn with_rate(mut self, rate: f64) -> Self {
        self.rate = rate;
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        if (0.0..=1.0).contains(&self.rate) {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("noise rate {} outside [0, 1]", self.rate)))
        }
    }
}

pub fn apply_noise(text: &str, spec: &NoiseSpec) -> String {
    apply_with_stream(text, spec, 0)
}

/// Noise a prompt/completion pair according to `spec.target`.
pub fn apply_noise_pair(prompt: &str, completion: &str, spec: &NoiseSpec) -> (String, String) {
    let p = match spec.target {
        NoiseTarget::Prompt | NoiseTarget::Both => apply_with_stream(prompt, spec, 1),
        NoiseTarget::Completion => prompt.to_string(),
    };
    let c = match spec.target {
        NoiseTarget::Completion | NoiseTarget::Both => apply_with_stream(completion, spec, 2),
        NoiseTarget::Prompt => completion.to_string(),
    };
    (p, c)
}

fn apply_with_stream(text: &str, spec: &NoiseSpec, stream: u64) -> String {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut rng = rng::stream(spec.seed, stream);
    match spec.strategy {
        NoiseStrategy::UpperCase => text.to_uppercase(),
        NoiseStrategy::AntSpeak => {
            let mut out = String::with_capacity(2 * n);
            for c in chars.into_iter().filter(|c| !c.is_whitespace()) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push(single_upper(c));
            }
            out
        }
        NoiseStrategy::Drop => {
            let k = count_for(spec.rate, n);
            let mut keep = vec![true; n];
            for i in sample(&mut rng, n, k).iter() {
                keep[i] = false;
            }
            chars
                .into_iter()
                .zip(keep)
                .filter_map(|(c, k)| k.then_some(c))
                .collect()
        }
        NoiseStrategy::Repeat => {
            let k = count_for(spec.rate, n);
            let mut extra = vec![0usize; n];
            let mut picked: Vec<usize> = sample(&mut rng, n, k).into_vec();
            picked.sort_unstable();
            for i in picked {
                extra[i] = rng.random_range(1..=3);
            }
            let mut out = String::with_capacity(text.len() + 3 * k);
            for (c, e) in chars.into_iter().zip(extra) {
                for _ in 0..=e {
                    out.push(c);
                }
            }
            out
        }
        NoiseStrategy::RandomCase => {
            let mut out = String::with_capacity(text.len());
            for c in chars {
                if c.is_lowercase() || c.is_uppercase() {
                    if rng.random_bool(spec.rate) {
                        out.extend(c.to_uppercase());
                    } else {
                        out.extend(c.to_lowercase());
                    }
                } else {
                    out.push(c);
                }
            }
            out
        }
    }
}

fn count_for(rate: f64, n: usize) -> usize {
    ((rate * n as f64).floor() as usize).min(n)
}

/// Uppercase that keeps one output character per input character; characters whose
/// uppercase form expands (e.g. `ß`) are left as they are.
fn single_upper(c: char) -> char {
    let mut up = c.to_uppercase();
    match (up.next(), up.next()) {
        (Some(u), None) => u,
        _ => c,
    }
}
