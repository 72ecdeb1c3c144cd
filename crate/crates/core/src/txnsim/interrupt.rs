use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// When asynchronous events abort a running transaction body.
#[derive(Debug, Clone, PartialEq)]
pub enum InterruptModel {
    None,
    /// Fires once, at the first body access, of each listed attempt.
    /// Attempts are numbered from 1 across every transaction run under the
    /// same [`Interrupts`] instance.
    FixedSchedule(Vec<u64>),
    /// Fires before each body access independently with `probability`.
    PerAccess {
        probability: f64,
        seed: u64,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid interrupt model {0:?} (expected none, fixed:A,B,.. or prob:P[:SEED])")]
pub struct ParseInterruptError(pub String);

impl FromStr for InterruptModel {
    type Err = ParseInterruptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseInterruptError(s.to_string());
        let s = s.trim();
        if s == "none" {
            return Ok(InterruptModel::None);
        }
        if let Some(list) = s.strip_prefix("fixed:") {
            let attempts = list
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().parse::<u64>().map_err(|_| err()))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(InterruptModel::FixedSchedule(attempts));
        }
        if let Some(rest) = s.strip_prefix("prob:") {
            let (p, seed) = match rest.split_once(':') {
                Some((p, seed)) => (p, seed.parse::<u64>().map_err(|_| err())?),
                None => (rest, 0),
            };
            let probability: f64 = p.parse().map_err(|_| err())?;
            if !(0.0..=1.0).contains(&probability) {
                return Err(err());
            }
            return Ok(InterruptModel::PerAccess { probability, seed });
        }
        Err(err())
    }
}

impl fmt::Display for InterruptModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterruptModel::None => f.write_str("none"),
            InterruptModel::FixedSchedule(a) => {
                let list: Vec<String> = a.iter().map(u64::to_string).collect();
                write!(f, "fixed:{}", list.join(","))
            }
            InterruptModel::PerAccess { probability, seed } => {
                write!(f, "prob:{probability}:{seed}")
            }
        }
    }
}

/// Running state of an interrupt model.
#[derive(Debug, Clone)]
pub struct Interrupts {
    model: InterruptModel,
    rng: Option<ChaCha8Rng>,
    attempt: u64,
    fired_this_attempt: bool,
    checks: u64,
    fired: u64,
}

impl Default for Interrupts {
    fn default() -> Self {
        Self::new(InterruptModel::None)
    }
}

impl Interrupts {
    pub fn new(model: InterruptModel) -> Self {
        let rng = match &model {
            InterruptModel::PerAccess { seed, .. } => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        Self {
            model,
            rng,
            attempt: 0,
            fired_this_attempt: false,
            checks: 0,
            fired: 0,
        }
    }

    /// Replaces the model and resets all counters.
    pub fn inject(&mut self, model: InterruptModel) {
        *self = Self::new(model);
    }

    pub fn model(&self) -> &InterruptModel {
        &self.model
    }

    pub(crate) fn begin_attempt(&mut self) {
        self.attempt += 1;
        self.fired_this_attempt = false;
    }

    /// Consulted before every body access; `true` means an interrupt arrives.
    pub(crate) fn check(&mut self) -> bool {
        self.checks += 1;
        let fire = match &self.model {
            InterruptModel::None => false,
            InterruptModel::FixedSchedule(attempts) => {
                !self.fired_this_attempt && attempts.contains(&self.attempt)
            }
            InterruptModel::PerAccess { probability, .. } => {
                let p = *probability;
                self.rng.as_mut().expect("rng").gen_bool(p)
            }
        };
        if fire {
            self.fired_this_attempt = true;
            self.fired += 1;
        }
        fire
    }

    /// Total body-access consultations so far.
    pub fn checks(&self) -> u64 {
        self.checks
    }

    pub fn fired(&self) -> u64 {
        self.fired
    }

    pub fn attempts_seen(&self) -> u64 {
        self.attempt
    }
}
