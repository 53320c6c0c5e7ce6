//! Flat `key = value` run configuration.
//!
//! Values are resolved in order: built-in defaults, config file, environment
//! variables (`FEWSHOT_<KEY>` with the key upper-cased), then explicit
//! overrides such as command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::SplitRatio;
use crate::optim::ScheduleConfig;
use crate::task::TaskShape;
use crate::transform::{Activation, TransformConfig};

pub const ENV_PREFIX: &str = "FEWSHOT_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructOptimizer {
    Adam,
    Sgd,
}

impl FromStr for StructOptimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(StructOptimizer::Adam),
            "sgd" => Ok(StructOptimizer::Sgd),
            other => Err(Error::Config(format!("unknown structural optimizer {other:?}"))),
        }
    }
}

impl std::fmt::Display for StructOptimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StructOptimizer::Adam => "adam",
            StructOptimizer::Sgd => "sgd",
        })
    }
}

/// Every tunable of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    pub n_neg: usize,
    pub noise_exponent: f64,
    pub n1: usize,
    pub n2: usize,
    pub lr_struct: f64,
    pub lr_meta: f64,
    pub lambda: f64,
    pub struct_optimizer: StructOptimizer,
    pub k_support_pos: usize,
    pub k_support_neg: usize,
    pub k_query_pos: usize,
    pub k_query_neg: usize,
    pub total_steps: u64,
    pub gamma: f64,
    pub decay_period: u64,
    pub d_prime: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub blocks: usize,
    pub p_drop: f64,
    pub ln_epsilon: f64,
    pub activation: Activation,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    /// Validation period in steps; 0 means every `decay_period` steps.
    pub eval_every: u64,
    pub val_tasks: usize,
    pub threshold: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 128,
            n_neg: 5,
            noise_exponent: 0.75,
            n1: 512,
            n2: 64,
            lr_struct: 0.001,
            lr_meta: 0.001,
            lambda: 0.01,
            struct_optimizer: StructOptimizer::Adam,
            k_support_pos: 10,
            k_support_neg: 20,
            k_query_pos: 10,
            k_query_neg: 20,
            total_steps: 50_000,
            gamma: 0.1,
            decay_period: 1000,
            d_prime: 128,
            heads: 2,
            d_ff: 256,
            blocks: 1,
            p_drop: 0.1,
            ln_epsilon: 1e-5,
            activation: Activation::Relu,
            split_train: 0.6,
            split_val: 0.2,
            split_test: 0.2,
            eval_every: 0,
            val_tasks: 200,
            threshold: 0.5,
            seed: 0,
            threads: 1,
        }
    }
}

macro_rules! config_keys {
    ($($key:ident),* $(,)?) => {
        /// Every recognised key, in file order.
        pub const KEYS: &[&str] = &[$(stringify!($key)),*];

        impl RunConfig {
            /// Sets one field from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key.trim() {
                    $(stringify!($key) => {
                        self.$key = value.parse().map_err(|_| {
                            Error::Config(format!("invalid value {value:?} for {}", stringify!($key)))
                        })?;
                    })*
                    other => return Err(Error::Config(format!("unknown config key {other:?}"))),
                }
                Ok(())
            }

            /// Canonical `key = value` text, one line per key.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(let _ = writeln!(out, "{} = {}", stringify!($key), self.$key);)*
                out
            }
        }
    };
}

config_keys!(
    d, n_neg, noise_exponent, n1, n2, lr_struct, lr_meta, lambda, struct_optimizer,
    k_support_pos, k_support_neg, k_query_pos, k_query_neg, total_steps, gamma,
    decay_period, d_prime, heads, d_ff, blocks, p_drop, ln_epsilon, activation,
    split_train, split_val, split_test, eval_every, val_tasks, threshold, seed, threads,
);

impl RunConfig {
    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text<R: BufRead>(&mut self, source: R) -> Result<()> {
        for (i, line) in source.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let text = line.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let (k, v) = text.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got {text:?}"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Applies `FEWSHOT_<KEY>` variables from `vars`.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let wanted: BTreeMap<String, &str> = KEYS
            .iter()
            .map(|k| (format!("{ENV_PREFIX}{}", k.to_uppercase()), *k))
            .collect();
        for (name, value) in vars {
            if let Some(key) = wanted.get(&name) {
                self.set(key, &value)?;
            }
        }
        Ok(())
    }

    pub fn transform(&self) -> TransformConfig {
        TransformConfig {
            d: self.d,
            d_prime: self.d_prime,
            heads: self.heads,
            d_ff: self.d_ff,
            blocks: self.blocks,
            p_drop: self.p_drop,
            ln_epsilon: self.ln_epsilon,
            activation: self.activation,
        }
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            total_steps: self.total_steps,
            gamma: self.gamma,
            decay_period: self.decay_period,
        }
    }

    pub fn shape(&self) -> Result<TaskShape> {
        TaskShape::new(self.k_support_pos, self.k_support_neg, self.k_query_pos, self.k_query_neg)
    }

    pub fn split_ratio(&self) -> SplitRatio {
        SplitRatio {
            train: self.split_train,
            val: self.split_val,
            test: self.split_test,
        }
    }

    pub fn validation_period(&self) -> u64 {
        if self.eval_every == 0 {
            self.decay_period
        } else {
            self.eval_every
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transform().validate()?;
        self.schedule().validate()?;
        self.shape()?;
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.n1 == 0 || self.n2 == 0 || self.n_neg == 0 {
            return err("n1, n2 and n_neg must be at least 1");
        }
        if !(self.lr_struct > 0.0 && self.lr_meta > 0.0) {
            return err("learning rates must be positive");
        }
        if !(self.lambda >= 0.0) {
            return err("lambda must be non-negative");
        }
        if self.threads == 0 {
            return err("threads must be at least 1");
        }
        Ok(())
    }
}
