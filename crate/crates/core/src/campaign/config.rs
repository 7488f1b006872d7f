//! Campaign configuration and its YAML-subset file format.
//!
//! Supported syntax: `key: scalar`, `key: [a, b]`, a key followed by an
//! indented block of `- item` lines, and a key followed by an indented block
//! of `subkey: scalar` lines. `#` starts a comment.

use std::collections::BTreeSet;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contract::{ContractSpec, ExecClause};
use crate::dut::UarchConfig;
use crate::gen::GenConfig;
use crate::isa::Category;

/// Bumped whenever a change alters what a given seed produces.
pub const SEMANTICS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` expects {expected}")]
    TypeMismatch {
        line: usize,
        key: String,
        expected: &'static str,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    InvalidValue {
        line: usize,
        key: String,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub instruction_categories: BTreeSet<Category>,
    pub contract_observation_clause: String,
    pub contract_execution_clause: ExecClause,
    pub enable_speculation_filter: bool,
    pub enable_observation_filter: bool,
    /// Class size produced by input boosting; below 2 disables it.
    pub inputs_per_class: usize,
    pub program_size: usize,
    pub mem_accesses: usize,
    pub basic_blocks: usize,
    pub input_gen_entropy_bits: u32,
    pub num_programs: usize,
    pub inputs_per_program: usize,
    pub seed: u64,
    pub uarch: UarchConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            instruction_categories: [Category::Base].into_iter().collect(),
            contract_observation_clause: "ct".into(),
            contract_execution_clause: ExecClause::Seq,
            enable_speculation_filter: true,
            enable_observation_filter: true,
            inputs_per_class: 2,
            program_size: 32,
            mem_accesses: 8,
            basic_blocks: 1,
            input_gen_entropy_bits: 16,
            num_programs: 100,
            inputs_per_program: 50,
            seed: 0,
            uarch: UarchConfig::default(),
        }
    }
}

impl CampaignConfig {
    pub fn contract(&self) -> ContractSpec {
        match self.contract_execution_clause {
            ExecClause::Seq => ContractSpec::seq(),
            ExecClause::Cond => ContractSpec::cond(),
        }
    }

    pub fn cig_enabled(&self) -> bool {
        self.inputs_per_class >= 2
    }

    pub fn gen_config(&self, seed: u64) -> GenConfig {
        GenConfig {
            categories: self.instruction_categories.clone(),
            program_size: self.program_size,
            mem_accesses: self.mem_accesses,
            basic_blocks: self.basic_blocks,
            input_entropy_bits: self.input_gen_entropy_bits,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = self.gen_config(self.seed);
        g.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if g.basic_blocks > 1 && !g.categories.contains(&Category::Cond) {
            return Err(ConfigError::Invalid(
                "basic_blocks > 1 needs the cond category".into(),
            ));
        }
        self.uarch
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.inputs_per_program == 0 {
            return Err(ConfigError::Invalid("inputs_per_program must be positive".into()));
        }
        Ok(())
    }

    /// Hash of the semantics version and every setting.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = FnvHasher::default();
        h.write(&SEMANTICS_VERSION.to_le_bytes());
        h.write(json.as_bytes());
        format!("{:016x}", h.finish())
    }
}

#[derive(Debug, Clone)]
enum Value {
    Scalar(String),
    List(Vec<String>),
    Map(Vec<(usize, String, String)>),
}

fn strip_comment(line: &str) -> &str {
    let mut prev_space = true;
    for (i, c) in line.char_indices() {
        if c == '#' && prev_space {
            return &line[..i];
        }
        prev_space = c.is_whitespace();
    }
    line
}

fn unquote(s: &str) -> String {
    let s = s.trim();
    let q = s.len() >= 2
        && ((s.starts_with('"') && s.ends_with('"')) || (s.starts_with('\'') && s.ends_with('\'')));
    if q {
        s[1..s.len() - 1].to_string()
    } else {
        s.to_string()
    }
}

fn split_key(line: usize, text: &str) -> Result<(String, String), ConfigError> {
    let Some((k, v)) = text.split_once(':') else {
        return Err(ConfigError::Syntax {
            line,
            message: format!("expected `key: value`, found `{}`", text.trim()),
        });
    };
    let k = k.trim();
    if k.is_empty() || k.contains(char::is_whitespace) {
        return Err(ConfigError::Syntax {
            line,
            message: format!("malformed key `{}`", k),
        });
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn scalar_or_inline(v: &str) -> Value {
    if let Some(inner) = v.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        Value::List(
            inner
                .split(',')
                .map(unquote)
                .filter(|s| !s.is_empty())
                .collect(),
        )
    } else {
        Value::Scalar(unquote(v))
    }
}

/// Top-level entries in file order.
fn parse_tree(text: &str) -> Result<Vec<(usize, String, Value)>, ConfigError> {
    let mut out: Vec<(usize, String, Value)> = Vec::new();
    let mut open: Option<usize> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = strip_comment(raw);
        if body.trim().is_empty() {
            continue;
        }
        let indented = body.starts_with(' ') || body.starts_with('\t');
        let t = body.trim();
        if !indented {
            let (k, v) = split_key(line, t)?;
            if out.iter().any(|(_, key, _)| *key == k) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("duplicate key `{}`", k),
                });
            }
            if v.is_empty() {
                open = Some(out.len());
                out.push((line, k, Value::List(Vec::new())));
            } else {
                open = None;
                out.push((line, k, scalar_or_inline(&v)));
            }
            continue;
        }
        let Some(idx) = open else {
            return Err(ConfigError::Syntax {
                line,
                message: "indented line without an enclosing key".into(),
            });
        };
        let entry = &mut out[idx].2;
        if let Some(item) = t.strip_prefix('-') {
            match entry {
                Value::List(items) => items.push(unquote(item)),
                _ => {
                    return Err(ConfigError::Syntax {
                        line,
                        message: "list item inside a mapping".into(),
                    })
                }
            }
        } else {
            let (k, v) = split_key(line, t)?;
            if v.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    message: "only one level of nesting is supported".into(),
                });
            }
            match entry {
                Value::List(items) if items.is_empty() => {
                    *entry = Value::Map(vec![(line, k, unquote(&v))]);
                }
                Value::Map(m) => m.push((line, k, unquote(&v))),
                _ => {
                    return Err(ConfigError::Syntax {
                        line,
                        message: "mapping entry inside a list".into(),
                    })
                }
            }
        }
    }
    Ok(out)
}

fn mismatch(line: usize, key: &str, expected: &'static str) -> ConfigError {
    ConfigError::TypeMismatch {
        line,
        key: key.to_string(),
        expected,
    }
}

fn scalar<'a>(line: usize, key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    match v {
        Value::Scalar(s) => Ok(s),
        Value::List(l) if l.len() == 1 => Ok(&l[0]),
        _ => Err(mismatch(line, key, "a scalar")),
    }
}

fn as_bool(line: usize, key: &str, s: &str) -> Result<bool, ConfigError> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(mismatch(line, key, "a boolean")),
    }
}

fn as_u64(line: usize, key: &str, s: &str) -> Result<u64, ConfigError> {
    let t = s.replace('_', "");
    let r = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(h, 16),
        None => t.parse(),
    };
    r.map_err(|_| mismatch(line, key, "a non-negative integer"))
}

fn as_usize(line: usize, key: &str, s: &str) -> Result<usize, ConfigError> {
    as_u64(line, key, s).map(|v| v as usize)
}

fn as_f64(line: usize, key: &str, s: &str) -> Result<f64, ConfigError> {
    s.parse().map_err(|_| mismatch(line, key, "a number"))
}

fn apply_uarch(u: &mut UarchConfig, line: usize, key: &str, s: &str) -> Result<(), ConfigError> {
    match key {
        "cond_predictor" => u.cond_predictor = as_bool(line, key, s)?,
        "store_bypass" => u.store_bypass = as_bool(line, key, s)?,
        "lvi_null" => u.lvi_null = as_bool(line, key, s)?,
        "zdi" => u.zdi = as_bool(line, key, s)?,
        "sco" => u.sco = as_bool(line, key, s)?,
        "speculation_window" => u.speculation_window = as_usize(line, key, s)?,
        "store_bypass_delay" => u.store_bypass_delay = as_usize(line, key, s)?,
        "sco_overrun_limit" => u.sco_overrun_limit = as_usize(line, key, s)?,
        "cache_sets" => u.cache_sets = as_usize(line, key, s)?,
        "cache_ways" => u.cache_ways = as_usize(line, key, s)?,
        "line_size" => u.line_size = as_usize(line, key, s)?,
        "noise_rate" => u.noise_rate = as_f64(line, key, s)?,
        _ => {
            return Err(ConfigError::UnknownKey {
                line,
                key: format!("uarch.{}", key),
            })
        }
    }
    Ok(())
}

/// Parses a configuration file; unspecified keys keep their defaults.
pub fn parse_config(text: &str) -> Result<CampaignConfig, ConfigError> {
    let mut cfg = CampaignConfig::default();
    let mut blocks_set = false;
    for (line, key, value) in parse_tree(text)? {
        let k = key.as_str();
        match k {
            "instruction_categories" => {
                let items = match &value {
                    Value::List(l) => l.clone(),
                    Value::Scalar(s) => vec![s.clone()],
                    Value::Map(_) => return Err(mismatch(line, k, "a list of categories")),
                };
                let mut set = BTreeSet::new();
                for it in items {
                    let c = Category::parse(&it).ok_or_else(|| ConfigError::InvalidValue {
                        line,
                        key: key.clone(),
                        message: format!("unknown category `{}`", it),
                    })?;
                    set.insert(c);
                }
                cfg.instruction_categories = set;
            }
            "contract_observation_clause" => {
                let s = scalar(line, k, &value)?;
                if s != "ct" {
                    return Err(ConfigError::InvalidValue {
                        line,
                        key: key.clone(),
                        message: format!("only `ct` is supported, found `{}`", s),
                    });
                }
            }
            "contract_execution_clause" => {
                cfg.contract_execution_clause = match scalar(line, k, &value)? {
                    "seq" => ExecClause::Seq,
                    "cond" => ExecClause::Cond,
                    other => {
                        return Err(ConfigError::InvalidValue {
                            line,
                            key: key.clone(),
                            message: format!("expected `seq` or `cond`, found `{}`", other),
                        })
                    }
                }
            }
            "enable_speculation_filter" => {
                cfg.enable_speculation_filter = as_bool(line, k, scalar(line, k, &value)?)?
            }
            "enable_observation_filter" => {
                cfg.enable_observation_filter = as_bool(line, k, scalar(line, k, &value)?)?
            }
            "inputs_per_class" => cfg.inputs_per_class = as_usize(line, k, scalar(line, k, &value)?)?,
            "program_size" => cfg.program_size = as_usize(line, k, scalar(line, k, &value)?)?,
            "mem_accesses" => cfg.mem_accesses = as_usize(line, k, scalar(line, k, &value)?)?,
            "basic_blocks" => {
                cfg.basic_blocks = as_usize(line, k, scalar(line, k, &value)?)?;
                blocks_set = true;
            }
            "input_gen_entropy_bits" => {
                cfg.input_gen_entropy_bits = as_u64(line, k, scalar(line, k, &value)?)? as u32
            }
            "num_programs" => cfg.num_programs = as_usize(line, k, scalar(line, k, &value)?)?,
            "inputs_per_program" => {
                cfg.inputs_per_program = as_usize(line, k, scalar(line, k, &value)?)?
            }
            "seed" => cfg.seed = as_u64(line, k, scalar(line, k, &value)?)?,
            "uarch" => match &value {
                Value::Map(entries) => {
                    for (l, sk, sv) in entries {
                        apply_uarch(&mut cfg.uarch, *l, sk, sv)?;
                    }
                }
                Value::List(l) if l.is_empty() => {}
                _ => return Err(mismatch(line, k, "a mapping")),
            },
            _ => return Err(ConfigError::UnknownKey { line, key }),
        }
    }
    if !blocks_set {
        cfg.basic_blocks = if cfg.instruction_categories.contains(&Category::Cond) {
            2
        } else {
            1
        };
    }
    cfg.validate()?;
    Ok(cfg)
}
