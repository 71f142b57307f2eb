//! Symbolic conditions: a set of `attribute = value` tokens standing in for a prompt.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use core::fmt;

use crate::error::{param_err, Result};

/// Ordered attribute tokens. The empty condition is the unconditional query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition {
    tokens: BTreeMap<String, String>,
}

impl Condition {
    pub fn unconditional() -> Self {
        Self::default()
    }

    /// Builds a condition, rejecting duplicate attribute names.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut tokens = BTreeMap::new();
        for (k, v) in pairs {
            let k = k.into();
            if tokens.contains_key(&k) {
                return Err(param_err!("duplicate attribute `{k}` in condition"));
            }
            tokens.insert(k, v.into());
        }
        Ok(Self { tokens })
    }

    /// Parses `attr=value,attr=value`; an empty string is unconditional.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = alloc::vec::Vec::new();
        for token in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| param_err!("condition token `{token}` is not attr=value"))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(pairs)
    }

    pub fn is_unconditional(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, attribute: &str) -> Option<&str> {
        self.tokens.get(attribute).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.tokens.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Copy with `attribute` set to `value`, replacing any previous value.
    pub fn with(&self, attribute: &str, value: &str) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.insert(attribute.to_string(), value.to_string());
        Self { tokens }
    }

    /// Copy with `attribute` dropped.
    pub fn without(&self, attribute: &str) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.remove(attribute);
        Self { tokens }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}
