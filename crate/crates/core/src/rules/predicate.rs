//! Comparison grammar used by activation predicates and constraint conditions.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::Scalar;

/// Prefix marking a string operand as a reference to a named registry.
pub const REGISTRY_PREFIX: &str = "registry:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CompareOp {
    Eq,
    Ne,
    Gt,
    Gte,
    Lt,
    Lte,
    In,
    NotIn,
}

impl CompareOp {
    pub fn is_ordered(self) -> bool {
        matches!(self, CompareOp::Gt | CompareOp::Gte | CompareOp::Lt | CompareOp::Lte)
    }

    pub fn is_membership(self) -> bool {
        matches!(self, CompareOp::In | CompareOp::NotIn)
    }

    pub fn token(self) -> &'static str {
        match self {
            CompareOp::Eq => "EQ",
            CompareOp::Ne => "NE",
            CompareOp::Gt => "GT",
            CompareOp::Gte => "GTE",
            CompareOp::Lt => "LT",
            CompareOp::Lte => "LTE",
            CompareOp::In => "IN",
            CompareOp::NotIn => "NOT_IN",
        }
    }
}

/// Right-hand side of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operand {
    List(Vec<Scalar>),
    Scalar(Scalar),
}

impl Operand {
    /// Registry name when the operand is a `registry:<name>` reference.
    pub fn registry_ref(&self) -> Option<&str> {
        match self {
            Operand::Scalar(Scalar::Text(s)) => s.strip_prefix(REGISTRY_PREFIX),
            _ => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Scalar(s) => write!(f, "{s}"),
            Operand::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// One `key op value` conjunct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub key: String,
    pub op: CompareOp,
    pub value: Operand,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.key, self.op.token(), self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredicateError {
    #[error("type mismatch on `{key}`: cannot order {left} against {right}")]
    TypeMismatch {
        key: String,
        left: &'static str,
        right: &'static str,
    },
}

/// Where comparison keys and registry references are resolved.
pub trait Lookup {
    fn value(&self, key: &str) -> Option<Scalar>;
    fn registry(&self, name: &str) -> Option<&BTreeSet<String>>;
}

impl Comparison {
    pub fn new(key: impl Into<String>, op: CompareOp, value: Operand) -> Self {
        Self {
            key: key.into(),
            op,
            value,
        }
    }

    /// Evaluates the comparison. A missing key is `false`, never an error.
    pub fn evaluate(&self, lookup: &dyn Lookup) -> Result<bool, PredicateError> {
        let Some(actual) = lookup.value(&self.key) else {
            return Ok(false);
        };
        match self.op {
            CompareOp::Eq => Ok(self.equals(&actual)),
            CompareOp::Ne => Ok(!self.equals(&actual)),
            CompareOp::In => Ok(self.member(&actual, lookup)),
            CompareOp::NotIn => Ok(!self.member(&actual, lookup)),
            op => {
                let expected = match &self.value {
                    Operand::Scalar(s) => s,
                    Operand::List(_) => {
                        return Err(PredicateError::TypeMismatch {
                            key: self.key.clone(),
                            left: actual.kind(),
                            right: "list",
                        })
                    }
                };
                let ord = actual.partial_order(expected).ok_or_else(|| {
                    PredicateError::TypeMismatch {
                        key: self.key.clone(),
                        left: actual.kind(),
                        right: expected.kind(),
                    }
                })?;
                Ok(match op {
                    CompareOp::Gt => ord == Ordering::Greater,
                    CompareOp::Gte => ord != Ordering::Less,
                    CompareOp::Lt => ord == Ordering::Less,
                    CompareOp::Lte => ord != Ordering::Greater,
                    _ => unreachable!("non-ordered ops handled above"),
                })
            }
        }
    }

    fn equals(&self, actual: &Scalar) -> bool {
        match &self.value {
            Operand::Scalar(s) => s == actual,
            Operand::List(_) => false,
        }
    }

    fn member(&self, actual: &Scalar, lookup: &dyn Lookup) -> bool {
        if let Some(name) = self.value.registry_ref() {
            return match (actual, lookup.registry(name)) {
                (Scalar::Text(s), Some(set)) => set.contains(s),
                _ => false,
            };
        }
        match &self.value {
            Operand::List(items) => items.contains(actual),
            Operand::Scalar(s) => s == actual,
        }
    }

    /// Authoring-time problems detectable without a context.
    pub fn static_problem(&self) -> Option<String> {
        if self.key.trim().is_empty() {
            return Some("comparison key is empty".into());
        }
        if self.op.is_ordered() && matches!(self.value, Operand::List(_)) {
            return Some(format!("{} cannot take a list operand", self.op.token()));
        }
        if self.op.is_membership()
            && !matches!(self.value, Operand::List(_))
            && self.value.registry_ref().is_none()
        {
            return Some(format!(
                "{} needs a list or a `registry:<name>` operand",
                self.op.token()
            ));
        }
        None
    }
}

/// Conjunction of comparisons gating a situational rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationPredicate {
    pub conjuncts: Vec<Comparison>,
}

impl ActivationPredicate {
    pub fn new(conjuncts: Vec<Comparison>) -> Self {
        Self { conjuncts }
    }
}

/// Evaluates every conjunct (no short-circuit, so authoring errors always surface) and returns
/// their conjunction.
pub fn evaluate_all(conjuncts: &[Comparison], lookup: &dyn Lookup) -> Result<bool, PredicateError> {
    let mut all = true;
    for c in conjuncts {
        all &= c.evaluate(lookup)?;
    }
    Ok(all)
}

pub fn evaluate_predicate(
    predicate: &ActivationPredicate,
    lookup: &dyn Lookup,
) -> Result<bool, PredicateError> {
    evaluate_all(&predicate.conjuncts, lookup)
}
