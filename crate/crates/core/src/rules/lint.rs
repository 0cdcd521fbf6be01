//! Rule-authoring lint.
//!
//! The framing heuristics are keyword lists loaded from configuration so they can be tuned
//! without a release; [`LintConfig::default`] mirrors `rules/lint.json`.

use serde::{Deserialize, Serialize};

use super::{GovernanceLayer, Modality, Rule, RuleSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LintConfig {
    /// Phrases marking a prohibition.
    pub prohibition_markers: Vec<String>,
    /// Phrases indicating that a compliant alternative or condition is stated.
    pub alternative_markers: Vec<String>,
}

impl Default for LintConfig {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Self {
            prohibition_markers: s(&[
                "do not",
                "don't",
                "never",
                "must not",
                "may not",
                "cannot",
                "can't",
                "shall not",
                "prohibited",
                "forbidden",
                "not allowed",
                "not permitted",
            ]),
            alternative_markers: s(&[
                "instead",
                "unless",
                "without",
                "except",
                "rather than",
                "only ",
                "should",
                "require",
            ]),
        }
    }
}

impl LintConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LintKind {
    MissingRationale,
    NegativeOnlyFraming,
    OverbroadScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintWarning {
    pub rule_id: String,
    pub kind: LintKind,
    pub message: String,
}

fn contains_any(haystack: &str, needles: &[String]) -> bool {
    needles.iter().any(|n| haystack.contains(&n.to_lowercase()))
}

pub fn lint_rule(rule: &Rule, config: &LintConfig) -> Vec<LintWarning> {
    let mut out = Vec::new();
    let mut warn = |kind, message: &str| {
        out.push(LintWarning {
            rule_id: rule.id.clone(),
            kind,
            message: message.to_string(),
        })
    };
    let no_rationale = rule.rationale.trim().is_empty();
    if no_rationale {
        warn(
            LintKind::MissingRationale,
            "rule states what is constrained but not why; add a rationale",
        );
    }
    let text = format!(" {} ", rule.text.to_lowercase());
    if no_rationale
        && contains_any(&text, &config.prohibition_markers)
        && !contains_any(&text, &config.alternative_markers)
    {
        warn(
            LintKind::NegativeOnlyFraming,
            "prohibition with no compliant alternative; say what the agent should do",
        );
    }
    if rule.layer == GovernanceLayer::Global {
        if let Some(c) = &rule.constraint {
            if c.action_classes.is_empty() && c.modality != Modality::RequireApproval {
                warn(
                    LintKind::OverbroadScope,
                    "GLOBAL constraint governs every action class; narrow its action_classes",
                );
            }
        }
    }
    out
}

pub fn lint_ruleset(rules: &RuleSet, config: &LintConfig) -> Vec<LintWarning> {
    rules.rules().iter().flat_map(|r| lint_rule(r, config)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowr;
    use crate::rules::{MachineConstraint, Scope};

    fn rule(text: &str, rationale: &str) -> Rule {
        Rule {
            id: "X".into(),
            layer: GovernanceLayer::Global,
            scope: Scope::default(),
            text: text.into(),
            rationale: rationale.into(),
            constraint: None,
            predicate: None,
            enabled: true,
        }
    }

    fn kinds(w: &[LintWarning]) -> Vec<LintKind> {
        w.iter().map(|w| w.kind).collect()
    }

    #[test]
    fn r1_has_rationale() {
        let rs = flowr::ruleset();
        let w = lint_rule(rs.rule("R1").unwrap(), &LintConfig::default());
        assert!(!kinds(&w).contains(&LintKind::MissingRationale));
        assert!(w.is_empty());
    }

    #[test]
    fn bare_prohibition() {
        let w = lint_rule(&rule("Do not transmit user data externally", ""), &LintConfig::default());
        assert_eq!(
            kinds(&w),
            [LintKind::MissingRationale, LintKind::NegativeOnlyFraming]
        );
    }

    #[test]
    fn qualified_prohibition_without_rationale_only_misses_rationale() {
        let w = lint_rule(
            &rule(
                "Do not transmit user data to external endpoints without explicit authorization",
                "",
            ),
            &LintConfig::default(),
        );
        assert_eq!(kinds(&w), [LintKind::MissingRationale]);
    }

    #[test]
    fn clean_rule() {
        let w = lint_rule(
            &rule(
                "Route supplier contact through the verified registry",
                "because unverified suppliers introduce compliance risk",
            ),
            &LintConfig::default(),
        );
        assert!(w.is_empty());
    }

    #[test]
    fn overbroad_global_constraint() {
        let mut r = rule("Hold every action", "because we are cautious");
        r.constraint = Some(MachineConstraint {
            action_classes: Default::default(),
            modality: Modality::Forbid,
            condition: vec![],
        });
        assert_eq!(kinds(&lint_rule(&r, &LintConfig::default())), [LintKind::OverbroadScope]);
        r.constraint.as_mut().unwrap().modality = Modality::RequireApproval;
        assert!(lint_rule(&r, &LintConfig::default()).is_empty());
    }

    #[test]
    fn keyword_lists_are_configurable() {
        let cfg = LintConfig {
            prohibition_markers: vec!["avoid".into()],
            alternative_markers: vec![],
        };
        let w = lint_rule(&rule("Avoid weekend deployments", ""), &cfg);
        assert_eq!(
            kinds(&w),
            [LintKind::MissingRationale, LintKind::NegativeOnlyFraming]
        );
    }

    #[test]
    fn shipped_config_matches_default() {
        let shipped = include_bytes!("../../../../rules/lint.json");
        assert_eq!(LintConfig::from_json(shipped).unwrap(), LintConfig::default());
    }
}
