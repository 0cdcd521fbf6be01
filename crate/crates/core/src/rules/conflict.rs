//! Static conflict detection between machine constraints.

use serde::{Deserialize, Serialize};

use super::{action_patterns_overlap, MachineConstraint, Modality, Rule, RuleSet};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConflictReport {
    /// The two rule ids, lexicographically ordered.
    pub rules: [String; 2],
    pub modalities: [Modality; 2],
    /// Higher-precedence rule; `None` when both sit in the same layer.
    pub winner: Option<String>,
    pub detail: String,
}

fn contradictory(a: Modality, b: Modality) -> bool {
    use Modality::*;
    matches!(
        (a, b),
        (Allow, Forbid) | (Forbid, Allow) | (Allow, RequireApproval) | (RequireApproval, Allow)
    )
}

fn actions_overlap(a: &MachineConstraint, b: &MachineConstraint) -> bool {
    if a.action_classes.is_empty() || b.action_classes.is_empty() {
        return true;
    }
    a.action_classes
        .iter()
        .any(|x| b.action_classes.iter().any(|y| action_patterns_overlap(x, y)))
}

fn check_pair(a: &Rule, b: &Rule) -> Option<ConflictReport> {
    let (ca, cb) = (a.constraint.as_ref()?, b.constraint.as_ref()?);
    if !contradictory(ca.modality, cb.modality)
        || !a.scope.overlaps(&b.scope)
        || !actions_overlap(ca, cb)
    {
        return None;
    }
    let (first, second) = if a.id <= b.id { (a, b) } else { (b, a) };
    let winner = match first.layer.rank().cmp(&second.layer.rank()) {
        std::cmp::Ordering::Less => Some(first.id.clone()),
        std::cmp::Ordering::Greater => Some(second.id.clone()),
        std::cmp::Ordering::Equal => None,
    };
    let c1 = first.constraint.as_ref()?;
    let c2 = second.constraint.as_ref()?;
    Some(ConflictReport {
        rules: [first.id.clone(), second.id.clone()],
        modalities: [c1.modality, c2.modality],
        detail: format!(
            "{} {} {} vs {} {} {}",
            first.id,
            first.layer,
            c1.modality.name(),
            second.id,
            second.layer,
            c2.modality.name()
        ),
        winner,
    })
}

/// Every pair of enabled rules whose constraints overlap in scope and action class with
/// contradictory modalities. Rules without a machine constraint are never reported. The result is
/// sorted, so it does not depend on rule order in the document.
pub fn detect_conflicts(rules: &RuleSet) -> Vec<ConflictReport> {
    let enabled: Vec<&Rule> = rules.rules().iter().filter(|r| r.enabled).collect();
    let mut out = Vec::new();
    for (i, a) in enabled.iter().enumerate() {
        for b in &enabled[i + 1..] {
            if let Some(report) = check_pair(a, b) {
                out.push(report);
            }
        }
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowr;
    use crate::rules::{GovernanceLayer, RuleSetDocument, Scope};

    fn rule(id: &str, layer: GovernanceLayer, modality: Modality, actions: &[&str]) -> Rule {
        let scope = match layer {
            GovernanceLayer::Global => Scope::default(),
            GovernanceLayer::Workflow => Scope {
                workflow_ids: ["w".to_string()].into(),
                ..Default::default()
            },
            _ => Scope {
                workflow_ids: ["w".to_string()].into(),
                agent_ids: ["a".to_string()].into(),
            },
        };
        Rule {
            id: id.into(),
            layer,
            scope,
            text: "t".into(),
            rationale: "r".into(),
            constraint: Some(MachineConstraint {
                action_classes: actions.iter().map(|s| s.to_string()).collect(),
                modality,
                condition: vec![],
            }),
            predicate: None,
            enabled: true,
        }
    }

    fn set(rules: Vec<Rule>) -> RuleSet {
        RuleSet::new(RuleSetDocument {
            version: 1,
            metadata: Default::default(),
            rules,
        })
        .unwrap()
    }

    /// Independent oracle: every ordered pair, duplicates removed afterwards.
    fn brute_force(rules: &[Rule]) -> Vec<(String, String, Option<String>)> {
        let mut out = Vec::new();
        for a in rules {
            for b in rules {
                if a.id >= b.id {
                    continue;
                }
                let (Some(ca), Some(cb)) = (&a.constraint, &b.constraint) else {
                    continue;
                };
                let pair = [ca.modality, cb.modality];
                let contra = pair.contains(&Modality::Allow)
                    && (pair.contains(&Modality::Forbid)
                        || pair.contains(&Modality::RequireApproval));
                let share_action = ca.action_classes.is_empty()
                    || cb.action_classes.is_empty()
                    || ca.action_classes.intersection(&cb.action_classes).next().is_some();
                if contra && share_action && a.scope.overlaps(&b.scope) {
                    let winner = if a.layer < b.layer {
                        Some(a.id.clone())
                    } else if b.layer < a.layer {
                        Some(b.id.clone())
                    } else {
                        None
                    };
                    out.push((a.id.clone(), b.id.clone(), winner));
                }
            }
        }
        out.sort();
        out
    }

    fn summary(reports: &[ConflictReport]) -> Vec<(String, String, Option<String>)> {
        reports
            .iter()
            .map(|r| (r.rules[0].clone(), r.rules[1].clone(), r.winner.clone()))
            .collect()
    }

    #[test]
    fn global_forbid_beats_agent_allow() {
        let rs = set(vec![
            rule("G", GovernanceLayer::Global, Modality::Forbid, &["x"]),
            rule("A", GovernanceLayer::Agent, Modality::Allow, &["x"]),
        ]);
        let r = detect_conflicts(&rs);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].winner.as_deref(), Some("G"));
    }

    #[test]
    fn disjoint_actions() {
        let rs = set(vec![
            rule("G", GovernanceLayer::Global, Modality::Forbid, &["x"]),
            rule("A", GovernanceLayer::Agent, Modality::Allow, &["y"]),
        ]);
        assert!(detect_conflicts(&rs).is_empty());
    }

    #[test]
    fn three_rule_chain_matches_pairwise_oracle() {
        let rules = vec![
            rule("G", GovernanceLayer::Global, Modality::RequireApproval, &["x"]),
            rule("W", GovernanceLayer::Workflow, Modality::Allow, &["x"]),
            rule("A", GovernanceLayer::Agent, Modality::Forbid, &["x"]),
        ];
        let expected = brute_force(&rules);
        assert_eq!(
            expected,
            vec![
                ("A".into(), "W".into(), Some("W".into())),
                ("G".into(), "W".into(), Some("G".into())),
            ]
        );
        assert_eq!(summary(&detect_conflicts(&set(rules))), expected);
    }

    #[test]
    fn order_independent() {
        let mut rules = vec![
            rule("G", GovernanceLayer::Global, Modality::Forbid, &["x", "y"]),
            rule("W", GovernanceLayer::Workflow, Modality::Allow, &["y"]),
            rule("A", GovernanceLayer::Agent, Modality::Allow, &["x"]),
            rule("B", GovernanceLayer::Agent, Modality::RequireApproval, &["x"]),
        ];
        let forward = detect_conflicts(&set(rules.clone()));
        rules.reverse();
        assert_eq!(forward, detect_conflicts(&set(rules)));
        assert_eq!(forward.len(), 3);
    }

    #[test]
    fn flowr_has_no_conflicts() {
        assert!(detect_conflicts(&flowr::ruleset()).is_empty());
    }
}
