use std::sync::atomic::{AtomicU64, Ordering};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest, BackendResponse};

/// `match` is a plain substring, or a regex when written as `/.../`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    pub skill: String,
    #[serde(rename = "match", default)]
    pub pattern: String,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
}

#[derive(Debug)]
enum Matcher {
    Substring(String),
    Regex(Regex),
}

impl Matcher {
    fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::Substring(s) => text.contains(s.as_str()),
            Matcher::Regex(r) => r.is_match(text),
        }
    }
}

/// Deterministic back end: first rule (in declaration order) whose skill,
/// agent and pattern match the request wins.
#[derive(Debug)]
pub struct ScriptedBackend {
    rules: Vec<(ScriptedRule, Matcher)>,
    default_reply: Option<String>,
    calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>, default_reply: Option<String>) -> Result<Self, BackendError> {
        let rules = rules
            .into_iter()
            .map(|rule| {
                let p = rule.pattern.as_str();
                let matcher = if p.len() >= 2 && p.starts_with('/') && p.ends_with('/') {
                    Matcher::Regex(
                        Regex::new(&p[1..p.len() - 1])
                            .map_err(|e| BackendError::Config(format!("rule pattern {p}: {e}")))?,
                    )
                } else {
                    Matcher::Substring(p.to_string())
                };
                Ok((rule, matcher))
            })
            .collect::<Result<_, BackendError>>()?;
        Ok(ScriptedBackend {
            rules,
            default_reply,
            calls: AtomicU64::new(0),
        })
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let hit = self.rules.iter().find(|(rule, matcher)| {
            rule.skill == request.skill_name
                && rule.agent.as_ref().is_none_or(|a| *a == request.agent_id)
                && matcher.matches(&request.instruction_text)
        });
        match (hit, &self.default_reply) {
            (Some((rule, _)), _) => Ok(BackendResponse::text(rule.reply.clone())),
            (None, Some(default)) => Ok(BackendResponse::text(default.clone())),
            (None, None) => Err(BackendError::NoMatch {
                skill: request.skill_name.clone(),
            }),
        }
    }
}
