use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvActionKind {
    Navigate,
    Submit,
    Tap,
    TypeText,
    Stop,
}

/// One HTTP-level interaction with an environment.
///
/// `navigate` is a GET of `target`, `submit` POSTs `payload` as a form body,
/// `tap` POSTs an empty body, and `type_text` buffers `target=payload` to be
/// sent with the next submit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EnvAction {
    pub kind: EnvActionKind,
    #[serde(default)]
    pub target: String,
    #[serde(default)]
    pub payload: Option<String>,
}

impl EnvAction {
    pub fn navigate(target: impl Into<String>) -> Self {
        Self { kind: EnvActionKind::Navigate, target: target.into(), payload: None }
    }

    pub fn submit(target: impl Into<String>, payload: impl Into<String>) -> Self {
        Self { kind: EnvActionKind::Submit, target: target.into(), payload: Some(payload.into()) }
    }

    pub fn tap(target: impl Into<String>) -> Self {
        Self { kind: EnvActionKind::Tap, target: target.into(), payload: None }
    }

    pub fn type_text(field: impl Into<String>, text: impl Into<String>) -> Self {
        Self { kind: EnvActionKind::TypeText, target: field.into(), payload: Some(text.into()) }
    }

    pub fn stop() -> Self {
        Self { kind: EnvActionKind::Stop, target: String::new(), payload: None }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            EnvActionKind::Stop if !self.target.is_empty() || self.payload.is_some() => {
                Err("stop carries no target or payload".into())
            }
            EnvActionKind::Stop => Ok(()),
            _ if self.target.is_empty() => Err(format!("{:?} action needs a target", self.kind)),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for EnvAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = serde_json::to_value(self.kind).ok().and_then(|v| v.as_str().map(str::to_owned));
        write!(f, "{} {}", kind.unwrap_or_default(), self.target)?;
        if let Some(p) = &self.payload {
            write!(f, " [{p}]")?;
        }
        Ok(())
    }
}

/// `actions.json`: the enumerable action space of an environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCatalog {
    pub actions: Vec<EnvAction>,
}

pub const DEFAULT_EXCERPT_CAP: usize = 2048;

/// Page-content observation returned by a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub status: u16,
    pub body_digest: String,
    pub body_excerpt: String,
    pub url: String,
}

impl Observation {
    pub fn from_body(status: u16, url: String, body: &str, cap: usize) -> Self {
        let digest = Sha256::digest(body.as_bytes());
        let excerpt: String = body.chars().take(cap).collect();
        Self { status, body_digest: hex(&digest), body_excerpt: excerpt, url }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// Hundreds digit of the status code, e.g. 4 for a 404.
    pub fn status_class(&self) -> u16 {
        self.status / 100
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_has_no_operands() {
        assert!(EnvAction::stop().validate().is_ok());
        let bad = EnvAction { kind: EnvActionKind::Stop, target: "/".into(), payload: None };
        assert!(bad.validate().is_err());
        assert!(EnvAction::navigate("").validate().is_err());
    }

    #[test]
    fn excerpt_is_capped() {
        let body = "é".repeat(100);
        let obs = Observation::from_body(200, "/".into(), &body, 10);
        assert_eq!(obs.body_excerpt.chars().count(), 10);
        assert_eq!(obs.body_digest.len(), 64);
        assert_eq!(obs.status_class(), 2);
    }

    #[test]
    fn wire_names() {
        let json = serde_json::to_string(&EnvAction::type_text("city", "Lvliang")).unwrap();
        assert_eq!(json, r#"{"kind":"type_text","target":"city","payload":"Lvliang"}"#);
        let a: EnvAction = serde_json::from_str(r#"{"kind":"tap","target":"/checkout","payload":null}"#).unwrap();
        assert_eq!(a, EnvAction::tap("/checkout"));
    }
}
