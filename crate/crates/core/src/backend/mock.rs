use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{prompt_fingerprint, Backend, BackendError, ModelRequest, ModelResponse, UserPart};

/// Canned responses for one exact prompt fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub fingerprint: String,
    pub responses: Vec<String>,
}

/// Canned responses selected by request content.
///
/// All given conditions must hold: the tag matches, every `contains`
/// string occurs in the system prompt or a text part, and (when set) an
/// image part has the given SHA-256.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMatcher {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
    pub responses: Vec<String>,
}

impl FixtureMatcher {
    fn matches(&self, request: &ModelRequest, text: &str) -> bool {
        if self.tag.as_ref().is_some_and(|t| *t != request.request_tag) {
            return false;
        }
        if !self.contains.iter().all(|needle| text.contains(needle.as_str())) {
            return false;
        }
        match &self.image_sha256 {
            None => true,
            Some(want) => request.user_parts.iter().any(|p| match p {
                UserPart::Image { bytes, .. } => hex::encode(Sha256::digest(bytes)).eq_ignore_ascii_case(want),
                UserPart::Text { .. } => false,
            }),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    #[serde(default)]
    pub entries: Vec<FixtureEntry>,
    #[serde(default)]
    pub matchers: Vec<FixtureMatcher>,
}

/// Deterministic backend replaying fixture responses.
///
/// The response for `(prompt, sample_index)` is entry `sample_index mod len`
/// of the first fixture that applies: exact fingerprint entries are consulted
/// before matchers, and matchers in file order.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    name: String,
    entries: HashMap<String, Vec<String>>,
    matchers: Vec<FixtureMatcher>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, fixture: FixtureFile) -> Result<Self, BackendError> {
        let mut backend = ScriptedBackend {
            name: name.into(),
            entries: HashMap::new(),
            matchers: Vec::new(),
        };
        backend.extend(fixture)?;
        Ok(backend)
    }

    fn extend(&mut self, fixture: FixtureFile) -> Result<(), BackendError> {
        for e in fixture.entries {
            if e.responses.is_empty() {
                return Err(BackendError::Config(format!("fixture {} has no responses", e.fingerprint)));
            }
            self.entries.insert(e.fingerprint.to_ascii_lowercase(), e.responses);
        }
        for m in fixture.matchers {
            if m.responses.is_empty() {
                return Err(BackendError::Config("fixture matcher has no responses".into()));
            }
            self.matchers.push(m);
        }
        Ok(())
    }

    /// Load every `*.json` fixture file in `dir`, in file-name order.
    pub fn from_dir(name: &str, dir: &Path) -> Result<Self, BackendError> {
        let read_err = |e: std::io::Error| BackendError::Config(format!("fixtures {}: {e}", dir.display()));
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(read_err)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut backend = ScriptedBackend::new(name, FixtureFile::default())?;
        for path in files {
            let text = std::fs::read_to_string(&path).map_err(read_err)?;
            let fixture: FixtureFile = serde_json::from_str(&text)
                .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
            backend.extend(fixture)?;
        }
        Ok(backend)
    }

    fn lookup(&self, request: &ModelRequest) -> Option<&[String]> {
        if !self.entries.is_empty() {
            if let Some(r) = self.entries.get(&prompt_fingerprint(request)) {
                return Some(r);
            }
        }
        let text = request.text_content();
        self.matchers
            .iter()
            .find(|m| m.matches(request, &text))
            .map(|m| m.responses.as_slice())
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    async fn complete(&self, request: &ModelRequest, sample_index: u64) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let responses = self.lookup(request).ok_or_else(|| BackendError::FixtureMiss {
            fingerprint: prompt_fingerprint(request),
            tag: request.request_tag.clone(),
        })?;
        let text = responses[(sample_index % responses.len() as u64) as usize].clone();
        Ok(ModelResponse {
            text,
            backend_name: self.name.clone(),
            latency: Duration::ZERO,
            cached: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(user: &str) -> ModelRequest {
        ModelRequest {
            backend_name: "mock".into(),
            system_prompt: "Determine whether".into(),
            user_parts: vec![UserPart::text(user)],
            temperature: 0.7,
            max_output: 256,
            request_tag: "grade".into(),
        }
    }

    #[tokio::test]
    async fn fingerprint_entries_index_by_sample() {
        let req = request("Grading rule: r\nStudent answer: a");
        let fixture = FixtureFile {
            entries: vec![FixtureEntry {
                fingerprint: prompt_fingerprint(&req),
                responses: vec!["Judgement: Yes\nExplanation: first".into(), "Judgement: No\nExplanation: second".into()],
            }],
            matchers: vec![],
        };
        let mock = ScriptedBackend::new("mock", fixture).unwrap();
        let first = mock.complete(&req, 0).await.unwrap();
        assert_eq!(first.text, "Judgement: Yes\nExplanation: first");
        assert!(!first.cached);
        assert_eq!(mock.complete(&req, 1).await.unwrap().text, "Judgement: No\nExplanation: second");
        assert_eq!(mock.complete(&req, 2).await.unwrap().text, first.text);
    }

    #[tokio::test]
    async fn matchers_and_misses() {
        let fixture = FixtureFile {
            entries: vec![],
            matchers: vec![
                FixtureMatcher {
                    tag: Some("ocr".into()),
                    contains: vec![],
                    image_sha256: None,
                    responses: vec!["never".into()],
                },
                FixtureMatcher {
                    tag: Some("grade".into()),
                    contains: vec!["rule A".into(), "Determine".into()],
                    image_sha256: None,
                    responses: vec!["Judgement: Yes".into()],
                },
            ],
        };
        let mock = ScriptedBackend::new("mock", fixture).unwrap();
        assert_eq!(mock.complete(&request("rule A"), 3).await.unwrap().text, "Judgement: Yes");
        assert!(matches!(
            mock.complete(&request("rule B"), 0).await,
            Err(BackendError::FixtureMiss { .. })
        ));
    }

    #[tokio::test]
    async fn image_digest_matcher() {
        let img = vec![9u8, 9, 9];
        let digest = hex::encode(Sha256::digest(&img));
        let fixture = FixtureFile {
            entries: vec![],
            matchers: vec![FixtureMatcher {
                tag: None,
                contains: vec![],
                image_sha256: Some(digest.to_uppercase()),
                responses: vec!["v0".into(), "v1".into()],
            }],
        };
        let mock = ScriptedBackend::new("mock", fixture).unwrap();
        let mut req = request("x");
        req.user_parts.push(UserPart::image(img, "image/png"));
        assert_eq!(mock.complete(&req, 1).await.unwrap().text, "v1");
    }
}
