//! LLM backends: the trait, the fixture-driven mock, and test helpers.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no canned response for prompt sha256 {sha} (seed {seed})")]
    MissingResponse { sha: String, seed: u64 },
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("malformed backend response: {0}")]
    InvalidResponse(String),
    #[error("mock fixture error at record {record}: {reason}")]
    Fixture { record: usize, reason: String },
}

impl BackendError {
    /// Whether retrying the same request may succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A text-completion service.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, prompt: &str, sampling_seed: u64) -> Result<String, BackendError>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for &B {
    fn complete(&self, prompt: &str, sampling_seed: u64) -> Result<String, BackendError> {
        (**self).complete(prompt, sampling_seed)
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn complete(&self, prompt: &str, sampling_seed: u64) -> Result<String, BackendError> {
        (**self).complete(prompt, sampling_seed)
    }
}

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

const RECORD_SEPARATOR: &str = "%%%";
const HEADER_KEY: &str = "PROMPT_SHA256";

/// Canned completions keyed by prompt hash.
///
/// Fixture records are separated by `%%%` lines. Each record starts with a
/// `PROMPT_SHA256 <hex>` line, optionally followed on the same line by
/// `SEED <n>`; the rest of the record is the completion. A record with a
/// seed answers only that sampling seed. Seedless records sharing a hash
/// form a list answered as `list[seed % len]`.
#[derive(Debug, Default, Clone)]
pub struct MockBackend {
    exact: BTreeMap<(String, u64), String>,
    rotating: BTreeMap<String, Vec<String>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sha: impl Into<String>, seed: Option<u64>, completion: impl Into<String>) {
        let sha = sha.into().to_ascii_lowercase();
        match seed {
            Some(s) => {
                self.exact.insert((sha, s), completion.into());
            }
            None => self.rotating.entry(sha).or_default().push(completion.into()),
        }
    }

    pub fn insert_prompt(&mut self, prompt: &str, seed: Option<u64>, completion: impl Into<String>) {
        self.insert(prompt_sha256(prompt), seed, completion);
    }

    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let mut mock = MockBackend::new();
        let mut records: Vec<Vec<&str>> = vec![Vec::new()];
        for line in text.lines() {
            if line.trim_end() == RECORD_SEPARATOR {
                records.push(Vec::new());
            } else {
                records.last_mut().expect("non-empty").push(line);
            }
        }
        for (idx, lines) in records.iter().enumerate() {
            let mut it = lines.iter().skip_while(|l| l.trim().is_empty());
            let Some(header) = it.next() else {
                continue;
            };
            let fields: Vec<&str> = header.split_whitespace().collect();
            let err = |reason: &str| BackendError::Fixture {
                record: idx,
                reason: reason.to_string(),
            };
            let (sha, seed) = match fields.as_slice() {
                [HEADER_KEY, sha] => (*sha, None),
                [HEADER_KEY, sha, "SEED", seed] => {
                    (*sha, Some(seed.parse::<u64>().map_err(|_| err("invalid SEED value"))?))
                }
                _ => return Err(err("expected `PROMPT_SHA256 <hex> [SEED <n>]` header")),
            };
            if sha.len() != 64 || !sha.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(err("prompt hash must be 64 hex digits"));
            }
            let body: Vec<&str> = it.copied().collect();
            let completion = body.join("\n").trim_matches('\n').to_string();
            mock.insert(sha, seed, completion);
        }
        Ok(mock)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read mock fixture {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Serializes to the fixture format; `parse(to_fixture_string())` is equivalent.
    pub fn to_fixture_string(&self) -> String {
        let mut out = String::new();
        let mut first = true;
        let mut push = |header: String, body: &str| {
            if !first {
                out.push_str(RECORD_SEPARATOR);
                out.push('\n');
            }
            first = false;
            out.push_str(&header);
            out.push('\n');
            out.push_str(body);
            out.push('\n');
        };
        for ((sha, seed), body) in &self.exact {
            push(format!("{HEADER_KEY} {sha} SEED {seed}"), body);
        }
        for (sha, bodies) in &self.rotating {
            for body in bodies {
                push(format!("{HEADER_KEY} {sha}"), body);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.exact.len() + self.rotating.values().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl LlmBackend for MockBackend {
    fn complete(&self, prompt: &str, sampling_seed: u64) -> Result<String, BackendError> {
        let sha = prompt_sha256(prompt);
        if let Some(c) = self.exact.get(&(sha.clone(), sampling_seed)) {
            return Ok(c.clone());
        }
        match self.rotating.get(&sha) {
            Some(list) if !list.is_empty() => Ok(list[(sampling_seed % list.len() as u64) as usize].clone()),
            _ => Err(BackendError::MissingResponse {
                sha,
                seed: sampling_seed,
            }),
        }
    }
}

/// Returns queued responses in call order and logs every prompt.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    responses: Mutex<VecDeque<Result<String, String>>>,
    calls: Mutex<Vec<(String, u64)>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend {
            responses: Mutex::new(responses.into_iter().map(|s| Ok(s.into())).collect()),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Queues a transport failure.
    pub fn push_failure(&self, message: impl Into<String>) {
        self.responses.lock().unwrap().push_back(Err(message.into()));
    }

    pub fn push(&self, response: impl Into<String>) {
        self.responses.lock().unwrap().push_back(Ok(response.into()));
    }

    pub fn calls(&self) -> Vec<(String, u64)> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, prompt: &str, sampling_seed: u64) -> Result<String, BackendError> {
        self.calls.lock().unwrap().push((prompt.to_string(), sampling_seed));
        match self.responses.lock().unwrap().pop_front() {
            Some(Ok(r)) => Ok(r),
            Some(Err(msg)) => Err(BackendError::Transport(msg)),
            None => Err(BackendError::MissingResponse {
                sha: prompt_sha256(prompt),
                seed: sampling_seed,
            }),
        }
    }
}

/// Wraps a backend and records every successful exchange as a mock record.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<MockBackend>,
}

impl<B: LlmBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            recorded: Mutex::new(MockBackend::new()),
        }
    }

    pub fn recorded(&self) -> MockBackend {
        self.recorded.lock().unwrap().clone()
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: LlmBackend> LlmBackend for RecordingBackend<B> {
    fn complete(&self, prompt: &str, sampling_seed: u64) -> Result<String, BackendError> {
        let out = self.inner.complete(prompt, sampling_seed)?;
        self.recorded
            .lock()
            .unwrap()
            .insert_prompt(prompt, Some(sampling_seed), out.clone());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_is_lowercase_hex() {
        assert_eq!(
            prompt_sha256("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn fixture_parse_and_lookup() {
        let sha = prompt_sha256("hello");
        let text = format!(
            "PROMPT_SHA256 {sha}\nfirst\nline two\n%%%\nPROMPT_SHA256 {sha}\nsecond\n%%%\nPROMPT_SHA256 {sha} SEED 9\npinned\n"
        );
        let mock = MockBackend::parse(&text).unwrap();
        assert_eq!(mock.len(), 3);
        assert_eq!(mock.complete("hello", 0).unwrap(), "first\nline two");
        assert_eq!(mock.complete("hello", 1).unwrap(), "second");
        assert_eq!(mock.complete("hello", 2).unwrap(), "first\nline two");
        assert_eq!(mock.complete("hello", 9).unwrap(), "pinned");
        assert!(matches!(
            mock.complete("other", 0),
            Err(BackendError::MissingResponse { .. })
        ));
    }

    #[test]
    fn fixture_round_trips() {
        let mut mock = MockBackend::new();
        mock.insert_prompt("a", Some(3), "x\ny");
        mock.insert_prompt("b", None, "z");
        let again = MockBackend::parse(&mock.to_fixture_string()).unwrap();
        assert_eq!(again.complete("a", 3).unwrap(), "x\ny");
        assert_eq!(again.complete("b", 17).unwrap(), "z");
        assert_eq!(again.to_fixture_string(), mock.to_fixture_string());
    }

    #[test]
    fn malformed_header_is_reported() {
        let err = MockBackend::parse("PROMPT_SHA256 abc\nbody").unwrap_err();
        assert!(matches!(err, BackendError::Fixture { record: 0, .. }));
        let err = MockBackend::parse("%%%\nhello\n").unwrap_err();
        assert!(matches!(err, BackendError::Fixture { record: 1, .. }));
    }

    #[test]
    fn scripted_backend_replays_in_order() {
        let b = ScriptedBackend::new(["one", "two"]);
        b.push_failure("boom");
        assert_eq!(b.complete("p", 1).unwrap(), "one");
        assert_eq!(b.complete("q", 2).unwrap(), "two");
        assert!(b.complete("r", 3).unwrap_err().is_transient());
        assert!(b.complete("s", 4).is_err());
        assert_eq!(b.call_count(), 4);
        assert_eq!(b.calls()[1], ("q".to_string(), 2));
    }

    #[test]
    fn recording_backend_produces_replayable_mock() {
        let rec = RecordingBackend::new(ScriptedBackend::new(["r1", "r2"]));
        rec.complete("p1", 5).unwrap();
        rec.complete("p1", 6).unwrap();
        let mock = rec.recorded();
        assert_eq!(mock.complete("p1", 5).unwrap(), "r1");
        assert_eq!(mock.complete("p1", 6).unwrap(), "r2");
    }
}
