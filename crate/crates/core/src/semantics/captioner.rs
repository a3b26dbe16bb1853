use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::attributes::GarmentAttributes;
use super::caption::{clean_caption, parse_caption, serialize_caption};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// What a remote captioner can answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientResponse {
    Caption(String),
    Timeout,
    SafetyRejection,
    Failure(String),
}

/// A request interface to an image captioner. Prompt construction is the
/// adapter's business.
pub trait CaptionClient: Send + Sync {
    fn name(&self) -> &str;
    fn request(&self, garment: &ImageTensor) -> ClientResponse;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSource {
    Primary,
    Fallback,
    LocalTemplate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionResult {
    /// Cleaned, template-conformant caption.
    pub text: String,
    pub source: CaptionSource,
    /// The client's answer before cleaning.
    pub raw: String,
}

impl CaptionResult {
    pub fn attributes(&self) -> Result<GarmentAttributes> {
        parse_caption(&self.text)
    }

    /// Wraps an already-written caption (e.g. `caption.txt`), cleaning and
    /// checking it.
    pub fn from_stored(raw: &str) -> Result<Self> {
        let text = clean_caption(raw)?;
        parse_caption(&text)?;
        Ok(Self {
            text,
            source: CaptionSource::LocalTemplate,
            raw: raw.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionPolicy {
    /// Extra attempts on the same client after a timeout.
    pub timeout_retries: usize,
}

impl Default for CaptionPolicy {
    fn default() -> Self {
        Self { timeout_retries: 1 }
    }
}

/// One attempt in the fallback chain, for audit logs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attempt {
    pub client: String,
    pub outcome: String,
}

/// Primary and fallback remote clients; either may be absent.
#[derive(Default)]
pub struct CaptionClients<'a> {
    pub primary: Option<&'a dyn CaptionClient>,
    pub fallback: Option<&'a dyn CaptionClient>,
}

fn try_client(
    client: &dyn CaptionClient,
    garment: &ImageTensor,
    policy: &CaptionPolicy,
    trail: &mut Vec<Attempt>,
) -> Option<(String, String)> {
    for _ in 0..=policy.timeout_retries {
        let response = client.request(garment);
        let outcome = match &response {
            ClientResponse::Caption(raw) => {
                match clean_caption(raw).and_then(|t| parse_caption(&t).map(|_| t)) {
                    Ok(text) => {
                        trail.push(Attempt {
                            client: client.name().into(),
                            outcome: "caption".into(),
                        });
                        return Some((text, raw.clone()));
                    }
                    Err(e) => format!("malformed: {e}"),
                }
            }
            ClientResponse::Timeout => "timeout".into(),
            ClientResponse::SafetyRejection => "safety rejection".into(),
            ClientResponse::Failure(msg) => format!("failure: {msg}"),
        };
        trail.push(Attempt {
            client: client.name().into(),
            outcome,
        });
        if response != ClientResponse::Timeout {
            break;
        }
    }
    None
}

/// Primary client, then fallback, then the local template rendered from
/// `annotation`. Whatever the source, the returned text parses.
pub fn generate_caption(
    garment: &ImageTensor,
    clients: &CaptionClients<'_>,
    annotation: Option<&GarmentAttributes>,
    policy: &CaptionPolicy,
) -> Result<CaptionResult> {
    generate_caption_traced(garment, clients, annotation, policy).map(|(r, _)| r)
}

/// [`generate_caption`] that also returns every attempt made.
pub fn generate_caption_traced(
    garment: &ImageTensor,
    clients: &CaptionClients<'_>,
    annotation: Option<&GarmentAttributes>,
    policy: &CaptionPolicy,
) -> Result<(CaptionResult, Vec<Attempt>)> {
    let mut trail = Vec::new();
    for (client, source) in [
        (clients.primary, CaptionSource::Primary),
        (clients.fallback, CaptionSource::Fallback),
    ] {
        if let Some(c) = client {
            if let Some((text, raw)) = try_client(c, garment, policy, &mut trail) {
                return Ok((CaptionResult { text, source, raw }, trail));
            }
        }
    }
    match annotation {
        Some(a) => {
            let text = serialize_caption(a);
            Ok((
                CaptionResult {
                    raw: text.clone(),
                    text,
                    source: CaptionSource::LocalTemplate,
                },
                trail,
            ))
        }
        None => {
            let tried = trail
                .iter()
                .map(|a| format!("{}: {}", a.client, a.outcome))
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::CaptionUnavailable(if tried.is_empty() {
                "no remote client configured and no attribute annotation".into()
            } else {
                format!("{tried}; no attribute annotation")
            }))
        }
    }
}

/// Replays a fixed list of responses, then repeats the last one.
pub struct ScriptedClient {
    name: String,
    script: Vec<ClientResponse>,
    cursor: Mutex<usize>,
}

impl ScriptedClient {
    pub fn new(name: impl Into<String>, script: Vec<ClientResponse>) -> Self {
        assert!(!script.is_empty(), "script must not be empty");
        Self {
            name: name.into(),
            script,
            cursor: Mutex::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        *self.cursor.lock().expect("poisoned")
    }
}

impl CaptionClient for ScriptedClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn request(&self, _garment: &ImageTensor) -> ClientResponse {
        let mut i = self.cursor.lock().expect("poisoned");
        let r = self.script[(*i).min(self.script.len() - 1)].clone();
        *i += 1;
        r
    }
}

/// Runs an external program with the garment PNG path as its last argument.
/// Exit 0 means stdout is the caption; exit 3 signals a safety rejection;
/// exceeding `timeout` kills the child.
pub struct CommandClient {
    name: String,
    program: String,
    args: Vec<String>,
    timeout: Duration,
    scratch: PathBuf,
}

pub const SAFETY_EXIT_CODE: i32 = 3;

impl CommandClient {
    pub fn new(name: impl Into<String>, command_line: &str, timeout: Duration) -> Result<Self> {
        let mut parts = command_line.split_whitespace().map(String::from);
        let program = parts
            .next()
            .ok_or_else(|| Error::Argument("empty captioner command".into()))?;
        Ok(Self {
            name: name.into(),
            program,
            args: parts.collect(),
            timeout,
            scratch: std::env::temp_dir(),
        })
    }

    fn run(&self, garment: &ImageTensor) -> std::io::Result<ClientResponse> {
        static COUNTER: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
        let n = COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let path = self.scratch.join(format!(
            "garment-{}-{}-{n}.png",
            std::process::id(),
            self.name
        ));
        garment.save_png(&path).map_err(std::io::Error::other)?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(&path)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            if let Some(s) = child.try_wait()? {
                break Some(s);
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let _ = std::fs::remove_file(&path);
        let Some(status) = status else {
            return Ok(ClientResponse::Timeout);
        };
        let mut out = String::new();
        if let Some(mut s) = child.stdout.take() {
            s.read_to_string(&mut out)?;
        }
        Ok(match status.code() {
            Some(0) => ClientResponse::Caption(out),
            Some(SAFETY_EXIT_CODE) => ClientResponse::SafetyRejection,
            code => ClientResponse::Failure(format!("exit status {code:?}")),
        })
    }
}

impl CaptionClient for CommandClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn request(&self, garment: &ImageTensor) -> ClientResponse {
        self.run(garment)
            .unwrap_or_else(|e| ClientResponse::Failure(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ValueRange;
    use rand::SeedableRng;

    fn garment() -> ImageTensor {
        ImageTensor::filled(0.0, 3, 4, 3, ValueRange::Signed).unwrap()
    }

    fn attrs() -> GarmentAttributes {
        GarmentAttributes::random(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn primary_success() {
        let good = serialize_caption(&attrs());
        let p = ScriptedClient::new(
            "p",
            vec![ClientResponse::Caption(format!("Assistant: {good} [id=7]"))],
        );
        let f = ScriptedClient::new("f", vec![ClientResponse::Failure("unused".into())]);
        let clients = CaptionClients {
            primary: Some(&p),
            fallback: Some(&f),
        };
        let r = generate_caption(&garment(), &clients, None, &CaptionPolicy::default()).unwrap();
        assert_eq!(r.source, CaptionSource::Primary);
        assert_eq!(r.text, good);
        assert!(r.raw.starts_with("Assistant:"));
        assert_eq!(f.calls(), 0);
    }

    #[test]
    fn safety_rejection_falls_back() {
        let good = serialize_caption(&attrs());
        let p = ScriptedClient::new("p", vec![ClientResponse::SafetyRejection]);
        let f = ScriptedClient::new("f", vec![ClientResponse::Caption(good.clone())]);
        let clients = CaptionClients {
            primary: Some(&p),
            fallback: Some(&f),
        };
        let r = generate_caption(&garment(), &clients, None, &CaptionPolicy::default()).unwrap();
        assert_eq!(r.source, CaptionSource::Fallback);
        assert_eq!(p.calls(), 1);
    }

    #[test]
    fn timeout_is_retried() {
        let good = serialize_caption(&attrs());
        let p = ScriptedClient::new(
            "p",
            vec![ClientResponse::Timeout, ClientResponse::Caption(good)],
        );
        let clients = CaptionClients {
            primary: Some(&p),
            fallback: None,
        };
        let r = generate_caption(&garment(), &clients, None, &CaptionPolicy::default()).unwrap();
        assert_eq!(r.source, CaptionSource::Primary);
        assert_eq!(p.calls(), 2);
    }

    #[test]
    fn local_template_last() {
        let p = ScriptedClient::new("p", vec![ClientResponse::Caption("a nice shirt".into())]);
        let f = ScriptedClient::new("f", vec![ClientResponse::Timeout]);
        let clients = CaptionClients {
            primary: Some(&p),
            fallback: Some(&f),
        };
        let a = attrs();
        let (r, trail) =
            generate_caption_traced(&garment(), &clients, Some(&a), &CaptionPolicy::default())
                .unwrap();
        assert_eq!(r.source, CaptionSource::LocalTemplate);
        assert_eq!(r.attributes().unwrap(), a);
        assert_eq!(trail.len(), 3);
    }

    #[test]
    fn nothing_available() {
        let p = ScriptedClient::new("p", vec![ClientResponse::Failure("500".into())]);
        let clients = CaptionClients {
            primary: Some(&p),
            fallback: None,
        };
        let e =
            generate_caption(&garment(), &clients, None, &CaptionPolicy::default()).unwrap_err();
        assert!(
            matches!(e, Error::CaptionUnavailable(ref m) if m.contains("500")),
            "{e}"
        );
    }

    #[cfg(unix)]
    #[test]
    fn command_client_protocol() {
        let good = serialize_caption(&attrs());
        let ok =
            CommandClient::new("echo", &format!("echo {good}"), Duration::from_secs(10)).unwrap();
        match ok.request(&garment()) {
            ClientResponse::Caption(s) => assert!(s.starts_with(&good)),
            other => panic!("{other:?}"),
        }
        let dir = tempfile::tempdir().unwrap();
        let script = |name: &str, body: &str| {
            use std::os::unix::fs::PermissionsExt;
            let p = dir.path().join(name);
            std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
            std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
            p.to_string_lossy().into_owned()
        };
        let slow = CommandClient::new(
            "slow",
            &script("slow.sh", "sleep 5"),
            Duration::from_millis(50),
        )
        .unwrap();
        assert_eq!(slow.request(&garment()), ClientResponse::Timeout);
        let refuse = CommandClient::new(
            "refuse",
            &script("refuse.sh", "exit 3"),
            Duration::from_secs(10),
        )
        .unwrap();
        assert_eq!(refuse.request(&garment()), ClientResponse::SafetyRejection);
        let failing = CommandClient::new("false", "false", Duration::from_secs(10)).unwrap();
        assert!(matches!(
            failing.request(&garment()),
            ClientResponse::Failure(_)
        ));
    }
}
