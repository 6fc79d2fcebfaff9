use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{token_proxy, PlanError, PlanGraph, PlannerOutput, PlannerRequest};

/// Attempts after the first on transport errors.
pub const TRANSPORT_RETRIES: u32 = 2;

/// Where an external planner lives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    /// One JSON POST per request. The key is sent as a bearer token and
    /// never written out.
    Http {
        url: String,
        timeout_secs: u64,
        #[serde(default, skip_serializing)]
        api_key: Option<String>,
    },
    /// A process fed the request on stdin; the plan is read from stdout.
    Command { program: String, args: Vec<String> },
}

impl Endpoint {
    /// `http://...`/`https://...` URLs become HTTP endpoints; anything else
    /// is a whitespace-separated command line.
    pub fn parse(spec: &str) -> Self {
        let spec = spec.trim();
        if spec.starts_with("http://") || spec.starts_with("https://") {
            Endpoint::Http { url: spec.to_string(), timeout_secs: 120, api_key: None }
        } else {
            let mut parts = spec.split_whitespace().map(str::to_string);
            Endpoint::Command { program: parts.next().unwrap_or_default(), args: parts.collect() }
        }
    }

    /// Attaches a key to HTTP endpoints; commands ignore it.
    pub fn with_api_key(self, key: Option<String>) -> Self {
        match self {
            Endpoint::Http { url, timeout_secs, .. } => Endpoint::Http { url, timeout_secs, api_key: key },
            other => other,
        }
    }

    fn send(&self, body: &str) -> Result<String, String> {
        match self {
            Endpoint::Http { url, timeout_secs, api_key } => {
                let client = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(*timeout_secs))
                    .build()
                    .map_err(|e| e.to_string())?;
                let mut req = client.post(url).header("content-type", "application/json");
                if let Some(key) = api_key {
                    req = req.bearer_auth(key);
                }
                let resp = req
                    .body(body.to_string())
                    .send()
                    .and_then(|r| r.error_for_status())
                    .map_err(|e| e.to_string())?;
                resp.text().map_err(|e| e.to_string())
            }
            Endpoint::Command { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::null())
                    .spawn()
                    .map_err(|e| format!("spawn {program}: {e}"))?;
                {
                    let mut stdin = child.stdin.take().expect("piped");
                    // The child may exit without reading; a broken pipe is not our failure.
                    let _ = stdin.write_all(body.as_bytes()).and_then(|_| stdin.write_all(b"\n"));
                }
                let mut out = String::new();
                child.stdout.take().expect("piped").read_to_string(&mut out).map_err(|e| e.to_string())?;
                let status = child.wait().map_err(|e| e.to_string())?;
                if !status.success() {
                    return Err(format!("{program} exited with {status}"));
                }
                Ok(out)
            }
        }
    }
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Sends the request, retrying transport failures, and parses the plan.
pub fn external_plan(request: &PlannerRequest, endpoint: &Endpoint) -> Result<PlannerOutput, PlanError> {
    let mut last = String::new();
    for attempt in 0..=TRANSPORT_RETRIES {
        match endpoint.send(&request.document) {
            Ok(text) => return parse_response(request, &text),
            Err(e) => {
                warn!(attempt, error = %e, "external planner transport failure");
                last = e;
            }
        }
    }
    Err(PlanError::Transport(last))
}

fn parse_response(request: &PlannerRequest, text: &str) -> Result<PlannerOutput, PlanError> {
    let value: serde_json::Value = serde_json::from_str(text.trim()).map_err(|e| PlanError::Schema(e.to_string()))?;
    let plan = PlanGraph::from_json(&value).map_err(PlanError::Schema)?;
    let tokens = match value.get("usage") {
        Some(u) => {
            let u: Usage = serde_json::from_value(u.clone()).map_err(|e| PlanError::Schema(format!("usage: {e}")))?;
            u.prompt_tokens + u.completion_tokens
        }
        None => token_proxy(request.chars() + text.trim().chars().count()),
    };
    Ok(PlannerOutput { plan, tokens })
}

#[cfg(test)]
mod tests {
    use std::io::BufRead;
    use std::net::TcpListener;

    use super::*;
    use crate::planner::{ActionNode, HighLevelKind, Task};
    use crate::semantic_state::{GoalCondition, SemanticState};

    fn fixture_plan() -> PlanGraph {
        let mut g = PlanGraph::new();
        g.add(ActionNode::new("n0", HighLevelKind::OpenClose, &[("object", "fridge"), ("state", "open")]));
        g.add(ActionNode::new("n1", HighLevelKind::FetchAndPlace, &[("object", "apple"), ("receptacle", "fridge")]));
        g.depend("n0", "n1");
        g
    }

    fn request() -> PlannerRequest {
        let s = SemanticState::new();
        super::super::build_prompt(&Task::new("t", GoalCondition::default()), &s, &Default::default())
    }

    /// Serves `bodies` to successive connections, one response each.
    fn serve(bodies: Vec<(u16, String)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (status, body) in bodies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = std::io::BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/plan")
    }

    #[test]
    fn http_echo_of_canned_plan_parses() {
        let mut body = fixture_plan().to_json();
        body["usage"] = serde_json::json!({"prompt_tokens": 100, "completion_tokens": 20});
        let url = serve(vec![(200, body.to_string())]);
        let out = external_plan(&request(), &Endpoint::parse(&url)).unwrap();
        assert_eq!(out.plan, fixture_plan());
        assert_eq!(out.tokens, 120);
    }

    #[test]
    fn api_key_is_sent_but_never_serialized() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/plan", listener.local_addr().unwrap());
        let seen = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = std::io::BufReader::new(stream.try_clone().unwrap());
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.to_ascii_lowercase().starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let body = r#"{"nodes": [], "edges": []}"#;
            let reply = format!("HTTP/1.1 200 OK\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}", body.len());
            stream.write_all(reply.as_bytes()).unwrap();
            auth
        });
        let ep = Endpoint::parse(&url).with_api_key(Some("sk-test".into()));
        assert!(!serde_json::to_string(&ep).unwrap().contains("sk-test"));
        external_plan(&request(), &ep).unwrap();
        assert_eq!(seen.join().unwrap().to_ascii_lowercase(), "authorization: bearer sk-test");
    }

    #[test]
    fn http_retries_then_succeeds() {
        let url = serve(vec![(500, "{}".into()), (503, "{}".into()), (200, fixture_plan().to_json().to_string())]);
        let req = request();
        let out = external_plan(&req, &Endpoint::parse(&url)).unwrap();
        let text = fixture_plan().to_json().to_string();
        assert_eq!(out.tokens, token_proxy(req.chars() + text.chars().count()));
    }

    #[test]
    fn http_gives_up_after_retries() {
        let url = serve(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
        assert!(matches!(external_plan(&request(), &Endpoint::parse(&url)), Err(PlanError::Transport(_))));
    }

    #[cfg(unix)]
    #[test]
    fn subprocess_echo_and_malformed() {
        let body = fixture_plan().to_json().to_string();
        let ok = Endpoint::Command {
            program: "sh".into(),
            args: vec!["-c".into(), format!("cat >/dev/null; printf '%s' '{body}'")],
        };
        assert_eq!(external_plan(&request(), &ok).unwrap().plan, fixture_plan());

        let bad = Endpoint::Command { program: "sh".into(), args: vec!["-c".into(), "cat >/dev/null; echo 'not json'".into()] };
        assert!(matches!(external_plan(&request(), &bad), Err(PlanError::Schema(_))));

        let missing = Endpoint::Command { program: "/nonexistent/planner".into(), args: vec![] };
        assert!(matches!(external_plan(&request(), &missing), Err(PlanError::Transport(_))));
    }

    #[cfg(unix)]
    #[test]
    fn subprocess_receives_the_request_document() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("req.json");
        let cmd = format!("cat > {}; printf '{{\"nodes\": [], \"edges\": []}}'", path.display());
        let ep = Endpoint::Command { program: "sh".into(), args: vec!["-c".into(), cmd] };
        let req = request();
        assert!(external_plan(&req, &ep).unwrap().plan.is_empty());
        assert_eq!(std::fs::read_to_string(path).unwrap().trim_end(), req.document);
    }

    #[test]
    fn cyclic_response_parses_but_fails_validation() {
        let mut g = fixture_plan();
        g.depend("n1", "n0");
        let url = serve(vec![(200, g.to_json().to_string())]);
        let out = external_plan(&request(), &Endpoint::parse(&url)).unwrap();
        let s = SemanticState::new();
        let v = super::super::validate_plan(&out.plan, &Default::default(), &s);
        assert!(v.contains(&super::super::PlanViolation::Acyclicity));
    }
}
