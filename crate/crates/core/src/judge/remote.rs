//! HTTP transport for a remote judge.
//!
//! One `POST` to the configured endpoint per query, multipart body:
//! `prompt` (text), `layout_stats` (JSON), optional `layout` (JSON) and
//! optional `image` (PNG bytes). The response body must contain a JSON object
//! with the five grade fields, either bare or inside surrounding prose.

use std::time::Duration;

use reqwest::blocking::{multipart, Client};
use serde_json::Value;

use super::{Grade, JudgeConfig, JudgeGrades, LayoutStats};
use crate::error::JudgeError;
use crate::layout::Layout;

const BACKOFF_BASE_MS: u64 = 200;

#[derive(Debug, Clone)]
pub struct RemoteJudge {
    client: Client,
    endpoint: String,
    retries: u32,
    api_key: Option<String>,
}

impl RemoteJudge {
    pub fn new(config: &JudgeConfig) -> Result<Self, JudgeError> {
        let endpoint = config.endpoint.clone().ok_or(JudgeError::MissingEndpoint)?;
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s.max(0.001)))
            .build()
            .map_err(|e| JudgeError::Transport {
                attempts: 0,
                cause: e.to_string(),
            })?;
        Ok(Self {
            client,
            endpoint,
            retries: config.retries,
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
        })
    }

    fn form(
        &self,
        prompt: &str,
        image: Option<&[u8]>,
        layout: Option<&Layout>,
        stats: &LayoutStats,
    ) -> multipart::Form {
        let mut form = multipart::Form::new()
            .text("prompt", prompt.to_string())
            .text("layout_stats", serde_json::to_string(stats).expect("stats serialize"));
        if let Some(layout) = layout {
            form = form.text(
                "layout",
                serde_json::to_string(&layout.placements).expect("layout serializes"),
            );
        }
        if let Some(bytes) = image {
            let part = multipart::Part::bytes(bytes.to_vec())
                .file_name("render.png")
                .mime_str("image/png")
                .expect("static mime");
            form = form.part("image", part);
        }
        form
    }

    /// Sends one grading request, retrying transport failures and 5xx
    /// responses with exponential backoff.
    pub fn query(
        &self,
        prompt: &str,
        image: Option<&[u8]>,
        layout: Option<&Layout>,
        stats: &LayoutStats,
    ) -> Result<JudgeGrades, JudgeError> {
        let attempts = self.retries + 1;
        let mut last_cause = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << (attempt - 1).min(10)));
            }
            let mut req = self
                .client
                .post(&self.endpoint)
                .multipart(self.form(prompt, image, layout, stats));
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("judge request attempt {} failed: {e}", attempt + 1);
                    last_cause = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let body = resp.text().map_err(|e| JudgeError::Transport {
                attempts: attempt + 1,
                cause: e.to_string(),
            })?;
            if status.is_server_error() {
                last_cause = format!("status {status}: {body}");
                continue;
            }
            if !status.is_success() {
                return Err(JudgeError::Status {
                    status: status.as_u16(),
                    body,
                });
            }
            return parse_grades(&body);
        }
        Err(JudgeError::Transport {
            attempts,
            cause: last_cause,
        })
    }
}

pub(super) fn grade_from_value(v: &Value) -> Result<Grade, String> {
    let out_of_range = |n: &dyn std::fmt::Display| format!("grade {n} outside 1..=10");
    match v {
        Value::Number(n) => {
            let f = n.as_f64().ok_or_else(|| format!("bad grade {n}"))?;
            if f.fract() != 0.0 {
                return Err(format!("grade {n} is not an integer"));
            }
            if !(1.0..=10.0).contains(&f) {
                return Err(out_of_range(n));
            }
            Ok(Grade::Score(f as u8))
        }
        Value::String(s) if s.trim().eq_ignore_ascii_case("unknown") => Ok(Grade::Unknown),
        Value::String(s) => {
            let n: u8 = s.trim().parse().map_err(|_| format!("bad grade {s:?}"))?;
            Grade::new(n).ok_or_else(|| out_of_range(&n))
        }
        other => Err(format!("bad grade {other}")),
    }
}

fn grades_from_object(obj: &Value) -> Result<JudgeGrades, String> {
    let obj = obj.get("grades").unwrap_or(obj);
    let field = |name: &str| -> Result<Grade, String> {
        let v = obj.get(name).ok_or_else(|| format!("missing field `{name}`"))?;
        grade_from_value(v).map_err(|e| format!("`{name}`: {e}"))
    };
    Ok(JudgeGrades {
        realism: field("realism")?,
        functionality: field("functionality")?,
        layout: field("layout")?,
        color_scheme: field("color_scheme")?,
        aesthetic: field("aesthetic")?,
    })
}

/// Extracts grades from a judge response body.
pub fn parse_grades(body: &str) -> Result<JudgeGrades, JudgeError> {
    let unparsable = |reason: String| JudgeError::Unparsable {
        reason,
        body: body.to_string(),
    };
    let value: Value = match serde_json::from_str(body.trim()) {
        Ok(v) => v,
        Err(_) => {
            let start = body.find('{').ok_or_else(|| unparsable("no JSON object".into()))?;
            let end = body.rfind('}').ok_or_else(|| unparsable("no JSON object".into()))?;
            if end < start {
                return Err(unparsable("no JSON object".into()));
            }
            serde_json::from_str(&body[start..=end]).map_err(|e| unparsable(e.to_string()))?
        }
    };
    grades_from_object(&value).map_err(unparsable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn parses_bare_json() {
        let g = parse_grades(r#"{"realism":7,"functionality":"8","layout":6,"color_scheme":8,"aesthetic":"unknown"}"#)
            .unwrap();
        assert_eq!(g.functionality, Grade::Score(8));
        assert_eq!(g.aesthetic, Grade::Unknown);
    }

    #[test]
    fn parses_fenced_json_in_prose() {
        let body = "Here you go:\n```json\n{\"realism\": 9, \"functionality\": 9, \"layout\": 8, \"color_scheme\": 8, \"aesthetic\": 9}\n```";
        assert_eq!(parse_grades(body).unwrap().layout, Grade::Score(8));
    }

    #[test]
    fn unparsable_body_is_carried() {
        match parse_grades("I cannot grade this") {
            Err(JudgeError::Unparsable { body, .. }) => assert_eq!(body, "I cannot grade this"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_grades(r#"{"realism":7}"#).is_err());
        assert!(
            parse_grades(r#"{"realism":7.5,"functionality":1,"layout":1,"color_scheme":1,"aesthetic":1}"#).is_err()
        );
    }

    /// Minimal HTTP responder: answers each connection with the next canned response.
    fn serve(responses: Vec<(u16, &'static str)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for (stream, (status, body)) in listener.incoming().zip(responses) {
                let mut stream = stream.unwrap();
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
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
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/judge"), hits)
    }

    fn config(endpoint: String, retries: u32) -> JudgeConfig {
        JudgeConfig {
            mode: super::super::JudgeMode::Remote,
            endpoint: Some(endpoint),
            timeout_s: 5.0,
            retries,
            ..JudgeConfig::default()
        }
    }

    const OK: &str = r#"{"realism":9,"functionality":8,"layout":7,"color_scheme":8,"aesthetic":9}"#;
    const STATS: LayoutStats = LayoutStats {
        collision_ratio: 0.0,
        constraint_ratio: 0.0,
    };

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, hits) = serve(vec![(503, "{}"), (200, OK)]);
        let judge = RemoteJudge::new(&config(url, 2)).unwrap();
        let g = judge.query("prompt", None, None, &STATS).unwrap();
        assert_eq!(g.realism, Grade::Score(9));
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn gives_up_after_bounded_retries() {
        let (url, hits) = serve(vec![(500, "a"), (500, "b")]);
        let judge = RemoteJudge::new(&config(url, 1)).unwrap();
        match judge.query("prompt", Some(b"png"), None, &STATS) {
            Err(JudgeError::Transport { attempts, cause }) => {
                assert_eq!(attempts, 2);
                assert!(cause.contains("500"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits) = serve(vec![(400, r#"{"error":"bad"}"#)]);
        let judge = RemoteJudge::new(&config(url, 3)).unwrap();
        assert!(matches!(
            judge.query("p", None, None, &STATS),
            Err(JudgeError::Status { status: 400, .. })
        ));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/judge", listener.local_addr().unwrap());
        drop(listener);
        let judge = RemoteJudge::new(&config(url, 0)).unwrap();
        assert!(matches!(
            judge.query("p", None, None, &STATS),
            Err(JudgeError::Transport { attempts: 1, .. })
        ));
    }
}
