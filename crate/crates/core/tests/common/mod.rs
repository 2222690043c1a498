#![allow(dead_code)]

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use listrank::backend::Clock;
use listrank::io_trec::{load_corpus, load_queries, parse_qrels};
use listrank::model::{Corpus, Qrels, Query};

pub fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(path)
}

pub fn open(path: &str) -> BufReader<File> {
    BufReader::new(File::open(fixture(path)).unwrap_or_else(|e| panic!("{path}: {e}")))
}

pub fn read(path: &str) -> String {
    std::fs::read_to_string(fixture(path)).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub struct Bench {
    pub queries: Vec<Query>,
    pub corpus: Corpus,
    pub qrels: Qrels,
}

pub fn load_bench(dir: &str) -> Bench {
    Bench {
        queries: load_queries(open(&format!("{dir}/queries.tsv"))).unwrap(),
        corpus: load_corpus(open(&format!("{dir}/corpus.jsonl"))).unwrap().value,
        qrels: parse_qrels(open(&format!("{dir}/qrels.txt"))).unwrap().value,
    }
}

#[derive(Debug, Clone)]
pub struct Recorded {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
    /// Reading of the stub's clock when the request arrived.
    pub at: Duration,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).expect("request body is JSON")
    }
}

#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Reply {
    pub fn ok(body: serde_json::Value) -> Self {
        Self {
            status: 200,
            headers: Vec::new(),
            body: body.to_string(),
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            headers: Vec::new(),
            body: r#"{"error":{"message":"stub"}}"#.into(),
        }
    }

    pub fn with_header(mut self, k: &str, v: &str) -> Self {
        self.headers.push((k.into(), v.into()));
        self
    }

    pub fn completion(text: &str, top: &[(&str, f64)]) -> Self {
        let top: serde_json::Map<String, serde_json::Value> = top
            .iter()
            .map(|(t, lp)| (t.to_string(), serde_json::json!(lp)))
            .collect();
        Self::ok(serde_json::json!({
            "id": "cmpl-stub",
            "object": "text_completion",
            "choices": [{
                "text": text,
                "index": 0,
                "logprobs": { "tokens": [text], "top_logprobs": [top] },
                "finish_reason": "stop"
            }]
        }))
    }
}

/// Minimal HTTP/1.1 server: one request per connection, replies taken from a script (the last
/// reply repeats once the script runs out).
pub struct StubServer {
    pub url: String,
    requests: Arc<Mutex<Vec<Recorded>>>,
    stop: Arc<AtomicBool>,
    addr: std::net::SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(script: Vec<Reply>, clock: Arc<dyn Clock>) -> Self {
        assert!(!script.is_empty());
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let (req, stp) = (requests.clone(), stop.clone());
        let handle = std::thread::spawn(move || {
            let mut served = 0usize;
            for stream in listener.incoming() {
                if stp.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let reply = &script[served.min(script.len() - 1)];
                served += 1;
                serve(stream, reply, clock.as_ref(), &req);
            }
        });
        Self {
            url: format!("http://{addr}/v1/completions"),
            requests,
            stop,
            addr,
            handle: Some(handle),
        }
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, reply: &Reply, clock: &dyn Clock, log: &Mutex<Vec<Recorded>>) -> Option<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).ok()?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let (k, v) = line.split_once(':')?;
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    let len: usize = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    log.lock().unwrap().push(Recorded {
        method,
        path,
        headers,
        body: String::from_utf8(body).ok()?,
        at: clock.now(),
    });

    let mut out = stream;
    let mut head = format!(
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        reply.status,
        reply.body.len()
    );
    for (k, v) in &reply.headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    out.write_all(head.as_bytes()).ok()?;
    out.write_all(reply.body.as_bytes()).ok()?;
    out.flush().ok()
}
