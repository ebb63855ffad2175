#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand_pcg::Pcg64;
use scale_scribe::corpus::{CorpusRecord, TranscriptKind};
use scale_scribe::metrics::uniform_index;
use scale_scribe::parser::render;
use scale_scribe::{AssessmentRecord, Corpus, ScaleDefinition, TranscriptDoc};
use serde_json::Value;

/// Corpus with per-item ratings drawn uniformly from 1..=7.
pub fn synthetic_corpus(patients: usize, visits: usize, seed: u64, kinds: &[TranscriptKind], languages: &[&str]) -> Corpus {
    let mut rng = Pcg64::new(seed as u128, 77);
    let mut corpus = Corpus::new();
    for p in 0..patients {
        let patient = format!("syn{p:03}");
        let language = languages[p % languages.len()];
        for v in 0..visits {
            let ratings: Vec<u8> = (0..24).map(|_| uniform_index(&mut rng, 7) as u8 + 1).collect();
            for kind in kinds {
                corpus
                    .insert(CorpusRecord::Transcript(TranscriptDoc {
                        patient_id: patient.clone(),
                        visit_index: v as u32,
                        kind: *kind,
                        language: language.into(),
                        text: format!("Interviewer: How have you been? ({kind}, {patient}, visit {v})\nPatient: Fine."),
                    }))
                    .unwrap();
            }
            corpus
                .insert(CorpusRecord::Assessment(AssessmentRecord::new(patient.clone(), v as u32, ratings).unwrap()))
                .unwrap();
        }
    }
    corpus
}

#[derive(Debug, Clone)]
pub struct SeenRequest {
    pub authorization: Option<String>,
    pub body: Value,
}

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Reply {
    pub fn chat(content: &str) -> Reply {
        let body = serde_json::json!({
            "id": "cmpl-1",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
        });
        Reply {
            status: 200,
            headers: Vec::new(),
            body: body.to_string(),
        }
    }

    pub fn status(status: u16) -> Reply {
        Reply {
            status,
            headers: Vec::new(),
            body: "{\"error\": \"nope\"}".into(),
        }
    }
}

type Handler = dyn Fn(&SeenRequest, usize) -> Reply + Send + Sync;

/// Minimal HTTP/1.1 server answering chat-completion POSTs.
pub struct MockServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<SeenRequest>>>,
    pub peak_in_flight: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start(delay: Duration, handler: impl Fn(&SeenRequest, usize) -> Reply + Send + Sync + 'static) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let peak = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        {
            let requests = requests.clone();
            let peak = peak.clone();
            thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    let (requests, peak, in_flight, handler) =
                        (requests.clone(), peak.clone(), in_flight.clone(), handler.clone());
                    thread::spawn(move || {
                        let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        peak.fetch_max(now, Ordering::SeqCst);
                        serve(stream, delay, &requests, handler.as_ref());
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                    });
                }
            });
        }
        MockServer {
            url,
            requests,
            peak_in_flight: peak,
        }
    }

    pub fn count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

fn serve(stream: TcpStream, delay: Duration, requests: &Mutex<Vec<SeenRequest>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    let mut authorization = None;
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let header = line.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            match name.trim().to_ascii_lowercase().as_str() {
                "content-length" => content_length = value.trim().parse().unwrap_or(0),
                "authorization" => authorization = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).unwrap();
    let seen = SeenRequest {
        authorization,
        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
    };
    let n = {
        let mut all = requests.lock().unwrap();
        all.push(seen.clone());
        all.len()
    };
    thread::sleep(delay);
    let reply = handler(&seen, n);
    let mut out = stream;
    let mut head = format!(
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        reply.status,
        reply.body.len()
    );
    for (k, v) in &reply.headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    let _ = out.write_all(head.as_bytes());
    let _ = out.write_all(reply.body.as_bytes());
    let _ = out.flush();
}

/// A deterministic "model": ratings derived from the final user message.
pub fn hashed_answer(request: &SeenRequest) -> String {
    let text = request.body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or("");
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    let ratings: Vec<u8> = (0..24).map(|i| ((h >> (i % 60)) % 7) as u8 + 1).collect();
    let record = AssessmentRecord::new("x", 0, ratings).unwrap();
    render(&record, &ScaleDefinition::bprs_e())
}
