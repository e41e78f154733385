//! Minimal HTTP/1.1 server standing in for a text encoder.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

pub struct MockEncoder {
    pub url: String,
    requests: mpsc::Receiver<String>,
}

impl MockEncoder {
    /// Serves requests forever, answering each body with `reply(body)`,
    /// which returns a status code and response body.
    pub fn start<F>(reply: F) -> Self
    where
        F: Fn(&str) -> (u16, String) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/encode", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0u8; len];
                if reader.read_exact(&mut body).is_err() {
                    continue;
                }
                let body = String::from_utf8_lossy(&body).into_owned();
                let (status, text) = reply(&body);
                let _ = tx.send(body);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
            }
        });
        MockEncoder { url, requests: rx }
    }

    /// Body of the next request received.
    pub fn last_request(&self) -> String {
        self.requests.recv().unwrap()
    }
}

/// Deterministic `n x dim` embedding rows as a response body.
pub fn embeddings_body(n: usize, dim: usize) -> String {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..dim).map(|j| ((i * 31 + j * 7) % 11) as f64 - 5.0 + 0.5).collect())
        .collect();
    serde_json::json!({ "embeddings": rows }).to_string()
}

/// Number of texts in a request body.
pub fn text_count(body: &str) -> usize {
    let v: serde_json::Value = serde_json::from_str(body).unwrap();
    v["texts"].as_array().unwrap().len()
}
