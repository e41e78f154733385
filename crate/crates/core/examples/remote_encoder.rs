//! Fetching class embeddings from a text-encoder service.
//!
//! A tiny in-process server plays the encoder: it embeds each text as
//! letter frequencies.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use zsd_kit::embedding::{build_prompt, cosine_similarity, EncoderClient, PromptSpec};

fn letter_counts(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; 26];
    for c in text.to_ascii_lowercase().bytes().filter(u8::is_ascii_lowercase) {
        v[(c - b'a') as usize] += 1.0;
    }
    v
}

fn serve_one(listener: &TcpListener) -> std::io::Result<()> {
    let (mut stream, _) = listener.accept()?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body)?;
    let req: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
    let rows: Vec<Vec<f64>> = req["texts"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|t| letter_counts(t.as_str().unwrap_or("")))
        .collect();
    let reply = serde_json::json!({ "embeddings": rows }).to_string();
    write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    )
}

fn main() -> zsd_kit::Result<()> {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let url = format!("http://{}/encode", listener.local_addr().unwrap());
    let server = thread::spawn(move || serve_one(&listener));

    let classes = ["zebra", "yak", "owl"];
    let prompts = classes
        .iter()
        .map(|c| build_prompt(&PromptSpec::new(*c)))
        .collect::<zsd_kit::Result<Vec<_>>>()?;
    let set = EncoderClient::new(url)
        .encode(&prompts)?
        .renamed(classes.iter().map(|c| c.to_string()).collect())?;
    server.join().unwrap().expect("server");

    println!("{} embeddings of width {}", set.len(), set.dim());
    let cos = cosine_similarity(set.vectors(), set.vectors())?;
    println!("pairwise cosine:\n{cos:.3}");
    Ok(())
}
