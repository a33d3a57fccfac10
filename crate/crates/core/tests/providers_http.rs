use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};
use splat4d_core::foveation::{
    query_provider, HttpImportanceProvider, ImportanceProvider, ImportanceRequest,
    ImportanceSource, ProviderError,
};
use splat4d_core::imaging::RgbImage;
use splat4d_core::metrics_eval::{
    clip_score, EmbeddingProvider, HttpEmbeddingProvider, MetricsError,
};
use splat4d_core::rasterizer::Framebuffer;

/// Serves one canned response per entry of `replies`, forwarding each
/// request body to the returned channel.
fn stub_server(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Value>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().unwrap();
                    }
                }
            }
            let mut request = vec![0; length];
            reader.read_exact(&mut request).unwrap();
            let _ = tx.send(serde_json::from_slice(&request).unwrap_or(Value::Null));
            let mut stream = reader.into_inner();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, rx)
}

fn frame() -> Framebuffer {
    Framebuffer::new(8, 4, [0.25, 0.5, 0.75])
}

#[test]
fn importance_provider_round_trip() {
    let (url, requests) = stub_server(vec![(
        200,
        json!({"map": [[0.1, 2.0], [0.5, -1.0]]}).to_string(),
    )]);
    let provider = HttpImportanceProvider::new(url, Duration::from_secs(5));
    let fb = frame();
    let outcome = query_provider(Some(&fb), "a red car", Some(&provider), 2, 2);
    assert_eq!(outcome.source, ImportanceSource::Provider);
    assert_eq!(outcome.map.values(), &[0.1, 1.0, 0.5, 0.0]);

    let sent = requests.recv().unwrap();
    assert_eq!(sent["prompt"], "a red car");
    assert_eq!(sent["rows"], 2);
    assert_eq!(sent["cols"], 2);
    let png = base64::engine::general_purpose::STANDARD
        .decode(sent["image_png_base64"].as_str().unwrap())
        .unwrap();
    assert_eq!(
        RgbImage::decode_png(&png).unwrap(),
        RgbImage::from_framebuffer(&fb)
    );
}

#[test]
fn importance_provider_errors_fall_back() {
    let (url, _requests) = stub_server(vec![
        (503, "{}".into()),
        (200, "not json".into()),
        (200, json!({"map": [[0.5]]}).to_string()),
    ]);
    let provider = HttpImportanceProvider::new(url, Duration::from_secs(5));
    let request = ImportanceRequest {
        image_png: &[],
        prompt: "",
        rows: 2,
        cols: 3,
    };
    assert_eq!(
        provider.importance(&request).unwrap_err(),
        ProviderError::Status(503)
    );
    assert!(matches!(
        provider.importance(&request).unwrap_err(),
        ProviderError::Malformed(_)
    ));
    let outcome = query_provider(None, "", Some(&provider), 2, 3);
    assert_eq!(outcome.source, ImportanceSource::Heuristic);
    assert!(outcome.diagnostic.is_some());
    assert_eq!(outcome.map.values().len(), 6);
}

#[test]
fn embedding_provider_normalizes_and_scores() {
    let (url, requests) = stub_server(vec![
        (200, json!({"embedding": [3.0, 4.0]}).to_string()),
        (200, json!({"embedding": [0.0, 2.0]}).to_string()),
        (200, json!({"embedding": [0.0, 0.0]}).to_string()),
    ]);
    let provider = HttpEmbeddingProvider::new(url, Duration::from_secs(5));
    let image = RgbImage::from_framebuffer(&frame());
    // Requests go out text first, then image.
    let score = clip_score("a blue sky", &image, &provider).unwrap();
    assert!((score - 0.8).abs() < 1e-7, "{score}");
    assert_eq!(requests.recv().unwrap(), json!({"text": "a blue sky"}));
    assert!(requests.recv().unwrap()["image_png_base64"].is_string());
    assert_eq!(
        provider.embed_text("zero").unwrap_err(),
        MetricsError::ZeroVector
    );
}
