#![allow(dead_code)]

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::channel::mpsc::{unbounded, UnboundedReceiver, UnboundedSender};
use futures::StreamExt;
use splat4d_core::synthetic::drifting_sequence;
use splat4d_server::connection::{serve_connection, ConnectionStats, LoopConfig, WireMessage};
use splat4d_server::protocol::{
    command_text, decode_frame, Command, Event, FrameFormat, FrameHeader,
};
use splat4d_server::registry::SharedSession;
use splat4d_server::scene_store::{SceneStore, StoredScene};
use splat4d_server::session::{Session, SessionConfig};
use tokio::task::JoinHandle;

pub const SCENE_ID: &str = "drift";

pub fn store_with_scene() -> (Arc<SceneStore>, Arc<StoredScene>) {
    let store = Arc::new(SceneStore::in_memory());
    let stored = store.insert(SCENE_ID, drifting_sequence(10, 200, 10.0, 4));
    (store, stored)
}

pub fn new_session(exports: &Path) -> SharedSession {
    let (store, stored) = store_with_scene();
    Arc::new(Mutex::new(Session::new(
        "test-session",
        &stored,
        store,
        SessionConfig::new(exports),
    )))
}

pub enum Received {
    Event(Event),
    Frame(FrameHeader, usize),
}

/// A viewer stand-in talking to [`serve_connection`] over channels.
pub struct MockClient {
    tx: UnboundedSender<WireMessage>,
    rx: UnboundedReceiver<WireMessage>,
    pub handle: JoinHandle<ConnectionStats>,
}

impl MockClient {
    pub fn connect(session: SharedSession, resumed: bool, cfg: LoopConfig) -> Self {
        let (client_tx, server_rx) = unbounded();
        let (server_tx, client_rx) = unbounded();
        let handle = tokio::spawn(serve_connection(
            session, None, resumed, server_rx, server_tx, cfg,
        ));
        Self {
            tx: client_tx,
            rx: client_rx,
            handle,
        }
    }

    pub fn send_text(&self, text: impl Into<String>) {
        self.tx
            .unbounded_send(WireMessage::Text(text.into()))
            .expect("connection alive");
    }

    pub fn send(&self, seq: u64, command: &Command) {
        self.send_text(command_text(seq, command));
    }

    pub fn ack_frame(&self, seq: u32) {
        self.send_text(format!(r#"{{"type":"frame_ack","frame_seq":{seq}}}"#));
    }

    pub async fn recv(&mut self, within: Duration) -> Option<Received> {
        let message = tokio::time::timeout(within, self.rx.next()).await.ok()??;
        Some(match message {
            WireMessage::Text(t) => Received::Event(
                serde_json::from_str(&t).unwrap_or_else(|e| panic!("bad event {t}: {e}")),
            ),
            WireMessage::Binary(b) => {
                let (header, payload) = decode_frame(&b).expect("well-formed frame");
                Received::Frame(header, payload.len())
            }
            WireMessage::Close => return None,
        })
    }

    /// Next text event, acking every frame seen on the way.
    pub async fn next_event(&mut self, within: Duration) -> Event {
        let deadline = tokio::time::Instant::now() + within;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            match self.recv(left).await {
                Some(Received::Event(e)) => return e,
                Some(Received::Frame(h, _)) => self.ack_frame(h.seq),
                None => panic!("no event within {within:?}"),
            }
        }
    }

    /// Waits for the reply to `seq`, skipping other events.
    pub async fn reply(&mut self, seq: u64) -> Event {
        loop {
            let e = self.next_event(Duration::from_secs(10)).await;
            if e.reply_seq() == Some(seq) {
                return e;
            }
        }
    }

    pub async fn close(self) -> ConnectionStats {
        let _ = self.tx.unbounded_send(WireMessage::Close);
        self.handle.await.expect("connection task")
    }
}

pub fn small_hello() -> Command {
    Command::Hello {
        format: Some(FrameFormat::Rgb8),
        width: Some(64),
        height: Some(36),
        overlay: None,
    }
}
