//! Drives one viewer connection: command processing, the frame loop and
//! the socket writer.
//!
//! The driver is transport-agnostic. It consumes a stream of
//! [`WireMessage`]s and feeds a sink of them, so the HTTP layer adapts a
//! WebSocket and tests can use in-memory channels.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::{Sink, SinkExt, Stream, StreamExt};
use splat4d_core::foveation::ImportanceProvider;
use splat4d_core::metrics_eval::FpsMeter;
use splat4d_core::rasterizer::Framebuffer;
use tokio::sync::{broadcast, mpsc, watch, Notify};

use crate::outbox::{OutFrame, SharedOutbox, DEFAULT_IN_FLIGHT_LIMIT};
use crate::protocol::{parse_client_message, ClientMessage, Event, StatsPayload};
use crate::registry::SharedSession;
use crate::session::render_task;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Text(String),
    Binary(Vec<u8>),
    Close,
}

#[derive(Debug, Clone, Copy)]
pub struct LoopConfig {
    /// Frame interval while paused with nothing changed.
    pub idle_interval: Duration,
    pub stats_interval: Duration,
    /// Frame rate ceiling while an export runs in the background.
    pub export_fps_cap: f64,
    pub in_flight_limit: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            idle_interval: Duration::from_secs(1),
            stats_interval: Duration::from_secs(1),
            export_fps_cap: 15.0,
            in_flight_limit: DEFAULT_IN_FLIGHT_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConnectionStats {
    pub frames_produced: u64,
    pub frames_sent: u64,
    pub frames_dropped: u64,
    pub max_in_flight: usize,
    pub commands: u64,
}

/// Serves `session` until the client closes the stream or the sink fails.
pub async fn serve_connection<I, O>(
    session: SharedSession,
    provider: Option<Arc<dyn ImportanceProvider>>,
    resumed: bool,
    mut incoming: I,
    outgoing: O,
    cfg: LoopConfig,
) -> ConnectionStats
where
    I: Stream<Item = WireMessage> + Unpin + Send,
    O: Sink<WireMessage> + Unpin + Send + 'static,
{
    let outbox = Arc::new(SharedOutbox::new(cfg.in_flight_limit));
    let wake = Arc::new(Notify::new());
    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let (control_tx, control_rx) = mpsc::unbounded_channel::<Event>();
    let max_in_flight = Arc::new(AtomicUsize::new(0));

    let (hello, events_rx) = {
        let s = session.lock().expect("session lock");
        (s.hello_event(resumed), s.subscribe())
    };
    let _ = control_tx.send(hello);

    let writer = tokio::spawn(write_loop(
        outgoing,
        control_rx,
        events_rx,
        Arc::clone(&outbox),
        shutdown_rx.clone(),
        shutdown_tx.clone(),
        Arc::clone(&max_in_flight),
    ));
    let producer = tokio::spawn(frame_loop(
        Arc::clone(&session),
        provider,
        Arc::clone(&outbox),
        Arc::clone(&wake),
        control_tx.clone(),
        shutdown_rx.clone(),
        cfg,
    ));

    let mut commands = 0u64;
    let mut shutdown_watch = shutdown_rx;
    loop {
        let message = tokio::select! {
            m = incoming.next() => m,
            _ = shutdown_watch.changed() => None,
        };
        let Some(message) = message else { break };
        let text = match message {
            WireMessage::Text(t) => t,
            WireMessage::Binary(_) => {
                let _ = control_tx.send(Event::Diagnostic {
                    message: "binary client messages are not part of the protocol".to_string(),
                });
                continue;
            }
            WireMessage::Close => break,
        };
        match parse_client_message(&text) {
            Ok(ClientMessage::FrameAck { frame_seq }) => outbox.ack(frame_seq),
            Ok(ClientMessage::Command { seq, command }) => {
                commands += 1;
                let session = Arc::clone(&session);
                let event = tokio::task::spawn_blocking(move || {
                    session.lock().expect("session lock").handle(seq, command)
                })
                .await
                .expect("command handler panicked");
                let _ = control_tx.send(event);
                wake.notify_one();
            }
            Err(e) => {
                commands += 1;
                let _ = control_tx.send(e.into_event());
            }
        }
    }

    let _ = shutdown_tx.send(true);
    let produced = producer.await.unwrap_or(0);
    let _ = writer.await;
    let (sent, dropped) = outbox.with(|o| (o.sent(), o.dropped()));
    ConnectionStats {
        frames_produced: produced,
        frames_sent: sent,
        frames_dropped: dropped,
        max_in_flight: max_in_flight.load(Ordering::SeqCst),
        commands,
    }
}

async fn write_loop<O>(
    mut outgoing: O,
    mut control: mpsc::UnboundedReceiver<Event>,
    mut events: broadcast::Receiver<Event>,
    outbox: Arc<SharedOutbox>,
    mut shutdown: watch::Receiver<bool>,
    shutdown_tx: watch::Sender<bool>,
    max_in_flight: Arc<AtomicUsize>,
) where
    O: Sink<WireMessage> + Unpin,
{
    loop {
        let message = tokio::select! {
            biased;
            _ = shutdown.changed() => break,
            Some(event) = control.recv() => WireMessage::Text(event.to_text()),
            received = events.recv() => match received {
                Ok(event) => WireMessage::Text(event.to_text()),
                Err(broadcast::error::RecvError::Lagged(n)) => WireMessage::Text(
                    Event::Diagnostic { message: format!("{n} session events were dropped") }.to_text(),
                ),
                Err(broadcast::error::RecvError::Closed) => continue,
            },
            _ = outbox.wait() => {
                let Some(frame) = outbox.next_sendable() else { continue };
                max_in_flight.fetch_max(outbox.with(|o| o.in_flight()), Ordering::SeqCst);
                WireMessage::Binary(frame.bytes)
            }
        };
        if outgoing.send(message).await.is_err() {
            let _ = shutdown_tx.send(true);
            break;
        }
    }
    let _ = outgoing.close().await;
}

/// Produces frames until shutdown; returns how many were produced.
async fn frame_loop(
    session: SharedSession,
    provider: Option<Arc<dyn ImportanceProvider>>,
    outbox: Arc<SharedOutbox>,
    wake: Arc<Notify>,
    control: mpsc::UnboundedSender<Event>,
    mut shutdown: watch::Receiver<bool>,
    cfg: LoopConfig,
) -> u64 {
    let mut seq: u32 = 0;
    let mut last_frame: Option<Instant> = None;
    let mut last_tick = Instant::now();
    let mut last_stats = Instant::now();
    let mut previous: Option<Framebuffer> = None;
    let mut meter = FpsMeter::default();
    let clock = Instant::now();
    loop {
        let (active, fps) = {
            let s = session.lock().expect("session lock");
            let mut fps = s.playback().target_fps;
            if s.export_running() {
                fps = fps.min(cfg.export_fps_cap);
            }
            (s.playback().playing || s.dirty(), fps)
        };
        let interval = if active {
            Duration::from_secs_f64(1.0 / fps)
        } else {
            cfg.idle_interval
        };
        if let Some(at) = last_frame {
            let due = at + interval;
            let now = Instant::now();
            if due > now {
                tokio::select! {
                    _ = tokio::time::sleep(due - now) => {}
                    _ = wake.notified() => continue,
                    _ = shutdown.changed() => break,
                }
            }
        }
        if *shutdown.borrow() {
            break;
        }

        let now = Instant::now();
        let dt = now.duration_since(last_tick).as_secs_f64();
        last_tick = now;
        last_frame = Some(now);
        seq = seq.wrapping_add(1);
        let task = session.lock().expect("session lock").tick(dt);
        let frame_seq = seq;
        let provider_ref = provider.clone();
        let prev = previous.take();
        let joined = tokio::task::spawn_blocking(move || {
            let out = render_task(&task, frame_seq, prev.as_ref(), provider_ref.as_deref());
            (out, task.frame_index)
        })
        .await;
        let Ok((result, frame_index)) = joined else {
            break;
        };
        let rendered = match result {
            Ok(r) => r,
            Err(e) => {
                let _ = control.send(Event::Diagnostic {
                    message: format!("render failed: {e}"),
                });
                continue;
            }
        };
        let bytes = rendered.message();
        outbox.offer(OutFrame {
            seq: frame_seq,
            bytes,
        });
        meter.record(clock.elapsed().as_secs_f64());

        let overlay = {
            let mut s = session.lock().expect("session lock");
            s.commit_importance(rendered.map.clone());
            s.overlay()
        };
        if last_stats.elapsed() >= cfg.stats_interval {
            last_stats = Instant::now();
            let (dropped, in_flight) = outbox.with(|o| (o.dropped(), o.in_flight()));
            let s = session.lock().expect("session lock");
            let stats = StatsPayload {
                frame_seq,
                time: rendered.header.sim_time_ms as f64 / 1000.0,
                frame_index,
                playing: s.playback().playing,
                fps: meter.fps(clock.elapsed().as_secs_f64()),
                foveal_fraction: rendered.foveal_fraction,
                importance_source: rendered.importance_source.to_string(),
                dropped_frames: dropped,
                in_flight,
                splats: s.current_cloud().len(),
                selected: s.selection().count(),
                importance: overlay.then(|| rendered.map.to_rows()),
            };
            let _ = control.send(Event::Stats(stats));
        }
        previous = Some(rendered.frame);
    }
    seq as u64
}
