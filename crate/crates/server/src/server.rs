use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::Bytes;
use futures_util::{Sink, SinkExt, Stream, StreamExt};
use teleop_core::pipeline::Classifier;
use teleop_core::protocol::{encode_message, Envelope};
use teleop_core::scene::Scene;
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio::time::{Instant, MissedTickBehavior};
use tokio_tungstenite::tungstenite;
use tokio_util::codec::{Framed, LengthDelimitedCodec};

use crate::conn::{Action, ConnState, Inbound};
use crate::outbox::Outbox;
use crate::session::{ConnId, Outgoing, SessionCore, SessionSettings, Target};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("no listen address configured")]
    NoListener,
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// WebSocket listener (text frames).
    pub ws_addr: Option<SocketAddr>,
    /// Raw TCP listener (4-byte big-endian length prefix).
    pub tcp_addr: Option<SocketAddr>,
    pub classifier: Classifier,
    pub scene: Scene,
    pub settings: SessionSettings,
    pub tick_ms: u64,
    pub outbox_capacity: usize,
    pub max_frame_bytes: usize,
}

impl ServerConfig {
    pub fn new(classifier: Classifier, scene: Scene) -> Self {
        Self {
            ws_addr: None,
            tcp_addr: None,
            classifier,
            scene,
            settings: SessionSettings::default(),
            tick_ms: 10,
            outbox_capacity: 256,
            max_frame_bytes: 1 << 20,
        }
    }
}

enum Op {
    Join { conn: ConnId, user: String, outbox: Arc<Outbox> },
    Leave { conn: ConnId },
    Inbound { conn: ConnId, msg: Inbound },
}

struct Shared {
    config: ServerConfig,
    start: Instant,
    next_conn: AtomicU64,
    sessions: Mutex<HashMap<String, mpsc::UnboundedSender<Op>>>,
    shutdown: watch::Receiver<bool>,
}

impl Shared {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn session(self: &Arc<Self>, id: &str) -> mpsc::UnboundedSender<Op> {
        let mut sessions = self.sessions.lock().expect("session registry");
        sessions
            .entry(id.to_string())
            .or_insert_with(|| {
                let (tx, rx) = mpsc::unbounded_channel();
                let core = SessionCore::new(id, self.config.classifier.clone(), self.config.scene.clone(), &self.config.settings);
                tokio::spawn(run_session(core, rx, self.clone()));
                tx
            })
            .clone()
    }
}

/// A running server; dropping it does not stop the listeners, call
/// [`Server::shutdown`].
pub struct Server {
    ws_addr: Option<SocketAddr>,
    tcp_addr: Option<SocketAddr>,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl Server {
    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    pub fn tcp_addr(&self) -> Option<SocketAddr> {
        self.tcp_addr
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }

    /// Runs until the task is cancelled.
    pub async fn wait(self) {
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|source| ServerError::Bind { addr, source })
}

pub async fn serve(config: ServerConfig) -> Result<Server, ServerError> {
    if config.ws_addr.is_none() && config.tcp_addr.is_none() {
        return Err(ServerError::NoListener);
    }
    let ws = match config.ws_addr {
        Some(a) => Some(bind(a).await?),
        None => None,
    };
    let tcp = match config.tcp_addr {
        Some(a) => Some(bind(a).await?),
        None => None,
    };
    let (stop, shutdown) = watch::channel(false);
    let shared = Arc::new(Shared {
        config,
        start: Instant::now(),
        next_conn: AtomicU64::new(1),
        sessions: Mutex::new(HashMap::new()),
        shutdown,
    });
    let mut server = Server { ws_addr: None, tcp_addr: None, stop, tasks: Vec::new() };
    if let Some(l) = ws {
        server.ws_addr = l.local_addr().ok();
        server.tasks.push(tokio::spawn(accept_loop(l, shared.clone(), Transport::WebSocket)));
    }
    if let Some(l) = tcp {
        server.tcp_addr = l.local_addr().ok();
        server.tasks.push(tokio::spawn(accept_loop(l, shared.clone(), Transport::Tcp)));
    }
    Ok(server)
}

#[derive(Clone, Copy)]
enum Transport {
    WebSocket,
    Tcp,
}

async fn accept_loop(listener: TcpListener, shared: Arc<Shared>, transport: Transport) {
    let mut shutdown = shared.shutdown.clone();
    loop {
        tokio::select! {
            _ = shutdown.changed() => break,
            accepted = listener.accept() => {
                let Ok((stream, _)) = accepted else { continue };
                let _ = stream.set_nodelay(true);
                tokio::spawn(handle_socket(stream, shared.clone(), transport));
            }
        }
    }
}

async fn handle_socket(stream: TcpStream, shared: Arc<Shared>, transport: Transport) {
    match transport {
        Transport::WebSocket => {
            let Ok(ws) = tokio_tungstenite::accept_async(stream).await else { return };
            let (sink, source) = ws.split();
            let source = source.filter_map(|m| async move {
                match m {
                    Ok(tungstenite::Message::Text(t)) => Some(Ok(t.as_bytes().to_vec())),
                    Ok(tungstenite::Message::Binary(b)) => Some(Ok(b.to_vec())),
                    Ok(tungstenite::Message::Close(_)) | Err(_) => Some(Err(())),
                    Ok(_) => None,
                }
            });
            let sink = sink.with(|b: Vec<u8>| async move {
                let text = String::from_utf8(b).expect("encoder emits UTF-8");
                Ok::<_, tungstenite::Error>(tungstenite::Message::text(text))
            });
            run_connection(Box::pin(source), Box::pin(sink), shared).await;
        }
        Transport::Tcp => {
            let codec = LengthDelimitedCodec::builder()
                .length_field_length(4)
                .big_endian()
                .max_frame_length(shared.config.max_frame_bytes)
                .new_codec();
            let (sink, source) = Framed::new(stream, codec).split();
            let source = source.map(|r| r.map(|b| b.to_vec()).map_err(|_| ()));
            let sink = sink.with(|b: Vec<u8>| async move { Ok::<_, std::io::Error>(Bytes::from(b)) });
            run_connection(Box::pin(source), Box::pin(sink), shared).await;
        }
    }
}

async fn run_connection<S, K, E>(mut source: S, mut sink: K, shared: Arc<Shared>)
where
    S: Stream<Item = Result<Vec<u8>, ()>> + Unpin,
    K: Sink<Vec<u8>, Error = E> + Unpin + Send + 'static,
{
    let conn = shared.next_conn.fetch_add(1, Ordering::Relaxed);
    let outbox = Arc::new(Outbox::new(shared.config.outbox_capacity));
    let writer_box = outbox.clone();
    let (done_tx, mut done) = tokio::sync::oneshot::channel::<()>();
    // the writer owns the sink; finishing it ends the connection
    let writer = async move {
        while let Some(env) = writer_box.next().await {
            if sink.send(encode_message(&env)).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
        writer_box.close();
        let _ = done_tx.send(());
    };
    let mut state = ConnState::new();
    let mut session: Option<mpsc::UnboundedSender<Op>> = None;
    let mut shutdown = shared.shutdown.clone();
    let reader = async {
        loop {
            let item = tokio::select! {
                item = source.next() => item,
                _ = &mut done => break,
                _ = shutdown.changed() => break,
            };
            let Some(Ok(bytes)) = item else { break };
            match state.on_bytes(&bytes) {
                Action::Forward(Inbound::Join(p)) => {
                    let tx = shared.session(&p.session);
                    let _ = tx.send(Op::Join { conn, user: p.user, outbox: outbox.clone() });
                    session = Some(tx);
                }
                Action::Forward(msg) => {
                    if let Some(tx) = &session {
                        let _ = tx.send(Op::Inbound { conn, msg });
                    }
                }
                Action::Reply(m) => outbox.push(Envelope::new(shared.now_ms(), m)),
                Action::Close(m) => {
                    outbox.close_with(Envelope::new(shared.now_ms(), m));
                    break;
                }
            }
        }
        if let Some(tx) = &session {
            let _ = tx.send(Op::Leave { conn });
        }
        outbox.close();
    };
    tokio::join!(reader, writer);
}

async fn run_session(mut core: SessionCore, mut ops: mpsc::UnboundedReceiver<Op>, shared: Arc<Shared>) {
    let mut outboxes: HashMap<ConnId, Arc<Outbox>> = HashMap::new();
    let mut ticker = tokio::time::interval(Duration::from_millis(shared.config.tick_ms.max(1)));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let mut shutdown = shared.shutdown.clone();
    loop {
        let out = tokio::select! {
            op = ops.recv() => {
                let Some(op) = op else { break };
                let now = shared.now_ms();
                match op {
                    Op::Join { conn, user, outbox } => match core.join(conn, &user, now) {
                        Ok(out) => {
                            outboxes.insert(conn, outbox);
                            out
                        }
                        Err(err) => {
                            outbox.close_with(Envelope::new(now, err));
                            Vec::new()
                        }
                    },
                    Op::Leave { conn } => {
                        outboxes.remove(&conn);
                        core.leave(conn, now)
                    }
                    Op::Inbound { conn, msg } => match msg {
                        Inbound::Landmark(p) => core.landmark(conn, &p, now),
                        Inbound::ControlRequest => core.control_request(conn, now),
                        Inbound::Command(c) => core.command(conn, c, now),
                        Inbound::Join(_) => Vec::new(),
                    },
                }
            }
            _ = ticker.tick() => core.tick(shared.now_ms()),
            _ = shutdown.changed() => break,
        };
        deliver(&outboxes, out, shared.now_ms());
    }
}

fn deliver(outboxes: &HashMap<ConnId, Arc<Outbox>>, out: Vec<Outgoing>, now: u64) {
    for o in out {
        let env = Envelope::new(now, o.message);
        match o.to {
            Target::All => {
                for ob in outboxes.values() {
                    ob.push(env.clone());
                }
            }
            Target::Conn(c) => {
                if let Some(ob) = outboxes.get(&c) {
                    ob.push(env);
                }
            }
        }
    }
}
