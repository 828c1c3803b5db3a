#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use bytes::Bytes;
use futures_util::{SinkExt, StreamExt};
use teleop_core::gbdt::load_model;
use teleop_core::pipeline::Classifier;
use teleop_core::protocol::{decode_message, encode_message, Envelope, JoinPayload, Message};
use teleop_core::scene::Scene;
use teleop_server::{serve, Server, ServerConfig};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite;
use tokio_util::codec::{Framed, LengthDelimitedCodec};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

pub fn classifier() -> Classifier {
    Classifier::new(load_model(&std::fs::read(fixture("model.gbdt")).unwrap()).unwrap()).unwrap()
}

pub async fn start(scene: Scene) -> Server {
    let mut config = ServerConfig::new(classifier(), scene);
    config.ws_addr = Some("127.0.0.1:0".parse().unwrap());
    config.tcp_addr = Some("127.0.0.1:0".parse().unwrap());
    serve(config).await.unwrap()
}

/// A test client over either transport, speaking raw bytes.
pub enum Client {
    Ws(tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>),
    Tcp(Framed<TcpStream, LengthDelimitedCodec>),
}

impl Client {
    pub async fn ws(addr: SocketAddr) -> Client {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}")).await.unwrap();
        Client::Ws(ws)
    }

    pub async fn tcp(addr: SocketAddr) -> Client {
        let stream = TcpStream::connect(addr).await.unwrap();
        stream.set_nodelay(true).unwrap();
        let codec = LengthDelimitedCodec::builder().length_field_length(4).big_endian().new_codec();
        Client::Tcp(Framed::new(stream, codec))
    }

    pub async fn send_raw(&mut self, bytes: Vec<u8>) {
        match self {
            Client::Ws(ws) => {
                let text = String::from_utf8(bytes).unwrap_or_else(|e| String::from_utf8_lossy(e.as_bytes()).into_owned());
                let _ = ws.send(tungstenite::Message::text(text)).await;
            }
            Client::Tcp(f) => {
                let _ = f.send(Bytes::from(bytes)).await;
            }
        }
    }

    pub async fn send(&mut self, message: Message) {
        self.send_raw(encode_message(&Envelope::new(0, message))).await;
    }

    pub async fn join(&mut self, session: &str, user: &str) -> Envelope {
        self.send(Message::Join(JoinPayload { session: session.into(), user: user.into() })).await;
        let env = self.recv().await.expect("joined reply");
        assert!(matches!(env.message, Message::Joined(_)), "{env:?}");
        env
    }

    /// Next raw message, `None` when the server closed the connection.
    pub async fn recv_raw(&mut self) -> Option<Vec<u8>> {
        loop {
            match self {
                Client::Ws(ws) => match ws.next().await? {
                    Ok(tungstenite::Message::Text(t)) => return Some(t.as_bytes().to_vec()),
                    Ok(tungstenite::Message::Close(_)) | Err(_) => return None,
                    Ok(_) => continue,
                },
                Client::Tcp(f) => return f.next().await?.ok().map(|b| b.to_vec()),
            }
        }
    }

    /// Next message, which must decode.
    pub async fn recv(&mut self) -> Option<Envelope> {
        let raw = self.recv_raw().await?;
        Some(decode_message(&raw).unwrap_or_else(|e| panic!("server sent invalid message: {e}: {}", String::from_utf8_lossy(&raw))))
    }

    pub async fn recv_timeout(&mut self, d: Duration) -> Result<Option<Envelope>, ()> {
        tokio::time::timeout(d, self.recv()).await.map_err(|_| ())
    }

    /// Reads until `pred` matches; panics after `d`.
    pub async fn until<F: FnMut(&Envelope) -> bool>(&mut self, d: Duration, mut pred: F) -> Vec<Envelope> {
        let mut seen = Vec::new();
        let deadline = tokio::time::Instant::now() + d;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            match tokio::time::timeout(left, self.recv()).await {
                Ok(Some(env)) => {
                    let hit = pred(&env);
                    seen.push(env);
                    if hit {
                        return seen;
                    }
                }
                Ok(None) => panic!("connection closed; seen {} messages", seen.len()),
                Err(_) => panic!("timed out; last messages {:?}", seen.iter().rev().take(3).collect::<Vec<_>>()),
            }
        }
    }
}
