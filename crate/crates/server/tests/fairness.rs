mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use common::{start, Client};
use teleop_core::protocol::Message;
use teleop_core::scene::Scene;

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn eight_clients_receive_every_state_tick() {
    let server = start(Scene::default()).await;
    let mut handles = Vec::new();
    for i in 0..8 {
        let ws = server.ws_addr().unwrap();
        let tcp = server.tcp_addr().unwrap();
        handles.push(tokio::spawn(async move {
            let mut c = if i % 2 == 0 { Client::ws(ws).await } else { Client::tcp(tcp).await };
            c.join("shared", &format!("user{i}")).await;
            let mut states = Vec::new();
            let mut tactile = 0usize;
            let end = tokio::time::Instant::now() + Duration::from_millis(1500);
            while let Ok(Some(e)) = c.recv_timeout(end.saturating_duration_since(tokio::time::Instant::now())).await {
                assert_eq!(e.dropped, 0, "client {i} lost frames");
                match e.message {
                    Message::RobotState(_) => states.push(e.ts),
                    Message::TactileFrame(_) => tactile += 1,
                    _ => {}
                }
            }
            (states, tactile)
        }));
    }
    let mut results = Vec::new();
    for h in handles {
        results.push(h.await.unwrap());
    }
    let all: BTreeSet<u64> = results.iter().flat_map(|(s, _)| s.iter().copied()).collect();
    for (i, (states, tactile)) in results.iter().enumerate() {
        // about 30 Hz for well over a second
        assert!(states.len() >= 30, "client {i}: {} states", states.len());
        assert!(*tactile >= 30, "client {i}: {tactile} tactile frames");
        let (lo, hi) = (states[0], *states.last().unwrap());
        let expected: Vec<u64> = all.range(lo..=hi).copied().collect();
        assert_eq!(states, &expected, "client {i} missed a tick");
    }
    server.shutdown().await;
}
