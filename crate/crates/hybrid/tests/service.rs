use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use hybrid_market::http;
use hybrid_market::service::{Service, ServiceConfig};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

const ADMIN: &str = "admin-secret";

struct Server {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl Server {
    async fn start(config: ServiceConfig) -> Self {
        let service = Arc::new(Service::open(&config).unwrap());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (stop, rx) = oneshot::channel();
        let task = tokio::spawn(http::serve(service, listener, async {
            let _ = rx.await;
        }));
        Self { base, stop: Some(stop), task }
    }

    async fn stop(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        tokio::time::timeout(Duration::from_secs(5), self.task).await.expect("graceful shutdown").unwrap().unwrap();
    }

    async fn command(&self, token: Option<&str>, body: Value) -> (StatusCode, Value) {
        let mut req = Client::new().post(format!("{}/api/commands", self.base)).json(&body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    async fn get(&self, path: &str, token: Option<&str>) -> (StatusCode, Value) {
        let mut req = Client::new().get(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    async fn open(&self, name: &str, cash_cents: i64) -> (u64, String) {
        let (status, v) =
            self.command(None, json!({"type": "open-account", "name": name, "cash_cents": cash_cents})).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        (v["account"].as_u64().unwrap(), v["token"].as_str().unwrap().to_string())
    }
}

fn demo() -> ServiceConfig {
    ServiceConfig { admin_token: ADMIN.into(), demo: true, ..Default::default() }
}

/// Reads `n` server-sent events as (id, event, data).
async fn read_events<B: AsRef<[u8]>>(
    stream: &mut (impl futures::Stream<Item = reqwest::Result<B>> + Unpin),
    buf: &mut String,
    n: usize,
) -> Vec<(u64, String, Value)> {
    let mut out = Vec::new();
    while out.len() < n {
        if let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let (mut id, mut event, mut data) = (None, None, String::new());
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = v.trim().parse().ok();
                } else if let Some(v) = line.strip_prefix("event:") {
                    event = Some(v.trim().to_string());
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim_start());
                }
            }
            if let (Some(id), Some(event)) = (id, event) {
                out.push((id, event, serde_json::from_str(&data).unwrap()));
            }
            continue;
        }
        let chunk = tokio::time::timeout(Duration::from_secs(5), stream.next()).await.expect("event in time");
        buf.push_str(std::str::from_utf8(chunk.unwrap().unwrap().as_ref()).unwrap());
    }
    out
}

async fn subscribe(
    base: &str,
    market: u64,
    query: &str,
    last_id: Option<u64>,
) -> impl futures::Stream<Item = reqwest::Result<impl AsRef<[u8]>>> + Unpin {
    let mut req = Client::new().get(format!("{base}/api/markets/{market}/events{query}"));
    if let Some(id) = last_id {
        req = req.header("Last-Event-ID", id.to_string());
    }
    let resp = req.send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    resp.bytes_stream()
}

#[tokio::test]
async fn status_codes() {
    let s = Server::start(demo()).await;
    assert_eq!(s.get("/healthz", None).await.0, StatusCode::OK);
    let create = json!({"type": "create-market", "name": "x", "labels": ["a", "b"]});
    assert_eq!(s.command(None, create.clone()).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(s.command(Some("wrong"), create.clone()).await.0, StatusCode::FORBIDDEN);
    let (status, v) = s.command(Some(ADMIN), create.clone()).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["result"], "market-created");
    assert_eq!(s.command(Some(ADMIN), create).await.0, StatusCode::CONFLICT);

    let resp = Client::new()
        .post(format!("{}/api/commands", s.base))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    assert_eq!(s.command(None, json!({"type": "launch-rockets"})).await.0, StatusCode::BAD_REQUEST);

    let (_, alice) = s.open("alice", 5_000).await;
    let (_, bob) = s.open("bob", 5_000).await;
    assert_eq!(
        s.command(None, json!({"type": "open-account", "name": "alice", "cash_cents": 1})).await.0,
        StatusCode::CONFLICT
    );
    let order = json!({"type": "place-order", "market": 0, "bin": 1, "side": "BUY", "price_cents": 10, "qty": 2});
    assert_eq!(s.command(None, order.clone()).await.0, StatusCode::UNAUTHORIZED);
    let (status, v) = s.command(Some(&alice), order).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let id = v["order"].as_u64().unwrap();
    assert_eq!(s.command(Some(&bob), json!({"type": "cancel-order", "id": id})).await.0, StatusCode::FORBIDDEN);
    assert_eq!(s.command(Some(&bob), json!({"type": "cancel-order", "id": 9999})).await.0, StatusCode::NOT_FOUND);
    let big = json!({"type": "place-order", "market": 0, "bin": 1, "side": "BUY", "price_cents": 50, "qty": 1000});
    assert_eq!(s.command(Some(&bob), big).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let bad_price = json!({"type": "place-order", "market": 0, "bin": 1, "side": "BUY", "price_cents": 100, "qty": 1});
    assert_eq!(s.command(Some(&bob), bad_price).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(s.get("/api/markets/42/book", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(s.get("/api/markets/42/events", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(s.get("/api/positions", None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(s.get("/api/ledger", Some(&alice)).await.0, StatusCode::FORBIDDEN);

    let (status, v) = s.command(Some(&alice), json!({"type": "cancel-order", "id": id})).await;
    assert_eq!((status, v["released_cents"].as_i64()), (StatusCode::OK, Some(20)));
    let settle = |bin: u64| json!({"type": "settle", "market": 0, "winning_bin": bin});
    assert_eq!(s.command(Some(&alice), settle(1)).await.0, StatusCode::FORBIDDEN);
    assert_eq!(s.command(Some(ADMIN), settle(1)).await.0, StatusCode::OK);
    assert_eq!(s.command(Some(ADMIN), settle(1)).await.0, StatusCode::OK);
    assert_eq!(s.command(Some(ADMIN), settle(2)).await.0, StatusCode::CONFLICT);
    s.stop().await;
}

#[tokio::test]
async fn fill_streams_trade_quotes_book() {
    let s = Server::start(demo()).await;
    let (_, markets) = s.get("/api/markets", None).await;
    assert_eq!(markets[0]["name"], "demo");
    let (_, book) = s.get("/api/markets/0/book", None).await;
    let bids: Vec<(i64, i64)> = book["ladders"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| (l["bids"][0]["price"].as_i64().unwrap(), l["bids"][0]["quantity"].as_i64().unwrap()))
        .collect();
    assert_eq!(bids, [(29, 48), (49, 40), (19, 64)]);

    let mut stream = subscribe(&s.base, 0, "", None).await;
    let mut buf = String::new();
    let history = read_events(&mut stream, &mut buf, 2).await;
    assert_eq!(history.iter().map(|e| e.1.as_str()).collect::<Vec<_>>(), ["QUOTES", "BOOK"]);
    assert_eq!((history[0].0, history[1].0), (0, 1));

    let (me, token) = s.open("trader", 10_000).await;
    let started = std::time::Instant::now();
    let (status, v) = s
        .command(
            Some(&token),
            json!({"type": "place-order", "market": 0, "bin": 0, "side": "SELL", "price_cents": 29, "qty": 48}),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let events = read_events(&mut stream, &mut buf, 3).await;
    assert!(started.elapsed() < Duration::from_secs(1));
    assert_eq!(events.iter().map(|e| e.1.as_str()).collect::<Vec<_>>(), ["TRADE", "QUOTES", "BOOK"]);
    assert_eq!(events.iter().map(|e| e.0).collect::<Vec<_>>(), [2, 3, 4]);
    assert_eq!(events[0].2["market"], 0);
    let trade = &events[0].2["payload"];
    assert_eq!((trade["price_cents"].as_i64(), trade["qty"].as_i64()), (Some(29), Some(48)));
    assert_eq!(trade["seller"].as_u64(), Some(me));
    let inputs = &events[1].2["payload"]["inputs"];
    assert_eq!(inputs["cash_cents"], 98_608);
    assert_eq!(inputs["holdings"], json!([48, 0, 0]));

    // The book event and a fresh snapshot agree.
    let (_, now) = s.get("/api/markets/0/book", None).await;
    assert_eq!(events[2].2["payload"], now);

    let (_, pos) = s.get("/api/positions", Some(&token)).await;
    assert_eq!(pos["cash"].as_i64().unwrap() + pos["escrow"].as_i64().unwrap(), 10_000 + 29 * 48);
    assert_eq!(pos["positions"][0]["quantity"], -48);
    drop(stream);
    s.stop().await;
}

#[tokio::test]
async fn stream_resumes_from_last_event_id() {
    let s = Server::start(demo()).await;
    let (_, token) = s.open("t", 10_000).await;
    s.command(
        Some(&token),
        json!({"type": "place-order", "market": 0, "bin": 2, "side": "BUY", "price_cents": 21, "qty": 3}),
    )
    .await;
    let mut all = subscribe(&s.base, 0, "", None).await;
    let mut buf = String::new();
    let full = read_events(&mut all, &mut buf, 5).await;

    let mut resumed = subscribe(&s.base, 0, "", Some(1)).await;
    let mut buf2 = String::new();
    let tail = read_events(&mut resumed, &mut buf2, 3).await;
    assert_eq!(tail, full[2..5]);

    let mut from = subscribe(&s.base, 0, "?from=4", None).await;
    let mut buf3 = String::new();
    assert_eq!(read_events(&mut from, &mut buf3, 1).await[0], full[4]);

    s.command(Some(ADMIN), json!({"type": "update-beliefs", "market": 0, "p": [0.2, 0.5, 0.3]})).await;
    let live = read_events(&mut from, &mut buf3, 1).await;
    assert_eq!(live[0].0, 5);
    assert_eq!(live[0].1, "BELIEFS");
    s.stop().await;
}

#[tokio::test]
async fn restart_replays_the_journal() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig { event_log: Some(dir.path().join("journal.jsonl")), ..demo() };
    let s = Server::start(config.clone()).await;
    let (_, token) = s.open("t", 20_000).await;
    for (side, price, qty) in [("SELL", 29, 10), ("BUY", 31, 5), ("BUY", 40, 2)] {
        let (status, v) = s
            .command(
                Some(&token),
                json!({"type": "place-order", "market": 0, "bin": 0, "side": side, "price_cents": price, "qty": qty}),
            )
            .await;
        assert_eq!(status, StatusCode::OK, "{v}");
    }
    s.command(Some(ADMIN), json!({"type": "update-beliefs", "market": 0, "p": [0.25, 0.5, 0.25]})).await;
    let (_, ledger) = s.get("/api/ledger", Some(ADMIN)).await;
    let (_, book) = s.get("/api/markets/0/book", None).await;
    let mut stream = subscribe(&s.base, 0, "", None).await;
    let mut buf = String::new();
    let n = ledger["fills"].as_array().unwrap().len();
    assert!(n > 0);
    let _ = read_events(&mut stream, &mut buf, 5).await;
    drop(stream);
    s.stop().await;

    let s = Server::start(config).await;
    assert_eq!(s.get("/api/ledger", Some(ADMIN)).await.1, ledger);
    assert_eq!(s.get("/api/markets/0/book", None).await.1, book);
    let (status, pos) = s.get("/api/positions", Some(&token)).await;
    assert_eq!(status, StatusCode::OK, "tokens survive a restart");
    assert_eq!(pos["name"], "t");
    assert_eq!(s.get("/api/markets", None).await.1.as_array().unwrap().len(), 1, "demo market is not duplicated");
    s.stop().await;
}
