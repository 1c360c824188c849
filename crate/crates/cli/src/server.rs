//! HTTP and WebSocket front end for live missions.
//!
//! Each mission runs on its own task, stepping once per `tick_ms`. Clients
//! follow a mission through `/missions/{id}/events?from=seq`, which first
//! replays the log from `seq` and then streams new events as they are
//! appended. Interactions may be posted over HTTP or sent on the socket.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hotl_core::service::parse_transcript;
use hotl_core::{fixture, load_scenario, DecisionId, HumanInteraction, Mission, MissionError, MissionStatus};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::watch;

pub const DEFAULT_TICK_MS: u64 = 200;

struct Live {
    mission: Mutex<Mission>,
    /// Last appended seq; bumped after every tick or admitted interaction.
    seq: watch::Sender<u64>,
}

impl Live {
    fn publish(&self, m: &Mission) {
        self.seq.send_replace(m.log().last_seq());
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    missions: Arc<Mutex<BTreeMap<String, Arc<Live>>>>,
    counter: Arc<Mutex<u64>>,
}

impl AppState {
    fn get(&self, id: &str) -> Result<Arc<Live>, ApiError> {
        self.missions.lock().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found(format!("no mission `{id}`")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/missions", post(create).get(list))
        .route("/missions/{id}/interactions", post(interact))
        .route("/missions/{id}/state", get(state_view))
        .route("/missions/{id}/log", get(log))
        .route("/missions/{id}/decisions/{decision}", get(decision))
        .route("/missions/{id}/pause", post(pause))
        .route("/missions/{id}/resume", post(resume))
        .route("/missions/{id}/events", get(events))
        .with_state(state)
}

pub async fn serve(port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::default())).await?;
    Ok(())
}

struct ApiError(StatusCode, String);

impl ApiError {
    fn not_found(msg: String) -> Self {
        ApiError(StatusCode::NOT_FOUND, msg)
    }
    fn unprocessable(msg: impl ToString) -> Self {
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, msg.to_string())
    }
}

impl From<MissionError> for ApiError {
    fn from(e: MissionError) -> Self {
        match e {
            MissionError::Finished => ApiError(StatusCode::CONFLICT, e.to_string()),
            MissionError::NoSuchDecision(_) => ApiError(StatusCode::NOT_FOUND, e.to_string()),
            _ => ApiError::unprocessable(e),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateParams {
    /// Shipped scenario to run instead of the request body.
    pub fixture: Option<String>,
    pub tick_ms: Option<u64>,
    /// Start paused; the mission advances only after `/resume`.
    #[serde(default)]
    pub paused: bool,
    /// Also queue the fixture's shipped transcript.
    #[serde(default)]
    pub transcript: bool,
    pub max_ticks: Option<u64>,
}

async fn create(State(app): State<AppState>, Query(p): Query<CreateParams>, body: String) -> Result<Response, ApiError> {
    let (spec, transcript) = match &p.fixture {
        Some(name) => {
            let f = fixture(name).ok_or_else(|| ApiError::not_found(format!("no fixture `{name}`")))?;
            let spec = load_scenario(f.scenario).map_err(ApiError::unprocessable)?;
            let t = if p.transcript { parse_transcript(f.transcript)? } else { Vec::new() };
            (spec, t)
        }
        None => (load_scenario(&body).map_err(ApiError::unprocessable)?, Vec::new()),
    };
    let mut m = Mission::new(spec)?;
    m.load_transcript(transcript)?;
    if let Some(t) = p.max_ticks {
        m.set_max_ticks(t);
    }
    if p.paused {
        m.pause();
    }
    let id = {
        let mut c = app.counter.lock().unwrap();
        *c += 1;
        format!("m-{}", *c)
    };
    let (tx, _) = watch::channel(m.log().last_seq());
    let live = Arc::new(Live { mission: Mutex::new(m), seq: tx });
    app.missions.lock().unwrap().insert(id.clone(), live.clone());
    tokio::spawn(drive(live, Duration::from_millis(p.tick_ms.unwrap_or(DEFAULT_TICK_MS).max(1))));
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))).into_response())
}

async fn drive(live: Arc<Live>, period: Duration) {
    let mut interval = tokio::time::interval(period);
    loop {
        interval.tick().await;
        let m = &mut *live.mission.lock().unwrap();
        match m.status() {
            MissionStatus::Finished => break,
            MissionStatus::Paused => continue,
            MissionStatus::Running => {
                m.step();
                live.publish(m);
            }
        }
    }
}

async fn list(State(app): State<AppState>) -> Json<Value> {
    let missions = app.missions.lock().unwrap();
    let out: Vec<Value> = missions
        .iter()
        .map(|(id, l)| {
            let m = l.mission.lock().unwrap();
            json!({ "id": id, "scenario": m.spec().name, "status": m.status(), "next_tick": m.next_tick() })
        })
        .collect();
    Json(json!(out))
}

/// Parses an interaction, filling a missing tick with the next mission tick.
fn parse_interaction(mut v: Value, next_tick: u64) -> Result<HumanInteraction, ApiError> {
    if let Some(obj) = v.as_object_mut() {
        obj.entry("tick").or_insert(json!(next_tick));
    }
    serde_json::from_value(v).map_err(ApiError::unprocessable)
}

fn submit(live: &Live, v: Value) -> Result<Value, ApiError> {
    let m = &mut *live.mission.lock().unwrap();
    let hi = parse_interaction(v, m.next_tick())?;
    let seq = m.submit(hi)?;
    live.publish(m);
    Ok(json!({ "ack": seq, "tick": m.next_tick() }))
}

async fn interact(State(app): State<AppState>, Path(id): Path<String>, Json(v): Json<Value>) -> Result<Response, ApiError> {
    let live = app.get(&id)?;
    Ok((StatusCode::ACCEPTED, Json(submit(&live, v)?)).into_response())
}

async fn state_view(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let live = app.get(&id)?;
    let m = live.mission.lock().unwrap();
    Ok(Json(m.state_view()))
}

async fn log(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let live = app.get(&id)?;
    let text = live.mission.lock().unwrap().log().to_jsonl();
    Ok(([("content-type", "application/x-ndjson")], text).into_response())
}

async fn decision(State(app): State<AppState>, Path((id, decision)): Path<(String, String)>) -> Result<Json<Value>, ApiError> {
    let live = app.get(&id)?;
    let m = live.mission.lock().unwrap();
    let rec = m.explain(&DecisionId(decision))?;
    Ok(Json(serde_json::to_value(rec).expect("records serialize")))
}

async fn pause(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let live = app.get(&id)?;
    let mut m = live.mission.lock().unwrap();
    m.pause();
    Ok(Json(json!({ "status": m.status() })))
}

async fn resume(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let live = app.get(&id)?;
    let mut m = live.mission.lock().unwrap();
    m.resume();
    Ok(Json(json!({ "status": m.status() })))
}

#[derive(Debug, Deserialize)]
pub struct EventParams {
    #[serde(default)]
    pub from: u64,
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(p): Query<EventParams>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let live = app.get(&id)?;
    Ok(ws.on_upgrade(move |socket| stream(socket, live, p.from)))
}

/// Sends every event with `seq >= from`, then follows the log. Text frames
/// from the client are interactions; each gets an ack or error frame.
async fn stream(mut socket: WebSocket, live: Arc<Live>, from: u64) {
    let mut rx = live.seq.subscribe();
    let mut cursor = from;
    loop {
        let (lines, finished) = {
            let m = live.mission.lock().unwrap();
            let evs = m.events_since(cursor);
            if let Some(last) = evs.last() {
                cursor = last.seq + 1;
            }
            let lines: Vec<String> = evs.iter().map(|e| e.to_canonical_line()).collect();
            (lines, m.status() == MissionStatus::Finished)
        };
        for line in lines {
            if socket.send(Message::Text(line.into())).await.is_err() {
                return;
            }
        }
        if finished && !rx.has_changed().unwrap_or(false) {
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
        tokio::select! {
            changed = rx.changed() => {
                if changed.is_err() {
                    return;
                }
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let reply = serde_json::from_str::<Value>(&text)
                        .map_err(ApiError::unprocessable)
                        .and_then(|v| submit(&live, v));
                    let frame = match reply {
                        Ok(ack) => ack,
                        Err(ApiError(_, e)) => json!({ "error": e }),
                    };
                    if socket.send(Message::Text(frame.to_string().into())).await.is_err() {
                        return;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
