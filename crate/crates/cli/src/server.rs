//! HTTP API with server-sent stage events.
//!
//! | method | path                    | body                          | reply                          |
//! |--------|-------------------------|-------------------------------|--------------------------------|
//! | GET    | `/feeds`                |                               | feed metadata list             |
//! | GET    | `/models`               |                               | `{"models": [...]}`            |
//! | POST   | `/sessions`             | `{feed_id, model_id}`         | `{session_id}`                 |
//! | POST   | `/sessions/{id}/query`  | `{text, config_overrides?}`   | SSE: `stage`* then `report`    |

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;
use transit_ask_core::exec::Executor;
use transit_ask_core::fewshot::FewShotSelector;
use transit_ask_core::llm::ChatModel;
use transit_ask_core::pipeline::{ChatSession, Pipeline, PipelineReport, RunConfig, Stage};
use transit_ask_core::{DistUnits, Feed};

pub type ModelFactory = dyn Fn(&str) -> Result<Arc<dyn ChatModel>, String> + Send + Sync;

pub struct AppState {
    pub feeds: BTreeMap<String, Feed>,
    pub few_shot: FewShotSelector,
    pub models: Vec<String>,
    pub aux_model: Arc<dyn ChatModel>,
    pub executor: Arc<dyn Executor>,
    pub run: RunConfig,
    factory: Box<ModelFactory>,
    built: Mutex<HashMap<String, Arc<dyn ChatModel>>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<ChatSession>>>>,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(
        feeds: BTreeMap<String, Feed>,
        few_shot: FewShotSelector,
        models: Vec<String>,
        aux_model: Arc<dyn ChatModel>,
        executor: Arc<dyn Executor>,
        run: RunConfig,
        factory: Box<ModelFactory>,
    ) -> Self {
        AppState {
            feeds,
            few_shot,
            models,
            aux_model,
            executor,
            run,
            factory,
            built: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
        }
    }

    fn model(&self, id: &str) -> Result<Arc<dyn ChatModel>, String> {
        let mut built = self.built.lock().expect("model cache poisoned");
        if let Some(m) = built.get(id) {
            return Ok(m.clone());
        }
        let m = (self.factory)(id)?;
        built.insert(id.to_string(), m.clone());
        Ok(m)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/feeds", get(list_feeds))
        .route("/models", get(list_models))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", post(query))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": message.into()}))).into_response()
}

#[derive(Serialize)]
struct FeedInfo {
    feed_id: String,
    dist_units: Option<DistUnits>,
    file_list: Vec<String>,
    row_counts: BTreeMap<String, u64>,
}

async fn list_feeds(State(state): State<Arc<AppState>>) -> Json<Vec<FeedInfo>> {
    Json(
        state
            .feeds
            .values()
            .map(|f| {
                let m = f.meta();
                FeedInfo {
                    feed_id: m.feed_id.clone(),
                    dist_units: m.dist_units,
                    file_list: m.file_list.clone(),
                    row_counts: m.row_counts.clone(),
                }
            })
            .collect(),
    )
}

async fn list_models(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({"models": state.models}))
}

#[derive(Deserialize)]
struct NewSession {
    feed_id: String,
    model_id: String,
}

async fn create_session(State(state): State<Arc<AppState>>, Json(body): Json<NewSession>) -> Response {
    if !state.feeds.contains_key(&body.feed_id) {
        return error(StatusCode::NOT_FOUND, format!("unknown feed {:?}", body.feed_id));
    }
    if !state.models.contains(&body.model_id) {
        return error(StatusCode::BAD_REQUEST, format!("unknown model {:?}", body.model_id));
    }
    let n = state.next_session.fetch_add(1, Ordering::SeqCst);
    let session_id = format!("s{n:06}");
    let session = ChatSession::new(&session_id, &body.feed_id, &body.model_id);
    state.sessions.lock().expect("sessions poisoned").insert(session_id.clone(), Arc::new(Mutex::new(session)));
    (StatusCode::CREATED, Json(json!({"session_id": session_id}))).into_response()
}

#[derive(Deserialize)]
struct QueryBody {
    text: String,
    #[serde(default)]
    config_overrides: Option<Value>,
}

/// Applies JSON overrides on top of a run configuration.
pub fn apply_overrides(base: &RunConfig, overrides: Option<&Value>) -> Result<RunConfig, String> {
    let Some(o) = overrides.filter(|o| !o.is_null()) else {
        return Ok(base.clone());
    };
    let Value::Object(o) = o else {
        return Err("config_overrides must be an object".into());
    };
    let mut v = serde_json::to_value(base).expect("RunConfig serializes");
    let fields = v.as_object_mut().expect("RunConfig is an object");
    for (k, val) in o {
        if !fields.contains_key(k) {
            return Err(format!("unknown config key {k:?}"));
        }
        fields.insert(k.clone(), val.clone());
    }
    serde_json::from_value(v).map_err(|e| e.to_string())
}

enum Message {
    Stage(Stage),
    Report(Box<PipelineReport>),
}

fn to_event(m: Message) -> Event {
    match m {
        Message::Stage(s) => Event::default().event("stage").json_data(s).expect("stage serializes"),
        Message::Report(r) => Event::default().event("report").json_data(&*r).expect("report serializes"),
    }
}

async fn query(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<QueryBody>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, Response> {
    let session = state
        .sessions
        .lock()
        .expect("sessions poisoned")
        .get(&id)
        .cloned()
        .ok_or_else(|| error(StatusCode::NOT_FOUND, format!("unknown session {id:?}")))?;
    if body.text.trim().is_empty() {
        return Err(error(StatusCode::BAD_REQUEST, "empty query"));
    }
    let config = apply_overrides(&state.run, body.config_overrides.as_ref()).map_err(|e| error(StatusCode::BAD_REQUEST, e))?;

    let (tx, rx) = mpsc::unbounded_channel::<Message>();
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        // Holding the session lock for the whole query serializes queries per session.
        let mut session = session.lock().unwrap_or_else(|p| p.into_inner());
        let stage_tx = tx.clone();
        let mut sink = move |s: Stage| {
            let _ = stage_tx.send(Message::Stage(s));
        };
        let report = match (st.feeds.get(&session.feed_id), st.model(&session.model_id)) {
            (Some(feed), Ok(main)) => {
                let pipeline = Pipeline {
                    feed,
                    few_shot: Some(&st.few_shot),
                    main_model: main.as_ref(),
                    aux_model: st.aux_model.as_ref(),
                    executor: st.executor.as_ref(),
                };
                pipeline.handle_query(&mut session, &body.text, &config, &mut sink)
            }
            (_, Err(e)) => {
                sink(Stage::Done);
                PipelineReport::failed(format!("model unavailable: {e}"))
            }
            (None, _) => {
                sink(Stage::Done);
                PipelineReport::failed(format!("feed {:?} not loaded", session.feed_id))
            }
        };
        let _ = tx.send(Message::Report(Box::new(report)));
    });

    let stream = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|m| (Ok::<_, Infallible>(to_event(m)), rx))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides() {
        let base = RunConfig::default();
        let c = apply_overrides(&base, Some(&json!({"max_retries": 1, "mode": "baseline"}))).unwrap();
        assert_eq!(c.max_retries, 1);
        assert!(apply_overrides(&base, Some(&json!({"bogus": 1}))).is_err());
        assert!(apply_overrides(&base, Some(&json!({"max_retries": "x"}))).is_err());
        assert_eq!(apply_overrides(&base, None).unwrap(), base);
    }
}
