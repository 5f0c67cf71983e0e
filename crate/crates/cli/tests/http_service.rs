mod common;

use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};
use transit_ask::bench_io::{gold_executor, load_tasks};
use transit_ask::server::{router, AppState};
use transit_ask_core::fewshot::{bundled_corpus, FewShotSelector};
use transit_ask_core::llm::{ChatModel, StubEntry, StubProvider, StubScript};
use transit_ask_core::pipeline::RunConfig;
use transit_ask_core::prompt::RoleTag;

struct Service {
    base: String,
    client: reqwest::blocking::Client,
}

impl Service {
    fn start(entries: Vec<StubEntry>) -> Service {
        let tasks = load_tasks(&common::seed_tasks_path(), None).unwrap();
        let stub: Arc<dyn ChatModel> = Arc::new(StubProvider::new(StubScript::new(entries)));
        let main = stub.clone();
        let state = AppState::new(
            common::fixture_feeds(),
            FewShotSelector::new(bundled_corpus()).unwrap(),
            vec!["gpt-4o".into()],
            stub,
            Arc::new(gold_executor(&tasks)),
            RunConfig::default(),
            Box::new(move |id| if id == "gpt-4o" { Ok(main.clone()) } else { Err(format!("no model {id}")) }),
        );
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                axum::serve(listener, router(Arc::new(state))).await.unwrap();
            });
        });
        Service { base, client: reqwest::blocking::Client::new() }
    }

    fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().unwrap();
        (r.status().as_u16(), r.json().unwrap())
    }

    fn post(&self, path: &str, body: Value) -> (u16, String) {
        let r = self.client.post(format!("{}{path}", self.base)).json(&body).send().unwrap();
        (r.status().as_u16(), r.text().unwrap())
    }

    fn session(&self) -> String {
        let (status, body) = self.post("/sessions", json!({"feed_id": "cumtd", "model_id": "gpt-4o"}));
        assert_eq!(status, 201, "{body}");
        serde_json::from_str::<Value>(&body).unwrap()["session_id"].as_str().unwrap().to_string()
    }
}

/// (event, data) pairs from an SSE body.
fn sse_events(body: &str) -> Vec<(String, Value)> {
    body.split("\n\n")
        .filter_map(|block| {
            let mut event = None;
            let mut data = String::new();
            for line in block.lines() {
                if let Some(e) = line.strip_prefix("event:") {
                    event = Some(e.trim().to_string());
                } else if let Some(d) = line.strip_prefix("data:") {
                    data.push_str(d.trim_start());
                }
            }
            Some((event?, serde_json::from_str(&data).ok()?))
        })
        .collect()
}

fn fig8_code() -> String {
    let tasks = load_tasks(&common::seed_tasks_path(), None).unwrap();
    tasks.into_iter().find(|t| t.task_id == "stops-01").unwrap().gold_code
}

#[test]
fn scripted_query_streams_stages_then_report() {
    let svc = Service::start(vec![
        StubEntry::role(RoleTag::Moderation, "ALLOWED", (180, 1)),
        StubEntry::role(RoleTag::Main, format!("```python\n{}```", fig8_code()), (9000, 210)),
        StubEntry::role(RoleTag::Summary, "Found **3 stops** at Illinois Terminal: IT:1, IT:2 and IT:5.", (700, 30)),
        StubEntry::role(RoleTag::Moderation, "BLOCKED", (150, 1)),
    ]);

    let (status, feeds) = svc.get("/feeds");
    assert_eq!(status, 200);
    assert_eq!(feeds[0]["feed_id"], "cumtd");
    assert_eq!(feeds[0]["dist_units"], "kilometers");
    assert_eq!(svc.get("/models").1, json!({"models": ["gpt-4o"]}));

    let sid = svc.session();
    let (status, body) =
        svc.post(&format!("/sessions/{sid}/query"), json!({"text": "Identify the number of stops located at Illinois Terminal"}));
    assert_eq!(status, 200);
    let events = sse_events(&body);
    let stages: Vec<&str> = events.iter().filter(|(e, _)| e == "stage").map(|(_, d)| d["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["moderating", "generating", "executing", "summarizing", "done"]);
    let (last, report) = events.last().unwrap();
    assert_eq!(last, "report");
    assert_eq!(report["verdict"], "answered");
    assert_eq!(report["answer"], "Found 3 stops");
    let ids: Vec<&str> = report["additional_info"].as_array().unwrap().iter().map(|s| s["stop_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["IT:1", "IT:2", "IT:5"]);
    assert_eq!(report["tokens"], 180 + 1 + 9000 + 210 + 700 + 30);
    assert_eq!(report["attempts"], 1);

    let (_, body) = svc.post(&format!("/sessions/{sid}/query"), json!({"text": "Who won the World Cup?"}));
    let events = sse_events(&body);
    let stages: Vec<&str> = events.iter().filter(|(e, _)| e == "stage").map(|(_, d)| d["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["moderating", "done"]);
    assert_eq!(events.last().unwrap().1["verdict"], "blocked");
}

#[test]
fn request_errors() {
    let svc = Service::start(vec![]);
    assert_eq!(svc.post("/sessions", json!({"feed_id": "nope", "model_id": "gpt-4o"})).0, 404);
    assert_eq!(svc.post("/sessions", json!({"feed_id": "cumtd", "model_id": "llama"})).0, 400);
    assert_eq!(svc.post("/sessions/s999999/query", json!({"text": "hi"})).0, 404);
    let sid = svc.session();
    assert_eq!(svc.post(&format!("/sessions/{sid}/query"), json!({"text": "   "})).0, 400);
    let (status, body) = svc.post(&format!("/sessions/{sid}/query"), json!({"text": "hi", "config_overrides": {"bogus": 1}}));
    assert_eq!(status, 400);
    assert!(body.contains("bogus"));
}

#[test]
fn overrides_apply_per_query() {
    let svc = Service::start(vec![
        StubEntry::role(RoleTag::Moderation, "ALLOWED", (1, 1)),
        StubEntry::role(RoleTag::Main, "```python\nresult = {'answer': undefined_name}\n```", (1, 1)),
        StubEntry::role(RoleTag::ErrorRetry, "```python\nresult = 2\n```", (1, 1)),
    ]);
    let sid = svc.session();
    let (_, body) = svc.post(&format!("/sessions/{sid}/query"), json!({"text": "How many stops?", "config_overrides": {"max_retries": 0}}));
    let events = sse_events(&body);
    let report = &events.last().unwrap().1;
    assert_eq!(report["verdict"], "failed");
    assert_eq!(report["attempts"], 1);
    assert_eq!(report["last_error"]["type"], "NameError");
}
