use std::net::TcpListener;
use std::thread;

use serde_json::{json, Value};
use transit_ask::sandbox::{read_frame, write_frame, SandboxAddr, SocketExecutor};
use transit_ask_core::exec::{ExecutionRequest, Executor, ExecutorError, OutcomeKind};

/// Serves one connection per scripted reply. The reply closure sees the
/// decoded request and returns raw bytes to frame.
fn fake_worker(replies: Vec<Box<dyn FnOnce(Value) -> Vec<u8> + Send>>) -> (String, thread::JoinHandle<Vec<Value>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("tcp://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for reply in replies {
            let (mut conn, _) = listener.accept().unwrap();
            let req: Value = serde_json::from_slice(&read_frame(&mut conn).unwrap()).unwrap();
            seen.push(req.clone());
            write_frame(&mut conn, &reply(req)).unwrap();
        }
        seen
    });
    (addr, handle)
}

fn request(id: &str, code: &str) -> ExecutionRequest {
    ExecutionRequest { request_id: id.into(), feed_id: "cumtd".into(), code: code.into(), timeout_s: 5 }
}

#[test]
fn success_error_and_timeout_round_trip() {
    let (addr, worker) = fake_worker(vec![
        Box::new(|r| {
            serde_json::to_vec(&json!({
                "request_id": r["request_id"],
                "kind": "success",
                "result": {"answer": "Found 3 stops", "additional_info": [{"stop_id": "IT:1"}]},
                "exec_duration_ms": 41
            }))
            .unwrap()
        }),
        Box::new(|r| {
            serde_json::to_vec(&json!({
                "request_id": r["request_id"],
                "kind": "error",
                "error": {"type": "TypeError", "message": "unsupported operand", "relevant_code": "x + 'a'"},
                "exec_duration_ms": 3
            }))
            .unwrap()
        }),
        Box::new(|r| serde_json::to_vec(&json!({"request_id": r["request_id"], "kind": "timeout", "exec_duration_ms": 5000})).unwrap()),
    ]);
    let ex = SocketExecutor::new(addr.parse().unwrap());

    let ok = ex.execute(&request("q-1-1", "result = {'answer': 'Found 3 stops'}")).unwrap();
    assert_eq!(ok.kind, OutcomeKind::Success);
    assert_eq!(ok.result.unwrap().answer, json!("Found 3 stops"));

    let err = ex.execute(&request("q-1-2", "x + 'a'")).unwrap();
    assert_eq!(err.error.unwrap().error_type, "TypeError");

    let to = ex.execute(&request("q-1-3", "while True: pass")).unwrap();
    assert_eq!(to.kind, OutcomeKind::Timeout);

    let seen = worker.join().unwrap();
    assert_eq!(seen[0], json!({"request_id": "q-1-1", "feed_id": "cumtd", "code": "result = {'answer': 'Found 3 stops'}", "timeout_s": 5}));
    assert_eq!(seen[2]["code"], "while True: pass");
}

#[test]
fn mismatched_id_and_garbage_are_protocol_errors() {
    let (addr, worker) = fake_worker(vec![
        Box::new(|_| serde_json::to_vec(&json!({"request_id": "other", "kind": "timeout", "exec_duration_ms": 1})).unwrap()),
        Box::new(|_| b"not json".to_vec()),
    ]);
    let ex = SocketExecutor::new(addr.parse().unwrap());
    assert!(matches!(ex.execute(&request("a", "1")), Err(ExecutorError::Protocol(_))));
    assert!(matches!(ex.execute(&request("b", "1")), Err(ExecutorError::Protocol(_))));
    worker.join().unwrap();
}

#[test]
fn nothing_listening_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let ex = SocketExecutor::new(SandboxAddr::Tcp(format!("127.0.0.1:{port}")));
    assert!(matches!(ex.execute(&request("a", "1")), Err(ExecutorError::SandboxUnavailable(_))));
}

#[cfg(unix)]
#[test]
fn unix_socket_transport() {
    use std::os::unix::net::UnixListener;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("worker.sock");
    let listener = UnixListener::bind(&path).unwrap();
    let worker = thread::spawn(move || {
        let (mut conn, _) = listener.accept().unwrap();
        let req: Value = serde_json::from_slice(&read_frame(&mut conn).unwrap()).unwrap();
        let reply = json!({"request_id": req["request_id"], "kind": "success", "result": {"answer": 7}, "exec_duration_ms": 1});
        write_frame(&mut conn, &serde_json::to_vec(&reply).unwrap()).unwrap();
    });
    let ex = SocketExecutor::new(format!("unix://{}", path.display()).parse().unwrap());
    assert_eq!(ex.execute(&request("u", "1")).unwrap().result.unwrap().answer, json!(7));
    worker.join().unwrap();
}
