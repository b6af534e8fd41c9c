//! The live backends against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use faaf_core::constructor::{build_fact_function, serialize_spec};
use faaf_core::gateway::{connect, BackendDescriptor, Gateway, GatewayError, ModelRequest, RetryPolicy};
use faaf_core::model::{index_facts, FormulationConfig, ResponseDomain, Verdict};
use faaf_core::parser::parse_tool_response;
use serde_json::{json, Value};

struct Captured {
    path: String,
    headers: Vec<(String, String)>,
    body: Value,
}

/// Serves `replies` in order, one connection each, and reports what it saw.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, reply) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
            let mut headers = Vec::new();
            let mut length = 0;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
                if k == "content-length" {
                    length = v.parse().unwrap();
                }
                headers.push((k, v));
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let _ = tx.send(Captured {
                path,
                headers,
                body: serde_json::from_slice(&body).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn header<'a>(c: &'a Captured, name: &str) -> Option<&'a str> {
    c.headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
}

fn gateway(mut d: BackendDescriptor, url: String, key_env: &str) -> Gateway {
    std::env::set_var(key_env, "test-key");
    d.endpoint = Some(url);
    d.api_key_env = Some(key_env.to_string());
    d.timeout_secs = 5;
    let backend = connect(&d, None).unwrap();
    Gateway::new(d, backend).with_retry(RetryPolicy {
        max_retries: 2,
        base_delay: Duration::from_millis(1),
    })
}

fn two_fact_request(gw: &Gateway) -> (faaf_core::FactFunctionSpec, ModelRequest) {
    let facts = index_facts(["Ice is cold.", "Fire is wet."]).unwrap();
    let spec = build_fact_function(&facts, &FormulationConfig::new(ResponseDomain::TF, false)).unwrap();
    let wire = serialize_spec(&spec, gw.descriptor().tool_dialect()).unwrap();
    let req = ModelRequest::tool_call(
        &gw.descriptor().model_id,
        gw.system_prompt(faaf_core::gateway::RequestMode::ToolCall),
        faaf_core::prompts::faaf_prompt("Ice is cold."),
        wire,
        256,
    );
    (spec, req)
}

#[test]
fn json_tools_request_and_reply() {
    let reply = json!({
        "choices": [{"message": {"role": "assistant", "content": null, "tool_calls": [{
            "type": "function",
            "function": {"name": "FactChecker", "arguments": "{\"fact_0\":\"True\",\"fact_1\":\"False\"}"}
        }]}}],
        "usage": {"prompt_tokens": 151, "completion_tokens": 17}
    });
    let (url, seen) = serve(vec![(200, reply.to_string())]);
    let gw = gateway(BackendDescriptor::openai("gpt-test"), url, "FAAF_TEST_JSON_KEY");
    let (spec, req) = two_fact_request(&gw);
    let out = gw.complete(&req).unwrap();
    let r = parse_tool_response(&out, &spec);
    assert_eq!(r.verdicts[&0], Verdict::True);
    assert_eq!(r.verdicts[&1], Verdict::False);
    assert_eq!((out.usage.prompt_tokens, out.usage.completion_tokens), (151, 17));

    let c = seen.recv().unwrap();
    assert_eq!(c.path, "/v1/endpoint");
    assert_eq!(header(&c, "authorization"), Some("Bearer test-key"));
    assert_eq!(c.body["model"], "gpt-test");
    assert_eq!(c.body["temperature"], 0.0);
    assert_eq!(c.body["tool_choice"]["function"]["name"], "FactChecker");
    let params = &c.body["tools"][0]["function"]["parameters"];
    assert_eq!(params["properties"]["fact_1"]["enum"], json!(["True", "False"]));
    assert_eq!(c.body["messages"].as_array().unwrap().last().unwrap()["role"], "user");
}

#[test]
fn xml_tools_request_and_reply() {
    let text = "<function_calls>\n<invoke>\n<tool_name>FactChecker</tool_name>\n<parameters>\n<fact_0>True</fact_0>\n<fact_1>False</fact_1>\n</parameters>\n</invoke>\n";
    let reply = json!({
        "content": [{"type": "text", "text": text}],
        "stop_reason": "stop_sequence",
        "stop_sequence": "</function_calls>",
        "usage": {"input_tokens": 420, "output_tokens": 40}
    });
    let (url, seen) = serve(vec![(200, reply.to_string())]);
    let gw = gateway(BackendDescriptor::anthropic("claude-test"), url, "FAAF_TEST_XML_KEY");
    let (spec, req) = two_fact_request(&gw);
    let out = gw.complete(&req).unwrap();
    assert!(out.body.ends_with("</function_calls>"));
    let r = parse_tool_response(&out, &spec);
    assert_eq!(r.verdicts[&0], Verdict::True);
    assert_eq!(r.verdicts[&1], Verdict::False);
    assert_eq!(out.usage.total_tokens(), 460);

    let c = seen.recv().unwrap();
    assert_eq!(header(&c, "x-api-key"), Some("test-key"));
    assert!(header(&c, "anthropic-version").is_some());
    assert_eq!(c.body["stop_sequences"], json!(["</function_calls>"]));
    let system = c.body["system"].as_str().unwrap();
    assert!(system.contains("<tool_description>"));
    assert!(system.contains("<enum>True, False</enum>"));
    assert_eq!(system.matches("<invoke>").count(), 1);
}

#[test]
fn server_errors_are_retried_then_succeed() {
    let ok = json!({"choices": [{"message": {"content": "True"}}]}).to_string();
    let (url, seen) = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, ok)]);
    let gw = gateway(BackendDescriptor::openai("m"), url, "FAAF_TEST_RETRY_KEY");
    let req = ModelRequest::prompt("m", String::new(), "Passage: x".into(), 16);
    let out = gw.complete(&req).unwrap();
    assert_eq!(out.body, "True");
    assert_eq!(gw.upstream_calls(), 1);
    assert_eq!(seen.iter().take(3).count(), 3);
    // No usage block: tokens are estimated from text length.
    assert!(out.usage.prompt_tokens > 0);
}

#[test]
fn auth_and_client_errors_are_not_retried() {
    let (url, _seen) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
    let gw = gateway(BackendDescriptor::openai("m"), url, "FAAF_TEST_AUTH_KEY");
    let req = ModelRequest::prompt("m", String::new(), "p".into(), 16);
    let err = gw.complete(&req).unwrap_err();
    assert!(matches!(err, GatewayError::Auth(_)));
    assert!(err.is_fatal());

    let (url, _seen) = serve(vec![(400, "{}".into())]);
    let gw = gateway(BackendDescriptor::anthropic("m"), url, "FAAF_TEST_BAD_KEY");
    let req = ModelRequest::prompt("m", String::new(), "p".into(), 16);
    assert!(matches!(
        gw.complete(&req),
        Err(GatewayError::Transport { retryable: false, .. })
    ));
}

#[test]
fn missing_key_fails_before_sending() {
    let mut d = BackendDescriptor::openai("m");
    d.api_key_env = Some("FAAF_TEST_UNSET_KEY_XYZ".into());
    d.endpoint = Some("http://127.0.0.1:9/never".into());
    let gw = Gateway::new(d.clone(), connect(&d, None).unwrap());
    let req = ModelRequest::prompt("m", String::new(), "p".into(), 16);
    assert!(matches!(gw.complete(&req), Err(GatewayError::Auth(_))));
    assert_eq!(gw.upstream_calls(), 0);
}
