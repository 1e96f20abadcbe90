use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use super::*;
use crate::cfg::ProgramCfg;
use crate::testutil::{running_example, running_match};
use crate::trace::{estimate, BaseVariant, Known, Variant};

fn t2_trace() -> (SourceModel, ProgramCfg, EstimatedTrace) {
    let m = running_example();
    let g = ProgramCfg::build(&m);
    let known = Known::from(&running_match());
    let t = estimate(&m, &g, &known, Variant { base: BaseVariant::T2, csr: false });
    (m, g, t)
}

fn prompt(gran: Granularity, k: usize) -> PromptSpec {
    let (m, g, t) = t2_trace();
    render_prompt(&m, &g, &t, gran, k, "ZeroDivisionError: division by zero").unwrap()
}

struct Fixed(&'static str);

impl LlmBackend for Fixed {
    fn complete(&self, _: &LlmRequest) -> Result<LlmResponse, FlError> {
        Ok(LlmResponse { text: self.0.into(), ..Default::default() })
    }
}

#[test]
fn block_prompt_on_running_example() {
    let p = prompt(Granularity::Block, 3);
    assert_eq!(p.max_element_id, 7);
    assert_eq!(p.output_template, r#"{"faulty_blocks": ["BLOCK 10", "BLOCK 7", ...]}"#);
    assert_eq!(p.elements, (1..=7).map(ElementRef::Block).collect::<Vec<_>>());
    assert!(p.labeled_code.starts_with("BLOCK 1\ndef test_1(values):\n"));
    assert!(p.text.contains("identify 3 blocks"));
    assert!(p.text.contains("within the range 1 to 7"));
    assert!(!p.text.contains("# ----"), "comment-only block leaked");
}

#[test]
fn line_prompt_numbers_every_kept_line() {
    let (m, g, mut t) = t2_trace();
    t.executed.retain(|&l| l != 18 && l != 19);
    let p = render_prompt(&m, &g, &t, Granularity::Line, 5, "err").unwrap();
    assert_eq!(p.max_element_id, 22);
    let lines: Vec<&str> = p.labeled_code.lines().collect();
    assert_eq!(lines[0], "1: def test_1(values):");
    assert_eq!(lines[17], "18: # ----------------------------------------------------------------");
    assert_eq!(p.element(18), Some(&ElementRef::Line(20)));
    assert_eq!(p.prompt_id_of(&ElementRef::Line(20)), Some(18));
    assert_eq!(p.element(23), None);
}

#[test]
fn function_prompt_is_unlabeled() {
    let p = prompt(Granularity::Function, 2);
    let names: Vec<_> = p.elements.iter().map(|e| format!("{e:?}")).collect();
    assert_eq!(names.len(), 4, "{names:?}");
    assert!(!p.labeled_code.contains("BLOCK"));
    assert!(p.labeled_code.starts_with("def test_1(values):"));
    assert!(p.output_template.contains("faulty_functions"));
}

#[test]
fn rendering_is_deterministic() {
    for g in Granularity::ALL {
        assert_eq!(prompt(g, 3).text, prompt(g, 3).text);
        assert_eq!(prompt(g, 3).hash(), prompt(g, 3).hash());
    }
    assert_ne!(prompt(Granularity::Block, 3).hash(), prompt(Granularity::Block, 5).hash());
}

#[test]
fn k_larger_than_elements_is_requested_verbatim() {
    let p = prompt(Granularity::Block, 20);
    assert!(p.text.contains("must be exactly 20"));
}

#[test]
fn empty_trace_is_an_error() {
    let (m, g, mut t) = t2_trace();
    t.executed.clear();
    assert!(matches!(render_prompt(&m, &g, &t, Granularity::Block, 3, ""), Err(FlError::EmptyTrace(Granularity::Block))));
}

#[test]
fn parses_blocks_with_prose_and_fences() {
    let p = prompt(Granularity::Block, 3);
    let raw = "Sure!\n```json\n{\"faulty_blocks\": [\"BLOCK 6\", \"BLOCK 99\", \"BLOCK 6\", \"BLOCK 1\"]}\n```";
    let pred = parse_and_validate(raw, &p).unwrap();
    let flags: Vec<_> = pred.ranked.iter().map(|e| e.flag).collect();
    assert_eq!(flags, [EntryFlag::Ok, EntryFlag::OutOfRange, EntryFlag::Duplicate]);
    assert_eq!(pred.ranked[0].element, Some(ElementRef::Block(6)));
}

#[test]
fn parses_functions_by_short_or_full_name() {
    let p = prompt(Granularity::Function, 3);
    let pred = parse_and_validate(r#"{"faulty_functions": ["test_1", "nope", "execute_tests()"]}"#, &p).unwrap();
    assert_eq!(pred.ranked[0].element, Some(ElementRef::Function("test_1".into())));
    assert_eq!(pred.ranked[1].flag, EntryFlag::OutOfRange);
    assert_eq!(pred.ranked[2].element, Some(ElementRef::Function("execute_tests".into())));
}

#[test]
fn parses_line_format_and_stops_at_first_run() {
    let p = prompt(Granularity::Line, 5);
    let raw = "Here you go:\n3: return set()\n17: var_2 = var_1 / len(values)\n\n1: def test_1(values):";
    let pred = parse_and_validate(raw, &p).unwrap();
    assert_eq!(pred.ranked.len(), 2);
    assert_eq!(pred.ranked[0].content.as_deref(), Some("return set()"));
    assert!(matches!(parse_and_validate("no answer", &p), Err(FlError::UnparseableOutput)));
}

#[test]
fn mismatch_is_repaired_to_nearest_match() {
    let p = prompt(Granularity::Line, 3);
    let pred = parse_and_validate("12: values = test_1(values)\n3: return set()", &p).unwrap();
    let fixed = mitigate_mismatch(pred, &p);
    assert_eq!(fixed.ranked[0].prompt_id, Some(13));
    assert_eq!(fixed.ranked[0].flag, EntryFlag::MismatchRepaired);
    assert_eq!(fixed.ranked[1].prompt_id, Some(3));
    assert_eq!(fixed.ranked[1].flag, EntryFlag::Ok);
}

#[test]
fn token_counts_grow_with_text() {
    for t in [Tokenizer::WordPunct, Tokenizer::CharQuad] {
        let a = count_tokens("x = 1", t);
        let b = count_tokens("x = 1\ny = foo(x)", t);
        assert!(b > a);
    }
    assert_eq!(count_tokens("a.b(c)", Tokenizer::WordPunct), 6);
}

#[test]
fn localize_records_failures_without_panicking() {
    let (m, g, t) = t2_trace();
    let input = LocalizeInput { case_id: "c", model: &m, cfgs: &g, trace: &t, granularity: Granularity::Block, k: 2, error_message: "e" };
    let (run, p) = localize(&input, &Fixed(r#"{"faulty_blocks": ["BLOCK 1", "BLOCK 6"]}"#));
    assert!(run.error.is_none());
    assert_eq!(run.ranked_elements(), vec![Some(ElementRef::Block(1)), Some(ElementRef::Block(6))]);
    assert!(run.stats.approximate_tokens);
    assert_eq!(run.prompt_hash, p.unwrap().hash());

    let (bad, _) = localize(&input, &Fixed("I cannot help"));
    assert!(bad.error.is_some() && bad.ranked.is_empty());
}

#[test]
fn mock_backend_lookup_order() {
    let p = prompt(Granularity::Block, 3);
    let json = format!(
        r#"{{"by_prompt_hash": {{"{}": "H"}}, "by_case": {{"a": "A", "b": {{"line": "BL"}}}}, "default": "D"}}"#,
        p.hash()
    );
    let mock = MockBackend::new(serde_json::from_str::<MockResponses>(&json).unwrap());
    let ask = |case| mock.complete(&LlmRequest { case_id: case, prompt: &p }).unwrap().text;
    assert_eq!(ask("a"), "H");
    let other = prompt(Granularity::Line, 3);
    let ask2 = |case| mock.complete(&LlmRequest { case_id: case, prompt: &other }).unwrap().text;
    assert_eq!(ask2("a"), "A");
    assert_eq!(ask2("b"), "BL");
    assert_eq!(ask2("z"), "D");
}

fn serve_once(status: &'static str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", l.local_addr().unwrap());
    let h = std::thread::spawn(move || {
        let (mut s, _) = l.accept().unwrap();
        let mut r = BufReader::new(s.try_clone().unwrap());
        let mut len = 0;
        loop {
            let mut line = String::new();
            r.read_line(&mut line).unwrap();
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
        }
        let mut req = vec![0; len];
        r.read_exact(&mut req).unwrap();
        write!(s, "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len()).unwrap();
        String::from_utf8(req).unwrap()
    });
    (url, h)
}

#[test]
fn remote_backend_speaks_chat_completions() {
    let (url, h) = serve_once(
        "200 OK",
        r#"{"choices":[{"message":{"content":"{\"faulty_blocks\": [\"BLOCK 1\"]}"},"finish_reason":"stop"}],"usage":{"prompt_tokens":11,"completion_tokens":5}}"#,
    );
    let cfg = BackendConfig { endpoint: url, model: "m".into(), temperature: Some(0.2), ..Default::default() };
    let p = prompt(Granularity::Block, 1);
    let resp = RemoteBackend::new(cfg).complete(&LlmRequest { case_id: "c", prompt: &p }).unwrap();
    let sent: serde_json::Value = serde_json::from_str(&h.join().unwrap()).unwrap();
    assert_eq!(sent["model"], "m");
    assert_eq!(sent["max_tokens"], 2048);
    assert_eq!(sent["temperature"], 0.2);
    assert_eq!(sent["messages"][0]["content"], p.text.as_str());
    assert_eq!(resp.input_tokens, Some(11));
    assert_eq!(resp.output_tokens, Some(5));
    assert!(!resp.truncated);
}

#[test]
fn remote_backend_maps_refusals_and_truncation() {
    let (url, h) = serve_once("400 Bad Request", r#"{"error":"nope"}"#);
    let p = prompt(Granularity::Block, 1);
    let b = RemoteBackend::new(BackendConfig { endpoint: url, ..Default::default() });
    assert!(matches!(b.complete(&LlmRequest { case_id: "c", prompt: &p }), Err(FlError::BackendRefusal(_))));
    h.join().unwrap();

    let (url, h) = serve_once("200 OK", r#"{"choices":[{"message":{"content":"{\"faulty_bl"},"finish_reason":"length"}]}"#);
    let b = RemoteBackend::new(BackendConfig { endpoint: url, ..Default::default() });
    let r = b.complete(&LlmRequest { case_id: "c", prompt: &p }).unwrap();
    assert!(r.truncated);
    h.join().unwrap();
}
