//! Storyline chat sessions and compilation of a storyline into a screenplay.
//!
//! Language models asked not to use double quotes reply with single-quoted,
//! JSON-like text, often wrapped in commentary or cut off. The parser here
//! repairs what it can and records every repair it made.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::genai::prompts::{screenplay_request, SCREENPLAY_SYSTEM_PROMPT, STORYLINE_SYSTEM_PROMPT};
use crate::genai::provider::{ChatMessage, ProviderError, Role, TextGenerator};
use crate::model::{DialogueLine, ScreenplayScene};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("storyline is empty")]
    EmptyStoryline,
    #[error("message is empty")]
    EmptyMessage,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl CompileError {
    pub fn code(&self) -> &'static str {
        match self {
            CompileError::EmptyStoryline => "EmptyStoryline",
            CompileError::EmptyMessage => "EmptyMessage",
            CompileError::Provider(_) => "ProviderError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub system_prompt: String,
    /// Starts with the system prompt, then alternates user and assistant.
    pub messages: Vec<ChatMessage>,
}

pub fn new_storyline_session() -> ChatSession {
    ChatSession {
        session_id: uuid::Uuid::new_v4().to_string(),
        system_prompt: STORYLINE_SYSTEM_PROMPT.to_string(),
        messages: vec![ChatMessage::system(STORYLINE_SYSTEM_PROMPT)],
    }
}

/// Sends one user message. On error the caller's session is untouched.
pub fn chat_turn(
    session: &ChatSession,
    user_text: &str,
    llm: &dyn TextGenerator,
) -> Result<(ChatSession, String), CompileError> {
    if user_text.trim().is_empty() {
        return Err(CompileError::EmptyMessage);
    }
    let mut messages = session.messages.clone();
    messages.push(ChatMessage::user(user_text));
    let reply = llm.complete(&messages)?;
    messages.push(ChatMessage::assistant(reply.clone()));
    Ok((
        ChatSession {
            messages,
            ..session.clone()
        },
        reply,
    ))
}

impl ChatSession {
    /// The conversation as plain text, one `role: content` paragraph per turn.
    pub fn transcript(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role != Role::System)
            .map(|m| {
                let who = if m.role == Role::User { "user" } else { "assistant" };
                format!("{who}: {}", m.content)
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// The exact messages sent to compile `storyline`.
pub fn screenplay_messages(storyline: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(SCREENPLAY_SYSTEM_PROMPT),
        ChatMessage::user(screenplay_request(storyline)),
    ]
}

pub fn compile_screenplay(storyline: &str, llm: &dyn TextGenerator) -> Result<ParseReport, CompileError> {
    if storyline.trim().is_empty() {
        return Err(CompileError::EmptyStoryline);
    }
    let reply = llm.complete(&screenplay_messages(storyline))?;
    Ok(parse_screenplay(&reply))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseReport {
    pub scenes: Vec<ScreenplayScene>,
    /// Normalizations applied to the input, in the order they happened.
    pub repairs: Vec<String>,
    /// Problems that did not change the result, such as uncast speakers,
    /// and the reason for a rejection.
    pub warnings: Vec<String>,
    pub rejected: bool,
}

impl ParseReport {
    fn reject(repairs: Vec<String>, reason: String) -> Self {
        Self {
            scenes: Vec::new(),
            repairs,
            warnings: vec![reason],
            rejected: true,
        }
    }
}

pub const NOTE_LEADING: &str = "removed commentary before the JSON";
pub const NOTE_TRAILING: &str = "removed commentary after the JSON";
pub const NOTE_SINGLE_QUOTES: &str = "converted single-quoted strings to double quotes";
pub const NOTE_INNER_QUOTES: &str = "escaped double quotes inside single-quoted strings";
pub const NOTE_CONTROL_CHARS: &str = "escaped raw control characters inside strings";
pub const NOTE_BAD_ESCAPES: &str = "dropped backslashes before characters that need no escape";
pub const NOTE_TRAILING_COMMAS: &str = "removed trailing commas";

/// Lossy entry point for arbitrary bytes.
pub fn parse_screenplay_bytes(raw: &[u8]) -> ParseReport {
    match std::str::from_utf8(raw) {
        Ok(s) => parse_screenplay(s),
        Err(_) => {
            let mut report = parse_screenplay(&String::from_utf8_lossy(raw));
            report.repairs.insert(0, "replaced invalid UTF-8 sequences".into());
            report
        }
    }
}

pub fn parse_screenplay(raw: &str) -> ParseReport {
    let text = raw.trim();
    if text.is_empty() {
        return ParseReport::reject(Vec::new(), "input is empty".into());
    }
    let mut repairs = Vec::new();
    let value = match serde_json::from_str::<Value>(text) {
        Ok(v) => v,
        Err(_) => match repair(text, &mut repairs) {
            Ok(v) => v,
            Err(reason) => return ParseReport::reject(repairs, reason),
        },
    };
    let items = match value {
        Value::Array(items) => items,
        Value::Object(mut obj) => {
            let nested = ["scenes", "screenplay"]
                .into_iter()
                .find(|k| obj.get(*k).is_some_and(Value::is_array));
            match nested {
                Some(key) => {
                    repairs.push(format!("used the {key:?} list from the top-level object"));
                    match obj.remove(key) {
                        Some(Value::Array(items)) => items,
                        _ => unreachable!("checked to be an array"),
                    }
                }
                None => {
                    repairs.push("wrapped a single scene object in a list".into());
                    vec![Value::Object(obj)]
                }
            }
        }
        other => {
            return ParseReport::reject(
                repairs,
                format!("expected a list of scenes, found {}", type_name(&other)),
            )
        }
    };

    let mut scenes = Vec::new();
    let mut warnings = Vec::new();
    for (i, item) in items.into_iter().enumerate() {
        let n = i + 1;
        match scene_from_value(item) {
            Ok((scene, unknown)) => {
                if !unknown.is_empty() {
                    repairs.push(format!("scene {n}: ignored unknown field(s) {}", unknown.join(", ")));
                }
                for speaker in scene.uncast_speakers() {
                    warnings.push(format!(
                        "scene {n} ({}): speaker {speaker:?} is not listed in characters",
                        scene.scene_name
                    ));
                }
                scenes.push(scene);
            }
            Err(reason) => repairs.push(format!("scene {n}: {reason}, dropped")),
        }
    }
    let rejected = scenes.is_empty();
    if rejected {
        warnings.push("no usable scenes".into());
    }
    ParseReport {
        scenes,
        repairs,
        warnings,
        rejected,
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "a list",
        Value::Object(_) => "an object",
    }
}

const SCENE_FIELDS: [&str; 5] = [
    "sceneName",
    "backgroundDescription",
    "narration",
    "characters",
    "dialogue",
];

fn take_string(obj: &mut Map<String, Value>, key: &str) -> Result<String, String> {
    match obj.remove(key) {
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(format!("{key} is {}, expected a string", type_name(&other))),
        None => Err(format!("missing {key}")),
    }
}

fn scene_from_value(item: Value) -> Result<(ScreenplayScene, Vec<String>), String> {
    let Value::Object(mut obj) = item else {
        return Err(format!("entry is {}, expected an object", type_name(&item)));
    };
    let scene_name = take_string(&mut obj, "sceneName")?;
    if scene_name.trim().is_empty() {
        return Err("sceneName is empty".into());
    }
    let background_description = take_string(&mut obj, "backgroundDescription")?;
    let narration = take_string(&mut obj, "narration")?;
    let characters = match obj.remove("characters") {
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|c| match c {
                Value::String(s) => Ok(s),
                other => Err(format!("characters contains {}", type_name(&other))),
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(other) => return Err(format!("characters is {}, expected a list", type_name(&other))),
        None => return Err("missing characters".into()),
    };
    let mut unknown: Vec<String> = Vec::new();
    let dialogue = match obj.remove("dialogue") {
        Some(Value::Array(items)) => items
            .into_iter()
            .enumerate()
            .map(|(j, line)| {
                let Value::Object(mut line) = line else {
                    return Err(format!("dialogue line {} is {}", j + 1, type_name(&line)));
                };
                let speaker = take_string(&mut line, "speaker").map_err(|e| format!("dialogue line {}: {e}", j + 1))?;
                let speech = take_string(&mut line, "speech").map_err(|e| format!("dialogue line {}: {e}", j + 1))?;
                unknown.extend(line.keys().map(|k| format!("dialogue.{k}")));
                Ok(DialogueLine { speaker, speech })
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(other) => return Err(format!("dialogue is {}, expected a list", type_name(&other))),
        None => return Err("missing dialogue".into()),
    };
    let mut top_unknown: Vec<String> = obj
        .keys()
        .filter(|k| !SCENE_FIELDS.contains(&k.as_str()))
        .cloned()
        .collect();
    top_unknown.append(&mut unknown);
    top_unknown.dedup();
    Ok((
        ScreenplayScene {
            scene_name,
            background_description,
            narration,
            characters,
            dialogue,
        },
        top_unknown,
    ))
}

// ---- repair pipeline ----

fn next_significant(bytes: &[u8], from: usize) -> Option<u8> {
    bytes[from..].iter().copied().find(|b| !b.is_ascii_whitespace())
}

fn opens_single(prev: Option<u8>) -> bool {
    matches!(prev, None | Some(b'{' | b'[' | b',' | b':'))
}

fn closes_single(bytes: &[u8], after: usize) -> bool {
    matches!(next_significant(bytes, after), None | Some(b',' | b'}' | b']' | b':'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Str {
    Out,
    Double,
    Single,
}

/// Tracks string context byte by byte; single quotes count as delimiters
/// only where a JSON string could start or end.
struct Lexer<'a> {
    bytes: &'a [u8],
    state: Str,
    escaped: bool,
    prev: Option<u8>,
}

#[derive(Debug, PartialEq, Eq)]
enum Tok {
    Structural(u8),
    Open(Str),
    Close(Str),
    InString,
    Whitespace,
    Other,
}

impl<'a> Lexer<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            state: Str::Out,
            escaped: false,
            prev: None,
        }
    }

    fn step(&mut self, i: usize) -> Tok {
        let b = self.bytes[i];
        match self.state {
            Str::Double => {
                if self.escaped {
                    self.escaped = false;
                } else if b == b'\\' {
                    self.escaped = true;
                } else if b == b'"' {
                    self.state = Str::Out;
                    self.prev = Some(b'"');
                    return Tok::Close(Str::Double);
                }
                Tok::InString
            }
            Str::Single => {
                if self.escaped {
                    self.escaped = false;
                } else if b == b'\\' {
                    self.escaped = true;
                } else if b == b'\'' && closes_single(self.bytes, i + 1) {
                    self.state = Str::Out;
                    self.prev = Some(b'"');
                    return Tok::Close(Str::Single);
                }
                Tok::InString
            }
            Str::Out => {
                if b.is_ascii_whitespace() {
                    return Tok::Whitespace;
                }
                let prev = self.prev.replace(b);
                match b {
                    b'"' => {
                        self.state = Str::Double;
                        Tok::Open(Str::Double)
                    }
                    b'\'' if opens_single(prev) => {
                        self.state = Str::Single;
                        Tok::Open(Str::Single)
                    }
                    b'[' | b']' | b'{' | b'}' | b',' | b':' => Tok::Structural(b),
                    _ => Tok::Other,
                }
            }
        }
    }
}

struct Scan {
    /// Complete bracket-balanced spans at depth 0, as `start..end`.
    spans: Vec<(usize, usize)>,
    /// Complete objects directly inside an array left open at the end.
    truncated_children: Vec<(usize, usize)>,
}

fn scan(bytes: &[u8]) -> Scan {
    let mut lexer = Lexer::new(bytes);
    let mut stack: Vec<(u8, usize)> = Vec::new();
    let mut spans = Vec::new();
    let mut children: Vec<(usize, usize)> = Vec::new();
    for i in 0..bytes.len() {
        let Tok::Structural(b) = lexer.step(i) else { continue };
        match b {
            b'[' | b'{' => {
                if stack.is_empty() {
                    children.clear();
                }
                stack.push((b, i));
            }
            b']' | b'}' => {
                let want = if b == b']' { b'[' } else { b'{' };
                match stack.last() {
                    Some(&(open, start)) if open == want => {
                        stack.pop();
                        match stack.as_slice() {
                            [] => spans.push((start, i + 1)),
                            [(b'[', _)] if open == b'{' => children.push((start, i + 1)),
                            _ => {}
                        }
                    }
                    _ => {
                        stack.clear();
                        children.clear();
                    }
                }
            }
            _ => {}
        }
    }
    let truncated_children = match stack.first() {
        Some((b'[', _)) => children,
        _ => Vec::new(),
    };
    Scan {
        spans,
        truncated_children,
    }
}

#[derive(Default)]
struct Fixes {
    single_quotes: bool,
    inner_quotes: bool,
    control_chars: bool,
    bad_escapes: bool,
}

/// Rewrites single-quoted strings as JSON strings, escapes raw control
/// characters and drops backslashes JSON does not allow (as in `\'`).
fn normalize_quotes(text: &str) -> (String, Fixes) {
    let bytes = text.as_bytes();
    let mut lexer = Lexer::new(bytes);
    let mut out: Vec<u8> = Vec::with_capacity(bytes.len() + 16);
    let mut fixes = Fixes::default();
    for (i, &b) in bytes.iter().enumerate() {
        let was_escaped = lexer.escaped;
        let state_before = lexer.state;
        match lexer.step(i) {
            Tok::Open(Str::Single) | Tok::Close(Str::Single) => {
                fixes.single_quotes = true;
                out.push(b'"');
            }
            Tok::InString if b < 0x20 => {
                fixes.control_chars = true;
                if was_escaped {
                    out.pop();
                }
                out.extend_from_slice(format!("\\u{b:04x}").as_bytes());
            }
            Tok::InString if was_escaped => {
                if matches!(b, b'"' | b'\\' | b'/' | b'b' | b'f' | b'n' | b'r' | b't' | b'u') {
                    out.push(b);
                } else {
                    fixes.bad_escapes = true;
                    out.pop();
                    out.push(b);
                }
            }
            Tok::InString if state_before == Str::Single && b == b'"' => {
                fixes.inner_quotes = true;
                out.extend_from_slice(b"\\\"");
            }
            _ => out.push(b),
        }
    }
    // Non-ASCII bytes were copied whole, so the output is still UTF-8.
    (String::from_utf8(out).expect("only ASCII bytes were rewritten"), fixes)
}

fn strip_trailing_commas(text: &str) -> (String, bool) {
    let bytes = text.as_bytes();
    let mut lexer = Lexer::new(bytes);
    let mut out = Vec::with_capacity(bytes.len());
    let mut removed = false;
    for i in 0..bytes.len() {
        if lexer.step(i) == Tok::Structural(b',') && matches!(next_significant(bytes, i + 1), Some(b']' | b'}')) {
            removed = true;
            continue;
        }
        out.push(bytes[i]);
    }
    (String::from_utf8(out).expect("only ASCII commas removed"), removed)
}

fn repair(text: &str, repairs: &mut Vec<String>) -> Result<Value, String> {
    let bytes = text.as_bytes();
    let scan = scan(bytes);
    let largest = scan
        .spans
        .iter()
        .copied()
        .max_by_key(|(s, e)| (e - s, std::cmp::Reverse(*s)));
    let has_array = scan.spans.iter().any(|(s, _)| bytes[*s] == b'[');
    let candidate = if !has_array && !scan.truncated_children.is_empty() {
        let parts: Vec<&str> = scan.truncated_children.iter().map(|(s, e)| &text[*s..*e]).collect();
        let (first, _) = scan.truncated_children[0];
        if !text[..first].trim_end().trim_end_matches('[').trim().is_empty() {
            repairs.push(NOTE_LEADING.into());
        }
        repairs.push(format!(
            "reply was cut off; kept {} complete scene(s) from the unfinished list",
            parts.len()
        ));
        format!("[{}]", parts.join(","))
    } else if let Some((s, e)) = largest {
        if s > 0 {
            repairs.push(NOTE_LEADING.into());
        }
        if e < bytes.len() {
            repairs.push(NOTE_TRAILING.into());
        }
        text[s..e].to_string()
    } else {
        return Err("no bracket-balanced JSON found".into());
    };

    if let Ok(v) = serde_json::from_str(&candidate) {
        return Ok(v);
    }
    let (normalized, fixes) = normalize_quotes(&candidate);
    if fixes.single_quotes {
        repairs.push(NOTE_SINGLE_QUOTES.into());
    }
    if fixes.inner_quotes {
        repairs.push(NOTE_INNER_QUOTES.into());
    }
    if fixes.bad_escapes {
        repairs.push(NOTE_BAD_ESCAPES.into());
    }
    if fixes.control_chars {
        repairs.push(NOTE_CONTROL_CHARS.into());
    }
    let first_error = match serde_json::from_str(&normalized) {
        Ok(v) => return Ok(v),
        Err(e) => e,
    };
    let (stripped, removed) = strip_trailing_commas(&normalized);
    if removed {
        if let Ok(v) = serde_json::from_str(&stripped) {
            repairs.push(NOTE_TRAILING_COMMAS.into());
            return Ok(v);
        }
    }
    Err(format!("not valid JSON after repairs: {first_error}"))
}
