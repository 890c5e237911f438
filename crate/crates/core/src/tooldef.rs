//! Tool definition files.
//!
//! A tool definition file (`.tdf`) is a flat sequence of annotated
//! function definitions, each followed by a Sphinx-style docstring:
//!
//! ```text
//! def add(a: float, b: float) -> float:
//!     """
//!     Add two numbers.
//!
//!     :param a: The first number.
//!     :param b: The second number.
//!     :return: The sum of a and b.
//!     """
//!     return a + b
//! ```
//!
//! The format is a strict subset of Python, so the same file can be handed
//! to an interpreter for execution. Only the signature line and the
//! docstring are read here; bodies, classes, imports and nested
//! definitions are skipped.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: `{function}`: {message}")]
    DocMismatch {
        line: usize,
        function: String,
        message: String,
    },
    #[error("line {line}: function `{function}` has no docstring")]
    MissingDoc { line: usize, function: String },
    #[error("line {line}: function `{function}` is defined more than once")]
    DuplicateFunction { line: usize, function: String },
    #[error("`{0}` is not a valid module name")]
    InvalidModuleName(String),
}

impl ParseError {
    /// 1-based source line the error points at, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { line, .. }
            | ParseError::DocMismatch { line, .. }
            | ParseError::MissingDoc { line, .. }
            | ParseError::DuplicateFunction { line, .. } => Some(*line),
            ParseError::InvalidModuleName(_) => None,
        }
    }

    /// Short machine-friendly category name.
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::Syntax { .. } => "SyntaxError",
            ParseError::DocMismatch { .. } => "DocMismatch",
            ParseError::MissingDoc { .. } => "MissingDoc",
            ParseError::DuplicateFunction { .. } => "DuplicateFunction",
            ParseError::InvalidModuleName(_) => "InvalidModuleName",
        }
    }
}

/// JSON-schema type of a tool parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Number,
    Integer,
    String,
    Boolean,
    Array,
    Object,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Number => "number",
            ParamKind::Integer => "integer",
            ParamKind::String => "string",
            ParamKind::Boolean => "boolean",
            ParamKind::Array => "array",
            ParamKind::Object => "object",
        }
    }

    fn from_scalar(annotation: &str) -> Option<ParamKind> {
        match annotation {
            "float" => Some(ParamKind::Number),
            "int" => Some(ParamKind::Integer),
            "str" => Some(ParamKind::String),
            "bool" => Some(ParamKind::Boolean),
            "list" | "List" | "tuple" | "Tuple" => Some(ParamKind::Array),
            "dict" | "Dict" => Some(ParamKind::Object),
            _ => None,
        }
    }

    /// Maps a type annotation to a kind plus, for sequences, the element kind.
    fn from_annotation(annotation: &str) -> Option<(ParamKind, Option<ParamKind>)> {
        let annotation: String = annotation.chars().filter(|c| !c.is_whitespace()).collect();
        if let Some(kind) = ParamKind::from_scalar(&annotation) {
            return Some((kind, None));
        }
        let open = annotation.find('[')?;
        if !annotation.ends_with(']') {
            return None;
        }
        let outer = &annotation[..open];
        let inner = &annotation[open + 1..annotation.len() - 1];
        match ParamKind::from_scalar(outer)? {
            ParamKind::Array => {
                let items = match outer {
                    // tuple[float, float] and tuple[float, ...] share one element kind
                    "tuple" | "Tuple" => {
                        let parts: Vec<&str> = split_top_level(inner, ',')
                            .into_iter()
                            .filter(|p| *p != "...")
                            .collect();
                        let kinds: Vec<Option<ParamKind>> = parts
                            .iter()
                            .map(|p| ParamKind::from_annotation(p).map(|(k, _)| k))
                            .collect();
                        match kinds.first() {
                            Some(Some(first)) if kinds.iter().all(|k| *k == Some(*first)) => {
                                Some(*first)
                            }
                            _ => None,
                        }
                    }
                    _ => ParamKind::from_annotation(inner).map(|(k, _)| k),
                };
                Some((ParamKind::Array, items))
            }
            ParamKind::Object => Some((ParamKind::Object, None)),
            _ => None,
        }
    }
}

impl std::fmt::Display for ParamKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolParameter {
    pub name: String,
    pub kind: ParamKind,
    /// Element kind for `list[...]` annotations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<ParamKind>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub module: String,
    pub name: String,
    pub qualified_id: String,
    pub summary: String,
    pub parameters: Vec<ToolParameter>,
    pub return_description: String,
    pub raw_docstring: String,
}

impl ToolDescriptor {
    /// Re-renders the `:param:` and `:return:` field lines.
    pub fn render_fields(&self) -> String {
        let mut out = String::new();
        for p in &self.parameters {
            out.push_str(&format!(":param {}: {}\n", p.name, p.description));
        }
        if !self.return_description.is_empty() {
            out.push_str(&format!(":return: {}\n", self.return_description));
        }
        out
    }

    pub fn parameter(&self, name: &str) -> Option<&ToolParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolDefinitionFile {
    pub module: String,
    pub source_text: String,
    pub descriptors: Vec<ToolDescriptor>,
}

pub fn qualified_id(module: &str, name: &str) -> String {
    format!("{module}__{name}")
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c == '_' || c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

/// Parses a tool definition file into one descriptor per documented,
/// public, top-level function.
pub fn parse_tool_file(module_name: &str, source_text: &str) -> Result<ToolDefinitionFile, ParseError> {
    if !is_identifier(module_name) {
        return Err(ParseError::InvalidModuleName(module_name.to_string()));
    }
    let lines: Vec<&str> = source_text.lines().collect();
    let mut descriptors: Vec<ToolDescriptor> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if is_top_level(line) {
            if let Some(rest) = line.strip_prefix("def ") {
                let name = rest.split('(').next().unwrap_or("").trim();
                if name.starts_with('_') {
                    i = skip_block(&lines, i + 1);
                    continue;
                }
                let (descriptor, next) = parse_function(module_name, &lines, i)?;
                if descriptors.iter().any(|d| d.name == descriptor.name) {
                    return Err(ParseError::DuplicateFunction {
                        line: i + 1,
                        function: descriptor.name,
                    });
                }
                descriptors.push(descriptor);
                i = next;
                continue;
            }
            // module-level string literals may span lines
            let trimmed = line.trim_start_matches(['r', 'b', 'u', 'f']);
            if let Some(quote) = ["\"\"\"", "'''"].iter().find(|q| trimmed.starts_with(**q)) {
                if !trimmed[3..].contains(quote) {
                    i = find_closing(&lines, i + 1, quote).map(|j| j + 1).unwrap_or(lines.len());
                    continue;
                }
            }
        }
        i += 1;
    }
    Ok(ToolDefinitionFile {
        module: module_name.to_string(),
        source_text: source_text.to_string(),
        descriptors,
    })
}

/// The canonical text embedded for a tool.
pub fn embedding_document(d: &ToolDescriptor) -> String {
    format!("{}:\n{}", d.name, d.raw_docstring)
}

/// Function-calling schema in the chat-completions `tools` layout.
pub fn descriptor_schema(d: &ToolDescriptor) -> Value {
    let mut properties = Map::new();
    for p in &d.parameters {
        let mut prop = Map::new();
        prop.insert("type".into(), json!(p.kind.as_str()));
        prop.insert("description".into(), json!(p.description));
        if p.kind == ParamKind::Array {
            let items = match p.items {
                Some(k) => json!({ "type": k.as_str() }),
                None => json!({}),
            };
            prop.insert("items".into(), items);
        }
        properties.insert(p.name.clone(), Value::Object(prop));
    }
    let required: Vec<&str> = d.parameters.iter().map(|p| p.name.as_str()).collect();
    json!({
        "type": "function",
        "function": {
            "name": d.qualified_id,
            "description": d.summary,
            "parameters": {
                "type": "object",
                "properties": properties,
                "required": required,
            }
        }
    })
}

/// Removes a top-level function (signature, docstring and body) from a
/// source text. Returns `None` when the function is not defined there.
pub fn remove_function(source: &str, name: &str) -> Option<String> {
    let lines: Vec<&str> = source.lines().collect();
    let prefix = format!("def {name}(");
    let start = lines.iter().position(|l| l.starts_with(&prefix))?;
    let end = skip_block(&lines, start + 1);
    let mut kept: Vec<&str> = lines[..start].to_vec();
    kept.extend_from_slice(&lines[end..]);
    while kept.last().is_some_and(|l| l.trim().is_empty()) {
        kept.pop();
    }
    let mut out = kept.join("\n");
    if !out.is_empty() {
        out.push('\n');
    }
    Some(out)
}

fn is_top_level(line: &str) -> bool {
    !line.is_empty() && !line.starts_with([' ', '\t'])
}

fn skip_block(lines: &[&str], mut i: usize) -> usize {
    while i < lines.len() && !is_top_level(lines[i]) {
        i += 1;
    }
    i
}

fn find_closing(lines: &[&str], from: usize, quote: &str) -> Option<usize> {
    (from..lines.len()).find(|&j| lines[j].contains(quote))
}

/// Splits on `sep` outside of brackets and string literals.
fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut quote: Option<char> = None;
    let mut start = 0;
    for (idx, c) in s.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None => match c {
                '\'' | '"' => quote = Some(c),
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' => depth -= 1,
                c if c == sep && depth == 0 => {
                    parts.push(s[start..idx].trim());
                    start = idx + c.len_utf8();
                }
                _ => {}
            },
        }
    }
    parts.push(s[start..].trim());
    parts
}

struct Signature {
    name: String,
    params: Vec<(String, ParamKind, Option<ParamKind>)>,
}

fn parse_signature(line: &str, line_no: usize) -> Result<Signature, ParseError> {
    let syntax = |message: String| ParseError::Syntax {
        line: line_no,
        message,
    };
    let rest = line.strip_prefix("def ").unwrap_or(line);
    let open = rest
        .find('(')
        .ok_or_else(|| syntax("expected `(` after function name".into()))?;
    let name = rest[..open].trim().to_string();
    if !is_identifier(&name) {
        return Err(syntax(format!("`{name}` is not a valid function name")));
    }

    let mut depth = 0i32;
    let mut close = None;
    let mut quote: Option<char> = None;
    for (idx, c) in rest[open..].char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None => match c {
                '\'' | '"' => quote = Some(c),
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(open + idx);
                        break;
                    }
                }
                _ => {}
            },
        }
    }
    let close = close.ok_or_else(|| syntax("unclosed parameter list; signatures must fit on one line".into()))?;

    let mut tail = rest[close + 1..].trim();
    if let Some(hash) = tail.find('#') {
        tail = tail[..hash].trim_end();
    }
    let tail = tail
        .strip_suffix(':')
        .ok_or_else(|| syntax("expected `:` at the end of the signature".into()))?
        .trim();
    if !tail.is_empty() {
        let ret = tail
            .strip_prefix("->")
            .ok_or_else(|| syntax(format!("unexpected `{tail}` after parameter list")))?;
        if ret.trim().is_empty() {
            return Err(syntax("missing return annotation after `->`".into()));
        }
    }

    let mut params = Vec::new();
    let inner = &rest[open + 1..close];
    for raw in split_top_level(inner, ',') {
        if raw.is_empty() {
            continue;
        }
        if raw.starts_with('*') || raw == "/" {
            return Err(syntax(format!("unsupported parameter `{raw}`")));
        }
        // drop the default value; all parameters are required
        let without_default = split_top_level(raw, '=')[0];
        let mut pieces = without_default.splitn(2, ':');
        let pname = pieces.next().unwrap_or("").trim().to_string();
        if !is_identifier(&pname) {
            return Err(syntax(format!("`{pname}` is not a valid parameter name")));
        }
        let annotation = match pieces.next() {
            Some(a) if !a.trim().is_empty() => a.trim(),
            _ => {
                return Err(ParseError::DocMismatch {
                    line: line_no,
                    function: name,
                    message: format!("parameter `{pname}` has no type annotation"),
                })
            }
        };
        let (kind, items) = ParamKind::from_annotation(annotation)
            .ok_or_else(|| syntax(format!("unsupported type annotation `{annotation}` for `{pname}`")))?;
        if params.iter().any(|(n, _, _): &(String, _, _)| *n == pname) {
            return Err(syntax(format!("duplicate parameter `{pname}`")));
        }
        params.push((pname, kind, items));
    }
    Ok(Signature { name, params })
}

/// Equivalent of Python's `inspect.cleandoc`.
fn clean_docstring(raw_lines: &[&str]) -> String {
    let mut lines: Vec<String> = Vec::with_capacity(raw_lines.len());
    let indent = raw_lines
        .iter()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    for (idx, l) in raw_lines.iter().enumerate() {
        if idx == 0 {
            lines.push(l.trim_start().trim_end().to_string());
        } else if l.trim().is_empty() {
            lines.push(String::new());
        } else {
            lines.push(l[indent.min(l.len())..].trim_end().to_string());
        }
    }
    while lines.first().is_some_and(|l| l.is_empty()) {
        lines.remove(0);
    }
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

enum Field {
    Param(String),
    Return,
    Other,
}

/// Recognises `:param name:`, `:param type name:`, `:return:`, and any
/// other `:word ...:` field. Returns the field and the remaining text.
fn parse_field_line(line: &str) -> Option<(Field, &str)> {
    let body = line.strip_prefix(':')?;
    let end = body.find(':')?;
    let head = &body[..end];
    if head.is_empty() || head.starts_with(' ') {
        return None;
    }
    let text = body[end + 1..].trim();
    let words: Vec<&str> = head.split_whitespace().collect();
    let field = match words.as_slice() {
        ["param", .., name] if words.len() >= 2 => Field::Param((*name).to_string()),
        ["return"] | ["returns"] => Field::Return,
        _ => Field::Other,
    };
    Some((field, text))
}

fn parse_function(module: &str, lines: &[&str], start: usize) -> Result<(ToolDescriptor, usize), ParseError> {
    let def_line = start + 1;
    let sig = parse_signature(lines[start], def_line)?;
    let mismatch = |message: String| ParseError::DocMismatch {
        line: def_line,
        function: sig.name.clone(),
        message,
    };

    let mut j = start + 1;
    while j < lines.len() && lines[j].trim().is_empty() {
        j += 1;
    }
    let missing = || ParseError::MissingDoc {
        line: def_line,
        function: sig.name.clone(),
    };
    if j >= lines.len() || is_top_level(lines[j]) {
        return Err(missing());
    }
    let first = lines[j].trim_start();
    let after_quote = first
        .strip_prefix("r\"\"\"")
        .or_else(|| first.strip_prefix("\"\"\""))
        .ok_or_else(missing)?;

    let doc_start = j + 1;
    let mut raw: Vec<&str> = Vec::new();
    let end;
    if let Some(pos) = after_quote.find("\"\"\"") {
        raw.push(&after_quote[..pos]);
        end = j + 1;
    } else {
        raw.push(after_quote);
        let mut k = j + 1;
        loop {
            if k >= lines.len() {
                return Err(ParseError::Syntax {
                    line: doc_start,
                    message: "unterminated docstring".into(),
                });
            }
            if let Some(pos) = lines[k].find("\"\"\"") {
                raw.push(&lines[k][..pos]);
                break;
            }
            raw.push(lines[k]);
            k += 1;
        }
        end = k + 1;
    }
    let raw_docstring = clean_docstring(&raw);

    let mut summary_lines: Vec<&str> = Vec::new();
    let mut param_docs: Vec<(String, String)> = Vec::new();
    let mut return_description = String::new();
    let mut current: Option<(Field, String)> = None;
    let mut in_summary = true;

    let flush = |current: &mut Option<(Field, String)>,
                     param_docs: &mut Vec<(String, String)>,
                     return_description: &mut String|
     -> Result<(), ParseError> {
        if let Some((field, text)) = current.take() {
            match field {
                Field::Param(name) => {
                    if param_docs.iter().any(|(n, _)| *n == name) {
                        return Err(mismatch(format!("parameter `{name}` is documented twice")));
                    }
                    if text.is_empty() {
                        return Err(mismatch(format!("parameter `{name}` has an empty description")));
                    }
                    param_docs.push((name, text));
                }
                Field::Return => *return_description = text,
                Field::Other => {}
            }
        }
        Ok(())
    };

    for line in raw_docstring.lines() {
        let trimmed = line.trim();
        if let Some((field, text)) = parse_field_line(trimmed) {
            flush(&mut current, &mut param_docs, &mut return_description)?;
            in_summary = false;
            current = Some((field, text.to_string()));
            continue;
        }
        if in_summary {
            if trimmed.is_empty() {
                if !summary_lines.is_empty() {
                    in_summary = false;
                }
            } else {
                summary_lines.push(trimmed);
            }
            continue;
        }
        if let Some((_, text)) = current.as_mut() {
            if !trimmed.is_empty() {
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(trimmed);
            }
        }
    }
    flush(&mut current, &mut param_docs, &mut return_description)?;

    let summary = summary_lines.join(" ");
    if summary.is_empty() {
        return Err(mismatch("docstring has no summary paragraph".into()));
    }

    let mut parameters = Vec::with_capacity(sig.params.len());
    for (pname, kind, items) in &sig.params {
        let description = param_docs
            .iter()
            .find(|(n, _)| n == pname)
            .map(|(_, d)| d.clone())
            .ok_or_else(|| mismatch(format!("parameter `{pname}` has no `:param {pname}:` entry")))?;
        parameters.push(ToolParameter {
            name: pname.clone(),
            kind: *kind,
            items: *items,
            description,
        });
    }
    if let Some((extra, _)) = param_docs
        .iter()
        .find(|(n, _)| !sig.params.iter().any(|(p, _, _)| p == n))
    {
        return Err(mismatch(format!("documented parameter `{extra}` is not in the signature")));
    }

    let next = skip_block(lines, end);
    Ok((
        ToolDescriptor {
            module: module.to_string(),
            qualified_id: qualified_id(module, &sig.name),
            name: sig.name,
            summary,
            parameters,
            return_description,
            raw_docstring,
        },
        next,
    ))
}
