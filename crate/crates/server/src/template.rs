//! UI template resolution, placeholder substitution and sanitizing.

use std::path::PathBuf;

use brewtask_core::model::Payload;

/// Resolves a job's `ui_template_ref`. A bare `name.html` is read from the
/// template directory when one is configured; anything else is treated as
/// inline markup. Remote templates are not fetched.
#[derive(Debug, Clone, Default)]
pub struct Templates {
    dir: Option<PathBuf>,
}

impl Templates {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    pub fn resolve(&self, reference: &str) -> String {
        let is_name = reference.ends_with(".html")
            && reference
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            && !reference.starts_with('.');
        if let (true, Some(dir)) = (is_name, &self.dir) {
            match std::fs::read_to_string(dir.join(reference)) {
                Ok(s) => return s,
                Err(e) => tracing::warn!(template = reference, error = %e, "template not readable"),
            }
        }
        reference.to_owned()
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Replaces `{{field}}` with the HTML-escaped payload value. Unknown
/// placeholders become empty.
pub fn substitute(template: &str, payload: &Payload) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let key = after[..end].trim();
                if let Some(v) = payload.get(key) {
                    out.push_str(&escape(v));
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Strips scripts, event handlers and other active content while keeping
/// form controls.
pub fn sanitize(html: &str) -> String {
    let form_tags = ["form", "input", "label", "select", "option", "textarea", "button", "fieldset", "legend"];
    let form_attrs = [
        "name", "type", "value", "placeholder", "checked", "selected", "for", "id", "class", "required", "multiple",
    ];
    ammonia::Builder::default()
        .add_tags(form_tags)
        .add_generic_attributes(form_attrs)
        .clean(html)
        .to_string()
}

pub fn render(template: &str, payload: &Payload) -> String {
    sanitize(&substitute(template, payload))
}
