//! Minimal JSON client that drives the service router in-process.

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{method} {path}: {status} {body}")]
    Status {
        method: Method,
        path: String,
        status: StatusCode,
        body: String,
    },
    #[error("transport: {0}")]
    Transport(String),
}

#[derive(Debug, Clone)]
pub struct Reply {
    pub status: StatusCode,
    pub body: Value,
}

impl Reply {
    /// The machine-readable error code, if the reply is an error.
    pub fn error_code(&self) -> Option<&str> {
        self.body.get("error").and_then(Value::as_str)
    }
}

#[derive(Clone)]
pub struct ApiClient {
    router: Router,
}

impl ApiClient {
    pub fn new(router: Router) -> Self {
        Self { router }
    }

    pub async fn send(
        &self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<&Value>,
        idempotency_key: Option<&str>,
    ) -> Result<Reply, ClientError> {
        let mut b = Request::builder().method(method).uri(path);
        if let Some(t) = token {
            b = b.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        if let Some(k) = idempotency_key {
            b = b.header("idempotency-key", k);
        }
        let req = match body {
            Some(v) => b
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(v.to_string())),
            None => b.body(Body::empty()),
        }
        .map_err(|e| ClientError::Transport(e.to_string()))?;
        let resp = self
            .router
            .clone()
            .oneshot(req)
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp
            .into_body()
            .collect()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?
            .to_bytes();
        let body = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()))
        };
        Ok(Reply { status, body })
    }

    /// Like [`send`](Self::send) but treats any non-2xx status as an error.
    pub async fn expect(
        &self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<&Value>,
    ) -> Result<Value, ClientError> {
        let r = self.send(method.clone(), path, token, body, None).await?;
        if !r.status.is_success() {
            return Err(ClientError::Status {
                method,
                path: path.to_owned(),
                status: r.status,
                body: r.body.to_string(),
            });
        }
        Ok(r.body)
    }

    pub async fn login(&self, user_id: &str, api_key: &str) -> Result<String, ClientError> {
        let body = serde_json::json!({"user_id": user_id, "api_key": api_key});
        let v = self.expect(Method::POST, "/session", None, Some(&body)).await?;
        v["token"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| ClientError::Transport("session without token".into()))
    }

    /// Collects every item of a paginated listing.
    pub async fn all_pages(&self, path: &str, token: &str) -> Result<Vec<Value>, ClientError> {
        let sep = if path.contains('?') { '&' } else { '?' };
        let mut items = Vec::new();
        loop {
            let page = self
                .expect(Method::GET, &format!("{path}{sep}limit=1000&offset={}", items.len()), Some(token), None)
                .await?;
            let batch = page["items"].as_array().cloned().unwrap_or_default();
            let total = page["total"].as_u64().unwrap_or(0) as usize;
            let empty = batch.is_empty();
            items.extend(batch);
            if empty || items.len() >= total {
                return Ok(items);
            }
        }
    }
}
