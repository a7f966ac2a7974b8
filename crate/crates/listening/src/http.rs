use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::{ListeningService, ResponseSubmission, ServiceError, TestDefinition};

type Svc = State<Arc<ListeningService>>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Validation(_) => StatusCode::BAD_REQUEST,
            ServiceError::Protocol(_) | ServiceError::EmptyResult(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    b.map(|Json(v)| v).map_err(|e| ServiceError::Validation(e.body_text()))
}

async fn create_test(State(svc): Svc, def: Result<Json<TestDefinition>, JsonRejection>) -> Result<impl IntoResponse, ServiceError> {
    let created = svc.create_test(body(def)?)?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_test(State(svc): Svc, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(svc.test_info(&id)?))
}

#[derive(Deserialize)]
struct ListenerQuery {
    listener: Option<String>,
}

async fn next_trial(
    State(svc): Svc,
    Path(id): Path<String>,
    Query(q): Query<ListenerQuery>,
) -> Result<impl IntoResponse, ServiceError> {
    let listener = q
        .listener
        .ok_or_else(|| ServiceError::Validation("missing listener query parameter".into()))?;
    Ok(Json(svc.next_trial(&id, &listener)?))
}

async fn submit(
    State(svc): Svc,
    Path(id): Path<String>,
    sub: Result<Json<ResponseSubmission>, JsonRejection>,
) -> Result<impl IntoResponse, ServiceError> {
    let ack = svc.submit_response(&id, body(sub)?)?;
    Ok((StatusCode::CREATED, Json(ack)))
}

async fn results(State(svc): Svc, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(svc.test_results(&id)?))
}

async fn audio(State(svc): Svc, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    let bytes = svc.audio_bytes(&id)?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes))
}

pub fn router(service: Arc<ListeningService>) -> Router {
    Router::new()
        .route("/tests", post(create_test))
        .route("/tests/{id}", get(get_test))
        .route("/tests/{id}/next", get(next_trial))
        .route("/tests/{id}/responses", post(submit))
        .route("/tests/{id}/results", get(results))
        .route("/audio/{id}", get(audio))
        .with_state(service)
}

pub async fn serve(service: Arc<ListeningService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening-test service started");
    axum::serve(listener, router(service)).await
}
