//! HTTP JSON front end for [`StudyStore`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::study::{StudyError, StudyStore};

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        let status = match self {
            StudyError::UnknownSession(_) => StatusCode::NOT_FOUND,
            StudyError::Phase { .. } => StatusCode::CONFLICT,
            StudyError::MalformedAction(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = State<Arc<StudyStore>>;

#[derive(Deserialize)]
struct NewSession {
    participant: String,
}

#[derive(Deserialize)]
struct SessionRef {
    session: String,
}

#[derive(Deserialize)]
struct Phase1 {
    session: String,
    text: String,
}

#[derive(Deserialize)]
struct Phase2 {
    session: String,
    actions: Vec<String>,
}

async fn create_session(State(st): Shared, Json(body): Json<NewSession>) -> impl IntoResponse {
    (StatusCode::CREATED, Json(st.create_session(&body.participant)))
}

async fn get_session(State(st): Shared, Query(q): Query<SessionRef>) -> Result<impl IntoResponse, StudyError> {
    Ok(Json(st.get_session(&q.session)?))
}

async fn begin(State(st): Shared, Json(body): Json<SessionRef>) -> Result<impl IntoResponse, StudyError> {
    Ok(Json(st.begin(&body.session)?))
}

async fn instance(State(st): Shared, Query(q): Query<SessionRef>) -> Result<impl IntoResponse, StudyError> {
    Ok(Json(st.instance_view(&q.session)?))
}

async fn actions(State(st): Shared, Query(q): Query<SessionRef>) -> Result<impl IntoResponse, StudyError> {
    Ok(Json(st.list_actions(&q.session)?))
}

async fn phase1(State(st): Shared, Json(body): Json<Phase1>) -> Result<impl IntoResponse, StudyError> {
    Ok(Json(st.submit_phase1(&body.session, &body.text)?))
}

async fn phase2(State(st): Shared, Json(body): Json<Phase2>) -> Result<impl IntoResponse, StudyError> {
    Ok(Json(st.submit_phase2(&body.session, &body.actions)?))
}

async fn result(State(st): Shared, Query(q): Query<SessionRef>) -> Result<impl IntoResponse, StudyError> {
    Ok(Json(st.result(&q.session)?))
}

async fn aggregate(State(st): Shared) -> impl IntoResponse {
    Json(st.aggregate())
}

async fn audit(State(st): Shared) -> impl IntoResponse {
    Json(st.audit())
}

pub fn router(store: Arc<StudyStore>) -> Router {
    Router::new()
        .route("/session", post(create_session).get(get_session))
        .route("/begin", post(begin))
        .route("/instance", get(instance))
        .route("/actions", get(actions))
        .route("/phase1", post(phase1))
        .route("/phase2", post(phase2))
        .route("/result", get(result))
        .route("/aggregate", get(aggregate))
        .route("/audit", get(audit))
        .with_state(store)
}

pub async fn serve(store: Arc<StudyStore>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(store)).await
}

/// Binds `addr` and serves on a fresh runtime until the process ends.
/// `on_bound` receives the actual address (useful with port 0).
pub fn serve_blocking(store: Arc<StudyStore>, addr: SocketAddr, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_bound(listener.local_addr()?);
        serve(store, listener).await
    })
}
