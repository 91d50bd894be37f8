//! Route table. Each handler is a thin adapter over one escrow operation and
//! runs it on the blocking pool.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{StatusCode, header};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use escrow_core::contract::{Args, Contract, Proposal};
use escrow_core::escrow::DiscoverableEntry;
use escrow_core::runtime::FunctionRef;
use escrow_core::state::AuditEvent;
use escrow_core::vault::SymmetricKey;
use escrow_core::{AgentId, ContractId, DataElementId, Escrow};
use serde::de::DeserializeOwned;

use crate::error::ApiError;
use crate::session::{Lookup, Sessions};
use crate::wire::*;

pub struct App {
    pub escrow: Escrow,
    pub sessions: Sessions,
    pub max_upload: usize,
}

type Shared = Arc<App>;
type ApiResult<T> = Result<T, ApiError>;

/// The authenticated agent behind a bearer token.
pub struct Caller(pub AgentId);

impl FromRequestParts<Shared> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, app: &Shared) -> ApiResult<Self> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::unauthenticated("missing bearer token"))?;
        match app.sessions.lookup(token.trim()) {
            Lookup::Valid(a) => Ok(Caller(a)),
            Lookup::Expired => Err(ApiError::unauthenticated("session expired")),
            Lookup::Unknown => Err(ApiError::unauthenticated("unknown token")),
        }
    }
}

/// JSON body whose parse failures use the error body format.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> ApiResult<Self> {
        Json::<T>::from_request(req, state).await.map(|Json(v)| Body(v)).map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

fn id(raw: &str) -> ApiResult<u64> {
    raw.parse().map_err(|_| ApiError::bad_request(format!("{raw:?} is not an id")))
}

async fn blocking<T: Send + 'static>(app: &Shared, f: impl FnOnce(&App) -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    let app = app.clone();
    tokio::task::spawn_blocking(move || f(&app))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

async fn register_agent(State(app): State<Shared>, Body(b): Body<RegisterAgent>) -> ApiResult<(StatusCode, Json<Registered>)> {
    blocking(&app, move |a| {
        let name = b.name.as_deref().unwrap_or(&b.external_id);
        let agent_id = a.escrow.register_agent(&b.external_id, name, Some(&b.password))?;
        Ok((StatusCode::CREATED, Json(Registered { agent_id })))
    })
    .await
}

async fn login(State(app): State<Shared>, Body(b): Body<Login>) -> ApiResult<Json<LoginResponse>> {
    blocking(&app, move |a| {
        let agent_id = a.escrow.login(&b.external_id, &b.password)?;
        let s = a.sessions.issue(agent_id);
        Ok(Json(LoginResponse { agent_id, expires_at: s.expires_at_unix(), token: s.token }))
    })
    .await
}

async fn list_agents(State(app): State<Shared>, Caller(_): Caller) -> ApiResult<Json<Vec<AgentInfo>>> {
    blocking(&app, |a| {
        let s = a.escrow.state();
        Ok(Json(
            s.agents
                .values()
                .map(|r| AgentInfo {
                    id: r.id,
                    external_id: r.external_id.clone(),
                    name: r.name.clone(),
                    has_key: a.escrow.has_key(r.id),
                })
                .collect(),
        ))
    })
    .await
}

async fn submit_key(State(app): State<Shared>, Caller(me): Caller, Body(b): Body<SubmitKey>) -> ApiResult<StatusCode> {
    let raw = hex::decode(b.key.trim()).map_err(|_| ApiError::bad_request("key must be hex"))?;
    let key = SymmetricKey::try_from_slice(&raw).ok_or_else(|| ApiError::bad_request("key must be 32 bytes"))?;
    blocking(&app, move |a| {
        a.escrow.submit_key(me, key)?;
        Ok(StatusCode::NO_CONTENT)
    })
    .await
}

async fn register_data(State(app): State<Shared>, Caller(me): Caller, Body(b): Body<RegisterData>) -> ApiResult<(StatusCode, Json<DataCreated>)> {
    blocking(&app, move |a| {
        let de_id = a.escrow.register_data_element(me, &b.type_tag, b.access_parameters, b.discoverable)?;
        Ok((StatusCode::CREATED, Json(DataCreated { de_id })))
    })
    .await
}

async fn upload(State(app): State<Shared>, Caller(me): Caller, Path(raw): Path<String>, body: Bytes) -> ApiResult<StatusCode> {
    let de = DataElementId(id(&raw)?);
    blocking(&app, move |a| {
        a.escrow.upload_data_element(me, de, &body)?;
        Ok(StatusCode::NO_CONTENT)
    })
    .await
}

async fn download(State(app): State<Shared>, Caller(me): Caller, Path(raw): Path<String>) -> ApiResult<Response> {
    let de = DataElementId(id(&raw)?);
    blocking(&app, move |a| {
        let bytes = a.escrow.fetch_own(me, de)?;
        Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
    })
    .await
}

async fn discoverable(State(app): State<Shared>, Caller(me): Caller) -> ApiResult<Json<Vec<DiscoverableEntry>>> {
    blocking(&app, move |a| Ok(Json(a.escrow.list_discoverable_des(me)?))).await
}

async fn propose(State(app): State<Shared>, Caller(me): Caller, Body(p): Body<Proposal>) -> ApiResult<(StatusCode, Json<Contract>)> {
    blocking(&app, move |a| Ok((StatusCode::CREATED, Json(a.escrow.propose_contract(me, p)?)))).await
}

async fn my_contracts(State(app): State<Shared>, Caller(me): Caller) -> ApiResult<Json<Vec<Contract>>> {
    blocking(&app, move |a| Ok(Json(a.escrow.contracts_for(me)))).await
}

async fn pending(State(app): State<Shared>, Caller(me): Caller) -> ApiResult<Json<Vec<Contract>>> {
    blocking(&app, move |a| Ok(Json(a.escrow.pending_contracts(me)?))).await
}

/// Participants and auditors only; anyone else sees 404.
async fn show_contract(State(app): State<Shared>, Caller(me): Caller, Path(raw): Path<String>) -> ApiResult<Json<Contract>> {
    let cid = ContractId(id(&raw)?);
    blocking(&app, move |a| {
        let c = a.escrow.contract(cid)?;
        let involved = c.proposer == me || c.src_agents.contains(&me) || c.dest_agents.contains(&me);
        if involved || a.escrow.is_auditor(me) {
            Ok(Json(c))
        } else {
            Err(escrow_core::EscrowError::UnknownContract(cid).into())
        }
    })
    .await
}

async fn approve(State(app): State<Shared>, Caller(me): Caller, Path(raw): Path<String>) -> ApiResult<Json<Decision>> {
    let contract = ContractId(id(&raw)?);
    blocking(&app, move |a| Ok(Json(Decision { contract, status: a.escrow.approve_contract(me, contract)? }))).await
}

async fn deny(State(app): State<Shared>, Caller(me): Caller, Path(raw): Path<String>, Body(b): Body<Deny>) -> ApiResult<Json<Decision>> {
    let contract = ContractId(id(&raw)?);
    blocking(&app, move |a| Ok(Json(Decision { contract, status: a.escrow.deny_contract(me, contract, &b.reason)? }))).await
}

async fn withdraw(State(app): State<Shared>, Caller(me): Caller, Path(raw): Path<String>) -> ApiResult<Json<Decision>> {
    let contract = ContractId(id(&raw)?);
    blocking(&app, move |a| Ok(Json(Decision { contract, status: a.escrow.withdraw_contract(me, contract)? }))).await
}

async fn functions(State(app): State<Shared>, Caller(_): Caller) -> ApiResult<Json<Vec<FunctionRef>>> {
    blocking(&app, |a| Ok(Json(a.escrow.show_functions()))).await
}

async fn call(State(app): State<Shared>, Caller(me): Caller, Path(name): Path<String>, Body(args): Body<Args>) -> ApiResult<Json<CallResponse>> {
    blocking(&app, move |a| Ok(Json(CallResponse::from_outcome(a.escrow.call_function(me, &name, &args)?)?))).await
}

async fn audit(State(app): State<Shared>, Caller(me): Caller) -> ApiResult<Json<Vec<AuditEvent>>> {
    blocking(&app, move |a| Ok(Json(a.escrow.audit(me)?))).await
}

async fn healthz(State(app): State<Shared>) -> ApiResult<Json<Health>> {
    blocking(&app, |a| {
        Ok(Json(Health {
            status: "ready".into(),
            program: a.escrow.program().name.clone(),
            agents: a.escrow.state().agents.len(),
            deferred_records: a.escrow.deferred_records(),
        }))
    })
    .await
}

async fn no_route() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NoSuchRoute", "no such route")
}

pub fn router(app: Shared) -> Router {
    let limit = app.max_upload;
    Router::new()
        .route("/agents", post(register_agent).get(list_agents))
        .route("/login", post(login))
        .route("/keys", post(submit_key))
        .route("/data", post(register_data))
        .route("/data/discoverable", get(discoverable))
        .route("/data/{id}/content", put(upload).get(download))
        .route("/contracts", post(propose).get(my_contracts))
        .route("/contracts/pending", get(pending))
        .route("/contracts/{id}", get(show_contract))
        .route("/contracts/{id}/approve", post(approve))
        .route("/contracts/{id}/deny", post(deny))
        .route("/contracts/{id}/withdraw", post(withdraw))
        .route("/functions", get(functions))
        .route("/functions/{name}/call", post(call))
        .route("/audit", get(audit))
        .route("/healthz", get(healthz))
        .fallback(no_route)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(app)
}
