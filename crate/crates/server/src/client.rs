//! Blocking client with one method per route.

use escrow_core::contract::{Contract, Proposal};
use escrow_core::escrow::DiscoverableEntry;
use escrow_core::runtime::{FunctionRef, open_output};
use escrow_core::state::AuditEvent;
use escrow_core::vault::SymmetricKey;
use escrow_core::{ContractId, DataElementId};
use reqwest::blocking::{Client as Http, RequestBuilder};
use serde::Serialize;
use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::error::ErrorBody;
use crate::wire::*;

#[derive(Debug)]
pub enum ClientError {
    /// The server answered with an error body.
    Api { status: u16, body: ErrorBody },
    Transport(String),
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.code),
            ClientError::Transport(_) => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(_) => None,
        }
    }
}

impl std::fmt::Display for ClientError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClientError::Api { status, body } => write!(f, "{status} {}: {}", body.code, body.message),
            ClientError::Transport(m) => write!(f, "transport: {m}"),
        }
    }
}

impl std::error::Error for ClientError {}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        ClientError::Transport(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

pub struct Client {
    base: String,
    http: Http,
    token: Option<String>,
}

impl Client {
    pub fn new(base: &str) -> Self {
        Client { base: base.trim_end_matches('/').to_string(), http: Http::new(), token: None }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    fn req(&self, method: reqwest::Method, path: &str) -> RequestBuilder {
        let rb = self.http.request(method, format!("{}{path}", self.base));
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    fn raw(rb: RequestBuilder) -> Result<reqwest::blocking::Response> {
        let resp = rb.send()?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().unwrap_or_default();
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody { code: "Unparsed".into(), message: text });
        Err(ClientError::Api { status: status.as_u16(), body })
    }

    fn json<T: DeserializeOwned>(rb: RequestBuilder) -> Result<T> {
        Ok(Self::raw(rb)?.json()?)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::json(self.req(reqwest::Method::GET, path))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::json(self.req(reqwest::Method::POST, path).json(body))
    }

    pub fn health(&self) -> Result<Health> {
        self.get("/healthz")
    }

    pub fn register(&self, external_id: &str, name: Option<&str>, password: &str) -> Result<Registered> {
        let body = RegisterAgent { external_id: external_id.into(), name: name.map(str::to_string), password: password.into() };
        self.post("/agents", &body)
    }

    /// Logs in and keeps the returned token for later calls.
    pub fn login(&mut self, external_id: &str, password: &str) -> Result<LoginResponse> {
        let r: LoginResponse = self.post("/login", &Login { external_id: external_id.into(), password: password.into() })?;
        self.token = Some(r.token.clone());
        Ok(r)
    }

    pub fn agents(&self) -> Result<Vec<AgentInfo>> {
        self.get("/agents")
    }

    pub fn submit_key(&self, key: &SymmetricKey) -> Result<()> {
        Self::raw(self.req(reqwest::Method::POST, "/keys").json(&SubmitKey { key: hex::encode(key.as_bytes()) }))?;
        Ok(())
    }

    pub fn register_data(&self, type_tag: &str, access_parameters: Value, discoverable: bool) -> Result<DataElementId> {
        let body = RegisterData { type_tag: type_tag.into(), access_parameters, discoverable };
        Ok(self.post::<_, DataCreated>("/data", &body)?.de_id)
    }

    pub fn upload(&self, de: DataElementId, content: Vec<u8>) -> Result<()> {
        let rb = self
            .req(reqwest::Method::PUT, &format!("/data/{}/content", de.get()))
            .header(reqwest::header::CONTENT_TYPE, "application/octet-stream")
            .body(content);
        Self::raw(rb)?;
        Ok(())
    }

    pub fn download(&self, de: DataElementId) -> Result<Vec<u8>> {
        Ok(Self::raw(self.req(reqwest::Method::GET, &format!("/data/{}/content", de.get())))?.bytes()?.to_vec())
    }

    pub fn discoverable(&self) -> Result<Vec<DiscoverableEntry>> {
        self.get("/data/discoverable")
    }

    pub fn propose(&self, p: &Proposal) -> Result<Contract> {
        self.post("/contracts", p)
    }

    pub fn contracts(&self) -> Result<Vec<Contract>> {
        self.get("/contracts")
    }

    pub fn pending(&self) -> Result<Vec<Contract>> {
        self.get("/contracts/pending")
    }

    pub fn contract(&self, id: ContractId) -> Result<Contract> {
        self.get(&format!("/contracts/{}", id.get()))
    }

    pub fn approve(&self, id: ContractId) -> Result<Decision> {
        self.post(&format!("/contracts/{}/approve", id.get()), &Value::Null)
    }

    pub fn deny(&self, id: ContractId, reason: &str) -> Result<Decision> {
        self.post(&format!("/contracts/{}/deny", id.get()), &Deny { reason: reason.into() })
    }

    pub fn withdraw(&self, id: ContractId) -> Result<Decision> {
        self.post(&format!("/contracts/{}/withdraw", id.get()), &Value::Null)
    }

    pub fn functions(&self) -> Result<Vec<FunctionRef>> {
        self.get("/functions")
    }

    pub fn call(&self, name: &str, args: &Value) -> Result<CallResponse> {
        self.post(&format!("/functions/{name}/call"), args)
    }

    pub fn audit(&self) -> Result<Vec<AuditEvent>> {
        self.get("/audit")
    }
}

/// Opens a released output with the caller's key.
pub fn open_released(key: &SymmetricKey, output: DataElementId, sealed_b64: &str) -> std::result::Result<Vec<u8>, String> {
    use base64::Engine;
    let sealed = base64::engine::general_purpose::STANDARD.decode(sealed_b64).map_err(|e| e.to_string())?;
    open_output(key, output, &sealed).map_err(|e| e.to_string())
}
