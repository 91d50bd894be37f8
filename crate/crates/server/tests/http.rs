use std::collections::BTreeMap;
use std::path::Path;

use escrow_core::contract::{Args, ContractStatus, UseLimit};
use escrow_core::runtime::{CallOutcome, ReleaseOutcome, open_output};
use escrow_core::state::EscrowState;
use escrow_core::vault::SymmetricKey;
use escrow_core::{AgentId, ContractId, DataElementId, Escrow, EscrowConfig, EscrowError};
use escrow_scenarios::fraud::{FraudModel, SIZE_FAILED};
use escrow_scenarios::stage::{agent_key, exact, system_key};
use escrow_scenarios::synth;
use escrow_server::client::{Client, open_released};
use escrow_server::wire::CallResponse;
use escrow_server::{Background, ServerOptions, load_program, open, spawn};
use serde_json::{Value, json};

const SEED: u64 = 31;

fn config(dir: &Path) -> EscrowConfig {
    let mut c = EscrowConfig::new(dir, system_key(SEED));
    c.sync = escrow_core::vault::SyncMode::OsBuffer;
    c.auditors = vec!["auditor".into()];
    c
}

fn serve(dir: &Path) -> Background {
    let app = open(config(dir), load_program("fraud").unwrap(), &ServerOptions::default()).unwrap();
    spawn(app).unwrap()
}

fn password(name: &str) -> String {
    format!("pw-{name}")
}

/// Released output bytes, or the refusal code and message.
type Released = Result<Vec<u8>, (String, String)>;

/// The escrow operations the fraud flow needs, over HTTP or in-process.
trait Side {
    fn register(&mut self, name: &str) -> AgentId;
    fn call(&mut self, who: AgentId, name: &str, args: Value) -> Released;
    fn upload(&mut self, who: AgentId, csv: Vec<u8>) -> DataElementId;
    fn propose(&mut self, who: AgentId, function: &str, dest: &[AgentId], des: &[DataElementId], args: &Value) -> ContractId;
    fn approve_pending(&mut self, who: AgentId);
    fn deny(&mut self, who: AgentId, c: ContractId, reason: &str);
}

struct Http {
    url: String,
    clients: BTreeMap<AgentId, (Client, SymmetricKey)>,
}

impl Http {
    fn client(&self, who: AgentId) -> &Client {
        &self.clients[&who].0
    }
}

impl Side for Http {
    fn register(&mut self, name: &str) -> AgentId {
        let mut c = Client::new(&self.url);
        let id = c.register(name, None, &password(name)).unwrap().agent_id;
        c.login(name, &password(name)).unwrap();
        let key = agent_key(SEED, name);
        c.submit_key(&key).unwrap();
        self.clients.insert(id, (c, key));
        id
    }

    fn call(&mut self, who: AgentId, name: &str, args: Value) -> Released {
        let (c, key) = &self.clients[&who];
        match c.call(name, &args) {
            Ok(CallResponse::Released { output, sealed, .. }) => Ok(open_released(key, output, &sealed).unwrap()),
            Ok(CallResponse::Endpoint { value }) => Ok(serde_json::to_vec(&value).unwrap()),
            Err(e) => Err((e.code().unwrap().to_string(), format!("{e}"))),
        }
    }

    fn upload(&mut self, who: AgentId, csv: Vec<u8>) -> DataElementId {
        let data = String::from_utf8(csv).unwrap();
        let v: Value = serde_json::from_slice(&self.call(who, "upload_credit_transaction_data", json!({ "data": data })).unwrap()).unwrap();
        DataElementId(v["de_id"].as_u64().unwrap())
    }

    fn propose(&mut self, who: AgentId, function: &str, dest: &[AgentId], des: &[DataElementId], args: &Value) -> ContractId {
        self.client(who).propose(&exact(function, dest, des, args.clone(), UseLimit::Times(2))).unwrap().id
    }

    fn approve_pending(&mut self, who: AgentId) {
        let c = self.client(who);
        for p in c.pending().unwrap() {
            c.approve(p.id).unwrap();
        }
    }

    fn deny(&mut self, who: AgentId, c: ContractId, reason: &str) {
        assert_eq!(self.client(who).deny(c, reason).unwrap().status, ContractStatus::Denied);
    }
}

struct Local {
    escrow: Escrow,
    keys: BTreeMap<AgentId, SymmetricKey>,
}

impl Side for Local {
    fn register(&mut self, name: &str) -> AgentId {
        let id = self.escrow.register_agent(name, name, Some(&password(name))).unwrap();
        assert_eq!(self.escrow.login(name, &password(name)).unwrap(), id);
        let key = agent_key(SEED, name);
        self.escrow.submit_key(id, key.clone()).unwrap();
        self.keys.insert(id, key);
        id
    }

    fn call(&mut self, who: AgentId, name: &str, args: Value) -> Released {
        let a: Args = serde_json::from_value(args).unwrap();
        match self.escrow.call_function(who, name, &a) {
            Ok(CallOutcome::Endpoint { value }) => Ok(serde_json::to_vec(&value).unwrap()),
            Ok(CallOutcome::Execution { result }) => match result.outcome {
                ReleaseOutcome::Released { output, sealed } => Ok(open_output(&self.keys[&who], output, &sealed).unwrap()),
                ReleaseOutcome::PreconditionFailed { message } => Err(("PreconditionFailed".into(), message)),
                ReleaseOutcome::PostconditionFailed { message } => Err(("PostconditionFailed".into(), message)),
            },
            Err(e) => Err((e.code().to_string(), e.to_string())),
        }
    }

    fn upload(&mut self, who: AgentId, csv: Vec<u8>) -> DataElementId {
        let data = String::from_utf8(csv).unwrap();
        let v: Value = serde_json::from_slice(&self.call(who, "upload_credit_transaction_data", json!({ "data": data })).unwrap()).unwrap();
        DataElementId(v["de_id"].as_u64().unwrap())
    }

    fn propose(&mut self, who: AgentId, function: &str, dest: &[AgentId], des: &[DataElementId], args: &Value) -> ContractId {
        self.escrow.propose_contract(who, exact(function, dest, des, args.clone(), UseLimit::Times(2))).unwrap().id
    }

    fn approve_pending(&mut self, who: AgentId) {
        for p in self.escrow.pending_contracts(who).unwrap() {
            self.escrow.approve_contract(who, p.id).unwrap();
        }
    }

    fn deny(&mut self, who: AgentId, c: ContractId, reason: &str) {
        assert_eq!(self.escrow.deny_contract(who, c, reason).unwrap(), ContractStatus::Denied);
    }
}

struct FlowResult {
    banks: [AgentId; 2],
    des: Vec<DataElementId>,
    counter: ContractId,
    models: Vec<FraudModel>,
    too_big: Released,
    after_limit: Released,
}

/// Two banks upload, A proposes a model only for itself, B denies and
/// counter-proposes a model for both, both approve and both fetch it.
fn fraud_flow(side: &mut impl Side) -> FlowResult {
    let a = side.register("bank_a");
    let b = side.register("bank_b");
    side.register("auditor");
    let a_train = side.upload(a, synth::fraud_csv(SEED, 0, 1200));
    let b_train = side.upload(b, synth::fraud_csv(SEED, 1, 1100));
    let a_test = side.upload(a, synth::fraud_csv(SEED, 10, 300));
    let b_test = side.upload(b, synth::fraud_csv(SEED, 11, 300));
    let des = vec![a_train, b_train, a_test, b_test];
    let args = |size: usize| {
        json!({
            "train_de_ids": [a_train, b_train],
            "size_constraint": size,
            "test_de_ids": [a_test, b_test],
            "target_accuracy": 0.6,
            "label_name": "Class",
        })
    };

    let first = side.propose(a, "train_fraud_model", &[a], &des, &args(1000));
    side.deny(b, first, "model must go to both banks");
    let counter = side.propose(b, "train_fraud_model", &[a, b], &des, &args(1000));
    side.approve_pending(a);
    side.approve_pending(b);

    let models = [a, b]
        .into_iter()
        .map(|who| serde_json::from_slice(&side.call(who, "train_fraud_model", args(1000)).unwrap()).unwrap())
        .collect();
    let after_limit = side.call(a, "train_fraud_model", args(1000));

    side.propose(a, "train_fraud_model", &[a], &des, &args(1150));
    side.approve_pending(a);
    side.approve_pending(b);
    let too_big = side.call(a, "train_fraud_model", args(1150));
    FlowResult { banks: [a, b], des, counter, models, too_big, after_limit }
}

fn scrub(mut s: EscrowState) -> EscrowState {
    for a in s.agents.values_mut() {
        a.credential = None;
    }
    s
}

#[test]
fn fraud_flow_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let server = serve(dir.path());
    let mut http = Http { url: server.url(), clients: BTreeMap::new() };
    let r = fraud_flow(&mut http);

    assert_eq!(r.models.len(), 2);
    assert_eq!(r.models[0], r.models[1]);
    assert!(r.models[0].accuracy >= 0.6);
    assert_eq!(r.after_limit.unwrap_err().0, "NoMatchingContract");
    let (code, message) = r.too_big.unwrap_err();
    assert_eq!(code, "PreconditionFailed");
    assert!(message.contains(SIZE_FAILED), "{message}");

    let [a, b] = r.banks;
    let contract = http.client(a).contract(r.counter).unwrap();
    assert_eq!(contract.status(), ContractStatus::Executed);
    assert_eq!(contract.src_agents, [a, b].into_iter().collect());

    // Banks can fetch their own raw data and nobody else's.
    let own = http.client(a).download(r.des[0]).unwrap();
    assert_eq!(own, synth::fraud_csv(SEED, 0, 1200));
    let err = http.client(a).download(r.des[1]).unwrap_err();
    assert_eq!((err.status(), err.code()), (Some(403), Some("NotOwner")));

    let mut auditor = Client::new(&server.url());
    auditor.login("auditor", &password("auditor")).unwrap();
    assert!(!auditor.audit().unwrap().is_empty());
    assert_eq!(auditor.contract(r.counter).unwrap().id, r.counter);
    let err = http.client(a).audit().unwrap_err();
    assert_eq!((err.status(), err.code()), (Some(403), Some("NotAuditor")));
}

#[test]
fn http_and_in_process_reach_the_same_state() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let server = serve(d1.path());
    let mut http = Http { url: server.url(), clients: BTreeMap::new() };
    let over_http = fraud_flow(&mut http);

    let escrow = Escrow::open(config(d2.path()), load_program("fraud").unwrap()).unwrap();
    let mut local = Local { escrow, keys: BTreeMap::new() };
    let in_process = fraud_flow(&mut local);

    assert_eq!(over_http.models, in_process.models);
    assert_eq!(over_http.too_big.unwrap_err().0, in_process.too_big.unwrap_err().0);
    assert_eq!(scrub(server.app.escrow.state()), scrub(local.escrow.state()));
}

#[test]
fn requests_without_a_valid_token_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let server = serve(dir.path());
    let anon = Client::new(&server.url());
    for err in [anon.agents().unwrap_err(), anon.functions().unwrap_err(), anon.pending().unwrap_err()] {
        assert_eq!((err.status(), err.code()), (Some(401), Some("Unauthenticated")));
    }
    let forged = Client::new(&server.url()).with_token("00".repeat(32));
    assert_eq!(forged.contracts().unwrap_err().status(), Some(401));

    let mut c = Client::new(&server.url());
    c.register("bank_a", None, "right").unwrap();
    let err = c.login("bank_a", "wrong").unwrap_err();
    assert_eq!((err.status(), err.code()), (Some(401), Some("BadCredentials")));
    c.login("bank_a", "right").unwrap();
    assert_eq!(c.agents().unwrap().len(), 1);
}

#[test]
fn expired_sessions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let opts = ServerOptions { token_ttl: std::time::Duration::ZERO, ..ServerOptions::default() };
    let server = spawn(open(config(dir.path()), load_program("fraud").unwrap(), &opts).unwrap()).unwrap();
    let mut c = Client::new(&server.url());
    c.register("bank_a", None, "pw").unwrap();
    c.login("bank_a", "pw").unwrap();
    let err = c.agents().unwrap_err();
    assert_eq!(err.status(), Some(401));
    assert!(format!("{err}").contains("expired"), "{err}");
}

#[test]
fn non_source_agents_cannot_decide() {
    let dir = tempfile::tempdir().unwrap();
    let server = serve(dir.path());
    let mut http = Http { url: server.url(), clients: BTreeMap::new() };
    let a = http.register("bank_a");
    let outsider = http.register("outsider");
    let de = http.upload(a, synth::fraud_csv(SEED, 0, 50));
    let c = http.propose(a, "show_schema", &[a], &[de], &json!({ "de_ids": [de] }));

    let err = http.client(outsider).approve(c).unwrap_err();
    assert_eq!((err.status(), err.code()), (Some(403), Some("NotASourceAgent")));
    let err = http.client(outsider).contract(c).unwrap_err();
    assert_eq!((err.status(), err.code()), (Some(404), Some("UnknownContract")));
    assert!(http.client(outsider).pending().unwrap().is_empty());
    assert_eq!(http.client(a).pending().unwrap().len(), 1);

    assert_eq!(http.client(a).withdraw(c).unwrap().status, ContractStatus::Expired);
    let err = http.client(a).approve(c).unwrap_err();
    assert_eq!(err.status(), Some(409));
}

#[test]
fn malformed_requests_get_error_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let server = serve(dir.path());
    let mut c = Client::new(&server.url());
    c.register("bank_a", None, "pw").unwrap();
    c.login("bank_a", "pw").unwrap();

    let http = reqwest::blocking::Client::new();
    let token = c.token().unwrap().to_string();
    let resp = http.post(format!("{}/contracts", server.url())).bearer_auth(&token).body("{not json").header("content-type", "application/json").send().unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let body: Value = resp.json().unwrap();
    assert_eq!(body["code"], "InvalidArgument");

    let resp = http.get(format!("{}/nowhere", server.url())).send().unwrap();
    assert_eq!(resp.status().as_u16(), 404);
    assert_eq!(resp.json::<Value>().unwrap()["code"], "NoSuchRoute");

    let err = c.call("no_such_function", &json!({})).unwrap_err();
    assert_eq!((err.status(), err.code()), (Some(404), Some("UnknownFunction")));
    let err = c.submit_key(&SymmetricKey::from_bytes([1; 32])).and_then(|_| c.submit_key(&SymmetricKey::from_bytes([2; 32]))).unwrap_err();
    assert_eq!((err.status(), err.code()), (Some(409), Some("KeyMismatch")));
}

#[test]
fn restart_recovers_agents_and_data() {
    let dir = tempfile::tempdir().unwrap();
    let (a, de) = {
        let server = serve(dir.path());
        let mut http = Http { url: server.url(), clients: BTreeMap::new() };
        let a = http.register("bank_a");
        http.register("bank_b");
        (a, http.upload(a, synth::fraud_csv(SEED, 0, 80)))
    };

    let server = serve(dir.path());
    let mut c = Client::new(&server.url());
    let h = c.health().unwrap();
    assert_eq!(h.agents, 2);
    assert!(h.deferred_records > 0);
    assert_eq!(c.login("bank_a", &password("bank_a")).unwrap().agent_id, a);
    let agents = c.agents().unwrap();
    assert_eq!(agents.iter().map(|i| i.external_id.as_str()).collect::<Vec<_>>(), ["bank_a", "bank_b"]);
    assert!(agents.iter().all(|i| !i.has_key));

    c.submit_key(&agent_key(SEED, "bank_a")).unwrap();
    assert!(c.agents().unwrap()[0].has_key);
    assert_eq!(c.download(de).unwrap(), synth::fraud_csv(SEED, 0, 80));
    let mut b = Client::new(&server.url());
    b.login("bank_b", &password("bank_b")).unwrap();
    b.submit_key(&agent_key(SEED, "bank_b")).unwrap();
    assert_eq!(c.health().unwrap().deferred_records, 0);
}

#[test]
fn second_server_on_one_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let _server = serve(dir.path());
    let err = open(config(dir.path()), load_program("fraud").unwrap(), &ServerOptions::default()).err().unwrap();
    assert!(matches!(err, EscrowError::Locked), "{err}");
}

#[test]
fn health_on_an_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    let server = serve(dir.path());
    let h = Client::new(&server.url()).health().unwrap();
    assert_eq!((h.status.as_str(), h.program.as_str(), h.agents, h.deferred_records), ("ready", "fraud", 0, 0));
}

#[test]
fn every_program_loads() {
    for name in escrow_server::PROGRAMS {
        assert_eq!(load_program(name).unwrap().name, name);
    }
    assert!(load_program("nope").is_err());
}
