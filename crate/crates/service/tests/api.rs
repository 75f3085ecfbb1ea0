use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use caselink_core::synth::{generate, ScenarioSpec};
use caselink_core::{CaseLinker, CoinJoinPolicy, GraphConfig, LinkConfig, LinkLevel};
use caselink_service::{router, AppState, CaseStore, ChainContext, SqliteStore};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct App {
    state: Arc<AppState>,
    admin: String,
}

impl App {
    fn new() -> Self {
        Self::with_chain(ChainContext::empty())
    }

    fn with_chain(chain: ChainContext) -> Self {
        let store = Arc::new(SqliteStore::open_in_memory().unwrap());
        let admin = store.issue_token(None, "root").unwrap();
        let state = AppState::new(store, Arc::new(chain), LinkConfig::default()).unwrap();
        Self { state, admin }
    }

    async fn call(
        &self,
        method: Method,
        uri: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = router(self.state.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = serde_json::from_slice(&bytes)
            .unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()));
        (status, value)
    }

    async fn zone(&self, id: &str, readable_by: &[&str]) -> String {
        let (status, _) = self
            .call(
                Method::POST,
                "/zones",
                Some(&self.admin),
                Some(json!({"zone_id": id, "name": format!("Zone {id}"), "readable_by": readable_by})),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED);
        self.state
            .store()
            .issue_token(Some(id), &format!("{id}-officer"))
            .unwrap()
    }

    async fn case(&self, token: &str, id: &str) {
        let (status, body) = self
            .call(
                Method::POST,
                "/cases",
                Some(token),
                Some(json!({"case_id": id, "category": "sextortion"})),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
    }

    async fn annotate(
        &self,
        token: &str,
        id: &str,
        address: &str,
        role: &str,
    ) -> (StatusCode, Value) {
        self.call(
            Method::POST,
            &format!("/cases/{}/annotations", enc(id)),
            Some(token),
            Some(json!({"address": address, "role": role})),
        )
        .await
    }

    async fn relink(&self, token: &str) {
        let (status, body) = self.call(Method::POST, "/relink", Some(token), None).await;
        assert_eq!(status, StatusCode::OK, "{body}");
    }

    async fn clusters(&self, token: &str, level: &str) -> Value {
        let (status, body) = self
            .call(
                Method::GET,
                &format!("/clusters?level={level}"),
                Some(token),
                None,
            )
            .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body
    }
}

fn enc(id: &str) -> String {
    id.replace('/', "%2F")
}

const A1: &str = "AA0001-000001-24/1";
const A2: &str = "AA0001-000002-24/2";
const B1: &str = "BB0002-000001-24/7";

#[tokio::test]
async fn case_creation_and_conflicts() {
    let app = App::new();
    let a = app.zone("a", &[]).await;
    let (status, body) = app
        .call(
            Method::POST,
            "/cases",
            Some(&a),
            Some(json!({"case_id": A1, "category": "cyberfraud"})),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["annotations"], json!([]));
    assert_eq!(body["zone_id"], "a");

    let (status, body) = app
        .call(
            Method::POST,
            "/cases",
            Some(&a),
            Some(json!({"case_id": A1, "category": "cyberfraud"})),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].is_string());

    let (status, _) = app
        .call(
            Method::POST,
            "/cases",
            Some(&a),
            Some(json!({"case_id": "AA01-1-24/1", "category": "cyberfraud"})),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = app
        .call(
            Method::POST,
            "/cases",
            Some(&a),
            Some(json!({"case_id": A2, "category": "burglary"})),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = app
        .call(Method::GET, &format!("/cases/{}", enc(A1)), Some(&a), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["case_id"], A1);
}

#[tokio::test]
async fn authentication_is_required() {
    let app = App::new();
    let a = app.zone("a", &[]).await;
    let (status, body) = app
        .call(Method::GET, "/clusters?level=address", None, None)
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert!(body["error"].is_string());
    let (status, _) = app
        .call(Method::GET, "/clusters?level=address", Some("forged"), None)
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = app
        .call(
            Method::POST,
            "/zones",
            Some(&a),
            Some(json!({"zone_id": "x", "name": "x"})),
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = app
        .call(
            Method::GET,
            "/clusters?level=address",
            Some(&app.admin.clone()),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = app
        .call(
            Method::POST,
            "/zones",
            Some(&app.admin.clone()),
            Some(json!({"zone_id": "a", "name": "again"})),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn annotation_rules() {
    let app = App::new();
    let a = app.zone("a", &[]).await;
    let b = app.zone("b", &["a"]).await;
    app.case(&a, A1).await;
    app.case(&b, B1).await;

    let (status, body) = app.annotate(&a, A1, "addrA", "perpetrator").await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["author"], "a-officer");
    assert_eq!(
        app.annotate(&a, A1, "addrB", "launderer").await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        app.annotate(&a, A1, "addrA", "victim").await.0,
        StatusCode::CONFLICT
    );
    // a may read b's case but not write to it; b cannot even see a's
    assert_eq!(
        app.annotate(&a, B1, "addrC", "victim").await.0,
        StatusCode::FORBIDDEN
    );
    assert_eq!(
        app.annotate(&b, A1, "addrC", "victim").await.0,
        StatusCode::NOT_FOUND
    );

    let (status, body) = app
        .call(Method::GET, &format!("/cases/{}", enc(A1)), Some(&a), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["annotations"].as_array().unwrap().len(), 1);
    assert_eq!(body["annotations"][0]["role"], "perpetrator");
}

#[tokio::test]
async fn relink_joins_cases_and_clears_stale() {
    let app = App::new();
    let a = app.zone("a", &[]).await;
    app.case(&a, A1).await;
    app.case(&a, A2).await;
    app.annotate(&a, A1, "shared", "perpetrator").await;
    app.annotate(&a, A2, "shared", "perpetrator").await;
    app.annotate(&a, A2, "victim-wallet", "victim").await;

    let before = app.clusters(&a, "address").await;
    assert_eq!(before["stale"], true);
    assert_eq!(before["clusters"], json!([]));

    app.relink(&a).await;
    let after = app.clusters(&a, "address").await;
    assert_eq!(after["stale"], false);
    let clusters = after["clusters"].as_array().unwrap();
    assert_eq!(clusters.len(), 1);
    assert_eq!(clusters[0]["cases"], json!([A1, A2]));
    assert_eq!(clusters[0]["anonymized_stubs"], 0);

    // shared evidence of every multi-case cluster is a perpetrator annotation of each member
    let snapshot = app.state.snapshot();
    for cluster in &snapshot.clusterings[&LinkLevel::Address].clusters {
        if cluster.size() < 2 {
            continue;
        }
        for id in &cluster.cases {
            let perps: BTreeSet<String> = app
                .state
                .store()
                .annotations(id)
                .unwrap()
                .into_iter()
                .filter(|a| a.role == caselink_core::Role::Perpetrator)
                .map(|a| a.address)
                .collect();
            let shared: BTreeSet<String> = cluster
                .shared_evidence
                .iter()
                .map(|e| {
                    serde_json::to_value(e).unwrap()["id"]
                        .as_str()
                        .unwrap()
                        .to_string()
                })
                .collect();
            assert!(!perps.is_disjoint(&shared));
        }
    }

    app.annotate(&a, A1, "another", "perpetrator").await;
    assert_eq!(app.clusters(&a, "address").await["stale"], true);
}

#[tokio::test]
async fn unknown_level_and_format() {
    let app = App::new();
    let a = app.zone("a", &[]).await;
    let (status, body) = app
        .call(Method::GET, "/clusters?level=galaxy", Some(&a), None)
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].is_string());
    let (status, _) = app.call(Method::GET, "/clusters", Some(&a), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = app
        .call(
            Method::GET,
            "/network?level=entity&format=svg",
            Some(&a),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = app
        .call(
            Method::GET,
            "/network?level=entity&format=json",
            Some(&a),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"nodes": [], "edges": []}));
}

#[tokio::test]
async fn cross_zone_links_show_as_stubs() {
    let app = App::new();
    let a = app.zone("a", &[]).await;
    let b = app.zone("b", &[]).await;
    app.case(&a, A1).await;
    app.case(&b, B1).await;
    app.annotate(&a, A1, "shared", "perpetrator").await;
    app.annotate(&b, B1, "shared", "perpetrator").await;
    app.relink(&a).await;
    for (token, own) in [(&a, A1), (&b, B1)] {
        let view = app.clusters(token, "address").await;
        assert_eq!(
            view["clusters"],
            json!([{
                "cases": [own],
                "categories": ["sextortion"],
                "size": 2,
                "anonymized_stubs": 1,
                "inflow_satoshi": 0,
            }])
        );
        let (_, net) = app
            .call(
                Method::GET,
                "/network?level=address&format=json",
                Some(token),
                None,
            )
            .await;
        let cases: Vec<&str> = net["nodes"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|n| n["type"] == "case")
            .map(|n| n["label"].as_str().unwrap())
            .collect();
        assert_eq!(cases, vec![own]);
    }
}

#[tokio::test]
async fn access_matrix() {
    // zone requesting x grant state x whose case
    for requester_is_a in [true, false] {
        for granted in [false, true] {
            let app = App::new();
            let a = app.zone("a", &[]).await;
            let b = app.zone("b", &[]).await;
            app.case(&a, A1).await;
            app.case(&b, B1).await;
            app.annotate(&a, A1, "shared", "perpetrator").await;
            app.annotate(&b, B1, "shared", "perpetrator").await;
            let (me, other, my_case, their_case) = if requester_is_a {
                (("a", &a), "b", A1, B1)
            } else {
                (("b", &b), "a", B1, A1)
            };
            if granted {
                let (status, _) = app
                    .call(
                        Method::POST,
                        &format!("/zones/{other}/grants"),
                        Some(&app.admin.clone()),
                        Some(json!({"reader_zone": me.0})),
                    )
                    .await;
                assert_eq!(status, StatusCode::OK);
            }
            app.relink(me.1).await;
            for (case, own) in [(my_case, true), (their_case, false)] {
                let (status, _) = app
                    .call(
                        Method::GET,
                        &format!("/cases/{}", enc(case)),
                        Some(me.1),
                        None,
                    )
                    .await;
                let visible = own || granted;
                assert_eq!(
                    status == StatusCode::OK,
                    visible,
                    "{} {granted} {case}",
                    me.0
                );
                if !visible {
                    assert_eq!(status, StatusCode::NOT_FOUND);
                }
            }
            let view = app.clusters(me.1, "address").await;
            let cluster = &view["clusters"][0];
            let expected_stubs = if granted { 0 } else { 1 };
            assert_eq!(cluster["anonymized_stubs"], expected_stubs);
            assert_eq!(
                cluster["cases"].as_array().unwrap().len(),
                2 - expected_stubs
            );
        }
    }
}

async fn visible(app: &App, token: &str) -> BTreeSet<String> {
    let (_, list) = app.call(Method::GET, "/cases", Some(token), None).await;
    list.as_array()
        .unwrap()
        .iter()
        .map(|c| c["case_id"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn visibility_grows_with_grants() {
    let app = App::new();
    let zones = ["a", "b", "c"];
    let mut tokens = Vec::new();
    for z in zones {
        tokens.push(app.zone(z, &[]).await);
    }
    for (i, t) in tokens.iter().enumerate() {
        app.case(t, &format!("ZZ000{i}-000001-24/1")).await;
    }
    let mut before: Vec<BTreeSet<String>> = Vec::new();
    for t in &tokens {
        before.push(visible(&app, t).await);
    }
    for (owner, reader) in [("a", "b"), ("c", "b"), ("b", "a")] {
        app.call(
            Method::POST,
            &format!("/zones/{owner}/grants"),
            Some(&app.admin.clone()),
            Some(json!({"reader_zone": reader})),
        )
        .await;
        for (i, t) in tokens.iter().enumerate() {
            let now = visible(&app, t).await;
            assert!(now.is_superset(&before[i]));
            before[i] = now;
        }
    }
    assert_eq!(before[1].len(), 3);
    assert_eq!(before[2].len(), 1);
}

#[tokio::test]
async fn exchange_request_log() {
    let app = App::new();
    let a = app.zone("a", &[]).await;
    let b = app.zone("b", &[]).await;
    let (_, body) = app
        .call(Method::GET, "/addresses/bc1qx/requests", Some(&a), None)
        .await;
    assert_eq!(body["entries"], json!([]));
    assert_eq!(body["any_other_zone_requested"], false);

    let (status, body) = app
        .call(
            Method::POST,
            "/addresses/bc1qx/requests",
            Some(&a),
            Some(json!({"exchange": "Kraken"})),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["duplicate"], false);
    let (_, body) = app
        .call(Method::GET, "/addresses/bc1qx/requests", Some(&a), None)
        .await;
    assert_eq!(body["entries"].as_array().unwrap().len(), 1);
    assert_eq!(body["any_other_zone_requested"], false);

    let (_, body) = app
        .call(Method::GET, "/addresses/bc1qx/requests", Some(&b), None)
        .await;
    assert_eq!(body["entries"], json!([]));
    assert_eq!(body["any_other_zone_requested"], true);

    let (_, body) = app
        .call(
            Method::POST,
            "/addresses/bc1qx/requests",
            Some(&b),
            Some(json!({"exchange": "Kraken"})),
        )
        .await;
    assert_eq!(body["duplicate"], true);
    let (_, body) = app
        .call(Method::GET, "/addresses/bc1qx/requests", Some(&b), None)
        .await;
    assert_eq!(body["entries"].as_array().unwrap().len(), 1);
    assert_eq!(body["entries"][0]["duplicate"], true);
}

#[test]
fn schema_holds_no_personal_data() {
    let store = SqliteStore::open_in_memory().unwrap();
    let allowed: &[(&str, &[&str])] = &[
        (
            "annotations",
            &["case_id", "address", "role", "author", "created_at"],
        ),
        ("cases", &["case_id", "zone_id", "category", "created_at"]),
        (
            "exchange_requests",
            &["id", "address", "exchange", "requested_at", "zone_id"],
        ),
        ("grants", &["zone_id", "reader_zone"]),
        ("tokens", &["token_sha256", "zone_id", "member"]),
        ("zones", &["zone_id", "name"]),
    ];
    let schema = store.schema().unwrap();
    assert_eq!(schema.len(), allowed.len());
    for ((table, cols), (want_table, want_cols)) in schema.iter().zip(allowed) {
        assert_eq!(table, want_table);
        assert_eq!(cols, want_cols);
    }
}

#[tokio::test]
async fn single_zone_matches_direct_linking() {
    let scenario = generate(&ScenarioSpec {
        seed: 12,
        n_campaigns: 4,
        cases_per_campaign: 3,
        collector_fanin: 2,
        ..ScenarioSpec::default()
    })
    .unwrap();
    let chain = ChainContext::new(
        scenario.ledger(),
        &scenario.tags,
        &CoinJoinPolicy::default(),
        GraphConfig::default(),
    )
    .unwrap();
    let app = App::with_chain(chain);
    let z = app.zone("synthetic", &[]).await;
    for case in &scenario.cases {
        let id = case.case_id.to_string();
        app.case(&z, &id).await;
        for seed in &case.seed_addresses {
            assert_eq!(
                app.annotate(&z, &id, &seed.address, seed.role.as_str())
                    .await
                    .0,
                StatusCode::CREATED
            );
        }
    }
    app.relink(&z).await;

    let chain = ChainContext::new(
        scenario.ledger(),
        &scenario.tags,
        &CoinJoinPolicy::default(),
        GraphConfig::default(),
    )
    .unwrap();
    let linker = CaseLinker::new(
        &scenario.cases,
        &chain.partition,
        &chain.graph,
        LinkConfig::default(),
    );
    for level in LinkLevel::ALL {
        let direct = linker.link(level);
        let view = app.clusters(&z, level.as_str()).await;
        let served: Vec<(Vec<String>, u64)> = view["clusters"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| {
                (
                    c["cases"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|v| v.as_str().unwrap().to_string())
                        .collect(),
                    c["inflow_satoshi"].as_u64().unwrap(),
                )
            })
            .collect();
        let expected: Vec<(Vec<String>, u64)> = direct
            .clusters
            .iter()
            .map(|c| {
                (
                    c.cases.iter().map(|id| id.to_string()).collect(),
                    c.inflow_satoshi,
                )
            })
            .collect();
        assert_eq!(served, expected, "{level}");
    }
}
