use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use calidesign::requests::{run, DesignRequest};
use calidesign_api::{router, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    router(&ServiceConfig {
        workers: 2,
        cors_origins: Vec::new(),
    })
}

async fn send(app: Router, request: Request<Body>) -> (StatusCode, Vec<u8>) {
    let response = app.oneshot(request).await.unwrap();
    let status = response.status();
    let body = response
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, body)
}

async fn post(path: &str, body: Value) -> (StatusCode, Value) {
    let request = Request::post(path)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = send(app(), request).await;
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

fn hovell_groups() -> Value {
    json!([
        {"sigma2_eps": 0.551, "r_delta": 0.43, "r_phi": 1.78},
        {"sigma2_eps": 0.705, "r_delta": 0.34, "r_phi": 1.40}
    ])
}

fn hovell_design_body(c_total: f64) -> Value {
    json!({"groups": hovell_groups(), "costs": {"c_q": 125.0, "c_b": 250.0, "c_total": c_total}})
}

fn triple(v: &Value) -> [u64; 3] {
    [&v["n_total"], &v["n_direct"], &v["k_reps"]].map(|x| x.as_u64().unwrap())
}

#[tokio::test]
async fn health_reports_version() {
    let (status, body) = send(
        app(),
        Request::get("/v1/health").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let body: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(body["version"], calidesign_api::VERSION);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn presets_are_listed() {
    let (status, body) = send(
        app(),
        Request::get("/v1/presets").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let body: Value = serde_json::from_slice(&body).unwrap();
    let names: Vec<&str> = body["presets"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["hovell", "wilson", "tone"]);
}

#[tokio::test]
async fn design_for_hovell() {
    let (status, body) = post("/v1/design", hovell_design_body(50_000.0)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let design = &body["result"]["design"];
    assert_eq!(triple(&design["group1"]), [64, 64, 1]);
    assert_eq!(triple(&design["group2"]), [70, 69, 1]);
    assert_eq!(body["inputs"]["costs"]["c_total"], 50_000.0);
    assert_eq!(body["units"]["se_combined"], "outcome units");
}

#[tokio::test]
async fn budget_for_ninety_percent_power() {
    let (status, body) = post(
        "/v1/budget",
        json!({
            "groups": hovell_groups(),
            "unit_costs": {"c_q": 125.0, "c_b": 250.0},
            "power": {"alpha": 0.05, "power": 0.9, "delta": 0.1}
        }),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let budget = body["result"]["budget"].as_f64().unwrap();
    assert!((budget / 1_360_757.0 - 1.0).abs() < 0.01, "{budget}");
    assert!(body["result"]["iterations"].as_u64().unwrap() <= 3);
}

#[tokio::test]
async fn power_by_design_and_by_se() {
    let (status, body) = post(
        "/v1/power",
        json!({
            "groups": hovell_groups(),
            "designs": [
                {"n_total": 1301, "n_direct": 1301, "k_reps": 1},
                {"n_total": 1409, "n_direct": 1409, "k_reps": 1}
            ],
            "alpha": 0.05, "delta": 0.1, "target_power": 0.8
        }),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let power = body["result"]["power"].as_f64().unwrap();
    assert!((power - 0.8).abs() < 0.005);
    let (status, by_se) = post(
        "/v1/power",
        json!({"se": body["result"]["se"], "alpha": 0.05, "delta": 0.1}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{by_se}");
    assert_eq!(by_se["result"]["power"].as_f64().unwrap(), power);
}

const PILOT: &str = "subject_id,group,q,m1,m2\n\
    a1,1,1.1,0.9,1.2\na2,1,2.3,2.0,2.2\na3,1,0.4,0.5,0.1\na4,1,1.9,1.4,1.8\na5,1,3.0,2.6,2.9\na6,1,1.4,,\na7,1,2.2,,\n\
    b1,2,0.8,0.6,0.9\nb2,2,2.6,2.4,2.0\nb3,2,1.3,1.2,1.5\nb4,2,0.2,0.4,0.1\nb5,2,1.7,1.9,1.6\nb6,2,2.9,,\n";

#[tokio::test]
async fn estimate_accepts_json_and_multipart() {
    let (status, json_body) = post("/v1/estimate", json!({"pilot_csv": PILOT})).await;
    assert_eq!(status, StatusCode::OK, "{json_body}");
    assert_eq!(json_body["result"]["groups"].as_array().unwrap().len(), 2);

    let boundary = "XyZb0undary";
    let form = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"pilot.csv\"\r\n\
         Content-Type: text/csv\r\n\r\n{PILOT}\r\n--{boundary}--\r\n"
    );
    let request = Request::post("/v1/estimate")
        .header(
            header::CONTENT_TYPE,
            format!("multipart/form-data; boundary={boundary}"),
        )
        .body(Body::from(form))
        .unwrap();
    let (status, bytes) = send(app(), request).await;
    assert_eq!(
        status,
        StatusCode::OK,
        "{}",
        String::from_utf8_lossy(&bytes)
    );
    let multipart_body: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(multipart_body["result"], json_body["result"]);
}

#[tokio::test]
async fn malformed_pilot_names_the_line() {
    let (status, body) = post(
        "/v1/estimate",
        json!({"pilot_csv": "subject_id,group,q,m1\na,1,x,1\n"}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    assert_eq!(body["field"], "pilot_csv");
    assert_eq!(body["line"], 2);
}

#[tokio::test]
async fn sensitivity_and_sweeps() {
    let (status, body) = post(
        "/v1/sensitivity",
        json!({
            "groups": [
                {"sigma2_eps": 0.778, "r_delta": 3.95, "r_phi": 64.48},
                {"sigma2_eps": 0.486, "r_delta": 6.32, "r_phi": 96.37}
            ],
            "costs": {"c_q": 125.0, "c_b": 250.0, "c_total": 250_000.0},
            "axis": "r_phi"
        }),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let rows = body["result"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r["efficiency"] == 1.0));

    let (status, body) = post(
        "/v1/sweep",
        json!({"kind": "thresholds", "r_cb": [1.0], "r_phi": 1.0, "r_c": 2e5}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["result"]["kind"], "thresholds");
    let k12 = body["result"]["rows"][0]["k1_to_2"].as_f64().unwrap();
    assert!((k12 / 2.0 - 1.0).abs() < 0.05);

    let (status, body) = post(
        "/v1/sweep",
        json!({"kind": "surface", "sigma2_eps": 1.0, "n_total": 60, "n_direct": [30], "k_reps": [2],
               "r_delta": [1.0], "r_phi": 1.0}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let se = body["result"]["rows"][0]["se"].as_f64().unwrap();
    assert!((se * se - 2055.0 / 48600.0).abs() < 1e-12);
}

#[tokio::test]
async fn oversized_grid_is_413() {
    let values: Vec<f64> = (1..=101).map(f64::from).collect();
    let (status, body) = post(
        "/v1/sweep",
        json!({"kind": "surface", "sigma2_eps": 1.0, "n_total": 200, "n_direct": (4..=104).collect::<Vec<u64>>(),
               "k_reps": [1], "r_delta": values, "r_phi": 1.0}),
    )
    .await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE, "{body}");
    assert_eq!(body["limit"], 10_000);
}

#[tokio::test]
async fn unknown_and_missing_fields_are_400_with_paths() {
    let mut body = hovell_design_body(50_000.0);
    body["costs"]["c_totl"] = json!(1);
    let (status, err) = post("/v1/design", body).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "costs.c_totl");
    assert!(err["message"].as_str().unwrap().contains("c_totl"));

    let (status, err) = post(
        "/v1/design",
        json!({"groups": [{"r_delta": 1.0, "r_phi": 1.0}], "costs": {"c_q": 1.0, "c_b": 1.0, "c_total": 100.0}}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "groups[0]");
    assert!(err["message"].as_str().unwrap().contains("sigma2_eps"));

    let request = Request::post("/v1/design")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(send(app(), request).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn invalid_values_are_400_with_field() {
    let mut body = hovell_design_body(50_000.0);
    body["costs"]["c_q"] = json!(-1.0);
    let (status, err) = post("/v1/design", body).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{err}");
    assert_eq!(err["error"], "validation");
    assert_eq!(err["field"], "costs.c_q");
}

#[tokio::test]
async fn infeasible_budget_is_422_with_hint() {
    let (status, err) = post("/v1/design", hovell_design_body(2_000.0)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{err}");
    assert_eq!(err["error"], "infeasible");
    assert_eq!(err["minimal_budget"], 3000.0);
}

#[tokio::test]
async fn non_convergence_is_422_with_trace() {
    let (status, err) = post(
        "/v1/budget",
        json!({
            "groups": hovell_groups(),
            "unit_costs": {"c_q": 125.0, "c_b": 250.0},
            "power": {"alpha": 0.05, "power": 0.9, "delta": 0.1},
            "optimizer": {"max_iterations": 1}
        }),
    )
    .await;
    // this search needs two corrections after the initial evaluation
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{err}");
    assert_eq!(err["error"], "no_convergence");
    assert_eq!(err["trace"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn identical_concurrent_requests_match_each_other_and_the_core() {
    let body = hovell_design_body(250_000.0).to_string();
    let request = || {
        Request::post("/v1/design")
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.clone()))
            .unwrap()
    };
    let shared = app();
    let (a, b) = tokio::join!(
        send(shared.clone(), request()),
        send(shared.clone(), request())
    );
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(a.1, b.1);
    // an unrelated request in between changes nothing
    let _ = send(
        shared.clone(),
        Request::get("/v1/health").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(send(shared, request()).await.1, a.1);

    let core: DesignRequest = serde_json::from_str(&body).unwrap();
    assert_eq!(a.1, serde_json::to_vec(&run(&core).unwrap()).unwrap());
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let request = Request::builder()
        .method(Method::OPTIONS)
        .uri("/v1/design")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let response = app().oneshot(request).await.unwrap();
    assert!(response.status().is_success());
    assert!(response
        .headers()
        .contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));

    let restricted = router(&ServiceConfig {
        workers: 1,
        cors_origins: vec!["https://planner.example".into()],
    });
    let request = Request::get("/v1/health")
        .header(header::ORIGIN, "https://elsewhere.example")
        .body(Body::empty())
        .unwrap();
    let response = restricted.oneshot(request).await.unwrap();
    assert!(!response
        .headers()
        .contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}
