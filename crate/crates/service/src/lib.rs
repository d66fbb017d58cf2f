//! HTTP service over one immutable model snapshot.
//!
//! Endpoints: `GET /health`, `GET /network`, `POST /predict`,
//! `POST /simulate`, `GET /importances`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use airhold_core::features::{FeatureError, NetworkFeatures};
use airhold_core::gbdt::GbdtError;
use airhold_core::graph::GraphError;
use airhold_core::ingest::geodesic_km;
use airhold_core::{EdgeGraphFeatures, Execution, FeatureRegistry, FlightRecord, GbdtModel, Task, WeightedDigraph};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tower_http::cors::CorsLayer;

pub const SIMULATE_LIMIT: usize = 10_000;
pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const REGRESSOR_FILE: &str = "regressor.json";
pub const REGISTRY_FILE: &str = "registry.json";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] GbdtError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("inconsistent snapshot: {0}")]
    Snapshot(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Server(std::io::Error),
}

/// Everything a prediction needs, loaded once and shared read-only.
#[derive(Debug)]
pub struct Snapshot {
    classifier: GbdtModel,
    regressor: GbdtModel,
    registry: FeatureRegistry,
    network: NetworkFeatures,
    versions: ModelVersions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVersions {
    pub classifier: String,
    pub regressor: String,
}

fn digest_tag(model: &GbdtModel) -> String {
    let hash = Sha256::digest(model.to_json());
    format!("v{}-{}", model.version, &hex::encode(hash)[..12])
}

impl Snapshot {
    pub fn new(
        classifier: GbdtModel,
        regressor: GbdtModel,
        registry: FeatureRegistry,
        network: NetworkFeatures,
    ) -> Result<Self, ServiceError> {
        if classifier.task != Task::Classification || regressor.task != Task::Regression {
            return Err(ServiceError::Snapshot("expected a classifier and a regressor".into()));
        }
        let names = registry.names();
        if classifier.feature_names != names || regressor.feature_names != names {
            return Err(ServiceError::Snapshot("model features differ from the registry".into()));
        }
        let versions = ModelVersions { classifier: digest_tag(&classifier), regressor: digest_tag(&regressor) };
        Ok(Snapshot { classifier, regressor, registry, network, versions })
    }

    /// Reads the three model files from `model_dir` and the training graph.
    pub fn load(model_dir: &Path, graph_path: &Path) -> Result<Self, ServiceError> {
        let read = |p: &Path| std::fs::read(p).map_err(|source| ServiceError::Io { path: p.display().to_string(), source });
        let classifier = GbdtModel::from_json(&read(&model_dir.join(CLASSIFIER_FILE))?)?;
        let regressor = GbdtModel::from_json(&read(&model_dir.join(REGRESSOR_FILE))?)?;
        let registry = FeatureRegistry::from_json(&read(&model_dir.join(REGISTRY_FILE))?)?;
        let graph = WeightedDigraph::from_json(&read(graph_path)?)?;
        let network = NetworkFeatures::from_graph(graph, Execution::default())?;
        Snapshot::new(classifier, regressor, registry, network)
    }

    pub fn versions(&self) -> &ModelVersions {
        &self.versions
    }

    pub fn network(&self) -> &NetworkFeatures {
        &self.network
    }
}

/// Flight inputs of a what-if query; labels and coordinates are not part of
/// it (coordinates come from the network).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub origin: String,
    pub destination: String,
    pub flight_hour: u8,
    pub wind_dir_deg: f64,
    pub wind_speed_kt: f64,
    pub visibility_m: f64,
    pub temperature_c: f64,
    pub cloud_cover_octas: u8,
    pub fc_wind_dir_deg: f64,
    pub fc_wind_speed_kt: f64,
    pub fc_visibility_m: f64,
    pub fc_temperature_c: f64,
    #[serde(default)]
    pub runway_head_change: bool,
    #[serde(default)]
    pub runway_config_change: bool,
}

impl ScenarioRequest {
    /// The inputs of an existing flight record.
    pub fn from_record(r: &FlightRecord) -> Self {
        ScenarioRequest {
            id: None,
            origin: r.origin.clone(),
            destination: r.destination.clone(),
            flight_hour: r.flight_hour,
            wind_dir_deg: r.wind_dir_deg,
            wind_speed_kt: r.wind_speed_kt,
            visibility_m: r.visibility_m,
            temperature_c: r.temperature_c,
            cloud_cover_octas: r.cloud_cover_octas,
            fc_wind_dir_deg: r.fc_wind_dir_deg,
            fc_wind_speed_kt: r.fc_wind_speed_kt,
            fc_visibility_m: r.fc_visibility_m,
            fc_temperature_c: r.fc_temperature_c,
            runway_head_change: r.runway_head_change,
            runway_config_change: r.runway_config_change,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub holding_probability: f64,
    pub predicted_delay_s: f64,
    pub model_versions: ModelVersions,
    pub graph_features: EdgeGraphFeatures,
    pub unseen_route: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("unknown airport {0}")]
    UnknownAirport(String),
    #[error("invalid field {field}: {message}")]
    Invalid { field: String, message: String },
}

/// Build the flight row the batch pipeline would build and score it.
pub fn predict_scenario(s: &Snapshot, req: &ScenarioRequest) -> Result<PredictionResponse, ScenarioError> {
    let g = s.network.graph();
    let airport = |code: &str| g.node(code).ok_or_else(|| ScenarioError::UnknownAirport(code.to_string()));
    let src = airport(&req.origin)?;
    let dst = airport(&req.destination)?;
    let record = FlightRecord {
        origin: req.origin.clone(),
        destination: req.destination.clone(),
        flight_hour: req.flight_hour,
        wind_dir_deg: req.wind_dir_deg,
        wind_speed_kt: req.wind_speed_kt,
        visibility_m: req.visibility_m,
        temperature_c: req.temperature_c,
        cloud_cover_octas: req.cloud_cover_octas,
        fc_wind_dir_deg: req.fc_wind_dir_deg,
        fc_wind_speed_kt: req.fc_wind_speed_kt,
        fc_visibility_m: req.fc_visibility_m,
        fc_temperature_c: req.fc_temperature_c,
        lat_src: src.lat,
        lon_src: src.lon,
        alt_src_m: src.altitude,
        lat_dst: dst.lat,
        lon_dst: dst.lon,
        alt_dst_m: dst.altitude,
        runway_head_change: req.runway_head_change,
        runway_config_change: req.runway_config_change,
        holding: false,
        holding_seconds: 0.0,
        geodesic_km: geodesic_km(src.lat, src.lon, dst.lat, dst.lon),
    };
    record
        .validate()
        .map_err(|(field, message)| ScenarioError::Invalid { field: field.to_string(), message })?;
    let augmented = s.network.augment(&record);
    let row = s.registry.encode(&augmented);
    let predict = |m: &GbdtModel| m.predict(&row).expect("snapshot models match the registry");
    Ok(PredictionResponse {
        id: req.id.clone(),
        holding_probability: predict(&s.classifier),
        predicted_delay_s: predict(&s.regressor),
        model_versions: s.versions.clone(),
        graph_features: augmented.graph,
        unseen_route: augmented.unseen_route,
    })
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    index: Option<usize>,
}

struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, detail: String) -> Self {
        ApiError { status, body: ErrorBody { error, detail, field: None, index: None } }
    }

    fn scenario(e: ScenarioError, index: Option<usize>) -> Self {
        let (status, error, field) = match &e {
            ScenarioError::UnknownAirport(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_airport", None),
            ScenarioError::Invalid { field, .. } => (StatusCode::BAD_REQUEST, "invalid_field", Some(field.clone())),
        };
        ApiError { status, body: ErrorBody { error, detail: e.to_string(), field, index } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Parse a JSON body ourselves so that every decoding problem is a 400 with
/// serde's path-bearing message.
fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", e.to_string()))
}

type Shared = Arc<Snapshot>;

async fn health(State(s): State<Shared>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "model_versions": s.versions }))
}

#[derive(Debug, Serialize)]
struct NetworkNode<'a> {
    code: &'a str,
    lat: f64,
    lon: f64,
    alt: f64,
    in_strength: u64,
    out_strength: u64,
}

#[derive(Debug, Serialize)]
struct NetworkEdge<'a> {
    src: &'a str,
    dst: &'a str,
    weight: u64,
    features: EdgeGraphFeatures,
}

async fn network(State(s): State<Shared>) -> Response {
    let g = s.network.graph();
    let nodes: Vec<NetworkNode> = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let (in_strength, out_strength) = g.strengths_at(i);
            NetworkNode { code: &n.code, lat: n.lat, lon: n.lon, alt: n.altitude, in_strength, out_strength }
        })
        .collect();
    let feats = s.network.edge_features();
    let edges: Vec<NetworkEdge> = g
        .edges()
        .iter()
        .map(|e| {
            let (src, dst) = (g.code(e.src), g.code(e.dst));
            let features = feats[&(src.to_string(), dst.to_string())];
            NetworkEdge { src, dst, weight: e.weight, features }
        })
        .collect();
    Json(serde_json::json!({ "nodes": nodes, "edges": edges })).into_response()
}

async fn predict(State(s): State<Shared>, body: Bytes) -> Result<Json<PredictionResponse>, ApiError> {
    let req: ScenarioRequest = parse(&body)?;
    predict_scenario(&s, &req).map(Json).map_err(|e| ApiError::scenario(e, None))
}

async fn simulate(State(s): State<Shared>, body: Bytes) -> Result<Json<Vec<PredictionResponse>>, ApiError> {
    let reqs: Vec<ScenarioRequest> = parse(&body)?;
    if reqs.len() > SIMULATE_LIMIT {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "batch_too_large",
            format!("{} scenarios exceed the limit of {SIMULATE_LIMIT}", reqs.len()),
        ));
    }
    reqs.iter()
        .enumerate()
        .map(|(i, r)| predict_scenario(&s, r).map_err(|e| ApiError::scenario(e, Some(i))))
        .collect::<Result<Vec<_>, _>>()
        .map(Json)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Importances {
    pub classifier: Option<BTreeMap<String, f64>>,
    pub regressor: Option<BTreeMap<String, f64>>,
}

async fn importances(State(s): State<Shared>) -> Json<Importances> {
    Json(Importances {
        classifier: s.classifier.feature_importance().ok(),
        regressor: s.regressor.feature_importance().ok(),
    })
}

pub fn router(snapshot: Arc<Snapshot>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/network", get(network))
        .route("/predict", post(predict))
        .route("/simulate", post(simulate))
        .route("/importances", get(importances))
        .layer(DefaultBodyLimit::max(32 * 1024 * 1024))
        .layer(CorsLayer::permissive())
        .with_state(snapshot)
}

/// Bind first so a busy port is reported before anything is served.
pub async fn bind(addr: &str) -> Result<tokio::net::TcpListener, ServiceError> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr: addr.to_string(), source })
}

pub async fn serve(snapshot: Arc<Snapshot>, listener: tokio::net::TcpListener) -> Result<(), ServiceError> {
    let local: Option<SocketAddr> = listener.local_addr().ok();
    log::info!("listening on {local:?}");
    axum::serve(listener, router(snapshot)).await.map_err(ServiceError::Server)
}
