//! Joins route-level network metrics onto flights and encodes model inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::centrality::{edge_features_indexed, CentralityError, EdgeGraphFeatures};
use crate::graph::{FlightMultigraph, GraphError, WeightedDigraph};
use crate::ingest::FlightRecord;
use crate::par::{map_indexed, Execution};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Centrality(#[from] CentralityError),
    #[error("row {row}: feature `{feature}` is not finite")]
    NonFinite { row: usize, feature: String },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("duplicate feature `{0}`")]
    DuplicateFeature(String),
    #[error("feature `{name}` declared as {declared:?}, expected {expected:?}")]
    KindMismatch { name: String, declared: FeatureKind, expected: FeatureKind },
    #[error("matrix shape: {0}")]
    Shape(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Tabular,
    Graph,
    Indicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    FlightHour,
    WindDirSin,
    WindDirCos,
    WindSpeed,
    Visibility,
    Temperature,
    CloudCover,
    FcWindDirSin,
    FcWindDirCos,
    FcWindSpeed,
    FcVisibility,
    FcTemperature,
    Geodesic,
    LatSrc,
    LonSrc,
    AltSrc,
    LatDst,
    LonDst,
    AltDst,
    RunwayHeadChange,
    RunwayConfigChange,
    Betweenness,
    FlowBetweenness,
    EdgeConnectivity,
    DegreeDiffSrc,
    DegreeDiffDst,
    GoogleEntry,
    UnseenRoute,
}

const COLUMNS: [(&str, FeatureKind, Column); 28] = {
    use Column::*;
    use FeatureKind::*;
    [
        ("flight_hour", Tabular, FlightHour),
        ("wind_dir_sin", Tabular, WindDirSin),
        ("wind_dir_cos", Tabular, WindDirCos),
        ("wind_speed_kt", Tabular, WindSpeed),
        ("visibility_m", Tabular, Visibility),
        ("temperature_c", Tabular, Temperature),
        ("cloud_cover_octas", Tabular, CloudCover),
        ("fc_wind_dir_sin", Tabular, FcWindDirSin),
        ("fc_wind_dir_cos", Tabular, FcWindDirCos),
        ("fc_wind_speed_kt", Tabular, FcWindSpeed),
        ("fc_visibility_m", Tabular, FcVisibility),
        ("fc_temperature_c", Tabular, FcTemperature),
        ("geodesic_km", Tabular, Geodesic),
        ("lat_src", Tabular, LatSrc),
        ("lon_src", Tabular, LonSrc),
        ("alt_src_m", Tabular, AltSrc),
        ("lat_dst", Tabular, LatDst),
        ("lon_dst", Tabular, LonDst),
        ("alt_dst_m", Tabular, AltDst),
        ("runway_head_change", Tabular, RunwayHeadChange),
        ("runway_config_change", Tabular, RunwayConfigChange),
        ("betweenness", Graph, Betweenness),
        ("flow_betweenness", Graph, FlowBetweenness),
        ("edge_connectivity", Graph, EdgeConnectivity),
        ("dd_src", Graph, DegreeDiffSrc),
        ("dd_dst", Graph, DegreeDiffDst),
        ("google_entry", Graph, GoogleEntry),
        ("unseen_route", Indicator, UnseenRoute),
    ]
};

/// `(sin, cos)` of a bearing; 0° and 360° encode identically.
pub fn circular(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0).to_radians();
    (r.sin(), r.cos())
}

/// A flight plus the metrics of its route in the training network.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedRecord {
    pub record: FlightRecord,
    pub graph: EdgeGraphFeatures,
    pub unseen_route: bool,
}

impl Column {
    fn value(self, a: &AugmentedRecord) -> f64 {
        let r = &a.record;
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        match self {
            Column::FlightHour => r.flight_hour as f64,
            Column::WindDirSin => circular(r.wind_dir_deg).0,
            Column::WindDirCos => circular(r.wind_dir_deg).1,
            Column::WindSpeed => r.wind_speed_kt,
            Column::Visibility => r.visibility_m,
            Column::Temperature => r.temperature_c,
            Column::CloudCover => r.cloud_cover_octas as f64,
            Column::FcWindDirSin => circular(r.fc_wind_dir_deg).0,
            Column::FcWindDirCos => circular(r.fc_wind_dir_deg).1,
            Column::FcWindSpeed => r.fc_wind_speed_kt,
            Column::FcVisibility => r.fc_visibility_m,
            Column::FcTemperature => r.fc_temperature_c,
            Column::Geodesic => r.geodesic_km,
            Column::LatSrc => r.lat_src,
            Column::LonSrc => r.lon_src,
            Column::AltSrc => r.alt_src_m,
            Column::LatDst => r.lat_dst,
            Column::LonDst => r.lon_dst,
            Column::AltDst => r.alt_dst_m,
            Column::RunwayHeadChange => flag(r.runway_head_change),
            Column::RunwayConfigChange => flag(r.runway_config_change),
            Column::Betweenness => a.graph.betweenness,
            Column::FlowBetweenness => a.graph.flow_betweenness,
            Column::EdgeConnectivity => a.graph.edge_connectivity,
            Column::DegreeDiffSrc => a.graph.degree_diff_src as f64,
            Column::DegreeDiffDst => a.graph.degree_diff_dst as f64,
            Column::GoogleEntry => a.graph.google_entry,
            Column::UnseenRoute => flag(a.unseen_route),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

/// Ordered, named model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRegistry {
    specs: Vec<FeatureSpec>,
    columns: Vec<Column>,
}

impl Default for FeatureRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl FeatureRegistry {
    /// Every known feature in canonical order.
    pub fn standard() -> Self {
        let specs = COLUMNS
            .iter()
            .map(|&(name, kind, _)| FeatureSpec { name: name.to_string(), kind })
            .collect();
        Self::from_specs(specs).expect("canonical registry is valid")
    }

    /// Only the flight-level columns (no network metrics, no indicator).
    pub fn tabular() -> Self {
        let specs = COLUMNS
            .iter()
            .filter(|c| c.1 == FeatureKind::Tabular)
            .map(|&(name, kind, _)| FeatureSpec { name: name.to_string(), kind })
            .collect();
        Self::from_specs(specs).expect("tabular registry is valid")
    }

    pub fn from_specs(specs: Vec<FeatureSpec>) -> Result<Self, FeatureError> {
        let mut seen = BTreeSet::new();
        let mut columns = Vec::with_capacity(specs.len());
        for s in &specs {
            if !seen.insert(s.name.clone()) {
                return Err(FeatureError::DuplicateFeature(s.name.clone()));
            }
            let &(_, kind, col) = COLUMNS
                .iter()
                .find(|c| c.0 == s.name)
                .ok_or_else(|| FeatureError::UnknownFeature(s.name.clone()))?;
            if kind != s.kind {
                return Err(FeatureError::KindMismatch { name: s.name.clone(), declared: s.kind, expected: kind });
            }
            columns.push(col);
        }
        Ok(FeatureRegistry { specs, columns })
    }

    /// Registry of known feature names, kinds looked up from the catalogue.
    pub fn from_names(names: &[String]) -> Result<Self, FeatureError> {
        let specs = names
            .iter()
            .map(|n| {
                COLUMNS
                    .iter()
                    .find(|c| c.0 == n)
                    .map(|c| FeatureSpec { name: n.clone(), kind: c.1 })
                    .ok_or_else(|| FeatureError::UnknownFeature(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_specs(specs)
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn encode(&self, a: &AugmentedRecord) -> Vec<f64> {
        self.columns.iter().map(|c| c.value(a)).collect()
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.specs).expect("registry serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, FeatureError> {
        let specs: Vec<FeatureSpec> =
            serde_json::from_slice(bytes).map_err(|e| FeatureError::Format(e.to_string()))?;
        Self::from_specs(specs)
    }
}

/// The training network with its per-route metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkFeatures {
    graph: WeightedDigraph,
    edges: BTreeMap<(String, String), EdgeGraphFeatures>,
}

impl NetworkFeatures {
    pub fn from_graph(graph: WeightedDigraph, exec: Execution) -> Result<Self, FeatureError> {
        let feats = if graph.is_empty() { Vec::new() } else { edge_features_indexed(&graph, exec)? };
        let edges = graph
            .edges()
            .iter()
            .zip(feats)
            .map(|(e, f)| ((graph.code(e.src).to_string(), graph.code(e.dst).to_string()), f))
            .collect();
        Ok(NetworkFeatures { graph, edges })
    }

    /// Collapse the training flights and compute every route's metrics.
    pub fn from_training(train: &[FlightRecord]) -> Result<Self, FeatureError> {
        let graph = FlightMultigraph::from_records(train)?.collapse();
        Self::from_graph(graph, Execution::default())
    }

    pub fn graph(&self) -> &WeightedDigraph {
        &self.graph
    }

    pub fn edge_features(&self) -> &BTreeMap<(String, String), EdgeGraphFeatures> {
        &self.edges
    }

    /// Route metrics, or zeros and `true` for a route absent from training.
    pub fn lookup(&self, origin: &str, destination: &str) -> (EdgeGraphFeatures, bool) {
        match self.edges.get(&(origin.to_string(), destination.to_string())) {
            Some(f) => (*f, false),
            None => (EdgeGraphFeatures::default(), true),
        }
    }

    pub fn augment(&self, record: &FlightRecord) -> AugmentedRecord {
        let (graph, unseen_route) = self.lookup(&record.origin, &record.destination);
        AugmentedRecord { record: record.clone(), graph, unseen_route }
    }

    pub fn attach(&self, records: &[FlightRecord]) -> Vec<AugmentedRecord> {
        records.iter().map(|r| self.augment(r)).collect()
    }
}

/// Build the network from `train` only and join its metrics onto `records`.
pub fn attach_graph_features(
    train: &[FlightRecord],
    records: &[FlightRecord],
) -> Result<Vec<AugmentedRecord>, FeatureError> {
    Ok(NetworkFeatures::from_training(train)?.attach(records))
}

/// Row-major design matrix with both label columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    data: Vec<f64>,
    labels_cls: Vec<bool>,
    labels_reg: Vec<f64>,
}

pub const LABEL_COLUMNS: [&str; 2] = ["holding", "holding_seconds"];

impl FeatureMatrix {
    pub fn new(
        names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels_cls: Vec<bool>,
        labels_reg: Vec<f64>,
    ) -> Result<Self, FeatureError> {
        let p = names.len();
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(FeatureError::DuplicateFeature(n.clone()));
            }
        }
        if labels_cls.len() != rows.len() || labels_reg.len() != rows.len() {
            return Err(FeatureError::Shape("label count differs from row count".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * p);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != p {
                return Err(FeatureError::Shape(format!("row {i} has {} values, expected {p}", row.len())));
            }
            if let Some(j) = row.iter().position(|x| !x.is_finite()) {
                return Err(FeatureError::NonFinite { row: i, feature: names[j].clone() });
            }
            data.extend(row);
        }
        Ok(FeatureMatrix { names, data, labels_cls, labels_reg })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.labels_cls.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows()).map(|i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols() + j]
    }

    pub fn labels_cls(&self) -> &[bool] {
        &self.labels_cls
    }

    pub fn labels_reg(&self) -> &[f64] {
        &self.labels_reg
    }

    /// Keep only the given columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureMatrix, FeatureError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.names.iter().position(|m| m == n).ok_or_else(|| FeatureError::UnknownFeature(n.clone())))
            .collect::<Result<_, _>>()?;
        let rows = self.rows().map(|r| idx.iter().map(|&j| r[j]).collect()).collect();
        FeatureMatrix::new(names.to_vec(), rows, self.labels_cls.clone(), self.labels_reg.clone())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.names.iter().map(String::as_str).chain(LABEL_COLUMNS))?;
        for i in 0..self.n_rows() {
            let mut fields: Vec<String> = self.row(i).iter().map(|x| x.to_string()).collect();
            fields.push(if self.labels_cls[i] { "1" } else { "0" }.to_string());
            fields.push(self.labels_reg[i].to_string());
            w.write_record(&fields)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, FeatureError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let p = header.len().checked_sub(2).ok_or_else(|| FeatureError::Format("too few columns".into()))?;
        if header[p..] != LABEL_COLUMNS {
            return Err(FeatureError::Format("last two columns must be holding,holding_seconds".into()));
        }
        let names = header[..p].to_vec();
        let (mut rows, mut cls, mut reg) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64, FeatureError> {
                rec.get(j)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| FeatureError::Format(format!("row {}: bad value in column {}", i + 1, header[j])))
            };
            rows.push((0..p).map(parse).collect::<Result<Vec<_>, _>>()?);
            cls.push(match rec.get(p) {
                Some("1") => true,
                Some("0") => false,
                _ => return Err(FeatureError::Format(format!("row {}: bad holding label", i + 1))),
            });
            reg.push(parse(p + 1)?);
        }
        FeatureMatrix::new(names, rows, cls, reg)
    }
}

/// Encode augmented records in registry order.
pub fn build_matrix(records: &[AugmentedRecord], registry: &FeatureRegistry) -> Result<FeatureMatrix, FeatureError> {
    let rows = map_indexed(Execution::default(), records.len(), |i| registry.encode(&records[i]));
    FeatureMatrix::new(
        registry.names(),
        rows,
        records.iter().map(|a| a.record.holding).collect(),
        records.iter().map(|a| a.record.holding_seconds).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centrality::compute_all_edge_features;
    use crate::ingest::{stratified_split, synth_generate};

    fn small() -> (Vec<FlightRecord>, Vec<FlightRecord>) {
        let ds = synth_generate(4, 600, 40, 8).unwrap();
        let (train, test) = stratified_split(&ds, 0.25, 4).unwrap();
        (train.records, test.records)
    }

    #[test]
    fn join_matches_edge_features() {
        let (train, _) = small();
        let aug = attach_graph_features(&train, &train).unwrap();
        let g = FlightMultigraph::from_records(&train).unwrap().collapse();
        let reference = compute_all_edge_features(&g).unwrap();
        for a in &aug {
            assert!(!a.unseen_route);
            let key = (a.record.origin.clone(), a.record.destination.clone());
            assert_eq!(a.graph, reference[&key]);
        }
        let first = &aug[0];
        let twin = aug.iter().skip(1).find(|a| {
            a.record.origin == first.record.origin && a.record.destination == first.record.destination
        });
        assert_eq!(twin.unwrap().graph, first.graph);
    }

    #[test]
    fn unseen_route_gets_zeros_and_flag() {
        let (train, _) = small();
        let net = NetworkFeatures::from_training(&train).unwrap();
        let mut r = train[0].clone();
        r.origin = "ZZZZ".into();
        let a = net.augment(&r);
        assert!(a.unseen_route);
        assert_eq!(a.graph, EdgeGraphFeatures::default());
        let reg = FeatureRegistry::standard();
        let row = reg.encode(&a);
        assert_eq!(row[reg.index_of("unseen_route").unwrap()], 1.0);
    }

    #[test]
    fn graph_ignores_test_records() {
        let (train, test) = small();
        let mut all = train.clone();
        all.extend(test.iter().cloned());
        let net_train = NetworkFeatures::from_training(&train).unwrap();
        let a = net_train.attach(&all);
        // Deleting the test flights from the input changes nothing for train rows.
        let b = attach_graph_features(&train, &train).unwrap();
        assert_eq!(&a[..train.len()], &b[..]);
    }

    #[test]
    fn circular_wind_encoding() {
        assert_eq!(circular(0.0), (0.0, 1.0));
        assert_eq!(circular(360.0), (0.0, 1.0));
        let (s1, c1) = circular(359.0);
        let (s2, c2) = circular(1.0);
        assert!((c1 - c2).abs() < 1e-12 && (s1 + s2).abs() < 1e-12);
    }

    #[test]
    fn empty_records_give_full_header() {
        let reg = FeatureRegistry::standard();
        let m = build_matrix(&[], &reg).unwrap();
        assert_eq!(m.n_rows(), 0);
        assert_eq!(m.n_cols(), 28);
        let csv = String::from_utf8(m.to_csv()).unwrap();
        let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
        assert_eq!(&header[..28], reg.names().iter().map(String::as_str).collect::<Vec<_>>().as_slice());
        assert_eq!(&header[28..], &LABEL_COLUMNS);
    }

    #[test]
    fn non_finite_value_names_row_and_feature() {
        let err = FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 2.0], vec![0.0, f64::NAN]],
            vec![false, true],
            vec![0.0, 3.0],
        )
        .unwrap_err();
        match err {
            FeatureError::NonFinite { row, feature } => assert_eq!((row, feature.as_str()), (1, "b")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn matrix_dump_round_trips_and_is_deterministic() {
        let (train, test) = small();
        let reg = FeatureRegistry::standard();
        let net = NetworkFeatures::from_training(&train).unwrap();
        let m = build_matrix(&net.attach(&test), &reg).unwrap();
        let again = build_matrix(&NetworkFeatures::from_training(&train).unwrap().attach(&test), &reg).unwrap();
        assert_eq!(m.to_csv(), again.to_csv());
        let back = FeatureMatrix::read_csv(m.to_csv().as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn registry_json_and_validation() {
        let reg = FeatureRegistry::standard();
        assert_eq!(FeatureRegistry::from_json(&reg.to_json()).unwrap(), reg);
        let bad = vec![FeatureSpec { name: "nope".into(), kind: FeatureKind::Tabular }];
        assert!(matches!(FeatureRegistry::from_specs(bad), Err(FeatureError::UnknownFeature(_))));
        let wrong_kind = vec![FeatureSpec { name: "betweenness".into(), kind: FeatureKind::Tabular }];
        assert!(matches!(FeatureRegistry::from_specs(wrong_kind), Err(FeatureError::KindMismatch { .. })));
        let kinds: Vec<FeatureKind> = reg.specs().iter().map(|s| s.kind).collect();
        assert_eq!(kinds.iter().filter(|&&k| k == FeatureKind::Graph).count(), 6);
        assert_eq!(FeatureRegistry::tabular().len(), 21);
    }
}
