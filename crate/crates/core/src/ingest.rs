//! Flight records: CSV schema, validation, synthetic generation and splits.

use std::fmt;
use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Column order of the record CSV.
pub const CSV_HEADER: [&str; 22] = [
    "origin",
    "destination",
    "flight_hour",
    "wind_dir_deg",
    "wind_speed_kt",
    "visibility_m",
    "temperature_c",
    "cloud_cover_octas",
    "fc_wind_dir_deg",
    "fc_wind_speed_kt",
    "fc_visibility_m",
    "fc_temperature_c",
    "lat_src",
    "lon_src",
    "alt_src_m",
    "lat_dst",
    "lon_dst",
    "alt_dst_m",
    "runway_head_change",
    "runway_config_change",
    "holding",
    "holding_seconds",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{} invalid row(s); first: {}", .0.len(), .0[0])]
    Rows(Vec<RowError>),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A rejected row. `row` counts data rows from 1 (the header is row 0).
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub row: usize,
    pub field: String,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: field `{}`: {}", self.row, self.field, self.message)
    }
}

/// One flight with decoded weather, geography, runway flags and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightRecord {
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
    pub lat_src: f64,
    pub lon_src: f64,
    pub alt_src_m: f64,
    pub lat_dst: f64,
    pub lon_dst: f64,
    pub alt_dst_m: f64,
    pub runway_head_change: bool,
    pub runway_config_change: bool,
    pub holding: bool,
    pub holding_seconds: f64,
    /// Derived from the coordinates; not a CSV column.
    pub geodesic_km: f64,
}

impl FlightRecord {
    /// Range and label-consistency checks; returns the first offending field.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        fn range(name: &'static str, x: f64, lo: f64, hi: f64) -> Result<(), (&'static str, String)> {
            if x.is_finite() && x >= lo && x <= hi {
                Ok(())
            } else {
                Err((name, format!("{x} outside [{lo}, {hi}]")))
            }
        }
        let inf = f64::INFINITY;
        if self.origin.is_empty() {
            return Err(("origin", "empty code".into()));
        }
        if self.destination.is_empty() {
            return Err(("destination", "empty code".into()));
        }
        if self.origin == self.destination {
            return Err(("destination", "same as origin (self-loop flight)".into()));
        }
        range("flight_hour", self.flight_hour as f64, 0.0, 23.0)?;
        range("wind_dir_deg", self.wind_dir_deg, 0.0, 360.0)?;
        range("wind_speed_kt", self.wind_speed_kt, 0.0, inf)?;
        range("visibility_m", self.visibility_m, 0.0, inf)?;
        range("temperature_c", self.temperature_c, -inf, inf)?;
        range("cloud_cover_octas", self.cloud_cover_octas as f64, 0.0, 8.0)?;
        range("fc_wind_dir_deg", self.fc_wind_dir_deg, 0.0, 360.0)?;
        range("fc_wind_speed_kt", self.fc_wind_speed_kt, 0.0, inf)?;
        range("fc_visibility_m", self.fc_visibility_m, 0.0, inf)?;
        range("fc_temperature_c", self.fc_temperature_c, -inf, inf)?;
        range("lat_src", self.lat_src, -90.0, 90.0)?;
        range("lon_src", self.lon_src, -180.0, 180.0)?;
        range("alt_src_m", self.alt_src_m, -430.0, inf)?;
        range("lat_dst", self.lat_dst, -90.0, 90.0)?;
        range("lon_dst", self.lon_dst, -180.0, 180.0)?;
        range("alt_dst_m", self.alt_dst_m, -430.0, inf)?;
        range("holding_seconds", self.holding_seconds, 0.0, inf)?;
        if !self.holding && self.holding_seconds != 0.0 {
            return Err(("holding_seconds", "nonzero while holding = 0".into()));
        }
        Ok(())
    }

    fn csv_fields(&self) -> [String; 22] {
        let b = |x: bool| if x { "1" } else { "0" }.to_string();
        [
            self.origin.clone(),
            self.destination.clone(),
            self.flight_hour.to_string(),
            self.wind_dir_deg.to_string(),
            self.wind_speed_kt.to_string(),
            self.visibility_m.to_string(),
            self.temperature_c.to_string(),
            self.cloud_cover_octas.to_string(),
            self.fc_wind_dir_deg.to_string(),
            self.fc_wind_speed_kt.to_string(),
            self.fc_visibility_m.to_string(),
            self.fc_temperature_c.to_string(),
            self.lat_src.to_string(),
            self.lon_src.to_string(),
            self.alt_src_m.to_string(),
            self.lat_dst.to_string(),
            self.lon_dst.to_string(),
            self.alt_dst_m.to_string(),
            b(self.runway_head_change),
            b(self.runway_config_change),
            b(self.holding),
            self.holding_seconds.to_string(),
        ]
    }
}

/// Haversine great-circle distance on the mean-radius sphere.
pub fn geodesic_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Parsed,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub positives: usize,
    pub negatives: usize,
}

impl Counts {
    fn of(records: &[FlightRecord]) -> Self {
        let positives = records.iter().filter(|r| r.holding).count();
        Counts { total: records.len(), positives, negatives: records.len() - positives }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    pub seed: Option<u64>,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<FlightRecord>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(records: Vec<FlightRecord>, source: Source, seed: Option<u64>) -> Self {
        let counts = Counts::of(&records);
        Dataset { records, provenance: Provenance { source, seed, counts } }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_records(&self.records, &mut buf).expect("writing to memory");
        buf
    }
}

pub fn write_records<W: Write>(records: &[FlightRecord], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(r.csv_fields())?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(raw: &str) -> Result<T, String> {
    if raw.trim().is_empty() {
        return Err("missing value".into());
    }
    raw.trim().parse::<T>().map_err(|_| format!("cannot parse `{raw}`"))
}

fn parse_bool(raw: &str) -> Result<bool, String> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        "" => Err("missing value".into()),
        other => Err(format!("expected 0 or 1, got `{other}`")),
    }
}

fn parse_row(rec: &csv::StringRecord) -> Result<FlightRecord, (&'static str, String)> {
    let get = |i: usize| rec.get(i).unwrap_or("");
    macro_rules! num {
        ($i:expr) => {
            parse_field(get($i)).map_err(|m| (CSV_HEADER[$i], m))?
        };
    }
    macro_rules! flag {
        ($i:expr) => {
            parse_bool(get($i)).map_err(|m| (CSV_HEADER[$i], m))?
        };
    }
    let code = |i: usize| -> Result<String, (&'static str, String)> {
        let s = get(i).trim();
        if s.is_empty() {
            Err((CSV_HEADER[i], "missing value".into()))
        } else {
            Ok(s.to_string())
        }
    };
    let flight_hour: u32 = num!(2);
    let cloud: u32 = num!(7);
    let mut r = FlightRecord {
        origin: code(0)?,
        destination: code(1)?,
        flight_hour: u8::try_from(flight_hour).map_err(|_| ("flight_hour", format!("{flight_hour} outside [0, 23]")))?,
        wind_dir_deg: num!(3),
        wind_speed_kt: num!(4),
        visibility_m: num!(5),
        temperature_c: num!(6),
        cloud_cover_octas: u8::try_from(cloud).map_err(|_| ("cloud_cover_octas", format!("{cloud} outside [0, 8]")))?,
        fc_wind_dir_deg: num!(8),
        fc_wind_speed_kt: num!(9),
        fc_visibility_m: num!(10),
        fc_temperature_c: num!(11),
        lat_src: num!(12),
        lon_src: num!(13),
        alt_src_m: num!(14),
        lat_dst: num!(15),
        lon_dst: num!(16),
        alt_dst_m: num!(17),
        runway_head_change: flag!(18),
        runway_config_change: flag!(19),
        holding: flag!(20),
        holding_seconds: num!(21),
        geodesic_km: 0.0,
    };
    r.validate()?;
    r.geodesic_km = geodesic_km(r.lat_src, r.lon_src, r.lat_dst, r.lon_dst);
    Ok(r)
}

/// Parse and validate a record CSV. Every invalid row is reported; nothing is
/// imputed.
pub fn parse_records<R: Read>(input: R) -> Result<Dataset, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let header = reader.headers()?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != CSV_HEADER {
        let missing: Vec<&str> = CSV_HEADER.iter().copied().filter(|c| !got.contains(c)).collect();
        let msg = if missing.is_empty() {
            format!("columns out of order or unexpected; expected `{}`", CSV_HEADER.join(","))
        } else {
            format!("missing column(s): {}", missing.join(", "))
        };
        return Err(IngestError::Schema(msg));
    }
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let n = i + 1;
        if row.len() != CSV_HEADER.len() {
            errors.push(RowError {
                row: n,
                field: "*".into(),
                message: format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()),
            });
            continue;
        }
        match parse_row(&row) {
            Ok(r) => records.push(r),
            Err((field, message)) => errors.push(RowError { row: n, field: field.into(), message }),
        }
    }
    if !errors.is_empty() {
        return Err(IngestError::Rows(errors));
    }
    Ok(Dataset::new(records, Source::Parsed, None))
}

/// Real ICAO codes for the first airports; further airports get synthetic codes.
const AIRPORT_CODES: [&str; 20] = [
    "SBGR", "SBSP", "SBRJ", "SBGL", "SBBR", "SBCF", "SBKP", "SBPA", "SBSV", "SBRF",
    "SBCT", "SBFL", "SBFZ", "SBBE", "SBEG", "SBGO", "SBVT", "SBMO", "SBNT", "SBJP",
];

fn airport_code(i: usize) -> String {
    match AIRPORT_CODES.get(i) {
        Some(c) => c.to_string(),
        None => {
            let k = i - AIRPORT_CODES.len();
            let a = (b'A' + (k / 26 % 26) as u8) as char;
            let b = (b'A' + (k % 26) as u8) as char;
            format!("SX{a}{b}")
        }
    }
}

fn round_to(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

fn round_dp(x: f64, dp: i32) -> f64 {
    let s = 10f64.powi(dp);
    (x * s).round() / s
}

struct SynthAirport {
    code: String,
    lat: f64,
    lon: f64,
    alt: f64,
    congestion: f64,
}

/// Draw `n` flights of which exactly `positives` hold.
///
/// Holding odds follow a logistic score of planted drivers (low visibility,
/// strong wind, runway changes, congested destination, peak hours, heavy
/// cloud). The exact positive count is enforced by weighted sampling without
/// replacement on those odds.
pub fn synth_generate(seed: u64, n: usize, positives: usize, airports: usize) -> Result<Dataset, IngestError> {
    if n == 0 || positives == 0 || positives >= n {
        return Err(IngestError::Parameter(format!("need 0 < positives ({positives}) < n ({n})")));
    }
    if airports < 2 {
        return Err(IngestError::Parameter(format!("need at least 2 airports, got {airports}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let nodes: Vec<SynthAirport> = (0..airports)
        .map(|i| SynthAirport {
            code: airport_code(i),
            lat: round_dp(rng.random_range(-33.0..2.0), 4),
            lon: round_dp(rng.random_range(-70.0..-35.0), 4),
            alt: rng.random_range(0.0f64..1200.0).round(),
            congestion: 1.0 / (1.0 + i as f64).powf(0.8),
        })
        .collect();
    let popularity = WeightedIndex::new(nodes.iter().map(|a| a.congestion)).expect("positive weights");

    let gust = Gamma::<f64>::new(2.0, 4.0).expect("valid gamma");
    let temp = Normal::<f64>::new(24.0, 5.0).expect("valid normal");
    let unit = Normal::<f64>::new(0.0, 1.0).expect("valid normal");

    let mut records = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let o = popularity.sample(&mut rng);
        let mut d = popularity.sample(&mut rng);
        while d == o {
            d = popularity.sample(&mut rng);
        }
        let (src, dst) = (&nodes[o], &nodes[d]);
        let flight_hour: u8 = rng.random_range(0..24);
        let visibility_m = if rng.random_bool(0.8) {
            10000.0
        } else {
            round_to(rng.random_range(200f64.ln()..10000f64.ln()).exp(), 100.0)
        };
        let wind_speed_kt = gust.sample(&mut rng).round();
        let wind_dir_deg = rng.random_range(0.0f64..360.0).round() % 360.0;
        let temperature_c = round_dp(temp.sample(&mut rng), 1);
        let cloud_cover_octas: u8 =
            if visibility_m < 5000.0 { rng.random_range(5..=8) } else { rng.random_range(0..=8) };
        let fc_visibility_m =
            round_to((visibility_m * (0.3 * unit.sample(&mut rng)).exp()).min(10000.0), 100.0);
        let fc_wind_speed_kt = (wind_speed_kt + 3.0 * unit.sample(&mut rng)).max(0.0).round();
        let fc_wind_dir_deg = (wind_dir_deg + 20.0 * unit.sample(&mut rng)).rem_euclid(360.0).round() % 360.0;
        let fc_temperature_c = round_dp(temperature_c + 1.5 * unit.sample(&mut rng), 1);
        let runway_head_change = rng.random_bool(if wind_speed_kt > 15.0 { 0.18 } else { 0.05 });
        let runway_config_change = rng.random_bool(0.04);

        let peak = matches!(flight_hour, 7..=9 | 17..=19);
        let score = 3.5 * (1.0 - visibility_m / 10000.0)
            + 0.09 * wind_speed_kt
            + 1.5 * runway_head_change as u8 as f64
            + 1.2 * runway_config_change as u8 as f64
            + 2.0 * dst.congestion
            + 0.5 * peak as u8 as f64
            + 0.6 * (cloud_cover_octas >= 7) as u8 as f64;
        scores.push(score);

        records.push(FlightRecord {
            origin: src.code.clone(),
            destination: dst.code.clone(),
            flight_hour,
            wind_dir_deg,
            wind_speed_kt,
            visibility_m,
            temperature_c,
            cloud_cover_octas,
            fc_wind_dir_deg,
            fc_wind_speed_kt,
            fc_visibility_m,
            fc_temperature_c,
            lat_src: src.lat,
            lon_src: src.lon,
            alt_src_m: src.alt,
            lat_dst: dst.lat,
            lon_dst: dst.lon,
            alt_dst_m: dst.alt,
            runway_head_change,
            runway_config_change,
            holding: false,
            holding_seconds: 0.0,
            geodesic_km: geodesic_km(src.lat, src.lon, dst.lat, dst.lon),
        });
    }

    // Efraimidis-Spirakis: keep the `positives` largest ln(u)/w keys.
    let mut keys: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let w = 1.0 / (1.0 + (-(s - 6.0)).exp());
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keys[..positives].iter().map(|&(_, i)| i).collect();
    chosen.sort_unstable();
    let base = LogNormal::new(480f64.ln(), 0.6).expect("valid lognormal");
    for i in chosen {
        let r = &mut records[i];
        let drivers = 0.6 * (1.0 - r.visibility_m / 10000.0)
            + 0.3 * r.runway_head_change as u8 as f64
            + 0.4 * nodes.iter().find(|a| a.code == r.destination).map_or(0.0, |a| a.congestion);
        r.holding = true;
        r.holding_seconds = (base.sample(&mut rng) * drivers.exp()).round().max(60.0);
    }
    Ok(Dataset::new(records, Source::Synthetic, Some(seed)))
}

/// Per-class shuffled split. Each class sends `round(f * count)` records to
/// the test side, clamped so both sides keep at least one record of every
/// class that has two or more. Both sides keep the original record order.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), IngestError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(IngestError::Parameter(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; ds.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> =
            ds.records.iter().enumerate().filter(|(_, r)| r.holding == class).map(|(i, _)| i).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let mut k = (test_fraction * idx.len() as f64).round() as usize;
        if idx.len() >= 2 {
            k = k.clamp(1, idx.len() - 1);
        }
        for &i in &idx[..k] {
            in_test[i] = true;
        }
    }
    let pick = |want: bool| -> Vec<FlightRecord> {
        ds.records.iter().zip(&in_test).filter(|(_, &t)| t == want).map(|(r, _)| r.clone()).collect()
    };
    let src = ds.provenance.source;
    let seed = ds.provenance.seed;
    Ok((Dataset::new(pick(false), src, seed), Dataset::new(pick(true), src, seed)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_csv() -> String {
        let mut s = CSV_HEADER.join(",");
        s.push('\n');
        s.push_str("SBGR,SBRJ,7,350,12,8000,21.5,3,340,10,9000,22,-23.4356,-46.4731,750,-22.81,-43.2506,9,0,1,1,540\n");
        s.push_str("SBRJ,SBGR,18,90,4,10000,25,1,100,5,10000,24.5,-22.81,-43.2506,9,-23.4356,-46.4731,750,0,0,0,0\n");
        s
    }

    fn replace_field(csv: &str, row: usize, col: usize, value: &str) -> String {
        let mut lines: Vec<String> = csv.lines().map(String::from).collect();
        let mut fields: Vec<String> = lines[row].split(',').map(String::from).collect();
        fields[col] = value.to_string();
        lines[row] = fields.join(",");
        lines.join("\n") + "\n"
    }

    #[test]
    fn parses_well_formed_file() {
        let ds = parse_records(sample_csv().as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.provenance.counts.positives, 1);
        assert!(ds.records[0].geodesic_km > 300.0 && ds.records[0].geodesic_km < 400.0);
    }

    #[test]
    fn out_of_range_wind_direction_names_field() {
        let csv = replace_field(&sample_csv(), 1, 3, "361");
        match parse_records(csv.as_bytes()) {
            Err(IngestError::Rows(errs)) => {
                assert_eq!(errs.len(), 1);
                assert_eq!(errs[0].row, 1);
                assert_eq!(errs[0].field, "wind_dir_deg");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_inconsistency_rejected() {
        let csv = replace_field(&sample_csv(), 2, 21, "30");
        match parse_records(csv.as_bytes()) {
            Err(IngestError::Rows(errs)) => {
                assert_eq!((errs[0].row, errs[0].field.as_str()), (2, "holding_seconds"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_values_and_columns() {
        let csv = replace_field(&sample_csv(), 1, 5, "");
        assert!(matches!(parse_records(csv.as_bytes()), Err(IngestError::Rows(_))));
        let no_col = sample_csv().replacen("visibility_m,", "", 1);
        match parse_records(no_col.as_bytes()) {
            Err(IngestError::Schema(m)) => assert!(m.contains("visibility_m")),
            other => panic!("unexpected {other:?}"),
        }
        let self_loop = replace_field(&sample_csv(), 1, 1, "SBGR");
        assert!(matches!(parse_records(self_loop.as_bytes()), Err(IngestError::Rows(_))));
    }

    #[test]
    fn serialization_is_idempotent() {
        let first = parse_records(sample_csv().as_bytes()).unwrap().to_csv();
        let second = parse_records(first.as_slice()).unwrap().to_csv();
        assert_eq!(first, second);
        let synth = synth_generate(3, 300, 20, 6).unwrap();
        let text = synth.to_csv();
        let back = parse_records(text.as_slice()).unwrap();
        assert_eq!(back.records, synth.records);
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn geodesic_examples() {
        assert_eq!(geodesic_km(12.0, 34.0, 12.0, 34.0), 0.0);
        let half = geodesic_km(0.0, 0.0, 0.0, 180.0);
        assert!((half - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-9);
        assert!((half - 20015.1).abs() < 0.1);
        let quarter = geodesic_km(0.0, 0.0, 0.0, 90.0);
        let oracle = airhold_oracles::law_of_cosines_km(0.0, 0.0, 0.0, 90.0, EARTH_RADIUS_KM);
        assert!((quarter - oracle).abs() < 1e-6);
        assert!((quarter - 10007.5).abs() < 0.1);
    }

    proptest! {
        #[test]
        fn geodesic_is_a_metric(
            a in (-90.0f64..90.0, -180.0f64..180.0),
            b in (-90.0f64..90.0, -180.0f64..180.0),
            c in (-90.0f64..90.0, -180.0f64..180.0),
        ) {
            let ab = geodesic_km(a.0, a.1, b.0, b.1);
            let ba = geodesic_km(b.0, b.1, a.0, a.1);
            let bc = geodesic_km(b.0, b.1, c.0, c.1);
            let ac = geodesic_km(a.0, a.1, c.0, c.1);
            prop_assert!((ab - ba).abs() <= 1e-9);
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn synth_counts_and_determinism() {
        let a = synth_generate(11, 5000, 85, 20).unwrap();
        assert_eq!(a.provenance.counts, Counts { total: 5000, positives: 85, negatives: 4915 });
        let b = synth_generate(11, 5000, 85, 20).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_ne!(a.to_csv(), synth_generate(12, 5000, 85, 20).unwrap().to_csv());
        for r in &a.records {
            assert!(r.validate().is_ok());
            assert_eq!(r.holding, r.holding_seconds > 0.0);
        }
    }

    #[test]
    fn synth_planted_visibility_signal() {
        let ds = synth_generate(1, 20000, 340, 20).unwrap();
        let mean = |pos: bool| {
            let v: Vec<f64> =
                ds.records.iter().filter(|r| r.holding == pos).map(|r| r.visibility_m).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(true) < mean(false));
    }

    #[test]
    fn synth_balanced_and_bad_parameters() {
        let ds = synth_generate(5, 400, 200, 4).unwrap();
        assert_eq!(ds.provenance.counts.positives, 200);
        assert!(synth_generate(5, 10, 10, 4).is_err());
        assert!(synth_generate(5, 10, 0, 4).is_err());
        assert!(synth_generate(5, 10, 3, 1).is_err());
        // More airports than named codes.
        let big = synth_generate(5, 500, 10, 30).unwrap();
        assert!(big.records.iter().any(|r| r.origin.starts_with("SX")));
    }

    #[test]
    fn stratified_split_proportions() {
        let mut ds = synth_generate(2, 100, 10, 5).unwrap();
        ds.provenance.seed = None;
        let (train, test) = stratified_split(&ds, 0.2, 9).unwrap();
        assert_eq!(test.provenance.counts.positives, 2);
        assert_eq!(test.provenance.counts.negatives, 18);
        assert_eq!(train.len() + test.len(), 100);

        let (_, other) = stratified_split(&ds, 0.2, 10).unwrap();
        assert_eq!(other.provenance.counts, test.provenance.counts);
        assert_ne!(other.records, test.records);

        let (_, again) = stratified_split(&ds, 0.2, 9).unwrap();
        assert_eq!(again.records, test.records);
        assert!(stratified_split(&ds, 1.0, 9).is_err());
        assert!(stratified_split(&ds, 0.0, 9).is_err());
    }

    #[test]
    fn split_keeps_rare_class_on_both_sides() {
        let ds = synth_generate(2, 50, 2, 5).unwrap();
        let (train, test) = stratified_split(&ds, 0.2, 1).unwrap();
        assert_eq!(train.provenance.counts.positives, 1);
        assert_eq!(test.provenance.counts.positives, 1);
    }
}
