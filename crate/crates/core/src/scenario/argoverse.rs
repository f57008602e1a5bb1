//! Adapter for the Argoverse forecasting CSV layout
//! (`TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y[,CITY_NAME]`).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::Point;

use super::{AgentTrack, LaneGraph, Scenario};

struct Columns {
    timestamp: usize,
    track: usize,
    kind: usize,
    x: usize,
    y: usize,
    city: Option<usize>,
}

fn columns(headers: &csv::StringRecord) -> Result<Columns> {
    let find =
        |name: &str| headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::MalformedInput(format!("missing column {name}")));
    Ok(Columns {
        timestamp: find("TIMESTAMP")?,
        track: find("TRACK_ID")?,
        kind: find("OBJECT_TYPE")?,
        x: find("X")?,
        y: find("Y")?,
        city: headers.iter().position(|h| h.trim() == "CITY_NAME"),
    })
}

fn number(record: &csv::StringRecord, col: usize) -> Result<f64> {
    let raw = record.get(col).ok_or_else(|| Error::MalformedInput("short row".into()))?;
    let v: f64 = raw.trim().parse().map_err(|_| Error::MalformedInput(format!("not a number: {raw:?}")))?;
    if !v.is_finite() {
        return Err(Error::MalformedInput(format!("non-finite value {raw:?}")));
    }
    Ok(v)
}

/// Scenario frames are the target's timestamps; other tracks are kept only
/// when they have a row at every one of them.
pub(super) fn parse(raw: &[u8]) -> Result<Scenario> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw);
    let headers = reader.headers().map_err(|e| Error::MalformedInput(e.to_string()))?.clone();
    let cols = columns(&headers)?;

    // track id -> (is_target, timestamp bits -> position); insertion order kept separately
    let mut order: Vec<String> = Vec::new();
    let mut tracks: BTreeMap<String, (bool, BTreeMap<u64, Point>)> = BTreeMap::new();
    let mut city = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedInput(e.to_string()))?;
        let ts = number(&record, cols.timestamp)?;
        let id = record.get(cols.track).ok_or_else(|| Error::MalformedInput("short row".into()))?.trim().to_string();
        let kind = record.get(cols.kind).unwrap_or("").trim();
        let p = [number(&record, cols.x)?, number(&record, cols.y)?];
        if city.is_none() {
            city = cols.city.and_then(|c| record.get(c)).map(|c| c.trim().to_string());
        }
        let entry = tracks.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (false, BTreeMap::new())
        });
        entry.0 |= kind == "AGENT";
        // timestamps are non-negative, so the bit pattern orders like the value
        entry.1.insert(ts.abs().to_bits(), p);
    }

    let target_id = order.iter().find(|id| tracks[*id].0).cloned().ok_or(Error::NoTargetAgent)?;
    let frames: Vec<u64> = tracks[&target_id].1.keys().copied().collect();

    let mut agents = Vec::new();
    for id in &order {
        let (is_target, samples) = &tracks[id];
        let positions: Option<Vec<Point>> = frames.iter().map(|ts| samples.get(ts).copied()).collect();
        if let Some(positions) = positions {
            agents.push(AgentTrack { agent_id: id.clone(), is_target: *is_target && *id == target_id, positions });
        }
    }
    Ok(Scenario { scenario_id: String::new(), agents, lane_graph: LaneGraph::default(), city_tag: city, truth: None })
}

#[cfg(test)]
mod tests {
    use super::super::{parse_scenario, Horizon, InputFormat};

    // Ten rows: a 10-frame target with an obs/pred split of 4/6, plus one
    // partial track that must be dropped.
    const FIXTURE: &str = "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME
0.0,tgt,AGENT,0.0,0.0,PIT
0.1,tgt,AGENT,0.0,1.0,PIT
0.1,other,OTHERS,5.0,5.0,PIT
0.2,tgt,AGENT,0.0,2.0,PIT
0.3,tgt,AGENT,0.0,3.0,PIT
0.4,tgt,AGENT,0.0,4.0,PIT
0.5,tgt,AGENT,0.0,5.0,PIT
0.6,tgt,AGENT,0.0,6.0,PIT
0.7,tgt,AGENT,0.0,7.0,PIT
0.8,tgt,AGENT,0.0,8.0,PIT
";

    #[test]
    fn hand_built_fixture() {
        // 9 target rows are present; add the tenth frame
        let csv = format!("{FIXTURE}0.9,tgt,AGENT,0.0,9.0,PIT\n");
        let horizon = Horizon { obs_len: 4, pred_len: 6 };
        let s = parse_scenario(csv.as_bytes(), InputFormat::ArgoverseCsv, &horizon).unwrap();
        assert_eq!(s.agents.len(), 1);
        assert_eq!(s.city_tag.as_deref(), Some("PIT"));
        assert_eq!(s.target_observed(&horizon), &[[0.0, 0.0], [0.0, 1.0], [0.0, 2.0], [0.0, 3.0]]);
        let future = s.target_future(&horizon);
        assert_eq!(future.len(), 6);
        assert_eq!(future[0], [0.0, 4.0]);
        assert_eq!(future[5], [0.0, 9.0]);
    }

    #[test]
    fn fifty_frame_track_splits_twenty_thirty() {
        let mut csv = String::from("TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y\n");
        for i in 0..50 {
            let t = 315_970_000.0 + i as f64 * 0.1;
            csv.push_str(&format!("{t:.1},a,AGENT,{},{}\n", i as f64, 0.5 * i as f64));
            csv.push_str(&format!("{t:.1},b,OTHERS,{},{}\n", -(i as f64), 1.0));
            if i < 30 {
                csv.push_str(&format!("{t:.1},c,OTHERS,1,1\n"));
            }
        }
        let horizon = Horizon::default();
        let s = parse_scenario(csv.as_bytes(), InputFormat::ArgoverseCsv, &horizon).unwrap();
        assert_eq!(s.agents.len(), 2);
        assert_eq!(s.target_observed(&horizon).len(), 20);
        assert_eq!(s.target_future(&horizon).len(), 30);
        assert_eq!(s.target_future(&horizon)[29], [49.0, 24.5]);
    }

    #[test]
    fn no_agent_row_means_no_target() {
        let csv = "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y\n0.0,a,AV,0,0\n";
        let err = parse_scenario(csv.as_bytes(), InputFormat::ArgoverseCsv, &Horizon::default()).unwrap_err();
        assert_eq!(err.name(), "NoTargetAgent");
    }

    #[test]
    fn bad_number_is_malformed() {
        let csv = "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y\n0.0,a,AGENT,zero,0\n";
        let err = parse_scenario(csv.as_bytes(), InputFormat::ArgoverseCsv, &Horizon::default()).unwrap_err();
        assert_eq!(err.name(), "MalformedInput");
    }
}
