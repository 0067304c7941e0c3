use std::collections::{BTreeMap, BTreeSet};

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::Deserialize;

use super::{MapError, RawOsmExtract, RawWay};
use crate::geom::GeoPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OsmFormat {
    Xml,
    /// Overpass API JSON output.
    Json,
}

impl OsmFormat {
    /// Guesses the format from the first non-whitespace byte.
    pub fn sniff(input: &[u8]) -> OsmFormat {
        match input.iter().find(|b| !b.is_ascii_whitespace()) {
            Some(b'{') => OsmFormat::Json,
            _ => OsmFormat::Xml,
        }
    }
}

// Highway classes that are not drivable roads.
const EXCLUDED_HIGHWAYS: &[&str] = &[
    "footway",
    "cycleway",
    "path",
    "pedestrian",
    "steps",
    "bridleway",
    "corridor",
];

const KEPT_TAGS: &[&str] = &["lanes", "oneway"];

fn is_road(tags: &BTreeMap<String, String>) -> bool {
    match tags.get("highway") {
        Some(class) => !EXCLUDED_HIGHWAYS.contains(&class.as_str()),
        None => false,
    }
}

struct Collector {
    nodes: BTreeMap<i64, GeoPoint>,
    ways: Vec<(i64, RawWay)>,
}

impl Collector {
    fn finish(self) -> RawOsmExtract {
        let mut out = RawOsmExtract::default();
        let mut used = BTreeSet::new();
        for (id, mut way) in self.ways {
            if !is_road(&way.tags) {
                continue;
            }
            if way.nodes.iter().any(|n| !self.nodes.contains_key(n)) {
                out.dropped_ways += 1;
                continue;
            }
            way.tags.retain(|k, _| KEPT_TAGS.contains(&k.as_str()));
            used.extend(way.nodes.iter().copied());
            out.ways.insert(id, way);
        }
        out.nodes = self
            .nodes
            .into_iter()
            .filter(|(id, _)| used.contains(id))
            .collect();
        out
    }
}

/// Parses an OSM XML or Overpass JSON document, keeping drivable road ways
/// and their `lanes`/`oneway` tags.
pub fn parse_osm(input: &[u8], format: OsmFormat) -> Result<RawOsmExtract, MapError> {
    let collector = match format {
        OsmFormat::Xml => parse_xml(input)?,
        OsmFormat::Json => parse_json(input)?,
    };
    Ok(collector.finish())
}

fn attr_map(e: &BytesStart<'_>, offset: u64) -> Result<BTreeMap<String, String>, MapError> {
    let mut out = BTreeMap::new();
    for attr in e.attributes() {
        let attr = attr.map_err(|err| MapError::Parse {
            offset,
            message: err.to_string(),
        })?;
        let key = attr.key.as_ref().to_owned();
        let value = quick_xml::escape::unescape(&attr.value)
            .map_err(|err| MapError::Parse {
                offset,
                message: err.to_string(),
            })?
            .into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

fn required<T: std::str::FromStr>(
    attrs: &BTreeMap<String, String>,
    key: &str,
    offset: u64,
) -> Result<T, MapError> {
    attrs
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| MapError::Parse {
            offset,
            message: format!("missing or invalid attribute `{key}`"),
        })
}

fn geo(lat: f64, lon: f64, offset: u64) -> Result<GeoPoint, MapError> {
    GeoPoint::lat_lon(lat, lon).map_err(|e| MapError::Parse {
        offset,
        message: e.to_string(),
    })
}

fn parse_xml(input: &[u8]) -> Result<Collector, MapError> {
    let mut reader = Reader::from_reader(input);
    let mut c = Collector {
        nodes: BTreeMap::new(),
        ways: Vec::new(),
    };
    let mut current_way: Option<(i64, RawWay)> = None;
    let mut depth = 0usize;
    loop {
        let offset = reader.buffer_position();
        let event = reader.read_event().map_err(|err| MapError::Parse {
            offset: reader.error_position(),
            message: err.to_string(),
        })?;
        let (e, empty) = match event {
            Event::Eof => break,
            Event::Start(e) => {
                depth += 1;
                (e, false)
            }
            Event::Empty(e) => (e, true),
            Event::End(e) => {
                depth = depth.saturating_sub(1);
                if e.name().as_ref() == "way" {
                    if let Some(w) = current_way.take() {
                        c.ways.push(w);
                    }
                }
                continue;
            }
            _ => continue,
        };
        match e.name().as_ref() {
            "node" => {
                let a = attr_map(&e, offset)?;
                let id = required(&a, "id", offset)?;
                let p = geo(required(&a, "lat", offset)?, required(&a, "lon", offset)?, offset)?;
                c.nodes.insert(id, p);
            }
            "way" => {
                let a = attr_map(&e, offset)?;
                let way = (required(&a, "id", offset)?, RawWay::default());
                if empty {
                    c.ways.push(way);
                } else {
                    current_way = Some(way);
                }
            }
            "nd" => {
                if let Some((_, w)) = current_way.as_mut() {
                    let a = attr_map(&e, offset)?;
                    w.nodes.push(required(&a, "ref", offset)?);
                }
            }
            "tag" => {
                if let Some((_, w)) = current_way.as_mut() {
                    let a = attr_map(&e, offset)?;
                    if let (Some(k), Some(v)) = (a.get("k"), a.get("v")) {
                        w.tags.insert(k.clone(), v.clone());
                    }
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(MapError::Parse {
            offset: reader.buffer_position(),
            message: "unexpected end of document inside an open element".into(),
        });
    }
    Ok(c)
}

#[derive(Deserialize)]
struct OverpassDoc {
    #[serde(default)]
    elements: Vec<OverpassElement>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum OverpassElement {
    Node {
        id: i64,
        lat: f64,
        lon: f64,
    },
    Way {
        id: i64,
        #[serde(default)]
        nodes: Vec<i64>,
        #[serde(default)]
        tags: BTreeMap<String, String>,
    },
    #[serde(other)]
    Other,
}

fn byte_offset(input: &[u8], line: usize, column: usize) -> u64 {
    let mut current = 1;
    let mut start = 0;
    for (i, b) in input.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            start = i + 1;
        }
    }
    (start + column.saturating_sub(1)) as u64
}

fn parse_json(input: &[u8]) -> Result<Collector, MapError> {
    let mut c = Collector {
        nodes: BTreeMap::new(),
        ways: Vec::new(),
    };
    if input.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(c);
    }
    let doc: OverpassDoc = serde_json::from_slice(input).map_err(|err| MapError::Parse {
        offset: byte_offset(input, err.line(), err.column()),
        message: err.to_string(),
    })?;
    for el in doc.elements {
        match el {
            OverpassElement::Node { id, lat, lon } => {
                c.nodes.insert(id, geo(lat, lon, 0)?);
            }
            OverpassElement::Way { id, nodes, tags } => c.ways.push((id, RawWay { nodes, tags })),
            OverpassElement::Other => {}
        }
    }
    Ok(c)
}
