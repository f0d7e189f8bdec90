use std::path::Path;

use serde_json::{json, Map, Value};

use super::{AreaUnit, Domain, GeomError, Point2, Polygon, Result};

pub const DEFAULT_ID_KEY: &str = "geoid";

/// Reads a FeatureCollection of Polygon/MultiPolygon features keyed by `geoid`.
pub fn read_geojson(path: impl AsRef<Path>) -> Result<Domain> {
    read_geojson_with_key(path, DEFAULT_ID_KEY)
}

pub fn read_geojson_with_key(path: impl AsRef<Path>, id_key: &str) -> Result<Domain> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_feature_collection(&text, id_key, &label)
}

pub(crate) fn parse_feature_collection(text: &str, id_key: &str, label: &str) -> Result<Domain> {
    let root: Value = serde_json::from_str(text).map_err(|e| GeomError::Format(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeomError::Format("top-level object is not a FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| GeomError::Format("missing 'features' array".into()))?;

    let mut units = Vec::with_capacity(features.len());
    for (idx, feat) in features.iter().enumerate() {
        let fail = |reason: String| GeomError::Parse { feature: idx, reason };
        let id = match feat.get("properties").and_then(|p| p.get(id_key)) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            Some(_) => return Err(fail(format!("property '{id_key}' is not a string"))),
            None => return Err(fail(format!("missing id property '{id_key}'"))),
        };
        let geom = feat
            .get("geometry")
            .ok_or_else(|| fail("missing geometry".into()))?;
        let coords = geom
            .get("coordinates")
            .ok_or_else(|| fail("geometry has no coordinates".into()))?;
        let polygons = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![parse_polygon(coords).map_err(fail)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| fail("MultiPolygon coordinates are not an array".into()))?
                .iter()
                .map(parse_polygon)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(fail)?,
            Some(other) => return Err(fail(format!("unsupported geometry type '{other}'"))),
            None => return Err(fail("geometry has no type".into())),
        };
        let unit = AreaUnit::new(id, polygons).map_err(|e| fail(e.to_string()))?;
        units.push(unit);
    }
    Domain::new(label, units)
}

fn parse_ring(v: &Value) -> std::result::Result<Vec<Point2>, String> {
    let arr = v.as_array().ok_or("ring is not an array")?;
    let ring = arr
        .iter()
        .map(|pos| {
            let p = pos.as_array().ok_or("position is not an array")?;
            match (p.first().and_then(Value::as_f64), p.get(1).and_then(Value::as_f64)) {
                (Some(x), Some(y)) => Ok(Point2::new(x, y)),
                _ => Err("position needs two numbers"),
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if ring.len() < 4 || ring.first() != ring.last() {
        return Err("unclosed ring (first and last positions differ or fewer than 4)".into());
    }
    Ok(ring)
}

fn parse_polygon(v: &Value) -> std::result::Result<Polygon, String> {
    let rings = v.as_array().ok_or("polygon coordinates are not an array")?;
    let mut it = rings.iter();
    let shell = parse_ring(it.next().ok_or("polygon has no rings")?)?;
    let holes = it.map(parse_ring).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Polygon { shell, holes })
}

fn ring_json(ring: &[Point2]) -> Value {
    Value::Array(ring.iter().map(|p| json!([p.x, p.y])).collect())
}

pub(crate) fn unit_geometry(u: &AreaUnit) -> Value {
    let polys: Vec<Value> = u
        .polygons()
        .iter()
        .map(|p| {
            let mut rings = vec![ring_json(&p.shell)];
            rings.extend(p.holes.iter().map(|h| ring_json(h)));
            Value::Array(rings)
        })
        .collect();
    if polys.len() == 1 {
        json!({ "type": "Polygon", "coordinates": polys[0] })
    } else {
        json!({ "type": "MultiPolygon", "coordinates": polys })
    }
}

/// Serializes a domain, attaching `props[i]` to unit `i` alongside its id.
pub fn write_geojson_with_properties(
    path: impl AsRef<Path>,
    dom: &Domain,
    id_key: &str,
    props: &[Map<String, Value>],
) -> Result<()> {
    std::fs::write(path, domain_to_geojson(dom, id_key, props))?;
    Ok(())
}

pub(crate) fn domain_to_geojson(dom: &Domain, id_key: &str, props: &[Map<String, Value>]) -> String {
    let features: Vec<Value> = dom
        .units()
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut p = Map::new();
            p.insert(id_key.to_string(), Value::String(u.id().to_string()));
            if let Some(extra) = props.get(i) {
                for (k, v) in extra {
                    p.insert(k.clone(), v.clone());
                }
            }
            json!({ "type": "Feature", "properties": p, "geometry": unit_geometry(u) })
        })
        .collect();
    serde_json::to_string_pretty(&json!({ "type": "FeatureCollection", "features": features }))
        .expect("serializing JSON values cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::area;

    const FC: &str = r#"{
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature", "properties": {"geoid": "a"},
         "geometry": {"type": "Polygon", "coordinates": [[[0,0],[0,1],[1,1],[1,0],[0,0]]]}},
        {"type": "Feature", "properties": {"geoid": "b", "name": "two parts"},
         "geometry": {"type": "MultiPolygon", "coordinates": [
            [[[2,0],[3,0],[3,1],[2,1],[2,0]]],
            [[[4,0],[6,0],[6,2],[4,2],[4,0]], [[4.5,0.5],[5,0.5],[5,1],[4.5,1],[4.5,0.5]]]
         ]}}
      ]
    }"#;

    #[test]
    fn parses_polygons_and_multipolygons() {
        let d = parse_feature_collection(FC, "geoid", "t").unwrap();
        assert_eq!(d.ids(), vec!["a", "b"]);
        // clockwise input ring normalized
        assert_eq!(area(&d.units()[0]), 1.0);
        assert_eq!(area(&d.units()[1]), 1.0 + 4.0 - 0.25);
    }

    #[test]
    fn missing_id_reports_feature_index() {
        let err = parse_feature_collection(FC, "GEOID", "t").unwrap_err();
        assert!(matches!(err, GeomError::Parse { feature: 0, .. }), "{err}");
    }

    #[test]
    fn rejects_points_and_unclosed_rings() {
        let pt = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"geoid":"p"},"geometry":{"type":"Point","coordinates":[0,0]}}]}"#;
        assert!(matches!(
            parse_feature_collection(pt, "geoid", "t"),
            Err(GeomError::Parse { feature: 0, .. })
        ));
        let open = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"geoid":"a"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1]]]}}]}"#;
        assert!(matches!(
            parse_feature_collection(open, "geoid", "t"),
            Err(GeomError::Parse { feature: 0, .. })
        ));
    }

    #[test]
    fn write_then_read() {
        let d = parse_feature_collection(FC, "geoid", "t").unwrap();
        let text = domain_to_geojson(&d, "geoid", &[]);
        let back = parse_feature_collection(&text, "geoid", "t").unwrap();
        assert_eq!(back.units(), d.units());
    }
}
