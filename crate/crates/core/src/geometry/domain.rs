use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Point2;
use crate::error::{Error, Result};

/// Mean Earth radius used by the equirectangular projection.
const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Axis-aligned bounding box `[min_x, min_y, max_x, max_y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: Point2,
    pub max: Point2,
}

impl BBox {
    pub fn new(min: Point2, max: Point2) -> Self {
        Self { min, max }
    }

    pub fn from_array(b: [f64; 4]) -> Self {
        Self::new(Point2::new(b[0], b[1]), Point2::new(b[2], b[3]))
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Point2 {
        Point2::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
        )
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Coordinate units of a GeoJSON document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Longitude/latitude in degrees, linearized about the bbox center with the
    /// south-west corner as origin.
    #[default]
    Degrees,
    /// Already local metric coordinates.
    Meters,
}

/// A simple polygon stored implicitly closed (the first vertex is not
/// repeated) with counter-clockwise orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<Point2>,
}

impl Polygon {
    /// Builds a polygon, dropping an explicit closing vertex and consecutive
    /// duplicates, and reorienting to counter-clockwise.
    pub fn new(mut vertices: Vec<Point2>) -> Result<Self> {
        vertices.dedup();
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::Domain(format!(
                "degenerate polygon with {} distinct vertices",
                vertices.len()
            )));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Domain("non-finite polygon vertex".into()));
        }
        let mut poly = Self { vertices };
        let area = poly.signed_area();
        if area.abs() <= f64::EPSILON {
            return Err(Error::Domain("polygon has zero area".into()));
        }
        if area < 0.0 {
            poly.vertices.reverse();
        }
        if !poly.is_simple() {
            return Err(Error::Domain("polygon is self-intersecting".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle helper.
    pub fn rectangle(min: Point2, max: Point2) -> Result<Self> {
        Self::new(vec![
            min,
            Point2::new(max.x, min.y),
            max,
            Point2::new(min.x, max.y),
        ])
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |k| (self.vertices[k], self.vertices[(k + 1) % n]))
    }

    /// Shoelace area, positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        0.5 * self
            .edges()
            .map(|(a, b)| a.x * b.y - b.x * a.y)
            .sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn bounds(&self) -> BBox {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        BBox::new(min, max)
    }

    /// Even-odd crossing test.
    pub fn contains(&self, p: Point2) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                // adjacent edges share a vertex
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (c, d) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    fn map(&self, f: impl Fn(Point2) -> Point2) -> Result<Self> {
        Self::new(self.vertices.iter().copied().map(f).collect())
    }
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// The computational domain in local metric coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub bbox: BBox,
    pub buildings: Vec<Polygon>,
}

impl DomainSpec {
    pub fn new(bbox: BBox, buildings: Vec<Polygon>) -> Result<Self> {
        if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
            return Err(Error::Domain("bbox must have positive area".into()));
        }
        for (k, b) in buildings.iter().enumerate() {
            if b.vertices().iter().any(|&p| !bbox.contains(p)) {
                return Err(Error::Domain(format!("building {k} lies outside the bbox")));
            }
        }
        Ok(Self { bbox, buildings })
    }

    /// True if `p` lies inside any building footprint.
    pub fn in_building(&self, p: Point2) -> bool {
        self.buildings
            .iter()
            .any(|b| b.bounds().contains(p) && b.contains(p))
    }
}

/// Parses a GeoJSON `FeatureCollection` of `Polygon` features.
///
/// The bbox comes from `bbox` when given, else from the collection's RFC 7946
/// `bbox` member. Coordinates are in `units`, unless the collection carries a
/// foreign member `"units": "meters"`. Degree coordinates are projected with
/// an equirectangular linearization about the bbox center; the south-west
/// corner of the bbox becomes the metric origin.
pub fn load_domain(text: &str, bbox: Option<[f64; 4]>, units: Units) -> Result<DomainSpec> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::GeoJson(e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::GeoJson("expected a FeatureCollection".into()));
    }
    let units = match doc.get("units").and_then(Value::as_str) {
        Some("meters") => Units::Meters,
        Some("degrees") => Units::Degrees,
        Some(other) => return Err(Error::GeoJson(format!("unknown units {other:?}"))),
        None => units,
    };
    let raw_bbox = match bbox {
        Some(b) => b,
        None => parse_bbox(doc.get("bbox"))?,
    };
    let raw_bbox = BBox::from_array(raw_bbox);
    if !(raw_bbox.width() > 0.0 && raw_bbox.height() > 0.0) {
        return Err(Error::Domain("bbox must have positive area".into()));
    }

    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::GeoJson("missing features array".into()))?;

    let mut rings = Vec::with_capacity(features.len());
    for (k, feature) in features.iter().enumerate() {
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| Error::GeoJson(format!("feature {k} has no geometry")))?;
        match geometry.get("type").and_then(Value::as_str) {
            Some("Polygon") => {}
            other => {
                return Err(Error::GeoJson(format!(
                    "feature {k}: unsupported geometry {other:?}"
                )))
            }
        }
        let coords = geometry
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::GeoJson(format!("feature {k}: missing coordinates")))?;
        if coords.len() != 1 {
            return Err(Error::GeoJson(format!(
                "feature {k}: polygons with holes are not supported"
            )));
        }
        let ring = coords[0]
            .as_array()
            .ok_or_else(|| Error::GeoJson(format!("feature {k}: ring is not an array")))?
            .iter()
            .map(|pos| parse_position(pos).map(Point2::from))
            .collect::<Result<Vec<_>>>()?;
        if ring.iter().any(|&p| !raw_bbox.contains(p)) {
            return Err(Error::Domain(format!("building {k} lies outside the bbox")));
        }
        rings.push(ring);
    }

    let project = projection(raw_bbox, units);
    let bbox = BBox::new(project(raw_bbox.min), project(raw_bbox.max));
    let buildings = rings
        .into_iter()
        .map(|ring| Polygon::new(ring).and_then(|p| p.map(&project)))
        .collect::<Result<Vec<_>>>()?;
    DomainSpec::new(bbox, buildings)
}

fn projection(raw_bbox: BBox, units: Units) -> impl Fn(Point2) -> Point2 {
    let c = raw_bbox.center();
    let o = raw_bbox.min;
    move |p: Point2| match units {
        Units::Meters => p,
        Units::Degrees => {
            let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
            Point2::new(
                k * c.y.to_radians().cos() * (p.x - o.x),
                k * (p.y - o.y),
            )
        }
    }
}

fn parse_bbox(v: Option<&Value>) -> Result<[f64; 4]> {
    let arr = v
        .and_then(Value::as_array)
        .ok_or_else(|| Error::GeoJson("no bbox supplied".into()))?;
    if arr.len() != 4 {
        return Err(Error::GeoJson("bbox must have four numbers".into()));
    }
    let mut out = [0.0; 4];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = x
            .as_f64()
            .ok_or_else(|| Error::GeoJson("bbox entry is not a number".into()))?;
    }
    Ok(out)
}

fn parse_position(v: &Value) -> Result<[f64; 2]> {
    let arr = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| Error::GeoJson("position must be [x, y]".into()))?;
    let x = arr[0].as_f64();
    let y = arr[1].as_f64();
    match (x, y) {
        (Some(x), Some(y)) => Ok([x, y]),
        _ => Err(Error::GeoJson("position entries must be numbers".into())),
    }
}
