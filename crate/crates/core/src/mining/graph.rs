use crate::binio::{read_file, write_file};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

pub type ImageId = u32;
pub type PointId = u32;
pub type ClusterId = u32;

/// Pinhole camera. `rotation` is row-major and maps world to camera
/// coordinates: `X_cam = R·(X − center)`; the optical axis is camera `+z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub center: [f64; 3],
    pub rotation: [f64; 9],
    pub focal: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(Error::Geometry(format!("focal {} must be positive", self.focal)));
        }
        if r.iter().chain(&self.center).any(|v| !v.is_finite()) {
            return Err(Error::Geometry("non-finite camera pose".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i * 3 + k] * r[j * 3 + k]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                if (d - e).abs() > 1e-9 {
                    return Err(Error::Geometry("rotation is not orthonormal".into()));
                }
            }
        }
        let det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6])
            + r[2] * (r[3] * r[7] - r[4] * r[6]);
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::Geometry(format!("rotation determinant {det}")));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: &[f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let r = &self.rotation;
        [
            r[0] * d[0] + r[1] * d[1] + r[2] * d[2],
            r[3] * d[0] + r[4] * d[1] + r[5] * d[2],
            r[6] * d[0] + r[7] * d[1] + r[8] * d[2],
        ]
    }

    /// Depth along the optical axis.
    pub fn depth(&self, p: &[f64; 3]) -> f64 {
        self.to_camera(p)[2]
    }

    /// Pixel coordinates with the principal point at `(cx, cy)`; `None` behind the camera.
    pub fn project(&self, p: &[f64; 3], cx: f64, cy: f64) -> Option<(f64, f64)> {
        let c = self.to_camera(p);
        (c[2] > 0.0).then(|| (self.focal * c[0] / c[2] + cx, self.focal * c[1] / c[2] + cy))
    }

    /// Camera looking from `center` at `target`, image `y` pointing along `-up`.
    pub fn look_at(center: [f64; 3], target: [f64; 3], up: [f64; 3], focal: f64) -> Self {
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ]
        };
        let unit = |a: [f64; 3]| {
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            [a[0] / n, a[1] / n, a[2] / n]
        };
        let z = unit(sub(target, center));
        let x = unit(cross(z, up));
        let y = cross(z, x);
        Camera {
            center,
            rotation: [x[0], x[1], x[2], y[0], y[1], y[2], z[0], z[1], z[2]],
            focal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphImage {
    pub id: ImageId,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePoint {
    pub id: PointId,
    pub xyz: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    cluster_id: ClusterId,
    images: Vec<GraphImage>,
    points: Vec<ScenePoint>,
    edges: Vec<(ImageId, PointId)>,
}

/// Bipartite image–point visibility graph of one reconstructed cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct VisibilityGraph {
    cluster_id: ClusterId,
    images: Vec<GraphImage>,
    points: Vec<ScenePoint>,
    edges: Vec<(ImageId, PointId)>,
    image_pos: HashMap<ImageId, usize>,
    point_pos: HashMap<PointId, usize>,
    /// Sorted observed point ids per image position.
    observed: Vec<Vec<PointId>>,
}

impl TryFrom<GraphRecord> for VisibilityGraph {
    type Error = Error;
    fn try_from(r: GraphRecord) -> Result<Self> {
        VisibilityGraph::new(r.cluster_id, r.images, r.points, r.edges)
    }
}

impl From<VisibilityGraph> for GraphRecord {
    fn from(g: VisibilityGraph) -> Self {
        GraphRecord {
            cluster_id: g.cluster_id,
            images: g.images,
            points: g.points,
            edges: g.edges,
        }
    }
}

impl VisibilityGraph {
    pub fn new(
        cluster_id: ClusterId,
        images: Vec<GraphImage>,
        points: Vec<ScenePoint>,
        edges: Vec<(ImageId, PointId)>,
    ) -> Result<Self> {
        let mut image_pos = HashMap::with_capacity(images.len());
        for (i, im) in images.iter().enumerate() {
            im.camera.validate()?;
            if image_pos.insert(im.id, i).is_some() {
                return Err(Error::Graph(format!("duplicate image id {}", im.id)));
            }
        }
        let mut point_pos = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if point_pos.insert(p.id, i).is_some() {
                return Err(Error::Graph(format!("duplicate point id {}", p.id)));
            }
        }
        let mut observed = vec![Vec::new(); images.len()];
        let mut observers = vec![0usize; points.len()];
        for &(i, p) in &edges {
            let ii = *image_pos
                .get(&i)
                .ok_or_else(|| Error::Graph(format!("edge references unknown image {i}")))?;
            let pi = *point_pos
                .get(&p)
                .ok_or_else(|| Error::Graph(format!("edge references unknown point {p}")))?;
            observed[ii].push(p);
            observers[pi] += 1;
        }
        for obs in &mut observed {
            obs.sort_unstable();
            let before = obs.len();
            obs.dedup();
            if obs.len() != before {
                return Err(Error::Graph("duplicate edge".into()));
            }
        }
        if let Some(pi) = observers.iter().position(|&c| c < 2) {
            return Err(Error::Graph(format!(
                "point {} observed by {} image(s)",
                points[pi].id, observers[pi]
            )));
        }
        Ok(VisibilityGraph {
            cluster_id,
            images,
            points,
            edges,
            image_pos,
            point_pos,
            observed,
        })
    }

    pub fn cluster_id(&self) -> ClusterId {
        self.cluster_id
    }

    pub fn images(&self) -> &[GraphImage] {
        &self.images
    }

    pub fn points(&self) -> &[ScenePoint] {
        &self.points
    }

    pub fn edges(&self) -> &[(ImageId, PointId)] {
        &self.edges
    }

    pub fn image_ids(&self) -> Vec<ImageId> {
        self.images.iter().map(|im| im.id).collect()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn contains(&self, id: ImageId) -> bool {
        self.image_pos.contains_key(&id)
    }

    pub fn camera(&self, id: ImageId) -> Result<&Camera> {
        self.image_pos
            .get(&id)
            .map(|&i| &self.images[i].camera)
            .ok_or(Error::UnknownImage(id))
    }

    pub fn point(&self, id: PointId) -> Option<&[f64; 3]> {
        self.point_pos.get(&id).map(|&i| &self.points[i].xyz)
    }

    /// Sorted ids of the points observed by `id`.
    pub fn observed(&self, id: ImageId) -> Result<&[PointId]> {
        self.image_pos
            .get(&id)
            .map(|&i| self.observed[i].as_slice())
            .ok_or(Error::UnknownImage(id))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json().as_bytes())
    }
}

/// Image → cluster lookup across a set of graphs.
pub fn cluster_index(graphs: &[VisibilityGraph]) -> BTreeMap<ImageId, ClusterId> {
    graphs
        .iter()
        .flat_map(|g| g.images().iter().map(move |im| (im.id, g.cluster_id())))
        .collect()
}
