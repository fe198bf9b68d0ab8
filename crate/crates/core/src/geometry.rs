//! Domains, structured triangulations, collocation node clouds and the
//! "imaginary" triangulations laid over node clouds for error quadrature.

use std::collections::HashMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Distance within which a point counts as lying on a boundary segment.
pub const ON_BOUNDARY_TOL: f64 = 1e-12;

const MAX_RANDOM_ATTEMPTS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainShape {
    /// (0,1)²
    UnitSquare,
    /// (0,1)² with the quadrant [0.5,1)² removed.
    LShape,
    /// (-1,1)²
    BiUnitSquare,
}

impl DomainShape {
    /// Polygon corners in counter-clockwise order.
    pub fn vertices(self) -> Vec<Point> {
        match self {
            DomainShape::UnitSquare => vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            DomainShape::LShape => vec![
                [0.0, 0.0],
                [1.0, 0.0],
                [1.0, 0.5],
                [0.5, 0.5],
                [0.5, 1.0],
                [0.0, 1.0],
            ],
            DomainShape::BiUnitSquare => vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]],
        }
    }

    pub fn edges(self) -> Vec<Segment> {
        let v = self.vertices();
        (0..v.len())
            .map(|i| Segment::new(v[i], v[(i + 1) % v.len()]))
            .collect()
    }

    pub fn area(self) -> f64 {
        match self {
            DomainShape::UnitSquare => 1.0,
            DomainShape::LShape => 0.75,
            DomainShape::BiUnitSquare => 4.0,
        }
    }

    /// Lower-left and upper-right corners of the bounding box.
    pub fn bounds(self) -> (Point, Point) {
        match self {
            DomainShape::UnitSquare | DomainShape::LShape => ([0.0, 0.0], [1.0, 1.0]),
            DomainShape::BiUnitSquare => ([-1.0, -1.0], [1.0, 1.0]),
        }
    }

    /// Closed-domain membership (boundary included, within tolerance).
    pub fn contains(self, p: Point) -> bool {
        let (lo, hi) = self.bounds();
        let tol = ON_BOUNDARY_TOL;
        let in_box = p[0] >= lo[0] - tol && p[0] <= hi[0] + tol && p[1] >= lo[1] - tol && p[1] <= hi[1] + tol;
        match self {
            DomainShape::LShape => in_box && !(p[0] > 0.5 + tol && p[1] > 0.5 + tol),
            _ => in_box,
        }
    }

    /// Open-domain membership: inside and not on the boundary.
    pub fn contains_strict(self, p: Point) -> bool {
        self.contains(p) && !self.edges().iter().any(|s| s.contains(p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Point,
    pub end: Point,
}

impl Segment {
    pub fn new(start: Point, end: Point) -> Self {
        Self { start, end }
    }

    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).hypot(self.end[1] - self.start[1])
    }

    /// Outward unit normal, assuming the segment runs counter-clockwise
    /// around the domain.
    pub fn normal(&self) -> Point {
        let len = self.length();
        [
            (self.end[1] - self.start[1]) / len,
            -(self.end[0] - self.start[0]) / len,
        ]
    }

    /// Arc-length parameter of the projection of `p`, in [0, 1] on the segment.
    pub fn parameter(&self, p: Point) -> f64 {
        let d = [self.end[0] - self.start[0], self.end[1] - self.start[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        ((p[0] - self.start[0]) * d[0] + (p[1] - self.start[1]) * d[1]) / len2
    }

    pub fn distance(&self, p: Point) -> f64 {
        let t = self.parameter(p).clamp(0.0, 1.0);
        let q = [
            self.start[0] + t * (self.end[0] - self.start[0]),
            self.start[1] + t * (self.end[1] - self.start[1]),
        ];
        (p[0] - q[0]).hypot(p[1] - q[1])
    }

    pub fn contains(&self, p: Point) -> bool {
        self.distance(p) <= ON_BOUNDARY_TOL
    }

    pub fn is_endpoint(&self, p: Point) -> bool {
        dist(p, self.start) <= ON_BOUNDARY_TOL || dist(p, self.end) <= ON_BOUNDARY_TOL
    }

    fn same_edge(&self, other: &Segment) -> bool {
        (dist(self.start, other.start) <= ON_BOUNDARY_TOL && dist(self.end, other.end) <= ON_BOUNDARY_TOL)
            || (dist(self.start, other.end) <= ON_BOUNDARY_TOL && dist(self.end, other.start) <= ON_BOUNDARY_TOL)
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeTag {
    Interior,
    Dirichlet,
    Neumann,
}

/// A computational domain together with its boundary-condition partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub shape: DomainShape,
    pub dirichlet_segments: Vec<Segment>,
    pub neumann_segments: Vec<Segment>,
}

impl DomainSpec {
    /// Assigns a boundary kind to every polygon edge of `shape`, in
    /// counter-clockwise order starting from the edge leaving the lower-left
    /// corner.
    pub fn with_edge_kinds(shape: DomainShape, kinds: &[BoundaryKind]) -> Result<Self> {
        let edges = shape.edges();
        if kinds.len() != edges.len() {
            return Err(Error::InvalidCase(format!(
                "{:?} has {} edges, got {} boundary kinds",
                shape,
                edges.len(),
                kinds.len()
            )));
        }
        let mut spec = DomainSpec {
            shape,
            dirichlet_segments: Vec::new(),
            neumann_segments: Vec::new(),
        };
        for (edge, kind) in edges.into_iter().zip(kinds) {
            match kind {
                BoundaryKind::Dirichlet => spec.dirichlet_segments.push(edge),
                BoundaryKind::Neumann => spec.neumann_segments.push(edge),
            }
        }
        Ok(spec)
    }

    pub fn all_dirichlet(shape: DomainShape) -> Self {
        let edges = shape.edges();
        DomainSpec {
            shape,
            dirichlet_segments: edges,
            neumann_segments: Vec::new(),
        }
    }

    pub fn unit_square_dirichlet() -> Self {
        Self::all_dirichlet(DomainShape::UnitSquare)
    }

    pub fn bi_unit_square_dirichlet() -> Self {
        Self::all_dirichlet(DomainShape::BiUnitSquare)
    }

    /// L-shape with Dirichlet data on x = 0 and y = 0, Neumann elsewhere.
    pub fn l_shape_mixed() -> Self {
        use BoundaryKind::*;
        Self::with_edge_kinds(
            DomainShape::LShape,
            &[Dirichlet, Neumann, Neumann, Neumann, Neumann, Dirichlet],
        )
        .expect("six edges")
    }

    /// L-shape with a natural (traction-free) outflow on x = 1, Dirichlet elsewhere.
    pub fn l_shape_outflow() -> Self {
        use BoundaryKind::*;
        Self::with_edge_kinds(
            DomainShape::LShape,
            &[Dirichlet, Neumann, Dirichlet, Dirichlet, Dirichlet, Dirichlet],
        )
        .expect("six edges")
    }

    pub fn area(&self) -> f64 {
        self.shape.area()
    }

    /// Checks that the segment lists partition the polygon boundary.
    pub fn validate(&self) -> Result<()> {
        let all: Vec<&Segment> = self.dirichlet_segments.iter().chain(&self.neumann_segments).collect();
        for edge in self.shape.edges() {
            let hits = all.iter().filter(|s| s.same_edge(&edge)).count();
            if hits != 1 {
                return Err(Error::InvalidCase(format!(
                    "boundary edge {:?}-{:?} covered {} times",
                    edge.start, edge.end, hits
                )));
            }
        }
        if all.len() != self.shape.edges().len() {
            return Err(Error::InvalidCase("segment list contains non-boundary segments".into()));
        }
        Ok(())
    }

    pub fn segments(&self) -> impl Iterator<Item = (&Segment, BoundaryKind)> {
        self.dirichlet_segments
            .iter()
            .map(|s| (s, BoundaryKind::Dirichlet))
            .chain(self.neumann_segments.iter().map(|s| (s, BoundaryKind::Neumann)))
    }

    pub fn on_boundary(&self, p: Point) -> bool {
        self.segments().any(|(s, _)| s.contains(p))
    }

    /// True on the closed Dirichlet boundary, mixed corners included. Galerkin
    /// assembly constrains these nodes whatever their tag.
    pub fn on_dirichlet(&self, p: Point) -> bool {
        self.dirichlet_segments.iter().any(|s| s.contains(p))
    }

    /// Boundary tag of a point. A point shared by a Dirichlet and a Neumann
    /// segment is tagged Neumann, which reproduces the node counts of the
    /// mixed L-shape benchmark.
    pub fn tag(&self, p: Point) -> NodeTag {
        let mut tag = NodeTag::Interior;
        for (s, kind) in self.segments() {
            if s.contains(p) {
                match kind {
                    BoundaryKind::Neumann => return NodeTag::Neumann,
                    BoundaryKind::Dirichlet => tag = NodeTag::Dirichlet,
                }
            }
        }
        tag
    }

    /// Normal used for flux rows at a Neumann-tagged point: the normal of the
    /// Neumann segment through it, or the normalized bisector of two Neumann
    /// segments meeting at a corner.
    pub fn neumann_normal(&self, p: Point) -> Result<Point> {
        let mut acc = [0.0, 0.0];
        let mut hits = 0;
        for s in self.neumann_segments.iter().filter(|s| s.contains(p)) {
            let n = s.normal();
            acc[0] += n[0];
            acc[1] += n[1];
            hits += 1;
        }
        if hits == 0 {
            return boundary_normal(self, p);
        }
        let len = acc[0].hypot(acc[1]);
        Ok([acc[0] / len, acc[1] / len])
    }
}

/// Outward unit normal of the boundary segment containing `p`.
pub fn boundary_normal(domain: &DomainSpec, p: Point) -> Result<Point> {
    let hits: Vec<&Segment> = domain.segments().map(|(s, _)| s).filter(|s| s.contains(p)).collect();
    match hits.as_slice() {
        [] => Err(Error::NotOnBoundary(p)),
        [s] if !s.is_endpoint(p) => Ok(s.normal()),
        _ => Err(Error::NormalAmbiguous(p)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub domain: DomainSpec,
    pub nodes: Vec<Point>,
    /// Node indices per triangle: three vertices (counter-clockwise), followed
    /// for order 2 by the midpoints of edges 0-1, 1-2 and 2-0.
    pub triangles: Vec<Vec<usize>>,
    pub node_tags: Vec<NodeTag>,
    pub order: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TagCounts {
    pub interior: usize,
    pub dirichlet: usize,
    pub neumann: usize,
}

fn count_tags(tags: &[NodeTag]) -> TagCounts {
    let mut c = TagCounts::default();
    for t in tags {
        match t {
            NodeTag::Interior => c.interior += 1,
            NodeTag::Dirichlet => c.dirichlet += 1,
            NodeTag::Neumann => c.neumann += 1,
        }
    }
    c
}

impl TriMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self, e: usize) -> [Point; 3] {
        let t = &self.triangles[e];
        [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]]
    }

    pub fn signed_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.vertices(e);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|e| self.signed_area(e).abs()).sum()
    }

    pub fn tag_counts(&self) -> TagCounts {
        count_tags(&self.node_tags)
    }

    /// Indices of the corner (order-1) nodes, in first-use order.
    pub fn vertex_nodes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n_nodes()];
        let mut out = Vec::new();
        for t in &self.triangles {
            for &v in &t[..3] {
                if !seen[v] {
                    seen[v] = true;
                    out.push(v);
                }
            }
        }
        out
    }

    /// Plot/debug dump: `{nodes, triangles, tags}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nodes": self.nodes,
            "triangles": self.triangles,
            "tags": self.node_tags,
            "order": self.order,
        })
    }
}

fn grid_divisions(domain: &DomainSpec, spacing: f64) -> Result<usize> {
    if !(spacing > 0.0) {
        return Err(Error::NonConformingSpacing { spacing });
    }
    let (lo, hi) = domain.shape.bounds();
    let side = hi[0] - lo[0];
    let n = (side / spacing).round();
    if n < 1.0 || (n * spacing - side).abs() > 1e-9 * side {
        return Err(Error::NonConformingSpacing { spacing });
    }
    let n = n as usize;
    if domain.shape == DomainShape::LShape && !n.is_multiple_of(2) {
        return Err(Error::NonConformingSpacing { spacing });
    }
    Ok(n)
}

/// Uniform triangulation with cells split along the lower-left to
/// upper-right diagonal.
pub fn build_structured_mesh(domain: &DomainSpec, spacing: f64, order: usize) -> Result<TriMesh> {
    if order != 1 && order != 2 {
        return Err(Error::InvalidCase(format!("element order {order} not supported")));
    }
    domain.validate()?;
    let n = grid_divisions(domain, spacing)?;
    let (lo, hi) = domain.shape.bounds();
    let m = n * order;
    let coord = |i: usize, j: usize| -> Point {
        [
            lo[0] + (hi[0] - lo[0]) * i as f64 / m as f64,
            lo[1] + (hi[1] - lo[1]) * j as f64 / m as f64,
        ]
    };

    let mut index = vec![usize::MAX; (m + 1) * (m + 1)];
    let mut nodes = Vec::new();
    for j in 0..=m {
        for i in 0..=m {
            let p = coord(i, j);
            if domain.shape.contains(p) {
                index[j * (m + 1) + i] = nodes.len();
                nodes.push(p);
            }
        }
    }
    let at = |i: usize, j: usize| index[j * (m + 1) + i];

    let mut triangles = Vec::with_capacity(2 * n * n);
    for cj in 0..n {
        for ci in 0..n {
            let centre = [
                lo[0] + (hi[0] - lo[0]) * (ci as f64 + 0.5) / n as f64,
                lo[1] + (hi[1] - lo[1]) * (cj as f64 + 0.5) / n as f64,
            ];
            if !domain.shape.contains_strict(centre) {
                continue;
            }
            let (i0, j0, o) = (ci * order, cj * order, order);
            let a = (i0, j0);
            let b = (i0 + o, j0);
            let c = (i0 + o, j0 + o);
            let d = (i0, j0 + o);
            for [p, q, r] in [[a, b, c], [a, c, d]] {
                let mut tri = vec![at(p.0, p.1), at(q.0, q.1), at(r.0, r.1)];
                if order == 2 {
                    let mid = |u: (usize, usize), v: (usize, usize)| at((u.0 + v.0) / 2, (u.1 + v.1) / 2);
                    tri.extend([mid(p, q), mid(q, r), mid(r, p)]);
                }
                triangles.push(tri);
            }
        }
    }

    let node_tags = nodes.iter().map(|&p| domain.tag(p)).collect();
    Ok(TriMesh {
        domain: domain.clone(),
        nodes,
        triangles,
        node_tags,
        order,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CloudLayout {
    /// Points coincide with the order-1 structured mesh nodes.
    Uniform,
    /// Uniform boundary points with seeded random interior points.
    Random { seed: u64 },
    /// Arbitrary user-supplied points.
    Scattered,
}

/// Collocation points (and RBF centres), grouped by boundary tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeCloud {
    pub domain: DomainSpec,
    pub spacing: f64,
    pub layout: CloudLayout,
    pub interior: Vec<Point>,
    pub dirichlet: Vec<Point>,
    pub neumann: Vec<Point>,
}

impl NodeCloud {
    /// Builds a scattered cloud, tagging each point from the domain boundary.
    pub fn from_points(domain: &DomainSpec, points: &[Point]) -> Self {
        let mut cloud = NodeCloud {
            domain: domain.clone(),
            spacing: f64::NAN,
            layout: CloudLayout::Scattered,
            interior: Vec::new(),
            dirichlet: Vec::new(),
            neumann: Vec::new(),
        };
        for &p in points {
            match domain.tag(p) {
                NodeTag::Interior => cloud.interior.push(p),
                NodeTag::Dirichlet => cloud.dirichlet.push(p),
                NodeTag::Neumann => cloud.neumann.push(p),
            }
        }
        cloud
    }

    pub fn len(&self) -> usize {
        self.interior.len() + self.dirichlet.len() + self.neumann.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All points in collocation order: Dirichlet, Neumann, interior.
    pub fn points(&self) -> Vec<Point> {
        self.dirichlet
            .iter()
            .chain(&self.neumann)
            .chain(&self.interior)
            .copied()
            .collect()
    }

    pub fn tags(&self) -> Vec<NodeTag> {
        std::iter::repeat_n(NodeTag::Dirichlet, self.dirichlet.len())
            .chain(std::iter::repeat_n(NodeTag::Neumann, self.neumann.len()))
            .chain(std::iter::repeat_n(NodeTag::Interior, self.interior.len()))
            .collect()
    }

    pub fn counts(&self) -> TagCounts {
        TagCounts {
            interior: self.interior.len(),
            dirichlet: self.dirichlet.len(),
            neumann: self.neumann.len(),
        }
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let pts = self.points();
        let mut best = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                best = best.min(dist(pts[i], pts[j]));
            }
        }
        best
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nodes": self.points(),
            "triangles": Vec::<Vec<usize>>::new(),
            "tags": self.tags(),
        })
    }
}

pub fn build_node_cloud(domain: &DomainSpec, spacing: f64) -> Result<NodeCloud> {
    let mesh = build_structured_mesh(domain, spacing, 1)?;
    let mut cloud = NodeCloud {
        domain: domain.clone(),
        spacing,
        layout: CloudLayout::Uniform,
        interior: Vec::new(),
        dirichlet: Vec::new(),
        neumann: Vec::new(),
    };
    for (&p, tag) in mesh.nodes.iter().zip(&mesh.node_tags) {
        match tag {
            NodeTag::Interior => cloud.interior.push(p),
            NodeTag::Dirichlet => cloud.dirichlet.push(p),
            NodeTag::Neumann => cloud.neumann.push(p),
        }
    }
    Ok(cloud)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomCloudConfig {
    pub seed: u64,
    /// Minimum distance between any two points; `None` means 0.25·δh.
    pub min_separation: Option<f64>,
}

impl RandomCloudConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            min_separation: None,
        }
    }
}

/// Uniform-cloud boundary points plus the same number of interior points
/// drawn uniformly inside the domain by seeded rejection sampling.
pub fn build_random_cloud(domain: &DomainSpec, spacing: f64, cfg: RandomCloudConfig) -> Result<NodeCloud> {
    let uniform = build_node_cloud(domain, spacing)?;
    let requested = uniform.interior.len();
    let min_sep = cfg.min_separation.unwrap_or(0.25 * spacing);
    let (lo, hi) = domain.shape.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let fixed: Vec<Point> = uniform.dirichlet.iter().chain(&uniform.neumann).copied().collect();
    let mut interior: Vec<Point> = Vec::with_capacity(requested);
    let mut attempts = 0;
    while interior.len() < requested {
        if attempts >= MAX_RANDOM_ATTEMPTS {
            return Err(Error::SeparationUnsatisfiable {
                placed: interior.len(),
                requested,
                min_separation: min_sep,
                attempts,
            });
        }
        attempts += 1;
        let p = [
            lo[0] + (hi[0] - lo[0]) * rng.random::<f64>(),
            lo[1] + (hi[1] - lo[1]) * rng.random::<f64>(),
        ];
        if !domain.shape.contains_strict(p) {
            continue;
        }
        if fixed.iter().chain(&interior).any(|&q| dist(p, q) < min_sep) {
            continue;
        }
        interior.push(p);
    }

    Ok(NodeCloud {
        layout: CloudLayout::Random { seed: cfg.seed },
        interior,
        ..uniform
    })
}

/// Triangulates a node cloud for quadrature. Uniform clouds reproduce the
/// structured order-1 connectivity; other clouds get a constrained Delaunay
/// triangulation with boundary edges enforced and triangles outside the
/// domain discarded. Node indices follow [`NodeCloud::points`].
pub fn triangulate_cloud(cloud: &NodeCloud) -> Result<TriMesh> {
    let points = cloud.points();
    if points.len() < 3 {
        return Err(Error::DegenerateCloud(format!("{} points", points.len())));
    }
    let triangles = match cloud.layout {
        CloudLayout::Uniform => structured_connectivity(cloud, &points)?,
        _ => delaunay_connectivity(cloud, &points)?,
    };
    let mesh = TriMesh {
        domain: cloud.domain.clone(),
        nodes: points,
        triangles,
        node_tags: cloud.tags(),
        order: 1,
    };
    let scale = mesh
        .nodes
        .iter()
        .fold(0.0_f64, |m, p| m.max(p[0].abs()).max(p[1].abs()))
        .max(1.0);
    for e in 0..mesh.n_triangles() {
        if mesh.signed_area(e) <= 1e-14 * scale * scale {
            return Err(Error::DegenerateCloud(format!("triangle {e} has zero area")));
        }
    }
    if mesh.triangles.is_empty() {
        return Err(Error::DegenerateCloud("no triangles inside the domain".into()));
    }
    Ok(mesh)
}

fn key(p: Point) -> (i64, i64) {
    ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64)
}

fn structured_connectivity(cloud: &NodeCloud, points: &[Point]) -> Result<Vec<Vec<usize>>> {
    let mesh = build_structured_mesh(&cloud.domain, cloud.spacing, 1)?;
    let lookup: HashMap<(i64, i64), usize> = points.iter().enumerate().map(|(i, &p)| (key(p), i)).collect();
    let remap: Vec<usize> = mesh
        .nodes
        .iter()
        .map(|&p| {
            lookup
                .get(&key(p))
                .copied()
                .ok_or_else(|| Error::DegenerateCloud(format!("mesh node {p:?} missing from cloud")))
        })
        .collect::<Result<_>>()?;
    Ok(mesh
        .triangles
        .iter()
        .map(|t| t.iter().map(|&v| remap[v]).collect())
        .collect())
}

fn delaunay_connectivity(cloud: &NodeCloud, points: &[Point]) -> Result<Vec<Vec<usize>>> {
    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> = ConstrainedDelaunayTriangulation::new();
    let mut handles = Vec::with_capacity(points.len());
    for &p in points {
        let h = cdt
            .insert(Point2::new(p[0], p[1]))
            .map_err(|e| Error::DegenerateCloud(format!("{e:?}")))?;
        handles.push(h);
    }
    if cdt.num_vertices() != points.len() {
        return Err(Error::DegenerateCloud("coincident points".into()));
    }
    let mut owner = vec![usize::MAX; points.len()];
    for (i, h) in handles.iter().enumerate() {
        owner[h.index()] = i;
    }

    // Chain the boundary points of each segment in order and pin the chain
    // edges so no triangle straddles the boundary.
    for (seg, _) in cloud.domain.segments() {
        let mut on: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|(_, &p)| seg.contains(p))
            .map(|(i, &p)| (seg.parameter(p), i))
            .collect();
        on.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in on.windows(2) {
            let (a, b) = (handles[w[0].1], handles[w[1].1]);
            if cdt.can_add_constraint(a, b) {
                cdt.add_constraint(a, b);
            }
        }
    }

    let shape = cloud.domain.shape;
    let mut triangles = Vec::new();
    for face in cdt.inner_faces() {
        let vs = face.vertices();
        let mut tri = [
            owner[vs[0].fix().index()],
            owner[vs[1].fix().index()],
            owner[vs[2].fix().index()],
        ];
        let [a, b, c] = tri.map(|i| points[i]);
        let centroid = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
        if !shape.contains_strict(centroid) {
            continue;
        }
        let area2 = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if area2 < 0.0 {
            tri.swap(1, 2);
        }
        triangles.push(tri.to_vec());
    }
    Ok(triangles)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_quarter_counts() {
        let d = DomainSpec::unit_square_dirichlet();
        let m1 = build_structured_mesh(&d, 0.25, 1).unwrap();
        let c = m1.tag_counts();
        assert_eq!((c.interior, c.dirichlet, c.neumann), (9, 16, 0));
        assert_eq!(m1.n_triangles(), 32);

        let m2 = build_structured_mesh(&d, 0.25, 2).unwrap();
        let c = m2.tag_counts();
        assert_eq!(m2.n_nodes(), 81);
        assert_eq!((c.interior, c.dirichlet), (49, 32));
        assert_eq!(m2.n_triangles(), 32);
    }

    #[test]
    fn structured_counts_follow_closed_forms() {
        let d = DomainSpec::unit_square_dirichlet();
        for n in [4usize, 8, 16, 32] {
            let m = build_structured_mesh(&d, 1.0 / n as f64, 1).unwrap();
            assert_eq!(m.tag_counts().interior, (n - 1) * (n - 1));
            assert_eq!(m.n_triangles(), 2 * n * n);
            assert!((m.total_area() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn l_shape_counts_match_tables() {
        let d = DomainSpec::l_shape_mixed();
        let m = build_structured_mesh(&d, 0.25, 1).unwrap();
        let c = m.tag_counts();
        assert_eq!((c.interior, c.dirichlet, c.neumann), (5, 7, 9));
        assert_eq!(m.n_triangles(), 24);
        assert!((m.total_area() - 0.75).abs() < 1e-12);

        let expected = [(8, 33, 15, 17, 96), (16, 161, 31, 33, 384), (32, 705, 63, 65, 1536)];
        for (n, i, dd, nn, e) in expected {
            let m = build_structured_mesh(&d, 1.0 / n as f64, 1).unwrap();
            let c = m.tag_counts();
            assert_eq!((c.interior, c.dirichlet, c.neumann, m.n_triangles()), (i, dd, nn, e));
        }

        let m2 = build_structured_mesh(&d, 0.25, 2).unwrap();
        let c = m2.tag_counts();
        assert_eq!((c.interior, c.dirichlet, c.neumann), (33, 15, 17));
    }

    #[test]
    fn bi_unit_square_area() {
        let d = DomainSpec::bi_unit_square_dirichlet();
        let m = build_structured_mesh(&d, 0.5, 2).unwrap();
        assert!((m.total_area() - 4.0).abs() < 1e-12);
        assert_eq!(m.n_nodes(), 81);
    }

    #[test]
    fn triangles_are_positively_oriented() {
        for d in [DomainSpec::l_shape_mixed(), DomainSpec::bi_unit_square_dirichlet()] {
            for order in [1, 2] {
                let m = build_structured_mesh(&d, 0.25, order).unwrap();
                assert!((0..m.n_triangles()).all(|e| m.signed_area(e) > 0.0));
            }
        }
    }

    #[test]
    fn boundary_edges_belong_to_one_triangle() {
        let d = DomainSpec::l_shape_mixed();
        let m = build_structured_mesh(&d, 0.125, 1).unwrap();
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &m.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        for ((a, b), n) in count {
            let mid = [(m.nodes[a][0] + m.nodes[b][0]) / 2.0, (m.nodes[a][1] + m.nodes[b][1]) / 2.0];
            if d.on_boundary(mid) {
                assert_eq!(n, 1);
            } else {
                assert_eq!(n, 2);
            }
        }
    }

    #[test]
    fn non_conforming_spacing_rejected() {
        let d = DomainSpec::unit_square_dirichlet();
        assert!(matches!(build_structured_mesh(&d, 0.3, 1), Err(Error::NonConformingSpacing { .. })));
        let l = DomainSpec::l_shape_mixed();
        assert!(matches!(build_structured_mesh(&l, 1.0 / 3.0, 1), Err(Error::NonConformingSpacing { .. })));
        assert!(matches!(build_node_cloud(&l, 0.0), Err(Error::NonConformingSpacing { .. })));
    }

    #[test]
    fn uniform_cloud_counts() {
        let d = DomainSpec::unit_square_dirichlet();
        let c = build_node_cloud(&d, 0.25).unwrap();
        assert_eq!(c.len(), 25);
        assert_eq!((c.interior.len(), c.dirichlet.len()), (9, 16));
        let c = build_node_cloud(&d, 1.0 / 32.0).unwrap();
        assert_eq!((c.interior.len(), c.dirichlet.len()), (961, 128));
        let l = build_node_cloud(&DomainSpec::l_shape_mixed(), 0.125).unwrap();
        assert_eq!(
            (l.interior.len(), l.dirichlet.len(), l.neumann.len()),
            (33, 15, 17)
        );
    }

    #[test]
    fn random_cloud_contract() {
        let d = DomainSpec::l_shape_mixed();
        let a = build_random_cloud(&d, 0.125, RandomCloudConfig::new(1)).unwrap();
        assert_eq!(a.interior.len(), 33);
        assert!(a.interior.iter().all(|&p| d.shape.contains_strict(p)));
        let uniform = build_node_cloud(&d, 0.125).unwrap();
        assert_eq!(a.dirichlet, uniform.dirichlet);
        assert_eq!(a.neumann, uniform.neumann);
        assert!(a.min_pairwise_distance() >= 0.25 * 0.125);

        let again = build_random_cloud(&d, 0.125, RandomCloudConfig::new(1)).unwrap();
        assert_eq!(a, again);
        let other = build_random_cloud(&d, 0.125, RandomCloudConfig::new(2)).unwrap();
        assert_ne!(a.interior, other.interior);
    }

    #[test]
    fn random_cloud_gives_up() {
        let d = DomainSpec::unit_square_dirichlet();
        let cfg = RandomCloudConfig {
            seed: 3,
            min_separation: Some(0.9),
        };
        assert!(matches!(
            build_random_cloud(&d, 0.25, cfg),
            Err(Error::SeparationUnsatisfiable { .. })
        ));
    }

    #[test]
    fn uniform_cloud_triangulation_matches_structured_mesh() {
        let d = DomainSpec::unit_square_dirichlet();
        let cloud = build_node_cloud(&d, 0.25).unwrap();
        let im = triangulate_cloud(&cloud).unwrap();
        assert_eq!(im.n_triangles(), 32);
        let mesh = build_structured_mesh(&d, 0.25, 1).unwrap();
        let tri_coords = |m: &TriMesh| {
            let mut v: Vec<Vec<(i64, i64)>> = m
                .triangles
                .iter()
                .map(|t| t.iter().map(|&i| key(m.nodes[i])).collect())
                .collect();
            v.sort();
            v
        };
        assert_eq!(tri_coords(&im), tri_coords(&mesh));
    }

    #[test]
    fn three_points_one_triangle() {
        let d = DomainSpec::unit_square_dirichlet();
        let cloud = NodeCloud::from_points(&d, &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let m = triangulate_cloud(&cloud).unwrap();
        assert_eq!(m.n_triangles(), 1);
        assert!(m.signed_area(0) > 0.0);
    }

    #[test]
    fn collinear_cloud_is_degenerate() {
        let d = DomainSpec::unit_square_dirichlet();
        let cloud = NodeCloud::from_points(&d, &[[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]]);
        assert!(matches!(triangulate_cloud(&cloud), Err(Error::DegenerateCloud(_))));
    }

    #[test]
    fn random_l_shape_triangulation_avoids_notch() {
        let d = DomainSpec::l_shape_mixed();
        for seed in 1..4 {
            let cloud = build_random_cloud(&d, 0.125, RandomCloudConfig::new(seed)).unwrap();
            let m = triangulate_cloud(&cloud).unwrap();
            for e in 0..m.n_triangles() {
                let [a, b, c] = m.vertices(e);
                let g = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
                assert!(!(g[0] > 0.5 && g[1] > 0.5), "centroid {g:?} in the cut-out");
                assert!(m.signed_area(e) > 0.0);
            }
            assert!((m.total_area() - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn normals() {
        let sq = DomainSpec::unit_square_dirichlet();
        assert_eq!(boundary_normal(&sq, [1.0, 0.5]).unwrap(), [1.0, 0.0]);
        assert!(matches!(boundary_normal(&sq, [0.5, 0.5]), Err(Error::NotOnBoundary(_))));
        assert!(matches!(boundary_normal(&sq, [1.0, 1.0]), Err(Error::NormalAmbiguous(_))));
        let l = DomainSpec::l_shape_mixed();
        assert_eq!(boundary_normal(&l, [0.75, 0.5]).unwrap(), [0.0, 1.0]);
        assert_eq!(boundary_normal(&l, [0.5, 0.75]).unwrap(), [1.0, 0.0]);
        assert_eq!(boundary_normal(&l, [0.0, 0.3]).unwrap(), [-1.0, 0.0]);
    }

    #[test]
    fn every_neumann_node_has_a_normal() {
        let l = DomainSpec::l_shape_mixed();
        let m = build_structured_mesh(&l, 0.125, 2).unwrap();
        for (p, t) in m.nodes.iter().zip(&m.node_tags) {
            if *t == NodeTag::Neumann {
                let n = l.neumann_normal(*p).unwrap();
                assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-14);
            }
        }
        // Mixed corner takes the Neumann edge normal.
        assert_eq!(l.neumann_normal([1.0, 0.0]).unwrap(), [1.0, 0.0]);
    }

    #[test]
    fn domain_validation() {
        assert!(DomainSpec::l_shape_outflow().validate().is_ok());
        let mut bad = DomainSpec::unit_square_dirichlet();
        bad.neumann_segments.push(bad.dirichlet_segments[0]);
        assert!(bad.validate().is_err());
    }
}
