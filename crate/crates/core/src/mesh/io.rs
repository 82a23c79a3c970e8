//! Plain-text mesh snapshots: a `dim M N` header, `M` coordinate lines,
//! `N` element lines (0-based vertex indices) and `M` boundary marker lines.

use std::fmt::Write as _;
use std::sync::Arc;

use super::{Boundary, BoxDomain, SimplicialMesh, Topology};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn write_snapshot<T: Real, const D: usize>(mesh: &SimplicialMesh<T, D>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {} {}", D, mesh.n_vertices(), mesh.n_elements());
    for v in mesh.vertices() {
        let coords: Vec<String> = v.iter().map(|c| format!("{:e}", c.to_f64_lossy())).collect();
        let _ = writeln!(s, "{}", coords.join(" "));
    }
    for k in 0..mesh.n_elements() {
        let ids: Vec<String> = mesh.element(k).iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "{}", ids.join(" "));
    }
    for b in mesh.topology().boundary_markers() {
        let _ = match b {
            Boundary::Interior => writeln!(s, "interior"),
            Boundary::Edge(id) => writeln!(s, "edge {id}"),
            Boundary::Corner => writeln!(s, "corner"),
        };
    }
    s
}

/// Parses a snapshot. The domain is the bounding box of the vertices.
pub fn read_snapshot<T: Real, const D: usize>(text: &str) -> Result<SimplicialMesh<T, D>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let bad = |what: &str| Error::Parse(what.to_string());
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("missing header"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("header must be `dim M N`")))
        .collect::<Result<_>>()?;
    let [dim, m, n] = header[..] else { return Err(bad("header must be `dim M N`")) };
    if dim != D {
        return Err(Error::Parse(format!("snapshot has dimension {dim}, expected {D}")));
    }
    let mut vertices = Vec::with_capacity(m);
    for _ in 0..m {
        let line = lines.next().ok_or_else(|| bad("truncated vertex block"))?;
        let mut p = [T::zero(); D];
        let mut it = line.split_whitespace();
        for c in p.iter_mut() {
            let v: f64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad coordinate"))?;
            *c = T::lit(v);
        }
        vertices.push(p);
    }
    let mut elements = Vec::with_capacity(n * (D + 1));
    for _ in 0..n {
        let line = lines.next().ok_or_else(|| bad("truncated element block"))?;
        let ids: Vec<usize> =
            line.split_whitespace().map(|t| t.parse().map_err(|_| bad("bad vertex index"))).collect::<Result<_>>()?;
        if ids.len() != D + 1 {
            return Err(bad("element line must list d+1 vertices"));
        }
        elements.extend(ids);
    }
    let mut boundary = Vec::with_capacity(m);
    for _ in 0..m {
        let line = lines.next().ok_or_else(|| bad("truncated boundary block"))?;
        let mut it = line.split_whitespace();
        boundary.push(match (it.next(), it.next()) {
            (Some("interior"), None) => Boundary::Interior,
            (Some("corner"), None) => Boundary::Corner,
            (Some("edge"), Some(id)) => Boundary::Edge(id.parse().map_err(|_| bad("bad edge id"))?),
            _ => return Err(Error::Parse(format!("bad boundary marker `{line}`"))),
        });
    }
    let mut lo = [T::infinity(); D];
    let mut hi = [T::neg_infinity(); D];
    for v in &vertices {
        for a in 0..D {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    let domain = BoxDomain::new(lo, hi)?;
    let topology = Topology::new(&vertices, elements, boundary, &domain.lo, &domain.hi)?;
    SimplicialMesh::from_parts(Arc::new(topology), vertices, domain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_2d() {
        let d = BoxDomain::new([-0.5, -0.5], [1.0, 1.0]).unwrap();
        let mesh = SimplicialMesh::<f64, 2>::uniform(d, [4, 3]).unwrap();
        let text = write_snapshot(&mesh);
        assert!(text.starts_with("2 12 12\n"));
        let back: SimplicialMesh<f64, 2> = read_snapshot(&text).unwrap();
        assert_eq!(back.vertices(), mesh.vertices());
        assert!(back.same_connectivity(&mesh));
        assert_eq!(back.topology().boundary_markers(), mesh.topology().boundary_markers());
    }

    #[test]
    fn rejects_wrong_dimension() {
        let mesh = SimplicialMesh::<f64, 1>::uniform(BoxDomain::new([0.0], [1.0]).unwrap(), [3]).unwrap();
        let text = write_snapshot(&mesh);
        assert!(read_snapshot::<f64, 2>(&text).is_err());
    }
}
