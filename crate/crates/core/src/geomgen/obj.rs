use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

use super::{area_weighted_normals, TriMesh, Vec3};

const IGNORED: [&str; 8] = ["vt", "vp", "o", "g", "s", "usemtl", "mtllib", "#"];

fn resolve(token: &str, count: usize, what: &str, line: usize) -> Result<usize> {
    let raw: i64 = token.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what} index {token:?}"),
    })?;
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        -1
    };
    if idx < 0 || idx as usize >= count {
        return Err(Error::Parse {
            line,
            msg: format!("{what} index {raw} out of range (have {count})"),
        });
    }
    Ok(idx as usize)
}

fn floats<const N: usize>(parts: &[&str], line: usize) -> Result<[f64; N]> {
    if parts.len() < N {
        return Err(Error::Parse {
            line,
            msg: format!("expected {N} numbers"),
        });
    }
    let mut out = [0.0; N];
    for (o, t) in out.iter_mut().zip(parts) {
        *o = t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line,
                msg: format!("bad number {t:?}"),
            })?;
    }
    Ok(out)
}

/// Parses the polygonal subset of Wavefront OBJ (`v`, `vn`, `f`). Polygons
/// are fan-triangulated; vertices referencing distinct `vn` entries are
/// split. Vertices without a usable `vn` get area-weighted normals.
/// Zero-area triangles are dropped.
pub fn load_obj(reader: impl BufRead) -> Result<TriMesh> {
    let mut positions: Vec<Vec3> = Vec::new();
    let mut file_normals: Vec<Vec3> = Vec::new();
    let mut corner_ids: HashMap<(usize, Option<usize>), u32> = HashMap::new();
    let mut corners: Vec<(usize, Option<usize>)> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let content = line.split('#').next().unwrap_or("");
        let parts: Vec<&str> = content.split_whitespace().collect();
        let Some((&kw, rest)) = parts.split_first() else {
            continue;
        };
        match kw {
            "v" => positions.push(Vec3::from(floats::<3>(rest, lineno)?)),
            "vn" => file_normals.push(Vec3::from(floats::<3>(rest, lineno)?)),
            "f" => {
                if rest.len() < 3 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "a face needs at least 3 vertices".into(),
                    });
                }
                let mut poly = Vec::with_capacity(rest.len());
                for tok in rest {
                    let mut fields = tok.split('/');
                    let v = resolve(fields.next().unwrap_or(""), positions.len(), "vertex", lineno)?;
                    let _vt = fields.next();
                    let vn = match fields.next() {
                        Some(t) if !t.is_empty() => Some(resolve(t, file_normals.len(), "normal", lineno)?),
                        _ => None,
                    };
                    if fields.next().is_some() {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: format!("malformed face vertex {tok:?}"),
                        });
                    }
                    let key = (v, vn);
                    let id = *corner_ids.entry(key).or_insert_with(|| {
                        corners.push(key);
                        corners.len() as u32 - 1
                    });
                    poly.push(id);
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            "l" | "p" => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-polygonal primitive '{kw}' is not supported"),
                })
            }
            kw if IGNORED.contains(&kw) => {}
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("unrecognised statement '{other}'"),
                })
            }
        }
    }

    let vertices: Vec<Vec3> = corners.iter().map(|&(v, _)| positions[v]).collect();
    faces.retain(|f| {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        (b - a).cross(&(c - a)).norm_squared() > 0.0
    });
    // Corners sharing a position also share an area-weighted normal.
    let mut by_position: Vec<Vec3> = vec![Vec3::zeros(); positions.len()];
    for f in &faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        let cross = (b - a).cross(&(c - a));
        for &i in f {
            by_position[corners[i as usize].0] += cross;
        }
    }
    let computed = area_weighted_normals(&vertices, &faces);
    let normals = corners
        .iter()
        .zip(computed)
        .map(|(&(v, vn), fallback)| {
            let from_file = vn.map(|n| file_normals[n]).filter(|n| n.norm() > 0.0);
            let shared = Some(by_position[v]).filter(|n| n.norm() > 0.0);
            from_file.or(shared).map(|n| n.normalize()).unwrap_or(fallback)
        })
        .collect();
    TriMesh::new(vertices, normals, faces)
}

pub fn load_obj_file(path: &Path) -> Result<TriMesh> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_obj(std::io::BufReader::new(file)).map_err(|e| Error::format(path, e.to_string()))
}
