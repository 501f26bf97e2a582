#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use jacfield::guidance::protocol::{encode_images, read_frame, write_frame, Message};
use jacfield::raster::{sample_cameras, Camera, NEAR_PLANE};
use jacfield::{shapes, Mesh, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reply policy of the mock service for one evaluate request.
pub type Responder = Box<dyn FnMut(usize, &[u8], usize, usize) -> (Message, Vec<u8>) + Send>;

pub struct MockService {
    pub endpoint: String,
    pub connections: Arc<Mutex<usize>>,
    pub evaluations: Arc<Mutex<usize>>,
    handle: Option<JoinHandle<()>>,
}

impl MockService {
    /// Accepts connections until the listener is dropped with the process.
    /// `ready_version` goes into the ready reply; `responder` builds results.
    pub fn spawn(ready_version: u32, mut responder: Responder) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let endpoint = listener.local_addr().unwrap().to_string();
        let connections = Arc::new(Mutex::new(0));
        let evaluations = Arc::new(Mutex::new(0));
        let (c, e) = (connections.clone(), evaluations.clone());
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { return };
                *c.lock().unwrap() += 1;
                let Ok(Ok((Message::Hello { resolution, views, .. }, _))) = read_frame(&mut stream) else {
                    continue;
                };
                let ready = Message::Ready {
                    version: ready_version,
                    feature_layer: "final_token".into(),
                };
                if write_frame(&mut stream, &ready, &[]).is_err() {
                    continue;
                }
                while let Ok(Ok((Message::Evaluate { .. }, payload))) = read_frame(&mut stream) {
                    let n = {
                        let mut g = e.lock().unwrap();
                        *g += 1;
                        *g
                    };
                    let (msg, body) = responder(n, &payload, views, resolution);
                    if write_frame(&mut stream, &msg, &body).is_err() {
                        break;
                    }
                }
            }
        });
        Self {
            endpoint,
            connections,
            evaluations,
            handle: Some(handle),
        }
    }

    pub fn connections(&self) -> usize {
        *self.connections.lock().unwrap()
    }

    pub fn evaluations(&self) -> usize {
        *self.evaluations.lock().unwrap()
    }
}

pub fn zero_result(views: usize, resolution: usize) -> (Message, Vec<u8>) {
    let body = encode_images(&vec![vec![0f32; resolution * resolution]; views]);
    (
        Message::Result {
            semantic_loss: 0.0,
            vc_loss: 0.0,
            payload_bytes: body.len(),
        },
        body,
    )
}

pub fn zero_responder() -> Responder {
    Box::new(|_, _, views, res| zero_result(views, res))
}

/// An endpoint that refuses connections.
pub fn dead_endpoint() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    drop(l);
    addr
}

/// Reads everything the peer sends until it closes.
pub fn read_all(stream: &mut TcpStream) -> Vec<u8> {
    let mut out = Vec::new();
    stream.read_to_end(&mut out).unwrap();
    out
}

pub fn write_all(stream: &mut TcpStream, bytes: &[u8]) {
    stream.write_all(bytes).unwrap();
    stream.flush().unwrap();
}

/// Closed meshes and triangle soups of at most 500 faces.
pub fn corpus() -> Vec<(String, Mesh)> {
    let mut out = vec![
        ("tetrahedron".to_string(), shapes::tetrahedron()),
        ("cube".to_string(), shapes::cube()),
        ("icosahedron".to_string(), shapes::icosahedron()),
        ("icosphere1".to_string(), shapes::icosphere(1)),
        ("icosphere2".to_string(), shapes::icosphere(2)),
        ("uv_sphere".to_string(), shapes::uv_sphere(25, 11)),
        ("torus".to_string(), shapes::torus(1.0, 0.35, 16, 10)),
    ];
    let sphere = shapes::uv_sphere(25, 11);
    for (seed, amount) in [(1u64, 0.05), (2, 0.15), (3, 0.3)] {
        out.push((format!("perturbed_sphere_{amount}"), perturb(&sphere, amount, seed)));
    }
    out.push(("perturbed_torus".to_string(), perturb(&shapes::torus(1.0, 0.35, 16, 10), 0.2, 4)));
    for seed in 0..4 {
        out.push((format!("soup_{seed}"), soup(120, seed)));
    }
    // two interpenetrating closed shapes
    let a = shapes::icosphere(1);
    let shifted: Vec<_> = a.vertices().iter().map(|v| v + Vector3::new(0.8, 0.1, 0.0)).collect();
    let mut v = a.vertices().to_vec();
    v.extend(shifted);
    let n = a.vertex_count();
    let mut f = a.faces().to_vec();
    f.extend(a.faces().iter().map(|t| [t[0] + n, t[1] + n, t[2] + n]));
    out.push(("overlapping_spheres".to_string(), Mesh::new(v, f).unwrap()));
    out
}

pub fn perturb(mesh: &Mesh, amount: f64, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = mesh
        .vertices()
        .iter()
        .map(|p| {
            p + Vector3::new(
                rng.random_range(-amount..amount),
                rng.random_range(-amount..amount),
                rng.random_range(-amount..amount),
            )
        })
        .collect();
    mesh.with_vertices(v).unwrap()
}

/// Random disconnected triangles in the unit cube, sized to collide often.
pub fn soup(faces: usize, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vec::new();
    let mut f = Vec::new();
    while f.len() < faces {
        let c = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        let tri: Vec<_> = (0..3)
            .map(|_| c + Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)))
            .collect();
        if (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm() < 1e-3 {
            continue;
        }
        let b = v.len();
        v.extend(tri);
        f.push([b, b + 1, b + 2]);
    }
    Mesh::new(v, f).unwrap()
}

pub const ORACLE_RES: usize = 64;
const RES: usize = ORACLE_RES;

/// Random triangles of mixed sizes inside the unit cube around the origin.
pub fn scene(rng: &mut ChaCha8Rng) -> Mesh {
    let faces = rng.random_range(1..=50);
    let mut v = Vec::new();
    let mut f = Vec::new();
    while f.len() < faces {
        let c = Vector3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8));
        let size = rng.random_range(0.05..0.9);
        let tri: Vec<_> = (0..3)
            .map(|_| c + Vector3::new(rng.random_range(-size..size), rng.random_range(-size..size), rng.random_range(-size..size)))
            .collect();
        if (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm() < 1e-3 {
            continue;
        }
        let b = v.len();
        v.extend(tri);
        f.push([b, b + 1, b + 2]);
    }
    Mesh::new(v, f).unwrap()
}

/// Pinhole projection written out independently: returns (x_pixel, y_pixel, depth).
pub fn oracle_project(cam: &Camera, p: &Vector3<f64>) -> (f64, f64, f64) {
    let w = (cam.target - cam.eye).normalize();
    let u = w.cross(&cam.up).normalize();
    let v = u.cross(&w);
    let d = p - cam.eye;
    let z = d.dot(&w);
    let t = (cam.fov_deg.to_radians() / 2.0).tan();
    let half = cam.resolution as f64 / 2.0;
    let x = half + half * d.dot(&u) / (z * t);
    let y = half - half * d.dot(&v) / (z * t);
    (x, y, z)
}

/// Covered iff the pixel center is on the inner side of (or on) all three
/// edge lines, for either winding.
pub fn oracle_coverage(mesh: &Mesh, cam: &Camera) -> Vec<bool> {
    let mut covered = vec![false; RES * RES];
    for f in mesh.faces() {
        let p: Vec<_> = f.iter().map(|&i| oracle_project(cam, &mesh.vertices()[i])).collect();
        if p.iter().any(|q| q.2 <= NEAR_PLANE) {
            continue;
        }
        let side = |a: &(f64, f64, f64), b: &(f64, f64, f64), x: f64, y: f64| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
        if side(&p[0], &p[1], p[2].0, p[2].1).abs() < 1e-14 {
            continue;
        }
        for r in 0..RES {
            for c in 0..RES {
                let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                let s = [side(&p[0], &p[1], x, y), side(&p[1], &p[2], x, y), side(&p[2], &p[0], x, y)];
                if s.iter().all(|&e| e >= 0.0) || s.iter().all(|&e| e <= 0.0) {
                    covered[r * RES + c] = true;
                }
            }
        }
    }
    covered
}

pub fn cameras_for_scene(seed: u64) -> Vec<Camera> {
    let mut cams = sample_cameras(2, seed, 3.0, 60.0, RES).unwrap();
    // a close camera puts some triangles behind the near plane
    cams.push(Camera::new(Vector3::new(0.1, 0.2, 0.9), Vector3::zeros(), Vector3::y(), 90.0, RES).unwrap());
    cams
}

