//! Writes one of the built-in meshes as OBJ.
//!
//! `cargo run -p jacfield --example write_shape -- icosphere sphere.obj`

use jacfield::shapes;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [name, path] = args.as_slice() else {
        eprintln!("usage: write_shape <tetrahedron|cube|icosahedron|icosphere|torus> <out.obj>");
        std::process::exit(1);
    };
    let mesh = match name.as_str() {
        "tetrahedron" => shapes::tetrahedron(),
        "cube" => shapes::cube(),
        "icosahedron" => shapes::icosahedron(),
        "icosphere" => shapes::icosphere(3),
        "torus" => shapes::torus(0.7, 0.28, 40, 20),
        other => {
            eprintln!("unknown shape {other}");
            std::process::exit(1);
        }
    };
    if let Err(e) = mesh.save_obj(path) {
        eprintln!("{e}");
        std::process::exit(2);
    }
    println!("{} vertices, {} faces", mesh.vertex_count(), mesh.face_count());
}
