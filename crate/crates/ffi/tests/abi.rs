use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use dit_core::checkpoint::Checkpoint;
use dit_core::geometry::Point3;
use dit_core::model::{Model, ModelConfig};
use dit_core::training::LatentTable;
use dit_ffi::*;
use tempfile::TempDir;

fn small_config() -> ModelConfig {
    ModelConfig {
        latent_dim: 4,
        hidden: 8,
        steps: 3,
        template_widths: vec![16, 16],
        softplus_beta: 10.0,
        head_init_scale: 0.3,
    }
}

fn write_checkpoint(dir: &Path) -> (CString, Checkpoint) {
    let ck = Checkpoint {
        model: Model::new(small_config(), 3).unwrap(),
        latents: LatentTable::init(&[2, 9, 4], 4, 0.5, 1).unwrap(),
        iteration: 0,
        config_echo: "{}".into(),
        optimizer: None,
    };
    let path = dir.join("m.ditc");
    ck.save(&path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), ck)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dit_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn load(path: &CString) -> *mut DitModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dit_model_load(path.as_ptr(), &mut m) }, DIT_OK);
    assert!(!m.is_null());
    m
}

#[test]
fn model_queries_match_the_rust_api() {
    let dir = TempDir::new().unwrap();
    let (path, ck) = write_checkpoint(dir.path());
    let m = load(&path);
    unsafe {
        assert_eq!(dit_model_latent_dim(m), 4);
        assert_eq!(dit_model_steps(m), 3);
        assert_eq!(dit_model_shape_count(m), 3);

        let mut written = 0;
        let mut small = [0u32; 2];
        assert_eq!(
            dit_model_shape_ids(m, small.as_mut_ptr(), 2, &mut written),
            DIT_ERR_BUFFER
        );
        assert_eq!(written, 3);
        let mut ids = [0u32; 3];
        assert_eq!(
            dit_model_shape_ids(m, ids.as_mut_ptr(), 3, &mut written),
            DIT_OK
        );
        assert_eq!(ids.to_vec(), ck.latents.ids());

        let mut code = [0.0; 4];
        assert_eq!(dit_model_code(m, 9, code.as_mut_ptr(), 4), DIT_OK);
        assert_eq!(code.to_vec(), ck.latents.get(9).unwrap().values);
        assert_eq!(dit_model_code(m, 5, code.as_mut_ptr(), 4), DIT_ERR_INVALID);
        assert!(last_error().contains('5'));

        let pts = [0.1, -0.2, 0.3, 0.5, 0.0, -0.4];
        let expect_pts = [Point3::new(0.1, -0.2, 0.3), Point3::new(0.5, 0.0, -0.4)];
        let code_rs = ck.latents.get(9).unwrap();
        let mut sdf = [0.0; 2];
        assert_eq!(
            dit_sdf(m, code.as_ptr(), 4, pts.as_ptr(), 2, 3, sdf.as_mut_ptr()),
            DIT_OK
        );
        assert_eq!(
            sdf.to_vec(),
            ck.model.forward_sdf_batch(&expect_pts, code_rs, 3).unwrap()
        );

        assert_eq!(
            dit_template_sdf(m, pts.as_ptr(), 2, sdf.as_mut_ptr()),
            DIT_OK
        );
        assert_eq!(sdf.to_vec(), ck.model.template_sdf_batch(&expect_pts));

        let mut canon = [0.0; 6];
        assert_eq!(
            dit_canonical(m, code.as_ptr(), 4, pts.as_ptr(), 2, canon.as_mut_ptr()),
            DIT_OK
        );
        let expect: Vec<f64> = ck
            .model
            .canonical_positions(&expect_pts, code_rs)
            .unwrap()
            .iter()
            .flat_map(|p| p.to_array())
            .collect();
        assert_eq!(canon.to_vec(), expect);

        assert_eq!(
            dit_sdf(m, code.as_ptr(), 3, pts.as_ptr(), 2, 3, sdf.as_mut_ptr()),
            DIT_ERR_INVALID
        );
        let bad = [f64::NAN, 0.0, 0.0];
        assert_eq!(
            dit_template_sdf(m, bad.as_ptr(), 1, sdf.as_mut_ptr()),
            DIT_ERR_NON_FINITE
        );
        assert_eq!(
            dit_sdf(m, code.as_ptr(), 4, bad.as_ptr(), 1, 3, sdf.as_mut_ptr()),
            DIT_ERR_NON_FINITE
        );
        dit_model_free(m);
    }
}

#[test]
fn meshes_are_exposed_as_flat_buffers() {
    let dir = TempDir::new().unwrap();
    let (path, _) = write_checkpoint(dir.path());
    let m = load(&path);
    unsafe {
        let mut mesh = ptr::null_mut();
        assert_eq!(dit_extract_mesh(m, ptr::null(), 0, 12, &mut mesh), DIT_OK);
        let nv = dit_mesh_vertex_count(mesh);
        let nt = dit_mesh_triangle_count(mesh);
        if nt > 0 {
            let tris = std::slice::from_raw_parts(dit_mesh_triangles(mesh), 3 * nt);
            assert!(tris.iter().all(|&i| (i as usize) < nv));
            let verts = std::slice::from_raw_parts(dit_mesh_vertices(mesh), 3 * nv);
            assert!(verts.iter().all(|v| v.abs() <= 1.0));
        }
        let obj = CString::new(dir.path().join("t.obj").to_str().unwrap()).unwrap();
        assert_eq!(dit_mesh_write_obj(mesh, obj.as_ptr()), DIT_OK);
        let text = std::fs::read_to_string(dir.path().join("t.obj")).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), nv);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), nt);
        dit_mesh_free(mesh);

        assert_eq!(
            dit_extract_mesh(m, ptr::null(), 0, 1, &mut mesh),
            DIT_ERR_INVALID
        );
        assert!(mesh.is_null());
        dit_model_free(m);
    }
}

#[test]
fn failures_map_to_codes_and_messages() {
    let dir = TempDir::new().unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(dit_model_load(ptr::null(), &mut m), DIT_ERR_NULL);
        assert!(last_error().contains("path"));
        let missing = CString::new(dir.path().join("nope.ditc").to_str().unwrap()).unwrap();
        assert_eq!(
            dit_model_load(missing.as_ptr(), &mut m),
            DIT_ERR_MISSING_FILE
        );
        assert!(m.is_null());
        assert!(last_error().contains("nope.ditc"));

        std::fs::write(dir.path().join("junk.ditc"), b"DITC\x01").unwrap();
        let junk = CString::new(dir.path().join("junk.ditc").to_str().unwrap()).unwrap();
        assert_eq!(dit_model_load(junk.as_ptr(), &mut m), DIT_ERR_MALFORMED);

        let (path, _) = write_checkpoint(dir.path());
        assert_eq!(dit_model_load(path.as_ptr(), ptr::null_mut()), DIT_ERR_NULL);
        let bad_utf8 = [0xffu8 as std::ffi::c_char, 0];
        assert_eq!(dit_model_load(bad_utf8.as_ptr(), &mut m), DIT_ERR_UTF8);

        let mut out = [0.0; 1];
        assert_eq!(
            dit_template_sdf(ptr::null(), out.as_ptr(), 1, out.as_mut_ptr()),
            DIT_ERR_NULL
        );
        assert_eq!(dit_model_latent_dim(ptr::null()), 0);
        assert_eq!(dit_mesh_triangle_count(ptr::null()), 0);
        assert!(dit_mesh_vertices(ptr::null()).is_null());
        dit_model_free(ptr::null_mut());
        dit_mesh_free(ptr::null_mut());
    }
}

const C_SMOKE: &str = r#"
#include "dit.h"
#include <stdio.h>

int main(int argc, char **argv) {
    DitModel *m = NULL;
    if (dit_model_load(argv[1], &m) != DIT_OK) { fprintf(stderr, "%s\n", dit_last_error()); return 2; }
    double p[3] = {0.1, 0.2, 0.3}, d = 0.0;
    if (dit_template_sdf(m, p, 1, &d) != DIT_OK) return 3;
    DitMesh *mesh = NULL;
    if (dit_extract_mesh(m, NULL, 0, 8, &mesh) != DIT_OK) return 4;
    printf("%zu %.17g\n", dit_model_shape_count(m), d);
    dit_mesh_free(mesh);
    dit_model_free(m);
    if (dit_model_load("/nonexistent/x.ditc", &m) != DIT_ERR_MISSING_FILE) return 5;
    return 0;
}
"#;

#[test]
fn c_program_links_against_the_static_library() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = ["libdit_ffi.a", "deps/libdit_ffi.a"]
        .iter()
        .map(|l| profile_dir.join(l))
        .find(|p| p.exists())
        .expect("static library is built alongside the tests");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");

    let dir = TempDir::new().unwrap();
    let (path, ck) = write_checkpoint(dir.path());
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, C_SMOKE).unwrap();
    let bin = dir.path().join("smoke");
    let built = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(
        built.status.success(),
        "{}",
        String::from_utf8_lossy(&built.stderr)
    );

    let run = Command::new(&bin)
        .arg(path.to_str().unwrap())
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let expect = ck.model.template_sdf_batch(&[Point3::new(0.1, 0.2, 0.3)])[0];
    let stdout = String::from_utf8(run.stdout).unwrap();
    let mut fields = stdout.split_whitespace();
    assert_eq!(fields.next(), Some("3"));
    assert_eq!(fields.next().unwrap().parse::<f64>().unwrap(), expect);
}
