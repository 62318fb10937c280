use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use vfikit::io::save_quads;
use vfikit::motion::{reverse_flow, FlowField};
use vfikit::pipeline::{Mode, Pipeline, PipelineConfig};
use vfikit::synth::{make_dataset, Difficulty};
use vfikit_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(vfi_last_error()) }.to_str().unwrap().to_string()
}

fn synthetic(d: &str, seed: u64, index: usize, size: usize) -> *mut VfiQuad {
    let name = CString::new(d).unwrap();
    let mut q = ptr::null_mut();
    assert_eq!(unsafe { vfi_quad_synthetic(name.as_ptr(), seed, index, size, &mut q) }, VfiStatus::Ok);
    q
}

#[test]
fn interpolation_matches_the_library() {
    let q = synthetic("moderate", 4, 2, 32);
    let (mut w, mut h, mut t) = (0, 0, 0.0);
    assert_eq!(unsafe { vfi_quad_info(q, &mut w, &mut h, &mut t) }, VfiStatus::Ok);
    assert_eq!((w, h, t), (32, 32, 0.5));
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { vfi_pipeline_new(VfiMode::AnalyticBaseline, &mut p) }, VfiStatus::Ok);
    let mut frame = vec![0f32; 3 * w * h];
    assert_eq!(unsafe { vfi_interpolate(p, q, 0.5, frame.as_mut_ptr(), frame.len()) }, VfiStatus::Ok);
    assert_eq!(last_error(), "");

    let quad = &make_dataset(3, 4, 32, &Difficulty::moderate()).unwrap()[2];
    let lib = Pipeline::new(PipelineConfig {
        mode: Mode::AnalyticBaseline,
        ..PipelineConfig::default()
    })
    .unwrap();
    assert_eq!(frame, lib.interpolate(quad, 0.5).unwrap().frame.data());
    let mut target = vec![0f32; frame.len()];
    assert_eq!(unsafe { vfi_quad_target(q, target.as_mut_ptr(), target.len()) }, VfiStatus::Ok);
    assert_eq!(target, quad.target().unwrap().data());
    unsafe {
        vfi_pipeline_free(p);
        vfi_quad_free(q);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let q = synthetic("linear", 0, 0, 16);
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { vfi_pipeline_new(VfiMode::GtCoeffs, &mut p) }, VfiStatus::Ok);
    let mut buf = vec![0f32; 3 * 16 * 16];
    unsafe {
        assert_eq!(vfi_interpolate(p, q, 1.5, buf.as_mut_ptr(), buf.len()), VfiStatus::Contract);
        assert!(last_error().contains("(0, 1)"), "{}", last_error());
        assert_eq!(vfi_interpolate(p, q, 0.5, buf.as_mut_ptr(), 7), VfiStatus::InvalidArgument);
        assert_eq!(vfi_interpolate(ptr::null(), q, 0.5, buf.as_mut_ptr(), buf.len()), VfiStatus::NullPointer);
        assert_eq!(last_error(), "pipeline is null");
        assert_eq!(vfi_pipeline_new(VfiMode::Learned, ptr::null_mut()), VfiStatus::NullPointer);
        let bad = CString::new("sideways").unwrap();
        let mut q2 = ptr::null_mut();
        assert_eq!(vfi_quad_synthetic(bad.as_ptr(), 0, 0, 16, &mut q2), VfiStatus::InvalidArgument);
        assert!(q2.is_null());
        let missing = CString::new("/nonexistent/m.ckpt").unwrap();
        assert_eq!(vfi_pipeline_load(missing.as_ptr(), VfiMode::Learned, &mut p), VfiStatus::Io);
        assert!(last_error().contains("/nonexistent/m.ckpt"));
        vfi_pipeline_free(p);
        vfi_quad_free(q);
        vfi_pipeline_free(ptr::null_mut());
        vfi_quad_free(ptr::null_mut());
    }
}

#[test]
fn file_quads_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let quads = make_dataset(2, 1, 16, &Difficulty::linear()).unwrap();
    let m = CString::new(save_quads(&quads, dir.path()).unwrap().to_str().unwrap()).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let cfg = PipelineConfig {
        model: vfikit::nets::NetConfig {
            nme_widths: vec![4, 6, 8],
            mr_widths: vec![6, 8, 10],
            bme_widths: [8, 6],
            ..Default::default()
        },
        ..PipelineConfig::default()
    };
    let lib = Pipeline::new(cfg).unwrap();
    lib.checkpoint(0, None).unwrap().save(&ckpt).unwrap();
    let c = CString::new(ckpt.to_str().unwrap()).unwrap();
    unsafe {
        let (mut q, mut p) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(vfi_quad_load(m.as_ptr(), 1, &mut q), VfiStatus::Ok);
        assert_eq!(vfi_pipeline_load(c.as_ptr(), VfiMode::Learned, &mut p), VfiStatus::Ok);
        let mut a = vec![0f32; 3 * 16 * 16];
        assert_eq!(vfi_interpolate(p, q, 0.5, a.as_mut_ptr(), a.len()), VfiStatus::Ok);
        let file_quad = vfikit::io::load_quad(&vfikit::io::read_manifest(m.to_str().unwrap()).unwrap()[1]).unwrap();
        assert_eq!(a, lib.interpolate(&file_quad, 0.5).unwrap().frame.data());
        vfi_pipeline_free(p);
        assert_eq!(vfi_pipeline_load(c.as_ptr(), VfiMode::GtCoeffs, &mut p), VfiStatus::Ok);
        assert_eq!(vfi_interpolate(p, q, 0.5, a.as_mut_ptr(), a.len()), VfiStatus::Contract);
        let mut q3 = ptr::null_mut();
        assert_eq!(vfi_quad_load(m.as_ptr(), 5, &mut q3), VfiStatus::InvalidArgument);
        vfi_pipeline_free(p);
        vfi_quad_free(q);
    }
}

#[test]
fn reverse_flow_matches_the_library() {
    let f = FlowField::from_fn(7, 5, |x, y| [0.3 * x as f32 - 1.0, 0.7 - 0.2 * y as f32]);
    let mut out = vec![0f32; 70];
    let mut holes = vec![9u8; 35];
    let s = unsafe { vfi_reverse_flow(f.data().as_ptr(), 7, 5, out.as_mut_ptr(), holes.as_mut_ptr()) };
    assert_eq!(s, VfiStatus::Ok);
    let (r, h) = reverse_flow(&f);
    assert_eq!(out, r.data());
    assert_eq!(holes, h.data().iter().map(|&b| b as u8).collect::<Vec<_>>());
    let s = unsafe { vfi_reverse_flow(f.data().as_ptr(), 7, 5, out.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, VfiStatus::Ok);
    let s = unsafe { vfi_reverse_flow(ptr::null(), 7, 5, out.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, VfiStatus::NullPointer);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(vfi_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(crate_dir().join("include/vfikit.h")).unwrap();
    for name in [
        "vfi_last_error",
        "vfi_pipeline_new",
        "vfi_pipeline_load",
        "vfi_pipeline_free",
        "vfi_quad_synthetic",
        "vfi_quad_load",
        "vfi_quad_info",
        "vfi_quad_target",
        "vfi_quad_free",
        "vfi_interpolate",
        "vfi_reverse_flow",
        "typedef struct VfiPipeline VfiPipeline;",
        "VFI_STATUS_CONTRACT = 4",
    ] {
        assert!(h.contains(name), "{name}");
    }
}

/// Compiles and runs a C program against the header and the static
/// library when a C compiler is available.
#[test]
fn c_program_links_and_runs() {
    let exe_dir = std::env::current_exe().unwrap();
    let profile_dir = exe_dir.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libvfikit_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.is_file() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let bin = out.path().join("smoke");
    let status = Command::new(&cc)
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.starts_with("32x32 contract violated"), "{text}");
}
