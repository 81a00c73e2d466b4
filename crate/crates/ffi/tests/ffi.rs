use std::ffi::{CStr, CString};
use std::fs::File;
use std::ptr;

use chrono::NaiveDate;
use hotcold::config::RunConfig;
use hotcold::dataset::{generate_synthetic, write_contents_jsonl, write_views_jsonl, Catalog, Popularity};
use hotcold::hybrid::train_hybrid;
use hotcold_ffi::*;

#[test]
fn predictions_match_the_rust_api() {
    let (contents, logs) = generate_synthetic(400, 90, 13, 0.7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_contents_jsonl(File::create(dir.path().join("contents.jsonl")).unwrap(), &contents).unwrap();
    write_views_jsonl(File::create(dir.path().join("views.jsonl")).unwrap(), &logs).unwrap();
    let catalog = Catalog::new(contents.clone(), &logs).unwrap();
    let mut cfg = RunConfig::default();
    cfg.net.epochs = 3;
    cfg.net.hidden = vec![8];
    cfg.gbdt.n_trees = 10;
    let as_of = NaiveDate::from_ymd_opt(2017, 3, 1).unwrap();
    let model = train_hybrid(&catalog, as_of, &cfg).unwrap();
    let model_path = dir.path().join("model.json");
    model.save(&model_path).unwrap();

    let mut m = ptr::null_mut();
    let mut c = ptr::null_mut();
    let path = CString::new(model_path.to_str().unwrap()).unwrap();
    let data = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(hc_model_load_file(path.as_ptr(), &mut m), HcStatus::Ok);
        assert_eq!(hc_catalog_load(data.as_ptr(), HcFormat::Jsonl, &mut c), HcStatus::Ok);
    }
    let at = CString::new("2017-03-01").unwrap();
    let mut scored = 0;
    for content in contents.iter().filter(|x| x.release_date >= as_of).take(20) {
        let expected = model.predict(&catalog, content, as_of).unwrap();
        let id = CString::new(content.content_id.as_str()).unwrap();
        let mut out = HcPrediction::default();
        let status = unsafe { hc_predict(m, c, id.as_ptr(), at.as_ptr(), &mut out) };
        assert_eq!(status, HcStatus::Ok);
        assert_eq!(out.probability.to_bits(), expected.probability.to_bits());
        assert_eq!(out.hot == 1, expected.label == Popularity::Hot);
        scored += 1;
    }
    assert!(scored > 0);

    let unknown = CString::new("no-such-id").unwrap();
    let mut out = HcPrediction::default();
    let status = unsafe { hc_predict(m, c, unknown.as_ptr(), at.as_ptr(), &mut out) };
    assert_eq!(status, HcStatus::NotFound);
    let msg = unsafe { CStr::from_ptr(hc_last_error()) }.to_string_lossy().into_owned();
    assert!(msg.contains("no-such-id"), "{msg}");

    let bad_date = CString::new("March 1").unwrap();
    let id = CString::new(contents[0].content_id.as_str()).unwrap();
    let status = unsafe { hc_predict(m, c, id.as_ptr(), bad_date.as_ptr(), &mut out) };
    assert_eq!(status, HcStatus::InvalidArgument);

    unsafe {
        hc_model_free(m);
        hc_catalog_free(c);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/hotcold.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(
        &src,
        "#include \"hotcold.h\"\nint main(void) { HcPrediction p; (void)p; return hc_version() == 0; }\n",
    )
    .unwrap();
    let include = std::path::Path::new(header).parent().unwrap();
    let status = match std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(include)
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        // no C compiler on this machine
        Err(_) => return,
    };
    assert!(status.success());
}
