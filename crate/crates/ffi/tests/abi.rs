use std::ffi::{c_char, CStr, CString};
use std::ptr;

use skiptag::checkpoint;
use skiptag::codec::TagSet;
use skiptag::corpus::{expand_instances, generate_synthetic, Embeddings, SynthParams};
use skiptag::layers::EncoderMode;
use skiptag::model::{ModelConfig, Tagger, Vocab};
use skiptag_ffi::*;

fn save_model(mode: EncoderMode) -> (tempfile::TempDir, CString, Tagger) {
    let (recs, _) = generate_synthetic(&SynthParams {
        n: 4,
        ..SynthParams::default()
    })
    .unwrap();
    let emb = Embeddings::random(recs.iter().flat_map(|r| r.tokens.iter().map(String::as_str)), 6, 2);
    let pos = Vocab::build(recs.iter().flat_map(|r| r.pos.iter().map(String::as_str)));
    let mut cfg = ModelConfig::new(6, mode, 0.1, 4);
    cfg.features.hidden_dim = 5;
    let tagger = Tagger::new(cfg, emb, pos, TagSet::part_whole()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    checkpoint::save(&path, &tagger, None).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    (dir, c, tagger)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(skiptag_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn c_strings(words: &[String]) -> (Vec<CString>, Vec<*const c_char>) {
    let owned: Vec<CString> = words.iter().map(|w| CString::new(w.as_str()).unwrap()).collect();
    let ptrs = owned.iter().map(|c| c.as_ptr()).collect();
    (owned, ptrs)
}

#[test]
fn prediction_matches_the_library() {
    let (_dir, path, tagger) = save_model(EncoderMode::Skip);
    let (recs, _) = generate_synthetic(&SynthParams {
        n: 2,
        seed: 99,
        ..SynthParams::default()
    })
    .unwrap();
    let inst = expand_instances(&recs[0]).unwrap().remove(0);
    let expected = tagger.predict(&inst).unwrap();
    let mask = inst.mask.iter().position(|&m| m == 1).unwrap() as i64;

    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(skiptag_model_load(path.as_ptr(), &mut model), SkipTagStatus::Ok);
        assert_eq!(skiptag_model_is_skip(model), 1);
        assert_eq!(skiptag_model_num_tags(model), 9);
        let (_t, toks) = c_strings(&inst.tokens);
        let (_p, pos) = c_strings(&inst.pos);
        let mut pred = ptr::null_mut();
        let st = skiptag_predict(model, toks.as_ptr(), pos.as_ptr(), toks.len(), mask, &mut pred);
        assert_eq!(st, SkipTagStatus::Ok, "{}", last_error());
        assert_eq!(skiptag_prediction_len(pred), inst.len());
        for (i, tag) in expected.tags.iter().enumerate() {
            let got = CStr::from_ptr(skiptag_prediction_tag(pred, i)).to_str().unwrap();
            assert_eq!(got, tag.to_string());
        }
        assert!(skiptag_prediction_tag(pred, inst.len()).is_null());
        assert_eq!(skiptag_prediction_num_spans(pred), expected.spans.len());
        for (i, span) in expected.spans.iter().enumerate() {
            let (mut role, mut s, mut e) = (ptr::null(), 0usize, 0usize);
            assert_eq!(
                skiptag_prediction_span(pred, i, &mut role, &mut s, &mut e),
                SkipTagStatus::Ok
            );
            assert_eq!(CStr::from_ptr(role).to_str().unwrap(), span.role);
            assert_eq!((s, e), (span.start, span.end));
        }
        let mut fwd = vec![9u8; inst.len()];
        let mut bwd = vec![9u8; inst.len()];
        assert_eq!(
            skiptag_prediction_gates(pred, fwd.as_mut_ptr(), bwd.as_mut_ptr(), fwd.len()),
            SkipTagStatus::Ok
        );
        let trace = expected.trace.unwrap();
        assert_eq!(fwd, trace.u_fwd);
        assert_eq!(bwd, trace.u_bwd);
        skiptag_prediction_free(pred);
        skiptag_model_free(model);
    }
}

#[test]
fn error_codes() {
    let (_dir, path, _) = save_model(EncoderMode::Plain);
    unsafe {
        let mut model = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.bin").unwrap();
        assert_eq!(skiptag_model_load(missing.as_ptr(), &mut model), SkipTagStatus::Data);
        assert!(model.is_null());
        assert!(last_error().contains("nonexistent"));
        assert_eq!(skiptag_model_load(ptr::null(), &mut model), SkipTagStatus::NullPointer);

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.bin");
        std::fs::write(&junk, b"not a model").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(
            skiptag_model_load(junk.as_ptr(), &mut model),
            SkipTagStatus::ModelIncompatible
        );

        assert_eq!(skiptag_model_load(path.as_ptr(), &mut model), SkipTagStatus::Ok);
        assert_eq!(skiptag_model_is_skip(model), 0);
        let words: Vec<String> = ["the", "rate", "is", "2%"].iter().map(|s| s.to_string()).collect();
        let (_t, toks) = c_strings(&words);
        let mut pred = ptr::null_mut();
        assert_eq!(
            skiptag_predict(model, toks.as_ptr(), ptr::null(), 4, 7, &mut pred),
            SkipTagStatus::OutOfRange
        );
        assert_eq!(
            skiptag_predict(model, toks.as_ptr(), ptr::null(), 0, -1, &mut pred),
            SkipTagStatus::Data
        );
        assert_eq!(
            skiptag_predict(model, toks.as_ptr(), ptr::null(), 4, 3, &mut pred),
            SkipTagStatus::Ok
        );
        let mut buf = [0u8; 4];
        let mut buf2 = [0u8; 4];
        assert_eq!(
            skiptag_prediction_gates(pred, buf.as_mut_ptr(), buf2.as_mut_ptr(), 4),
            SkipTagStatus::ModelIncompatible
        );
        skiptag_prediction_free(pred);
        skiptag_model_free(model);
        skiptag_model_free(ptr::null_mut());
        skiptag_prediction_free(ptr::null_mut());
    }
}

#[test]
fn invalid_utf8_is_reported() {
    let bad = [0xffu8, 0xfe, 0];
    let ptrs = [bad.as_ptr() as *const c_char];
    let mut count = 0usize;
    let st =
        unsafe { skiptag_recognize_percentages(ptrs.as_ptr(), 1, ptr::null_mut(), ptr::null_mut(), 0, &mut count) };
    assert_eq!(st, SkipTagStatus::InvalidUtf8);
}

#[test]
fn recognizer_over_abi() {
    let words: Vec<String> = "30 percent of Americans , while 20% prefer"
        .split(' ')
        .map(String::from)
        .collect();
    let (_o, toks) = c_strings(&words);
    let mut idx = [0usize; 1];
    let mut val = [0f64; 1];
    let mut count = 0usize;
    let st = unsafe {
        skiptag_recognize_percentages(
            toks.as_ptr(),
            toks.len(),
            idx.as_mut_ptr(),
            val.as_mut_ptr(),
            1,
            &mut count,
        )
    };
    assert_eq!(st, SkipTagStatus::Ok);
    assert_eq!(count, 2);
    assert_eq!((idx[0], val[0]), (0, 30.0));
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(skiptag_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
