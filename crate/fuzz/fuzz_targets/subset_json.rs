#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(file) = hardi_recon::io_formats::parse_subset_json(&text, "subset.json") {
        // a successfully parsed file always yields a valid selection
        let sel = file.selection().expect("parse implies validity");
        assert!(sel.len() <= sel.parent_size());
    }
});
