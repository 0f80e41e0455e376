#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(manifest) =
        hardi_recon::io_formats::parse_checkpoint_manifest(&text, "manifest.json")
    {
        // offsets validated: parameters tile the blob without gaps
        let total: usize = manifest.params.iter().map(|p| p.len).sum();
        if let Some(last) = manifest.params.last() {
            assert_eq!(last.offset + last.len, total);
        }
    }
});
