#![no_main]

use libfuzzer_sys::fuzz_target;

// bvecs and bvals arrive as one buffer split at the first NUL byte; the
// parser must reject malformed tables with an error, never a panic.
fuzz_target!(|data: &[u8]| {
    let (bvecs_bytes, bvals_bytes) = match data.iter().position(|&b| b == 0) {
        Some(i) => (&data[..i], &data[i + 1..]),
        None => (data, &data[..0]),
    };
    let bvecs = String::from_utf8_lossy(bvecs_bytes);
    let bvals = String::from_utf8_lossy(bvals_bytes);
    let _ = hardi_recon::io_formats::parse_gradient_table(&bvecs, &bvals, "bvecs", "bvals");
});
