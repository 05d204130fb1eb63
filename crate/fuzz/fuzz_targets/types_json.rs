#![no_main]

use libfuzzer_sys::fuzz_target;
use perturb_xai::types::{
    from_json, AttributionResult, Image, PixelMap, PredictionRecords, SampleSet, SegmentMap,
    SegmentMaskStack,
};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = from_json::<Image>(text);
    let _ = from_json::<PixelMap>(text);
    let _ = from_json::<SegmentMap>(text);
    let _ = from_json::<SegmentMaskStack>(text);
    let _ = from_json::<SampleSet>(text);
    let _ = from_json::<PredictionRecords>(text);
    let _ = from_json::<AttributionResult>(text);
});
