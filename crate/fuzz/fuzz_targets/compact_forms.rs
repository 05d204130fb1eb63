#![no_main]

use libfuzzer_sys::fuzz_target;
use perturb_xai::harness::config::{parse_color, parse_smoothing};
use perturb_xai::harness::{Granularity, ModelSource, SamplerConfig, SegmenterConfig};
use perturb_xai::model::Endpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(seg) = s.parse::<SegmenterConfig>() {
        assert_eq!(seg.to_string().parse::<SegmenterConfig>().unwrap(), seg);
    }
    if let Ok(sampler) = s.parse::<SamplerConfig>() {
        assert_eq!(
            sampler.to_string().parse::<SamplerConfig>().unwrap(),
            sampler
        );
    }
    let _ = s.parse::<Granularity>();
    let _ = s.parse::<Endpoint>();
    if let Ok(source) = s.parse::<ModelSource>() {
        let _ = source.to_string().parse::<ModelSource>().unwrap();
    }
    let _ = parse_smoothing(s);
    let _ = parse_color(s);
});
