#![no_main]

use libfuzzer_sys::fuzz_target;
use perturb_xai::model::protocol::{decode_images, decode_scores, Message};

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    match Message::parse(line) {
        Ok(Message::Predict { n, space, data, .. }) => {
            for input in [(1, 1, 1), (2, 2, 3), (4, 3, 1)] {
                if let Ok(images) = decode_images(n, space, &data, input) {
                    assert_eq!(images.len(), n);
                }
            }
        }
        Ok(Message::Scores { n, data, .. }) => {
            for classes in [1, 2, 10] {
                if let Ok(scores) = decode_scores(n, &data, classes) {
                    assert!(scores.iter().all(|s| s.len() == classes));
                }
            }
        }
        Ok(msg) => {
            // Whatever parses must survive a round trip.
            assert_eq!(Message::parse(&msg.to_line()).unwrap(), msg);
        }
        Err(_) => {}
    }
});
