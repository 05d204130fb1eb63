use std::io::{BufRead, Write};

use super::protocol::{decode_images, Message, PROTOCOL_VERSION};
use super::Predictor;
use crate::error::Result;

/// Answer protocol requests from `input` on `output` until end of input.
/// Requests are handled strictly in order; bad requests get an `error`
/// message and the session continues. Returns the number of requests served.
pub fn serve<P, R, W>(predictor: &P, mut input: R, mut output: W) -> Result<usize>
where
    P: Predictor + ?Sized,
    R: BufRead,
    W: Write,
{
    let mut line = String::new();
    let mut served = 0;
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Ok(served);
        }
        if line.trim().is_empty() {
            continue;
        }
        served += 1;
        let reply = match Message::parse(&line) {
            Ok(Message::Hello { version, .. }) if version == PROTOCOL_VERSION => Message::Hello {
                version: PROTOCOL_VERSION,
                spec: Some(predictor.spec().clone()),
            },
            Ok(Message::Hello { version, .. }) => Message::Error {
                id: None,
                message: format!("unsupported protocol version {version}"),
            },
            Ok(Message::Predict { id, n, space, data }) => {
                match decode_images(n, space, &data, predictor.spec().input)
                    .and_then(|imgs| predictor.predict_batch(&imgs))
                {
                    Ok(scores) => Message::scores(id, &scores),
                    Err(e) => Message::Error {
                        id: Some(id),
                        message: e.to_string(),
                    },
                }
            }
            Ok(other) => Message::Error {
                id: None,
                message: format!("unexpected message from client: {other:?}"),
            },
            Err(e) => Message::Error {
                id: None,
                message: e.to_string(),
            },
        };
        output.write_all(reply.to_line().as_bytes())?;
        output.flush()?;
    }
}
