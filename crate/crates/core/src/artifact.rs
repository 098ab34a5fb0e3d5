//! Versioned JSON envelopes for saved bases and surrogates.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    kind: &'a str,
    version: u32,
    payload: &'a T,
}

#[derive(Deserialize)]
struct Header {
    kind: String,
    version: u32,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    payload: T,
}

pub fn to_json<T: Serialize>(kind: &str, payload: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&EnvelopeOut { kind, version: ARTIFACT_VERSION, payload })?)
}

/// Parses an envelope after checking its kind and version.
pub fn from_json<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let header: Header =
        serde_json::from_str(text).map_err(|e| Error::IncompatibleArtifact(format!("missing artifact header: {e}")))?;
    if header.kind != kind {
        return Err(Error::IncompatibleArtifact(format!("expected a {kind} artifact, found {}", header.kind)));
    }
    if header.version != ARTIFACT_VERSION {
        return Err(Error::IncompatibleArtifact(format!(
            "artifact version {} is not supported (expected {ARTIFACT_VERSION})",
            header.version
        )));
    }
    let env: EnvelopeIn<T> = serde_json::from_str(text)
        .map_err(|e| Error::IncompatibleArtifact(format!("malformed {kind} payload: {e}")))?;
    Ok(env.payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_mismatches() {
        let text = to_json("thing", &vec![1.5, 2.0]).unwrap();
        assert_eq!(from_json::<Vec<f64>>("thing", &text).unwrap(), vec![1.5, 2.0]);
        assert!(matches!(from_json::<Vec<f64>>("other", &text), Err(Error::IncompatibleArtifact(_))));
        let bumped = text.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(from_json::<Vec<f64>>("thing", &bumped), Err(Error::IncompatibleArtifact(_))));
        assert!(from_json::<Vec<f64>>("thing", "{}").is_err());
    }
}
