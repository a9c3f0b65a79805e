//! Boundary for handwriting transcription. The passthrough provider accepts
//! UTF-8 text blobs; a remote provider returns `{text, confidence}` JSON.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscriptionError {
    #[error("transcription provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("unreadable input: {0}")]
    UnreadableInput(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptionResult {
    pub text: String,
    pub confidence: f64,
}

pub trait TranscriptionProvider: Send + Sync {
    fn transcribe(&self, blob: &[u8]) -> Result<TranscriptionResult, TranscriptionError>;
}

/// Treats the blob as already-transcribed UTF-8 text.
#[derive(Debug, Clone, Copy, Default)]
pub struct Passthrough;

impl TranscriptionProvider for Passthrough {
    fn transcribe(&self, blob: &[u8]) -> Result<TranscriptionResult, TranscriptionError> {
        let text = std::str::from_utf8(blob).map_err(|e| TranscriptionError::UnreadableInput(e.to_string()))?;
        if text.trim().is_empty() {
            return Err(TranscriptionError::UnreadableInput("empty blob".into()));
        }
        Ok(TranscriptionResult {
            text: text.to_string(),
            confidence: 1.0,
        })
    }
}

/// Raw transport to an OCR service: blob in, JSON body out.
pub trait TranscriptionTransport: Send + Sync {
    fn send(&self, blob: &[u8]) -> Result<String, String>;
}

#[derive(Clone)]
pub struct RemoteTranscriber {
    transport: Arc<dyn TranscriptionTransport>,
}

impl RemoteTranscriber {
    pub fn new(transport: Arc<dyn TranscriptionTransport>) -> Self {
        Self { transport }
    }
}

/// Parses a provider body, rejecting empty text or confidence outside `[0, 1]`.
pub fn parse_transcription(body: &str) -> Result<TranscriptionResult, TranscriptionError> {
    let r: TranscriptionResult = serde_json::from_str(body)
        .map_err(|e| TranscriptionError::ProviderUnavailable(format!("malformed provider reply: {e}")))?;
    if !(0.0..=1.0).contains(&r.confidence) {
        return Err(TranscriptionError::ProviderUnavailable(format!(
            "confidence {} outside [0, 1]",
            r.confidence
        )));
    }
    if r.text.trim().is_empty() {
        return Err(TranscriptionError::UnreadableInput("provider returned no text".into()));
    }
    Ok(r)
}

impl TranscriptionProvider for RemoteTranscriber {
    fn transcribe(&self, blob: &[u8]) -> Result<TranscriptionResult, TranscriptionError> {
        if blob.is_empty() {
            return Err(TranscriptionError::UnreadableInput("empty blob".into()));
        }
        let body = self
            .transport
            .send(blob)
            .map_err(TranscriptionError::ProviderUnavailable)?;
        parse_transcription(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_is_identity() {
        let r = Passthrough.transcribe(b"answer text").unwrap();
        assert_eq!(
            r,
            TranscriptionResult {
                text: "answer text".into(),
                confidence: 1.0
            }
        );
    }

    #[test]
    fn passthrough_rejects_empty_and_binary() {
        assert!(matches!(
            Passthrough.transcribe(b""),
            Err(TranscriptionError::UnreadableInput(_))
        ));
        assert!(matches!(
            Passthrough.transcribe(&[0xff, 0xfe]),
            Err(TranscriptionError::UnreadableInput(_))
        ));
    }

    struct Canned(Result<String, String>);
    impl TranscriptionTransport for Canned {
        fn send(&self, _: &[u8]) -> Result<String, String> {
            self.0.clone()
        }
    }

    #[test]
    fn remote_errors() {
        let down = RemoteTranscriber::new(Arc::new(Canned(Err("refused".into()))));
        assert!(matches!(
            down.transcribe(b"img"),
            Err(TranscriptionError::ProviderUnavailable(_))
        ));
        let bad = RemoteTranscriber::new(Arc::new(Canned(Ok(r#"{"text":"x","confidence":2}"#.into()))));
        assert!(bad.transcribe(b"img").is_err());
        let ok = RemoteTranscriber::new(Arc::new(Canned(Ok(r#"{"text":"x","confidence":0.4}"#.into()))));
        assert_eq!(ok.transcribe(b"img").unwrap().confidence, 0.4);
        assert!(matches!(
            ok.transcribe(b""),
            Err(TranscriptionError::UnreadableInput(_))
        ));
    }
}
