//! Newline-delimited JSON messages exchanged with out-of-process scorers.
//!
//! Every message is one JSON object per line carrying a `"type"` field. Field
//! order is irrelevant and unknown fields are ignored. Negative infinity does
//! not exist in JSON, so log-probabilities at or below `-1e30` decode as `-inf`
//! and `-inf` encodes as `-1e30`.

use serde::{Deserialize, Serialize};

use super::{ConditioningSpec, ScorerError};
use crate::vocab::{TokenId, VocabHash};

pub const NEG_INF_WIRE: f64 = -1e30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Hello,
    Open {
        session: String,
        kind: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source_ids: Option<Vec<TokenId>>,
    },
    Score { session: String },
    Append { session: String, id: TokenId },
    Close { session: String },
}

impl Request {
    pub fn open(session: impl Into<String>, conditioning: &ConditioningSpec) -> Self {
        let session = session.into();
        match conditioning {
            ConditioningSpec::SourceConditioned { source_ids } => Request::Open {
                session,
                kind: conditioning.kind_name().into(),
                prompt: None,
                source_ids: Some(source_ids.clone()),
            },
            ConditioningSpec::PromptConditioned { prompt } => Request::Open {
                session,
                kind: conditioning.kind_name().into(),
                prompt: Some(prompt.clone()),
                source_ids: None,
            },
        }
    }

    pub fn session(&self) -> Option<&str> {
        match self {
            Request::Hello => None,
            Request::Open { session, .. }
            | Request::Score { session }
            | Request::Append { session, .. }
            | Request::Close { session } => Some(session),
        }
    }
}

/// Rebuilds the conditioning carried by an `open` request.
pub fn open_conditioning(
    kind: &str,
    prompt: Option<String>,
    source_ids: Option<Vec<TokenId>>,
) -> Result<ConditioningSpec, ScorerError> {
    match kind {
        "source_conditioned" => Ok(ConditioningSpec::SourceConditioned {
            source_ids: source_ids
                .ok_or_else(|| ScorerError::ProtocolError("source_conditioned open without source_ids".into()))?,
        }),
        "prompt_conditioned" => Ok(ConditioningSpec::PromptConditioned {
            prompt: prompt.ok_or_else(|| ScorerError::ProtocolError("prompt_conditioned open without prompt".into()))?,
        }),
        other => Err(ScorerError::ProtocolError(format!("unknown session kind {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    HelloAck {
        vocab_hash: VocabHash,
        name: String,
    },
    OpenAck {
        session: String,
    },
    Dist {
        session: String,
        logprobs: Vec<f64>,
    },
    AppendAck {
        session: String,
    },
    CloseAck {
        session: String,
    },
    Error {
        #[serde(default)]
        session: Option<String>,
        code: String,
        msg: String,
    },
}

impl Response {
    pub fn dist(session: impl Into<String>, logprobs: &[f64]) -> Self {
        Response::Dist { session: session.into(), logprobs: encode_logprobs(logprobs) }
    }

    pub fn error(session: Option<&str>, err: &ScorerError) -> Self {
        Response::Error { session: session.map(str::to_string), code: error_code(err).to_string(), msg: err.to_string() }
    }
}

/// Wire code for an error; backend errors keep the code they were raised with.
pub fn error_code(err: &ScorerError) -> &str {
    match err {
        ScorerError::ScorerUnavailable(_) => "unavailable",
        ScorerError::VocabMismatch { .. } => "vocab_mismatch",
        ScorerError::ScorerTimeout(_) => "timeout",
        ScorerError::ProtocolError(_) => "bad_request",
        ScorerError::SessionClosed => "session_closed",
        ScorerError::TokenOutOfRange { .. } => "out_of_range",
        ScorerError::Backend { code, .. } => code,
    }
}

pub fn encode_logprobs(logprobs: &[f64]) -> Vec<f64> {
    logprobs.iter().map(|&x| if x <= NEG_INF_WIRE { NEG_INF_WIRE } else { x }).collect()
}

pub fn decode_logprobs(logprobs: Vec<f64>) -> Vec<f64> {
    logprobs.into_iter().map(|x| if x <= NEG_INF_WIRE { f64::NEG_INFINITY } else { x }).collect()
}

pub fn to_line<T: Serialize>(msg: &T) -> String {
    let mut line = serde_json::to_string(msg).expect("wire messages always serialise");
    line.push('\n');
    line
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn request_shapes() {
        let open = Request::open("s1", &ConditioningSpec::prompt("Translate"));
        assert_eq!(
            serde_json::to_value(&open).unwrap(),
            json!({"type": "open", "session": "s1", "kind": "prompt_conditioned", "prompt": "Translate"})
        );
        let open = Request::open("s2", &ConditioningSpec::source(vec![1, 2]));
        assert_eq!(
            serde_json::to_value(&open).unwrap(),
            json!({"type": "open", "session": "s2", "kind": "source_conditioned", "source_ids": [1, 2]})
        );
        assert_eq!(serde_json::to_value(Request::Hello).unwrap(), json!({"type": "hello"}));
        assert_eq!(
            serde_json::to_value(Request::Append { session: "s1".into(), id: 7 }).unwrap(),
            json!({"type": "append", "session": "s1", "id": 7})
        );
    }

    #[test]
    fn unknown_fields_and_order() {
        let r: Response =
            serde_json::from_str(r#"{"name":"toy","extra":1,"vocab_hash":"00000000000000ff","type":"hello_ack"}"#)
                .unwrap();
        assert_eq!(r, Response::HelloAck { vocab_hash: VocabHash(255), name: "toy".into() });
        let q: Request = serde_json::from_str(r#"{"session":"s9","type":"score","trace":true}"#).unwrap();
        assert_eq!(q, Request::Score { session: "s9".into() });
    }

    #[test]
    fn neg_inf_encoding() {
        let msg = Response::dist("s1", &[0.0, f64::NEG_INFINITY]);
        let line = to_line(&msg);
        assert!(line.contains("-1e+30"), "{line}");
        assert!(line.ends_with('\n'));
        let back: Response = serde_json::from_str(&line).unwrap();
        match back {
            Response::Dist { logprobs, .. } => assert_eq!(decode_logprobs(logprobs), vec![0.0, f64::NEG_INFINITY]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_message_without_session() {
        let r: Response = serde_json::from_str(r#"{"type":"error","code":"x","msg":"y"}"#).unwrap();
        assert_eq!(r, Response::Error { session: None, code: "x".into(), msg: "y".into() });
    }

    #[test]
    fn open_requires_matching_payload() {
        assert!(open_conditioning("source_conditioned", Some("p".into()), None).is_err());
        assert!(open_conditioning("nonsense", None, None).is_err());
        assert_eq!(
            open_conditioning("prompt_conditioned", Some("p".into()), None).unwrap(),
            ConditioningSpec::prompt("p")
        );
    }
}
