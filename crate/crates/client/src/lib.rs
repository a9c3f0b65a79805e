//! Async client for the grading service.

use reqwest::{Method, StatusCode, Url};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use truegrade_core::api::{
    AppealRequest, AuditRecordView, ErrorBody, EvidenceView, GradeView, OverrideRequest, ResolveAppealRequest,
    ReviewItem, SubmitRequest, SubmitResponse,
};
use truegrade_core::metrics::AgreementReport;
use truegrade_core::VerifyOutcome;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid base url `{0}`")]
    InvalidUrl(String),
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("service returned {status}: {message}")]
    Api { status: StatusCode, message: String },
    #[error("undecodable response body: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: Url,
}

impl Client {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        Self::with_http(base_url, reqwest::Client::new())
    }

    pub fn with_http(base_url: &str, http: reqwest::Client) -> Result<Self, ClientError> {
        let base = Url::parse(base_url).map_err(|_| ClientError::InvalidUrl(base_url.to_string()))?;
        if base.cannot_be_a_base() {
            return Err(ClientError::InvalidUrl(base_url.to_string()));
        }
        Ok(Self { http, base })
    }

    fn url(&self, segments: &[&str]) -> Url {
        let mut url = self.base.clone();
        url.path_segments_mut()
            .expect("checked in the constructor")
            .pop_if_empty()
            .extend(segments);
        url
    }

    async fn send<T: DeserializeOwned>(
        &self,
        method: Method,
        url: Url,
        body: Option<&(impl Serialize + ?Sized)>,
    ) -> Result<T, ClientError> {
        let mut req = self.http.request(method, url);
        if let Some(b) = body {
            req = req.json(b);
        }
        let res = req.send().await?;
        let status = res.status();
        let bytes = res.bytes().await?;
        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|e| e.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            return Err(ClientError::Api { status, message });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn get<T: DeserializeOwned>(&self, url: Url) -> Result<T, ClientError> {
        self.send(Method::GET, url, None::<&()>).await
    }

    pub async fn submit(&self, request: &SubmitRequest) -> Result<SubmitResponse, ClientError> {
        self.send(Method::POST, self.url(&["responses"]), Some(request)).await
    }

    pub async fn grade(&self, response_id: &str) -> Result<GradeView, ClientError> {
        self.get(self.url(&["grades", response_id])).await
    }

    pub async fn review_queue(&self) -> Result<Vec<ReviewItem>, ClientError> {
        self.get(self.url(&["review", "queue"])).await
    }

    pub async fn override_grade(&self, response_id: &str, request: &OverrideRequest) -> Result<GradeView, ClientError> {
        self.send(
            Method::POST,
            self.url(&["review", response_id, "override"]),
            Some(request),
        )
        .await
    }

    pub async fn open_appeal(&self, response_id: &str, request: &AppealRequest) -> Result<GradeView, ClientError> {
        self.send(Method::POST, self.url(&["appeals", response_id]), Some(request))
            .await
    }

    pub async fn resolve_appeal(
        &self,
        response_id: &str,
        request: &ResolveAppealRequest,
    ) -> Result<GradeView, ClientError> {
        self.send(
            Method::POST,
            self.url(&["appeals", response_id, "resolve"]),
            Some(request),
        )
        .await
    }

    pub async fn verify_audit(&self) -> Result<VerifyOutcome, ClientError> {
        self.get(self.url(&["audit", "verify"])).await
    }

    pub async fn audit_records(&self, response_id: Option<&str>) -> Result<Vec<AuditRecordView>, ClientError> {
        let mut url = self.url(&["audit", "records"]);
        if let Some(id) = response_id {
            url.query_pairs_mut().append_pair("response_id", id);
        }
        self.get(url).await
    }

    pub async fn agreement(&self) -> Result<AgreementReport, ClientError> {
        self.get(self.url(&["metrics", "agreement"])).await
    }

    pub async fn evidence(&self, id: &str) -> Result<EvidenceView, ClientError> {
        self.get(self.url(&["evidence", id])).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn urls_join_and_escape() {
        let c = Client::new("http://localhost:8080/").unwrap();
        assert_eq!(
            c.url(&["grades", "a/b c"]).as_str(),
            "http://localhost:8080/grades/a%2Fb%20c"
        );
        let c = Client::new("http://host/api").unwrap();
        assert_eq!(c.url(&["review", "queue"]).as_str(), "http://host/api/review/queue");
    }

    #[test]
    fn rejects_bad_base() {
        assert!(matches!(Client::new("not a url"), Err(ClientError::InvalidUrl(_))));
        assert!(matches!(Client::new("mailto:x@y"), Err(ClientError::InvalidUrl(_))));
    }
}
