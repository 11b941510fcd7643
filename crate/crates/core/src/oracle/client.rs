use std::collections::HashSet;
use std::time::Duration;

use super::wire::{ErrorKind, ErrorResponse, QueryRequest, QueryResponse};
use super::{QueryBudget, RankingOracle};
use crate::domain::{CandidateId, QueryImage, RankingList, VisibleRange};
use crate::error::{Error, Result};

/// Client for a ranking service speaking the `/v1/query` protocol.
///
/// Holds its own query budget so an attack can never overspend even when the
/// server is more generous.
#[derive(Debug)]
pub struct RemoteOracle {
    agent: ureq::Agent,
    endpoint: String,
    token: String,
    top_k: usize,
    budget: QueryBudget,
    retries: u32,
    backoff: Duration,
}

impl RemoteOracle {
    pub fn new(endpoint: impl Into<String>, token: impl Into<String>, top_k: usize, limit: u64) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
            endpoint: endpoint.into(),
            token: token.into(),
            top_k,
            budget: QueryBudget::new(limit),
            retries: 3,
            backoff: Duration::from_millis(50),
        }
    }

    pub fn with_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    fn post(&self, body: &QueryRequest) -> Result<QueryResponse> {
        let mut attempt = 0;
        loop {
            match self.agent.post(&self.endpoint).send_json(body) {
                Ok(resp) => {
                    return resp
                        .into_json::<QueryResponse>()
                        .map_err(|e| Error::Schema(format!("bad response body: {e}")));
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let detail = resp.into_string().unwrap_or_default();
                    return Err(match serde_json::from_str::<ErrorResponse>(&detail) {
                        Ok(ErrorResponse {
                            error: ErrorKind::BudgetExhausted,
                            detail,
                        }) => Error::RemoteBudgetExhausted(detail),
                        Ok(ErrorResponse {
                            error: ErrorKind::BadRequest,
                            detail,
                        }) => Error::BadRequest(format!("{code}: {detail}")),
                        Err(_) => Error::Schema(format!("status {code} with body {detail:?}")),
                    });
                }
                Err(ureq::Error::Transport(t)) => {
                    if attempt >= self.retries {
                        return Err(Error::Transport(t.to_string()));
                    }
                    attempt += 1;
                    log::debug!("retrying query after transport error ({attempt}/{}): {t}", self.retries);
                    std::thread::sleep(self.backoff * attempt);
                }
            }
        }
    }
}

impl RankingOracle for RemoteOracle {
    fn query(&self, q: &QueryImage) -> Result<RankingList> {
        self.budget.try_consume()?;
        let body = QueryRequest {
            token: self.token.clone(),
            query: q.pixels().to_vec(),
            top_k: self.top_k,
        };
        let resp = match self.post(&body) {
            Ok(r) => r,
            // the server refused before charging; a transport failure may have been charged
            Err(e @ (Error::RemoteBudgetExhausted(_) | Error::BadRequest(_))) => {
                self.budget.release();
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if resp.ranking.len() > self.top_k {
            return Err(Error::Schema(format!(
                "asked for {} results, got {}",
                self.top_k,
                resp.ranking.len()
            )));
        }
        let mut seen = HashSet::with_capacity(resp.ranking.len());
        if !resp.ranking.iter().all(|id| seen.insert(id.as_str())) {
            return Err(Error::Schema("ranking contains duplicate ids".into()));
        }
        Ok(RankingList::from_unique(
            resp.ranking.into_iter().map(CandidateId::new).collect(),
        ))
    }

    fn queries_used(&self) -> u64 {
        self.budget.used()
    }

    fn query_limit(&self) -> u64 {
        self.budget.limit()
    }

    fn visible_range(&self) -> VisibleRange {
        VisibleRange::Top(self.top_k)
    }
}
