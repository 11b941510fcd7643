use std::collections::HashMap;
use std::io::Read;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{SystemTime, UNIX_EPOCH};

use tiny_http::{Header, Method, Request, Response};

use super::wire::{ErrorKind, ErrorResponse, QueryRequest, QueryResponse, QUERY_PATH};
use super::{rank, EmbeddingDatabase, RankingModel};
use crate::domain::{QueryImage, VisibleRange};
use crate::error::{Error, Result};

const MAX_BODY_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerConfig {
    pub visible_range: VisibleRange,
    /// Queries each token may issue per UTC day; `None` is unlimited.
    pub daily_limit: Option<u64>,
    pub workers: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            visible_range: VisibleRange::Top(50),
            daily_limit: Some(500),
            workers: 4,
        }
    }
}

/// Per-token query counts, reset when the day index changes.
#[derive(Debug, Default)]
pub struct BudgetLedger {
    limit: Option<u64>,
    counts: Mutex<HashMap<String, (u64, u64)>>,
}

impl BudgetLedger {
    pub fn new(limit: Option<u64>) -> Self {
        Self {
            limit,
            counts: Mutex::new(HashMap::new()),
        }
    }

    /// Charges one query to `token` on `day`; returns the count so far today.
    pub fn charge(&self, token: &str, day: u64) -> std::result::Result<u64, u64> {
        let mut counts = self.counts.lock().unwrap_or_else(|e| e.into_inner());
        let entry = counts.entry(token.to_string()).or_insert((day, 0));
        if entry.0 != day {
            *entry = (day, 0);
        }
        match self.limit {
            Some(limit) if entry.1 >= limit => Err(entry.1),
            _ => {
                entry.1 += 1;
                Ok(entry.1)
            }
        }
    }

    pub fn used(&self, token: &str) -> u64 {
        let counts = self.counts.lock().unwrap_or_else(|e| e.into_inner());
        counts.get(token).map_or(0, |&(_, n)| n)
    }
}

fn utc_day() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() / 86_400)
        .unwrap_or(0)
}

struct Shared {
    model: Arc<RankingModel>,
    db: Arc<EmbeddingDatabase>,
    config: ServerConfig,
    ledger: BudgetLedger,
}

/// HTTP front end that serves truncated rankings over the wire protocol.
pub struct OracleServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl OracleServer {
    pub fn serve(
        model: Arc<RankingModel>,
        db: Arc<EmbeddingDatabase>,
        bind: &str,
        config: ServerConfig,
    ) -> Result<Self> {
        if db.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if db.dim() != model.embed_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.embed_dim(),
                got: db.dim(),
            });
        }
        let server = tiny_http::Server::http(bind)
            .map_err(|e| Error::Transport(format!("cannot bind {bind}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Transport("server is not listening on an IP socket".into()))?;
        let server = Arc::new(server);
        let shared = Arc::new(Shared {
            model,
            db,
            ledger: BudgetLedger::new(config.daily_limit),
            config,
        });
        let workers = (0..config.workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let shared = Arc::clone(&shared);
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        handle(&shared, request);
                    }
                })
            })
            .collect();
        log::info!("oracle listening on {addr}");
        Ok(Self {
            addr,
            server,
            shared,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}{}", self.addr, QUERY_PATH)
    }

    pub fn queries_used(&self, token: &str) -> u64 {
        self.shared.ledger.used(token)
    }

    /// Blocks until the worker threads exit, which only happens on shutdown.
    pub fn join(self) {
        for w in self.workers {
            let _ = w.join();
        }
    }

    pub fn shutdown(self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers {
            let _ = w.join();
        }
    }
}

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    Response::from_string(body).with_status_code(status).with_header(header)
}

fn error_body(kind: ErrorKind, detail: impl Into<String>) -> String {
    serde_json::to_string(&ErrorResponse {
        error: kind,
        detail: detail.into(),
    })
    .expect("error body serializes")
}

fn handle(shared: &Shared, mut request: Request) {
    let (status, body) = respond(shared, &mut request);
    if let Err(e) = request.respond(json_response(status, body)) {
        log::warn!("failed to send response: {e}");
    }
}

fn respond(shared: &Shared, request: &mut Request) -> (u16, String) {
    if request.url() != QUERY_PATH {
        return (404, error_body(ErrorKind::BadRequest, format!("unknown path {}", request.url())));
    }
    if *request.method() != Method::Post {
        return (405, error_body(ErrorKind::BadRequest, "use POST"));
    }
    let mut raw = String::new();
    if let Err(e) = request.as_reader().take(MAX_BODY_BYTES).read_to_string(&mut raw) {
        return (400, error_body(ErrorKind::BadRequest, format!("unreadable body: {e}")));
    }
    let req: QueryRequest = match serde_json::from_str(&raw) {
        Ok(r) => r,
        Err(e) => return (400, error_body(ErrorKind::BadRequest, format!("malformed request: {e}"))),
    };
    if req.top_k == 0 {
        return (400, error_body(ErrorKind::BadRequest, "top_k must be positive"));
    }
    if req.query.len() != shared.model.query_dim() {
        return (
            400,
            error_body(
                ErrorKind::BadRequest,
                format!("query has {} values, expected {}", req.query.len(), shared.model.query_dim()),
            ),
        );
    }
    let query = match QueryImage::new(req.query) {
        Ok(q) => q,
        Err(e) => return (400, error_body(ErrorKind::BadRequest, e.to_string())),
    };
    if let Err(used) = shared.ledger.charge(&req.token, utc_day()) {
        return (
            429,
            error_body(ErrorKind::BudgetExhausted, format!("token has used {used} queries today")),
        );
    }
    let range = match shared.config.visible_range {
        VisibleRange::Top(n) => VisibleRange::Top(n.min(req.top_k)),
        VisibleRange::Unbounded => VisibleRange::Top(req.top_k),
    };
    match rank(&shared.model, &shared.db, &query, range) {
        Ok(list) => {
            let ranking = list.entries().iter().map(|c| c.as_str().to_string()).collect();
            (200, serde_json::to_string(&QueryResponse { ranking }).expect("response serializes"))
        }
        Err(e) => (400, error_body(ErrorKind::BadRequest, e.to_string())),
    }
}
