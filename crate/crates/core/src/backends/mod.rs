//! Model services behind the five JSON endpoints, and the transports that
//! reach them.

pub mod client;
pub mod http;
pub mod mock;
pub mod protocol;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use client::{Client, RetryPolicy};
pub use http::{HttpTransport, MockHttpServer};
pub use mock::{MockBackend, Rule, Scenario};
pub use protocol::Endpoint;

use crate::config::BackendConfig;
use crate::error::{Error, Result};

/// Task names carried in `GenerateRequest::task`.
pub mod tasks {
    pub const CAPTION: &str = "caption";
    pub const TRANSLATE: &str = "translate";
    pub const IDENTIFY_STYLE: &str = "identify_style";
    pub const EXPERT_VOTE: &str = "expert_vote";
    pub const CHAIRMAN: &str = "chairman";
    pub const CLASSIFY_CARD: &str = "classify_card";
    pub const STYLE_SCORE: &str = "style_score";
    pub const REFINE_WEIGHTS: &str = "refine_weights";
}

/// Moves one serialized request to a service and returns the response body.
/// Non-2xx answers surface as [`Error::Status`].
pub trait Transport: Send + Sync {
    fn post(&self, endpoint: Endpoint, body: &[u8]) -> Result<Vec<u8>>;
}

pub const MOCK_SCHEME: &str = "mock://";

/// Per-endpoint dispatch. URLs starting with `mock://` go to one shared
/// in-process [`MockBackend`].
pub struct Router {
    routes: BTreeMap<Endpoint, Arc<dyn Transport>>,
}

impl Router {
    pub fn new(routes: BTreeMap<Endpoint, Arc<dyn Transport>>) -> Result<Self> {
        if let Some(missing) = Endpoint::ALL.into_iter().find(|e| !routes.contains_key(e)) {
            return Err(Error::Config(format!("no backend configured for {missing}")));
        }
        Ok(Self { routes })
    }

    pub fn uniform(transport: Arc<dyn Transport>) -> Self {
        Self {
            routes: Endpoint::ALL.into_iter().map(|e| (e, transport.clone())).collect(),
        }
    }

    pub fn from_urls(
        urls: &BTreeMap<Endpoint, String>,
        mock: Arc<MockBackend>,
        timeout_secs: u64,
        bearer: Option<String>,
    ) -> Result<Self> {
        let mut routes: BTreeMap<Endpoint, Arc<dyn Transport>> = BTreeMap::new();
        for e in Endpoint::ALL {
            let url = urls
                .get(&e)
                .filter(|u| !u.trim().is_empty())
                .ok_or_else(|| Error::Config(format!("no URL configured for {}", e.name())))?;
            let transport: Arc<dyn Transport> = if url.starts_with(MOCK_SCHEME) {
                mock.clone()
            } else if url.starts_with("http://") || url.starts_with("https://") {
                Arc::new(HttpTransport::new(url, timeout_secs, bearer.clone()))
            } else {
                return Err(Error::Config(format!("unsupported {} URL {url:?}", e.name())));
            };
            routes.insert(e, transport);
        }
        Self::new(routes)
    }
}

impl Transport for Router {
    fn post(&self, endpoint: Endpoint, body: &[u8]) -> Result<Vec<u8>> {
        self.routes[&endpoint].post(endpoint, body)
    }
}

/// Client for the configured endpoints. `mock://` endpoints share the
/// returned mock, loaded from the configured scenario (defaults only when
/// none is set).
pub fn connect(cfg: &BackendConfig) -> Result<(Client, Arc<MockBackend>)> {
    let scenario = match &cfg.scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::default(),
    };
    let mock = Arc::new(MockBackend::new(scenario)?);
    let router = Router::from_urls(&cfg.urls(), mock.clone(), cfg.timeout_secs, cfg.bearer_token.clone())?;
    Ok((Client::new(Arc::new(router), cfg.retry_policy()), mock))
}
