use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{heuristic_importance, ImportanceMap};
use crate::imaging::RgbImage;
use crate::rasterizer::Framebuffer;

pub const IMPORTANCE_PROVIDER_ENV: &str = "IMPORTANCE_PROVIDER_URL";
const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("provider answered HTTP {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("map is {got_rows}x{got_cols}, requested {rows}x{cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
}

/// One importance query: the current frame as PNG plus the scene prompt.
#[derive(Debug, Clone, Copy)]
pub struct ImportanceRequest<'a> {
    pub image_png: &'a [u8],
    pub prompt: &'a str,
    pub rows: usize,
    pub cols: usize,
}

/// A source of per-tile saliency, typically a vision-language model behind
/// an HTTP endpoint. Returns `rows` rows of `cols` values.
pub trait ImportanceProvider: Send + Sync {
    fn importance(&self, request: &ImportanceRequest<'_>) -> Result<Vec<Vec<f32>>, ProviderError>;
}

/// `POST {url}` with `{ "image_png_base64", "prompt", "rows", "cols" }`,
/// expecting `{ "map": [[...], ...] }`.
pub struct HttpImportanceProvider {
    url: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    image_png_base64: String,
    prompt: &'a str,
    rows: usize,
    cols: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    map: Vec<Vec<f32>>,
}

impl HttpImportanceProvider {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
        }
    }

    /// Reads [`IMPORTANCE_PROVIDER_ENV`]; `None` when unset or empty.
    pub fn from_env() -> Option<Self> {
        std::env::var(IMPORTANCE_PROVIDER_ENV)
            .ok()
            .filter(|u| !u.trim().is_empty())
            .map(|url| Self::new(url, DEFAULT_TIMEOUT))
    }
}

impl ImportanceProvider for HttpImportanceProvider {
    fn importance(&self, request: &ImportanceRequest<'_>) -> Result<Vec<Vec<f32>>, ProviderError> {
        let body = WireRequest {
            image_png_base64: base64::engine::general_purpose::STANDARD.encode(request.image_png),
            prompt: request.prompt,
            rows: request.rows,
            cols: request.cols,
        };
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if status != 200 {
            return Err(ProviderError::Status(status));
        }
        let parsed: WireResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Malformed(e.to_string()))?;
        Ok(parsed.map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceSource {
    Provider,
    Heuristic,
}

impl ImportanceSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ImportanceSource::Provider => "provider",
            ImportanceSource::Heuristic => "heuristic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceOutcome {
    pub map: ImportanceMap,
    pub source: ImportanceSource,
    /// Why the provider result was not used, if it was tried.
    pub diagnostic: Option<String>,
}

fn validate_grid(
    grid: Vec<Vec<f32>>,
    rows: usize,
    cols: usize,
) -> Result<ImportanceMap, ProviderError> {
    let got_cols = grid.first().map_or(0, Vec::len);
    if grid.len() != rows || grid.iter().any(|r| r.len() != cols) {
        return Err(ProviderError::ShapeMismatch {
            rows,
            cols,
            got_rows: grid.len(),
            got_cols,
        });
    }
    let mut values = Vec::with_capacity(rows * cols);
    for v in grid.into_iter().flatten() {
        if !v.is_finite() {
            return Err(ProviderError::Malformed(
                "non-finite importance value".to_string(),
            ));
        }
        values.push(v.clamp(0.0, 1.0));
    }
    ImportanceMap::new(rows, cols, values).map_err(|e| ProviderError::Malformed(e.to_string()))
}

/// Asks the provider for a map and falls back to [`heuristic_importance`]
/// on any failure, so the result always has the requested shape.
pub fn query_provider(
    frame: Option<&Framebuffer>,
    prompt: &str,
    provider: Option<&dyn ImportanceProvider>,
    rows: usize,
    cols: usize,
) -> ImportanceOutcome {
    let rows = rows.max(1);
    let cols = cols.max(1);
    let fallback = |diagnostic: Option<String>| ImportanceOutcome {
        map: heuristic_importance(frame, rows, cols).expect("dims are at least 1x1"),
        source: ImportanceSource::Heuristic,
        diagnostic,
    };
    let Some(provider) = provider else {
        return fallback(None);
    };
    let png = match frame
        .map(|f| RgbImage::from_framebuffer(f).encode_png())
        .transpose()
    {
        Ok(png) => png.unwrap_or_default(),
        Err(e) => return fallback(Some(e.to_string())),
    };
    let request = ImportanceRequest {
        image_png: &png,
        prompt,
        rows,
        cols,
    };
    match provider
        .importance(&request)
        .and_then(|grid| validate_grid(grid, rows, cols))
    {
        Ok(map) => ImportanceOutcome {
            map,
            source: ImportanceSource::Provider,
            diagnostic: None,
        },
        Err(e) => {
            tracing::warn!(error = %e, "importance provider failed; using heuristic map");
            fallback(Some(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<Vec<f32>>);

    impl ImportanceProvider for Fixed {
        fn importance(&self, _: &ImportanceRequest<'_>) -> Result<Vec<Vec<f32>>, ProviderError> {
            Ok(self.0.clone())
        }
    }

    struct Down;

    impl ImportanceProvider for Down {
        fn importance(&self, _: &ImportanceRequest<'_>) -> Result<Vec<Vec<f32>>, ProviderError> {
            Err(ProviderError::Transport("connection refused".into()))
        }
    }

    #[test]
    fn absent_provider_uses_heuristic() {
        let out = query_provider(None, "a cat", None, 3, 4);
        assert_eq!(out.source, ImportanceSource::Heuristic);
        assert_eq!(out.map, heuristic_importance(None, 3, 4).unwrap());
        assert!(out.diagnostic.is_none());
    }

    #[test]
    fn provider_map_is_used() {
        let p = Fixed(vec![vec![1.0; 4]; 3]);
        let out = query_provider(None, "", Some(&p), 3, 4);
        assert_eq!(out.source, ImportanceSource::Provider);
        assert!(out.map.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn provider_values_are_clamped() {
        let p = Fixed(vec![vec![-0.5, 2.0]]);
        let out = query_provider(None, "", Some(&p), 1, 2);
        assert_eq!(out.map.values(), &[0.0, 1.0]);
    }

    #[test]
    fn wrong_shape_falls_back_with_diagnostic() {
        let p = Fixed(vec![vec![1.0; 4]; 2]);
        let out = query_provider(None, "", Some(&p), 3, 4);
        assert_eq!(out.source, ImportanceSource::Heuristic);
        assert!(out.diagnostic.unwrap().contains("requested 3x4"));
        let ragged = Fixed(vec![vec![1.0; 4], vec![1.0; 3], vec![1.0; 4]]);
        assert_eq!(
            query_provider(None, "", Some(&ragged), 3, 4).source,
            ImportanceSource::Heuristic
        );
        let nan = Fixed(vec![vec![f32::NAN]]);
        assert_eq!(
            query_provider(None, "", Some(&nan), 1, 1).source,
            ImportanceSource::Heuristic
        );
    }

    #[test]
    fn transport_failure_falls_back() {
        let fb = Framebuffer::new(32, 16, [0.2; 3]);
        let out = query_provider(Some(&fb), "", Some(&Down), 1, 2);
        assert_eq!(out.source, ImportanceSource::Heuristic);
        assert_eq!((out.map.rows(), out.map.cols()), (1, 2));
    }

    #[test]
    fn unreachable_http_provider_falls_back() {
        // Nothing listens on port 9 of the loopback interface.
        let p = HttpImportanceProvider::new(
            "http://127.0.0.1:9/importance",
            Duration::from_millis(500),
        );
        let out = query_provider(None, "", Some(&p), 2, 2);
        assert_eq!(out.source, ImportanceSource::Heuristic);
        assert!(out.diagnostic.is_some());
    }
}
