//! Client side of the guidance service protocol.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::thread;
use std::time::Duration;

use super::protocol::{
    decode_images, encode_evaluate_payload, read_frame, write_frame, LossWeights, Message,
    PROTOCOL_VERSION,
};
use super::{GuidanceProvider, GuidanceRequest, GuidanceResponse, PromptBundle};
use crate::error::{Error, Result};

/// Connection attempts before a transport failure becomes fatal.
pub const CONNECT_ATTEMPTS: u32 = 3;

trait Stream: Read + Write + Send {}
impl<T: Read + Write + Send> Stream for T {}

/// Everything the handshake announces.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionParams {
    pub resolution: usize,
    pub views: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub prompts: PromptBundle,
    pub weights: LossWeights,
    pub directional: bool,
}

pub struct RemoteProvider {
    endpoint: String,
    params: SessionParams,
    stream: Option<Box<dyn Stream>>,
    backoff: Duration,
    feature_layer: Option<String>,
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("endpoint", &self.endpoint)
            .field("connected", &self.stream.is_some())
            .finish()
    }
}

impl RemoteProvider {
    /// Connects and performs the handshake, retrying transport failures.
    ///
    /// `endpoint` is `host:port`, `tcp://host:port` or `unix:/path/to/socket`.
    pub fn connect(endpoint: &str, params: SessionParams) -> Result<Self> {
        Self::connect_with_backoff(endpoint, params, Duration::from_millis(200))
    }

    pub fn connect_with_backoff(endpoint: &str, params: SessionParams, backoff: Duration) -> Result<Self> {
        let mut provider = Self {
            endpoint: endpoint.to_string(),
            params,
            stream: None,
            backoff,
            feature_layer: None,
        };
        provider.with_retries(|p| p.ensure_session().map(|_| ()))?;
        Ok(provider)
    }

    /// Feature layer the service reported in its `ready` reply.
    pub fn feature_layer(&self) -> Option<&str> {
        self.feature_layer.as_deref()
    }

    fn open(&self) -> std::io::Result<Box<dyn Stream>> {
        if let Some(path) = self.endpoint.strip_prefix("unix:") {
            #[cfg(unix)]
            {
                return Ok(Box::new(std::os::unix::net::UnixStream::connect(path)?));
            }
            #[cfg(not(unix))]
            {
                let _ = path;
                return Err(std::io::Error::new(
                    std::io::ErrorKind::Unsupported,
                    "unix sockets are not available on this platform",
                ));
            }
        }
        let addr = self.endpoint.strip_prefix("tcp://").unwrap_or(&self.endpoint);
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Box::new(stream))
    }

    /// Returns a transport error as `Err(Ok(io))` so callers can retry, and
    /// protocol errors as `Err(Err(e))`.
    fn ensure_session(&mut self) -> std::result::Result<&mut Box<dyn Stream>, Attempt> {
        if self.stream.is_none() {
            let mut stream = self.open().map_err(Attempt::Transport)?;
            let p = &self.params;
            let hello = Message::hello(
                p.resolution,
                p.views,
                p.patch_size,
                p.stride,
                &p.prompts,
                p.weights,
                p.directional,
            );
            write_frame(&mut stream, &hello, &[]).map_err(Attempt::Transport)?;
            let (reply, _) = read_frame(&mut stream)
                .map_err(Attempt::Transport)?
                .map_err(Attempt::Fatal)?;
            match reply {
                Message::Ready { version, feature_layer } => {
                    if version != PROTOCOL_VERSION {
                        return Err(Attempt::Fatal(Error::VersionMismatch {
                            expected: PROTOCOL_VERSION,
                            got: version,
                        }));
                    }
                    self.feature_layer = Some(feature_layer);
                }
                Message::Error { message } => {
                    return Err(Attempt::Fatal(Error::Protocol(format!("handshake refused: {message}"))));
                }
                other => {
                    return Err(Attempt::Fatal(Error::Protocol(format!(
                        "expected ready, got {other:?}"
                    ))));
                }
            }
            self.stream = Some(stream);
        }
        Ok(self.stream.as_mut().unwrap())
    }

    fn with_retries<T>(&mut self, mut op: impl FnMut(&mut Self) -> std::result::Result<T, Attempt>) -> Result<T> {
        let mut delay = self.backoff;
        let mut last = None;
        for attempt in 0..CONNECT_ATTEMPTS {
            match op(self) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => {
                    self.stream = None;
                    return Err(e);
                }
                Err(Attempt::Transport(e)) => {
                    self.stream = None;
                    last = Some(e);
                    if attempt + 1 < CONNECT_ATTEMPTS {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(Error::ProviderUnavailable(format!(
            "{} after {CONNECT_ATTEMPTS} attempts: {}",
            self.endpoint,
            last.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    fn exchange(&mut self, request: &GuidanceRequest) -> std::result::Result<GuidanceResponse, Attempt> {
        let payload = encode_evaluate_payload(request);
        let msg = Message::Evaluate {
            iteration: request.iteration,
            payload_bytes: payload.len(),
        };
        let stream = self.ensure_session()?;
        write_frame(stream, &msg, &payload).map_err(Attempt::Transport)?;
        let (reply, body) = read_frame(stream)
            .map_err(Attempt::Transport)?
            .map_err(Attempt::Fatal)?;
        match reply {
            Message::Result {
                semantic_loss,
                vc_loss,
                ..
            } => {
                let gradients = decode_images(&body, request.views.len(), request.resolution)
                    .map_err(Attempt::Fatal)?
                    .into_iter()
                    .map(|g| g.into_iter().map(f64::from).collect())
                    .collect();
                Ok(GuidanceResponse {
                    semantic_loss,
                    vc_loss,
                    gradients,
                })
            }
            Message::Error { message } => Err(Attempt::Fatal(Error::Protocol(format!("service error: {message}")))),
            other => Err(Attempt::Fatal(Error::Protocol(format!("expected result, got {other:?}")))),
        }
    }

    /// Sends `shutdown` and drops the connection.
    pub fn shutdown(&mut self) {
        if let Some(mut s) = self.stream.take() {
            let _ = write_frame(&mut s, &Message::Shutdown, &[]);
        }
    }
}

enum Attempt {
    Transport(std::io::Error),
    Fatal(Error),
}

impl GuidanceProvider for RemoteProvider {
    fn evaluate(&mut self, request: &GuidanceRequest) -> Result<GuidanceResponse> {
        request.validate()?;
        if request.resolution != self.params.resolution || request.views.len() != self.params.views {
            return Err(Error::Shape(format!(
                "request is {} views at {}², session was opened for {} at {}²",
                request.views.len(),
                request.resolution,
                self.params.views,
                self.params.resolution
            )));
        }
        let response = self.with_retries(|p| p.exchange(request))?;
        response.validate(request)?;
        Ok(response)
    }
}

impl Drop for RemoteProvider {
    fn drop(&mut self) {
        self.shutdown();
    }
}
