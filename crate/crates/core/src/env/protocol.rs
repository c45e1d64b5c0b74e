//! Line-delimited JSON requests and replies.
//!
//! ```text
//! {"op":"create","image_id":..,"config_overrides":{..}?} -> {"episode_id":..,"prompt":..}
//! {"op":"step","episode_id":..,"response":..}            -> {"kind":"observation",..} | {"kind":"terminal",..}
//! {"op":"close","episode_id":..}                          -> {"trajectory":"<log line>"}
//! failure                                                 -> {"error":CODE,"message":..}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{EnvError, EnvService, StepResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Create {
        image_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config_overrides: Option<Value>,
    },
    Step {
        episode_id: String,
        response: String,
    },
    Close {
        episode_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateReply {
    pub episode_id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloseReply {
    pub trajectory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
    pub message: String,
}

fn error_value(code: &str, message: impl Into<String>) -> Value {
    json!({ "error": code, "message": message.into() })
}

impl EnvService {
    pub fn handle(&self, request: Request) -> Result<Value, EnvError> {
        match request {
            Request::Create {
                image_id,
                config_overrides,
            } => {
                let (episode_id, prompt) =
                    self.create_episode(&image_id, config_overrides.as_ref())?;
                Ok(serde_json::to_value(CreateReply { episode_id, prompt }).expect("serializable"))
            }
            Request::Step {
                episode_id,
                response,
            } => {
                let r = self.step(&episode_id, &response)?;
                Ok(serde_json::to_value(r).expect("serializable"))
            }
            Request::Close { episode_id } => {
                let trajectory = self.close_episode(&episode_id)?;
                Ok(serde_json::to_value(CloseReply { trajectory }).expect("serializable"))
            }
        }
    }

    /// Answer one request line with one reply line (no trailing newline).
    pub fn handle_line(&self, line: &str) -> String {
        let reply = match serde_json::from_str::<Request>(line) {
            Ok(req) => self
                .handle(req)
                .unwrap_or_else(|e| error_value(e.code(), e.to_string())),
            Err(e) => error_value("BAD_REQUEST", format!("malformed request: {e}")),
        };
        reply.to_string()
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{code}: {message}")]
    Server { code: String, message: String },
    #[error("unexpected reply: {0}")]
    Decode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Server { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// Anything that can carry one request line to an environment and bring
/// back one reply line.
pub trait Transport: Send + Sync {
    fn round_trip(&self, line: &str) -> Result<String, ClientError>;
}

impl Transport for EnvService {
    fn round_trip(&self, line: &str) -> Result<String, ClientError> {
        Ok(self.handle_line(line))
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn round_trip(&self, line: &str) -> Result<String, ClientError> {
        (**self).round_trip(line)
    }
}

impl<T: Transport + ?Sized> Transport for &T {
    fn round_trip(&self, line: &str) -> Result<String, ClientError> {
        (**self).round_trip(line)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn round_trip(&self, line: &str) -> Result<String, ClientError> {
        (**self).round_trip(line)
    }
}

/// One TCP connection; calls on it are serialized.
pub struct TcpTransport {
    conn: Mutex<(BufReader<TcpStream>, TcpStream)>,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self {
            conn: Mutex::new((reader, stream)),
        })
    }
}

impl Transport for TcpTransport {
    fn round_trip(&self, line: &str) -> Result<String, ClientError> {
        let mut guard = self.conn.lock().unwrap();
        let (reader, writer) = &mut *guard;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        let mut reply = String::new();
        if reader.read_line(&mut reply)? == 0 {
            return Err(ClientError::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "server closed the connection",
            )));
        }
        Ok(reply.trim_end_matches(['\r', '\n']).to_string())
    }
}

/// Typed wrapper over a transport.
pub struct EnvClient<T> {
    transport: T,
}

impl<T: Transport> EnvClient<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }

    fn call(&self, req: &Request) -> Result<Value, ClientError> {
        let line = serde_json::to_string(req).expect("requests serialize");
        let reply = self.transport.round_trip(&line)?;
        let v: Value =
            serde_json::from_str(&reply).map_err(|e| ClientError::Decode(e.to_string()))?;
        if let Some(code) = v.get("error").and_then(Value::as_str) {
            let message = v.get("message").and_then(Value::as_str).unwrap_or_default();
            return Err(ClientError::Server {
                code: code.to_string(),
                message: message.to_string(),
            });
        }
        Ok(v)
    }

    pub fn create(
        &self,
        image_id: &str,
        overrides: Option<Value>,
    ) -> Result<CreateReply, ClientError> {
        let v = self.call(&Request::Create {
            image_id: image_id.to_string(),
            config_overrides: overrides,
        })?;
        serde_json::from_value(v).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn step(&self, episode_id: &str, response: &str) -> Result<StepResult, ClientError> {
        let v = self.call(&Request::Step {
            episode_id: episode_id.to_string(),
            response: response.to_string(),
        })?;
        serde_json::from_value(v).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn close(&self, episode_id: &str) -> Result<String, ClientError> {
        let v = self.call(&Request::Close {
            episode_id: episode_id.to_string(),
        })?;
        let r: CloseReply =
            serde_json::from_value(v).map_err(|e| ClientError::Decode(e.to_string()))?;
        Ok(r.trajectory)
    }
}
