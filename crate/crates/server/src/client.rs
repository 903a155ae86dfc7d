//! Headless scripted WebSocket client.

use futures::{SinkExt, StreamExt};
use serde_json::Value;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

pub type ClientError = Box<dyn std::error::Error + Send + Sync>;

pub struct ScriptClient {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl ScriptClient {
    /// Connects and returns the client with the server's opening frames
    /// (a state frame, or an error frame before the server closes).
    pub async fn connect(url: &str) -> Result<(ScriptClient, Vec<Value>), ClientError> {
        let (ws, _) = connect_async(url).await?;
        let mut c = ScriptClient { ws };
        let first = c.next_frame().await?.into_iter().collect();
        Ok((c, first))
    }

    async fn next_frame(&mut self) -> Result<Option<Value>, ClientError> {
        while let Some(msg) = self.ws.next().await {
            match msg? {
                Message::Text(t) => return Ok(Some(serde_json::from_str(&t)?)),
                Message::Close(_) => return Ok(None),
                _ => {}
            }
        }
        Ok(None)
    }

    /// Sends one frame and reads the response up to and including its state frame.
    pub async fn send(&mut self, frame: &Value) -> Result<Vec<Value>, ClientError> {
        self.ws.send(Message::Text(frame.to_string().into())).await?;
        let mut out = Vec::new();
        while let Some(m) = self.next_frame().await? {
            let done = m["type"] == "state";
            out.push(m);
            if done {
                return Ok(out);
            }
        }
        Err("connection closed mid-response".into())
    }

    pub async fn close(mut self) -> Result<(), ClientError> {
        self.ws.close(None).await?;
        Ok(())
    }
}

/// Parses a JSONL script of client frames.
pub fn parse_script(text: &str) -> Result<Vec<Value>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Runs a script on a fresh connection and returns every frame received.
pub async fn run_script(url: &str, script: &[Value]) -> Result<Vec<Value>, ClientError> {
    let (mut c, mut frames) = ScriptClient::connect(url).await?;
    for f in script {
        frames.extend(c.send(f).await?);
    }
    c.close().await?;
    Ok(frames)
}

pub fn to_jsonl(frames: &[Value]) -> String {
    frames.iter().map(|f| format!("{f}\n")).collect()
}
