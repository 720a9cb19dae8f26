use supertask_service::{MessageKind, WireMessage};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpStream, ToSocketAddrs};

use crate::{ClientError, Exchange};

/// A newline-delimited JSON connection to the service socket.
pub struct TcpClient {
    lines: Lines<BufReader<OwnedReadHalf>>,
    write: OwnedWriteHalf,
}

impl TcpClient {
    pub async fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (read, write) = stream.into_split();
        Ok(TcpClient {
            lines: BufReader::new(read).lines(),
            write,
        })
    }

    /// Sends one line and reads replies until the batch ends.
    pub async fn send(&mut self, msg: &WireMessage) -> Result<Vec<WireMessage>, ClientError> {
        let mut line =
            serde_json::to_string(msg).map_err(|e| ClientError::Protocol(e.to_string()))?;
        line.push('\n');
        self.write.write_all(line.as_bytes()).await?;
        self.read_batch(msg.kind).await
    }

    async fn read_batch(&mut self, request: MessageKind) -> Result<Vec<WireMessage>, ClientError> {
        let mut replies = Vec::new();
        loop {
            let Some(line) = self.lines.next_line().await? else {
                return Err(ClientError::Protocol("connection closed mid-batch".into()));
            };
            let msg: WireMessage = serde_json::from_str(&line)
                .map_err(|e| ClientError::Protocol(format!("bad server line: {e}")))?;
            let done = msg.ends_batch(request);
            replies.push(msg);
            if done {
                return Ok(replies);
            }
        }
    }
}

impl Exchange for TcpClient {
    async fn exchange(&mut self, msg: &WireMessage) -> Result<Vec<WireMessage>, ClientError> {
        self.send(msg).await
    }
}
