use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;

use cspaces_core::facade::imap::{imap_handle, ImapSession};

use crate::AppState;

const MAX_LINE: usize = 64 * 1024;

pub async fn serve_imap(listener: TcpListener, state: AppState, mut stopped: watch::Receiver<bool>) {
    loop {
        let accepted = tokio::select! {
            a = listener.accept() => a,
            _ = stopped.wait_for(|s| *s) => return,
        };
        match accepted {
            Ok((stream, peer)) => {
                let (st, rx) = (state.clone(), stopped.clone());
                tokio::spawn(async move {
                    if let Err(e) = connection(stream, st, rx).await {
                        tracing::debug!(%peer, "imap connection ended: {e}");
                    }
                });
            }
            Err(e) => tracing::warn!("imap accept failed: {e}"),
        }
    }
}

async fn connection(stream: TcpStream, state: AppState, mut stopped: watch::Receiver<bool>) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let (rd, mut wr) = stream.into_split();
    let mut rd = BufReader::new(rd);
    wr.write_all(ImapSession::greeting().as_bytes()).await?;
    let mut session = ImapSession::new(&state.user, &state.password);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let mut limited = (&mut rd).take(MAX_LINE as u64);
        let read = tokio::select! {
            n = limited.read_until(b'\n', &mut buf) => Some(n?),
            _ = stopped.wait_for(|s| *s) => None,
        };
        let Some(n) = read else {
            wr.write_all(b"* BYE server shutting down\r\n").await?;
            return Ok(());
        };
        if n == 0 {
            return Ok(());
        }
        if !buf.ends_with(b"\n") {
            wr.write_all(b"* BAD line too long\r\n").await?;
            return Ok(());
        }
        let line = String::from_utf8_lossy(&buf).into_owned();
        let st = state.clone();
        let (reply, back) = tokio::task::spawn_blocking(move || {
            let r = imap_handle(&*st.desk, &mut session, &line, st.now());
            (r, session)
        })
        .await
        .map_err(std::io::Error::other)?;
        session = back;
        wr.write_all(&reply.bytes).await?;
        if reply.close {
            wr.shutdown().await?;
            return Ok(());
        }
    }
}
