//! HTTP transport for victims.
//!
//! `POST /v1/classify` with `{"t","w","h","c","data"}` answers
//! `{"label","probability"}`. Malformed bodies get 400, wrong dims 422,
//! victim failures 500.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Response, Server};

use super::{Victim, VictimResponse};
use crate::error::{Error, Result};
use crate::tensor::{Dims, Label, VideoTensor};

pub const CLASSIFY_PATH: &str = "/v1/classify";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyRequest {
    pub t: usize,
    pub w: usize,
    pub h: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub label: usize,
    pub probability: f64,
}

/// Client for a victim served over HTTP.
pub struct RemoteVictim {
    endpoint: String,
    dims: Dims,
    agent: ureq::Agent,
}

impl RemoteVictim {
    /// `base_url` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base_url: &str, dims: Dims) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        let endpoint = format!("{}{}", base_url.trim_end_matches('/'), CLASSIFY_PATH);
        RemoteVictim { endpoint, dims, agent }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Victim for RemoteVictim {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn classify(&self, x: &VideoTensor) -> Result<VictimResponse> {
        let d = x.dims();
        let body = serde_json::to_string(&ClassifyRequest {
            t: d.t,
            w: d.w,
            h: d.h,
            c: d.c,
            data: x.as_slice().to_vec(),
        })?;
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json")
            .send(body.as_str())
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        match status {
            200 => {
                let parsed: ClassifyResponse = serde_json::from_str(&text)
                    .map_err(|e| Error::RemoteUnavailable(format!("bad response body: {e}")))?;
                if !(0.0..=1.0).contains(&parsed.probability) {
                    return Err(Error::RemoteUnavailable(format!(
                        "probability {} outside [0, 1]",
                        parsed.probability
                    )));
                }
                Ok(VictimResponse { label: Label(parsed.label), probability: parsed.probability })
            }
            400..=499 => Err(Error::RemoteRejected { status, message: text }),
            _ => Err(Error::RemoteUnavailable(format!("HTTP {status}: {text}"))),
        }
    }
}

/// Handle to a running victim server. Dropping it shuts the server down.
pub struct VictimServer {
    addr: SocketAddr,
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
}

impl VictimServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the server stops.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for VictimServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Serve `victim` on `bind` (e.g. `127.0.0.1:0`) from a background thread.
pub fn serve_victim(victim: Arc<dyn Victim>, bind: &str) -> Result<VictimServer> {
    let server = Server::http(bind).map_err(|e| Error::BindFailure(e.to_string()))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::BindFailure("server is not bound to an IP address".into()))?;
    let server = Arc::new(server);
    let worker = Arc::clone(&server);
    let handle = std::thread::spawn(move || {
        for request in worker.incoming_requests() {
            handle_request(victim.as_ref(), request);
        }
    });
    Ok(VictimServer { addr, server, handle: Some(handle) })
}

fn handle_request(victim: &dyn Victim, mut request: tiny_http::Request) {
    let (status, body) = if request.url() != CLASSIFY_PATH {
        (404, error_body("not found"))
    } else if *request.method() != Method::Post {
        (405, error_body("method not allowed"))
    } else {
        let mut raw = String::new();
        match request.as_reader().read_to_string(&mut raw) {
            Err(e) => (400, error_body(&format!("unreadable body: {e}"))),
            Ok(_) => classify_body(victim, &raw),
        }
    };
    let header = Header::from_bytes("Content-Type", "application/json").unwrap();
    let response = Response::from_string(body).with_status_code(status).with_header(header);
    let _ = request.respond(response);
}

fn classify_body(victim: &dyn Victim, raw: &str) -> (u16, String) {
    let req: ClassifyRequest = match serde_json::from_str(raw) {
        Ok(r) => r,
        Err(e) => return (400, error_body(&format!("malformed request: {e}"))),
    };
    let expected = victim.dims();
    let got = Dims { t: req.t, w: req.w, h: req.h, c: req.c };
    if got != expected || req.data.len() != expected.len() {
        return (
            422,
            error_body(&format!(
                "expected dims {expected} ({} values), got {got} ({} values)",
                expected.len(),
                req.data.len()
            )),
        );
    }
    let x = match VideoTensor::new(expected, req.data) {
        Ok(x) => x,
        Err(e) => return (422, error_body(&e.to_string())),
    };
    match victim.classify(&x) {
        Ok(r) => {
            let body = ClassifyResponse { label: r.label.0, probability: r.probability };
            (200, serde_json::to_string(&body).expect("response serializes"))
        }
        Err(e) => (500, error_body(&e.to_string())),
    }
}

fn error_body(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victim::{LinearSoftmaxVictim, QuerySession};

    fn victim(d: Dims) -> Arc<dyn Victim> {
        let w0 = VideoTensor::from_fn(d, |t, w, h, c| (t + w + h + c) as f64 * 0.01);
        let w1 = VideoTensor::from_fn(d, |t, w, _, _| (t as f64 - w as f64) * 0.02);
        Arc::new(LinearSoftmaxVictim::new(vec![w0, w1], vec![0.1, -0.1], 1.0).unwrap())
    }

    #[test]
    fn roundtrip_matches_in_process() {
        let d = Dims::new(2, 3, 2, 1).unwrap();
        let v = victim(d);
        let server = serve_victim(Arc::clone(&v), "127.0.0.1:0").unwrap();
        let remote = RemoteVictim::new(&server.url(), d);
        let x = VideoTensor::from_fn(d, |t, w, h, _| (t * 50 + w * 20 + h * 7) as f64);
        assert_eq!(remote.classify(&x).unwrap(), v.classify(&x).unwrap());
        server.shutdown();
    }

    #[test]
    fn protocol_errors() {
        let d = Dims::new(1, 2, 2, 1).unwrap();
        let server = serve_victim(victim(d), "127.0.0.1:0").unwrap();
        let url = format!("{}{}", server.url(), CLASSIFY_PATH);
        let agent: ureq::Agent =
            ureq::Agent::config_builder().http_status_as_error(false).build().into();

        let resp = agent.post(&url).send("{not json").unwrap();
        assert_eq!(resp.status().as_u16(), 400);

        let bad = r#"{"t":1,"w":2,"h":2,"c":3,"data":[0,0,0,0,0,0,0,0,0,0,0,0]}"#;
        let mut resp = agent.post(&url).send(bad).unwrap();
        assert_eq!(resp.status().as_u16(), 422);
        assert!(resp.body_mut().read_to_string().unwrap().contains("1x2x2x1"));

        // a client with the wrong dims gets the rejection and counts nothing
        let wrong = RemoteVictim::new(&server.url(), Dims::new(1, 2, 2, 3).unwrap());
        let mut s = QuerySession::new(&wrong);
        let err = s.query(&VideoTensor::zeros(Dims::new(1, 2, 2, 3).unwrap())).unwrap_err();
        assert!(matches!(err, Error::RemoteRejected { status: 422, .. }));
        assert_eq!(s.count(), 0);
    }

    #[test]
    fn transport_failure_is_not_counted() {
        let d = Dims::new(1, 1, 1, 1).unwrap();
        // bind then drop to find a port nobody listens on
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let remote = RemoteVictim::new(&format!("http://127.0.0.1:{port}"), d);
        let mut s = QuerySession::new(&remote);
        assert!(matches!(s.query(&VideoTensor::zeros(d)), Err(Error::RemoteUnavailable(_))));
        assert_eq!(s.count(), 0);
    }

    #[test]
    fn bind_failure() {
        let d = Dims::new(1, 1, 1, 1).unwrap();
        let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = taken.local_addr().unwrap().to_string();
        assert!(matches!(serve_victim(victim(d), &addr), Err(Error::BindFailure(_))));
    }
}
