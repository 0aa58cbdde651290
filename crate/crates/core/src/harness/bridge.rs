//! Subprocess bridge so a SUT written in any language can attach.
//!
//! Frames are a little-endian `u32` payload length followed by the payload.
//!
//! Harness to SUT (stdin):
//!
//! ```text
//! 0x01 ISSUE  query_id:u64 count:u32 sample_index:u64 * count
//! 0x02 FLUSH
//! 0x03 END    (the SUT exits after answering everything in flight)
//! ```
//!
//! SUT to harness (stdout), one frame per completed query:
//!
//! ```text
//! query_id:u64 count:u32 digest:u64 * count
//! ```

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::thread::JoinHandle;

use crate::scenario::Query;

use super::sut::{Completer, RunInfo, Sut};

const TAG_ISSUE: u8 = 1;
const TAG_FLUSH: u8 = 2;
const TAG_END: u8 = 3;

/// Refuse frames above this size rather than allocating without bound.
const MAX_FRAME: u32 = 1 << 28;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Issue { query_id: u64, sample_indices: Vec<u64> },
    Flush,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub query_id: u64,
    pub digests: Vec<u64>,
}

fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::other("frame too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)
}

/// Reads one frame; `Ok(None)` on a clean end of stream between frames.
fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    Ok(Some(payload))
}

fn put_list(buf: &mut Vec<u8>, id: u64, items: &[u64]) {
    buf.extend_from_slice(&id.to_le_bytes());
    buf.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for x in items {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn take_list(bytes: &[u8]) -> io::Result<(u64, Vec<u64>)> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    if bytes.len() < 12 {
        return Err(bad("short frame"));
    }
    let id = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let rest = &bytes[12..];
    if rest.len() != n * 8 {
        return Err(bad("frame length does not match item count"));
    }
    let items = rest.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((id, items))
}

pub fn write_request(w: &mut impl Write, req: &Request) -> io::Result<()> {
    let mut buf = Vec::new();
    match req {
        Request::Issue { query_id, sample_indices } => {
            buf.push(TAG_ISSUE);
            put_list(&mut buf, *query_id, sample_indices);
        }
        Request::Flush => buf.push(TAG_FLUSH),
        Request::End => buf.push(TAG_END),
    }
    write_frame(w, &buf)
}

pub fn read_request(r: &mut impl Read) -> io::Result<Option<Request>> {
    let Some(frame) = read_frame(r)? else { return Ok(None) };
    match frame.split_first() {
        Some((&TAG_ISSUE, rest)) => {
            let (query_id, sample_indices) = take_list(rest)?;
            Ok(Some(Request::Issue { query_id, sample_indices }))
        }
        Some((&TAG_FLUSH, [])) => Ok(Some(Request::Flush)),
        Some((&TAG_END, [])) => Ok(Some(Request::End)),
        _ => Err(io::Error::new(io::ErrorKind::InvalidData, "unknown request frame")),
    }
}

pub fn write_response(w: &mut impl Write, resp: &Response) -> io::Result<()> {
    let mut buf = Vec::with_capacity(12 + resp.digests.len() * 8);
    put_list(&mut buf, resp.query_id, &resp.digests);
    write_frame(w, &buf)
}

pub fn read_response(r: &mut impl Read) -> io::Result<Option<Response>> {
    let Some(frame) = read_frame(r)? else { return Ok(None) };
    let (query_id, digests) = take_list(&frame)?;
    Ok(Some(Response { query_id, digests }))
}

/// A SUT running in a child process. Wall clock only.
pub struct ProcessSut {
    name: String,
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: Option<ChildStdout>,
    reader: Option<JoinHandle<io::Result<()>>>,
    error: Option<io::Error>,
}

impl ProcessSut {
    /// Spawns `program` with `args`, wiring its stdin/stdout to the bridge.
    pub fn spawn(program: &str, args: &[String]) -> io::Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().map(BufWriter::new);
        let stdout = child.stdout.take();
        Ok(Self { name: program.to_string(), child, stdin, stdout, reader: None, error: None })
    }

    /// First I/O error seen while talking to the child, if any.
    pub fn error(&self) -> Option<&io::Error> {
        self.error.as_ref()
    }

    fn send(&mut self, req: &Request) {
        if self.error.is_some() {
            return;
        }
        let Some(stdin) = self.stdin.as_mut() else { return };
        let result = write_request(stdin, req).and_then(|()| stdin.flush());
        if let Err(e) = result {
            self.error = Some(e);
        }
    }

    fn shutdown(&mut self) {
        self.send(&Request::End);
        self.stdin = None;
        if let Some(handle) = self.reader.take() {
            match handle.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => {
                    self.error.get_or_insert(e);
                }
                Err(_) => {
                    self.error.get_or_insert(io::Error::other("bridge reader panicked"));
                }
            }
        }
        let _ = self.child.wait();
    }
}

impl Sut for ProcessSut {
    fn name(&self) -> &str {
        &self.name
    }

    fn start_run(&mut self, _info: &RunInfo, completer: Completer) {
        let Some(stdout) = self.stdout.take() else {
            self.error.get_or_insert(io::Error::other("process SUT serves a single run"));
            return;
        };
        self.reader = Some(std::thread::spawn(move || {
            let mut r = BufReader::new(stdout);
            while let Some(resp) = read_response(&mut r)? {
                completer.complete(resp.query_id, resp.digests);
            }
            Ok(())
        }));
    }

    fn issue_query(&mut self, query: Query) {
        let sample_indices = query.sample_indices.iter().map(|s| s.0).collect();
        self.send(&Request::Issue { query_id: query.query_id, sample_indices });
    }

    fn flush(&mut self) {
        self.send(&Request::Flush);
    }

    fn end_run(&mut self) {
        self.shutdown();
    }
}

impl Drop for ProcessSut {
    fn drop(&mut self) {
        if self.stdin.is_some() {
            self.stdin = None;
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

/// SUT-side loop: answers each ISSUE with `handler(query_id, indices)` and
/// returns on END or end of input.
pub fn serve(
    input: impl Read,
    output: impl Write,
    mut handler: impl FnMut(u64, &[u64]) -> Vec<u64>,
) -> io::Result<()> {
    let mut input = BufReader::new(input);
    let mut output = BufWriter::new(output);
    while let Some(req) = read_request(&mut input)? {
        match req {
            Request::Issue { query_id, sample_indices } => {
                let digests = handler(query_id, &sample_indices);
                write_response(&mut output, &Response { query_id, digests })?;
                output.flush()?;
            }
            Request::Flush => output.flush()?,
            Request::End => break,
        }
    }
    output.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_frames_round_trip() {
        let reqs = [
            Request::Issue { query_id: 7, sample_indices: vec![1, 2, u64::MAX] },
            Request::Issue { query_id: 8, sample_indices: vec![] },
            Request::Flush,
            Request::End,
        ];
        let mut buf = Vec::new();
        for r in &reqs {
            write_request(&mut buf, r).unwrap();
        }
        let mut cursor = buf.as_slice();
        for r in &reqs {
            assert_eq!(read_request(&mut cursor).unwrap().as_ref(), Some(r));
        }
        assert_eq!(read_request(&mut cursor).unwrap(), None);
    }

    #[test]
    fn issue_frame_layout_is_little_endian() {
        let mut buf = Vec::new();
        write_request(&mut buf, &Request::Issue { query_id: 1, sample_indices: vec![2] }).unwrap();
        let mut expected = vec![21, 0, 0, 0, TAG_ISSUE];
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn serve_answers_each_issue() {
        let mut input = Vec::new();
        write_request(&mut input, &Request::Issue { query_id: 3, sample_indices: vec![10, 11] }).unwrap();
        write_request(&mut input, &Request::Flush).unwrap();
        write_request(&mut input, &Request::End).unwrap();
        let mut output = Vec::new();
        serve(input.as_slice(), &mut output, |_, idx| idx.iter().map(|i| i * 2).collect()).unwrap();
        let mut cursor = output.as_slice();
        assert_eq!(read_response(&mut cursor).unwrap(), Some(Response { query_id: 3, digests: vec![20, 22] }));
        assert_eq!(read_response(&mut cursor).unwrap(), None);
    }

    #[test]
    fn malformed_frames_are_rejected() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &[TAG_ISSUE, 1, 2]).unwrap();
        assert!(read_request(&mut buf.as_slice()).is_err());
        let mut buf = Vec::new();
        write_frame(&mut buf, &[9]).unwrap();
        assert!(read_request(&mut buf.as_slice()).is_err());
    }
}
