//! Lossless line capture of a child's stdout.
//!
//! The pipe is switched to non-blocking mode. A background thread polls it and
//! appends complete lines under a mutex; `collect` takes the same mutex and
//! reads whatever is still in the pipe itself, so any byte written before the
//! call is visible to it.

use std::io::{BufRead, BufReader, Read};
use std::os::fd::AsRawFd;
use std::process::{ChildStderr, ChildStdout};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

struct State {
    pipe: Option<ChildStdout>,
    partial: Vec<u8>,
    lines: Vec<String>,
    eof: bool,
}

impl State {
    /// Reads until the pipe would block or hits EOF.
    fn pump(&mut self) {
        let Some(pipe) = self.pipe.as_mut() else { return };
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) => {
                    self.eof = true;
                    break;
                }
                Ok(n) => self.partial.extend_from_slice(&buf[..n]),
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => break,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(_) => {
                    self.eof = true;
                    break;
                }
            }
        }
        while let Some(pos) = self.partial.iter().position(|&b| b == b'\n') {
            let line: Vec<u8> = self.partial.drain(..=pos).collect();
            self.lines.push(String::from_utf8_lossy(&line[..line.len() - 1]).into_owned());
        }
        if self.eof {
            if !self.partial.is_empty() {
                let rest = std::mem::take(&mut self.partial);
                self.lines.push(String::from_utf8_lossy(&rest).into_owned());
            }
            self.pipe = None;
        }
    }
}

pub(crate) struct StdoutCapture {
    state: Arc<Mutex<State>>,
    reader: Option<JoinHandle<()>>,
}

fn set_nonblocking(fd: i32) -> std::io::Result<()> {
    // SAFETY: fcntl on a file descriptor we own; no memory is passed.
    unsafe {
        let flags = libc::fcntl(fd, libc::F_GETFL);
        if flags < 0 || libc::fcntl(fd, libc::F_SETFL, flags | libc::O_NONBLOCK) < 0 {
            return Err(std::io::Error::last_os_error());
        }
    }
    Ok(())
}

fn wait_readable(fd: i32, timeout_ms: i32) {
    let mut pfd = libc::pollfd { fd, events: libc::POLLIN, revents: 0 };
    // SAFETY: single pollfd on the stack, count matches.
    unsafe {
        libc::poll(&mut pfd, 1, timeout_ms);
    }
}

impl StdoutCapture {
    pub fn start(pipe: ChildStdout) -> std::io::Result<Self> {
        let fd = pipe.as_raw_fd();
        set_nonblocking(fd)?;
        let state =
            Arc::new(Mutex::new(State { pipe: Some(pipe), partial: Vec::new(), lines: Vec::new(), eof: false }));
        let shared = Arc::clone(&state);
        let reader = std::thread::Builder::new().name("envpool-stdout".into()).spawn(move || loop {
            // The fd stays open while `pipe` is Some, which only this thread and
            // `collect` clear, both under the lock.
            {
                let mut st = shared.lock().unwrap();
                st.pump();
                if st.eof {
                    break;
                }
            }
            wait_readable(fd, 25);
        })?;
        Ok(Self { state, reader: Some(reader) })
    }

    /// All lines at positions `>= from`, including any still in the pipe.
    pub fn lines_from(&self, from: usize) -> Vec<String> {
        let mut st = self.state.lock().unwrap();
        st.pump();
        st.lines.get(from..).map(<[String]>::to_vec).unwrap_or_default()
    }

    /// Waits for EOF (bounded) after the child has exited, then stops the reader.
    pub fn finish(&mut self, timeout: Duration) {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            {
                let mut st = self.state.lock().unwrap();
                st.pump();
                if st.eof {
                    break;
                }
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        {
            let mut st = self.state.lock().unwrap();
            // A grandchild holding the pipe open must not keep the reader alive.
            if !st.eof {
                st.eof = true;
                st.pipe = None;
            }
        }
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StdoutCapture {
    fn drop(&mut self) {
        if self.reader.is_some() {
            self.finish(Duration::from_millis(0));
        }
    }
}

/// Plain background collection of stderr for diagnostics.
pub(crate) struct StderrCapture {
    lines: Arc<Mutex<Vec<String>>>,
}

impl StderrCapture {
    pub fn start(pipe: ChildStderr) -> Self {
        let lines = Arc::new(Mutex::new(Vec::new()));
        let shared = Arc::clone(&lines);
        std::thread::spawn(move || {
            for line in BufReader::new(pipe).split(b'\n').map_while(Result::ok) {
                shared.lock().unwrap().push(String::from_utf8_lossy(&line).into_owned());
            }
        });
        Self { lines }
    }

    pub fn snapshot(&self) -> Vec<String> {
        self.lines.lock().unwrap().clone()
    }
}
