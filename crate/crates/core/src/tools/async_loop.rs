//! The client's single scheduling context: a current-thread runtime on a
//! dedicated OS thread. Callers block on a channel for their own result only.

use std::future::Future;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;

use tokio::runtime::{Builder, Handle};
use tokio::sync::oneshot;

use super::ToolError;

pub struct AsyncLoop {
    handle: Handle,
    down: Arc<AtomicBool>,
    stop: Mutex<Option<oneshot::Sender<()>>>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl AsyncLoop {
    pub fn start() -> std::io::Result<Self> {
        let runtime = Builder::new_current_thread().enable_all().build()?;
        let handle = runtime.handle().clone();
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name("tool-client".into())
            .spawn(move || {
                runtime.block_on(async {
                    let _ = stop_rx.await;
                });
            })?;
        Ok(AsyncLoop {
            handle,
            down: Arc::new(AtomicBool::new(false)),
            stop: Mutex::new(Some(stop_tx)),
            thread: Mutex::new(Some(thread)),
        })
    }

    pub fn is_down(&self) -> bool {
        self.down.load(Ordering::SeqCst)
    }

    /// Spawns `fut` on the loop and returns a receiver for its output.
    pub fn spawn<T, F>(&self, fut: F) -> Result<mpsc::Receiver<T>, ToolError>
    where
        T: Send + 'static,
        F: Future<Output = T> + Send + 'static,
    {
        if self.is_down() {
            return Err(ToolError::SchedulerDown);
        }
        let (tx, rx) = mpsc::sync_channel(1);
        self.handle.spawn(async move {
            let _ = tx.send(fut.await);
        });
        Ok(rx)
    }

    /// Runs `fut` on the loop, blocking only the caller.
    pub fn block_on<T, F>(&self, fut: F) -> Result<T, ToolError>
    where
        T: Send + 'static,
        F: Future<Output = T> + Send + 'static,
    {
        self.spawn(fut)?.recv().map_err(|_| ToolError::SchedulerDown)
    }

    pub fn shutdown(&self) {
        self.down.store(true, Ordering::SeqCst);
        if let Some(stop) = self.stop.lock().unwrap_or_else(|p| p.into_inner()).take() {
            let _ = stop.send(());
        }
        if let Some(thread) = self.thread.lock().unwrap_or_else(|p| p.into_inner()).take() {
            let _ = thread.join();
        }
    }
}

impl Drop for AsyncLoop {
    fn drop(&mut self) {
        self.shutdown();
    }
}
