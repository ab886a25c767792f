#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use synthline::episode::TaskContext;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn task_path(name: &str) -> PathBuf {
    fixtures().join("configs/tasks").join(name)
}

pub fn load(name: &str) -> Arc<TaskContext> {
    let root = fixtures();
    Arc::new(TaskContext::load(&task_path(name), Some(&root.join("configs")), &root.join("assets")).expect("fixture loads"))
}
