use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;
use tmae::config::Config;
use tmae::io::write_atomic;
use tmae::Result;

/// Provenance record of one command invocation, written when the command
/// starts and rewritten when it finishes.
pub struct RunManifest {
    path: PathBuf,
    command: String,
    config_path: Option<PathBuf>,
    resolved: String,
    seed: u64,
    git: String,
    started: u64,
    finished: Option<u64>,
    status: String,
    outputs: Vec<PathBuf>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

impl RunManifest {
    pub fn start(out_dir: &Path, command: &str, config_path: Option<&Path>, config: &Config) -> Result<Self> {
        let m = RunManifest {
            path: out_dir.join(format!("run_{command}.json")),
            command: command.into(),
            config_path: config_path.map(Path::to_path_buf),
            resolved: config.to_text(),
            seed: config.train.seed,
            git: git_describe(),
            started: now(),
            finished: None,
            status: "running".into(),
            outputs: Vec::new(),
        };
        m.write()?;
        Ok(m)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn finish(mut self, status: &str) -> Result<()> {
        self.finished = Some(now());
        self.status = status.into();
        self.write()
    }

    fn write(&self) -> Result<()> {
        let v = json!({
            "command": self.command,
            "config_path": self.config_path.as_ref().map(|p| p.display().to_string()),
            "config": self.resolved,
            "seed": self.seed,
            "git_describe": self.git,
            "started_unix": self.started,
            "finished_unix": self.finished,
            "status": self.status,
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        let mut text = serde_json::to_string_pretty(&v).expect("json values serialize");
        text.push('\n');
        write_atomic(&self.path, text.as_bytes())
    }
}
