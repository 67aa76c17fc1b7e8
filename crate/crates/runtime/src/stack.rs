//! An edge node and a cloud service wired together in one process.

use std::path::{Path, PathBuf};

use remoni_core::nlp::Engine;
use tempfile::TempDir;

use crate::cloud::{self, CloudConfig, CloudError, CloudHandle};
use crate::edge::{self, EdgeConfig, EdgeHandle};

pub struct LocalStack {
    pub cloud: CloudHandle,
    pub edge: EdgeHandle,
    data_dir: PathBuf,
    _temp: Option<TempDir>,
}

impl LocalStack {
    /// Starts on loopback ephemeral ports. Without `data_dir` a temporary
    /// directory is used and removed on drop.
    pub async fn start(engine: Engine, edge_config: Option<EdgeConfig>, data_dir: Option<&Path>) -> Result<Self, CloudError> {
        let (temp, dir) = match data_dir {
            Some(d) => (None, d.to_path_buf()),
            None => {
                let t = tempfile::tempdir()?;
                let p = t.path().to_path_buf();
                (Some(t), p)
            }
        };
        // The edge needs the cloud URL before the cloud runs: reserve a port.
        let mut ec = edge_config.unwrap_or_else(|| EdgeConfig::local(None));
        let cloud_listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        let cloud_addr = cloud_listener.local_addr()?;
        drop(cloud_listener);
        ec.cloud_url = Some(format!("http://{cloud_addr}"));
        let edge = edge::start(ec).await?;
        let cloud = cloud::start(CloudConfig {
            listen: cloud_addr,
            data_dir: dir.clone(),
            edge_url: Some(format!("http://{}", edge.instant_addr)),
            engine,
            static_dir: None,
        })
        .await?;
        Ok(Self {
            cloud,
            edge,
            data_dir: dir,
            _temp: temp,
        })
    }

    pub fn cloud_url(&self) -> String {
        self.cloud.url()
    }

    /// `host:port` of the edge's ingest listener.
    pub fn ingest(&self) -> String {
        self.edge.ingest_addr.to_string()
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub async fn shutdown(self) {
        self.edge.shutdown().await;
        self.cloud.shutdown();
    }
}
