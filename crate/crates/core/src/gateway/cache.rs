use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

static TMP_SEQ: AtomicU64 = AtomicU64::new(0);

/// Content-addressed response cache. On disk, each entry is a file named by
/// the request hash; the in-memory layer fronts it.
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, Vec<u8>>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            dir: None,
            memory: Mutex::new(HashMap::new()),
        }
    }

    pub fn on_disk(dir: PathBuf) -> io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache {
            dir: Some(dir),
            memory: Mutex::new(HashMap::new()),
        })
    }

    pub fn get(&self, key: &str) -> io::Result<Option<Vec<u8>>> {
        if let Some(hit) = self.memory.lock().unwrap().get(key) {
            return Ok(Some(hit.clone()));
        }
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        match fs::read(dir.join(key)) {
            Ok(bytes) => {
                self.memory.lock().unwrap().insert(key.to_string(), bytes.clone());
                Ok(Some(bytes))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, key: &str, value: &[u8]) -> io::Result<()> {
        if let Some(dir) = &self.dir {
            let seq = TMP_SEQ.fetch_add(1, Ordering::Relaxed);
            let tmp = dir.join(format!(".{key}.{}.{seq}.tmp", std::process::id()));
            {
                let mut f = fs::File::create(&tmp)?;
                f.write_all(value)?;
                f.sync_all()?;
            }
            fs::rename(&tmp, dir.join(key))?;
        }
        self.memory.lock().unwrap().insert(key.to_string(), value.to_vec());
        Ok(())
    }
}
