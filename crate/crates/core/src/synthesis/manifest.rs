use serde::{Deserialize, Serialize};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "gif", "webp", "bmp", "ico", "svg", "tiff"];
const SERVER_EXTENSIONS: &[&str] = &["py"];
const PREFERRED_SERVERS: &[&str] = &["app.py", "server.py", "main.py"];

/// Ordered list of relative file paths making up an environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ManifestJson", into = "ManifestJson")]
pub struct FileManifest {
    entries: Vec<String>,
}

/// On-disk and on-wire shape: `{"files": [...]}`.
#[derive(Serialize, Deserialize)]
struct ManifestJson {
    files: Vec<String>,
}

impl TryFrom<ManifestJson> for FileManifest {
    type Error = String;

    fn try_from(raw: ManifestJson) -> Result<Self, String> {
        FileManifest::new(raw.files)
    }
}

impl From<FileManifest> for ManifestJson {
    fn from(m: FileManifest) -> Self {
        ManifestJson { files: m.entries }
    }
}

fn extension(path: &str) -> Option<String> {
    let name = path.rsplit('/').next()?;
    let (stem, ext) = name.rsplit_once('.')?;
    (!stem.is_empty()).then(|| ext.to_ascii_lowercase())
}

fn check_path(path: &str) -> Result<(), String> {
    if path.is_empty() {
        return Err("empty path".into());
    }
    if path.starts_with('/') || path.contains('\\') || path.contains(':') {
        return Err(format!("`{path}` is not a relative posix path"));
    }
    for part in path.split('/') {
        match part {
            "" => return Err(format!("`{path}` has an empty component")),
            "." => return Err(format!("`{path}` is not normalized")),
            ".." => return Err(format!("`{path}` escapes the bundle root")),
            _ => {}
        }
    }
    if let Some(ext) = extension(path) {
        if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            return Err(format!("`{path}` is an image asset"));
        }
    }
    Ok(())
}

fn is_server(path: &str) -> bool {
    !path.contains('/') && extension(path).is_some_and(|e| SERVER_EXTENSIONS.contains(&e.as_str()))
}

fn is_page(path: &str) -> bool {
    extension(path).is_some_and(|e| e == "html" || e == "htm")
}

impl FileManifest {
    pub fn new(entries: Vec<String>) -> Result<Self, String> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            check_path(e)?;
            if !seen.insert(e.as_str()) {
                return Err(format!("duplicate entry `{e}`"));
            }
        }
        if !entries.iter().any(|e| is_server(e)) {
            return Err("manifest has no server entry".into());
        }
        if !entries.iter().any(|e| is_page(e)) {
            return Err("manifest has no page template".into());
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.iter().any(|e| e == path)
    }

    /// The backend entry point: `app.py` if present, else the first root-level server file.
    pub fn server_entry(&self) -> &str {
        PREFERRED_SERVERS
            .iter()
            .find_map(|p| self.entries.iter().find(|e| e == p))
            .or_else(|| self.entries.iter().find(|e| is_server(e)))
            .map(String::as_str)
            .expect("validated manifest has a server entry")
    }

    pub fn position(&self, path: &str) -> Option<usize> {
        self.entries.iter().position(|e| e == path)
    }
}
