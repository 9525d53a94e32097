//! Media references to base64 data URLs.

use std::path::Path;

use base64::Engine;
use serde_json::Value;

use crate::error::{GraspError, Result};

fn mime_from_extension(path: &str) -> Option<&'static str> {
    let ext = path.rsplit('.').next()?.to_ascii_lowercase();
    Some(match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "bmp" => "image/bmp",
        "wav" => "audio/wav",
        "mp3" => "audio/mpeg",
        "ogg" => "audio/ogg",
        "flac" => "audio/flac",
        "m4a" => "audio/mp4",
        _ => return None,
    })
}

pub fn to_data_url(bytes: &[u8], mime: &str) -> String {
    format!(
        "data:{mime};base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    )
}

/// Encode a media reference as a `data:<mime>;base64,<payload>` URL.
///
/// Accepts a data URL (returned unchanged), an `http(s)` URL (fetched), a
/// local file path, or a `{path|url, mime}` object. Relative paths resolve
/// against `base`.
pub fn encode_media_with_base(reference: &Value, base: Option<&Path>) -> Result<String> {
    match reference {
        Value::String(s) => encode_str(s, None, base),
        Value::Object(map) => {
            let mime = map.get("mime").and_then(|m| m.as_str());
            let loc = map
                .get("path")
                .or_else(|| map.get("url"))
                .and_then(|p| p.as_str())
                .ok_or_else(|| GraspError::MediaLoad {
                    what: reference.to_string(),
                    message: "media object needs a path or url".to_string(),
                })?;
            encode_str(loc, mime, base)
        }
        other => Err(GraspError::MediaLoad {
            what: other.to_string(),
            message: "media reference must be a string or {path, mime} object".to_string(),
        }),
    }
}

/// [`encode_media_with_base`] with paths resolved against the working dir.
pub fn encode_media(reference: &Value) -> Result<String> {
    encode_media_with_base(reference, None)
}

fn encode_str(loc: &str, mime: Option<&str>, base: Option<&Path>) -> Result<String> {
    if loc.starts_with("data:") {
        return Ok(loc.to_string());
    }
    if loc.starts_with("http://") || loc.starts_with("https://") {
        return fetch_url(loc, mime);
    }
    let path = match base {
        Some(b) if Path::new(loc).is_relative() => b.join(loc),
        _ => Path::new(loc).to_path_buf(),
    };
    let bytes = std::fs::read(&path).map_err(|e| GraspError::MediaLoad {
        what: loc.to_string(),
        message: e.to_string(),
    })?;
    let mime = mime
        .map(String::from)
        .or_else(|| mime_from_extension(loc).map(String::from))
        .unwrap_or_else(|| "application/octet-stream".to_string());
    Ok(to_data_url(&bytes, &mime))
}

fn fetch_url(url: &str, mime: Option<&str>) -> Result<String> {
    let resp = ureq::get(url).call().map_err(|e| GraspError::MediaLoad {
        what: url.to_string(),
        message: e.to_string(),
    })?;
    let content_type = resp.content_type().to_string();
    let mut bytes = Vec::new();
    use std::io::Read;
    resp.into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| GraspError::MediaLoad {
            what: url.to_string(),
            message: e.to_string(),
        })?;
    let mime = mime
        .map(String::from)
        .or_else(|| mime_from_extension(url).map(String::from))
        .unwrap_or(content_type);
    Ok(to_data_url(&bytes, &mime))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn known_bytes_encode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        std::fs::write(&path, b"abc").unwrap();
        let url = encode_media(&json!(path.to_str().unwrap())).unwrap();
        // Independent: base64("abc") == "YWJj".
        assert_eq!(url, "data:image/png;base64,YWJj");
    }

    #[test]
    fn idempotent_on_data_urls() {
        let input = json!("data:image/png;base64,YWJj");
        let once = encode_media(&input).unwrap();
        let twice = encode_media(&json!(once)).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once, "data:image/png;base64,YWJj");
    }

    #[test]
    fn missing_file_errors() {
        let err = encode_media(&json!("/nope/never/file.png")).unwrap_err();
        assert!(matches!(err, GraspError::MediaLoad { .. }));
    }

    #[test]
    fn object_reference_with_explicit_mime() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.bin");
        std::fs::write(&path, b"zz").unwrap();
        let url = encode_media(&json!({"path": path.to_str().unwrap(), "mime": "audio/wav"})).unwrap();
        assert!(url.starts_with("data:audio/wav;base64,"));
    }

    #[test]
    fn relative_path_resolves_against_base() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.wav"), b"abc").unwrap();
        let url = encode_media_with_base(&json!("a.wav"), Some(dir.path())).unwrap();
        assert_eq!(url, "data:audio/wav;base64,YWJj");
    }
}
