//! Standard-protocol facades over the views: WebDAV for files and the
//! calendar/contact/link collections, a read-only IMAP subset for mail.

pub mod ical;
pub mod imap;
pub mod webdav;

use base64::Engine;

/// Checks an HTTP `Authorization: Basic ...` header value.
pub fn check_basic(header: Option<&str>, user: &str, password: &str) -> bool {
    let Some(encoded) = header.and_then(|h| h.strip_prefix("Basic ").or_else(|| h.strip_prefix("basic "))) else {
        return false;
    };
    let Ok(raw) = base64::engine::general_purpose::STANDARD.decode(encoded.trim()) else {
        return false;
    };
    let Ok(text) = String::from_utf8(raw) else { return false };
    text.split_once(':').is_some_and(|(u, p)| u == user && p == password)
}

pub fn basic_header(user: &str, password: &str) -> String {
    format!("Basic {}", base64::engine::general_purpose::STANDARD.encode(format!("{user}:{password}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_auth() {
        let h = basic_header("ann", "s3cret:x");
        assert!(check_basic(Some(&h), "ann", "s3cret:x"));
        assert!(!check_basic(Some(&h), "ann", "other"));
        assert!(!check_basic(None, "ann", "s3cret:x"));
        assert!(!check_basic(Some("Bearer abc"), "ann", "s3cret:x"));
    }
}
