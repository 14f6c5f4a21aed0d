use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use image::DynamicImage;
use wait_timeout::ChildExt;

use super::OcrError;

pub const VALID_PSMS: [u8; 4] = [3, 6, 11, 12];
pub const DEFAULT_LANGUAGES: &str = "deu+eng";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// A text recognizer for a single image and page segmentation mode.
pub trait OcrEngine: Send + Sync {
    /// Identifies the engine build; becomes part of the cache key.
    fn version(&self) -> String;

    /// Raw recognized text. Implementations report per-image failures as
    /// `EngineFailed`/`Timeout` and a missing engine as `EngineNotFound`.
    fn recognize(&self, img: &DynamicImage, psm: u8) -> Result<String, OcrError>;
}

/// Runs one OCR pass. Engine failures and timeouts on a single image degrade
/// to an empty string; only a missing engine or an invalid mode is an error.
pub fn ocr_extract(engine: &dyn OcrEngine, img: &DynamicImage, psm: u8) -> Result<String, OcrError> {
    if !VALID_PSMS.contains(&psm) {
        return Err(OcrError::InvalidPsm(psm));
    }
    match engine.recognize(img, psm) {
        Ok(text) => Ok(normalize_ocr_text(&text)),
        Err(e @ (OcrError::EngineFailed { .. } | OcrError::Timeout(_))) => {
            tracing::warn!(psm, error = %e, "OCR pass failed; using empty text");
            Ok(String::new())
        }
        Err(e) => Err(e),
    }
}

/// Collapses line breaks and whitespace runs to single spaces and trims.
pub fn normalize_ocr_text(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `tesseract`-compatible command line engine, one subprocess per call.
#[derive(Debug, Clone)]
pub struct TesseractEngine {
    binary: PathBuf,
    languages: String,
    timeout: Duration,
    version: String,
}

impl TesseractEngine {
    /// Probes `<binary> --version`; fails with an install hint if absent.
    pub fn locate(binary: impl AsRef<Path>, languages: &str, timeout: Duration) -> Result<Self, OcrError> {
        let binary = binary.as_ref().to_path_buf();
        let output = Command::new(&binary)
            .arg("--version")
            .output()
            .map_err(|e| OcrError::EngineNotFound {
                binary: binary.clone(),
                message: e.to_string(),
            })?;
        if !output.status.success() {
            return Err(OcrError::EngineNotFound {
                binary,
                message: format!("--version exited with {}", output.status),
            });
        }
        // older releases print the banner on stderr
        let banner = if output.stdout.is_empty() {
            String::from_utf8_lossy(&output.stderr).into_owned()
        } else {
            String::from_utf8_lossy(&output.stdout).into_owned()
        };
        let version = banner.lines().next().unwrap_or("tesseract").trim().to_string();
        Ok(TesseractEngine {
            binary,
            languages: languages.to_string(),
            timeout,
            version: format!("{version} [{languages}]"),
        })
    }

    pub fn is_available(binary: impl AsRef<Path>) -> bool {
        Command::new(binary.as_ref())
            .arg("--version")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    }
}

impl OcrEngine for TesseractEngine {
    fn version(&self) -> String {
        self.version.clone()
    }

    fn recognize(&self, img: &DynamicImage, psm: u8) -> Result<String, OcrError> {
        let tmp = tempfile::Builder::new()
            .prefix("leaflet-ocr-")
            .suffix(".png")
            .tempfile()
            .map_err(|source| OcrError::Io {
                path: std::env::temp_dir(),
                source,
            })?;
        img.save_with_format(tmp.path(), image::ImageFormat::Png)
            .map_err(|e| OcrError::EngineFailed {
                status: "input encoding".into(),
                stderr: e.to_string(),
            })?;

        let mut child = Command::new(&self.binary)
            .arg(tmp.path())
            .arg("stdout")
            .arg("--psm")
            .arg(psm.to_string())
            .arg("-l")
            .arg(&self.languages)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| OcrError::EngineNotFound {
                binary: self.binary.clone(),
                message: e.to_string(),
            })?;

        let mut stdout = child.stdout.take().expect("stdout piped");
        let mut stderr = child.stderr.take().expect("stderr piped");
        let out_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf);
            buf
        });
        let err_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });

        let status = match child.wait_timeout(self.timeout) {
            Ok(Some(status)) => status,
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(OcrError::Timeout(self.timeout));
            }
            Err(e) => {
                return Err(OcrError::EngineFailed {
                    status: "wait failed".into(),
                    stderr: e.to_string(),
                })
            }
        };
        let out = out_reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(OcrError::EngineFailed {
                status: status.to_string(),
                stderr: String::from_utf8_lossy(&err).trim().to_string(),
            });
        }
        Ok(String::from_utf8_lossy(&out).into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        calls: AtomicUsize,
        reply: fn() -> Result<String, OcrError>,
    }

    impl OcrEngine for Scripted {
        fn version(&self) -> String {
            "scripted".into()
        }
        fn recognize(&self, _: &DynamicImage, _: u8) -> Result<String, OcrError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            (self.reply)()
        }
    }

    fn img() -> DynamicImage {
        DynamicImage::new_rgb8(10, 10)
    }

    #[test]
    fn invalid_psm_rejected_before_engine_runs() {
        let engine = Scripted {
            calls: AtomicUsize::new(0),
            reply: || Ok("x".into()),
        };
        assert!(matches!(ocr_extract(&engine, &img(), 99), Err(OcrError::InvalidPsm(99))));
        assert_eq!(engine.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn line_breaks_become_single_spaces() {
        let engine = Scripted {
            calls: AtomicUsize::new(0),
            reply: || Ok("\n MILCH\n\n250g \x0c".into()),
        };
        assert_eq!(ocr_extract(&engine, &img(), 6).unwrap(), "MILCH 250g");
    }

    #[test]
    fn engine_failure_degrades_to_empty() {
        let failing = Scripted {
            calls: AtomicUsize::new(0),
            reply: || {
                Err(OcrError::EngineFailed {
                    status: "exit 1".into(),
                    stderr: "boom".into(),
                })
            },
        };
        assert_eq!(ocr_extract(&failing, &img(), 3).unwrap(), "");
        let slow = Scripted {
            calls: AtomicUsize::new(0),
            reply: || Err(OcrError::Timeout(Duration::from_secs(30))),
        };
        assert_eq!(ocr_extract(&slow, &img(), 3).unwrap(), "");
    }

    #[test]
    fn missing_engine_is_fatal() {
        let err = TesseractEngine::locate("/nonexistent/tesseract-binary", DEFAULT_LANGUAGES, DEFAULT_TIMEOUT)
            .unwrap_err();
        assert!(matches!(err, OcrError::EngineNotFound { .. }));
        assert!(err.to_string().contains("Install tesseract"));
    }
}
