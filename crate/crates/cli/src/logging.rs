//! JSON-lines logging to stderr and, optionally, a file.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use log::{LevelFilter, Log, Metadata, Record};
use serde_json::{json, Map, Value};

struct JsonLogger {
    level: LevelFilter,
    file: Mutex<Option<File>>,
    start: Instant,
}

static LOGGER: OnceLock<JsonLogger> = OnceLock::new();

impl JsonLogger {
    fn emit(&self, mut line: Map<String, Value>) {
        line.insert(
            "t".into(),
            json!((self.start.elapsed().as_secs_f64() * 1000.0).round() / 1000.0),
        );
        let text = Value::Object(line).to_string();
        eprintln!("{text}");
        if let Ok(mut guard) = self.file.lock() {
            if let Some(f) = guard.as_mut() {
                let _ = writeln!(f, "{text}");
            }
        }
    }
}

impl Log for JsonLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let mut line = Map::new();
        line.insert("level".into(), json!(record.level().as_str().to_lowercase()));
        line.insert("target".into(), json!(record.target()));
        line.insert("msg".into(), json!(record.args().to_string()));
        self.emit(line);
    }

    fn flush(&self) {
        if let Ok(mut guard) = self.file.lock() {
            if let Some(f) = guard.as_mut() {
                let _ = f.flush();
            }
        }
    }
}

pub fn init(level: LevelFilter, file: Option<&Path>) -> std::io::Result<()> {
    let file = match file {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let logger = LOGGER.get_or_init(|| JsonLogger {
        level,
        file: Mutex::new(file),
        start: Instant::now(),
    });
    // A second init (tests) keeps the first logger.
    if log::set_logger(logger).is_ok() {
        log::set_max_level(level);
    }
    Ok(())
}

/// Structured record: `{"event": name, ...fields}`. Emitted at info level.
pub fn event(name: &str, fields: Value) {
    let Some(logger) = LOGGER.get() else { return };
    if logger.level < LevelFilter::Info {
        return;
    }
    let mut line = Map::new();
    line.insert("level".into(), json!("info"));
    line.insert("event".into(), json!(name));
    if let Value::Object(m) = fields {
        line.extend(m);
    }
    logger.emit(line);
}
