use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

/// Installs the global logger. `RUST_LOG` overrides the default `info` level.
/// With `json`, each record is one JSON object per line on stderr.
pub fn init(json: bool) {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if json {
        builder.format(|buf, record| {
            let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
            let line = serde_json::json!({
                "ts": ts,
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    // a second init (tests) keeps the first logger
    let _ = builder.try_init();
}
