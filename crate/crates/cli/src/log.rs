//! Line-oriented `key=value` logging on stderr.

use std::fmt::Display;

fn quote(v: &str) -> String {
    if v.is_empty() || v.contains(|c: char| c.is_whitespace() || c == '"' || c == '=') {
        format!("{v:?}")
    } else {
        v.to_string()
    }
}

pub fn emit(level: &str, event: &str, fields: &[(&str, &dyn Display)]) {
    let mut line = format!("level={level} event={event}");
    for (k, v) in fields {
        line.push(' ');
        line.push_str(k);
        line.push('=');
        line.push_str(&quote(&v.to_string()));
    }
    eprintln!("{line}");
}

#[macro_export]
macro_rules! info {
    ($event:expr $(, $k:ident = $v:expr)* $(,)?) => {
        $crate::log::emit("info", $event, &[$((stringify!($k), &$v as &dyn std::fmt::Display)),*])
    };
}

#[macro_export]
macro_rules! warn {
    ($event:expr $(, $k:ident = $v:expr)* $(,)?) => {
        $crate::log::emit("warn", $event, &[$((stringify!($k), &$v as &dyn std::fmt::Display)),*])
    };
}
