//! Small text helpers shared by retrieval, prompt assembly and dataset loading.

use chrono::{Datelike, NaiveDate};

const MONTHS: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

/// Lowercased runs of alphanumeric characters.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Offline prompt-size estimate: whitespace words x 1.3, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    (words * 13).div_ceil(10)
}

/// Renders a date as "D Mon YYYY", e.g. "8 May 2023".
pub fn render_date(date: NaiveDate) -> String {
    format!("{} {} {}", date.day(), MONTHS[date.month0() as usize], date.year())
}

/// Today's date in session-timestamp form.
pub fn today() -> String {
    render_date(chrono::Utc::now().date_naive())
}

fn month_index(name: &str) -> Option<u32> {
    let lower = name.to_ascii_lowercase();
    if lower.len() < 3 {
        return None;
    }
    MONTHS
        .iter()
        .position(|m| lower.starts_with(&m.to_ascii_lowercase()))
        .map(|i| i as u32 + 1)
}

/// Normalizes a benchmark date string to "D Mon YYYY".
///
/// Understands the two shapes found in the conversational benchmarks:
/// `"1:56 pm on 8 May, 2023"` and `"2023/05/20 (Sat) 02:21"`. Anything else is
/// returned trimmed but otherwise unchanged, since timestamps are opaque text
/// to the store.
pub fn normalize_session_date(raw: &str) -> String {
    let cleaned: Vec<&str> = raw
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .collect();

    // "... 8 May 2023" style: day, month name, year appear consecutively.
    for w in cleaned.windows(3) {
        if let (Ok(day), Some(month), Ok(year)) =
            (w[0].parse::<u32>(), month_index(w[1]), w[2].parse::<i32>())
        {
            if let Some(d) = NaiveDate::from_ymd_opt(year, month, day) {
                return render_date(d);
            }
        }
    }

    // "2023/05/20 ..." style.
    if let Some(first) = cleaned.first() {
        let parts: Vec<&str> = first.split(['/', '-']).collect();
        if parts.len() == 3 {
            if let (Ok(y), Ok(m), Ok(d)) = (
                parts[0].parse::<i32>(),
                parts[1].parse::<u32>(),
                parts[2].parse::<u32>(),
            ) {
                if let Some(date) = NaiveDate::from_ymd_opt(y, m, d) {
                    return render_date(date);
                }
            }
        }
    }

    raw.trim().to_string()
}
