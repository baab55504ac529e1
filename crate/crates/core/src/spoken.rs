//! Spoken-form corpus copy: lowercasing, punctuation removal and
//! verbalization of integers and monetary amounts.

use std::sync::OnceLock;

use regex::Regex;

/// How four-digit numbers are read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum YearStyle {
    /// `1984` -> "one thousand nine hundred eighty four".
    #[default]
    Cardinal,
    /// `1984` -> "nineteen eighty four" for 1000..=2099 (except even hundreds).
    PairedDigits,
}

const ONES: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen",
];
const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];
const SCALES: [(u64, &str); 4] = [
    (1_000_000_000_000, "trillion"),
    (1_000_000_000, "billion"),
    (1_000_000, "million"),
    (1_000, "thousand"),
];

fn push_word(out: &mut String, word: &str) {
    if !out.is_empty() {
        out.push(' ');
    }
    out.push_str(word);
}

fn verbalize_below_thousand(n: u64, out: &mut String) {
    debug_assert!(n < 1000);
    let mut n = n;
    if n >= 100 {
        push_word(out, ONES[(n / 100) as usize]);
        push_word(out, "hundred");
        n %= 100;
    }
    if n >= 20 {
        push_word(out, TENS[(n / 10) as usize]);
        n %= 10;
        if n > 0 {
            push_word(out, ONES[n as usize]);
        }
    } else if n > 0 {
        push_word(out, ONES[n as usize]);
    }
}

/// Spells out an integer up to 10^12 in plain English words, no hyphens.
pub fn verbalize_integer(n: u64) -> String {
    if n == 0 {
        return "zero".into();
    }
    let mut out = String::new();
    let mut rest = n;
    for (scale, name) in SCALES {
        if rest >= scale {
            verbalize_below_thousand(rest / scale, &mut out);
            push_word(&mut out, name);
            rest %= scale;
        }
    }
    if rest > 0 {
        verbalize_below_thousand(rest, &mut out);
    }
    out
}

/// Year reading of a number, falling back to the cardinal form outside the
/// 1000..=2099 range or for even hundreds ("1900" -> cardinal).
pub fn verbalize_year(n: u64) -> String {
    if !(1000..=2099).contains(&n) || n % 100 == 0 {
        return verbalize_integer(n);
    }
    let (high, low) = (n / 100, n % 100);
    let mut out = String::new();
    verbalize_below_thousand(high, &mut out);
    if low < 10 {
        // 2005 -> "twenty oh five"
        push_word(&mut out, "oh");
    }
    verbalize_below_thousand(low, &mut out);
    out
}

fn currency_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\$(\d{1,13})").expect("currency regex"))
}

fn integer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[^\p{L}\p{N}])(\d{1,13})(?:[^\p{L}\p{N}]|$)").expect("integer regex"))
}

fn verbalize_number_token(digits: &str, style: YearStyle) -> Option<String> {
    let n: u64 = digits.parse().ok()?;
    if n > 1_000_000_000_000 {
        return None;
    }
    Some(match style {
        YearStyle::Cardinal => verbalize_integer(n),
        YearStyle::PairedDigits => {
            if digits.len() == 4 {
                verbalize_year(n)
            } else {
                verbalize_integer(n)
            }
        }
    })
}

fn replace_integers(s: &str, style: YearStyle) -> String {
    // overlapping boundary characters make a single pass with the regex
    // unreliable, so scan matches manually
    let mut out = String::with_capacity(s.len());
    let mut cursor = 0;
    while cursor < s.len() {
        match integer_re().captures(&s[cursor..]) {
            Some(caps) => {
                let group = caps.get(1).expect("digit group");
                let abs_start = cursor + group.start();
                let abs_end = cursor + group.end();
                out.push_str(&s[cursor..abs_start]);
                match verbalize_number_token(group.as_str(), style) {
                    Some(words) => out.push_str(&words),
                    None => out.push_str(group.as_str()),
                }
                cursor = abs_end;
            }
            None => {
                out.push_str(&s[cursor..]);
                break;
            }
        }
    }
    out
}

/// Converts source text into a spoken-style form.
///
/// Monetary `$N` patterns become "N dollars", standalone integers are
/// spelled out, the text is lowercased and punctuation is removed
/// (apostrophes vanish, other marks become word breaks). Idempotent.
pub fn spoken_form(s: &str, year_style: YearStyle) -> String {
    let with_currency = currency_re().replace_all(s, |caps: &regex::Captures| {
        let digits = &caps[1];
        match verbalize_number_token(digits, YearStyle::Cardinal) {
            Some(words) => format!("{words} dollars"),
            None => caps[0].to_string(),
        }
    });
    let with_numbers = replace_integers(&with_currency, year_style);
    let lower = with_numbers.to_lowercase();

    let mut cleaned = String::with_capacity(lower.len());
    for c in lower.chars() {
        if c.is_alphanumeric() || c.is_whitespace() {
            cleaned.push(c);
        } else if c != '\'' {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn verbalizer_matches_hand_written_table() {
        let table = [
            (0, "zero"),
            (5, "five"),
            (13, "thirteen"),
            (20, "twenty"),
            (42, "forty two"),
            (100, "one hundred"),
            (101, "one hundred one"),
            (999, "nine hundred ninety nine"),
            (1000, "one thousand"),
            (1984, "one thousand nine hundred eighty four"),
            (1_000_000, "one million"),
            (2_500_307, "two million five hundred thousand three hundred seven"),
            (1_000_000_000_000, "one trillion"),
        ];
        for (n, words) in table {
            assert_eq!(verbalize_integer(n), words, "n={n}");
        }
    }

    #[test]
    fn year_style_reads_digit_pairs() {
        assert_eq!(verbalize_year(1984), "nineteen eighty four");
        assert_eq!(verbalize_year(2005), "twenty oh five");
        assert_eq!(verbalize_year(1900), "one thousand nine hundred");
        assert_eq!(verbalize_year(123), "one hundred twenty three");
    }

    #[test]
    fn currency_becomes_dollars() {
        assert_eq!(spoken_form("I paid $5.", YearStyle::Cardinal), "i paid five dollars");
        assert_eq!(
            spoken_form("$120 each", YearStyle::Cardinal),
            "one hundred twenty dollars each"
        );
    }

    #[test]
    fn punctuation_is_removed() {
        assert_eq!(spoken_form("Hello, World!", YearStyle::Cardinal), "hello world");
        assert_eq!(spoken_form("don't stop", YearStyle::Cardinal), "dont stop");
        assert_eq!(spoken_form("well-known", YearStyle::Cardinal), "well known");
    }

    #[test]
    fn years_follow_configured_style() {
        assert_eq!(
            spoken_form("In 1984", YearStyle::Cardinal),
            "in one thousand nine hundred eighty four"
        );
        assert_eq!(
            spoken_form("In 1984", YearStyle::PairedDigits),
            "in nineteen eighty four"
        );
    }

    #[test]
    fn digits_inside_words_are_left_alone() {
        assert_eq!(spoken_form("the 3rd time", YearStyle::Cardinal), "the 3rd time");
        assert_eq!(
            spoken_form("7 of 9", YearStyle::Cardinal),
            "seven of nine"
        );
    }

    proptest! {
        #[test]
        fn spoken_form_is_idempotent(s in "[A-Za-z0-9$.,!? ]{0,60}") {
            let once = spoken_form(&s, YearStyle::Cardinal);
            prop_assert_eq!(spoken_form(&once, YearStyle::Cardinal), once.clone());
            let once = spoken_form(&s, YearStyle::PairedDigits);
            prop_assert_eq!(spoken_form(&once, YearStyle::PairedDigits), once);
        }
    }
}
