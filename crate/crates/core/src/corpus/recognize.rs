use super::PercentageMention;

fn number_literal(s: &str) -> Option<f64> {
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s, None),
    };
    let digits = |x: &str| !x.is_empty() && x.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.is_some_and(|f| !digits(f)) {
        return None;
    }
    s.parse().ok()
}

/// Rule-based percentage recognizer over tokens.
///
/// Matches, case-insensitively: `N%` as one token, `N` followed by `%`,
/// `N` followed by `percent` or `pct`, and `N` followed by `per cent`. `N` is
/// an integer or decimal literal and is the mention's token. Values are in
/// percent units.
pub fn recognize_percentages(tokens: &[String]) -> Vec<PercentageMention> {
    let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let mut out = Vec::new();
    for (i, tok) in lower.iter().enumerate() {
        if let Some(num) = tok.strip_suffix('%') {
            if let Some(v) = number_literal(num) {
                out.push(PercentageMention {
                    token_index: i,
                    surface: tokens[i].clone(),
                    normalized_value: v,
                });
            }
            continue;
        }
        let Some(v) = number_literal(tok) else {
            continue;
        };
        let next = lower.get(i + 1).map(String::as_str);
        let after = lower.get(i + 2).map(String::as_str);
        let width = match (next, after) {
            (Some("%" | "percent" | "pct"), _) => 2,
            (Some("per"), Some("cent")) => 3,
            _ => continue,
        };
        out.push(PercentageMention {
            token_index: i,
            surface: tokens[i..i + width].join(" "),
            normalized_value: v,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn recognizes_the_documented_forms() {
        let m = recognize_percentages(&toks("30 percent of Americans"));
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].token_index, m[0].normalized_value), (0, 30.0));
        assert_eq!(m[0].surface, "30 percent");

        let m = recognize_percentages(&toks("while 20% prefer"));
        assert_eq!((m[0].token_index, m[0].normalized_value), (1, 20.0));

        let m = recognize_percentages(&toks("rate is 1.9% ."));
        assert_eq!((m[0].token_index, m[0].normalized_value), (2, 1.9));

        let m = recognize_percentages(&toks("about 12.5 PER CENT and 7 Pct and 3 %"));
        let got: Vec<(usize, f64)> = m.iter().map(|x| (x.token_index, x.normalized_value)).collect();
        assert_eq!(got, vec![(1, 12.5), (5, 7.0), (8, 3.0)]);
    }

    #[test]
    fn ignores_non_percentages() {
        assert!(recognize_percentages(&toks("in 2019 , 3 people and thirty percent")).is_empty());
        assert!(recognize_percentages(&toks("1. % .5% 1.2.3%")).is_empty());
        assert!(recognize_percentages(&toks("7 per")).is_empty());
    }
}
