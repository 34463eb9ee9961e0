//! Static HTML view of relevance maps: one row per sentence, each token
//! shaded by its score divided by the sentence's largest absolute score.

use attrib_core::attribution::RelevanceRecord;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Red for positive, blue for negative, alpha proportional to magnitude.
fn color(v: f64) -> String {
    let a = v.abs().min(1.0);
    if v >= 0.0 {
        format!("rgba(220,40,40,{a:.3})")
    } else {
        format!("rgba(40,80,220,{a:.3})")
    }
}

pub fn render(title: &str, records: &[RelevanceRecord]) -> String {
    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n");
    html.push_str(&format!("<title>{}</title>\n", escape(title)));
    html.push_str(
        "<style>body{font-family:sans-serif;margin:2em}.s{margin:.4em 0;line-height:1.9}\
         .t{padding:.15em .3em;margin:0 .1em;border-radius:3px}.m{color:#777;font-size:.8em;margin-right:.8em}</style>\n",
    );
    html.push_str(&format!("</head><body>\n<h1>{}</h1>\n", escape(title)));
    for (i, r) in records.iter().enumerate() {
        let max = r.scores.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        html.push_str(&format!("<div class=\"s\"><span class=\"m\">#{i} {} class {}</span>", r.method, r.class));
        for (tok, s) in r.tokens.iter().zip(&r.scores) {
            let norm = if max > 0.0 { s / max } else { 0.0 };
            html.push_str(&format!(
                "<span class=\"t\" style=\"background:{}\" title=\"{:.6e}\">{}</span>",
                color(norm),
                s,
                escape(tok)
            ));
        }
        html.push_str("</div>\n");
    }
    html.push_str("</body></html>\n");
    html
}

#[cfg(test)]
mod tests {
    use super::*;
    use attrib_core::attribution::Method;

    #[test]
    fn escapes_and_normalizes() {
        let r = RelevanceRecord {
            method: Method::Gi,
            class: 1,
            tokens: vec!["[CLS]".into(), "<b>".into()],
            scores: vec![0.5, -1.0],
            dims: None,
        };
        let html = render("x & y", &[r]);
        assert!(html.contains("&lt;b&gt;"));
        assert!(html.contains("x &amp; y"));
        assert!(html.contains("rgba(40,80,220,1.000)"));
        assert!(html.contains("rgba(220,40,40,0.500)"));
    }
}
