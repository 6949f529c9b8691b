use super::DslError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    /// Unsigned literal; the source text is kept for integer contexts.
    Number(f64, String),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    Colon,
    Quote,
    Star,
    Plus,
    Minus,
    EqEq,
    Le,
    Assign,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Number(_, s) => format!("number {s}"),
            Tok::Eof => "end of input".into(),
            other => format!("'{}'", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::Comma => ",",
            Tok::Colon => ":",
            Tok::Quote => "'",
            Tok::Star => "*",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::EqEq => "==",
            Tok::Le => "<=",
            Tok::Assign => "=",
            _ => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub fn lex(text: &str) -> Result<Vec<Token>, DslError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line: start_line, col: start_col });
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            push(&mut out, Tok::Ident(chars[start..i].iter().collect()));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            let v: f64 = s.parse().map_err(|_| DslError::Lex {
                line: start_line,
                col: start_col,
                message: format!("malformed number '{s}'"),
            })?;
            if !v.is_finite() {
                return Err(DslError::Lex { line: start_line, col: start_col, message: format!("number '{s}' overflows") });
            }
            push(&mut out, Tok::Number(v, s));
            continue;
        }
        let two = |a: char, b: char| c == a && chars.get(i + 1) == Some(&b);
        let (tok, len) = if two('=', '=') {
            (Tok::EqEq, 2)
        } else if two('<', '=') {
            (Tok::Le, 2)
        } else {
            let t = match c {
                '[' => Tok::LBracket,
                ']' => Tok::RBracket,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                ':' => Tok::Colon,
                '\'' => Tok::Quote,
                '*' => Tok::Star,
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '=' => Tok::Assign,
                other => {
                    return Err(DslError::Lex { line, col, message: format!("unexpected character {other:?}") });
                }
            };
            (t, 1)
        };
        push(&mut out, tok);
        i += len;
        col += len;
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_and_positions() {
        let toks = lex("var x[2]\n# note\nminimize x' * x <= 1.5e-3").unwrap();
        assert_eq!(toks[0].tok, Tok::Ident("var".into()));
        let m = toks.iter().find(|t| t.tok == Tok::Ident("minimize".into())).unwrap();
        assert_eq!((m.line, m.col), (3, 1));
        assert!(toks.iter().any(|t| t.tok == Tok::Le));
        assert!(toks.iter().any(|t| matches!(t.tok, Tok::Number(v, _) if v == 1.5e-3)));
    }

    #[test]
    fn bad_characters_are_located() {
        match lex("var x[2]\n  $") {
            Err(DslError::Lex { line, col, .. }) => assert_eq!((line, col), (2, 3)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(lex("1e999"), Err(DslError::Lex { .. })));
    }
}
