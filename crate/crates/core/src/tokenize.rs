//! Tweet tokenizer. Posts are split on whitespace and each chunk is scanned
//! left to right; at every position the first matching rule wins:
//!
//! 1. the literal `<url>` placeholder
//! 2. a URL prefix (`http://`, `https://`, `www.`, case-insensitive),
//!    which consumes the rest of the chunk and becomes `<url>`
//! 3. an emoticon from the pinned set below, longest match first; emoticons
//!    made purely of letters (the `xd` family) only match when not glued to
//!    other letters
//! 4. a single emoji scalar (treated as an emoticon)
//! 5. a mention `@` + [letters, digits, underscore]
//! 6. a hashtag `#` + [letters, digits, underscore]
//! 7. a number: ASCII digits with `.` or `,` allowed between digits
//! 8. a word: Unicode letters plus combining diacritics, apostrophes
//!    allowed between letters; lowercased, and runs of the same character
//!    are capped at three (`jajaaaaa` -> `jajaaa`)
//! 9. anything else becomes a single-character punctuation token
//!
//! Hashtags, mentions and emoticons are kept as tokens on purpose: they
//! carry topical signal in tweets. There is no stemming.

use crate::ingest::RawDocument;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Word,
    Hashtag,
    Mention,
    Url,
    Emoticon,
    Number,
    Punctuation,
}

impl TokenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Word => "word",
            TokenKind::Hashtag => "hashtag",
            TokenKind::Mention => "mention",
            TokenKind::Url => "url",
            TokenKind::Emoticon => "emoticon",
            TokenKind::Number => "number",
            TokenKind::Punctuation => "punctuation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    pub kind: TokenKind,
}

impl Token {
    fn new(surface: impl Into<String>, kind: TokenKind) -> Self {
        Token { surface: surface.into(), kind }
    }
}

/// The pinned emoticon set. Matching is longest-first at each position.
pub const EMOTICONS: &[&str] = &[
    ":)", ":-)", ":))", ":(", ":-(", ":((", ";)", ";-)", ";(", ":D", ":-D", ";D", "=D", ":P",
    ":-P", ":p", ":-p", ";P", ";p", "=P", "=p", ":O", ":-O", ":o", ":-o", ":/", ":-/", ":\\",
    ":-\\", ":|", ":-|", ":*", ":-*", ":3", "<3", "</3", "=)", "=(", "=/", "=|", "=]", "=[",
    "^^", "^_^", "^-^", "-_-", "-.-", "o_o", "O_o", "o_O", "O_O", "u_u", "U_U", "T_T", ";_;",
    "._.", ">:(", ">:)", ">:D", ":'(", ":')", ";'(", "D:", "D=", ":]", ":[", "@_@", "*_*",
    "xd", "xD", "Xd", "XD", "xp", "xP", "Xp", "XP",
];

const MAX_RUN: usize = 3;

pub fn tokenize_post(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        scan_chunk(chunk, &mut tokens);
    }
    tokens
}

/// A user's posts tokenized into one token stream, posts in input order.
#[derive(Debug, Clone)]
pub struct TokenizedDocument {
    pub user_id: String,
    pub tokens: Vec<Token>,
    pub post_lengths: Vec<usize>,
}

pub fn tokenize_document(doc: &RawDocument) -> TokenizedDocument {
    let mut tokens = Vec::new();
    for post in &doc.posts {
        tokens.extend(tokenize_post(&post.text));
    }
    TokenizedDocument {
        user_id: doc.user_id.clone(),
        tokens,
        post_lengths: doc.post_lengths.clone(),
    }
}

fn scan_chunk(chunk: &str, out: &mut Vec<Token>) {
    let chars: Vec<char> = chunk.chars().collect();
    let n = chars.len();
    let mut pos = 0;
    while pos < n {
        if starts_with_at(&chars, pos, "<url>") {
            out.push(Token::new("<url>", TokenKind::Url));
            pos += 5;
            continue;
        }
        if at_url_prefix(&chars, pos) {
            out.push(Token::new("<url>", TokenKind::Url));
            break;
        }
        if let Some(len) = match_emoticon(&chars, pos) {
            out.push(Token::new(
                chars[pos..pos + len].iter().collect::<String>(),
                TokenKind::Emoticon,
            ));
            pos += len;
            continue;
        }
        let c = chars[pos];
        if is_emoji(c) {
            out.push(Token::new(c.to_string(), TokenKind::Emoticon));
            pos += 1;
            continue;
        }
        if (c == '@' || c == '#') && pos + 1 < n && is_handle_char(chars[pos + 1]) {
            let start = pos;
            pos += 1;
            while pos < n && is_handle_char(chars[pos]) {
                pos += 1;
            }
            let surface: String = chars[start..pos].iter().collect();
            let kind = if c == '@' { TokenKind::Mention } else { TokenKind::Hashtag };
            out.push(Token::new(surface.to_lowercase(), kind));
            continue;
        }
        if c.is_ascii_digit() {
            let start = pos;
            pos += 1;
            while pos < n {
                if chars[pos].is_ascii_digit() {
                    pos += 1;
                } else if (chars[pos] == '.' || chars[pos] == ',')
                    && pos + 1 < n
                    && chars[pos + 1].is_ascii_digit()
                {
                    pos += 2;
                } else {
                    break;
                }
            }
            out.push(Token::new(chars[start..pos].iter().collect::<String>(), TokenKind::Number));
            continue;
        }
        if c.is_alphabetic() {
            let start = pos;
            pos += 1;
            while pos < n {
                if is_word_char(chars[pos]) {
                    pos += 1;
                } else if is_apostrophe(chars[pos]) && pos + 1 < n && is_word_char(chars[pos + 1])
                {
                    pos += 2;
                } else {
                    break;
                }
            }
            let word: String = chars[start..pos].iter().collect::<String>().to_lowercase();
            out.push(Token::new(cap_runs(&word, MAX_RUN), TokenKind::Word));
            continue;
        }
        out.push(Token::new(c.to_string(), TokenKind::Punctuation));
        pos += 1;
    }
}

fn starts_with_at(chars: &[char], pos: usize, s: &str) -> bool {
    let mut i = pos;
    for c in s.chars() {
        if i >= chars.len() || chars[i] != c {
            return false;
        }
        i += 1;
    }
    true
}

fn at_url_prefix(chars: &[char], pos: usize) -> bool {
    for prefix in ["http://", "https://", "www."] {
        let mut i = pos;
        let mut ok = true;
        for c in prefix.chars() {
            if i >= chars.len() || chars[i].to_ascii_lowercase() != c {
                ok = false;
                break;
            }
            i += 1;
        }
        if ok {
            return true;
        }
    }
    false
}

fn match_emoticon(chars: &[char], pos: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for emo in EMOTICONS {
        if !starts_with_at(chars, pos, emo) {
            continue;
        }
        let len = emo.chars().count();
        if emo.chars().all(char::is_alphabetic) {
            let glued_left = pos > 0 && chars[pos - 1].is_alphabetic();
            let glued_right = pos + len < chars.len() && chars[pos + len].is_alphabetic();
            if glued_left || glued_right {
                continue;
            }
        }
        if best.is_none_or(|b| len > b) {
            best = Some(len);
        }
    }
    best
}

fn is_emoji(c: char) -> bool {
    matches!(c,
        '\u{1F300}'..='\u{1F5FF}'
        | '\u{1F600}'..='\u{1F64F}'
        | '\u{1F680}'..='\u{1F6FF}'
        | '\u{1F900}'..='\u{1F9FF}'
        | '\u{1FA70}'..='\u{1FAFF}'
        | '\u{2600}'..='\u{26FF}'
        | '\u{2700}'..='\u{27BF}')
}

fn is_handle_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_word_char(c: char) -> bool {
    c.is_alphabetic() || ('\u{0300}'..='\u{036F}').contains(&c)
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

fn cap_runs(word: &str, max_run: usize) -> String {
    let mut out = String::with_capacity(word.len());
    let mut last: Option<char> = None;
    let mut run = 0;
    for c in word.chars() {
        if last == Some(c) {
            run += 1;
        } else {
            last = Some(c);
            run = 1;
        }
        if run <= max_run {
            out.push(c);
        }
    }
    out
}
