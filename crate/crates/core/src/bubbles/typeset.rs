use super::BubbleError;

/// Greedy whitespace wrap into lines of at most `max_words` words.
pub fn wrap_text(text: &str, max_words: usize) -> Result<Vec<String>, BubbleError> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return Err(BubbleError::EmptyText);
    }
    Ok(words.chunks(max_words.max(1)).map(|c| c.join(" ")).collect())
}

/// Horizontal advance of one glyph: `ceil(0.6 * font_size)`.
pub fn glyph_advance(font_size: u32) -> u32 {
    (6 * font_size).div_ceil(10)
}

/// `ceil(1.2 * font_size)`.
pub fn line_height(font_size: u32) -> u32 {
    (12 * font_size).div_ceil(10)
}

/// Text block size `(w_t, h_t)`: the longest line in scalar values times
/// the advance, by the line count times the line height.
pub fn measure_text(lines: &[String], font_size: u32) -> (u32, u32) {
    let longest = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0) as u32;
    (longest * glyph_advance(font_size), lines.len() as u32 * line_height(font_size))
}
