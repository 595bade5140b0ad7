//! Two-bit nucleotide encoding: A=00, C=01, G=10, T=11.

use rand::Rng;

pub fn encode(text: &str) -> Result<Vec<bool>, String> {
    let mut bits = Vec::with_capacity(text.len() * 2);
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('>') {
            continue;
        }
        for (col, ch) in line.chars().enumerate() {
            let code = match ch.to_ascii_uppercase() {
                'A' => 0u8,
                'C' => 1,
                'G' => 2,
                'T' => 3,
                c if c.is_whitespace() => continue,
                c => return Err(format!("line {}, column {}: `{c}` is not A/C/G/T", lineno + 1, col + 1)),
            };
            bits.push(code & 2 != 0);
            bits.push(code & 1 != 0);
        }
    }
    Ok(bits)
}

#[cfg(test)]
pub fn decode(bits: &[bool]) -> String {
    bits.chunks(2)
        .map(|p| match (p[0], p.get(1).copied().unwrap_or(false)) {
            (false, false) => 'A',
            (false, true) => 'C',
            (true, false) => 'G',
            (true, true) => 'T',
        })
        .collect()
}

pub fn random_sequence<R: Rng + ?Sized>(rng: &mut R, bases: usize) -> String {
    (0..bases).map(|_| b"ACGT"[rng.random_range(0..4)] as char).collect()
}
