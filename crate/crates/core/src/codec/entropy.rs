//! Bit IO and canonical prefix codes over a byte alphabet.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

pub const MAX_CODE_LEN: u8 = 16;

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    n: u32,
}

impl BitWriter {
    pub fn put(&mut self, bits: u32, len: u32) {
        debug_assert!(len <= 32);
        if len == 0 {
            return;
        }
        self.acc = (self.acc << len) | (bits as u64 & ((1u64 << len) - 1));
        self.n += len;
        while self.n >= 8 {
            self.n -= 8;
            self.bytes.push((self.acc >> self.n) as u8);
        }
        self.acc &= (1u64 << self.n) - 1;
    }

    /// Flushes, zero-padding the final byte.
    pub fn finish(mut self) -> Vec<u8> {
        if self.n > 0 {
            self.bytes.push((self.acc << (8 - self.n)) as u8);
        }
        self.bytes
    }
}

pub struct BitReader<'a> {
    data: &'a [u8],
    bit: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, bit: 0 }
    }

    pub fn bit(&mut self) -> Option<u32> {
        let byte = *self.data.get(self.bit >> 3)?;
        let b = (byte >> (7 - (self.bit & 7))) & 1;
        self.bit += 1;
        Some(b as u32)
    }

    pub fn bits(&mut self, len: u32) -> Option<u32> {
        let mut v = 0u32;
        for _ in 0..len {
            v = (v << 1) | self.bit()?;
        }
        Some(v)
    }
}

/// Canonical prefix code over symbols `0..=255`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixCode {
    lengths: [u8; 256],
    codes: [u16; 256],
    // Decoder tables.
    sorted: Vec<u8>,
    first_code: [i32; 17],
    first_index: [i32; 17],
    count: [i32; 17],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TableError {
    Truncated,
    BadLength(u8),
    DuplicateSymbol(u8),
    Oversubscribed,
}

impl PrefixCode {
    /// Builds length-limited Huffman code lengths from frequencies.
    pub fn from_frequencies(freq: &[u64; 256]) -> Self {
        let mut f = *freq;
        loop {
            let lengths = huffman_lengths(&f);
            if lengths.iter().all(|&l| l <= MAX_CODE_LEN) {
                return Self::from_lengths(lengths).expect("Huffman lengths satisfy Kraft");
            }
            for v in f.iter_mut().filter(|v| **v > 0) {
                *v = (*v >> 1) | 1;
            }
        }
    }

    pub fn from_lengths(lengths: [u8; 256]) -> Result<Self, TableError> {
        let mut kraft = 0u64;
        for &l in &lengths {
            if l > MAX_CODE_LEN {
                return Err(TableError::BadLength(l));
            }
            if l > 0 {
                kraft += 1u64 << (MAX_CODE_LEN - l);
            }
        }
        if kraft > 1u64 << MAX_CODE_LEN {
            return Err(TableError::Oversubscribed);
        }
        let mut sorted: Vec<u8> = (0..=255u8).filter(|&s| lengths[s as usize] > 0).collect();
        sorted.sort_by_key(|&s| (lengths[s as usize], s));
        let mut codes = [0u16; 256];
        let mut first_code = [0i32; 17];
        let mut first_index = [0i32; 17];
        let mut count = [0i32; 17];
        for &s in &sorted {
            count[lengths[s as usize] as usize] += 1;
        }
        let mut code = 0i32;
        let mut index = 0i32;
        for len in 1..=16 {
            first_code[len] = code;
            first_index[len] = index;
            code = (code + count[len]) << 1;
            index += count[len];
        }
        let mut next = first_code;
        for &s in &sorted {
            let l = lengths[s as usize] as usize;
            codes[s as usize] = next[l] as u16;
            next[l] += 1;
        }
        Ok(Self {
            lengths,
            codes,
            sorted,
            first_code,
            first_index,
            count,
        })
    }

    pub fn write(&self, w: &mut BitWriter, sym: u8) {
        let l = self.lengths[sym as usize];
        debug_assert!(l > 0, "symbol {sym} absent from code");
        w.put(self.codes[sym as usize] as u32, l as u32);
    }

    pub fn read(&self, r: &mut BitReader<'_>) -> Option<u8> {
        let mut code = 0i32;
        for len in 1..=16 {
            code = (code << 1) | r.bit()? as i32;
            let off = code - self.first_code[len];
            if off >= 0 && off < self.count[len] {
                return Some(self.sorted[(self.first_index[len] + off) as usize]);
            }
        }
        None
    }

    /// `u16 n | n x (u8 symbol, u8 length)`.
    pub fn serialize(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.sorted.len() as u16).to_le_bytes());
        for &s in &self.sorted {
            out.push(s);
            out.push(self.lengths[s as usize]);
        }
    }

    pub fn deserialize(buf: &[u8], pos: &mut usize) -> Result<Self, TableError> {
        let n = buf.get(*pos..*pos + 2).ok_or(TableError::Truncated)?;
        let n = u16::from_le_bytes([n[0], n[1]]) as usize;
        *pos += 2;
        if n > 256 {
            return Err(TableError::Oversubscribed);
        }
        let body = buf.get(*pos..*pos + 2 * n).ok_or(TableError::Truncated)?;
        *pos += 2 * n;
        let mut lengths = [0u8; 256];
        for pair in body.chunks_exact(2) {
            let (s, l) = (pair[0], pair[1]);
            if l == 0 || l > MAX_CODE_LEN {
                return Err(TableError::BadLength(l));
            }
            if lengths[s as usize] != 0 {
                return Err(TableError::DuplicateSymbol(s));
            }
            lengths[s as usize] = l;
        }
        Self::from_lengths(lengths)
    }
}

fn huffman_lengths(freq: &[u64; 256]) -> [u8; 256] {
    let mut lengths = [0u8; 256];
    let used: Vec<usize> = (0..256).filter(|&s| freq[s] > 0).collect();
    match used.len() {
        0 => return lengths,
        1 => {
            lengths[used[0]] = 1;
            return lengths;
        }
        _ => {}
    }
    // Nodes 0..256 are leaves; internal nodes appended. Ties broken by node id.
    let mut parent: Vec<usize> = vec![usize::MAX; 256];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = used.iter().map(|&s| Reverse((freq[s], s))).collect();
    while heap.len() > 1 {
        let Reverse((fa, a)) = heap.pop().unwrap();
        let Reverse((fb, b)) = heap.pop().unwrap();
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((fa + fb, id)));
    }
    for &s in &used {
        let mut d = 0u32;
        let mut n = s;
        while parent[n] != usize::MAX {
            n = parent[n];
            d += 1;
        }
        lengths[s] = d.min(255) as u8;
    }
    lengths
}

/// Magnitude category: bit length of `|v|`.
pub fn category(v: i32) -> u32 {
    32 - v.unsigned_abs().leading_zeros()
}

/// Extra bits for a signed value in its category (one's complement for negatives).
pub fn signed_bits(v: i32) -> u32 {
    let c = category(v);
    if v >= 0 {
        v as u32
    } else {
        (v + (1 << c) - 1) as u32
    }
}

pub fn signed_from_bits(bits: u32, cat: u32) -> i32 {
    if cat == 0 {
        return 0;
    }
    if bits >> (cat - 1) == 1 {
        bits as i32
    } else {
        bits as i32 - (1 << cat) + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_roundtrip() {
        let mut w = BitWriter::default();
        let items = [(1u32, 1u32), (0b1011, 4), (0, 3), (0xFFFF, 16), (5, 7), (0x12345, 20)];
        for (b, l) in items {
            w.put(b, l);
        }
        let bytes = w.finish();
        let mut r = BitReader::new(&bytes);
        for (b, l) in items {
            assert_eq!(r.bits(l), Some(b));
        }
    }

    #[test]
    fn huffman_is_prefix_and_roundtrips() {
        let mut freq = [0u64; 256];
        for (i, f) in freq.iter_mut().enumerate().take(40) {
            *f = (i as u64 * 37 % 11) + 1;
        }
        freq[200] = 100_000;
        let code = PrefixCode::from_frequencies(&freq);
        let mut w = BitWriter::default();
        let msg: Vec<u8> = (0..500).map(|i| if i % 3 == 0 { 200 } else { (i % 40) as u8 }).collect();
        for &s in &msg {
            code.write(&mut w, s);
        }
        let bytes = w.finish();
        let mut r = BitReader::new(&bytes);
        for &s in &msg {
            assert_eq!(code.read(&mut r), Some(s));
        }
        let mut table = Vec::new();
        code.serialize(&mut table);
        let mut pos = 0;
        assert_eq!(PrefixCode::deserialize(&table, &mut pos).unwrap(), code);
        assert_eq!(pos, table.len());
    }

    #[test]
    fn length_limit_enforced_on_fibonacci_frequencies() {
        let mut freq = [0u64; 256];
        let (mut a, mut b) = (1u64, 1u64);
        for f in freq.iter_mut().take(40) {
            *f = a;
            (a, b) = (b, a + b);
        }
        let code = PrefixCode::from_frequencies(&freq);
        assert!(code.lengths.iter().all(|&l| l <= MAX_CODE_LEN));
        assert!(code.lengths[..40].iter().all(|&l| l > 0));
    }

    #[test]
    fn single_symbol_code() {
        let mut freq = [0u64; 256];
        freq[7] = 9;
        let code = PrefixCode::from_frequencies(&freq);
        let mut w = BitWriter::default();
        code.write(&mut w, 7);
        code.write(&mut w, 7);
        let bytes = w.finish();
        let mut r = BitReader::new(&bytes);
        assert_eq!(code.read(&mut r), Some(7));
    }

    #[test]
    fn oversubscribed_table_rejected() {
        let mut lengths = [0u8; 256];
        lengths[..3].fill(1);
        assert_eq!(PrefixCode::from_lengths(lengths), Err(TableError::Oversubscribed));
    }

    #[test]
    fn signed_categories() {
        for v in -2000..2000 {
            let c = category(v);
            assert_eq!(signed_from_bits(signed_bits(v), c), v);
        }
        assert_eq!(category(0), 0);
        assert_eq!(category(-1), 1);
        assert_eq!(category(255), 8);
    }
}
