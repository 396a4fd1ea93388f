//! Plain-text tensor files.
//!
//! The format is a single header line `n c h w` followed by the
//! elements in layout order, whitespace separated. The writer emits
//! one spatial row per line and formats each value with Rust's
//! shortest round-trip notation, so a write/read cycle reproduces
//! every 32-bit value exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Writes `t` in the text format.
pub fn write_tensor<W: Write>(mut w: W, t: &Tensor<f32>) -> Result<()> {
    let s = t.shape();
    writeln!(w, "{} {} {} {}", s.n, s.c, s.h, s.w)?;
    let mut line = String::new();
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                line.clear();
                for x in 0..s.w {
                    if x > 0 {
                        line.push(' ');
                    }
                    line.push_str(&format!("{}", t.get(n, c, y, x)));
                }
                writeln!(w, "{line}")?;
            }
        }
    }
    Ok(())
}

/// Reads a tensor written by [`write_tensor`] (or any whitespace
/// layout with the same header).
pub fn read_tensor<R: Read>(r: R) -> Result<Tensor<f32>> {
    let mut reader = BufReader::new(r);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad header token `{tok}`")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 4 {
        return Err(Error::Parse(format!(
            "header must be `n c h w`, got {} fields",
            dims.len()
        )));
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let mut body = String::new();
    reader.read_to_string(&mut body)?;
    let mut data = Vec::with_capacity(shape.len());
    for tok in body.split_whitespace() {
        let v: f32 = tok
            .parse()
            .map_err(|_| Error::Parse(format!("bad value `{tok}`")))?;
        data.push(v);
    }
    if data.len() != shape.len() {
        return Err(Error::Parse(format!(
            "expected {} values for shape {shape}, found {}",
            shape.len(),
            data.len()
        )));
    }
    Tensor::from_vec(shape, data)
}

pub fn save_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let f = File::create(path)?;
    write_tensor(BufWriter::new(f), t)
}

pub fn load_tensor(path: &Path) -> Result<Tensor<f32>> {
    let f = File::open(path)?;
    read_tensor(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact_for_random_values() {
        let shape = Shape::new(2, 3, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data: Vec<f32> = (0..shape.len())
            .map(|_| (rng.gen_range(-10.0f32..10.0)).exp() * if rng.gen() { 1.0 } else { -1.0 })
            .collect();
        let t = Tensor::from_vec(shape, data).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(buf.as_slice()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn round_trip_covers_awkward_values() {
        let vals = vec![
            0.0f32,
            -0.0,
            1.0,
            -1.5,
            f32::MIN_POSITIVE,
            1.0e-45, // subnormal
            3.4028235e38,
            0.1,
            1.0 / 3.0,
        ];
        let t = Tensor::from_vec(Shape::new(1, 1, 3, 3), vals.clone()).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(buf.as_slice()).unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} reread as {b}");
        }
    }

    #[test]
    fn header_and_count_errors_are_reported() {
        assert!(read_tensor("1 2 3\n0 0 0 0 0 0".as_bytes()).is_err());
        assert!(read_tensor("1 1 2 2\n1 2 3".as_bytes()).is_err());
        assert!(read_tensor("1 1 1 2\n1 nope".as_bytes()).is_err());
    }
}
