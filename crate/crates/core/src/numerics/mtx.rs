//! Matrix Market coordinate format (`.mtx`) for [`SparseMatrix`].

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use super::SparseMatrix;
use crate::error::{Error, Result};

const HEADER: &str = "%%MatrixMarket matrix coordinate real general";

pub fn write_mtx<W: Write>(matrix: &SparseMatrix, mut out: W) -> Result<()> {
    let mut buf = String::new();
    writeln!(buf, "{HEADER}").unwrap();
    writeln!(buf, "{} {} {}", matrix.n_rows(), matrix.n_cols(), matrix.nnz()).unwrap();
    for i in 0..matrix.n_rows() {
        for (j, v) in matrix.row(i) {
            // {:e} prints the shortest representation that round-trips
            writeln!(buf, "{} {} {:e}", i + 1, j + 1, v).unwrap();
        }
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn read_mtx<R: BufRead>(input: R) -> Result<SparseMatrix> {
    let mut lines = input.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(Error::Parse { line: 1, message: "empty file".into() })?;
    let header = header?;
    let lower = header.to_ascii_lowercase();
    if !lower.starts_with("%%matrixmarket matrix coordinate") {
        return Err(Error::Parse { line: 1, message: "not a coordinate Matrix Market file".into() });
    }
    if !lower.contains("real") && !lower.contains("integer") {
        return Err(Error::Parse { line: 1, message: "only real or integer fields are supported".into() });
    }
    let symmetric = lower.contains("symmetric");

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })
        };
        match size {
            None => {
                if fields.len() != 3 {
                    return Err(Error::Parse { line: line_no, message: "expected 'rows cols nnz'".into() });
                }
                size = Some((parse_usize(fields[0])?, parse_usize(fields[1])?, parse_usize(fields[2])?));
                triplets.reserve(size.unwrap().2);
            }
            Some((rows, cols, _)) => {
                if fields.len() != 3 {
                    return Err(Error::Parse { line: line_no, message: "expected 'row col value'".into() });
                }
                let i = parse_usize(fields[0])?;
                let j = parse_usize(fields[1])?;
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(Error::Parse { line: line_no, message: format!("index ({i}, {j}) out of range") });
                }
                let v: f64 = fields[2]
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| Error::Parse { line: line_no, message: e.to_string() })?;
                triplets.push((i - 1, j - 1, v));
                if symmetric && i != j {
                    triplets.push((j - 1, i - 1, v));
                }
            }
        }
    }
    let (rows, cols, nnz) = size.ok_or(Error::Parse { line: 0, message: "missing size line".into() })?;
    let stored = if symmetric {
        triplets.iter().filter(|t| t.0 >= t.1).count()
    } else {
        triplets.len()
    };
    if stored != nnz {
        return Err(Error::Parse { line: 0, message: format!("expected {nnz} entries, found {stored}") });
    }
    SparseMatrix::from_triplets(rows, cols, &triplets)
}

pub fn save_mtx(matrix: &SparseMatrix, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_mtx(matrix, std::io::BufWriter::new(file))
}

pub fn load_mtx(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    let file = std::fs::File::open(path)?;
    read_mtx(std::io::BufReader::new(file))
}
