//! Entry agreement between incidence matrices up to node and hyperedge
//! relabeling.
//!
//! Maximizing agreement over `S_n x S_m` is a quadratic assignment problem;
//! alternating exact row and column assignments from several starts gives a
//! lower bound on the optimum that is exact for relabeled copies.

use pathfinding::prelude::{kuhn_munkres, Matrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::incidence::IncidenceMatrix;

/// Fraction of equal entries without relabeling.
pub fn raw_agreement(a: &IncidenceMatrix, b: &IncidenceMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let same = a.as_slice().iter().zip(b.as_slice()).filter(|(x, y)| x == y).count();
    same as f64 / a.as_slice().len() as f64
}

/// Relabelings `(rows, cols)` with `a.permuted(rows, cols)` compared to `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub agreement: f64,
}

fn agree_count(a: &IncidenceMatrix, b: &IncidenceMatrix, rows: &[usize], cols: &[usize]) -> usize {
    let mut c = 0;
    for (i, &ri) in rows.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            c += usize::from(a.get(ri, cj) == b.get(i, j));
        }
    }
    c
}

fn best_rows(a: &IncidenceMatrix, b: &IncidenceMatrix, cols: &[usize]) -> Vec<usize> {
    let n = a.n();
    // weights[i][k]: agreement of b's row i with a's row k under the column map.
    let w = Matrix::from_fn(n, n, |(i, k)| {
        cols.iter()
            .enumerate()
            .filter(|&(j, &cj)| a.get(k, cj) == b.get(i, j))
            .count() as i64
    });
    kuhn_munkres(&w).1
}

fn best_cols(a: &IncidenceMatrix, b: &IncidenceMatrix, rows: &[usize]) -> Vec<usize> {
    let m = a.m();
    let w = Matrix::from_fn(m, m, |(j, l)| {
        rows.iter()
            .enumerate()
            .filter(|&(i, &ri)| a.get(ri, l) == b.get(i, j))
            .count() as i64
    });
    kuhn_munkres(&w).1
}

/// Pairwise transposition search on rows then columns; returns the gain.
fn swap_pass(a: &IncidenceMatrix, b: &IncidenceMatrix, rows: &mut [usize], cols: &mut [usize]) -> usize {
    let (n, m) = a.shape();
    let mut gain = 0;
    let mut improved = true;
    while improved {
        improved = false;
        for i1 in 0..n {
            for i2 in i1 + 1..n {
                let (r1, r2) = (rows[i1], rows[i2]);
                let mut delta = 0isize;
                for (j, &c) in cols.iter().enumerate() {
                    let now = (a.get(r1, c) == b.get(i1, j)) as isize + (a.get(r2, c) == b.get(i2, j)) as isize;
                    let swapped = (a.get(r2, c) == b.get(i1, j)) as isize + (a.get(r1, c) == b.get(i2, j)) as isize;
                    delta += swapped - now;
                }
                if delta > 0 {
                    rows.swap(i1, i2);
                    gain += delta as usize;
                    improved = true;
                }
            }
        }
        for j1 in 0..m {
            for j2 in j1 + 1..m {
                let (c1, c2) = (cols[j1], cols[j2]);
                let mut delta = 0isize;
                for (i, &r) in rows.iter().enumerate() {
                    let now = (a.get(r, c1) == b.get(i, j1)) as isize + (a.get(r, c2) == b.get(i, j2)) as isize;
                    let swapped = (a.get(r, c2) == b.get(i, j1)) as isize + (a.get(r, c1) == b.get(i, j2)) as isize;
                    delta += swapped - now;
                }
                if delta > 0 {
                    cols.swap(j1, j2);
                    gain += delta as usize;
                    improved = true;
                }
            }
        }
    }
    gain
}

/// Best alignment of `a` onto `b` found by alternating assignment from the
/// identity, a signature-sorted and `restarts` random starts, each refined
/// by transpositions.
pub fn align(a: &IncidenceMatrix, b: &IncidenceMatrix, restarts: usize, seed: u64) -> Alignment {
    assert_eq!(a.shape(), b.shape());
    let (n, m) = a.shape();
    let total = (n * m) as f64;
    let mut starts: Vec<Vec<usize>> = vec![(0..m).collect()];
    {
        // Match hyperedges by (size, member degrees) signature rank.
        let signature = |h: &IncidenceMatrix, j: usize| {
            let mut degs: Vec<usize> = (0..n)
                .filter(|&i| h.get(i, j))
                .map(|i| (0..m).filter(|&l| h.get(i, l)).count())
                .collect();
            degs.sort_unstable();
            (degs.len(), degs, j)
        };
        let mut ra: Vec<_> = (0..m).map(|j| signature(a, j)).collect();
        let mut rb: Vec<_> = (0..m).map(|j| signature(b, j)).collect();
        ra.sort();
        rb.sort();
        let mut cols = vec![0; m];
        for (sa, sb) in ra.iter().zip(&rb) {
            cols[sb.2] = sa.2;
        }
        starts.push(cols);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..restarts {
        let mut cols: Vec<usize> = (0..m).collect();
        cols.shuffle(&mut rng);
        starts.push(cols);
    }

    let mut best = Alignment {
        rows: (0..n).collect(),
        cols: (0..m).collect(),
        agreement: raw_agreement(a, b),
    };
    for mut cols in starts {
        let mut rows = best_rows(a, b, &cols);
        let mut score = agree_count(a, b, &rows, &cols);
        loop {
            cols = best_cols(a, b, &rows);
            rows = best_rows(a, b, &cols);
            let mut next = agree_count(a, b, &rows, &cols);
            next += swap_pass(a, b, &mut rows, &mut cols);
            if next <= score {
                score = score.max(next);
                break;
            }
            score = next;
        }
        let agreement = score as f64 / total;
        if agreement > best.agreement {
            best = Alignment {
                rows: rows.clone(),
                cols: cols.clone(),
                agreement,
            };
        }
    }
    best
}

/// Relabeling-invariant agreement, the `agreement` of [`align`].
pub fn aligned_agreement(a: &IncidenceMatrix, b: &IncidenceMatrix) -> f64 {
    align(a, b, 8, 0).agreement
}
