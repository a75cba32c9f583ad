//! DOT rendering of a transition matrix as a directed, weighted graph.

use anyhow::{bail, Result};
use nalgebra::DMatrix;
use std::fmt::Write;

/// Renders `a` as a DOT digraph: one node per state dimension, and an edge
/// `x_m -> x_n` for every entry with `|a[n, m]| > threshold` (state `m`
/// drives state `n`), labeled with the weight to three decimals. Node and
/// edge order is fixed by the row-major entry order.
pub fn matrix_to_dot(a: &DMatrix<f64>, threshold: f64) -> Result<String> {
    if !a.is_square() {
        bail!("adjacency input must be square, got {}x{}", a.nrows(), a.ncols());
    }
    let n = a.nrows();
    let mut out = String::new();
    writeln!(out, "digraph transition {{")?;
    writeln!(out, "  rankdir=LR;")?;
    writeln!(out, "  node [shape=circle];")?;
    for i in 1..=n {
        writeln!(out, "  x{i};")?;
    }
    for row in 0..n {
        for col in 0..n {
            let weight = a[(row, col)];
            if weight.abs() > threshold {
                writeln!(out, "  x{} -> x{} [label=\"{:.3}\"];", col + 1, row + 1, weight)?;
            }
        }
    }
    writeln!(out, "}}")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge_count(dot: &str) -> usize {
        dot.lines().filter(|l| l.contains("->")).count()
    }

    #[test]
    fn identity_gives_self_loops() {
        let dot = matrix_to_dot(&DMatrix::identity(3, 3), 1e-10).unwrap();
        assert_eq!(edge_count(&dot), 3);
        assert!(dot.contains("x1 -> x1 [label=\"1.000\"]"));
    }

    #[test]
    fn zero_matrix_keeps_all_nodes() {
        let dot = matrix_to_dot(&DMatrix::zeros(9, 9), 1e-10).unwrap();
        assert_eq!(edge_count(&dot), 0);
        for i in 1..=9 {
            assert!(dot.contains(&format!("x{i};")));
        }
    }

    #[test]
    fn edge_goes_from_driver_to_driven() {
        // a[0, 1] = 0.5: state 2 drives state 1.
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = 0.5;
        let dot = matrix_to_dot(&a, 1e-10).unwrap();
        assert!(dot.contains("x2 -> x1 [label=\"0.500\"]"));
    }

    #[test]
    fn dense_block_matrix_has_27_edges() {
        let mut a = DMatrix::zeros(9, 9);
        for b in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    a[(3 * b + i, 3 * b + j)] = 0.25;
                }
            }
        }
        let dot = matrix_to_dot(&a, 1e-10).unwrap();
        assert_eq!(edge_count(&dot), 27);
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(matrix_to_dot(&DMatrix::zeros(2, 3), 1e-10).is_err());
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64 * 0.1);
        assert_eq!(matrix_to_dot(&a, 1e-10).unwrap(), matrix_to_dot(&a, 1e-10).unwrap());
    }
}
