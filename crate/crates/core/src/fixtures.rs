//! Small hand-checkable datasets shared by tests, examples and the demo.

use crate::ratings::{IdMap, RatingsMatrix};

/// The 4×6 sample matrix used throughout the neighborhood examples:
///
/// ```text
///       i1 i2 i3 i4 i5 i6
///   u1   1  5  .  2  4  ?
///   u2   4  2  .  5  1  2
///   u3   2  4  3  .  .  5
///   u4   2  4  .  5  1  ?
/// ```
///
/// Raw ids are `1..=4` for users and `1..=6` for items, dense indices are
/// the raw ids minus one.
pub fn toy_ratings() -> RatingsMatrix {
    const CELLS: [(usize, usize, f64); 17] = [
        (0, 0, 1.0),
        (0, 1, 5.0),
        (0, 3, 2.0),
        (0, 4, 4.0),
        (1, 0, 4.0),
        (1, 1, 2.0),
        (1, 3, 5.0),
        (1, 4, 1.0),
        (1, 5, 2.0),
        (2, 0, 2.0),
        (2, 1, 4.0),
        (2, 2, 3.0),
        (2, 5, 5.0),
        (3, 0, 2.0),
        (3, 1, 4.0),
        (3, 3, 5.0),
        (3, 4, 1.0),
    ];
    let users = IdMap::from_raw((1..=4).collect()).expect("distinct ids");
    let items = IdMap::from_raw((1..=6).collect()).expect("distinct ids");
    RatingsMatrix::from_indexed(users, items, CELLS.iter().map(|&(u, i, r)| (u, i, r, 0)))
        .expect("valid fixture")
}

/// Build a matrix from `(user, item, rating)` cells with raw ids equal to
/// dense indices.
pub fn from_cells(n_users: usize, n_items: usize, cells: &[(usize, usize, f64)]) -> RatingsMatrix {
    let users = IdMap::from_raw((0..n_users as u64).collect()).expect("distinct ids");
    let items = IdMap::from_raw((0..n_items as u64).collect()).expect("distinct ids");
    RatingsMatrix::from_indexed(users, items, cells.iter().map(|&(u, i, r)| (u, i, r, 0)))
        .expect("valid cells")
}
