//! Packing observations with varying ship counts into dense matrices.
//!
//! Ships inside each observation are laid out in a canonical order (sorted
//! lexicographically on their feature block) so every reduction over ships
//! runs in the same order however the caller listed them. That is what makes
//! network outputs bit-identical under ship permutations.

use std::cmp::Ordering;
use std::ops::Range;

use ndarray::{s, Array2};

use crate::observation::{StackedObservation, SHIP_BLOCK, WP_BLOCK};

#[derive(Debug, Clone, PartialEq)]
pub struct ObsBatch {
    /// `B × WP_BLOCK`
    pub wp: Array2<f64>,
    /// `M × SHIP_BLOCK`, every sample's ships contiguous and canonical.
    pub ships: Array2<f64>,
    /// `offsets[b]..offsets[b + 1]` are the ship rows of sample `b`.
    pub offsets: Vec<usize>,
    /// Index of each ship row within its observation's `ships` list.
    pub source_index: Vec<usize>,
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Ship indices of `obs` in canonical order.
pub fn canonical_order(obs: &StackedObservation) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..obs.ships.len()).collect();
    idx.sort_by(|&i, &j| lexicographic(&obs.ships[i], &obs.ships[j]).then(i.cmp(&j)));
    idx
}

impl ObsBatch {
    pub fn from_observations<'a, I>(obs: I) -> Self
    where
        I: IntoIterator<Item = &'a StackedObservation>,
    {
        let obs: Vec<&StackedObservation> = obs.into_iter().collect();
        let n_ships: usize = obs.iter().map(|o| o.ships.len()).sum();
        let mut wp = Array2::zeros((obs.len(), WP_BLOCK));
        let mut ships = Array2::zeros((n_ships, SHIP_BLOCK));
        let mut offsets = Vec::with_capacity(obs.len() + 1);
        let mut source_index = Vec::with_capacity(n_ships);
        offsets.push(0);
        let mut row = 0;
        for (b, o) in obs.iter().enumerate() {
            wp.row_mut(b).assign(&ndarray::ArrayView1::from(&o.wp[..]));
            for i in canonical_order(o) {
                ships.row_mut(row).assign(&ndarray::ArrayView1::from(&o.ships[i][..]));
                source_index.push(i);
                row += 1;
            }
            offsets.push(row);
        }
        ObsBatch {
            wp,
            ships,
            offsets,
            source_index,
        }
    }

    pub fn single(obs: &StackedObservation) -> Self {
        Self::from_observations(std::iter::once(obs))
    }

    pub fn len(&self) -> usize {
        self.wp.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_ships(&self) -> usize {
        self.ships.nrows()
    }

    pub fn ship_rows(&self, b: usize) -> Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    /// Sample index owning each ship row.
    pub fn owners(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_ships());
        for b in 0..self.len() {
            out.extend(std::iter::repeat(b).take(self.ship_rows(b).len()));
        }
        out
    }

    /// Waypoint block with each sample's action appended as a last column.
    pub fn wp_with_action(&self, actions: &[f64]) -> Array2<f64> {
        debug_assert_eq!(actions.len(), self.len());
        let mut x = Array2::zeros((self.len(), WP_BLOCK + 1));
        x.slice_mut(s![.., ..WP_BLOCK]).assign(&self.wp);
        for (b, &a) in actions.iter().enumerate() {
            x[[b, WP_BLOCK]] = a;
        }
        x
    }

    /// Ship blocks with the owning sample's action appended.
    pub fn ships_with_action(&self, actions: &[f64]) -> Array2<f64> {
        let mut x = Array2::zeros((self.total_ships(), SHIP_BLOCK + 1));
        x.slice_mut(s![.., ..SHIP_BLOCK]).assign(&self.ships);
        for b in 0..self.len() {
            for r in self.ship_rows(b) {
                x[[r, SHIP_BLOCK]] = actions[b];
            }
        }
        x
    }

    /// Ordered pairs `[ship_i, ship_j]` for every sample, `i` major.
    pub fn pairs(&self) -> Array2<f64> {
        let n_pairs: usize = (0..self.len()).map(|b| self.ship_rows(b).len().pow(2)).sum();
        let mut x = Array2::zeros((n_pairs, 2 * SHIP_BLOCK));
        let mut row = 0;
        for b in 0..self.len() {
            let rows = self.ship_rows(b);
            for i in rows.clone() {
                for j in rows.clone() {
                    x.slice_mut(s![row, ..SHIP_BLOCK]).assign(&self.ships.row(i));
                    x.slice_mut(s![row, SHIP_BLOCK..]).assign(&self.ships.row(j));
                    row += 1;
                }
            }
        }
        x
    }

    /// Start row of each sample's block in [`ObsBatch::pairs`].
    pub fn pair_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len() + 1);
        let mut acc = 0;
        out.push(0);
        for b in 0..self.len() {
            acc += self.ship_rows(b).len().pow(2);
            out.push(acc);
        }
        out
    }

    /// A copy with `noise(value)` applied to every feature.
    pub fn perturbed(&self, mut noise: impl FnMut() -> f64) -> Self {
        let mut out = self.clone();
        out.wp.mapv_inplace(|v| v + noise());
        out.ships.mapv_inplace(|v| v + noise());
        out
    }

    /// Reorders per-ship-row values back into each observation's own order.
    pub fn per_sample_in_source_order(&self, values: &[f64]) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|b| {
                let rows = self.ship_rows(b);
                let mut out = vec![0.0; rows.len()];
                for r in rows {
                    out[self.source_index[r]] = values[r];
                }
                out
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(ships: &[f64]) -> StackedObservation {
        StackedObservation {
            wp: vec![0.5; WP_BLOCK],
            ships: ships.iter().map(|&v| vec![v; SHIP_BLOCK]).collect(),
        }
    }

    #[test]
    fn canonical_layout_ignores_input_order() {
        let a = ObsBatch::from_observations([&obs(&[3.0, 1.0, 2.0]), &obs(&[])]);
        let b = ObsBatch::from_observations([&obs(&[2.0, 3.0, 1.0]), &obs(&[])]);
        assert_eq!(a.ships, b.ships);
        assert_eq!(a.offsets, vec![0, 3, 3]);
        assert_eq!(a.ships[[0, 0]], 1.0);
        assert_eq!(a.source_index, vec![1, 2, 0]);
        let back = a.per_sample_in_source_order(&[10.0, 20.0, 30.0]);
        assert_eq!(back[0], vec![30.0, 10.0, 20.0]);
        assert!(back[1].is_empty());
    }

    #[test]
    fn action_columns_and_pairs() {
        let b = ObsBatch::from_observations([&obs(&[1.0, 2.0]), &obs(&[4.0])]);
        let w = b.wp_with_action(&[0.1, -0.2]);
        assert_eq!(w[[1, WP_BLOCK]], -0.2);
        let s = b.ships_with_action(&[0.1, -0.2]);
        assert_eq!(s.column(SHIP_BLOCK).to_vec(), vec![0.1, 0.1, -0.2]);
        let p = b.pairs();
        assert_eq!(p.nrows(), 5);
        assert_eq!(b.pair_offsets(), vec![0, 4, 5]);
        assert_eq!((p[[1, 0]], p[[1, SHIP_BLOCK]]), (1.0, 2.0));
        assert_eq!(b.owners(), vec![0, 0, 1]);
    }
}
