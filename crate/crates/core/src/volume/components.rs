//! Connected-component labeling by two-pass union-find over the raster order.

use super::{Dims, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge and corner neighbors.
    #[default]
    TwentySix,
}

impl Connectivity {
    /// Neighbor offsets preceding a voxel in raster order.
    fn backward_offsets(self) -> Vec<[i64; 3]> {
        match self {
            Connectivity::Six => vec![[-1, 0, 0], [0, -1, 0], [0, 0, -1]],
            Connectivity::TwentySix => {
                let mut v = Vec::with_capacity(13);
                for dz in -1..=1i64 {
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                            if before {
                                v.push([dz, dy, dx]);
                            }
                        }
                    }
                }
                v
            }
        }
    }
}

/// Component ids per voxel: 0 is background, foreground ids run `1..=count`
/// in order of first appearance in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub dims: Dims,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Labeling {
    /// Voxel count of each component, indexed by `id - 1`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0usize; self.count];
        for &l in &self.labels {
            if l > 0 {
                s[l as usize - 1] += 1;
            }
        }
        s
    }

    /// The mask of a single component.
    pub fn component_mask(&self, id: u32, spacing: super::Spacing) -> Mask {
        let data = self.labels.iter().map(|&l| l == id).collect();
        Mask::new(self.dims, spacing, data).expect("labeling dims")
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn unite(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

pub fn connected_components(m: &Mask, connectivity: Connectivity) -> Labeling {
    let dims = m.dims();
    let offsets = connectivity.backward_offsets();
    let mut provisional = vec![0u32; dims.len()];
    // parent[0] is a dummy so provisional labels start at 1
    let mut parent: Vec<u32> = vec![0];

    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = dims.index(z, y, x);
                if !m.data()[i] {
                    continue;
                }
                let mut label = 0u32;
                for o in &offsets {
                    let p = [z as i64 + o[0], y as i64 + o[1], x as i64 + o[2]];
                    if let Some(j) = dims.checked_index(p) {
                        let l = provisional[j];
                        if l == 0 {
                            continue;
                        }
                        if label == 0 {
                            label = l;
                        } else if l != label {
                            unite(&mut parent, label, l);
                        }
                    }
                }
                if label == 0 {
                    label = parent.len() as u32;
                    parent.push(label);
                }
                provisional[i] = label;
            }
        }
    }

    let mut remap = vec![0u32; parent.len()];
    let mut count = 0u32;
    let mut labels = provisional;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = find(&mut parent, *l) as usize;
        if remap[root] == 0 {
            count += 1;
            remap[root] = count;
        }
        *l = remap[root];
    }
    Labeling { dims, labels, count: count as usize }
}
