use glam::DVec3;

/// Exact nearest-neighbor queries over a fixed point set, bucketed in a
/// uniform grid and searched in growing shells of cells.
pub struct PointGrid<'a> {
    points: &'a [DVec3],
    min: DVec3,
    max: DVec3,
    cell: f64,
    dims: [usize; 3],
    /// `starts[c]..starts[c + 1]` indexes `order` for cell `c`.
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [DVec3]) -> Self {
        assert!(!points.is_empty(), "nearest-neighbor grid needs points");
        let (mut min, mut max) = (points[0], points[0]);
        for p in points {
            min = min.min(*p);
            max = max.max(*p);
        }
        let extent = (max - min).max(DVec3::splat(1e-9));
        // Surface samples fill a 2D set, so size cells for about four points
        // per cell on a surface-like distribution.
        let cell = (extent.x * extent.y + extent.y * extent.z + extent.z * extent.x)
            .sqrt()
            .max(extent.max_element())
            / (points.len() as f64 / 4.0).sqrt().max(1.0);
        let cell = cell.max(extent.max_element() / 256.0);
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as usize + 1).min(512));
        let mut grid = Self {
            points,
            min,
            max,
            cell,
            dims,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let ncells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncells + 1];
        let keys: Vec<usize> = points.iter().map(|p| grid.cell_index(grid.coords(*p))).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k]] = i;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.order = order;
        grid
    }

    fn coords(&self, p: DVec3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - self.min[a]) / self.cell).floor();
            c.clamp(0.0, (self.dims[a] - 1) as f64) as usize
        })
    }

    fn cell_index(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Squared lower bound on the distance from `q` to any point outside the
    /// block of cells `lo..=hi`. Infinite once the block covers the grid.
    fn unsearched_bound(&self, q: DVec3, lo: [isize; 3], hi: [isize; 3]) -> f64 {
        let d = q - q.clamp(self.min, self.max);
        let outside = d * d;
        let mut bound = f64::INFINITY;
        for a in 0..3 {
            let mut gap = f64::INFINITY;
            if lo[a] > 0 {
                gap = gap.min((q[a] - (self.min[a] + lo[a] as f64 * self.cell)).max(0.0));
            }
            if hi[a] < self.dims[a] as isize - 1 {
                gap = gap.min((self.min[a] + (hi[a] + 1) as f64 * self.cell - q[a]).max(0.0));
            }
            let rest = outside.x + outside.y + outside.z - outside[a];
            bound = bound.min(gap * gap + rest);
        }
        bound
    }

    /// Distance from `q` to the closest indexed point.
    pub fn nearest_distance(&self, q: DVec3) -> f64 {
        let c = self.coords(q);
        let mut best = f64::INFINITY;
        for r in 0.. {
            let lo = c.map(|v| v as isize - r as isize);
            let hi = c.map(|v| v as isize + r as isize);
            for z in lo[2].max(0)..=hi[2].min(self.dims[2] as isize - 1) {
                for y in lo[1].max(0)..=hi[1].min(self.dims[1] as isize - 1) {
                    let on_face = z == lo[2] || z == hi[2] || y == lo[1] || y == hi[1];
                    let mut x = lo[0].max(0);
                    while x <= hi[0].min(self.dims[0] as isize - 1) {
                        let cell = self.cell_index([x as usize, y as usize, z as usize]);
                        for &i in &self.order[self.starts[cell]..self.starts[cell + 1]] {
                            best = best.min(self.points[i].distance_squared(q));
                        }
                        // Inside the shell only the two x-faces are new.
                        x += if on_face || x != lo[0] || r == 0 { 1 } else { (2 * r) as isize };
                    }
                }
            }
            if best <= self.unsearched_bound(q, lo, hi) {
                break;
            }
        }
        best.sqrt()
    }
}
