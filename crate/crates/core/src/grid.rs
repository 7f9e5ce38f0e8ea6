//! Lat-lon grid geometry: grid specs, dense fields, latitude weighting,
//! average pooling, and great-circle distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in kilometers used for every distance in this crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Kilometers per degree of great-circle arc (π·R/180).
pub const KM_PER_DEG: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// A regular latitude-longitude grid.
///
/// Row `i` sits at `lat_start + i·lat_step`, column `j` at
/// `lon_start + j·lon_step` (wrapped into [0, 360)). `lat_step` may be
/// negative for north-to-south ordering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nlat: usize,
    pub nlon: usize,
    pub lat_start: f64,
    pub lat_step: f64,
    pub lon_start: f64,
    pub lon_step: f64,
}

impl GridSpec {
    pub fn new(
        nlat: usize,
        nlon: usize,
        lat_start: f64,
        lat_step: f64,
        lon_start: f64,
        lon_step: f64,
    ) -> Result<Self> {
        if nlat == 0 || nlon == 0 {
            return Err(Error::invalid("grid must have nlat >= 1 and nlon >= 1"));
        }
        let lat_end = lat_start + lat_step * (nlat as f64 - 1.0);
        let (lo, hi) = if lat_start <= lat_end {
            (lat_start, lat_end)
        } else {
            (lat_end, lat_start)
        };
        if lo < -90.0 - 1e-9 || hi > 90.0 + 1e-9 {
            return Err(Error::invalid(format!(
                "latitudes [{lo}, {hi}] leave [-90, 90]"
            )));
        }
        Ok(GridSpec {
            nlat,
            nlon,
            lat_start,
            lat_step,
            lon_start: wrap_lon(lon_start),
            lon_step,
        })
    }

    pub fn len(&self) -> usize {
        self.nlat * self.nlon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lat(&self, i: usize) -> f64 {
        self.lat_start + self.lat_step * i as f64
    }

    pub fn lon(&self, j: usize) -> f64 {
        wrap_lon(self.lon_start + self.lon_step * j as f64)
    }

    /// Grid point nearest to the given position (longitude treated as periodic).
    pub fn nearest_index(&self, lat: f64, lon: f64) -> (usize, usize) {
        let i = ((lat - self.lat_start) / self.lat_step).round();
        let i = i.clamp(0.0, self.nlat as f64 - 1.0) as usize;
        let dlon = wrap_lon_signed(lon - self.lon_start) / self.lon_step;
        let j = dlon.round().rem_euclid(self.nlon as f64) as usize % self.nlon;
        (i, j)
    }

    pub fn same_geometry(&self, other: &GridSpec) -> bool {
        self.nlat == other.nlat
            && self.nlon == other.nlon
            && (self.lat_start - other.lat_start).abs() < 1e-9
            && (self.lat_step - other.lat_step).abs() < 1e-9
            && (self.lon_start - other.lon_start).abs() < 1e-9
            && (self.lon_step - other.lon_step).abs() < 1e-9
    }

    pub fn describe(&self) -> String {
        format!(
            "{}x{} grid (lat {} step {}, lon {} step {})",
            self.nlat, self.nlon, self.lat_start, self.lat_step, self.lon_start, self.lon_step
        )
    }
}

/// Wrap a longitude into [0, 360).
pub fn wrap_lon(lon: f64) -> f64 {
    lon.rem_euclid(360.0)
}

/// Wrap a longitude difference into [-180, 180).
pub fn wrap_lon_signed(dlon: f64) -> f64 {
    (dlon + 180.0).rem_euclid(360.0) - 180.0
}

/// A dense scalar field on a [`GridSpec`], row-major (latitude rows,
/// longitude fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::shape(
                format!("{} values", grid.len()),
                format!("{}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("field contains non-finite values"));
        }
        Ok(Field { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        let n = grid.len();
        Field {
            grid,
            values: vec![value; n],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.nlon + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.grid.nlon + j] = v;
    }

    /// Bilinear interpolation at (lat, lon), periodic in longitude and
    /// clamped at the latitude edges.
    pub fn sample(&self, lat: f64, lon: f64) -> f64 {
        let g = &self.grid;
        let fi = ((lat - g.lat_start) / g.lat_step).clamp(0.0, g.nlat as f64 - 1.0);
        let i0 = fi.floor() as usize;
        let i1 = (i0 + 1).min(g.nlat - 1);
        let ti = fi - i0 as f64;

        let fj = wrap_lon_signed(lon - g.lon_start) / g.lon_step;
        let fj = fj.rem_euclid(g.nlon as f64);
        let j0 = fj.floor() as usize % g.nlon;
        let j1 = (j0 + 1) % g.nlon;
        let tj = fj - fj.floor();

        let v00 = self.get(i0, j0);
        let v01 = self.get(i0, j1);
        let v10 = self.get(i1, j0);
        let v11 = self.get(i1, j1);
        (1.0 - ti) * ((1.0 - tj) * v00 + tj * v01) + ti * ((1.0 - tj) * v10 + tj * v11)
    }
}

/// Per-row latitude weights, proportional to cos(lat) and normalized to
/// unit mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LatWeights {
    pub weights: Vec<f64>,
}

impl LatWeights {
    /// All-ones weights: weighted metrics reduce to their unweighted forms.
    pub fn uniform(nlat: usize) -> Self {
        LatWeights {
            weights: vec![1.0; nlat],
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// cos(lat) weights normalized so their mean is exactly 1.
///
/// Rows at the poles get weight 0; a grid whose every row is a pole has no
/// usable weighting and is rejected.
pub fn latitude_weights(grid: &GridSpec) -> Result<LatWeights> {
    let mut w: Vec<f64> = (0..grid.nlat)
        .map(|i| {
            let c = grid.lat(i).to_radians().cos();
            // cos(90°) in f64 is ~6e-17, not 0; snap pole rows to exactly 0
            if c < 1e-12 {
                0.0
            } else {
                c
            }
        })
        .collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    if mean <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    for v in &mut w {
        *v /= mean;
    }
    Ok(LatWeights { weights: w })
}

/// Policy for pooling a grid whose dimensions the factor does not divide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    /// Reject with an error (default).
    Reject,
    /// Drop trailing rows/columns that do not fill a block.
    Truncate,
}

/// Block-mean pooling by an integer factor; rejects non-divisible dims.
pub fn average_pool(field: &Field, factor: usize) -> Result<Field> {
    average_pool_with(field, factor, EdgePolicy::Reject)
}

/// Block-mean pooling with an explicit edge policy.
///
/// Each output cell is the arithmetic mean of its factor×factor block; the
/// output grid has its step multiplied by the factor and its origin moved
/// to the block centers.
pub fn average_pool_with(field: &Field, factor: usize, policy: EdgePolicy) -> Result<Field> {
    if factor == 0 {
        return Err(Error::invalid("pooling factor must be >= 1"));
    }
    let g = &field.grid;
    let (bh, bw) = (g.nlat / factor, g.nlon / factor);
    if bh == 0 || bw == 0 {
        return Err(Error::invalid(format!(
            "pooling factor {factor} exceeds grid dims {}x{}",
            g.nlat, g.nlon
        )));
    }
    if policy == EdgePolicy::Reject && (g.nlat % factor != 0 || g.nlon % factor != 0) {
        return Err(Error::invalid(format!(
            "pooling factor {factor} does not divide grid dims {}x{}",
            g.nlat, g.nlon
        )));
    }

    let out_grid = GridSpec {
        nlat: bh,
        nlon: bw,
        lat_start: g.lat_start + g.lat_step * (factor as f64 - 1.0) / 2.0,
        lat_step: g.lat_step * factor as f64,
        lon_start: wrap_lon(g.lon_start + g.lon_step * (factor as f64 - 1.0) / 2.0),
        lon_step: g.lon_step * factor as f64,
    };

    let mut values = vec![0.0; bh * bw];
    let inv = 1.0 / (factor * factor) as f64;
    for bi in 0..bh {
        for bj in 0..bw {
            let mut sum = 0.0;
            for di in 0..factor {
                for dj in 0..factor {
                    sum += field.get(bi * factor + di, bj * factor + dj);
                }
            }
            values[bi * bw + bj] = sum * inv;
        }
    }
    Ok(Field {
        grid: out_grid,
        values,
    })
}

/// Haversine great-circle distance in kilometers on a sphere of radius
/// [`EARTH_RADIUS_KM`]. Longitudes are wrapped; symmetric; zero iff the
/// points coincide.
pub fn great_circle_km(lat_a: f64, lon_a: f64, lat_b: f64, lon_b: f64) -> f64 {
    let phi1 = lat_a.to_radians();
    let phi2 = lat_b.to_radians();
    let dphi = (lat_b - lat_a).to_radians();
    let dlambda = wrap_lon_signed(lon_b - lon_a).to_radians();

    let s = (dphi / 2.0).sin().powi(2)
        + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * s.sqrt().min(1.0).asin()
}

/// A named collection of fields sharing one grid (e.g. one forecast lead's
/// variables).
#[derive(Debug, Clone, Default)]
pub struct FieldSet {
    pub fields: std::collections::BTreeMap<String, Field>,
}

impl FieldSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, field: Field) -> Result<()> {
        if let Some(existing) = self.fields.values().next() {
            if !existing.grid.same_geometry(&field.grid) {
                return Err(Error::GridMismatch {
                    a: existing.grid.describe(),
                    b: field.grid.describe(),
                });
            }
        }
        self.fields.insert(name.to_string(), field);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Field> {
        self.fields
            .get(name)
            .ok_or_else(|| Error::invalid(format!("field set has no field named {name}")))
    }

    pub fn grid(&self) -> Result<GridSpec> {
        self.fields
            .values()
            .next()
            .map(|f| f.grid)
            .ok_or_else(|| Error::invalid("empty field set"))
    }
}

/// Relative vorticity ζ = ∂v/∂x − ∂u/∂y of a horizontal wind field, in 1/s.
///
/// Central differences, periodic in longitude, one-sided at the latitude
/// edges. Wind components in m/s on the same grid.
pub fn relative_vorticity(u: &Field, v: &Field) -> Result<Field> {
    if !u.grid.same_geometry(&v.grid) {
        return Err(Error::GridMismatch {
            a: u.grid.describe(),
            b: v.grid.describe(),
        });
    }
    let g = &u.grid;
    let dy = (g.lat_step.to_radians() * EARTH_RADIUS_KM * 1000.0).abs();
    let mut out = vec![0.0; g.len()];
    for i in 0..g.nlat {
        let coslat = g.lat(i).to_radians().cos().max(1e-6);
        let dx = (g.lon_step.to_radians() * EARTH_RADIUS_KM * 1000.0 * coslat).abs();
        for j in 0..g.nlon {
            let jp = (j + 1) % g.nlon;
            let jm = (j + g.nlon - 1) % g.nlon;
            let dvdx = (v.get(i, jp) - v.get(i, jm)) / (2.0 * dx);

            let dudy = if i == 0 {
                (u.get(1.min(g.nlat - 1), j) - u.get(0, j)) / dy
            } else if i == g.nlat - 1 {
                (u.get(i, j) - u.get(i - 1, j)) / dy
            } else {
                (u.get(i + 1, j) - u.get(i - 1, j)) / (2.0 * dy)
            };
            // dy above is a positive distance along increasing row index;
            // flip when rows run north-to-south so d/dy means northward.
            let dudy = if g.lat_step >= 0.0 { dudy } else { -dudy };
            out[i * g.nlon + j] = dvdx - dudy;
        }
    }
    Field::new(*g, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(nlat: usize, nlon: usize, lat0: f64, dlat: f64) -> GridSpec {
        GridSpec::new(nlat, nlon, lat0, dlat, 0.0, 360.0 / nlon as f64).unwrap()
    }

    #[test]
    fn weights_single_equator_ring() {
        let w = latitude_weights(&grid(1, 8, 0.0, 1.0)).unwrap();
        assert_eq!(w.weights, vec![1.0]);
    }

    #[test]
    fn weights_three_rows() {
        // cos = {0.5, 1, 0.5}, mean 2/3 -> {0.75, 1.5, 0.75}
        let w = latitude_weights(&grid(3, 4, -60.0, 60.0)).unwrap();
        for (got, want) in w.weights.iter().zip([0.75, 1.5, 0.75]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn weights_pole_row_is_zero() {
        let w = latitude_weights(&grid(3, 4, 0.0, 45.0)).unwrap();
        assert!(w.weights[2].abs() < 1e-12);
    }

    #[test]
    fn weights_all_pole_grid_rejected() {
        let g = GridSpec::new(1, 4, 90.0, 1.0, 0.0, 90.0).unwrap();
        assert!(matches!(
            latitude_weights(&g),
            Err(Error::DegenerateWeights)
        ));
    }

    #[test]
    fn weights_mean_is_one() {
        for nlat in [2usize, 7, 33, 180] {
            let g = grid(nlat, 4, -80.0, 160.0 / (nlat as f64 - 1.0));
            let w = latitude_weights(&g).unwrap();
            let mean = w.weights.iter().sum::<f64>() / nlat as f64;
            assert!((mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_constant_field() {
        let f = Field::constant(grid(5, 5, -10.0, 5.0), 1.0);
        let p = average_pool(&f, 5).unwrap();
        assert_eq!(p.grid.nlat, 1);
        assert_eq!(p.grid.nlon, 1);
        assert!((p.values[0] - 1.0).abs() < 1e-15);
        // origin shifted to the block center
        assert!((p.grid.lat_start - 0.0).abs() < 1e-12);
    }

    #[test]
    fn pool_two_by_two() {
        let g = grid(2, 2, 0.0, 1.0);
        let f = Field::new(g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = average_pool(&f, 2).unwrap();
        assert_eq!(p.values, vec![2.5]);
    }

    #[test]
    fn pool_spike() {
        let g = grid(5, 5, 0.0, 1.0);
        let mut f = Field::constant(g, 0.0);
        f.set(2, 3, 10.0);
        let p = average_pool(&f, 5).unwrap();
        assert!((p.values[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn pool_rejects_bad_factor() {
        let f = Field::constant(grid(5, 5, 0.0, 1.0), 0.0);
        assert!(average_pool(&f, 0).is_err());
        assert!(average_pool(&f, 2).is_err());
        let t = average_pool_with(&f, 2, EdgePolicy::Truncate).unwrap();
        assert_eq!((t.grid.nlat, t.grid.nlon), (2, 2));
    }

    #[test]
    fn distance_reference_points() {
        assert_eq!(great_circle_km(0.0, 0.0, 0.0, 0.0), 0.0);
        let quarter = great_circle_km(0.0, 0.0, 90.0, 0.0);
        assert!((quarter - 10007.543).abs() < 1e-3, "{quarter}");
        let half = great_circle_km(0.0, 0.0, 0.0, 180.0);
        assert!((half - 20015.087).abs() < 1e-3, "{half}");
    }

    #[test]
    fn vorticity_of_solid_rotation_is_positive() {
        // v = +x-ish tangential flow around the grid center: u = -y, v = x.
        let g = grid(21, 21, -5.0, 0.5);
        let mut u = Field::constant(g, 0.0);
        let mut v = Field::constant(g, 0.0);
        for i in 0..21 {
            for j in 0..21 {
                let y = (i as f64 - 10.0) * 0.5 * KM_PER_DEG * 1000.0;
                let x = (j as f64 - 10.0) * 0.5 * KM_PER_DEG * 1000.0 * g.lat(i).to_radians().cos();
                u.set(i, j, -1e-5 * y);
                v.set(i, j, 1e-5 * x);
            }
        }
        let zeta = relative_vorticity(&u, &v).unwrap();
        assert!(zeta.get(10, 10) > 1e-5, "{}", zeta.get(10, 10));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn distance_symmetric_and_triangle(
            a in (-90.0f64..90.0, 0.0f64..360.0),
            b in (-90.0f64..90.0, 0.0f64..360.0),
            c in (-90.0f64..90.0, 0.0f64..360.0),
        ) {
            let ab = great_circle_km(a.0, a.1, b.0, b.1);
            let ba = great_circle_km(b.0, b.1, a.0, a.1);
            prop_assert!((ab - ba).abs() < 1e-9);

            let bc = great_circle_km(b.0, b.1, c.0, c.1);
            let ac = great_circle_km(a.0, a.1, c.0, c.1);
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn pool_commutes_with_constant_shift(
            vals in proptest::collection::vec(-50.0f64..50.0, 16),
            shift in -10.0f64..10.0,
        ) {
            let g = grid(4, 4, 0.0, 1.0);
            let f = Field::new(g, vals.clone()).unwrap();
            let shifted = Field::new(g, vals.iter().map(|v| v + shift).collect()).unwrap();
            let p1 = average_pool(&f, 2).unwrap();
            let p2 = average_pool(&shifted, 2).unwrap();
            for (a, b) in p1.values.iter().zip(&p2.values) {
                prop_assert!((a + shift - b).abs() < 1e-9);
            }
        }
    }
}
