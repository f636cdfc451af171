//! Retained draws, stored column by column.
//!
//! # Binary layout (version 1)
//!
//! All integers and floats are little-endian. Strings are a `u32` byte length
//! followed by UTF-8.
//!
//! ```text
//! magic          8 bytes  "FSVDRAW\0"
//! version        u32      1
//! m, lags, exog, intercept (0/1), factors, n_times, n_draws   u32 each
//! seed, burn_in, keep, thin                                   u64 each
//! n_series       u32, then per series: name, country, kind (strings)
//! n_columns      u32, then per column:
//!     name       string
//!     rank       u32, then rank x u32 extents
//!     values     n_draws x prod(extents) f64, draw-major; within a draw
//!                elements are column-major (first index fastest)
//! ```
//!
//! Wall time is kept in memory only, so equal runs give equal files.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{ChainState, Dims, Group};
use crate::stochvol::SvSeries;

pub const STORE_MAGIC: &[u8; 8] = b"FSVDRAW\0";
pub const STORE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct StoreMeta {
    pub seed: u64,
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
    pub wall_time_secs: f64,
}

/// Thinned post-burn-in draws.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawStore {
    pub meta: StoreMeta,
    pub dims: Dims,
    pub n_times: usize,
    pub n_draws: usize,
    pub names: Vec<String>,
    pub groups: Vec<Group>,
    pub coeffs: Vec<f64>,
    pub loadings: Vec<f64>,
    pub factors: Vec<f64>,
    pub factor_logvol: Vec<f64>,
    /// `(mu, phi, Xi)` per factor.
    pub factor_params: Vec<f64>,
    pub idio_logvol: Vec<f64>,
    pub idio_params: Vec<f64>,
    pub local_scales: Vec<f64>,
    pub lambda_sq: Vec<f64>,
    pub delta: Vec<f64>,
    pub spectral_radius: Vec<f64>,
}

const COLUMN_NAMES: [&str; 11] = [
    "coeffs",
    "loadings",
    "factors",
    "factor_logvol",
    "factor_params",
    "idio_logvol",
    "idio_params",
    "local_scales",
    "lambda_sq",
    "delta",
    "spectral_radius",
];

fn params_of(sv: &[SvSeries]) -> impl Iterator<Item = f64> + '_ {
    sv.iter().flat_map(|s| [s.mean, s.persistence, s.innovation_var])
}

impl DrawStore {
    pub fn new(meta: StoreMeta, dims: Dims, n_times: usize, names: Vec<String>, groups: Vec<Group>) -> Self {
        DrawStore {
            meta,
            dims,
            n_times,
            n_draws: 0,
            names,
            groups,
            coeffs: Vec::new(),
            loadings: Vec::new(),
            factors: Vec::new(),
            factor_logvol: Vec::new(),
            factor_params: Vec::new(),
            idio_logvol: Vec::new(),
            idio_params: Vec::new(),
            local_scales: Vec::new(),
            lambda_sq: Vec::new(),
            delta: Vec::new(),
            spectral_radius: Vec::new(),
        }
    }

    fn shapes(&self) -> [Vec<usize>; 11] {
        let d = self.dims;
        let k = d.n_regressors();
        let t = self.n_times;
        [
            vec![d.m, k],
            vec![d.m, d.factors],
            vec![t, d.factors],
            vec![t, d.factors],
            vec![3, d.factors],
            vec![t, d.m],
            vec![3, d.m],
            vec![d.m, k],
            vec![d.lags],
            vec![d.lags],
            vec![1],
        ]
    }

    fn columns(&self) -> [&Vec<f64>; 11] {
        [
            &self.coeffs,
            &self.loadings,
            &self.factors,
            &self.factor_logvol,
            &self.factor_params,
            &self.idio_logvol,
            &self.idio_params,
            &self.local_scales,
            &self.lambda_sq,
            &self.delta,
            &self.spectral_radius,
        ]
    }

    fn columns_mut(&mut self) -> [&mut Vec<f64>; 11] {
        [
            &mut self.coeffs,
            &mut self.loadings,
            &mut self.factors,
            &mut self.factor_logvol,
            &mut self.factor_params,
            &mut self.idio_logvol,
            &mut self.idio_params,
            &mut self.local_scales,
            &mut self.lambda_sq,
            &mut self.delta,
            &mut self.spectral_radius,
        ]
    }

    pub fn push(&mut self, s: &ChainState, radius: f64) {
        self.coeffs.extend(s.coeffs.iter());
        self.loadings.extend(s.loadings.iter());
        self.factors.extend(s.factors.iter());
        for sv in &s.factor_sv {
            self.factor_logvol.extend(&sv.logvol);
        }
        self.factor_params.extend(params_of(&s.factor_sv));
        for sv in &s.idio_sv {
            self.idio_logvol.extend(&sv.logvol);
        }
        self.idio_params.extend(params_of(&s.idio_sv));
        self.local_scales.extend(s.local_scales.iter());
        self.lambda_sq.extend(&s.lambda_sq);
        self.delta.extend(&s.delta);
        self.spectral_radius.push(radius);
        self.n_draws += 1;
    }

    fn slice<'a>(&self, column: &'a [f64], width: usize, d: usize) -> &'a [f64] {
        &column[d * width..(d + 1) * width]
    }

    pub fn coeffs(&self, d: usize) -> DMatrix<f64> {
        let k = self.dims.n_regressors();
        DMatrix::from_column_slice(self.dims.m, k, self.slice(&self.coeffs, self.dims.m * k, d))
    }

    pub fn loadings(&self, d: usize) -> DMatrix<f64> {
        let (m, q) = (self.dims.m, self.dims.factors);
        DMatrix::from_column_slice(m, q, self.slice(&self.loadings, m * q, d))
    }

    pub fn factor_logvol(&self, d: usize, i: usize) -> &[f64] {
        let t = self.n_times;
        let all = self.slice(&self.factor_logvol, t * self.dims.factors, d);
        &all[i * t..(i + 1) * t]
    }

    pub fn idio_logvol(&self, d: usize, j: usize) -> &[f64] {
        let t = self.n_times;
        let all = self.slice(&self.idio_logvol, t * self.dims.m, d);
        &all[j * t..(j + 1) * t]
    }

    /// `(mu, phi, Xi)` of factor `i` in draw `d`.
    pub fn factor_params(&self, d: usize, i: usize) -> [f64; 3] {
        let p = self.slice(&self.factor_params, 3 * self.dims.factors, d);
        [p[3 * i], p[3 * i + 1], p[3 * i + 2]]
    }

    pub fn idio_params(&self, d: usize, j: usize) -> [f64; 3] {
        let p = self.slice(&self.idio_params, 3 * self.dims.m, d);
        [p[3 * j], p[3 * j + 1], p[3 * j + 2]]
    }

    /// Rebuilds the full chain state of draw `d`.
    pub fn state(&self, d: usize) -> ChainState {
        let dims = self.dims;
        let t = self.n_times;
        let k = dims.n_regressors();
        let sv = |paths: &dyn Fn(usize) -> Vec<f64>, params: [f64; 3], i: usize| SvSeries {
            logvol: paths(i),
            mean: params[0],
            persistence: params[1],
            innovation_var: params[2],
        };
        ChainState {
            dims,
            coeffs: self.coeffs(d),
            loadings: self.loadings(d),
            factors: DMatrix::from_column_slice(t, dims.factors, self.slice(&self.factors, t * dims.factors, d)),
            factor_sv: (0..dims.factors)
                .map(|i| sv(&|i| self.factor_logvol(d, i).to_vec(), self.factor_params(d, i), i))
                .collect(),
            idio_sv: (0..dims.m)
                .map(|j| sv(&|j| self.idio_logvol(d, j).to_vec(), self.idio_params(d, j), j))
                .collect(),
            local_scales: DMatrix::from_column_slice(dims.m, k, self.slice(&self.local_scales, dims.m * k, d)),
            lambda_sq: self.slice(&self.lambda_sq, dims.lags, d).to_vec(),
            delta: self.slice(&self.delta, dims.lags, d).to_vec(),
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dims;
        w.write_all(STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        for v in [
            d.m,
            d.lags,
            d.exog,
            usize::from(d.intercept),
            d.factors,
            self.n_times,
            self.n_draws,
        ] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in [
            self.meta.seed,
            self.meta.burn_in as u64,
            self.meta.keep as u64,
            self.meta.thin as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.names.len() as u32).to_le_bytes())?;
        for (name, g) in self.names.iter().zip(&self.groups) {
            for s in [name, &g.country, &g.kind] {
                write_str(&mut w, s)?;
            }
        }
        w.write_all(&(COLUMN_NAMES.len() as u32).to_le_bytes())?;
        for ((name, shape), col) in COLUMN_NAMES.iter().zip(self.shapes()).zip(self.columns()) {
            write_str(&mut w, name)?;
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for e in &shape {
                w.write_all(&(*e as u32).to_le_bytes())?;
            }
            for v in col {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_binary(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(Error::Format("not a draw store (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported draw store version {version}")));
        }
        let mut h = [0usize; 7];
        for v in h.iter_mut() {
            *v = read_u32(&mut r)? as usize;
        }
        let dims = Dims {
            m: h[0],
            lags: h[1],
            exog: h[2],
            intercept: h[3] != 0,
            factors: h[4],
        };
        let (n_times, n_draws) = (h[5], h[6]);
        let seed = read_u64(&mut r)?;
        let burn_in = read_u64(&mut r)? as usize;
        let keep = read_u64(&mut r)? as usize;
        let thin = read_u64(&mut r)? as usize;
        let n_series = read_u32(&mut r)? as usize;
        if n_series != dims.m {
            return Err(Error::Format("series count disagrees with header".into()));
        }
        let mut names = Vec::with_capacity(n_series);
        let mut groups = Vec::with_capacity(n_series);
        for _ in 0..n_series {
            names.push(read_str(&mut r)?);
            let country = read_str(&mut r)?;
            let kind = read_str(&mut r)?;
            groups.push(Group { country, kind });
        }
        let mut store = DrawStore::new(
            StoreMeta {
                seed,
                burn_in,
                keep,
                thin,
                wall_time_secs: 0.0,
            },
            dims,
            n_times,
            names,
            groups,
        );
        store.n_draws = n_draws;
        let n_columns = read_u32(&mut r)? as usize;
        if n_columns != COLUMN_NAMES.len() {
            return Err(Error::Format(format!("expected {} columns, found {n_columns}", COLUMN_NAMES.len())));
        }
        let shapes = store.shapes();
        for ((name, shape), col) in COLUMN_NAMES.iter().zip(shapes).zip(store.columns_mut()) {
            let got = read_str(&mut r)?;
            if got != *name {
                return Err(Error::Format(format!("expected column {name}, found {got}")));
            }
            let rank = read_u32(&mut r)? as usize;
            let mut extents = Vec::with_capacity(rank);
            for _ in 0..rank {
                extents.push(read_u32(&mut r)? as usize);
            }
            if extents != shape {
                return Err(Error::Format(format!("column {name} has shape {extents:?}, expected {shape:?}")));
            }
            let len = n_draws * shape.iter().product::<usize>();
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf)?;
            *col = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
        }
        Ok(store)
    }

    fn element_label(&self, column: &str, idx: &[usize]) -> (String, Option<usize>) {
        let d = self.dims;
        let regressor = |c: usize| {
            if c < d.m * d.lags {
                format!("L{}.{}", c / d.m + 1, self.names[c % d.m])
            } else if c < d.m * d.lags + d.exog {
                format!("exog{}", c - d.m * d.lags + 1)
            } else {
                "const".to_string()
            }
        };
        const PARAMS: [&str; 3] = ["mu", "phi", "xi"];
        match column {
            "coeffs" | "local_scales" => (format!("{}~{}", self.names[idx[0]], regressor(idx[1])), None),
            "loadings" => (format!("{}~f{}", self.names[idx[0]], idx[1] + 1), None),
            "factors" | "factor_logvol" => (format!("f{}", idx[1] + 1), Some(idx[0])),
            "factor_params" => (format!("f{}.{}", idx[1] + 1, PARAMS[idx[0]]), None),
            "idio_logvol" => (self.names[idx[1]].clone(), Some(idx[0])),
            "idio_params" => (format!("{}.{}", self.names[idx[1]], PARAMS[idx[0]]), None),
            "lambda_sq" | "delta" => (format!("lag{}", idx[0] + 1), None),
            _ => (String::new(), None),
        }
    }

    /// Long-format CSV: `draw_index, block, name, time_index, value`. Values
    /// are printed in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["draw_index", "block", "name", "time_index", "value"])?;
        for (col_name, (shape, col)) in COLUMN_NAMES.iter().zip(self.shapes().iter().zip(self.columns())) {
            let width: usize = shape.iter().product();
            let labels: Vec<(String, String)> = (0..width)
                .map(|e| {
                    let idx = if shape.len() == 2 {
                        vec![e % shape[0], e / shape[0]]
                    } else {
                        vec![e]
                    };
                    let (name, time) = self.element_label(col_name, &idx);
                    (name, time.map(|t| t.to_string()).unwrap_or_default())
                })
                .collect();
            for d in 0..self.n_draws {
                let draw = d.to_string();
                for (e, (name, time)) in labels.iter().enumerate() {
                    let value = col[d * width + e].to_string();
                    out.write_record([draw.as_str(), col_name, name, time, &value])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("invalid UTF-8 in string".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::{dims, random_state};
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn store_with(seed: u64, draws: usize) -> DrawStore {
        let mut rng = seeded(seed);
        let mut d = dims(2, 2, 1);
        d.intercept = true;
        let mut store = DrawStore::new(
            StoreMeta {
                seed,
                burn_in: 5,
                keep: draws,
                thin: 1,
                wall_time_secs: 1.5,
            },
            d,
            4,
            vec!["a".into(), "b".into()],
            vec![Group::default(); 2],
        );
        for _ in 0..draws {
            let s = random_state(d, 4, &mut rng);
            store.push(&s, 0.3);
        }
        store
    }

    #[test]
    fn states_round_trip_through_the_store() {
        let mut rng = seeded(1);
        let d = dims(3, 2, 2);
        let mut store = DrawStore::new(
            StoreMeta { seed: 1, burn_in: 0, keep: 2, thin: 1, wall_time_secs: 0.0 },
            d,
            5,
            vec!["x".into(), "y".into(), "z".into()],
            vec![Group::default(); 3],
        );
        let states: Vec<ChainState> = (0..2).map(|_| random_state(d, 5, &mut rng)).collect();
        for s in &states {
            store.push(s, 0.5);
        }
        for (i, s) in states.iter().enumerate() {
            assert_eq!(&store.state(i), s);
        }
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let bytes = store_with(2, 1).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(DrawStore::read_binary(bad.as_slice()), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[8] = 9;
        assert!(matches!(DrawStore::read_binary(bad.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn csv_has_stable_header_and_row_count() {
        let store = store_with(3, 2);
        let mut buf = Vec::new();
        store.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("draw_index,block,name,time_index,value"));
        let per_draw: usize = store.shapes().iter().map(|s| s.iter().product::<usize>()).sum();
        assert_eq!(lines.count(), 2 * per_draw);
        assert!(text.contains("0,coeffs,a~L2.b,,"));
        assert!(text.contains(",idio_logvol,b,3,"));
    }

    #[test]
    fn csv_values_are_lossless() {
        let store = store_with(4, 1);
        let mut buf = Vec::new();
        store.write_csv(&mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let values: Vec<f64> = rdr
            .records()
            .map(|r| r.unwrap()[4].parse().unwrap())
            .collect();
        let flat: Vec<f64> = store.columns().iter().flat_map(|c| c.iter().cloned()).collect();
        assert_eq!(values, flat);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn binary_round_trip(seed in 0u64..10_000, draws in 0usize..4) {
            let store = store_with(seed, draws);
            let back = DrawStore::read_binary(store.to_bytes().as_slice()).unwrap();
            let mut expect = store.clone();
            expect.meta.wall_time_secs = 0.0;
            prop_assert_eq!(back, expect);
        }
    }
}
