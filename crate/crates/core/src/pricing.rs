//! Per-band price curves: the expected charge above the band floor among
//! patients in the band at time `t`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::converter::FittedModel;
use crate::error::{Error, Result};
use crate::numerics::QuadratureSpec;

/// Occupancy below which a band is treated as empty.
pub const VACUOUS_OCCUPANCY: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriceCell {
    pub t: f64,
    /// `None` when the band is vacuous at `t`.
    pub price: Option<f64>,
    pub occupancy: f64,
    /// `ln ∫ (y - C_{b-1}) p̃ ρ dy`, kept for diagnostics.
    pub log_numerator: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceCurve {
    pub band: usize,
    pub cells: Vec<PriceCell>,
}

impl PriceCurve {
    /// True when every defined price is at least the previous defined one.
    pub fn is_nondecreasing(&self) -> bool {
        let prices: Vec<f64> = self.cells.iter().filter_map(|c| c.price).collect();
        prices.windows(2).all(|w| w[1] >= w[0])
    }
}

fn check_args(m: &FittedModel, band: usize, t: f64) -> Result<()> {
    if band < 1 || band > m.n() {
        return Err(Error::validation(
            "band",
            format!("must lie in 1..={}, got {band}", m.n()),
        ));
    }
    if !(t >= 0.0) || t > m.horizon() {
        return Err(Error::domain(
            "price",
            format!("t = {t} outside the model horizon [0, {}]", m.horizon()),
        ));
    }
    Ok(())
}

fn price_cell(m: &FittedModel, band: usize, t: f64, spec: &QuadratureSpec) -> Result<PriceCell> {
    check_args(m, band, t)?;
    let log_den = m.log_band_occupancy_with(band, t, spec)?;
    let occupancy = log_den.exp();
    let log_num = m.log_band_excess(band, t, spec)?;
    let price = if occupancy < VACUOUS_OCCUPANCY || !log_den.is_finite() {
        None
    } else {
        Some((log_num - log_den).exp())
    };
    Ok(PriceCell {
        t,
        price,
        occupancy,
        log_numerator: log_num,
    })
}

/// Price of band `band` at time `t` with the model's quadrature settings.
pub fn price(m: &FittedModel, band: usize, t: f64) -> Result<f64> {
    price_with(m, band, t, m.quadrature())
}

pub fn price_with(m: &FittedModel, band: usize, t: f64, spec: &QuadratureSpec) -> Result<f64> {
    let cell = price_cell(m, band, t, spec)?;
    cell.price.ok_or(Error::VacuousBand {
        band,
        t,
        occupancy: cell.occupancy,
    })
}

/// Prices for every band over `t_grid`. Vacuous cells become `None`.
pub fn price_table(m: &FittedModel, t_grid: &[f64]) -> Result<Vec<PriceCurve>> {
    if let Some(&t) = t_grid.iter().find(|&&t| !(t >= 0.0) || t > m.horizon()) {
        return Err(Error::domain(
            "price_table",
            format!("t = {t} outside the model horizon [0, {}]", m.horizon()),
        ));
    }
    (1..=m.n())
        .map(|band| {
            let cells = t_grid
                .par_iter()
                .map(|&t| price_cell(m, band, t, m.quadrature()))
                .collect::<Result<Vec<_>>>()?;
            Ok(PriceCurve { band, cells })
        })
        .collect()
}

/// Writes `band,t,price,occupancy` rows; vacuous prices leave the field empty.
pub fn write_price_csv<W: Write>(curves: &[PriceCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["band", "t", "price", "occupancy"]).map_err(csv_err)?;
    for curve in curves {
        for cell in &curve.cells {
            let price = cell.price.map(|p| p.to_string()).unwrap_or_default();
            w.write_record([
                curve.band.to_string(),
                cell.t.to_string(),
                price,
                cell.occupancy.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::construct_rho;
    use crate::phase_type::CphParams;
    use crate::rgrst::LognormalParams;

    fn single(mu: f64, sigma: f64) -> FittedModel {
        let p = CphParams::new(vec![1.0], vec![], vec![0.9]).unwrap();
        construct_rho(&p, &LognormalParams::new(mu, sigma).unwrap()).unwrap()
    }

    #[test]
    fn single_band_closed_form() {
        let m = single(-0.5715, 0.7149);
        for &t in &[0.0, 1.0, 2.0, 7.5] {
            let want = (-0.5715 + 0.5 * 0.7149f64 * 0.7149 + t).exp();
            let got = price(&m, 1, t).unwrap();
            assert!(((got - want) / want).abs() < 1e-8, "t={t}: {got} vs {want}");
        }
    }

    #[test]
    fn table_shape_and_csv() {
        let m = single(0.0, 1.0);
        let table = price_table(&m, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table[0].cells.len(), 3);
        for (cell, t) in table[0].cells.iter().zip([0.0f64, 1.0, 2.0]) {
            let want = (0.5 + t).exp();
            assert!((cell.price.unwrap() - want).abs() < 1e-8 * want);
        }
        let mut buf = Vec::new();
        write_price_csv(&table, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("band,t,price,occupancy\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn prices_stay_inside_finite_bands() {
        let p = CphParams::new(vec![0.3, 0.4, 0.3], vec![1.0, 0.7], vec![0.5, 0.8, 0.3]).unwrap();
        let m = construct_rho(&p, &LognormalParams::new(0.0, 0.8).unwrap()).unwrap();
        for &t in &[0.0, 0.5, 2.0, 6.0] {
            for b in 1..3 {
                let pr = price(&m, b, t).unwrap();
                let width = m.curve_charge(b, t) - m.curve_charge(b - 1, t);
                assert!(pr >= 0.0 && pr < width, "band {b} t={t}: {pr} vs width {width}");
            }
            assert!(price(&m, 3, t).unwrap() > 0.0);
        }
    }

    #[test]
    fn refining_tolerance_barely_moves_prices() {
        let p = CphParams::new(vec![0.5, 0.5], vec![1.0], vec![1.0, 2.0]).unwrap();
        let m = construct_rho(&p, &LognormalParams::new(0.0, 1.0).unwrap()).unwrap();
        for b in 1..=2 {
            for &t in &[0.5, 3.0] {
                let coarse = price_with(&m, b, t, &QuadratureSpec::relative(1e-8)).unwrap();
                let fine = price_with(&m, b, t, &QuadratureSpec::relative(1e-10)).unwrap();
                assert!(((coarse - fine) / fine).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn rejects_bad_band_and_time() {
        let m = single(0.0, 1.0);
        assert!(price(&m, 0, 1.0).is_err());
        assert!(price(&m, 2, 1.0).is_err());
        assert!(price(&m, 1, -1.0).is_err());
        assert!(price(&m, 1, m.horizon() + 1.0).is_err());
    }
}
