//! Utility evaluations over 1D attribute slices and 2D attribute grids,
//! exported as plottable data.
//!
//! Points are taken in raw attribute units around a fixed reference
//! observation; each evaluation standardizes the modified row and runs the
//! model's ordinary utility path, so slices and grids are consistent with
//! prediction to the bit.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::dataset::ChoiceDataset;
use crate::dcm::{DcmSpec, Scenario};
use crate::error::{Error, Result};
use crate::model::TbResNet;
use crate::parallel;

/// Grid resolution used when the caller does not supply one.
pub const DEFAULT_RESOLUTION: usize = 50;

/// One observation in raw units whose columns are held fixed while one or
/// two attributes vary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceObservation {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Column-wise median of a dataset in raw units, the default stand-in for
/// "all other variables held constant".
pub fn median_reference(ds: &ChoiceDataset) -> Result<ReferenceObservation> {
    if ds.n() == 0 {
        return Err(Error::data("cannot take a median of an empty dataset"));
    }
    let mut x = Vec::with_capacity(ds.schema().n_x());
    for col in ds.x().columns() {
        let mut v: Vec<f64> = col.to_vec();
        x.push(median(&mut v));
    }
    let mut z = Vec::with_capacity(ds.schema().n_z());
    for col in ds.z().columns() {
        let mut v: Vec<f64> = col.to_vec();
        z.push(median(&mut v));
    }
    Ok(ReferenceObservation { x, z })
}

/// A model input column addressed by its dataset header name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VariedColumn {
    X(usize),
    Z(usize),
}

fn resolve_column(spec: &DcmSpec, name: &str) -> Result<VariedColumn> {
    if let Some(rest) = name.strip_prefix("z__") {
        if let Some(m) = spec.covariates.iter().position(|c| c == rest) {
            return Ok(VariedColumn::Z(m));
        }
    } else if let Some(rest) = name.strip_prefix("alt") {
        if let Some((alt, attr)) = rest.split_once("__") {
            if let Ok(alt) = alt.parse::<usize>() {
                if let Some(c) = spec
                    .attrs
                    .iter()
                    .position(|a| a.alt == alt && a.name == attr)
                {
                    return Ok(VariedColumn::X(c));
                }
            }
        }
    }
    Err(Error::config(format!(
        "unknown attribute column {name:?}; expected an alt<k>__<name> or z__<name> header"
    )))
}

fn check_reference(model: &TbResNet, reference: &ReferenceObservation) -> Result<()> {
    let spec = model.spec();
    if reference.x.len() != spec.attrs.len() || reference.z.len() != spec.covariates.len() {
        return Err(Error::config(
            "reference observation does not match the model's columns",
        ));
    }
    if reference.x.iter().chain(&reference.z).any(|v| !v.is_finite()) {
        return Err(Error::config("reference observation has non-finite values"));
    }
    Ok(())
}

fn check_range(range: (f64, f64), resolution: usize) -> Result<()> {
    if !(range.0.is_finite() && range.1.is_finite() && range.0 < range.1) {
        return Err(Error::config(format!(
            "range ({}, {}) must be finite and increasing",
            range.0, range.1
        )));
    }
    if resolution < 2 {
        return Err(Error::config("resolution must be at least 2"));
    }
    Ok(())
}

fn grid_values(range: (f64, f64), resolution: usize) -> Vec<f64> {
    let step = (range.1 - range.0) / (resolution - 1) as f64;
    (0..resolution).map(|j| range.0 + j as f64 * step).collect()
}

/// Blended utility of alternative `k` at one raw observation.
fn utility_at(model: &TbResNet, k: usize, x_raw: &[f64], z_raw: &[f64]) -> Result<f64> {
    let stats = model.stats();
    let x_std = stats.x_row_std(ArrayView1::from(x_raw));
    let z_std = stats.z_row_std(ArrayView1::from(z_raw));
    let v = model.utilities_row_std(&x_std, &z_std)?[k];
    if !v.is_finite() {
        return Err(Error::numerical("non-finite utility on the surface"));
    }
    Ok(v)
}

fn set_column(x: &mut [f64], z: &mut [f64], col: VariedColumn, value: f64) {
    match col {
        VariedColumn::X(c) => x[c] = value,
        VariedColumn::Z(m) => z[m] = value,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicePoint {
    pub value: f64,
    pub utility: f64,
}

/// Utility of one alternative over an evenly spaced 1D attribute range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilitySlice {
    pub scenario: Scenario,
    pub delta: f64,
    pub alternative: usize,
    pub attr: String,
    pub reference: ReferenceObservation,
    pub points: Vec<SlicePoint>,
}

impl UtilitySlice {
    pub fn to_csv_string(&self) -> String {
        let mut out = format!("{},utility\n", self.attr);
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.value, p.utility));
        }
        out
    }
}

pub fn utility_slice(
    model: &TbResNet,
    alternative: usize,
    attr: &str,
    range: (f64, f64),
    resolution: usize,
    reference: &ReferenceObservation,
) -> Result<UtilitySlice> {
    if alternative >= model.n_alternatives() {
        return Err(Error::config(format!(
            "alternative {alternative} out of range"
        )));
    }
    check_reference(model, reference)?;
    check_range(range, resolution)?;
    let col = resolve_column(model.spec(), attr)?;
    let values = grid_values(range, resolution);
    let utilities = parallel::map_items(&values, |&v| -> Result<f64> {
        let mut x = reference.x.clone();
        let mut z = reference.z.clone();
        set_column(&mut x, &mut z, col, v);
        utility_at(model, alternative, &x, &z)
    });
    let mut points = Vec::with_capacity(resolution);
    for (v, u) in values.into_iter().zip(utilities) {
        points.push(SlicePoint {
            value: v,
            utility: u?,
        });
    }
    Ok(UtilitySlice {
        scenario: model.scenario(),
        delta: model.delta(),
        alternative,
        attr: attr.to_string(),
        reference: reference.clone(),
        points,
    })
}

/// Utility of one alternative over a 2D grid of two attributes, all other
/// inputs fixed at the reference observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub scenario: Scenario,
    pub delta: f64,
    pub alternative: usize,
    pub attr_a: String,
    pub attr_b: String,
    pub values_a: Vec<f64>,
    pub values_b: Vec<f64>,
    pub reference: ReferenceObservation,
    /// utilities[i][j] at (values_a[i], values_b[j]).
    pub utilities: Vec<Vec<f64>>,
}

impl SurfaceGrid {
    /// Long-format CSV, one row per grid point.
    pub fn to_csv_string(&self) -> String {
        let mut out = format!("{},{},utility\n", self.attr_a, self.attr_b);
        for (i, &a) in self.values_a.iter().enumerate() {
            for (j, &b) in self.values_b.iter().enumerate() {
                out.push_str(&format!("{a},{b},{}\n", self.utilities[i][j]));
            }
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
pub fn utility_grid(
    model: &TbResNet,
    alternative: usize,
    attr_a: &str,
    attr_b: &str,
    range_a: (f64, f64),
    range_b: (f64, f64),
    resolution_a: usize,
    resolution_b: usize,
    reference: &ReferenceObservation,
) -> Result<SurfaceGrid> {
    if alternative >= model.n_alternatives() {
        return Err(Error::config(format!(
            "alternative {alternative} out of range"
        )));
    }
    if attr_a == attr_b {
        return Err(Error::config("grid attributes must differ"));
    }
    check_reference(model, reference)?;
    check_range(range_a, resolution_a)?;
    check_range(range_b, resolution_b)?;
    let col_a = resolve_column(model.spec(), attr_a)?;
    let col_b = resolve_column(model.spec(), attr_b)?;
    let values_a = grid_values(range_a, resolution_a);
    let values_b = grid_values(range_b, resolution_b);

    let flat = parallel::map_range(resolution_a * resolution_b, |idx| -> Result<f64> {
        let (i, j) = (idx / resolution_b, idx % resolution_b);
        let mut x = reference.x.clone();
        let mut z = reference.z.clone();
        set_column(&mut x, &mut z, col_a, values_a[i]);
        set_column(&mut x, &mut z, col_b, values_b[j]);
        utility_at(model, alternative, &x, &z)
    });
    let mut utilities = vec![vec![0.0; resolution_b]; resolution_a];
    for (idx, u) in flat.into_iter().enumerate() {
        utilities[idx / resolution_b][idx % resolution_b] = u?;
    }
    Ok(SurfaceGrid {
        scenario: model.scenario(),
        delta: model.delta(),
        alternative,
        attr_a: attr_a.to_string(),
        attr_b: attr_b.to_string(),
        values_a,
        values_b,
        reference: reference.clone(),
        utilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AltAttr, ChoiceDataset, DatasetSchema, StandardizationStats};
    use crate::dcm::{DcmParams, DcmSpec, HdParams, MnlParams, PtParams};
    use crate::nn::MlpParams;
    use ndarray::arr2;

    #[test]
    fn median_handles_odd_and_even_counts() {
        let mut odd = vec![3.0, 1.0, 2.0];
        assert_eq!(median(&mut odd), 2.0);
        let mut even = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&mut even), 2.5);
    }

    fn two_attr_schema() -> DatasetSchema {
        DatasetSchema {
            n_alternatives: 2,
            alt_attrs: vec![
                AltAttr {
                    alt: 0,
                    name: "a".into(),
                },
                AltAttr {
                    alt: 0,
                    name: "b".into(),
                },
                AltAttr {
                    alt: 1,
                    name: "a".into(),
                },
                AltAttr {
                    alt: 1,
                    name: "b".into(),
                },
            ],
            indiv_attrs: vec!["w".into()],
        }
    }

    fn mnl_model(delta: f64, mlp: MlpParams) -> TbResNet {
        let spec = DcmSpec::infer(Scenario::Mnl, &two_attr_schema()).unwrap();
        let dcm = DcmParams::Mnl(MnlParams {
            constants: vec![0.4, 0.0],
            attr_coefs: vec![-0.5, 0.3, -0.5, 0.3],
            z_coefs: vec![vec![0.2], vec![0.0]],
        });
        let stats = StandardizationStats::identity(4, 1);
        TbResNet::from_parts(spec, delta, dcm, mlp, stats).unwrap()
    }

    fn reference_4x() -> ReferenceObservation {
        ReferenceObservation {
            x: vec![1.0, 2.0, 0.5, 1.5],
            z: vec![0.8],
        }
    }

    #[test]
    fn median_reference_takes_column_medians() {
        let schema = crate::dataset::tiny_binary_schema();
        let ds = ChoiceDataset::from_parts(
            schema,
            arr2(&[[1.0, 10.0], [3.0, 30.0], [2.0, 20.0]]),
            arr2(&[[5.0], [7.0], [6.0]]),
            vec![0, 1, 0],
        )
        .unwrap();
        let r = median_reference(&ds).unwrap();
        assert_eq!(r.x, vec![2.0, 20.0]);
        assert_eq!(r.z, vec![6.0]);
    }

    #[test]
    fn slice_of_linear_model_is_affine_with_known_slope() {
        let model = mnl_model(0.0, MlpParams::zeros(&[5, 2]).unwrap());
        let slice = utility_slice(&model, 0, "alt0__a", (0.0, 4.0), 9, &reference_4x()).unwrap();
        assert_eq!(slice.points.len(), 9);
        let step = 0.5;
        for w in slice.points.windows(2) {
            let dv = w[1].utility - w[0].utility;
            assert!(((dv / step) - (-0.5)).abs() < 1e-12, "slope {}", dv / step);
        }
    }

    #[test]
    fn covariate_slices_resolve_z_columns() {
        let model = mnl_model(0.0, MlpParams::zeros(&[5, 2]).unwrap());
        let slice = utility_slice(&model, 0, "z__w", (-1.0, 1.0), 5, &reference_4x()).unwrap();
        for w in slice.points.windows(2) {
            let dv = w[1].utility - w[0].utility;
            assert!(((dv / 0.5) - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_attribute_and_bad_ranges_error() {
        let model = mnl_model(0.0, MlpParams::zeros(&[5, 2]).unwrap());
        let r = reference_4x();
        assert!(utility_slice(&model, 0, "alt0__missing", (0.0, 1.0), 5, &r).is_err());
        assert!(utility_slice(&model, 0, "cost", (0.0, 1.0), 5, &r).is_err());
        assert!(utility_slice(&model, 0, "alt0__a", (1.0, 0.0), 5, &r).is_err());
        assert!(utility_slice(&model, 0, "alt0__a", (0.0, 1.0), 1, &r).is_err());
        assert!(utility_slice(&model, 5, "alt0__a", (0.0, 1.0), 5, &r).is_err());
    }

    #[test]
    fn mnl_grid_is_planar() {
        let model = mnl_model(0.0, MlpParams::zeros(&[5, 2]).unwrap());
        let r = reference_4x();
        let grid = utility_grid(
            &model,
            0,
            "alt0__a",
            "alt0__b",
            (0.0, 2.0),
            (0.0, 3.0),
            4,
            5,
            &r,
        )
        .unwrap();
        // v = -0.5 a + 0.3 b + const.
        let base = grid.utilities[0][0];
        for (i, &a) in grid.values_a.iter().enumerate() {
            for (j, &b) in grid.values_b.iter().enumerate() {
                let expected = base - 0.5 * (a - grid.values_a[0]) + 0.3 * (b - grid.values_b[0]);
                assert!((grid.utilities[i][j] - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn grid_rows_equal_matching_slices_exactly() {
        // A nonzero network exercises the full blended path.
        let mlp = MlpParams::from_parts(
            vec![
                arr2(&[
                    [0.3, -0.2, 0.1, 0.4, -0.5],
                    [0.2, 0.2, -0.1, 0.0, 0.3],
                    [-0.4, 0.1, 0.2, -0.2, 0.1],
                ]),
                arr2(&[[0.5, -0.3, 0.2], [0.1, 0.4, -0.2]]),
            ],
            vec![vec![0.1, -0.1, 0.2], vec![0.0, 0.05]],
        )
        .unwrap();
        let model = mnl_model(0.35, mlp);
        let r = reference_4x();
        let grid = utility_grid(
            &model,
            1,
            "alt0__a",
            "z__w",
            (0.0, 2.0),
            (-1.0, 1.0),
            3,
            4,
            &r,
        )
        .unwrap();
        for (i, &a) in grid.values_a.iter().enumerate() {
            let mut shifted = r.clone();
            shifted.x[0] = a;
            let slice = utility_slice(&model, 1, "z__w", (-1.0, 1.0), 4, &shifted).unwrap();
            for (j, p) in slice.points.iter().enumerate() {
                assert_eq!(
                    grid.utilities[i][j].to_bits(),
                    p.utility.to_bits(),
                    "mismatch at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn hd_slice_decreases_in_delay() {
        let schema = DatasetSchema {
            n_alternatives: 2,
            alt_attrs: vec![
                AltAttr {
                    alt: 0,
                    name: "reward".into(),
                },
                AltAttr {
                    alt: 0,
                    name: "delay".into(),
                },
                AltAttr {
                    alt: 1,
                    name: "reward".into(),
                },
                AltAttr {
                    alt: 1,
                    name: "delay".into(),
                },
            ],
            indiv_attrs: vec![],
        };
        let spec = DcmSpec::infer(Scenario::Hd, &schema).unwrap();
        let dcm = DcmParams::Hd(HdParams {
            beta0: 1.0,
            r0: 0.5,
            beta_z: vec![],
            r_z: vec![],
        });
        let mlp = MlpParams::zeros(&[4, 2]).unwrap();
        let stats = StandardizationStats::identity(4, 0);
        let model = TbResNet::from_parts(spec, 0.0, dcm, mlp, stats).unwrap();
        let r = ReferenceObservation {
            x: vec![2.0, 1.0, 2.0, 1.0],
            z: vec![],
        };
        let slice = utility_slice(&model, 0, "alt0__delay", (0.1, 5.0), 20, &r).unwrap();
        for w in slice.points.windows(2) {
            assert!(w[1].utility < w[0].utility);
        }
    }

    #[test]
    fn pt_grid_is_monotone_for_gains() {
        let schema = DatasetSchema {
            n_alternatives: 2,
            alt_attrs: vec![
                AltAttr {
                    alt: 0,
                    name: "reward".into(),
                },
                AltAttr {
                    alt: 0,
                    name: "prob".into(),
                },
                AltAttr {
                    alt: 1,
                    name: "reward".into(),
                },
                AltAttr {
                    alt: 1,
                    name: "prob".into(),
                },
            ],
            indiv_attrs: vec![],
        };
        let spec = DcmSpec::infer(Scenario::Pt, &schema).unwrap();
        let dcm = DcmParams::Pt(PtParams {
            r0: 0.5,
            alpha0: 0.8,
            lambda0: 2.0,
            r_z: vec![],
            alpha_z: vec![],
            lambda_z: vec![],
        });
        let mlp = MlpParams::zeros(&[4, 2]).unwrap();
        let stats = StandardizationStats::identity(4, 0);
        let model = TbResNet::from_parts(spec, 0.0, dcm, mlp, stats).unwrap();
        let r = ReferenceObservation {
            x: vec![10.0, 0.5, 10.0, 0.5],
            z: vec![],
        };
        let grid = utility_grid(
            &model,
            0,
            "alt0__reward",
            "alt0__prob",
            (1.0, 100.0),
            (0.05, 0.95),
            10,
            10,
            &r,
        )
        .unwrap();
        for i in 0..10 {
            for j in 0..10 {
                if i > 0 {
                    assert!(grid.utilities[i][j] >= grid.utilities[i - 1][j]);
                }
                if j > 0 {
                    assert!(grid.utilities[i][j] >= grid.utilities[i][j - 1]);
                }
            }
        }
    }

    #[test]
    fn near_zero_delta_slice_tracks_pure_theory() {
        let mlp = MlpParams::from_parts(
            vec![arr2(&[[0.5, -0.5, 0.25, 0.1, 0.2], [0.3, 0.3, -0.3, 0.2, 0.0]])],
            vec![vec![0.4, -0.6]],
        )
        .unwrap();
        let pure = mnl_model(0.0, mlp.clone());
        let near = mnl_model(1e-10, mlp);
        let r = reference_4x();
        let a = utility_slice(&pure, 0, "alt0__a", (0.0, 3.0), 15, &r).unwrap();
        let b = utility_slice(&near, 0, "alt0__a", (0.0, 3.0), 15, &r).unwrap();
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert!((pa.utility - pb.utility).abs() < 1e-6);
        }
    }

    #[test]
    fn csv_layouts_are_long_format() {
        let model = mnl_model(0.0, MlpParams::zeros(&[5, 2]).unwrap());
        let r = reference_4x();
        let grid = utility_grid(
            &model,
            0,
            "alt0__a",
            "alt1__a",
            (0.0, 1.0),
            (0.0, 1.0),
            2,
            3,
            &r,
        )
        .unwrap();
        let csv = grid.to_csv_string();
        assert!(csv.starts_with("alt0__a,alt1__a,utility\n"));
        assert_eq!(csv.lines().count(), 7);
        let slice = utility_slice(&model, 0, "alt0__a", (0.0, 1.0), 3, &r).unwrap();
        assert_eq!(slice.to_csv_string().lines().count(), 4);
    }
}
