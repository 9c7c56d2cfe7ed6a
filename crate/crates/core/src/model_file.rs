//! Versioned JSON model files.
//!
//! Complex matrices are stored row-major as nested arrays of `[re, im]`
//! pairs. Floats are written in shortest round-trip form and parsed exactly,
//! so save and load preserve every bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::Hmm;
use crate::hqmm::Hqmm;
use crate::linalg::CMatrix;
use crate::quantum::DensityMatrix;
use crate::Model;

pub const FORMAT_VERSION: u32 = 1;

/// Free-form provenance stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_da: Option<f64>,
}

type ComplexRows = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Params {
    Hqmm {
        n: usize,
        s: usize,
        w: usize,
        /// `s·w` operators, symbol-major.
        kraus: Vec<ComplexRows>,
        rho0: ComplexRows,
    },
    Hmm {
        n: usize,
        s: usize,
        transition: Vec<Vec<f64>>,
        emission: Vec<Vec<f64>>,
        prior: Vec<f64>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct FileRepr {
    format_version: u32,
    #[serde(flatten)]
    params: Params,
    #[serde(default)]
    metadata: Metadata,
}

fn complex_rows(m: &CMatrix) -> ComplexRows {
    m.row_iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect()
}

fn real_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn check_rows<T>(rows: &[Vec<T>], nrows: usize, ncols: usize, what: &str) -> Result<()> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{what} must be {nrows}x{ncols}")));
    }
    Ok(())
}

fn complex_matrix(rows: &ComplexRows, n: usize, what: &str) -> Result<CMatrix> {
    check_rows(rows, n, n, what)?;
    Ok(CMatrix::from_fn(n, n, |i, j| {
        let [re, im] = rows[i][j];
        Complex64::new(re, im)
    }))
}

fn real_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    check_rows(rows, nrows, ncols, what)?;
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_json(model: &Model, metadata: &Metadata) -> Result<String> {
    let params = match model {
        Model::Hqmm(m) => Params::Hqmm {
            n: m.n(),
            s: m.s(),
            w: m.w(),
            kraus: m.operators().iter().map(complex_rows).collect(),
            rho0: complex_rows(m.rho0().matrix()),
        },
        Model::Hmm(m) => Params::Hmm {
            n: m.n(),
            s: m.s(),
            transition: real_rows(m.transition()),
            emission: real_rows(m.emission()),
            prior: m.prior().probs().to_vec(),
        },
    };
    let repr = FileRepr {
        format_version: FORMAT_VERSION,
        params,
        metadata: metadata.clone(),
    };
    Ok(serde_json::to_string_pretty(&repr)?)
}

/// Parse a model file. The parameters are re-validated, so a loaded model
/// satisfies the same invariants as one built in code.
pub fn from_json(text: &str) -> Result<(Model, Metadata)> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(Error::Config(format!("unsupported model format version {v}"))),
        None => return Err(Error::Config("model file has no format_version".into())),
    }
    let repr: FileRepr = serde_json::from_value(value)?;
    let model = match repr.params {
        Params::Hqmm { n, s, w, kraus, rho0 } => {
            if kraus.len() != s * w {
                return Err(Error::Dimension(format!(
                    "expected {} Kraus operators, found {}",
                    s * w,
                    kraus.len()
                )));
            }
            let ops = kraus
                .iter()
                .map(|k| complex_matrix(k, n, "Kraus operator"))
                .collect::<Result<Vec<_>>>()?;
            let rho0 = DensityMatrix::new(complex_matrix(&rho0, n, "rho0")?)?;
            Model::Hqmm(Hqmm::new(n, s, w, ops, rho0)?)
        }
        Params::Hmm {
            n,
            s,
            transition,
            emission,
            prior,
        } => Model::Hmm(Hmm::new(
            real_matrix(&transition, n, n, "transition")?,
            real_matrix(&emission, s, n, "emission")?,
            prior,
        )?),
    };
    Ok((model, repr.metadata))
}

pub fn save_model(path: &Path, model: &Model, metadata: &Metadata) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(to_json(model, metadata)?.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(Model, Metadata)> {
    let mut text = String::new();
    std::io::Read::read_to_string(&mut BufReader::new(File::open(path)?), &mut text)?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(m: &CMatrix) -> Vec<(u64, u64)> {
        m.iter().map(|z| (z.re.to_bits(), z.im.to_bits())).collect()
    }

    #[test]
    fn hqmm_roundtrip_is_bit_exact() {
        let model = Model::Hqmm(Hqmm::random(3, 4, 2, 77).unwrap());
        let meta = Metadata {
            seed: Some(77),
            final_loss: Some(1.25),
            config: Some(serde_json::json!({"tau": 0.75})),
            validation_da: None,
        };
        let (back, back_meta) = from_json(&to_json(&model, &meta).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_meta, meta);
        let (Model::Hqmm(a), Model::Hqmm(b)) = (&model, &back) else {
            panic!()
        };
        for (x, y) in a.operators().iter().zip(b.operators()) {
            assert_eq!(bits(x), bits(y));
        }
        assert_eq!(bits(a.rho0().matrix()), bits(b.rho0().matrix()));
    }

    #[test]
    fn hmm_roundtrip() {
        let model = Model::Hmm(Hmm::random(3, 5, 1.0, 8).unwrap());
        let (back, _) = from_json(&to_json(&model, &Metadata::default()).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = Model::Hqmm(Hqmm::random(2, 3, 1, 1).unwrap());
        save_model(&path, &model, &Metadata::default()).unwrap();
        assert_eq!(load_model(&path).unwrap().0, model);
        assert!(load_model(&dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn version_is_required_and_checked() {
        let model = Model::Hmm(Hmm::uniform(2, 2));
        let text = to_json(&model, &Metadata::default()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["format_version"] = serde_json::json!(99);
        assert!(matches!(from_json(&v.to_string()), Err(Error::Config(_))));
        v.as_object_mut().unwrap().remove("format_version");
        assert!(matches!(from_json(&v.to_string()), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let model = Model::Hqmm(Hqmm::random(2, 2, 1, 3).unwrap());
        let text = to_json(&model, &Metadata::default()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["kraus"][0][0][0] = serde_json::json!([5.0, 0.0]);
        assert!(matches!(
            from_json(&v.to_string()),
            Err(Error::NotTracePreserving { .. })
        ));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["kraus"].as_array_mut().unwrap().pop();
        assert!(matches!(from_json(&v.to_string()), Err(Error::Dimension(_))));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["rho0"][0][0] = serde_json::json!([2.0, 0.0]);
        assert!(matches!(from_json(&v.to_string()), Err(Error::InvalidDensity(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn random_models_roundtrip(seed in any::<u64>(), n in 1usize..4, s in 2usize..4, w in 1usize..3) {
            let model = Model::Hqmm(Hqmm::random(n, s, w, seed).unwrap());
            let (back, _) = from_json(&to_json(&model, &Metadata::default()).unwrap()).unwrap();
            prop_assert_eq!(back, model);
        }
    }
}
