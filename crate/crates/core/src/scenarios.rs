//! Case files and built-in study cases.
//!
//! A case is a TOML document (`schema_version = 1`) with one `[solver]` block
//! and one `[[microgrid]]` block per MG:
//!
//! ```toml
//! schema_version = 1
//! name = "base"
//!
//! [solver]
//! alpha = 0.0009        # subgradient step size
//! beta = 0.1            # transfer-cost scaling
//! max_iters = 1000      # optional, default 1000
//! # gap_tol = 0.001     # optional relative duality-gap stop (fraction)
//! # lambda_init = [0.0, 0.0, 0.0]  # optional, default all zero
//!
//! [[microgrid]]
//! id = 1
//! a = 0.000132          # $/kW^2
//! b = 0.196             # $/kW
//! c = 3.548             # $
//! demand = 210.0        # kW
//! gen_max = 150.0       # kW
//! pcc_max = 100.0       # kW
//! buy_price = 0.082     # $/kW, grid -> MG
//! sell_price = 0.05     # $/kW, MG -> grid
//! ```
//!
//! Numbers may be written plain or in scientific notation. Parsing failures
//! carry the offending key and position; validation failures name the
//! violated invariant. The bundled `cases/*.toml` files at the repository
//! root are the golden examples of this schema and reproduce the built-in
//! cases exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CaseConfig, MicrogridParams, ModelError};

/// Current case-file schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Names accepted by [`builtin_case`].
pub const BUILTIN_NAMES: [&str; 3] = ["base", "stressed", "individual_vs_coop"];

/// On-disk representation of a case. Kept separate from [`CaseConfig`] so the
/// file format can version independently of the in-memory model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub solver: SolverBlock,
    pub microgrid: Vec<MicrogridBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_init: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrogridBlock {
    pub id: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub demand: f64,
    pub gen_max: f64,
    pub pcc_max: f64,
    pub buy_price: f64,
    pub sell_price: f64,
}

impl CaseFile {
    /// Applies defaults (1000 iterations, zero initial prices, no gap stop)
    /// and validates every invariant. Warnings are logged, not fatal.
    pub fn into_case(self) -> Result<CaseConfig, ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::SchemaVersion {
                found: self.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        let n = self.microgrid.len();
        let case = CaseConfig {
            microgrids: self
                .microgrid
                .into_iter()
                .map(|mg| MicrogridParams {
                    id: mg.id,
                    a: mg.a,
                    b: mg.b,
                    c: mg.c,
                    demand: mg.demand,
                    gen_max: mg.gen_max,
                    pcc_max: mg.pcc_max,
                    buy_price: mg.buy_price,
                    sell_price: mg.sell_price,
                })
                .collect(),
            alpha: self.solver.alpha,
            beta: self.solver.beta,
            max_iters: self.solver.max_iters.unwrap_or(1000),
            gap_tol: self.solver.gap_tol,
            lambda_init: self.solver.lambda_init.unwrap_or_else(|| vec![0.0; n]),
        };
        for warning in case.validate()? {
            log::warn!("case validation: {warning}");
        }
        Ok(case)
    }

    /// The inverse of [`CaseFile::into_case`]; defaults are written out
    /// explicitly so the file re-parses to the identical configuration.
    pub fn from_case(case: &CaseConfig, name: Option<&str>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: name.map(str::to_owned),
            solver: SolverBlock {
                alpha: case.alpha,
                beta: case.beta,
                max_iters: Some(case.max_iters),
                gap_tol: case.gap_tol,
                lambda_init: Some(case.lambda_init.clone()),
            },
            microgrid: case
                .microgrids
                .iter()
                .map(|mg| MicrogridBlock {
                    id: mg.id,
                    a: mg.a,
                    b: mg.b,
                    c: mg.c,
                    demand: mg.demand,
                    gen_max: mg.gen_max,
                    pcc_max: mg.pcc_max,
                    buy_price: mg.buy_price,
                    sell_price: mg.sell_price,
                })
                .collect(),
        }
    }
}

/// Parses case text in the schema above into a validated [`CaseConfig`].
pub fn parse_case(text: &str) -> Result<CaseConfig, ScenarioError> {
    let file: CaseFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    file.into_case()
}

/// Loads and validates a case file from disk.
pub fn load_case(path: impl AsRef<Path>) -> Result<CaseConfig, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_case(&text)
}

/// Serializes a case back to the file schema.
pub fn case_to_toml(case: &CaseConfig, name: Option<&str>) -> String {
    toml::to_string(&CaseFile::from_case(case, name)).expect("case serializes")
}

fn mg(
    id: usize,
    a: f64,
    b: f64,
    c: f64,
    demand: f64,
    gen_max: f64,
    pcc_max: f64,
    buy_price: f64,
) -> MicrogridParams {
    MicrogridParams {
        id,
        a,
        b,
        c,
        demand,
        gen_max,
        pcc_max,
        buy_price,
        sell_price: 0.05,
    }
}

/// Returns one of the built-in study cases:
///
/// * `base` — three moderately priced MGs; the grid tariff (0.082 $/kW)
///   undercuts every marginal generation cost, so no MG-to-MG trades occur.
/// * `stressed` — MG2's generation is made very expensive (b = 30) and the
///   grid tariff raised to 82 $/kW, forcing large exchanges toward MG2.
/// * `individual_vs_coop` — the stressed data with MG1/MG2 generation
///   capacity raised to 250/350 kW so every MG can also survive alone; used
///   to compare isolated operation against cooperative dispatch. (MG3 keeps
///   the stressed 200 kW.)
pub fn builtin_case(name: &str) -> Result<CaseConfig, ScenarioError> {
    let normalized = name.trim().to_ascii_lowercase().replace('-', "_");
    let case = match normalized.as_str() {
        "base" => CaseConfig {
            microgrids: vec![
                mg(1, 0.000132, 0.196, 3.548, 210.0, 150.0, 100.0, 0.082),
                mg(2, 0.0003, 0.3, 6.105, 125.0, 300.0, 100.0, 0.082),
                mg(3, 0.0001, 0.224, 7.5, 75.0, 150.0, 100.0, 0.082),
            ],
            alpha: 0.0009,
            beta: 0.1,
            max_iters: 1000,
            gap_tol: None,
            lambda_init: vec![0.0; 3],
        },
        "stressed" => CaseConfig {
            microgrids: vec![
                mg(1, 0.000132, 0.196, 3.548, 210.0, 200.0, 100.0, 82.0),
                mg(2, 0.0003, 30.0, 6.105, 325.0, 150.0, 200.0, 82.0),
                mg(3, 0.0001, 0.224, 7.5, 75.0, 200.0, 100.0, 82.0),
            ],
            alpha: 0.009,
            beta: 0.1,
            max_iters: 1000,
            gap_tol: None,
            lambda_init: vec![0.0; 3],
        },
        "individual_vs_coop" => {
            let mut case = builtin_case("stressed")?;
            case.microgrids[0].gen_max = 250.0;
            case.microgrids[1].gen_max = 350.0;
            case
        }
        _ => {
            return Err(ScenarioError::UnknownBuiltin {
                name: name.to_owned(),
            })
        }
    };
    debug_assert!(case.validate().is_ok());
    Ok(case)
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("case file parse error: {0}")]
    Parse(String),
    #[error("unsupported schema_version {found} (this build reads version {supported})")]
    SchemaVersion { found: u32, supported: u32 },
    #[error("invalid case: {0}")]
    Validation(#[from] ModelError),
    #[error("unknown built-in case {name:?}; valid names: base, stressed, individual_vs_coop")]
    UnknownBuiltin { name: String },
}
