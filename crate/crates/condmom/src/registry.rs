//! Built-in designs, block families, selection families and instrument
//! families, each with a configuration fragment that constructs it.

use std::fmt::Write as _;

use crate::config::{resolve, Design, ExperimentConfig};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Design,
    BlockFamily,
    SelectionFamily,
    InstrumentFamily,
}

impl Kind {
    pub fn heading(&self) -> &'static str {
        match self {
            Kind::Design => "designs",
            Kind::BlockFamily => "block families",
            Kind::SelectionFamily => "selection (π) families",
            Kind::InstrumentFamily => "instrument families",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub kind: Kind,
    pub name: &'static str,
    pub description: &'static str,
    /// TOML fragment (everything but `task`) that builds a run using it.
    pub schema: String,
}

fn design(name: &'static str, description: &'static str) -> Entry {
    Entry {
        kind: Kind::Design,
        name,
        description,
        schema: format!("[law]\nbuiltin = \"{name}\"\n"),
    }
}

/// One-coordinate law `Y` used by the block-family schemas.
fn block(name: &'static str, description: &'static str, ys: [f64; 2], theta0: f64, extra: &str) -> Entry {
    let jacobian = if extra.contains("quantile") { "fd" } else { "analytic" };
    Entry {
        kind: Kind::BlockFamily,
        name,
        description,
        schema: format!(
            "[law]\nsupport = [[{:?}], [{:?}]]\nprobs = [0.5, 0.5]\n\n[model]\ntheta0 = [{theta0:?}]\njacobian = \"{jacobian}\"\n\n[[model.blocks]]\n{extra}response = 0\nterms = [{{ param = 0 }}]\ncond = []\n",
            ys[0], ys[1]
        ),
    }
}

pub fn entries() -> Vec<Entry> {
    vec![
        design("DGP-A", "independent X1, X2 ~ Bernoulli(1/2); Y_j = θ + ε_j, ε_j = ±1; g_j = Y_j − θ given X_j; θ0 = 0"),
        design("DGP-A-het", "DGP-A with ε1 = ±2 when X1 = 1"),
        design("DGP-B", "nested: X^(1) = X1, X^(2) = (X1, X2), heteroskedastic and correlated errors; θ0 = (1, 0.5)"),
        design("DGP-B-common", "DGP-B with both blocks given (X1, X2)"),
        design("DGP-C-response", "missing response at random given W = (X, V, V0); π ∈ {0.5, 0.8}; α0 = (0.5, 2)"),
        design("DGP-C-regressor", "missing regressor at random given W = (Y, V, V0); π ∈ {0.5, 0.8}; α0 = (0.5, 2)"),
        design("DGP-Q", "DGP-A with median residuals τ − 1{Y_j ≤ θ}; finite-difference Jacobians"),
        design("separable", "two blocks with exp and logistic links; θ0 = (0.2, −0.3)"),
        Entry {
            kind: Kind::Design,
            name: "random",
            description: "seeded random two-block law on X_j ∈ {0, 1, 2}; parameter: law.design_seed",
            schema: "[law]\nbuiltin = \"random\"\ndesign_seed = 7\n".into(),
        },
        block("mean", "Y − m(x'θ); parameters: response, terms, link = identity | exp | logistic, cond", [0.0, 2.0], 1.0, "family = \"mean\"\nlink = \"identity\"\n"),
        block("mean/exp", "mean family with the exp link", [0.0, 2.0], 0.0, "family = \"mean\"\nlink = \"exp\"\n"),
        block("mean/logistic", "mean family with the logistic link", [0.0, 1.0], 0.0, "family = \"mean\"\nlink = \"logistic\"\n"),
        block("quantile", "τ − 1{Y ≤ x'θ}; parameters: response, terms, tau, cond; no analytic Jacobian", [-1.0, 1.0], 0.0, "family = \"quantile\"\ntau = 0.5\n"),
        Entry {
            kind: Kind::SelectionFamily,
            name: "known",
            description: "π(W) tabulated on the support of W",
            schema: "[law]\nbuiltin = \"DGP-C-regressor\"\nselection = \"known\"\n".into(),
        },
        Entry {
            kind: Kind::SelectionFamily,
            name: "logistic",
            description: "π(W, γ) = logistic(γ0 + γ1 V0), γ estimated jointly",
            schema: "[law]\nbuiltin = \"DGP-C-regressor\"\nselection = \"logistic\"\n".into(),
        },
        Entry {
            kind: Kind::InstrumentFamily,
            name: "indicator",
            description: "constant, then the indicator of each support point in lexicographic order",
            schema: "[law]\nbuiltin = \"DGP-A\"\n\n[params]\ninstruments = \"indicator\"\n".into(),
        },
        Entry {
            kind: Kind::InstrumentFamily,
            name: "polynomial",
            description: "monomials in all coordinates up to params.degree, constant first",
            schema: "[law]\nbuiltin = \"DGP-A\"\n\n[params]\ninstruments = \"polynomial\"\ndegree = 2\n".into(),
        },
    ]
}

pub fn list_builtins() -> String {
    let all = entries();
    let mut s = String::new();
    for kind in [Kind::Design, Kind::BlockFamily, Kind::SelectionFamily, Kind::InstrumentFamily] {
        let _ = writeln!(s, "{}:", kind.heading());
        for e in all.iter().filter(|e| e.kind == kind) {
            let _ = writeln!(s, "  {:<16} {}", e.name, e.description);
            for line in e.schema.lines().filter(|l| !l.is_empty()) {
                let _ = writeln!(s, "      {line}");
            }
        }
        s.push('\n');
    }
    s
}

/// Builds the design an entry's schema describes, as a `bound` run.
pub fn construct(entry: &Entry) -> Result<(ExperimentConfig, Design)> {
    let cfg = ExperimentConfig::from_toml(&format!("task = \"bound\"\n{}", entry.schema))?;
    let d = resolve(&cfg)?;
    Ok((cfg, d))
}
