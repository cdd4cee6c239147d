"""Dataset ingestion, design encoding, simulation and result files.

The CSV schema is declarative: a JSON object with keys ``columns``,
``categories``, ``references``, ``filters`` and ``centering`` maps raw
columns onto the model's variables.  Encoding conventions live here and
nowhere else: age is centered at its mean, squared age is the square of
the centered age re-centered at its own mean (keeping both columns
orthogonal to the intercept), and factors expand to reference-coded
dummies.  An optional ``father_columns`` block adds outcome-equation
controls.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .em import EmConfig, FitResult
from .inference import InferenceReport, bic, count_parameters
from .model import (
    BinaryEqParams,
    Dataset,
    GaussianEqParams,
    LatentStructure,
    ModelSpec,
    OrdinalEqParams,
    ParameterSet,
    cause_dummy_matrix,
    cholesky_of_sigma,
    z1_dummy_matrix,
)

RESULTS_SCHEMA_VERSION = 1

_REQUIRED_LOGICAL = ("y1", "y2", "age", "citizenship", "education", "marital")


class SchemaError(ValueError):
    """The schema file or its interaction with the data is invalid."""


class IngestionError(ValueError):
    """The input file as a whole cannot be ingested."""


@dataclass(frozen=True)
class SchemaConfig:
    """Column mapping, category codings, filters and centering statistics."""

    columns: dict
    categories: dict
    references: dict
    filters: dict = field(default_factory=dict)
    centering: dict = field(default_factory=dict)
    father_columns: dict = field(default_factory=dict)

    def __post_init__(self):
        for logical in _REQUIRED_LOGICAL:
            if logical not in self.columns:
                raise SchemaError(f"schema is missing a column mapping for '{logical}'")
        for factor in ("citizenship", "education", "marital"):
            cats = self.categories.get(factor)
            if not cats or len(cats) < 2:
                raise SchemaError(f"factor '{factor}' needs at least two categories")
            ref = self.references.get(factor)
            if ref not in cats:
                raise SchemaError(f"reference for '{factor}' must be one of its categories")
        if len(self.categories["marital"]) != 2:
            raise SchemaError("marital status must be binary")
        if self.references["education"] != self.categories["education"][0]:
            raise SchemaError(
                "the education reference must be the lowest (first-listed) level"
            )
        for key in ("min_gestational_weeks", "min_birthweight_kg"):
            if float(self.filters.get(key, 1.0)) <= 0:
                raise SchemaError(f"filter '{key}' must be positive")

    @property
    def J(self) -> int:
        return len(self.categories["education"])

    @property
    def min_weeks(self) -> float:
        return float(self.filters.get("min_gestational_weeks", 23.0))

    @property
    def min_kg(self) -> float:
        return float(self.filters.get("min_birthweight_kg", 0.5))

    @classmethod
    def default(cls) -> "SchemaConfig":
        return cls(
            columns={
                "y1": "gestational_age",
                "y2": "birthweight",
                "age": "age",
                "citizenship": "citizenship",
                "education": "education",
                "marital": "marital",
            },
            categories={
                "citizenship": ["Italian", "east-Europe", "other"],
                "education": ["middle school or less", "high school", "degree or above"],
                "marital": ["married", "not married"],
            },
            references={
                "citizenship": "Italian",
                "education": "middle school or less",
                "marital": "married",
            },
            filters={"min_gestational_weeks": 23.0, "min_birthweight_kg": 0.5},
            centering={},
        )

    @classmethod
    def from_json(cls, path) -> "SchemaConfig":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        try:
            return cls(
                columns=doc["columns"],
                categories=doc["categories"],
                references=doc["references"],
                filters=doc.get("filters", {}),
                centering=doc.get("centering", {}) or {},
                father_columns=doc.get("father_columns", {}) or {},
            )
        except KeyError as exc:
            raise SchemaError(f"schema file is missing key {exc}") from exc

    def to_json(self, path) -> None:
        doc = {
            "columns": self.columns,
            "categories": self.categories,
            "references": self.references,
            "filters": self.filters,
            "centering": self.centering,
        }
        if self.father_columns:
            doc["father_columns"] = self.father_columns
        _atomic_write_text(Path(path), json.dumps(doc, indent=2) + "\n")


@dataclass(frozen=True)
class EncodedDesign:
    """Model-ready design blocks plus the constants used to build them."""

    x: np.ndarray
    x_names: tuple[str, ...]
    z1_dummies: np.ndarray
    z2_dummy: np.ndarray
    centering: dict
    constant_factors: tuple[str, ...] = ()


@dataclass(frozen=True)
class IngestionReport:
    n_rows: int
    n_invalid: int
    n_filtered_weeks: int
    n_filtered_weight: int
    n_kept: int
    errors: tuple = ()


# ---------------------------------------------------------------------------
# Category coding helpers
# ---------------------------------------------------------------------------


def _code_category(value: str, factor: str, schema: SchemaConfig) -> int:
    """Label or declared integer code -> internal code.

    Internal codes: education 1..J in listed order; marital 0 for the
    reference level, 1 otherwise; citizenship (and father factors) the
    listed 0-based index.
    """
    cats = schema.categories[factor]
    value = value.strip()
    if value in cats:
        idx = cats.index(value)
    else:
        try:
            code = int(value)
        except ValueError:
            raise ValueError(f"unmappable {factor} value {value!r}") from None
        if factor == "education":
            if not 1 <= code <= len(cats):
                raise ValueError(f"education code {code} outside 1..{len(cats)}")
            return code
        if factor == "marital":
            if code not in (0, 1):
                raise ValueError(f"marital code {code} must be 0 or 1")
            return code
        if not 0 <= code < len(cats):
            raise ValueError(f"{factor} code {code} outside 0..{len(cats) - 1}")
        return code
    if factor == "education":
        return idx + 1
    if factor == "marital":
        return 0 if cats[idx] == schema.references["marital"] else 1
    return idx


def _factor_dummies(codes: np.ndarray, cats: list, ref: str, prefix: str):
    """Reference-coded dummy block with one named column per non-reference level."""
    ref_idx = cats.index(ref)
    cols, names = [], []
    for idx, label in enumerate(cats):
        if idx == ref_idx:
            continue
        cols.append((codes == idx).astype(float))
        names.append(f"{prefix}[{label}]")
    return np.column_stack(cols) if cols else np.zeros((codes.size, 0)), names


def _center(values: np.ndarray, supplied) -> tuple[np.ndarray, float]:
    mean = float(np.mean(values)) if supplied is None else float(supplied)
    return values - mean, mean


def _encode_columns(raw: dict, schema: SchemaConfig):
    """Covariate matrix from raw columns; returns (x, names, centering, constants)."""
    centering = {}
    age = np.asarray(raw["age"], dtype=float)
    age_c, m = _center(age, schema.centering.get("age_mean"))
    centering["age_mean"] = m
    agesq = age_c**2
    agesq_c, m2 = _center(agesq, schema.centering.get("agesq_mean"))
    centering["agesq_mean"] = m2
    cit = np.asarray(raw["citizenship"], dtype=int)
    cit_block, cit_names = _factor_dummies(
        cit, schema.categories["citizenship"], schema.references["citizenship"], "cit"
    )
    cols = [age_c[:, None], agesq_c[:, None], cit_block]
    names = ["age_c", "agesq_c"] + cit_names
    constants = []
    if np.unique(cit).size == 1:
        constants.append("citizenship")
    if np.unique(np.asarray(raw["marital"], dtype=int)).size == 1:
        constants.append("marital")
    if schema.father_columns:
        f_age = np.asarray(raw["father_age"], dtype=float)
        f_age_c, fm = _center(f_age, schema.centering.get("father_age_mean"))
        centering["father_age_mean"] = fm
        cols.append(f_age_c[:, None])
        names.append("father_age_c")
        for factor, prefix in (("citizenship", "father_cit"), ("education", "father_edu")):
            if factor == "citizenship":
                codes = np.asarray(raw["father_citizenship"], dtype=int)
                cats, ref = schema.categories["citizenship"], schema.references["citizenship"]
            else:
                codes = np.asarray(raw["father_education"], dtype=int)
                cats, ref = schema.categories["education"], schema.references["education"]
            block, bnames = _factor_dummies(codes, cats, ref, prefix)
            cols.append(block)
            names.extend(bnames)
            if np.unique(codes).size == 1:
                constants.append(f"father_{factor}")
    x = np.hstack(cols)
    return x, tuple(names), centering, tuple(constants)


def encode_design(dataset: Dataset, spec: ModelSpec, schema: SchemaConfig) -> EncodedDesign:
    """Re-encode the design blocks from a dataset's raw columns."""
    if dataset.raw is None:
        raise SchemaError("dataset carries no raw columns to encode")
    edu = np.asarray(dataset.raw["education"], dtype=int)
    if np.unique(edu).size == 1:
        raise SchemaError(
            "education (the modeled ordinal cause) is constant; column "
            f"'{schema.columns['education']}' has a single category"
        )
    x, names, centering, constants = _encode_columns(dataset.raw, schema)
    z1d = z1_dummy_matrix(edu, schema.J)
    z2 = np.asarray(dataset.raw["marital"], dtype=float)[:, None]
    return EncodedDesign(
        x=x,
        x_names=names,
        z1_dummies=z1d,
        z2_dummy=z2,
        centering=centering,
        constant_factors=constants,
    )


def build_model_spec(schema: SchemaConfig, K: int, d: int = 2) -> ModelSpec:
    """Model specification matching this schema's encoded column layout.

    Mother covariates (age, squared age, citizenship dummies) enter every
    equation; father controls, when declared, enter the outcome equation
    only.
    """
    n_cit = len(schema.categories["citizenship"]) - 1
    base = tuple(range(2 + n_cit))
    n_x = len(base)
    gaussian = base
    if schema.father_columns:
        n_father = 1 + n_cit + (len(schema.categories["education"]) - 1)
        gaussian = base + tuple(range(n_x, n_x + n_father))
        n_x += n_father
    return ModelSpec(
        K=K,
        J=schema.J,
        d=2,
        n_x=n_x,
        x_ordinal=base,
        x_binary=base,
        x_gaussian=gaussian,
    )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _raw_field_parsers(schema: SchemaConfig):
    cols = schema.columns
    parsers = [
        ("y1", cols["y1"], float),
        ("y2", cols["y2"], float),
        ("age", cols["age"], float),
        ("citizenship", cols["citizenship"], lambda v: _code_category(v, "citizenship", schema)),
        ("education", cols["education"], lambda v: _code_category(v, "education", schema)),
        ("marital", cols["marital"], lambda v: _code_category(v, "marital", schema)),
    ]
    if schema.father_columns:
        fcols = schema.father_columns
        parsers += [
            ("father_age", fcols["age"], float),
            (
                "father_citizenship",
                fcols["citizenship"],
                lambda v: _code_category(v, "citizenship", schema),
            ),
            (
                "father_education",
                fcols["education"],
                lambda v: _code_category(v, "education", schema) - 1,
            ),
        ]
    return parsers


def load_csv(path, schema: SchemaConfig):
    """Ingest a CSV file: validate, filter, encode.

    Returns ``(dataset, report)``.  Rows violating the gestational-age or
    birthweight filters are dropped and counted; rows with missing or
    unmappable values are collected in the report's error list.  The file
    as a whole is rejected when more than half of its rows are invalid or
    when nothing survives.
    """
    parsers = _raw_field_parsers(schema)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for _l, c, _p in parsers if c not in header]
        if missing:
            raise SchemaError(f"input file is missing column(s): {missing}")
        raw = {logical: [] for logical, _c, _p in parsers}
        errors = []
        n_rows = n_invalid = n_fw = n_fk = 0
        for line_no, row in enumerate(reader, start=2):
            n_rows += 1
            values = {}
            problem = None
            for logical, col, parse in parsers:
                cell = row.get(col)
                if cell is None or cell.strip() == "":
                    problem = f"missing value in '{col}'"
                    break
                try:
                    values[logical] = parse(cell)
                except ValueError as exc:
                    problem = str(exc)
                    break
            if problem is not None:
                n_invalid += 1
                if len(errors) < 50:
                    errors.append((line_no, problem))
                continue
            if values["y1"] < schema.min_weeks:
                n_fw += 1
                continue
            if values["y2"] < schema.min_kg:
                n_fk += 1
                continue
            for logical in raw:
                raw[logical].append(values[logical])
    n_kept = len(raw["y1"])
    if n_rows and n_invalid > 0.5 * n_rows:
        raise IngestionError(
            f"{n_invalid} of {n_rows} rows invalid; first errors: {errors[:5]}"
        )
    if n_kept == 0:
        raise IngestionError("no valid records")
    raw_arrays = {k: np.asarray(v) for k, v in raw.items()}
    dataset = dataset_from_raw(raw_arrays, schema)
    report = IngestionReport(
        n_rows=n_rows,
        n_invalid=n_invalid,
        n_filtered_weeks=n_fw,
        n_filtered_weight=n_fk,
        n_kept=n_kept,
        errors=tuple(errors),
    )
    return dataset, report


def dataset_from_raw(
    raw: dict, schema: SchemaConfig, true_class: np.ndarray | None = None
) -> Dataset:
    """Assemble an encoded Dataset from raw column arrays."""
    x, names, _centering, _constants = _encode_columns(raw, schema)
    y = np.column_stack(
        [np.asarray(raw["y1"], dtype=float), np.asarray(raw["y2"], dtype=float)]
    )
    return Dataset(
        x=x,
        z1=np.asarray(raw["education"], dtype=int),
        z2=np.asarray(raw["marital"], dtype=int),
        y=y,
        x_names=names,
        true_class=true_class,
        raw=raw,
    )


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

_AGE_MEAN, _AGE_SD, _AGE_LO, _AGE_HI = 30.0, 5.3, 15.0, 50.0
_CITIZENSHIP_PROBS = (0.80, 0.13, 0.07)


def _truncated_rounded_normal(rng, mean, sd, lo, hi, n):
    out = np.empty(n)
    need = np.ones(n, dtype=bool)
    while need.any():
        draw = np.round(rng.normal(mean, sd, int(need.sum())))
        out[need] = draw
        need = (out < lo) | (out > hi)
    return out


def _category_probs(n_cats: int) -> np.ndarray:
    if n_cats == len(_CITIZENSHIP_PROBS):
        return np.array(_CITIZENSHIP_PROBS)
    return np.full(n_cats, 1.0 / n_cats)


def simulate(
    theta: ParameterSet,
    spec: ModelSpec,
    schema: SchemaConfig,
    n: int,
    seed,
    covariate_source: Dataset | None = None,
) -> Dataset:
    """Forward-sample the three equations; the true class is recorded.

    Covariates are resampled from ``covariate_source.raw`` when given,
    otherwise drawn from a synthetic generator shaped like the
    application data (rounded truncated-normal age, categorical
    citizenship).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if covariate_source is not None:
        if covariate_source.raw is None:
            raise ValueError("covariate source carries no raw columns")
        idx = rng.integers(0, covariate_source.n, n)
        raw = {
            "age": np.asarray(covariate_source.raw["age"])[idx].astype(float),
            "citizenship": np.asarray(covariate_source.raw["citizenship"])[idx].astype(int),
        }
        if schema.father_columns:
            for key in ("father_age", "father_citizenship", "father_education"):
                raw[key] = np.asarray(covariate_source.raw[key])[idx]
    else:
        raw = {
            "age": _truncated_rounded_normal(rng, _AGE_MEAN, _AGE_SD, _AGE_LO, _AGE_HI, n),
            "citizenship": rng.choice(
                len(schema.categories["citizenship"]),
                size=n,
                p=_category_probs(len(schema.categories["citizenship"])),
            ),
        }
        if schema.father_columns:
            raw["father_age"] = _truncated_rounded_normal(rng, 33.0, 6.0, 18.0, 60.0, n)
            raw["father_citizenship"] = rng.choice(
                len(schema.categories["citizenship"]),
                size=n,
                p=_category_probs(len(schema.categories["citizenship"])),
            )
            raw["father_education"] = rng.choice(len(schema.categories["education"]), size=n)

    # placeholder cause/outcome columns so the x block can be encoded first
    raw["education"] = np.ones(n, dtype=int)
    raw["marital"] = np.zeros(n, dtype=int)
    raw["y1"] = np.zeros(n)
    raw["y2"] = np.zeros(n)
    x, _names, _centering, _constants = _encode_columns(raw, schema)

    lat = theta.latent
    classes = rng.choice(spec.K, size=n, p=lat.pi)

    lin1 = theta.ordinal.mu1 + x[:, spec.x_ordinal] @ theta.ordinal.beta1 + lat.xi1[classes]
    cum = expit(lin1[:, None] + theta.ordinal.tau[None, :])  # P(z1 >= j+1)
    u = rng.uniform(size=n)
    z1 = 1 + (u[:, None] < cum).sum(axis=1)

    lin2 = theta.binary.mu2 + x[:, spec.x_binary] @ theta.binary.beta2 + lat.xi2[classes]
    if theta.binary.gamma.size:
        lin2 = lin2 + z1_dummy_matrix(z1, spec.J) @ theta.binary.gamma
    z2 = (rng.uniform(size=n) < expit(lin2)).astype(int)

    dz = cause_dummy_matrix(z1, z2, spec)
    mean = (
        theta.gaussian.nu
        + lat.zeta[classes]
        + x[:, spec.x_gaussian] @ theta.gaussian.Phi.T
        + dz @ theta.gaussian.Psi.T
    )
    chol = cholesky_of_sigma(theta.gaussian.Sigma)
    y = mean + rng.standard_normal((n, spec.d)) @ chol.T

    raw["education"] = z1
    raw["marital"] = z2
    raw["y1"] = y[:, 0]
    raw["y2"] = y[:, 1]
    return dataset_from_raw(raw, schema, true_class=classes + 1)


def write_dataset_csv(
    dataset: Dataset, schema: SchemaConfig, path, include_true_class: bool = True
) -> None:
    """Write a dataset in the same schema ``load_csv`` expects.

    Categorical values are written as labels; the simulation's true class
    goes into an underscore-prefixed column that ingestion ignores.
    """
    if dataset.raw is None:
        raise ValueError("dataset carries no raw columns to export")
    cols = schema.columns
    header = [cols["y1"], cols["y2"], cols["age"], cols["citizenship"], cols["education"], cols["marital"]]
    father = bool(schema.father_columns)
    if father:
        fcols = schema.father_columns
        header += [fcols["age"], fcols["citizenship"], fcols["education"]]
    truth = dataset.true_class if include_true_class else None
    if truth is not None:
        header.append("_true_class")
    cit_cats = schema.categories["citizenship"]
    edu_cats = schema.categories["education"]
    mar_cats = schema.categories["marital"]
    mar_ref = schema.references["marital"]
    mar_other = next(c for c in mar_cats if c != mar_ref)
    raw = dataset.raw
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for i in range(dataset.n):
        row = [
            repr(float(raw["y1"][i])),
            repr(float(raw["y2"][i])),
            repr(float(raw["age"][i])),
            cit_cats[int(raw["citizenship"][i])],
            edu_cats[int(raw["education"][i]) - 1],
            mar_ref if int(raw["marital"][i]) == 0 else mar_other,
        ]
        if father:
            row += [
                repr(float(raw["father_age"][i])),
                cit_cats[int(raw["father_citizenship"][i])],
                edu_cats[int(raw["father_education"][i])],
            ]
        if truth is not None:
            row.append(str(int(truth[i])))
        writer.writerow(row)
    _atomic_write_text(Path(path), buf.getvalue())


# ---------------------------------------------------------------------------
# Result files
# ---------------------------------------------------------------------------


def _atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _theta_to_doc(theta: ParameterSet) -> dict:
    return {
        "ordinal": {
            "mu1": theta.ordinal.mu1,
            "tau": theta.ordinal.tau.tolist(),
            "beta1": theta.ordinal.beta1.tolist(),
        },
        "binary": {
            "mu2": theta.binary.mu2,
            "beta2": theta.binary.beta2.tolist(),
            "gamma": theta.binary.gamma.tolist(),
        },
        "gaussian": {
            "nu": theta.gaussian.nu.tolist(),
            "Phi": theta.gaussian.Phi.tolist(),
            "Psi": theta.gaussian.Psi.tolist(),
            "Sigma": theta.gaussian.Sigma.tolist(),
        },
        "latent": {
            "xi1": theta.latent.xi1.tolist(),
            "xi2": theta.latent.xi2.tolist(),
            "zeta": theta.latent.zeta.tolist(),
            "pi": theta.latent.pi.tolist(),
        },
    }


def _theta_from_doc(doc: dict) -> ParameterSet:
    return ParameterSet(
        ordinal=OrdinalEqParams(
            mu1=doc["ordinal"]["mu1"],
            tau=np.array(doc["ordinal"]["tau"]),
            beta1=np.array(doc["ordinal"]["beta1"]),
        ),
        binary=BinaryEqParams(
            mu2=doc["binary"]["mu2"],
            beta2=np.array(doc["binary"]["beta2"]),
            gamma=np.array(doc["binary"]["gamma"]),
        ),
        gaussian=GaussianEqParams(
            nu=np.array(doc["gaussian"]["nu"]),
            Phi=np.array(doc["gaussian"]["Phi"]),
            Psi=np.array(doc["gaussian"]["Psi"]),
            Sigma=np.array(doc["gaussian"]["Sigma"]),
        ),
        latent=LatentStructure(
            xi1=np.array(doc["latent"]["xi1"]),
            xi2=np.array(doc["latent"]["xi2"]),
            zeta=np.array(doc["latent"]["zeta"]),
            pi=np.array(doc["latent"]["pi"]),
        ),
    )


def _spec_to_doc(spec: ModelSpec) -> dict:
    return dataclasses.asdict(spec)


def _spec_from_doc(doc: dict) -> ModelSpec:
    doc = dict(doc)
    for key in ("x_ordinal", "x_binary", "x_gaussian"):
        doc[key] = tuple(doc[key])
    return ModelSpec(**doc)


def write_results(
    fit: FitResult,
    report: InferenceReport | None,
    path,
    format: str = "json",
    x_names: tuple[str, ...] = (),
    extra: dict | None = None,
) -> None:
    """Serialize a fit (and optional inference report) to disk.

    ``json`` writes a single schema-versioned document; ``csv`` writes the
    coefficient tables next to the given path (one file per equation plus
    the latent-structure table).
    """
    if format == "json":
        _atomic_write_text(Path(path), results_json(fit, report, x_names, extra))
    elif format == "csv":
        write_coefficient_tables(fit, report, path, x_names)
    else:
        raise ValueError(f"unknown format {format!r}")


def results_json(
    fit: FitResult,
    report: InferenceReport | None = None,
    x_names: tuple[str, ...] = (),
    extra: dict | None = None,
) -> str:
    npar = count_parameters(fit.spec)
    doc = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "model": _spec_to_doc(fit.spec),
        "x_names": list(x_names),
        "parameters": _theta_to_doc(fit.theta),
        "n": fit.n_obs,
        "loglik": fit.loglik,
        "npar": npar,
        "bic": bic(fit.loglik, npar, fit.n_obs),
        "fit": {
            "iterations": fit.iterations,
            "converged": fit.converged,
            "degenerate": fit.degenerate,
            "start_id": fit.start_id,
            "flags": list(fit.flags),
            "loglik_trace": fit.loglik_trace.tolist(),
            "start_logliks": [list(s) for s in fit.start_logliks],
        },
        "config": dataclasses.asdict(fit.config),
    }
    if report is not None:
        doc["inference"] = {
            "rows": [dataclasses.asdict(r) for r in report.rows],
            "contrasts": [dataclasses.asdict(c) for c in report.contrasts],
            "class1_se": list(report.class1_se),
            "rho": report.rho,
            "rho_se": report.rho_se,
            "info_pd": report.info_pd,
        }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, allow_nan=True) + "\n"


def read_results(path):
    """Load a results JSON; returns (theta, spec, full document)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != RESULTS_SCHEMA_VERSION:
        raise ValueError("unsupported results schema version")
    return _theta_from_doc(doc["parameters"]), _spec_from_doc(doc["model"]), doc


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return "--"
    return f"{v:.6g}"


def _se_lookup(report: InferenceReport | None):
    if report is None:
        return lambda name: (None, None, None)
    table = {r.name: r for r in report.rows}

    def look(name):
        r = table.get(name)
        return (r.se, r.t, r.p) if r else (None, None, None)

    return look


def write_coefficient_tables(
    fit: FitResult, report: InferenceReport | None, path, x_names: tuple[str, ...] = ()
) -> None:
    """Equation-shaped CSV tables: one per structural equation plus latent."""
    from .inference import parameter_layout

    spec, theta = fit.spec, fit.theta
    if not x_names:
        x_names = tuple(f"x{j}" for j in range(spec.n_x))
    lay = parameter_layout(spec, x_names)
    look = _se_lookup(report)
    stem = Path(path)
    base = stem.with_suffix("") if stem.suffix else stem

    def rows_to_csv(p, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(header)
        w.writerows(rows)
        _atomic_write_text(p, buf.getvalue())

    def wald_row(label, category, name, estimate):
        se, t, p = look(name)
        return [label, category, _fmt(estimate), _fmt(se), _fmt(t), _fmt(p)]

    header = ["covariate", "category", "estimate", "se", "t_stat", "p_value"]

    rows = [wald_row("intercept", "--", lay.names[lay.mu1], theta.ordinal.mu1)]
    rows.append(["cutpoint_1", "--", _fmt(0.0), "--", "--", "--"])
    for j, name in enumerate(lay.names[lay.tau]):
        rows.append(wald_row(f"cutpoint_{j + 2}", "--", name, theta.ordinal.tau[j + 1]))
    for i, j in enumerate(spec.x_ordinal):
        rows.append(wald_row(x_names[j], "--", lay.names[lay.beta1][i], theta.ordinal.beta1[i]))
    rows_to_csv(base.parent / (base.name + ".ordinal.csv"), header, rows)

    rows = [wald_row("intercept", "--", lay.names[lay.mu2], theta.binary.mu2)]
    for i, j in enumerate(spec.x_binary):
        rows.append(wald_row(x_names[j], "--", lay.names[lay.beta2][i], theta.binary.beta2[i]))
    if spec.z1_in_binary:
        rows.append(["z1", "category 1 (ref)", _fmt(0.0), "--", "--", "--"])
        for i, name in enumerate(lay.names[lay.gamma]):
            rows.append(wald_row("z1", f"category {i + 2}", name, theta.binary.gamma[i]))
    rows_to_csv(base.parent / (base.name + ".binary.csv"), header, rows)

    rows = []
    header3 = ["response", "covariate", "category", "estimate", "se", "t_stat", "p_value"]
    phi_names = list(lay.names[lay.Phi])
    psi_names = list(lay.names[lay.Psi])
    psi_per = spec.psi_dim
    p3 = len(spec.x_gaussian)
    for a in range(spec.d):
        resp = f"y{a + 1}"
        se, t, p = look(lay.names[lay.nu][a])
        rows.append([resp, "intercept", "--", _fmt(theta.gaussian.nu[a]), _fmt(se), _fmt(t), _fmt(p)])
        for i, j in enumerate(spec.x_gaussian):
            name = phi_names[a * p3 + i]
            se, t, p = look(name)
            rows.append([resp, x_names[j], "--", _fmt(theta.gaussian.Phi[a, i]), _fmt(se), _fmt(t), _fmt(p)])
        col = 0
        if spec.z1_in_gaussian:
            rows.append([resp, "z1", "category 1 (ref)", _fmt(0.0), "--", "--", "--"])
            for jcat in range(2, spec.J + 1):
                name = psi_names[a * psi_per + col]
                se, t, p = look(name)
                rows.append(
                    [resp, "z1", f"category {jcat}", _fmt(theta.gaussian.Psi[a, col]), _fmt(se), _fmt(t), _fmt(p)]
                )
                col += 1
        if spec.z2_in_gaussian:
            rows.append([resp, "z2", "level 0 (ref)", _fmt(0.0), "--", "--", "--"])
            name = psi_names[a * psi_per + col]
            se, t, p = look(name)
            rows.append([resp, "z2", "level 1", _fmt(theta.gaussian.Psi[a, col]), _fmt(se), _fmt(t), _fmt(p)])
    Sigma = theta.gaussian.Sigma
    for a in range(spec.d):
        se, t, p = look(lay.names[lay.sigma][a])
        rows.append(["sigma", f"var(y{a + 1})", "--", _fmt(Sigma[a, a]), _fmt(se), "--", "--"])
    k = spec.d
    for a in range(spec.d):
        for b in range(a + 1, spec.d):
            se, t, p = look(lay.names[lay.sigma][k])
            rows.append(["sigma", f"cov(y{a + 1},y{b + 1})", "--", _fmt(Sigma[a, b]), _fmt(se), "--", "--"])
            k += 1
    if report is not None and spec.d >= 2:
        rows.append(["sigma", "correlation(y1,y2)", "--", _fmt(report.rho), _fmt(report.rho_se), "--", "--"])
    rows_to_csv(base.parent / (base.name + ".outcome.csv"), header3, rows)

    lat = theta.latent
    header_l = ["quantity"] + [f"class{k + 1}" for k in range(spec.K)]
    header_l += [f"p_class{k}_vs_1" for k in range(2, spec.K + 1)]
    contrast_p = {}
    if report is not None:
        for c in report.contrasts:
            contrast_p[(c.dim, c.k)] = c.p
    dims = [("xi1", lat.xi1), ("xi2", lat.xi2)] + [
        (f"zeta{a + 1}", lat.zeta[:, a]) for a in range(spec.d)
    ]
    rows = []
    for dim, values in dims:
        row = [dim] + [_fmt(v) for v in values]
        row += [_fmt(contrast_p.get((dim, k))) for k in range(2, spec.K + 1)]
        rows.append(row)
    rows.append(["pi"] + [_fmt(v) for v in lat.pi] + ["--"] * (spec.K - 1))
    rows_to_csv(base.parent / (base.name + ".latent.csv"), header_l, rows)


def write_selection_csv(table, path) -> None:
    """Selection table as CSV with columns (K, loglik, npar, BIC, converged)."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["K", "loglik", "npar", "BIC", "converged"])
    for r in table.rows:
        w.writerow(
            [
                r.K,
                _fmt(r.loglik) if r.loglik is not None else "failed",
                r.npar,
                _fmt(r.bic) if r.bic is not None else "failed",
                str(bool(r.converged)).lower(),
            ]
        )
    _atomic_write_text(Path(path), buf.getvalue())


def write_classification_csv(labels, confidence, posterior, path) -> None:
    """Per-record MAP assignment with the full posterior row."""
    w = np.asarray(posterior.w if hasattr(posterior, "w") else posterior)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["row_id", "assigned_class", "confidence"] + [f"w{k + 1}" for k in range(w.shape[1])]
    )
    for i in range(w.shape[0]):
        writer.writerow(
            [i, int(labels[i]), repr(float(confidence[i]))] + [repr(float(v)) for v in w[i]]
        )
    _atomic_write_text(Path(path), buf.getvalue())
