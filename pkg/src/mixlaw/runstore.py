"""Ingestion and persistence with strict validation.

Run files come in two encodings of the same records:

* JSONL, one object per line:
  {"run_id": str, "model_params": int, "tokens": int,
   "mixture": {domain: weight, ...}, "target": str, "loss": float}
* CSV with header: run_id,model_params,tokens,h_<name1>,...,h_<namek>,target,loss

The domain order is taken from the first record (JSONL) or the header (CSV)
and enforced afterwards.  Files are UTF-8, newline-delimited; floats are
written in shortest round-trip decimal form (at most 17 significant digits);
records are sorted by run_id, then tokens, so write -> parse -> write is
byte-stable.

Fitted laws persist as single JSON documents with a schema_version field,
and experiment designs as JSON documents whose budget and mixture lists may
be given either explicitly or through generator forms (spacing specs, grids,
samplers) that are resolved on read.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .core import Dataset, MixtureVector, RunRecord, validate_mixture
from .errors import (
    DomainMismatch,
    InvalidMixture,
    IoError,
    ParseError,
    SchemaError,
)
from .laws import LawParams, get_family
from .synthlab import (
    DesignSpec,
    NoiseModel,
    even_spacing,
    sample_mixtures,
    simplex_grid,
)

SCHEMA_VERSION = 1
RUN_FORMATS = ("jsonl", "csv")
REQUIRED_FIT_META = (
    "huber", "delta", "seed", "n_points", "train_mre_percent", "tool_version",
)
_FIXED_CSV_HEAD = ("run_id", "model_params", "tokens")
_FIXED_CSV_TAIL = ("target", "loss")


@dataclass(frozen=True)
class RunFile:
    """A run-record file on disk with its declared format."""

    path: str
    format: str

    def __post_init__(self):
        if self.format not in RUN_FORMATS:
            raise ValueError(f"format must be one of {RUN_FORMATS}")


def _as_runfile(file, fmt: str | None) -> RunFile:
    if isinstance(file, RunFile):
        return file
    path = Path(file)
    if fmt is None:
        suffix = path.suffix.lower().lstrip(".")
        if suffix not in RUN_FORMATS:
            raise ValueError(
                f"cannot infer format from {path.name!r}; pass fmt explicitly"
            )
        fmt = suffix
    return RunFile(str(path), fmt)


def _float_str(x: float) -> str:
    """Shortest decimal string that round-trips, capped at 17 significant digits."""
    return repr(float(x))


def _coerce_int(value, what: str) -> int:
    if isinstance(value, bool):
        raise ValueError(f"{what} must be an integer")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise ValueError(f"{what} must be an integer, got {value!r}")


def _record_from_fields(run_id, model_params, tokens, weights, names, target,
                        loss) -> RunRecord:
    try:
        mixture = validate_mixture(weights, names)
    except InvalidMixture as exc:
        raise InvalidMixture(f"record {run_id!r}: {exc}") from exc
    return RunRecord(
        run_id=str(run_id),
        model_params=_coerce_int(model_params, "model_params"),
        tokens=_coerce_int(tokens, "tokens"),
        mixture=mixture,
        target=str(target),
        loss=float(loss),
    )


def _parse_jsonl(path: Path) -> Dataset:
    records: list[RunRecord] = []
    names: tuple[str, ...] | None = None
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ParseError(f"{path}:{lineno}: expected an object")
        missing = {"run_id", "model_params", "tokens", "mixture", "target",
                   "loss"} - set(obj)
        if missing:
            raise ParseError(
                f"{path}:{lineno}: missing fields {sorted(missing)}"
            )
        mix = obj["mixture"]
        if not isinstance(mix, dict) or not mix:
            raise ParseError(f"{path}:{lineno}: mixture must be a nonempty object")
        if names is None:
            names = tuple(mix)
        elif set(mix) != set(names):
            raise DomainMismatch(
                f"{path}:{lineno}: record {obj['run_id']!r} has domains "
                f"{sorted(mix)}, expected {sorted(names)}"
            )
        try:
            records.append(
                _record_from_fields(
                    obj["run_id"], obj["model_params"], obj["tokens"],
                    [mix[n] for n in names], names, obj["target"], obj["loss"],
                )
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return Dataset(tuple(records), names if names is not None else ())


def _parse_csv(path: Path) -> Dataset:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ParseError(f"{path}: empty file, expected a header row")
    header = rows[0]
    if (tuple(header[:3]) != _FIXED_CSV_HEAD
            or tuple(header[-2:]) != _FIXED_CSV_TAIL
            or len(header) < 6):
        raise ParseError(
            f"{path}:1: header must be run_id,model_params,tokens,"
            f"h_<domain>...,target,loss; got {','.join(header)}"
        )
    mix_cols = header[3:-2]
    if any(not c.startswith("h_") for c in mix_cols):
        bad = next(c for c in mix_cols if not c.startswith("h_"))
        raise ParseError(f"{path}:1: mixture column {bad!r} must start with h_")
    names = tuple(c[2:] for c in mix_cols)
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(
                f"{path}:{lineno}: {len(row)} fields, expected {len(header)}"
            )
        try:
            records.append(
                _record_from_fields(
                    row[0], float(row[1]), float(row[2]),
                    [float(v) for v in row[3:-2]], names, row[-2],
                    float(row[-1]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return Dataset(tuple(records), names)


def parse_runs(file: RunFile | str | Path, fmt: str | None = None) -> Dataset:
    """Read and validate a run file into a Dataset."""
    rf = _as_runfile(file, fmt)
    path = Path(rf.path)
    return _parse_jsonl(path) if rf.format == "jsonl" else _parse_csv(path)


def _sorted_records(data: Dataset) -> list[RunRecord]:
    return sorted(data.records, key=lambda r: (r.run_id, r.tokens, r.target))


def write_runs(data: Dataset, file: RunFile | str | Path,
               fmt: str | None = None) -> None:
    """Write a Dataset in the canonical record order and number encoding."""
    rf = _as_runfile(file, fmt)
    path = Path(rf.path)
    try:
        if rf.format == "jsonl":
            lines = []
            for rec in _sorted_records(data):
                obj = {
                    "run_id": rec.run_id,
                    "model_params": rec.model_params,
                    "tokens": rec.tokens,
                    "mixture": dict(zip(data.domain_names, rec.mixture.weights)),
                    "target": rec.target,
                    "loss": rec.loss,
                }
                lines.append(json.dumps(obj))
            path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
        else:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(
                    list(_FIXED_CSV_HEAD)
                    + [f"h_{n}" for n in data.domain_names]
                    + list(_FIXED_CSV_TAIL)
                )
                for rec in _sorted_records(data):
                    writer.writerow(
                        [rec.run_id, rec.model_params, rec.tokens]
                        + [_float_str(w) for w in rec.mixture.weights]
                        + [rec.target, _float_str(rec.loss)]
                    )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Law artifacts
# ---------------------------------------------------------------------------

def _params_to_map(law: LawParams) -> dict[str, Any]:
    out = {}
    for field, value in dataclasses.asdict(law.params).items():
        out[field] = list(value) if isinstance(value, tuple) else value
    return out


def _params_from_map(family: str, params: dict[str, Any],
                     domain_names: Sequence[str]) -> LawParams:
    try:
        fam = get_family(family)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc
    expected = {f.name for f in dataclasses.fields(fam.params_cls)}
    got = set(params)
    if got != expected:
        extra, missing = sorted(got - expected), sorted(expected - got)
        raise SchemaError(
            f"params for family {family!r} have wrong shape: "
            f"missing {missing}, unexpected {extra}"
        )
    try:
        natural = fam.params_cls(**params)
        return LawParams(family, tuple(domain_names), natural)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"invalid {family!r} parameters: {exc}") from exc


@dataclass(frozen=True)
class LawArtifact:
    """A fitted law plus its fit metadata, as persisted on disk."""

    family: str
    k: int
    domain_names: tuple[str, ...]
    target: str
    params: dict[str, Any]
    fit_meta: dict[str, Any]

    def __post_init__(self):
        object.__setattr__(self, "domain_names", tuple(self.domain_names))
        if self.k != len(self.domain_names):
            raise SchemaError(
                f"k = {self.k} but {len(self.domain_names)} domain names"
            )
        for key in REQUIRED_FIT_META:
            if key not in self.fit_meta:
                raise SchemaError(f"fit_meta is missing required field {key!r}")
        if not (float(self.fit_meta["huber"]) >= 0.0):
            raise SchemaError("fit_meta.huber must be >= 0")
        self.law  # decode now so invalid artifacts never circulate

    @property
    def law(self) -> LawParams:
        return _params_from_map(self.family, self.params, self.domain_names)


def make_artifact(law: LawParams, target: str, huber: float, delta: float,
                  seed: int, n_points: int,
                  train_mre_percent: float) -> LawArtifact:
    """Package a fitted law for persistence."""
    return LawArtifact(
        family=law.family,
        k=law.k,
        domain_names=law.domain_names,
        target=target,
        params=_params_to_map(law),
        fit_meta={
            "huber": float(huber),
            "delta": float(delta),
            "seed": int(seed),
            "n_points": int(n_points),
            "train_mre_percent": float(train_mre_percent),
            "tool_version": __version__,
        },
    )


def write_law(artifact: LawArtifact, path: str | Path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "family": artifact.family,
        "k": artifact.k,
        "domain_names": list(artifact.domain_names),
        "target": artifact.target,
        "params": artifact.params,
        "fit_meta": artifact.fit_meta,
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_law(path: str | Path) -> LawArtifact:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: schema_version {version!r} unsupported "
            f"(expected {SCHEMA_VERSION})"
        )
    for key in ("family", "k", "domain_names", "target", "params", "fit_meta"):
        if key not in doc:
            raise SchemaError(f"{path}: missing field {key!r}")
    params = {
        k: tuple(v) if isinstance(v, list) else v
        for k, v in doc["params"].items()
    }
    return LawArtifact(
        family=doc["family"],
        k=int(doc["k"]),
        domain_names=tuple(doc["domain_names"]),
        target=str(doc["target"]),
        params=params,
        fit_meta=dict(doc["fit_meta"]),
    )


# ---------------------------------------------------------------------------
# Design documents
# ---------------------------------------------------------------------------

def _resolve_budgets(node, what: str) -> tuple[int, ...]:
    if isinstance(node, list):
        return tuple(_coerce_int(v, what) for v in node)
    if isinstance(node, dict):
        try:
            return even_spacing(
                _coerce_int(node["min"], f"{what}.min"),
                _coerce_int(node["max"], f"{what}.max"),
                _coerce_int(node["count"], f"{what}.count"),
                node.get("spacing", "linear"),
            )
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"bad {what} spec: {exc}") from exc
    raise SchemaError(f"{what} must be a list or a min/max/count object")


def _resolve_mixtures(node, names: tuple[str, ...], seed: int
                      ) -> tuple[MixtureVector, ...]:
    k = len(names)
    if isinstance(node, list):
        return tuple(validate_mixture(w, names) for w in node)
    if isinstance(node, dict) and "grid" in node:
        g = node["grid"]
        return tuple(simplex_grid(k, float(g["step"]),
                                  float(g.get("min_weight", 0.0)), names))
    if isinstance(node, dict) and "sample" in node:
        s = node["sample"]
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        return tuple(sample_mixtures(k, _coerce_int(s["n"], "sample.n"),
                                     float(s.get("min_weight", 0.0)), rng,
                                     names))
    raise SchemaError(
        "mixtures must be a list of weight vectors, {'grid': ...} or "
        "{'sample': ...}"
    )


def read_design(path: str | Path) -> DesignSpec:
    """Load a design document, resolving generator forms into explicit lists."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}: schema_version {version!r} unsupported")
    for key in ("domain_names", "sizes", "token_checkpoints", "mixtures",
                "truths"):
        if key not in doc:
            raise SchemaError(f"{path}: missing field {key!r}")
    names = tuple(str(n) for n in doc["domain_names"])
    seed = int(doc.get("seed", 0))
    noise_doc = doc.get("noise", {"kind": "none", "sigma": 0.0})
    try:
        noise = NoiseModel(str(noise_doc.get("kind", "none")),
                           float(noise_doc.get("sigma", 0.0)))
    except ValueError as exc:
        raise SchemaError(f"{path}: bad noise model: {exc}") from exc
    truth = {}
    for entry in doc["truths"]:
        for key in ("family", "target", "params"):
            if key not in entry:
                raise SchemaError(f"{path}: truth entry missing {key!r}")
        params = {
            k: tuple(v) if isinstance(v, list) else v
            for k, v in entry["params"].items()
        }
        truth[str(entry["target"])] = _params_from_map(
            entry["family"], params, names
        )
    try:
        return DesignSpec(
            sizes=_resolve_budgets(doc["sizes"], "sizes"),
            token_checkpoints=_resolve_budgets(doc["token_checkpoints"],
                                               "token_checkpoints"),
            mixtures=_resolve_mixtures(doc["mixtures"], names, seed),
            truth=truth,
            noise=noise,
            seed=seed,
        )
    except (ValueError, InvalidMixture) as exc:
        raise SchemaError(f"{path}: invalid design: {exc}") from exc


def write_design(spec: DesignSpec, path: str | Path) -> None:
    """Write a design document in fully resolved form."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "domain_names": list(spec.domain_names),
        "sizes": list(spec.sizes),
        "token_checkpoints": list(spec.token_checkpoints),
        "mixtures": [list(m.weights) for m in spec.mixtures],
        "truths": [
            {
                "family": law.family,
                "target": target,
                "params": _params_to_map(law),
            }
            for target, law in spec.truth.items()
        ],
        "noise": {"kind": spec.noise.kind, "sigma": spec.noise.sigma},
        "seed": spec.seed,
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
