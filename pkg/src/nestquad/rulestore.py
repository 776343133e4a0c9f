"""Persistent storage for certified rules and nested pairs.

Records are single JSON files carrying the family descriptor, the node and
weight data at full binary64 precision, the certification (exactness degree,
residual norm, and the tolerance configuration it was produced under), and
provenance.  Writes are atomic (temp file plus rename) and loads re-verify
the stored certificate against freshly built recurrence tables, so a catalog
directory can always be trusted or rejected file by file.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import warnings
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import (
    IntegrityError,
    NestQuadError,
    ParameterError,
    SchemaError,
)
from .gauss import QuadratureRule, verify_rule
from .nested_optimizer import NestedRulePair, OptimizerConfig
from .orthopoly import WeightFamily, recurrence_coefficients

__all__ = [
    "SCHEMA_VERSION",
    "Certification",
    "Provenance",
    "RuleRecord",
    "Catalog",
    "CatalogEntry",
    "make_rule_record",
    "make_pair_record",
    "save",
    "load",
    "catalog_scan",
    "write_rule_csv",
]

SCHEMA_VERSION = 1

_GENERATOR = "nestquad"
_KINDS = ("rule", "pair")
_RULE_MODES = ("gauss", "patterson")
_PAIR_MODES = ("kronrod",)
# A fresh verification may differ from the stored norm by rounding in the
# rebuilt recurrence table; reject only a clear order-of-magnitude breach.
_VERIFY_FACTOR = 10.0
_VERIFY_FLOOR = 1e-16


def _package_version() -> str:
    try:
        from importlib.metadata import version
        return version("nestquad")
    except Exception:  # pragma: no cover - metadata absent in odd installs
        return "unknown"


@dataclass(frozen=True)
class Certification:
    """Tolerance snapshot a rule was certified under."""

    alpha: int
    residual_norm: float
    epsilon: float
    A: float
    weight_floor: float


@dataclass(frozen=True)
class Provenance:
    generator: str
    version: str
    timestamp: str
    iterations: int


@dataclass(frozen=True)
class RuleRecord:
    """One stored rule or nested pair with its certificate.

    ``payload`` is a QuadratureRule for kind "rule" and a NestedRulePair for
    kind "pair"; ``mode`` tags how the payload was produced (gauss,
    patterson, or kronrod).
    """

    kind: str
    family: WeightFamily
    mode: str
    payload: object
    certification: Certification
    provenance: Provenance
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ParameterError(f"unknown record kind {self.kind!r}")
        allowed = _PAIR_MODES if self.kind == "pair" else _RULE_MODES
        if self.mode not in allowed:
            raise ParameterError(
                f"mode {self.mode!r} invalid for kind {self.kind!r}")
        expected = NestedRulePair if self.kind == "pair" else QuadratureRule
        if not isinstance(self.payload, expected):
            raise ParameterError(
                f"kind {self.kind!r} needs a {expected.__name__} payload")

    @property
    def key(self) -> tuple:
        """Catalog key (family kind, params, n1, n2, mode)."""
        if self.kind == "pair":
            pair = self.payload
            return (self.family.kind, self.family.params,
                    pair.coarse.n, pair.fine.n, self.mode)
        return (self.family.kind, self.family.params,
                None, self.payload.n, self.mode)


def _provenance_now(iterations: int) -> Provenance:
    return Provenance(
        generator=_GENERATOR,
        version=_package_version(),
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        iterations=int(iterations),
    )


def make_rule_record(rule: QuadratureRule, mode: str = "gauss",
                     config: OptimizerConfig | None = None,
                     iterations: int = 0) -> RuleRecord:
    if config is None:
        config = OptimizerConfig.defaults_for(rule.family)
    cert = Certification(
        alpha=rule.exactness_degree,
        residual_norm=rule.residual_norm,
        epsilon=config.epsilon,
        A=config.A,
        weight_floor=config.weight_floor,
    )
    return RuleRecord("rule", rule.family, mode, rule, cert,
                      _provenance_now(iterations))


def make_pair_record(pair: NestedRulePair,
                     config: OptimizerConfig | None = None,
                     iterations: int = 0) -> RuleRecord:
    if config is None:
        config = OptimizerConfig.defaults_for(pair.fine.family)
    cert = Certification(
        alpha=pair.fine.exactness_degree,
        residual_norm=pair.residual_norm,
        epsilon=config.epsilon,
        A=config.A,
        weight_floor=config.weight_floor,
    )
    return RuleRecord("pair", pair.fine.family, "kronrod", pair, cert,
                      _provenance_now(iterations))


def _encode_bound(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def _decode_bound(v) -> float:
    if isinstance(v, str):
        return float(v)
    return float(v)


def _family_to_json(family: WeightFamily) -> dict:
    doc = {"kind": family.kind, "params": [float(p) for p in family.params]}
    if family.kind == "custom":
        doc["a"] = [float(v) for v in family.custom_a]
        doc["b"] = [float(v) for v in family.custom_b]
        doc["domain"] = [_encode_bound(family.custom_domain[0]),
                         _encode_bound(family.custom_domain[1])]
    return doc


def _family_from_json(doc: dict) -> WeightFamily:
    kind = doc["kind"]
    params = tuple(float(p) for p in doc["params"])
    if kind == "custom":
        return WeightFamily(
            kind, params,
            custom_a=tuple(float(v) for v in doc["a"]),
            custom_b=tuple(float(v) for v in doc["b"]),
            custom_domain=(_decode_bound(doc["domain"][0]),
                           _decode_bound(doc["domain"][1])))
    return WeightFamily(kind, params)


def _require_finite(name: str, values) -> list:
    out = [float(v) for v in np.asarray(values, dtype=float).ravel()]
    if not all(math.isfinite(v) for v in out):
        raise ParameterError(f"{name} contains non-finite values")
    return out


def _record_to_json(record: RuleRecord) -> dict:
    if record.kind == "pair":
        pair = record.payload
        data = {
            "mode": record.mode,
            "n1": pair.coarse.n,
            "n2": pair.fine.n,
            "nodes": _require_finite("nodes", pair.fine.nodes),
            "weights": _require_finite(
                "weights",
                np.concatenate([pair.coarse.weights, pair.fine.weights])),
            "subset_map": [int(i) for i in pair.subset_map],
            "alpha1": pair.coarse.exactness_degree,
            "alpha2": pair.fine.exactness_degree,
            "residual_norm": pair.residual_norm,
            "residual_norm_coarse": pair.coarse.residual_norm,
            "residual_norm_fine": pair.fine.residual_norm,
        }
    else:
        rule = record.payload
        data = {
            "mode": record.mode,
            "n2": rule.n,
            "nodes": _require_finite("nodes", rule.nodes),
            "weights": _require_finite("weights", rule.weights),
            "alpha2": rule.exactness_degree,
            "residual_norm": rule.residual_norm,
        }
        if rule.weight_floor_relaxed:
            data["weight_floor_relaxed"] = True
    cert = record.certification
    if not all(math.isfinite(v) for v in
               (cert.residual_norm, cert.epsilon, cert.A, cert.weight_floor)):
        raise ParameterError("certification contains non-finite values")
    return {
        "schema_version": record.schema_version,
        "kind": record.kind,
        "family": _family_to_json(record.family),
        "data": data,
        "certification": {
            "alpha": cert.alpha,
            "residual_norm": cert.residual_norm,
            "epsilon": cert.epsilon,
            "A": cert.A,
            "weight_floor": cert.weight_floor,
        },
        "provenance": {
            "generator": record.provenance.generator,
            "version": record.provenance.version,
            "timestamp": record.provenance.timestamp,
            "iterations": record.provenance.iterations,
        },
    }


def save(record: RuleRecord, path) -> None:
    """Atomically write a record as JSON (UTF-8, newline-terminated)."""
    doc = _record_to_json(record)
    text = json.dumps(doc, indent=2, allow_nan=False) + "\n"
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".rule-",
                                   suffix=".json.tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        tmp = None
    except OSError as exc:
        raise OSError(
            f"saving rule record to {path!r} failed: {exc}") from exc
    finally:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)


def _parse_payload(doc: dict, family: WeightFamily):
    data = doc["data"]
    nodes = np.array(data["nodes"], dtype=float)
    weights = np.array(data["weights"], dtype=float)
    if doc["kind"] == "pair":
        n1 = int(data["n1"])
        n2 = int(data["n2"])
        if nodes.size != n2 or weights.size != n1 + n2:
            raise SchemaError("pair data sizes are inconsistent")
        subset = tuple(int(i) for i in data["subset_map"])
        stacked = float(data["residual_norm"])
        coarse = QuadratureRule(
            family=family,
            nodes=nodes[list(subset)],
            weights=weights[:n1],
            exactness_degree=int(data["alpha1"]),
            residual_norm=float(data.get("residual_norm_coarse", stacked)),
        )
        fine = QuadratureRule(
            family=family,
            nodes=nodes,
            weights=weights[n1:],
            exactness_degree=int(data["alpha2"]),
            residual_norm=float(data.get("residual_norm_fine", stacked)),
        )
        return NestedRulePair(family=family, coarse=coarse, fine=fine,
                              subset_map=subset, residual_norm=stacked)
    if nodes.size != int(data["n2"]) or weights.size != nodes.size:
        raise SchemaError("rule data sizes are inconsistent")
    return QuadratureRule(
        family=family,
        nodes=nodes,
        weights=weights,
        exactness_degree=int(data["alpha2"]),
        residual_norm=float(data["residual_norm"]),
        weight_floor_relaxed=bool(data.get("weight_floor_relaxed", False)),
    )


def _reverify(record: RuleRecord) -> None:
    if record.kind == "pair":
        pair = record.payload
        parts = [pair.coarse, pair.fine]
        capacity = pair.fine.exactness_degree
    else:
        parts = [record.payload]
        capacity = record.payload.exactness_degree
    table = recurrence_coefficients(record.family, capacity)
    for rule in parts:
        fresh = verify_rule(rule, table).norm
        allowed = _VERIFY_FACTOR * (rule.residual_norm + _VERIFY_FLOOR)
        if fresh > allowed:
            raise IntegrityError(
                f"stored residual {rule.residual_norm:.3e} but fresh "
                f"verification gives {fresh:.3e} (allowed {allowed:.3e})")


def load(path, verify: bool = True) -> RuleRecord:
    """Parse a record file, rebuilding and (by default) re-verifying it.

    Verification recomputes the moment residuals from scratch and rejects
    the file when they exceed ten times the stored norm.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    try:
        version = doc["schema_version"]
        if version != SCHEMA_VERSION:
            raise SchemaError(
                f"{path}: unknown schema_version {version!r}")
        kind = doc["kind"]
        if kind not in _KINDS:
            raise SchemaError(f"{path}: unknown kind {kind!r}")
        mode = doc["data"]["mode"]
        allowed = _PAIR_MODES if kind == "pair" else _RULE_MODES
        if mode not in allowed:
            raise SchemaError(
                f"{path}: mode {mode!r} invalid for kind {kind!r}")
        family = _family_from_json(doc["family"])
        cert_doc = doc["certification"]
        cert = Certification(
            alpha=int(cert_doc["alpha"]),
            residual_norm=float(cert_doc["residual_norm"]),
            epsilon=float(cert_doc["epsilon"]),
            A=float(cert_doc["A"]),
            weight_floor=float(cert_doc["weight_floor"]),
        )
        prov_doc = doc["provenance"]
        prov = Provenance(
            generator=str(prov_doc["generator"]),
            version=str(prov_doc["version"]),
            timestamp=str(prov_doc["timestamp"]),
            iterations=int(prov_doc["iterations"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed record ({exc})") from exc
    try:
        payload = _parse_payload(doc, family)
    except SchemaError:
        raise
    except (NestQuadError, KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"{path}: stored data is inconsistent "
                             f"({exc})") from exc
    record = RuleRecord(kind, family, mode, payload, cert, prov,
                        schema_version=version)
    if verify:
        try:
            _reverify(record)
        except IntegrityError as exc:
            raise IntegrityError(f"{path}: {exc}") from exc
    return record


@dataclass(frozen=True)
class CatalogEntry:
    key: tuple
    path: str
    record: RuleRecord


@dataclass(frozen=True)
class Catalog:
    """Directory index of records, keyed by (kind, params, n1, n2, mode)."""

    directory: str
    entries: dict

    def __len__(self) -> int:
        return len(self.entries)

    def keys(self):
        return self.entries.keys()

    def get(self, key) -> CatalogEntry | None:
        return self.entries.get(key)


def catalog_scan(directory, verify: bool = False) -> Catalog:
    """Index every readable record in a directory.

    Unreadable or invalid files are skipped with a warning; duplicate keys
    resolve to the most recently modified file (again with a warning).
    """
    directory = os.fspath(directory)
    names = [n for n in os.listdir(directory) if n.endswith(".json")]
    paths = [os.path.join(directory, n) for n in names]
    paths.sort(key=lambda p: (os.path.getmtime(p), p))
    entries: dict = {}
    for path in paths:
        try:
            record = load(path, verify=verify)
        except (NestQuadError, OSError) as exc:
            warnings.warn(f"skipping {path}: {exc}", UserWarning,
                          stacklevel=2)
            continue
        key = record.key
        if key in entries:
            warnings.warn(
                f"duplicate records for key {key}: keeping newer "
                f"{path} over {entries[key].path}", UserWarning,
                stacklevel=2)
        entries[key] = CatalogEntry(key=key, path=path, record=record)
    return Catalog(directory=directory, entries=entries)


def write_rule_csv(rule: QuadratureRule, path) -> None:
    """One node,weight row per line with a header, lossless decimals."""
    lines = ["node,weight"]
    for x, w in zip(rule.nodes, rule.weights):
        lines.append(f"{float(x)!r},{float(w)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
