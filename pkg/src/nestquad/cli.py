"""Command-line front end for generating, extending, verifying, storing,
and assembling quadrature rules.

Exit codes: 0 success, 1 usage or unsupported request, 2 optimizer failure,
3 input/output failure, 4 missing catalog dependency, 5 verification
failure.  All commands run headlessly and print deterministic output for a
given set of flags.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from types import SimpleNamespace

import numpy as np

from .errors import (
    CapacityError,
    ConvergenceError,
    FeasibilityError,
    IntegrityError,
    NumericalError,
    ParameterError,
    SchemaError,
    UnsupportedFamilyError,
)
from .gauss import circle_theorem_deviation, gauss_rule, moment_residuals
from .nested_optimizer import (
    OptimizerConfig,
    extend_patterson,
    generate_nested,
    prune_negligible,
)
from .orthopoly import (
    WeightFamily,
    chebyshev1,
    generalized_hermite,
    generalized_laguerre,
    jacobi,
    legendre,
    recurrence_coefficients,
)
from .rulestore import (
    catalog_scan,
    load,
    make_pair_record,
    make_rule_record,
    save,
    write_rule_csv,
)
from .rulestore import _family_from_json  # shared family codec
from .sparse_grid import (
    UnivariateLevelFamily,
    gauss_levels,
    grid_to_json_dict,
    nested_levels,
    smolyak_grid,
    write_grid_csv,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONVERGENCE = 2
EXIT_IO = 3
EXIT_MISSING = 4
EXIT_VERIFY = 5


class UsageError(Exception):
    """Bad flags or arguments; maps to exit code 1."""


class MissingDependencyError(Exception):
    """A required catalog entry is absent; maps to exit code 4."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_family(name: str, params: str | None) -> WeightFamily:
    """Resolve a family flag such as "jacobi" + "0,0.3" or "hermite-rho1".

    The -rhoX suffix on hermite/laguerre is shorthand for a single shape
    parameter; it cannot be combined with --params.
    """
    text = name.strip().lower()
    values = []
    if params:
        try:
            values = [float(p) for p in params.split(",") if p.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --params {params!r}: {exc}") from exc
    suffix_rho = None
    if "-rho" in text:
        text, _, tail = text.partition("-rho")
        try:
            suffix_rho = float(tail)
        except ValueError as exc:
            raise UsageError(f"bad family suffix -rho{tail!r}") from exc
        if values:
            raise UsageError("give either a -rho suffix or --params, not both")
        values = [suffix_rho]

    if text == "legendre":
        if values:
            raise UsageError("legendre takes no parameters")
        return legendre()
    if text in ("chebyshev", "chebyshev1"):
        if values:
            raise UsageError("chebyshev takes no parameters")
        return chebyshev1()
    if text == "jacobi":
        if len(values) != 2:
            raise UsageError("jacobi needs --params alpha,beta")
        return jacobi(values[0], values[1])
    if text in ("hermite", "generalized_hermite"):
        if len(values) > 1:
            raise UsageError("hermite takes at most one rho parameter")
        return generalized_hermite(values[0] if values else 0.0)
    if text in ("laguerre", "generalized_laguerre"):
        if len(values) > 1:
            raise UsageError("laguerre takes at most one rho parameter")
        return generalized_laguerre(values[0] if values else 0.0)
    raise UsageError(f"unknown family {name!r}")


def _parse_n1_list(text: str) -> list:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --n1 {text!r}: {exc}") from exc
    if not values or any(v < 1 for v in values):
        raise UsageError("--n1 needs positive integers")
    return values


def _table_for(family: WeightFamily, capacity: int):
    return recurrence_coefficients(family, capacity)


# ---------------------------------------------------------------- generate

def _run_generation(task):
    """Worker for one n1; returns (n1, pair, iterations, error, seconds)."""
    family, n1, overrides, log_path = task
    config = OptimizerConfig.defaults_for(family, **overrides)
    table = _table_for(family, 4 * n1 + 10)
    start = time.perf_counter()
    try:
        pair, state = generate_nested(n1, table, config, log_path=log_path)
    except (ConvergenceError, FeasibilityError, NumericalError) as exc:
        return n1, None, 0, f"{type(exc).__name__}: {exc}", \
            time.perf_counter() - start
    return n1, pair, state.iteration, None, time.perf_counter() - start


def _derive_log_path(log, n1, many):
    if log is None:
        return None
    if not many:
        return log
    root, ext = os.path.splitext(log)
    return f"{root}-n{n1}{ext or '.csv'}"


def _out_path_for_pair(out, family, n1, many):
    if out is None:
        return None
    if not many and out.endswith(".json"):
        return out
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, f"pair-{family.kind}-n{n1}.json")


def cmd_generate(args) -> int:
    family = _parse_family(args.family, args.params)
    n1_list = _parse_n1_list(args.n1)
    overrides = {}
    if args.eps is not None:
        overrides["epsilon"] = args.eps
    if args.alpha2_init is not None:
        overrides["alpha2_initial"] = args.alpha2_init
    if args.allow_negative_weights:
        overrides["allow_negative_weights"] = True
    many = len(n1_list) > 1
    tasks = [(family, n1, overrides, _derive_log_path(args.log, n1, many))
             for n1 in n1_list]

    if many:
        workers = min(len(tasks), os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_generation, tasks))
    else:
        results = [_run_generation(tasks[0])]

    failed = False
    for n1, pair, iterations, error, seconds in results:
        if pair is None:
            print(f"n1={n1} FAILED {error}", file=sys.stderr)
            failed = True
            continue
        config = OptimizerConfig.defaults_for(family, **overrides)
        path = _out_path_for_pair(args.out, family, n1, many)
        if path is not None:
            save(make_pair_record(pair, config, iterations), path)
        print(f"n1={n1} n2={pair.fine.n} "
              f"alpha1={pair.coarse.exactness_degree} "
              f"alpha2={pair.fine.exactness_degree} "
              f"residual={pair.residual_norm:.3e} "
              f"iterations={iterations} time={seconds:.2f}s")
    return EXIT_CONVERGENCE if failed else EXIT_OK


# ------------------------------------------------------------------ extend

def cmd_extend(args) -> int:
    record = load(args.input)
    rule = record.payload.fine if record.kind == "pair" else record.payload
    family = rule.family
    config = OptimizerConfig.defaults_for(family)
    out_dir = args.out
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for _ in range(args.steps):
        n_new = 2 * rule.n + 1
        table = _table_for(family, 4 * n_new + 8)
        extended, state = extend_patterson(rule, table, config)
        pruned_from = None
        if args.prune:
            kept = prune_negligible(extended, table, config)
            if kept.n != extended.n:
                pruned_from = extended.n
                extended = kept
        line = f"n2={extended.n} alpha2={extended.exactness_degree}"
        if pruned_from is not None:
            line += f" pruned_from={pruned_from}"
        print(line)
        if out_dir is not None:
            save(make_rule_record(extended, mode="patterson", config=config,
                                  iterations=state.iteration),
                 os.path.join(out_dir,
                              f"ext-{family.kind}-n{extended.n}.json"))
        rule = extended
    return EXIT_OK


# ------------------------------------------------------------------- gauss

def cmd_gauss(args) -> int:
    family = _parse_family(args.family, args.params)
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    table = _table_for(family, 2 * args.n + 1)
    rule = gauss_rule(table, args.n)
    if args.out is not None:
        save(make_rule_record(rule), args.out)
    print(f"n={rule.n} alpha={rule.exactness_degree} "
          f"residual={rule.residual_norm:.3e}")
    return EXIT_OK


# ------------------------------------------------------------------ verify

def _verify_part(label, family, nodes, weights, alpha, stored) -> bool:
    table = _table_for(family, alpha)
    residuals = moment_residuals(nodes, weights, table, alpha)
    norm = float(np.linalg.norm(residuals))
    allowed = 10.0 * (stored + 1e-16)
    worst = int(np.argmax(np.abs(residuals)))
    if label:
        print(label)
    print("  j  residual")
    for j, r in enumerate(residuals):
        flag = "  <- worst" if j == worst else ""
        print(f"  {j:<3d}{r:+.3e}{flag}")
    ok = norm <= allowed
    print(f"  norm={norm:.3e} stored={stored:.3e} allowed={allowed:.3e} "
          f"{'PASS' if ok else 'FAIL'}")
    return ok


def cmd_verify(args) -> int:
    try:
        with open(args.input, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{args.input}: not valid JSON ({exc})") from exc
    try:
        family = _family_from_json(doc["family"])
        data = doc["data"]
        nodes = np.array(data["nodes"], dtype=float)
        weights = np.array(data["weights"], dtype=float)
        kind = doc["kind"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{args.input}: malformed record ({exc})") from exc

    ok = True
    if kind == "pair":
        n1 = int(data["n1"])
        subset = [int(i) for i in data["subset_map"]]
        alpha1 = args.alpha if args.alpha is not None else int(data["alpha1"])
        alpha2 = args.alpha if args.alpha is not None else int(data["alpha2"])
        stored_c = float(data.get("residual_norm_coarse",
                                  data["residual_norm"]))
        stored_f = float(data.get("residual_norm_fine",
                                  data["residual_norm"]))
        ok &= _verify_part("coarse", family, nodes[subset], weights[:n1],
                           alpha1, stored_c)
        ok &= _verify_part("fine", family, nodes, weights[n1:],
                           alpha2, stored_f)
        rule_nodes, rule_weights = nodes, weights[n1:]
    else:
        alpha = args.alpha if args.alpha is not None else int(data["alpha2"])
        ok &= _verify_part("", family, nodes, weights, alpha,
                           float(data["residual_norm"]))
        rule_nodes, rule_weights = nodes, weights

    if args.circle_theorem:
        probe = SimpleNamespace(family=family, nodes=rule_nodes,
                                weights=rule_weights, n=rule_nodes.size)
        deviation = circle_theorem_deviation(probe)
        print(f"  circle_theorem_deviation={deviation:.3e}")
    return EXIT_OK if ok else EXIT_VERIFY


# ------------------------------------------------------------- sparse-grid

def _nested_chain_from_catalog(catalog, family):
    """Telescoping chain of stored rules, smallest first.

    Rules of the family (gauss seeds and patterson extensions) qualify if
    each embeds bit-exactly in the next larger one; non-embedding sizes
    are skipped.
    """
    rules = [entry.record.payload for entry in catalog.entries.values()
             if entry.record.kind == "rule"
             and entry.record.family == family]
    rules.sort(key=lambda r: r.n)
    chain = []
    for rule in rules:
        if not chain:
            chain.append(rule)
            continue
        if set(chain[-1].nodes.tolist()) <= set(rule.nodes.tolist()):
            chain.append(rule)
    return chain


def _chain_entries_needed(k: int) -> int:
    m = 1
    covered = 0
    while covered < k:
        covered += m
        m += 1
    return m - 1


def _autogen_chain(family, entries_needed, catalog_dir):
    config = OptimizerConfig.defaults_for(family)
    table = _table_for(family, 16)
    chain = [gauss_rule(table, 1)]
    while len(chain) < entries_needed:
        n_new = 2 * chain[-1].n + 1
        table = _table_for(family, 4 * n_new + 8)
        extended, _ = extend_patterson(chain[-1], table, config)
        chain.append(extended)
    if catalog_dir:
        os.makedirs(catalog_dir, exist_ok=True)
        save(make_rule_record(chain[0]),
             os.path.join(catalog_dir, f"gauss-{family.kind}-n1.json"))
        for rule in chain[1:]:
            save(make_rule_record(rule, mode="patterson", config=config),
                 os.path.join(catalog_dir,
                              f"ext-{family.kind}-n{rule.n}.json"))
    return chain


def cmd_sparse_grid(args) -> int:
    family = _parse_family(args.family, args.params)
    if args.d < 1 or args.k < 1:
        raise UsageError("--d and --k must be at least 1")
    if args.schedule == "gauss":
        table = _table_for(family, 2 * args.k + 1)
        levels = gauss_levels(table, args.k)
    else:
        needed = _chain_entries_needed(args.k)
        if args.autogen:
            chain = _autogen_chain(family, needed, args.catalog)
        else:
            if not args.catalog or not os.path.isdir(args.catalog):
                raise MissingDependencyError(
                    "no catalog directory; pass --catalog or set "
                    "NESTQUAD_CATALOG, or use --autogen")
            chain = _nested_chain_from_catalog(catalog_scan(args.catalog),
                                               family)
            if len(chain) < needed:
                raise MissingDependencyError(
                    f"catalog provides a chain of {len(chain)} rules, "
                    f"level {args.k} needs {needed}; rerun with --autogen")
        levels = nested_levels(chain, args.k)
    grid = smolyak_grid(levels, args.d, args.k)
    if args.out is not None:
        base = args.out
        for suffix in (".json", ".csv"):
            if base.endswith(suffix):
                base = base[:-len(suffix)]
        doc = grid_to_json_dict(grid, family.label())
        with open(base + ".json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        write_grid_csv(grid, base + ".csv")
    print(grid.node_count)
    return EXIT_OK


# --------------------------------------------------------------- integrate

def _legendre_factor(name, exps_or_coeffs):
    """Per-dimension analytic factors under the uniform density on [-1,1]."""
    if name == "monomial":
        return [1.0 / (p + 1) if p % 2 == 0 else 0.0
                for p in exps_or_coeffs]
    if name == "product-exponential":
        return [math.sinh(c) / c if c != 0.0 else 1.0
                for c in exps_or_coeffs]
    if name == "genz-oscillatory":
        return [math.sin(c) / c if c != 0.0 else 1.0
                for c in exps_or_coeffs]
    raise AssertionError(name)


def _resolve_function(name: str, params: str | None, d: int):
    """Return (f, truth) where truth is the analytic value for the uniform
    weight on [-1,1]^d, or None when unavailable."""
    name = name.strip().lower()
    values = []
    if params:
        try:
            values = [float(p) for p in params.split(",") if p.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --params {params!r}: {exc}") from exc

    if name == "constant":
        return (lambda x: 1.0), 1.0
    if name == "monomial":
        if len(values) != d or any(v != int(v) or v < 0 for v in values):
            raise UsageError(
                f"monomial needs {d} nonnegative integer exponents")
        exps = np.array([int(v) for v in values], dtype=float)
        truth = math.prod(_legendre_factor("monomial",
                                           [int(v) for v in values]))
        return (lambda x: float(np.prod(np.asarray(x) ** exps))), truth
    if name == "product-exponential":
        if len(values) != d:
            raise UsageError(f"product-exponential needs {d} coefficients")
        coeffs = np.array(values)
        truth = math.prod(_legendre_factor("product-exponential", values))
        return (lambda x: float(np.exp(coeffs @ np.asarray(x)))), truth
    if name == "genz-oscillatory":
        if len(values) != d + 1:
            raise UsageError(
                f"genz-oscillatory needs u plus {d} coefficients")
        u, coeffs = values[0], np.array(values[1:])
        truth = (math.cos(2.0 * math.pi * u)
                 * math.prod(_legendre_factor("genz-oscillatory",
                                              values[1:])))
        return (lambda x: float(
            np.cos(2.0 * math.pi * u + coeffs @ np.asarray(x)))), truth
    raise UsageError(f"unknown function {name!r}")


def _truth_applies(family_ref: str) -> bool:
    return family_ref.startswith("legendre")


def cmd_integrate(args) -> int:
    if (args.grid is None) == (args.rule is None):
        raise UsageError("give exactly one of --grid or --rule")
    fn_name = args.function.strip().lower()

    if args.grid is not None:
        try:
            with open(args.grid, encoding="utf-8") as fh:
                doc = json.load(fh)
            d = int(doc["d"])
            nodes = np.array(doc["nodes"], dtype=float).reshape(-1, d)
            weights = np.array(doc["weights"], dtype=float)
            family_ref = str(doc["family_ref"])
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{args.grid}: not valid JSON ({exc})") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{args.grid}: malformed grid ({exc})") from exc
        f, truth = _resolve_function(fn_name, args.params, d)
        values = np.array([f(x) for x in nodes])
        if not np.all(np.isfinite(values)):
            bad = nodes[int(np.flatnonzero(~np.isfinite(values))[0])]
            raise ParameterError(
                f"integrand not finite at {bad.tolist()}")
        estimate = float(np.dot(weights, values))
        line = f"estimate={estimate:.12e}"
        if fn_name == "constant" or _truth_applies(family_ref):
            if truth == 0.0:
                line += f" e_mu=abs:{abs(estimate):.3e}"
            else:
                line += f" e_mu={abs((estimate - truth) / truth):.3e}"
        print(line)
        return EXIT_OK

    record = load(args.rule)
    if record.kind != "pair":
        raise UsageError("--rule expects a nested pair record")
    pair = record.payload
    f, truth = _resolve_function(fn_name, args.params, 1)
    mu1 = float(np.dot(pair.coarse.weights,
                       [f(np.array([x])) for x in pair.coarse.nodes]))
    mu2 = float(np.dot(pair.fine.weights,
                       [f(np.array([x])) for x in pair.fine.nodes]))
    e_i = abs((mu1 - mu2) / mu2) if mu2 != 0.0 else abs(mu1 - mu2)
    line = f"coarse={mu1:.12e} fine={mu2:.12e} e_I={e_i:.3e}"
    if fn_name == "constant" or _truth_applies(record.family.label()):
        if truth != 0.0:
            line += f" e_mu={abs((mu2 - truth) / truth):.3e}"
    print(line)
    return EXIT_OK


# ------------------------------------------------------------------ export

def cmd_export(args) -> int:
    record = load(args.input, verify=False)
    part = args.part
    if record.kind == "pair":
        rule = record.payload.coarse if part == "coarse" \
            else record.payload.fine
    else:
        if part == "coarse":
            raise UsageError("rule records have no coarse part")
        rule = record.payload
    write_rule_csv(rule, args.out)
    print(f"wrote {rule.n} rows to {args.out}")
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nestquad",
                     description="Nested quadrature rule toolkit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("generate", help="optimize a nested pair")
    p.add_argument("--family", required=True)
    p.add_argument("--params", default=None)
    p.add_argument("--n1", required=True,
                   help="coarse size, or comma list for a batch")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--alpha2-init", dest="alpha2_init", type=int,
                   default=None)
    p.add_argument("--allow-negative-weights", action="store_true")
    p.add_argument("--log", default=None,
                   help="per-iteration diagnostics CSV")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("extend", help="Patterson-extend a stored rule")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--prune", action="store_true")
    p.add_argument("--out", default=None,
                   help="directory receiving one record per level")
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("gauss", help="build a plain Gauss rule")
    p.add_argument("--family", required=True)
    p.add_argument("--params", default=None)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gauss)

    p = sub.add_parser("verify", help="re-verify a stored record")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--alpha", type=int, default=None)
    p.add_argument("--circle-theorem", dest="circle_theorem",
                   action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sparse-grid", help="assemble a Smolyak grid")
    p.add_argument("--family", required=True)
    p.add_argument("--params", default=None)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--schedule", choices=("nested", "gauss"),
                   default="nested")
    p.add_argument("--catalog",
                   default=os.environ.get("NESTQUAD_CATALOG"))
    p.add_argument("--autogen", action="store_true",
                   help="generate missing univariate levels")
    p.add_argument("--out", default=None,
                   help="basename for .json and .csv grid files")
    p.set_defaults(func=cmd_sparse_grid)

    p = sub.add_parser("integrate", help="integrate a built-in function")
    p.add_argument("--grid", default=None)
    p.add_argument("--rule", default=None,
                   help="nested pair record for embedded error estimation")
    p.add_argument("--function", required=True)
    p.add_argument("--params", default=None)
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("export", help="write a stored rule as CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--part", choices=("fine", "coarse"), default="fine")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("no command given (see --help)")
        return args.func(args)
    except (UsageError, ParameterError, UnsupportedFamilyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, FeasibilityError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (SchemaError, IntegrityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (MissingDependencyError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
