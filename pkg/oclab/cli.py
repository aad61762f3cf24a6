"""Command-line front end: JSON experiment configs in, CSV/JSON tables out.

Every numeric choice lives in the config document; flags only pick the
command, the config path, an output override and the log verbosity.
Exit codes follow :mod:`oclab.config` (0 ok, 2 config, 3 infeasible, 4 failed check).
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
import json
import logging
import math
from pathlib import Path
import sys
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import config
from .coding import Density, SimConfig, SimResult, simulate_continuous, simulate_finite, simulate_iid_codebook
from .core import Alphabet, DistortionMatrix, Pmf
from .errors import (
    CapExceededError,
    ConfigError,
    DimensionMismatchError,
    InfeasibleError,
    InvalidDistributionError,
    InvalidQuantizerError,
    OclabError,
)
from .info import ConstrainedInformation, d_classic
from .optquant import LpSolution, solve_p1, solve_p3
from .transport import coupling_rows, ot_solve
from .typeclass import closest_ntype, closest_ntype_is_tied, type_class_info
from .utils import csv_text, json_text, write_text
from .verify import CHECKS, run_suite

logger = logging.getLogger(__name__)

COMMANDS = ("imin", "dcurve", "p1", "p3", "ot", "simulate", "types", "verify")
GLOBAL_KEYS = ("seed", "output", "format")
TRIPLE_KEYS = ("mu", "psi", "rho")

# required and optional top-level fields per command; docs/schemas mirror this table
FIELDS: Dict[str, Tuple[Tuple[str, ...], Tuple[str, ...]]] = {
    "imin": (TRIPLE_KEYS, ("D", "grid", "betas", "rates", "threads", "strict", *GLOBAL_KEYS)),
    "dcurve": ((*TRIPLE_KEYS, "rates"), ("classic", *GLOBAL_KEYS)),
    "p1": ((*TRIPLE_KEYS, "M"), ("cell_shape", *GLOBAL_KEYS)),
    "p3": ((*TRIPLE_KEYS, "M"), ("delta", "deltas", "cell_shape", "metric", *GLOBAL_KEYS)),
    "ot": (TRIPLE_KEYS, GLOBAL_KEYS),
    "simulate": (
        ("scheme", "rate_bits", "n_list", "trials"),
        (
            *TRIPLE_KEYS,
            "source",
            "target",
            "k",
            "levels",
            "coupling",
            "tie_rule",
            "fixed_codebook",
            "codebook_cap",
            "threads",
            *GLOBAL_KEYS,
        ),
    ),
    "types": (("psi", "n_list"), GLOBAL_KEYS),
    "verify": ((), ("checks", "tolerances", *GLOBAL_KEYS)),
}


# ----------------------------------------------------------------------
# Config documents
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Common:
    seed: int = config.DEFAULT_SEED
    output: Optional[str] = None
    format: str = "csv"


@dataclass(frozen=True)
class Outcome:
    """Rendered primary output plus the exit code the command asks for."""

    header: Tuple[str, ...]
    rows: List[List[Any]]
    payload: Dict[str, Any]
    exit_code: int = config.EXIT_OK


def _fields(doc: Any, required: Sequence[str], optional: Sequence[str] = (), where: str = "config") -> Dict[str, Any]:
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{where} must be a JSON object")
    allowed = set(required) | set(optional)
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown fields {unknown}")
    missing = [key for key in required if key not in doc]
    if missing:
        raise ConfigError(f"{where}: missing fields {missing}")
    return dict(doc)


def _document(doc: Any, command: str) -> Dict[str, Any]:
    required, optional = FIELDS[command]
    return _fields(doc, required, optional)


def _number(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number")
    return float(value)


def _integer(value: Any, name: str, low: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer")
    if value < low:
        raise ConfigError(f"{name} must be at least {low}")
    return value


def _numbers(value: Any, name: str) -> List[float]:
    if not isinstance(value, list):
        raise ConfigError(f"{name} must be a list of numbers")
    return [_number(v, name) for v in value]


def _integers(value: Any, name: str) -> Tuple[int, ...]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{name} must be a nonempty list of integers")
    return tuple(_integer(v, name) for v in value)


def _flag(value: Any, name: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{name} must be true or false")
    return value


def _matrix(value: Any, name: str) -> np.ndarray:
    if not isinstance(value, list) or not value or not all(isinstance(row, list) for row in value):
        raise ConfigError(f"{name} must be a nonempty list of rows")
    rows = [_numbers(row, name) for row in value]
    if len({len(row) for row in rows}) != 1:
        raise ConfigError(f"{name} rows must have equal length")
    return np.asarray(rows)


def _choice(value: Any, name: str, options: Sequence[str]) -> str:
    if value not in options:
        raise ConfigError(f"{name} must be one of {list(options)}, got {value!r}")
    return value


def parse_common(doc: Mapping[str, Any]) -> Common:
    seed = doc.get("seed", config.DEFAULT_SEED)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    output = doc.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output must be a path string")
    return Common(seed, output, _choice(doc.get("format", "csv"), "format", ("csv", "json")))


def parse_pmf(value: Any, name: str) -> Pmf:
    """A bare list of masses over labels 0..k-1, or ``{"alphabet": [...], "mass": [...]}``."""

    if isinstance(value, list):
        return Pmf(Alphabet.range(len(value)), np.asarray(_numbers(value, name)))
    doc = _fields(value, ("alphabet", "mass"), where=name)
    return Pmf(Alphabet(tuple(_numbers(doc["alphabet"], f"{name}.alphabet"))), np.asarray(_numbers(doc["mass"], f"{name}.mass")))


def parse_rho(value: Any, mu: Pmf, psi: Pmf) -> DistortionMatrix:
    if value == "hamming":
        return DistortionMatrix.hamming(mu.alphabet, psi.alphabet)
    if value == "squared":
        return DistortionMatrix.squared_error(mu.alphabet, psi.alphabet)
    if isinstance(value, Mapping):
        doc = _fields(value, ("power",), where="rho")
        return DistortionMatrix.power(mu.alphabet, psi.alphabet, _number(doc["power"], "rho.power"))
    if isinstance(value, list):
        rho = DistortionMatrix(_matrix(value, "rho"))
        rho.check(mu.size, psi.size)
        return rho
    raise ConfigError('rho must be "hamming", "squared", {"power": p} or a matrix')


def parse_density(value: Any, name: str) -> Density:
    if not isinstance(value, Mapping):
        raise ConfigError(f"{name} must be a density object")
    family = _choice(value.get("family"), f"{name}.family", ("gaussian", "uniform", "point"))
    if family == "gaussian":
        doc = _fields(value, ("family",), ("mean", "std"), where=name)
        return Density.gaussian(_number(doc.get("mean", 0.0), "mean"), _number(doc.get("std", 1.0), "std"))
    if family == "uniform":
        doc = _fields(value, ("family", "low", "high"), where=name)
        return Density.uniform(_number(doc["low"], "low"), _number(doc["high"], "high"))
    doc = _fields(value, ("family", "at"), where=name)
    return Density.point(_number(doc["at"], "at"))


@dataclass(frozen=True, eq=False)
class Triple:
    mu: Pmf
    psi: Pmf
    rho: DistortionMatrix


def parse_triple(doc: Mapping[str, Any]) -> Triple:
    mu = parse_pmf(doc["mu"], "mu")
    psi = parse_pmf(doc["psi"], "psi")
    return Triple(mu, psi, parse_rho(doc["rho"], mu, psi))


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------
def _rate_query(
    info: ConstrainedInformation, triple: Triple, rates_doc: Any, classic: bool, command: str, seed: int
) -> Outcome:
    rates = _numbers(rates_doc, "rates")
    if any(r < 0 for r in rates):
        raise ConfigError("rates must be nonnegative")
    rows: List[List[Any]] = []
    for rate in rates:
        row: List[Any] = [rate, info.d_curve(rate)]
        if classic:
            row.append(d_classic(triple.mu, triple.rho, rate))
        rows.append(row)
    header = ("rate_bits", "D", "D_classic") if classic else ("rate_bits", "D")
    payload = {
        "command": command,
        "seed": seed,
        "feasibleDMin": info.d_min,
        "zeroIDMax": info.d_max,
        "points": [dict(zip(header, row)) for row in rows],
    }
    return Outcome(header, rows, payload)


def cmd_imin(doc: Mapping[str, Any], common: Common) -> Outcome:
    """``I_m`` on a distortion list, an even grid over [D_min, D_max] or a beta list.

    A ``rates`` list switches to the inverse query and reports ``D(mu, psi, R)``.
    With ``strict`` a level below the transport floor raises :class:`InfeasibleError`
    instead of reporting ``I_bits = inf``.
    """

    doc = _document(doc, "imin")
    modes = [key for key in ("D", "grid", "betas", "rates") if key in doc]
    if len(modes) != 1:
        raise ConfigError("imin needs exactly one of D, grid, betas or rates")
    strict = _flag(doc.get("strict", False), "strict")
    triple = parse_triple(doc)
    threads = _integer(doc["threads"], "threads") if "threads" in doc else None
    info = ConstrainedInformation(triple.mu, triple.psi, triple.rho)
    if "rates" in doc:
        return _rate_query(info, triple, doc["rates"], False, "imin", common.seed)
    if "betas" in doc:
        betas = _numbers(doc["betas"], "betas")
        if any(b < 0 for b in betas):
            raise ConfigError("betas must be nonnegative")
        curve = info.curve(betas, threads)
    else:
        if "grid" in doc:
            levels = list(np.linspace(info.d_min, info.d_max, _integer(doc["grid"], "grid", low=2)))
        else:
            levels = _numbers(doc["D"], "D")
        curve = info.sweep(levels, threads)
        below = [d for _, d, bits in curve.samples if math.isinf(bits)]
        if strict and below:
            raise InfeasibleError(f"distortion levels {below} lie below the transport floor {info.d_min:.6g}")
    payload = {"command": "imin", "seed": common.seed, **curve.to_dict()}
    return Outcome(("beta", "D", "I_bits"), [list(s) for s in curve.to_rows()], payload)


def cmd_dcurve(doc: Mapping[str, Any], common: Common) -> Outcome:
    """``D(mu, psi, R)`` at the requested rates, optionally next to the free-output ``D(mu, R)``."""

    doc = _document(doc, "dcurve")
    triple = parse_triple(doc)
    info = ConstrainedInformation(triple.mu, triple.psi, triple.rho)
    return _rate_query(info, triple, doc["rates"], _flag(doc.get("classic", False), "classic"), "dcurve", common.seed)


def _mixture_rows(solution: LpSolution) -> List[List[Any]]:
    return [[r["weight"], " ".join(str(i) for i in r["map"])] for r in solution.to_dict()["mixture"]]


def cmd_p1(doc: Mapping[str, Any], common: Common) -> Outcome:
    doc = _document(doc, "p1")
    triple = parse_triple(doc)
    M = _integer(doc["M"], "M")
    cell_shape = _choice(doc.get("cell_shape", "all"), "cell_shape", ("all", "interval"))
    solution = solve_p1(triple.mu, triple.psi, triple.rho, M, cell_shape)
    payload = {"command": "p1", "seed": common.seed, "M": M, "cell_shape": cell_shape, **solution.to_dict()}
    code = config.EXIT_OK if solution.is_optimal else config.EXIT_INFEASIBLE
    return Outcome(("weight", "map"), _mixture_rows(solution), payload, code)


def cmd_p3(doc: Mapping[str, Any], common: Common) -> Outcome:
    """One radius (``delta``) or a sweep (``deltas``); any infeasible radius sets exit 3."""

    doc = _document(doc, "p3")
    if ("delta" in doc) == ("deltas" in doc):
        raise ConfigError("p3 needs exactly one of delta or deltas")
    triple = parse_triple(doc)
    M = _integer(doc["M"], "M")
    cell_shape = _choice(doc.get("cell_shape", "all"), "cell_shape", ("all", "interval"))
    deltas = [_number(doc["delta"], "delta")] if "delta" in doc else _numbers(doc["deltas"], "deltas")
    if any(d < 0 for d in deltas):
        raise ConfigError("delta must be nonnegative")
    metric = None
    if "metric" in doc:
        metric = _matrix(doc["metric"], "metric")
        if metric.shape != (triple.psi.size, triple.psi.size):
            raise ConfigError(f"metric must be {triple.psi.size} x {triple.psi.size}")
    solutions = [solve_p3(triple.mu, triple.psi, triple.rho, M, d, metric, cell_shape) for d in deltas]
    rows = [[d, s.status, s.objective, s.boundary] for d, s in zip(deltas, solutions)]
    payload = {
        "command": "p3",
        "seed": common.seed,
        "M": M,
        "cell_shape": cell_shape,
        "solutions": [{"delta": d, **s.to_dict()} for d, s in zip(deltas, solutions)],
    }
    code = config.EXIT_OK if all(s.is_optimal for s in solutions) else config.EXIT_INFEASIBLE
    return Outcome(("delta", "status", "objective", "boundary"), rows, payload, code)


def cmd_ot(doc: Mapping[str, Any], common: Common) -> Outcome:
    doc = _document(doc, "ot")
    triple = parse_triple(doc)
    result = ot_solve(triple.mu, triple.psi, triple.rho)
    payload = {"command": "ot", "seed": common.seed, **result.to_dict()}
    return Outcome(("x_label", "y_label", "mass"), [list(r) for r in coupling_rows(result.coupling)], payload)


SIMULATORS: Dict[str, Callable[[SimConfig], SimResult]] = {
    "finite": simulate_finite,
    "iid": simulate_iid_codebook,
    "continuous": simulate_continuous,
}


def parse_sim_config(doc: Mapping[str, Any], common: Common) -> Tuple[str, SimConfig]:
    doc = _document(doc, "simulate")
    scheme = _choice(doc["scheme"], "scheme", tuple(SIMULATORS))
    options: Dict[str, Any] = {
        "seed": common.seed,
        "coupling": _choice(doc.get("coupling", "auto"), "coupling", ("auto", "exact", "marton")),
        "tie_rule": _choice(doc.get("tie_rule", "first"), "tie_rule", ("first", "last")),
        "fixed_codebook": _flag(doc.get("fixed_codebook", False), "fixed_codebook"),
        "codebook_cap": _integer(doc.get("codebook_cap", config.CODEBOOK_CAP), "codebook_cap"),
        "threads": _integer(doc["threads"], "threads") if "threads" in doc else None,
    }
    if scheme == "continuous":
        for key in ("mu", "psi", "rho"):
            if key in doc:
                raise ConfigError(f"continuous scheme takes source/target densities, not {key}")
        if "source" not in doc or "target" not in doc:
            raise ConfigError("continuous scheme needs source and target")
        options.update(
            mode="continuous",
            source=parse_density(doc["source"], "source"),
            target=parse_density(doc["target"], "target"),
            k=_number(doc.get("k", 4.0), "k"),
            levels=_integer(doc.get("levels", 16), "levels"),
        )
    else:
        for key in ("source", "target", "k", "levels"):
            if key in doc:
                raise ConfigError(f"{scheme} scheme does not take {key}")
        if not all(key in doc for key in ("mu", "psi", "rho")):
            raise ConfigError(f"{scheme} scheme needs mu, psi and rho")
        triple = parse_triple(doc)
        options.update(mode="finite", mu=triple.mu, psi=triple.psi, rho=triple.rho)
    cfg = SimConfig(
        _number(doc["rate_bits"], "rate_bits"),
        _integers(doc["n_list"], "n_list"),
        _integer(doc["trials"], "trials"),
        **options,
    )
    return scheme, cfg


def cmd_simulate(doc: Mapping[str, Any], common: Common) -> Outcome:
    scheme, cfg = parse_sim_config(doc, common)
    result = SIMULATORS[scheme](cfg)
    payload = {"command": "simulate", **result.to_dict()}
    return Outcome(result.columns, result.to_rows(), payload)


def cmd_types(doc: Mapping[str, Any], common: Common) -> Outcome:
    """Closest n-type of psi per block length with its class size and divergences."""

    doc = _document(doc, "types")
    psi = parse_pmf(doc["psi"], "psi")
    rows: List[List[Any]] = []
    for n in _integers(doc["n_list"], "n_list"):
        info = type_class_info(closest_ntype(psi, n), psi)
        rows.append(
            [
                n,
                " ".join(str(c) for c in info.ntype.counts),
                closest_ntype_is_tied(psi, n),
                info.log_size_bits,
                info.kl_to_target_bits,
                info.normalized_kl_bits,
            ]
        )
    header = ("n", "counts", "tied", "log_size_bits", "kl_to_target_bits", "normalized_kl_bits")
    payload = {"command": "types", "seed": common.seed, "rows": [dict(zip(header, row)) for row in rows]}
    return Outcome(header, rows, payload)


def cmd_verify(doc: Mapping[str, Any], common: Common) -> Outcome:
    """Named checks (all when ``checks`` is absent) with optional tolerance overrides."""

    doc = _document(doc, "verify")
    names = None
    if "checks" in doc:
        if not isinstance(doc["checks"], list) or not all(isinstance(n, str) for n in doc["checks"]):
            raise ConfigError("checks must be a list of check names")
        names = doc["checks"]
    tolerances = {
        name: _number(value, f"tolerances.{name}")
        for name, value in _fields(doc.get("tolerances", {}), (), tuple(CHECKS), where="tolerances").items()
    }
    report = run_suite(names, tolerances, common.seed)
    payload = {"command": "verify", "seed": common.seed, **report.to_dict()}
    code = config.EXIT_OK if report.passed else config.EXIT_INVARIANT
    return Outcome(("name", "passed", "value", "tolerance", "detail"), report.to_rows(), payload, code)


HANDLERS: Dict[str, Callable[[Mapping[str, Any], Common], Outcome]] = {
    "imin": cmd_imin,
    "dcurve": cmd_dcurve,
    "p1": cmd_p1,
    "p3": cmd_p3,
    "ot": cmd_ot,
    "simulate": cmd_simulate,
    "types": cmd_types,
    "verify": cmd_verify,
}


# ----------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------
def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="oclab", description="Output-constrained randomized quantization lab.")
    parser.add_argument("command", choices=COMMANDS, help="Experiment to run.")
    parser.add_argument("config", type=Path, help="Path to the JSON experiment config.")
    parser.add_argument("-o", "--output", type=Path, default=None, help="Output path (overrides the config's output).")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG.")
    return parser.parse_args(argv)


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def render(outcome: Outcome, fmt: str) -> str:
    if fmt == "json":
        return json_text(outcome.payload)
    return csv_text(outcome.header, outcome.rows)


def run(command: str, doc: Mapping[str, Any], output: Optional[Path] = None) -> int:
    """Execute one command on a parsed config document and emit its primary output."""

    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a JSON object")
    common = parse_common(doc)
    outcome = HANDLERS[command](doc, common)
    text = render(outcome, common.format)
    target = output if output is not None else (Path(common.output) if common.output else None)
    if target is None:
        sys.stdout.write(text)
    else:
        write_text(target, text)
    return outcome.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging(args.verbose)
    try:
        doc = json.loads(args.config.read_text(encoding="utf-8"))
    except OSError as err:
        print(f"[error] cannot read {args.config}: {err}", file=sys.stderr)
        return config.EXIT_CONFIG
    except json.JSONDecodeError as err:
        print(f"[error] {args.config} is not valid JSON: {err}", file=sys.stderr)
        return config.EXIT_CONFIG

    try:
        return run(args.command, doc, args.output)
    except (ConfigError, CapExceededError, DimensionMismatchError, InvalidDistributionError, InvalidQuantizerError) as err:
        print(f"[error] {err}", file=sys.stderr)
        return config.EXIT_CONFIG
    except InfeasibleError as err:
        print(f"[infeasible] {err}", file=sys.stderr)
        return config.EXIT_INFEASIBLE
    except OclabError as err:
        logger.error("%s failed: %s", args.command, err)
        return 1


__all__ = [
    "COMMANDS",
    "FIELDS",
    "HANDLERS",
    "Outcome",
    "parse_common",
    "parse_pmf",
    "parse_rho",
    "parse_density",
    "parse_sim_config",
    "parse_args",
    "run",
    "main",
]
