"""Command line front end: evaluate model files, benchmark chained products.

``funsor run model.json`` prints one JSON object with the log value;
``funsor bench markov`` prints a CSV comparing sequential and doubling
evaluation of a chained product.  Model files carry a ``"model"``
discriminator naming the family; probabilities are written in linear
space and converted to log internally, matrices as nested row-major
lists.
"""

import argparse
import json
import sys
import time
from dataclasses import dataclass

import numpy as np

from .approx import MomentMatching, MonteCarlo, RngState
from .errors import BoundsError, FunsorError, FunsorTypeError
from .interp import EXACT, interpret
from .markov import scan_mode
from .models import (
    GmmSpec,
    HmmSpec,
    KalmanSpec,
    SldsSpec,
    build_gmm,
    build_hmm,
    build_kalman,
    build_slds_marginal,
)
from .optimize import OPTIMIZE

INTERPRETATIONS = ("exact", "optimize", "momentmatching", "montecarlo")
SEMIRINGS = ("sumproduct", "maxproduct")
SCANS = ("sequential", "parallel")
MODEL_FAMILIES = ("hmm", "kalman", "slds", "gmm")


@dataclass
class RunConfig:
    """Validated options for a single ``funsor run`` invocation."""

    model_path: str
    interpretation: str = "exact"
    semiring: str = "sumproduct"
    scan: str = "sequential"
    seed: int = 0
    samples: int = 100

    def __post_init__(self):
        if self.interpretation not in INTERPRETATIONS:
            raise FunsorTypeError(
                f"unknown interpretation {self.interpretation!r}"
            )
        if self.semiring not in SEMIRINGS:
            raise FunsorTypeError(f"unknown semiring {self.semiring!r}")
        if self.scan not in SCANS:
            raise FunsorTypeError(f"unknown scan mode {self.scan!r}")
        if self.interpretation == "montecarlo" and self.samples < 1:
            raise BoundsError(
                f"montecarlo needs at least one sample, got {self.samples}"
            )
        if self.interpretation == "montecarlo" and self.semiring != "sumproduct":
            raise FunsorTypeError(
                "montecarlo estimates sums; it cannot run under maxproduct"
            )


def _require(doc: dict, key: str):
    if key not in doc:
        raise FunsorTypeError(f"model file is missing required key {key!r}")
    return doc[key]


def _field(doc: dict, key: str, default=None):
    value = doc.get(key, default)
    if value is None:
        return None
    try:
        return np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FunsorTypeError(f"key {key!r} is not numeric array data: {exc}")


def _array(doc: dict, key: str) -> np.ndarray:
    _require(doc, key)
    return _field(doc, key)


def _load_doc(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise FunsorTypeError("model file must hold a JSON object")
    return doc


def _scalar(term) -> float:
    return float(term.atom.data)


def _evaluate_chain(term, config: RunConfig, elim: str):
    """Interpret a closed chain term; returns (log value, levels or None)."""
    stats = {} if config.scan == "parallel" else None
    if config.interpretation == "montecarlo":
        draws = []
        for k in range(config.samples):
            mc = MonteCarlo(RngState(config.seed, k * 1024))
            with scan_mode(config.scan, elim=elim, stats=stats):
                draws.append(_scalar(interpret(mc, term)))
        value = float(np.logaddexp.reduce(draws) - np.log(len(draws)))
    else:
        interp = {
            "exact": EXACT,
            "optimize": OPTIMIZE,
            "momentmatching": MomentMatching(),
        }[config.interpretation]
        with scan_mode(config.scan, elim=elim, stats=stats):
            value = _scalar(interpret(interp, term))
    levels = stats.get("levels") if stats is not None else None
    return value, levels


def cmd_run(config: RunConfig) -> int:
    doc = _load_doc(config.model_path)
    family = _require(doc, "model")
    if family not in MODEL_FAMILIES:
        raise FunsorTypeError(
            f"unknown model family {family!r}; expected one of {MODEL_FAMILIES}"
        )
    elim = "max" if config.semiring == "maxproduct" else "logaddexp"
    if config.semiring == "maxproduct" and family != "hmm":
        raise FunsorTypeError(
            "maxproduct applies to discrete-only models; "
            f"{family!r} has real-valued state"
        )

    reported = config.interpretation
    levels = None
    start = time.perf_counter()
    if family == "hmm":
        spec = HmmSpec(
            transition=_array(doc, "transition"),
            emission_loglik=_array(doc, "emission_loglik"),
            prior=_field(doc, "prior"),
        )
        term = build_hmm(spec, elim=elim)
        value, levels = _evaluate_chain(term, config, elim)
    elif family == "kalman":
        spec = KalmanSpec(
            F=_array(doc, "F"),
            Q=_array(doc, "Q"),
            H=_array(doc, "H"),
            R=_array(doc, "R"),
            observations=_array(doc, "observations"),
            init_mean=_field(doc, "init_mean"),
            init_cov=_field(doc, "init_cov"),
            bias_cov=_field(doc, "bias_cov"),
        )
        term = build_kalman(spec)
        value, levels = _evaluate_chain(term, config, elim)
    elif family == "slds":
        if config.interpretation != "momentmatching":
            print(
                "note: slds always evaluates under momentmatching",
                file=sys.stderr,
            )
        spec = SldsSpec(
            transition=_array(doc, "transition"),
            F=_array(doc, "F"),
            Q=_array(doc, "Q"),
            H=_array(doc, "H"),
            R=_array(doc, "R"),
            init_mean=_field(doc, "init_mean"),
            init_cov=_field(doc, "init_cov"),
            window=int(doc.get("window", 1)),
        )
        value = _scalar(build_slds_marginal(spec, _array(doc, "observations")))
        reported = "momentmatching"
    else:
        if config.interpretation != "momentmatching":
            print(
                "note: gmm always evaluates under momentmatching",
                file=sys.stderr,
            )
        spec = GmmSpec.from_moments(
            loadings=_array(doc, "loadings"),
            offsets=_array(doc, "offsets"),
            noises=_array(doc, "noises"),
            prior_mean=_array(doc, "prior_mean"),
            prior_cov=_array(doc, "prior_cov"),
            data=_array(doc, "data"),
        )
        value = _scalar(build_gmm(spec))
        reported = "momentmatching"
    wall_ms = (time.perf_counter() - start) * 1e3

    payload = {
        "model": family,
        "interpretation": reported,
        "log_value": value,
        "wall_ms": wall_ms,
    }
    if levels is not None:
        payload["levels"] = levels
    print(json.dumps(payload))
    return 0


def cmd_bench_markov(lengths, trials: int, seed: int = 0) -> int:
    if not lengths:
        raise BoundsError("lengths must be nonempty")
    for T in lengths:
        if T < 1:
            raise BoundsError(f"chain length must be positive, got {T}")
    if trials < 1:
        raise BoundsError(f"trials must be positive, got {trials}")

    rng = np.random.default_rng(seed)
    K = 2
    print("T,levels,wall_ms_sequential,wall_ms_parallel")
    for T in lengths:
        spec = HmmSpec(
            transition=rng.dirichlet(np.ones(K), size=K),
            emission_loglik=rng.normal(size=(T, K)),
        )
        term = build_hmm(spec)

        seq_times = []
        for _ in range(trials):
            start = time.perf_counter()
            with scan_mode("sequential"):
                v_seq = _scalar(interpret(EXACT, term))
            seq_times.append(time.perf_counter() - start)

        stats = {}
        par_times = []
        for _ in range(trials):
            start = time.perf_counter()
            with scan_mode("parallel", stats=stats):
                v_par = _scalar(interpret(EXACT, term))
            par_times.append(time.perf_counter() - start)

        if abs(v_seq - v_par) > 1e-8:
            raise FunsorError(
                f"scan modes disagree at T={T}: "
                f"sequential {v_seq!r} vs parallel {v_par!r}"
            )
        print(
            f"{T},{stats['levels']},"
            f"{min(seq_times) * 1e3:.3f},{min(par_times) * 1e3:.3f}"
        )
    return 0


def _parse_lengths(raw: str):
    try:
        return [int(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise BoundsError(f"lengths must be comma-separated integers: {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funsor",
        description="Evaluate probabilistic model files symbolically.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="evaluate one model file")
    run.add_argument("model_path", help="path to a JSON model file")
    run.add_argument("--interp", choices=INTERPRETATIONS, default="exact")
    run.add_argument("--semiring", choices=SEMIRINGS, default="sumproduct")
    run.add_argument("--scan", choices=SCANS, default="sequential")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument(
        "--samples", type=int, default=100,
        help="replicate count for the montecarlo interpretation",
    )

    bench = sub.add_parser("bench", help="benchmark harnesses")
    bench_sub = bench.add_subparsers(dest="target", required=True)
    markov = bench_sub.add_parser(
        "markov", help="compare sequential and doubling chain evaluation"
    )
    markov.add_argument(
        "--lengths", required=True, help="comma-separated chain lengths"
    )
    markov.add_argument("--trials", type=int, default=3)
    markov.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = RunConfig(
                model_path=args.model_path,
                interpretation=args.interp,
                semiring=args.semiring,
                scan=args.scan,
                seed=args.seed,
                samples=args.samples,
            )
            return cmd_run(config)
        lengths = _parse_lengths(args.lengths)
        return cmd_bench_markov(lengths, args.trials, args.seed)
    except FunsorError as exc:
        print(json.dumps({"error": exc.code, "detail": str(exc)}))
        return 1
    except json.JSONDecodeError as exc:
        print(json.dumps({"error": "ParseError", "detail": str(exc)}))
        return 1
    except OSError as exc:
        print(json.dumps({"error": "IOError", "detail": str(exc)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
