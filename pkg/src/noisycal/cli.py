"""Command-line interface and experiment orchestration.

Three subcommands:

* ``synth-experiment --config c.json`` runs the full synthetic pipeline
  (generate, contaminate, train, score, calibrate, evaluate) for one or
  more calibration methods over repeated seeds and writes results/summary
  CSVs;
* ``calibrate --scores s.csv --transition t.csv`` calibrates a threshold
  from user-supplied probability or score rows;
* ``correction --model rr --eps 0.1 --k 4 --n 5000`` prints a correction
  report as JSON.

Exit codes: 0 on success, 2 for validation problems (bad flags, bad config,
malformed files, invalid model parameters), 1 for internal failures.

Repetition r of an experiment uses seed ``config.seed + r``; everything a
repetition consumes (data, label noise, score randomization, Monte-Carlo
draws) is derived from that one integer, so results are reproducible and
independent of NOISYCAL_THREADS, the only environment variable read here.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import fileio
from .calibrate import (
    ThresholdResult,
    adaptive_threshold,
    evaluate,
    optimistic_threshold,
    prediction_sets,
    standard_threshold,
)
from .correction import (
    CorrectionMethod,
    CorrectionReport,
    c_of_n,
    cn_envelope,
    delta_asy,
    delta_fs,
    delta_fs_special,
)
from .empirical import CalibrationSet
from .errors import (
    CholeskyFailure,
    FileFormatError,
    InvalidSpec,
    NoisycalError,
    SolverFailure,
)
from .noise_model import (
    ContaminationSpec,
    Family,
    TransitionMatrix,
    build_transition,
    sample_noisy_labels,
)
from .scores import ScoreMatrix, aps_scores
from .synth import SynthConfig, generate, predict_probs, train_softmax

__all__ = [
    "METHODS",
    "ExperimentConfig",
    "read_experiment_config",
    "run_synthetic",
    "run_from_scores",
    "correction_report",
    "main",
]

METHODS = (
    "standard",
    "adaptive-fs",
    "adaptive-fs-simplified",
    "adaptive-asy",
    "adaptive-plus",
)

_DELTA_NAMES = {
    "standard": "none",
    "adaptive-fs": "fs",
    "adaptive-fs-simplified": "fs-simplified",
    "adaptive-asy": "asy",
    "adaptive-plus": "asy",
}

_PARAMETRIC = tuple(f.value for f in Family if f is not Family.CUSTOM)


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat description of one synthetic experiment (JSON-serializable)."""

    k: int
    d: int
    n_train: int
    n_cal: int
    n_test: int
    clusters_per_class: int = 2
    cube_side: float = 2.0
    imbalance_mu: float = 0.0
    family: str = "rr"
    eps: float = 0.0
    nu: float = 0.0
    b: int | None = None
    alpha: float = 0.1
    methods: tuple[str, ...] = ("standard",)
    repetitions: int = 1
    seed: int = 0
    out: str | None = None
    randomized_scores: bool = True
    analytic_cn: bool = False
    cn_m: int = 100_000
    asy_m: int = 100_000
    asy_order: int = 1

    def __post_init__(self) -> None:
        methods = tuple(self.methods)
        object.__setattr__(self, "methods", methods)
        if not methods:
            raise InvalidSpec("methods must be nonempty")
        unknown = [m for m in methods if m not in METHODS]
        if unknown:
            raise InvalidSpec(f"unknown methods {unknown}; valid: {list(METHODS)}")
        if self.repetitions < 1:
            raise InvalidSpec("repetitions must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidSpec(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.family not in _PARAMETRIC:
            raise InvalidSpec(
                f"family must be one of {list(_PARAMETRIC)}, got {self.family!r}"
            )
        for name in ("cn_m", "asy_m"):
            if getattr(self, name) < 1000:
                raise InvalidSpec(f"{name} must be >= 1000")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise InvalidSpec(f"unknown config keys {unknown}")
        if "methods" in raw:
            raw = dict(raw, methods=tuple(raw["methods"]))
        try:
            return cls(**raw)
        except TypeError as exc:
            raise InvalidSpec(f"bad experiment config: {exc}") from exc

    def contamination(self) -> ContaminationSpec:
        return ContaminationSpec(
            family=Family(self.family), k=self.k, eps=self.eps, nu=self.nu, b=self.b
        )

    def synth(self, seed: int) -> SynthConfig:
        return SynthConfig(
            k=self.k,
            d=self.d,
            n_train=self.n_train,
            n_cal=self.n_cal,
            n_test=self.n_test,
            clusters_per_class=self.clusters_per_class,
            cube_side=self.cube_side,
            imbalance_mu=self.imbalance_mu,
            seed=seed,
        )


def read_experiment_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise FileFormatError(f"{path} must hold a single JSON object")
    return ExperimentConfig.from_dict(raw)


def _thread_count() -> int:
    raw = os.environ.get("NOISYCAL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise InvalidSpec(f"NOISYCAL_THREADS must be an integer, got {raw!r}") from exc


def _cn_value(n: int, analytic: bool, m: int) -> float:
    if analytic:
        return cn_envelope(n)
    return c_of_n(n, m, seed=0).value


def _threshold_for_method(
    method: str,
    cal: CalibrationSet,
    tm: TransitionMatrix,
    spec: ContaminationSpec | None,
    alpha: float,
    *,
    analytic_cn: bool,
    cn_m: int,
    asy_m: int,
    asy_order: int,
    asy_seed: int,
    asy_report: CorrectionReport | None = None,
) -> tuple[ThresholdResult, CorrectionReport | None]:
    """Calibrate one method; returns the result plus the (reusable) asymptotic report."""
    if method == "standard":
        return standard_threshold(cal, alpha), asy_report
    if method == "adaptive-fs":
        report = delta_fs(cal.n, cal.k, tm, _cn_value(cal.n, analytic_cn, cn_m))
        return adaptive_threshold(cal, tm, alpha, report), asy_report
    if method == "adaptive-fs-simplified":
        if spec is None:
            raise InvalidSpec(
                "the simplified correction needs a parametric contamination model"
            )
        report = delta_fs_special(spec, cal.n, _cn_value(cal.n, analytic_cn, cn_m))
        return adaptive_threshold(cal, tm, alpha, report), asy_report
    if method in ("adaptive-asy", "adaptive-plus"):
        if asy_report is None:
            asy_report = delta_asy(cal, tm, m=asy_m, seed=asy_seed, order=asy_order)
        if method == "adaptive-asy":
            return adaptive_threshold(cal, tm, alpha, asy_report), asy_report
        return optimistic_threshold(cal, tm, alpha, asy_report), asy_report
    raise InvalidSpec(f"unknown method {method!r}; valid: {list(METHODS)}")


def _run_rep(
    config: ExperimentConfig,
    spec: ContaminationSpec,
    tm: TransitionMatrix,
    rep: int,
) -> list[dict]:
    try:
        return _run_rep_inner(config, spec, tm, rep)
    except NoisycalError as exc:
        exc.repetition = rep
        raise


def _run_rep_inner(
    config: ExperimentConfig,
    spec: ContaminationSpec,
    tm: TransitionMatrix,
    rep: int,
) -> list[dict]:
    rep_seed = config.seed + rep
    sub = np.random.SeedSequence(rep_seed).generate_state(4)
    x, y = generate(config.synth(rep_seed))
    noisy = sample_noisy_labels(y, tm, seed=int(sub[0]))
    train = slice(0, config.n_train)
    calib = slice(config.n_train, config.n_train + config.n_cal)
    test = slice(config.n_train + config.n_cal, None)

    model = train_softmax(x[train], noisy[train], n_classes=config.k)
    sm_cal = aps_scores(
        predict_probs(model, x[calib]),
        randomized=config.randomized_scores,
        seed=int(sub[1]),
    )
    sm_test = aps_scores(
        predict_probs(model, x[test]),
        randomized=config.randomized_scores,
        seed=int(sub[2]),
    )
    cal = CalibrationSet.from_scores(sm_cal, noisy[calib])

    rows = []
    asy_report = None
    for method in config.methods:
        thr, asy_report = _threshold_for_method(
            method,
            cal,
            tm,
            spec,
            config.alpha,
            analytic_cn=config.analytic_cn,
            cn_m=config.cn_m,
            asy_m=config.asy_m,
            asy_order=config.asy_order,
            asy_seed=int(sub[3]),
            asy_report=asy_report,
        )
        metrics = evaluate(prediction_sets(sm_test, thr.tau), y[test])
        rows.append(
            {
                "method": method,
                "n": config.n_cal,
                "K": config.k,
                "alpha": config.alpha,
                "delta_method": _DELTA_NAMES[method],
                "delta_value": 0.0 if thr.correction is None else thr.correction.value,
                "tau_hat": thr.tau,
                "coverage": metrics["coverage"],
                "avg_size": metrics["avg_size"],
                "seed": rep_seed,
            }
        )
    return rows


def _summarize(config: ExperimentConfig, rows: list[dict]) -> list[dict]:
    summary = []
    for method in config.methods:
        cov = np.array([r["coverage"] for r in rows if r["method"] == method])
        size = np.array([r["avg_size"] for r in rows if r["method"] == method])
        reps = cov.size
        se = (
            (float(np.std(cov, ddof=1)) / math.sqrt(reps), float(np.std(size, ddof=1)) / math.sqrt(reps))
            if reps > 1
            else (0.0, 0.0)
        )
        summary.append(
            {
                "method": method,
                "repetitions": reps,
                "mean_coverage": float(np.mean(cov)),
                "se_coverage": se[0],
                "mean_size": float(np.mean(size)),
                "se_size": se[1],
            }
        )
    return summary


def run_synthetic(config: ExperimentConfig) -> dict:
    """Run the synthetic experiment; returns {"rows": [...], "summary": [...]}."""
    spec = config.contamination()
    tm = build_transition(spec)
    if not config.analytic_cn and any(
        m in ("adaptive-fs", "adaptive-fs-simplified") for m in config.methods
    ):
        # warm the memoized c(n) before threads race on it
        _cn_value(config.n_cal, False, config.cn_m)
    threads = _thread_count()
    reps = range(config.repetitions)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_rep = list(pool.map(lambda r: _run_rep(config, spec, tm, r), reps))
    else:
        per_rep = [_run_rep(config, spec, tm, r) for r in reps]
    rows = [row for rep_rows in per_rep for row in rep_rows]
    summary = _summarize(config, rows)
    if config.out is not None:
        os.makedirs(config.out, exist_ok=True)
        fileio.write_results_csv(os.path.join(config.out, "results.csv"), rows)
        fileio.write_summary_csv(os.path.join(config.out, "summary.csv"), summary)
    return {"rows": rows, "summary": summary}


def _read_values(path: str):
    """Read a probability (p_*) or score (s_*) CSV, detecting which by header."""
    try:
        with open(path, newline="") as handle:
            first = handle.readline()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    head = first.split(",")[0].strip() if first else ""
    if head == "p_1":
        kind = "p"
    elif head == "s_1":
        kind = "s"
    else:
        raise FileFormatError("header must start with p_1 or s_1", line=1)
    values, y_noisy, y_true = fileio.read_probability_csv(path, prefix=kind)
    return kind, values, y_noisy, y_true


def _as_score_matrix(
    kind: str, values: np.ndarray, randomized: bool, seed: int
) -> ScoreMatrix:
    if kind == "p":
        return aps_scores(values, randomized=randomized, seed=seed)
    return ScoreMatrix(scores=values, randomized=False, seed=0)


def run_from_scores(
    scores_path: str,
    transition_path: str | None = None,
    model: str | None = None,
    eps: float = 0.0,
    nu: float = 0.0,
    b: int | None = None,
    alpha: float = 0.1,
    method: str = "adaptive-asy",
    out: str | None = None,
    test_path: str | None = None,
    randomized: bool = False,
    seed: int = 0,
    analytic_cn: bool = False,
    cn_m: int = 100_000,
    asy_m: int = 100_000,
    asy_order: int = 1,
) -> dict:
    """Calibrate a threshold from a file of probability or score rows.

    The calibration file must carry ``y_noisy``.  Prediction sets are
    produced for the test file when given, otherwise for the calibration
    rows themselves; coverage is reported whenever the evaluated rows carry
    ``y_true``.
    """
    if method not in METHODS:
        raise InvalidSpec(f"unknown method {method!r}; valid: {list(METHODS)}")
    kind, values, y_noisy, y_true_cal = _read_values(scores_path)
    if y_noisy is None:
        raise FileFormatError(f"{scores_path} needs a y_noisy column for calibration")
    seeds = np.random.SeedSequence(seed).generate_state(3)
    sm_cal = _as_score_matrix(kind, values, randomized, int(seeds[0]))
    k = sm_cal.k

    spec = None
    if model is not None:
        spec = ContaminationSpec(family=Family(model), k=k, eps=eps, nu=nu, b=b)
    if transition_path is not None:
        tm = fileio.read_transition_csv(transition_path)
        if tm.k != k:
            raise InvalidSpec(
                f"transition matrix is {tm.k} x {tm.k} but rows have {k} classes"
            )
    elif spec is not None:
        tm = build_transition(spec)
    else:
        raise InvalidSpec("provide either a transition CSV or a contamination model")

    cal = CalibrationSet.from_scores(sm_cal, y_noisy)
    thr, _ = _threshold_for_method(
        method,
        cal,
        tm,
        spec,
        alpha,
        analytic_cn=analytic_cn,
        cn_m=cn_m,
        asy_m=asy_m,
        asy_order=asy_order,
        asy_seed=int(seeds[1]),
    )

    if test_path is not None:
        kind2, values2, _, y_true_eval = _read_values(test_path)
        sm_eval = _as_score_matrix(kind2, values2, randomized, int(seeds[2]))
        if sm_eval.k != k:
            raise InvalidSpec(
                f"test rows have {sm_eval.k} classes, calibration rows {k}"
            )
    else:
        sm_eval = sm_cal
        y_true_eval = y_true_cal
    sets = prediction_sets(sm_eval, thr.tau)
    metrics = evaluate(sets, y_true_eval) if y_true_eval is not None else None

    if out is not None:
        os.makedirs(out, exist_ok=True)
        fileio.write_threshold_json(os.path.join(out, "threshold.json"), thr)
        fileio.write_prediction_sets_csv(
            os.path.join(out, "prediction_sets.csv"), sets
        )
        if metrics is not None:
            fileio.write_results_csv(
                os.path.join(out, "results.csv"),
                [
                    {
                        "method": method,
                        "n": cal.n,
                        "K": k,
                        "alpha": alpha,
                        "delta_method": _DELTA_NAMES[method],
                        "delta_value": 0.0
                        if thr.correction is None
                        else thr.correction.value,
                        "tau_hat": thr.tau,
                        "coverage": metrics["coverage"],
                        "avg_size": metrics["avg_size"],
                        "seed": seed,
                    }
                ],
            )
    return {"threshold": thr, "sets": sets, "metrics": metrics}


def correction_report(
    spec: ContaminationSpec,
    n: int,
    variant: str = "fs",
    analytic_cn: bool = False,
    cn_m: int = 100_000,
    cn_seed: int = 0,
) -> CorrectionReport:
    """Correction value for a parametric model at calibration size n."""
    if n < 1:
        raise InvalidSpec("n must be >= 1")
    tm = build_transition(spec)
    c_n = cn_envelope(n) if analytic_cn else c_of_n(n, cn_m, cn_seed).value
    if variant == "cn":
        report = CorrectionReport(method=CorrectionMethod.CN_ONLY, value=float(c_n))
    elif variant == "fs":
        report = delta_fs(n, spec.k, tm, c_n)
    elif variant == "simplified":
        report = delta_fs_special(spec, n, c_n)
    else:
        raise InvalidSpec(f"unknown correction variant {variant!r}")
    return dataclasses.replace(report, condition_number=tm.condition_number)


def _cmd_synth(args: argparse.Namespace) -> int:
    config = read_experiment_config(args.config)
    result = run_synthetic(config)
    for row in result["summary"]:
        print(
            f"{row['method']}: coverage {row['mean_coverage']:.4f} "
            f"(se {row['se_coverage']:.4f}), size {row['mean_size']:.3f} "
            f"(se {row['se_size']:.3f}) over {row['repetitions']} reps"
        )
    if config.out is not None:
        print(f"wrote {os.path.join(config.out, 'results.csv')}")
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    result = run_from_scores(
        args.scores,
        transition_path=args.transition,
        model=args.model,
        eps=args.eps,
        nu=args.nu,
        b=args.b,
        alpha=args.alpha,
        method=args.method,
        out=args.out,
        test_path=args.test,
        randomized=args.randomized,
        seed=args.seed,
        analytic_cn=args.analytic_cn,
        cn_m=args.cn_m,
        asy_m=args.asy_m,
        asy_order=args.asy_order,
    )
    thr = result["threshold"]
    print(f"tau_hat = {thr.tau!r} ({args.method})")
    if thr.set_I_empty:
        print("index set empty; fell back to tau = 1")
    if thr.warning is not None:
        print(f"warning: {thr.warning}")
    if result["metrics"] is not None:
        print(
            f"coverage {result['metrics']['coverage']:.4f}, "
            f"avg size {result['metrics']['avg_size']:.3f}"
        )
    if args.out is not None:
        print(f"wrote {os.path.join(args.out, 'prediction_sets.csv')}")
    return 0


def _cmd_correction(args: argparse.Namespace) -> int:
    spec = ContaminationSpec(
        family=Family(args.model), k=args.k, eps=args.eps, nu=args.nu, b=args.b
    )
    report = correction_report(
        spec,
        args.n,
        variant=args.variant,
        analytic_cn=args.analytic_cn,
        cn_m=args.cn_m,
        cn_seed=args.seed,
    )
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _add_model_flags(parser: argparse.ArgumentParser, required: bool) -> None:
    parser.add_argument(
        "--model",
        choices=_PARAMETRIC,
        required=required,
        help="parametric contamination family",
    )
    parser.add_argument("--eps", type=float, default=0.0, help="noise strength")
    parser.add_argument("--nu", type=float, default=0.0, help="two-level deviation")
    parser.add_argument("--b", type=int, default=None, help="number of blocks")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisycal",
        description="prediction sets with label-noise-adaptive conformal calibration",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sx = sub.add_parser(
        "synth-experiment", help="run the synthetic end-to-end experiment"
    )
    sx.add_argument("--config", required=True, help="experiment config JSON")
    sx.set_defaults(func=_cmd_synth)

    cal = sub.add_parser(
        "calibrate", help="calibrate a threshold from probability or score rows"
    )
    cal.add_argument("--scores", required=True, help="calibration CSV (needs y_noisy)")
    cal.add_argument("--transition", help="transition matrix CSV (K x K, no header)")
    _add_model_flags(cal, required=False)
    cal.add_argument("--alpha", type=float, default=0.1)
    cal.add_argument("--method", choices=METHODS, default="adaptive-asy")
    cal.add_argument("--test", help="rows to form prediction sets for")
    cal.add_argument("--out", help="output directory")
    cal.add_argument(
        "--randomized", action="store_true", help="randomize scores built from p_* rows"
    )
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--analytic-cn", action="store_true", dest="analytic_cn")
    cal.add_argument("--cn-m", type=int, default=100_000, dest="cn_m")
    cal.add_argument("--asy-m", type=int, default=100_000, dest="asy_m")
    cal.add_argument("--asy-order", type=int, default=1, dest="asy_order")
    cal.set_defaults(func=_cmd_calibrate)

    cor = sub.add_parser("correction", help="print a correction report as JSON")
    _add_model_flags(cor, required=True)
    cor.add_argument("--k", type=int, required=True, help="number of classes")
    cor.add_argument("--n", type=int, required=True, help="calibration size")
    cor.add_argument(
        "--variant", choices=("fs", "simplified", "cn"), default="fs"
    )
    cor.add_argument("--analytic-cn", action="store_true", dest="analytic_cn")
    cor.add_argument("--cn-m", type=int, default=100_000, dest="cn_m")
    cor.add_argument("--seed", type=int, default=0)
    cor.set_defaults(func=_cmd_correction)
    return parser


def _with_rep(exc: NoisycalError) -> str:
    rep = getattr(exc, "repetition", None)
    return str(exc) if rep is None else f"repetition {rep}: {exc}"


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except (SolverFailure, CholeskyFailure) as exc:
        print(f"error: {_with_rep(exc)}", file=sys.stderr)
        return 1
    except NoisycalError as exc:
        print(f"error: {_with_rep(exc)}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
