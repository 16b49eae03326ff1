"""Command-line benchmark runner.

Usage::

    auqadmm run experiment.ini [--threads K] [--out DIR] [--timing]
    auqadmm rank-sweep experiment.ini --ranks 1,5,10 [--threads K] [--out DIR]

Experiments are INI files read with :mod:`configparser`::

    [experiment]
    loss = multinomial          ; elasticnet | multinomial | svm | denoise-demo
    workers = 8
    per_worker = 100
    schemes = cadmm, rb, ac, auq
    rank = 5
    interval = 0.1, 1.0
    max_iter = 250
    seed = 0
    out = results               ; relative to the config file

    [data]
    source = synth              ; synth | mnist
    dim = 64
    classes = 8
    per_class = 100
    noise = 0.1

Exit status: 0 on success, 1 on configuration or input errors, 2 when a
solver aborts.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import (
    ConfigError,
    IDXFormatError,
    demo_image,
    denoise_first_iterate,
    load_idx,
    make_problem,
    partition_by_class,
    quadrant_denoise,
    synth_blobs,
)
from .problem import ConsensusProblem
from .solver import SCHEMES, ConsensusADMM, SolverAbort, SolverConfig, write_trace

LOSSES = ("elasticnet", "multinomial", "svm", "denoise-demo")
SUMMARY_HEADER = ["scheme", "rank", "final_loss", "iterations", "converged", "wall_ms"]
EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2


@dataclass
class ExperimentConfig:
    loss: str
    schemes: List[str]
    workers: int = 8
    per_worker: int = 100
    rank: int = 5
    interval: Tuple[float, float] = (0.1, 1.0)
    eps_abs: float = 1e-4
    eps_rel: float = 1e-5
    max_iter: int = 250
    rho0: float = 1.0
    seed: int = 0
    threads: int = 0
    out: Path = Path("results")
    data: Dict[str, str] = field(default_factory=dict)
    loss_params: Dict[str, float] = field(default_factory=dict)
    source: str = "<string>"

    def solver_config(self, scheme: str, rank: Optional[int] = None,
                      timing: bool = False) -> SolverConfig:
        return SolverConfig(scheme=scheme, rank=self.rank if rank is None else rank,
                            interval=self.interval, eps_abs=self.eps_abs,
                            eps_rel=self.eps_rel, max_iter=self.max_iter, rho0=self.rho0,
                            seed=self.seed, threads=self.threads, timing=timing)


# --- parsing ------------------------------------------------------------------


class _Locator:
    """Maps ``(section, key)`` to the line it was defined on."""

    def __init__(self, text: str, source: str):
        self.source = source
        self.lines: Dict[Tuple[str, str], int] = {}
        self.sections: Dict[str, int] = {}
        section = None
        for no, line in enumerate(text.splitlines(), 1):
            s = line.strip()
            m = re.match(r"\[([^\]]+)\]", s)
            if m:
                section = m.group(1).strip()
                self.sections.setdefault(section, no)
                continue
            m = re.match(r"([^=:;#\s][^=:]*?)\s*[=:]", s)
            if m and section is not None:
                self.lines.setdefault((section, m.group(1).strip().lower()), no)

    def where(self, section: str, key: Optional[str] = None) -> str:
        no = self.lines.get((section, key)) if key else None
        if no is None:
            no = self.sections.get(section)
        loc = f"{self.source}:{no}" if no else self.source
        return f"{loc}: [{section}]" + (f" {key}" if key else "")


def _get(cp, loc: _Locator, section: str, key: str, conv, default=None, required=False):
    if not cp.has_option(section, key):
        if required:
            raise ConfigError(f"{loc.where(section)}: missing required field {key!r}")
        return default
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{loc.where(section, key)}: invalid value {raw!r} ({exc})") from None


def _int(s):
    return int(s)


def _pair(s):
    parts = [float(p) for p in re.split(r"[,\s]+", s.strip("[]() ")) if p]
    if len(parts) != 2:
        raise ValueError("expected two numbers 'a, b'")
    return parts[0], parts[1]


def _names(s):
    return [p.strip().lower() for p in s.split(",") if p.strip()]


def parse_config(text: str, source: str = "<string>", base: Optional[Path] = None
                 ) -> ExperimentConfig:
    """Parse experiment INI text; errors carry ``file:line: [section] field``."""
    loc = _Locator(text, source)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None
    if not cp.has_section("experiment"):
        raise ConfigError(f"{source}: missing [experiment] section")
    sec = "experiment"
    known = {"loss", "schemes", "workers", "per_worker", "rank", "interval", "eps_abs",
             "eps_rel", "max_iter", "rho0", "seed", "threads", "out"}
    for key in cp.options(sec):
        if key not in known:
            raise ConfigError(f"{loc.where(sec, key)}: unknown field")

    loss = _get(cp, loc, sec, "loss", str.lower, required=True)
    if loss not in LOSSES:
        raise ConfigError(f"{loc.where(sec, 'loss')}: unknown loss {loss!r}, "
                          f"expected one of {', '.join(LOSSES)}")
    schemes = _get(cp, loc, sec, "schemes", _names, default=["auq"])
    if loss != "denoise-demo":
        if not schemes:
            raise ConfigError(f"{loc.where(sec, 'schemes')}: at least one scheme is required")
        bad = [s for s in schemes if s not in SCHEMES]
        if bad:
            raise ConfigError(f"{loc.where(sec, 'schemes')}: unknown scheme(s) "
                              f"{', '.join(bad)}; expected a subset of {', '.join(SCHEMES)}")
    base = base if base is not None else Path.cwd()
    cfg = ExperimentConfig(
        loss=loss,
        schemes=list(dict.fromkeys(schemes)),
        workers=_get(cp, loc, sec, "workers", _int, 8),
        per_worker=_get(cp, loc, sec, "per_worker", _int, 100),
        rank=_get(cp, loc, sec, "rank", _int, 5),
        interval=_get(cp, loc, sec, "interval", _pair, (0.1, 1.0)),
        eps_abs=_get(cp, loc, sec, "eps_abs", float, 1e-4),
        eps_rel=_get(cp, loc, sec, "eps_rel", float, 1e-5),
        max_iter=_get(cp, loc, sec, "max_iter", _int, 250),
        rho0=_get(cp, loc, sec, "rho0", float, 1.0),
        seed=_get(cp, loc, sec, "seed", _int, 0),
        threads=_get(cp, loc, sec, "threads", _int, 0),
        out=base / _get(cp, loc, sec, "out", str, "results"),
        data=dict(cp.items("data")) if cp.has_section("data") else {},
        loss_params={k: _get(cp, loc, "loss", k, float) for k in cp.options("loss")}
        if cp.has_section("loss") else {},
        source=source,
    )
    checks = [
        ("workers", cfg.workers >= 1, "must be >= 1"),
        ("per_worker", cfg.per_worker >= 1, "must be >= 1"),
        ("rank", cfg.rank >= 1, "must be >= 1"),
        ("interval", 0 < cfg.interval[0] <= cfg.interval[1], "needs 0 < a1 <= b1"),
        ("eps_abs", cfg.eps_abs > 0, "must be positive"),
        ("eps_rel", cfg.eps_rel > 0, "must be positive"),
        ("max_iter", cfg.max_iter >= 1, "must be >= 1"),
        ("rho0", cfg.rho0 > 0, "must be positive"),
        ("threads", cfg.threads >= 0, "must be >= 0"),
    ]
    for key, ok, why in checks:
        if not ok:
            raise ConfigError(f"{loc.where(sec, key)}: {why}")
    for key in cfg.loss_params:
        if key not in ("rho1", "rho2", "tikhonov", "svm_eps", "alpha"):
            raise ConfigError(f"{loc.where('loss', key)}: unknown field")
    cfg._loc = loc
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    return parse_config(path.read_text(), str(path), base=path.parent)


# --- problem construction -----------------------------------------------------


def _data_value(cfg: ExperimentConfig, key: str, conv, default=None):
    loc = getattr(cfg, "_loc", None) or _Locator("", cfg.source)
    if key not in cfg.data:
        if default is None:
            raise ConfigError(f"{loc.where('data')}: missing required field {key!r}")
        return default
    try:
        return conv(cfg.data[key])
    except ValueError as exc:
        raise ConfigError(f"{loc.where('data', key)}: invalid value "
                          f"{cfg.data[key]!r} ({exc})") from None


def build_problem(cfg: ExperimentConfig, workers: Optional[int] = None) -> ConsensusProblem:
    """Dataset -> class shards -> consensus problem, as described by ``cfg``."""
    N = cfg.workers if workers is None else workers
    source = cfg.data.get("source", "synth").strip().lower()
    if source == "synth":
        d = synth_blobs(_data_value(cfg, "dim", int, 64),
                        _data_value(cfg, "classes", int, 8),
                        _data_value(cfg, "per_class", int, cfg.per_worker),
                        _data_value(cfg, "noise", float, 0.1),
                        seed=_data_value(cfg, "seed", int, cfg.seed))
    elif source == "mnist":
        base = Path(cfg.source).parent if cfg.source != "<string>" else Path.cwd()
        images = base / _data_value(cfg, "images", str)
        labels = base / _data_value(cfg, "labels", str)
        for p in (images, labels):
            if not p.is_file():
                raise ConfigError(f"[data]: file not found: {p}")
        d = load_idx(images, labels)
        classes = _data_value(cfg, "classes", int, d.class_count)
        if classes < d.class_count:
            d = d.select_classes(classes)
    else:
        raise ConfigError(f"[data] source: unknown source {source!r}, expected synth or mnist")
    shards = partition_by_class(d, N, cfg.per_worker)
    return make_problem(cfg.loss, shards, **{k: v for k, v in cfg.loss_params.items()
                                             if k in ("rho1", "rho2", "tikhonov", "svm_eps")})


# --- experiments -----------------------------------------------------------------


@dataclass
class RunResult:
    scheme: str
    rank: int
    final_loss: float
    iterations: int
    converged: bool
    wall_ms: float
    trace: list

    def row(self) -> List[str]:
        return [self.scheme, str(self.rank), repr(float(self.final_loss)),
                str(self.iterations), str(int(self.converged)), repr(float(self.wall_ms))]


def _solve(problem, scfg: SolverConfig) -> RunResult:
    t0 = time.perf_counter()
    solver = ConsensusADMM(problem, scfg)
    solver.solve()
    wall = (time.perf_counter() - t0) * 1e3 if scfg.timing else 0.0
    last = solver.trace[-1]
    return RunResult(scfg.scheme, scfg.rank, last.loss, last.k, solver.converged, wall,
                     solver.trace)


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_experiment(cfg: ExperimentConfig, timing: bool = False) -> List[RunResult]:
    """Run every configured scheme; writes ``<loss>_<scheme>.csv`` and ``summary.csv``."""
    if cfg.loss == "denoise-demo":
        run_denoise_demo(cfg)
        return []
    problem = build_problem(cfg)
    if cfg.rank > problem.n:
        raise ConfigError(f"rank {cfg.rank} exceeds problem dimension {problem.n}")
    cfg.out.mkdir(parents=True, exist_ok=True)
    results = []
    for scheme in cfg.schemes:
        res = _solve(problem, cfg.solver_config(scheme, timing=timing))
        write_trace(cfg.out / f"{cfg.loss}_{scheme}.csv", res.trace)
        results.append(res)
    _write_rows(cfg.out / "summary.csv", SUMMARY_HEADER, [r.row() for r in results])
    return results


def rank_sweep(cfg: ExperimentConfig, ranks: Sequence[int], timing: bool = False
               ) -> List[RunResult]:
    """AUQ at each rank; traces ``<loss>_auq_r<rank>.csv``, ``summary.csv`` and
    ``rank_pairs.csv`` with pairwise final-loss relative differences."""
    if not ranks:
        raise ConfigError("rank-sweep needs at least one rank")
    problem = build_problem(cfg)
    bad = [r for r in ranks if not 1 <= r <= problem.n]
    if bad:
        raise ConfigError(f"ranks {bad} outside [1, {problem.n}]")
    cfg.out.mkdir(parents=True, exist_ok=True)
    results = []
    for r in ranks:
        res = _solve(problem, cfg.solver_config("auq", rank=r, timing=timing))
        write_trace(cfg.out / f"{cfg.loss}_auq_r{r}.csv", res.trace)
        results.append(res)
    _write_rows(cfg.out / "summary.csv", SUMMARY_HEADER, [r.row() for r in results])
    pairs = []
    for i, a in enumerate(results):
        for b in results[i + 1:]:
            rel = abs(a.final_loss - b.final_loss) / max(abs(a.final_loss), abs(b.final_loss),
                                                         np.finfo(float).tiny)
            pairs.append([str(a.rank), str(b.rank), repr(float(rel))])
    _write_rows(cfg.out / "rank_pairs.csv", ["rank_a", "rank_b", "rel_diff"], pairs)
    return results


def run_denoise_demo(cfg: ExperimentConfig) -> dict:
    """Quadrant demo: one flat CSV with truth, noisy data, weights and both averages."""
    size = _data_value(cfg, "size", int, 32)
    noise = _data_value(cfg, "noise", float, 0.1)
    alpha = cfg.loss_params.get("alpha", 1e-3)
    inst, problem = quadrant_denoise(demo_image(size, seed=cfg.seed), noise=noise,
                                     seed=cfg.seed, alpha=alpha)
    out = denoise_first_iterate(inst, problem, rank=cfg.rank, interval=cfg.interval,
                                seed=cfg.seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    rows_, cols_ = inst.shape
    header = ["pixel", "row", "col", "truth", "noisy"] \
        + [f"w{j + 1}" for j in range(len(out["weights"]))] + ["v_unweighted", "v_weighted"]
    rows = []
    for p in range(inst.ground_truth.size):
        vals = [inst.ground_truth[p], inst.noisy[p]] + [w[p] for w in out["weights"]] \
            + [out["v_unweighted"][p], out["v_weighted"][p]]
        rows.append([str(p), str(p // cols_), str(p % cols_)] + [repr(float(x)) for x in vals])
    _write_rows(cfg.out / "denoise-demo_first_iterate.csv", header, rows)
    mse = {k: float(np.mean((out[k] - inst.ground_truth) ** 2))
           for k in ("v_unweighted", "v_weighted")}
    _write_rows(cfg.out / "summary.csv", ["variant", "mse"],
                [[k, repr(v)] for k, v in mse.items()])
    out["mse"] = mse
    return out


# --- entry point ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _ranks(s: str) -> List[int]:
    try:
        return [int(p) for p in s.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="auqadmm", description="Consensus ADMM benchmark runner")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("run", "rank-sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("config", help="experiment INI file")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (0 = single-threaded)")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--timing", action="store_true",
                        help="record wall-clock times (makes outputs non-reproducible)")
        if name == "rank-sweep":
            sp.add_argument("--ranks", type=_ranks, required=True, help="e.g. 1,5,10")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.threads is not None:
            if args.threads < 0:
                raise ConfigError("--threads must be >= 0")
            cfg.threads = args.threads
        if args.out is not None:
            cfg.out = Path(args.out)
        if args.command == "run":
            results = run_experiment(cfg, timing=args.timing)
        else:
            results = rank_sweep(cfg, args.ranks, timing=args.timing)
    except SolverAbort as exc:
        print(f"solver abort: {exc} (after {len(exc.trace)} iterations)", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, IDXFormatError, ValueError) as exc:
        # ValueError covers argument checks in the data and problem builders
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for r in results:
        print(f"{r.scheme:6s} rank={r.rank:<3d} loss={r.final_loss:.10g} "
              f"iters={r.iterations} converged={r.converged}")
    print(f"wrote {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
