"""End-to-end experiment: load, measure, optimize, stress and report.

Each stage failure is raised as :class:`StageError` carrying the stage
name and the process exit code (1 input, 2 solver, 3 I/O).
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import _backend, analytics, firesale, io, optimizer
from .debtrank import market_debtrank
from .errors import DomainError, InputError
from .market import project_overlap

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3
SCENARIOS = ("moderate", "extreme")
DEFAULT_SWEEP = (0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 1.0, 2.0, 5.0, 10.0)
_SOLVER_STAGES = {"build_qcqp", "solve", "apply_solution"}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, exit_code: int):
        self.stage = stage
        self.exit_code = exit_code
        super().__init__(f"[{stage}] {message}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs. Relative paths resolve against ``base_dir``."""

    holdings: Path
    banks: Path
    assets: Path
    returns: Path | None = None
    covariance: Path | None = None
    output_dir: Path = Path("out")
    depth_scale: float = 0.4
    psi: float = 1.0
    rng_seed: int = 0
    scenarios: tuple = SCENARIOS
    skip_optimize: bool = False
    sweep_c: tuple = DEFAULT_SWEEP
    optimizer: optimizer.OptimizerConfig = field(default_factory=optimizer.OptimizerConfig)
    epsilon: float = firesale.DEFAULT_EPSILON
    moderate_cap: float = firesale.MODERATE_CAP
    max_steps: int = 1000
    stop_tol: float = 1e-12

    def __post_init__(self):
        if not (self.depth_scale > 0):
            raise InputError(f"config field 'depth_scale' must be > 0, got {self.depth_scale!r}")
        for s in self.scenarios:
            if s not in SCENARIOS:
                raise InputError(f"config field 'scenarios': unknown scenario {s!r}")
        if not self.skip_optimize:
            for name in ("returns", "covariance"):
                if getattr(self, name) is None:
                    raise InputError(f"config field {name!r} is required unless optimization is skipped")

    @property
    def files(self) -> io.MarketFiles:
        return io.MarketFiles(self.holdings, self.banks, self.assets, self.returns, self.covariance)

    def firesale_config(self, scenario: str) -> firesale.FireSaleConfig:
        kw = dict(epsilon=self.epsilon, max_steps=self.max_steps, stop_tol=self.stop_tol)
        if scenario == "moderate":
            return firesale.FireSaleConfig(leverage_cap_mode="fixed", leverage_cap=self.moderate_cap, **kw)
        return firesale.FireSaleConfig.extreme(**kw)

    @classmethod
    def from_dict(cls, data: dict, base_dir=".", **overrides) -> "RunConfig":
        """Build from parsed JSON; ``overrides`` (CLI flags) win over ``data``."""
        base = Path(base_dir)
        known = {f.name for f in dataclasses.fields(cls)}
        data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InputError(f"unknown config field(s): {', '.join(unknown)}")
        for name in ("holdings", "banks", "assets"):
            if data.get(name) in (None, ""):
                raise InputError(f"config field {name!r} is required")
        kw = dict(data)
        for name in ("holdings", "banks", "assets", "returns", "covariance", "output_dir"):
            if kw.get(name) not in (None, ""):
                p = Path(kw[name])
                kw[name] = p if p.is_absolute() else base / p
            elif name in kw:
                kw[name] = None
        if "optimizer" in kw and isinstance(kw["optimizer"], dict):
            opt_fields = {f.name for f in dataclasses.fields(optimizer.OptimizerConfig)}
            bad = sorted(set(kw["optimizer"]) - opt_fields)
            if bad:
                raise InputError(f"unknown config field(s) in 'optimizer': {', '.join(bad)}")
            try:
                kw["optimizer"] = optimizer.OptimizerConfig(**kw["optimizer"])
            except DomainError as exc:
                raise InputError(f"config field 'optimizer': {exc}") from None
        for name in ("scenarios", "sweep_c"):
            if name in kw:
                kw[name] = tuple(kw[name])
        if "rng_seed" in kw and "optimizer" in kw:
            kw["optimizer"] = dataclasses.replace(kw["optimizer"], rng_seed=int(kw["rng_seed"]))
        elif "rng_seed" in kw:
            kw["optimizer"] = optimizer.OptimizerConfig(rng_seed=int(kw["rng_seed"]))
        try:
            return cls(**kw)
        except TypeError as exc:
            raise InputError(f"invalid config: {exc}") from None

    @classmethod
    def from_json(cls, path, **overrides) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise InputError("config file not found", path) from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
        if not isinstance(data, dict):
            raise InputError("config must be a JSON object", path)
        return cls.from_dict(data, base_dir=path.parent, **overrides)


@dataclass(frozen=True, eq=False)
class NetworkReport:
    debtrank: object
    contagion: dict
    hhi: analytics.ConcentrationReport
    bipartite: analytics.BipartiteStats
    projection: analytics.NetworkStats | None


@dataclass(frozen=True, eq=False)
class PipelineResult:
    exit_code: int
    files: tuple = ()
    original: NetworkReport | None = None
    optimized: NetworkReport | None = None
    solution: optimizer.Solution | None = None
    error: str | None = None


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        if isinstance(exc, OSError):
            raise StageError(self.name, str(exc), EXIT_IO) from exc
        if isinstance(exc, DomainError):
            code = EXIT_SOLVER if self.name in _SOLVER_STAGES else EXIT_INPUT
            raise StageError(self.name, str(exc), code) from exc
        return False


def _network_report(market, config: RunConfig) -> NetworkReport:
    dr = market_debtrank(market, config.psi)
    contagion = {s: firesale.contagion_probability(market, config.firesale_config(s)) for s in config.scenarios}
    overlap = project_overlap(market)
    try:
        proj = analytics.projection_stats(overlap)
    except DomainError:
        proj = None
    return NetworkReport(
        debtrank=dr,
        contagion=contagion,
        hhi=analytics.hhi(market),
        bipartite=analytics.bipartite_stats(market),
        projection=proj,
    )


def execute(config: RunConfig) -> PipelineResult:
    """Run every stage; raises :class:`StageError` on the first failure."""
    with _Stage("load"):
        loaded = io.load_market(config.files, config.depth_scale, require_optimizer_inputs=not config.skip_optimize)
        market = loaded.market
    with _Stage("analyze_original"):
        original = _network_report(market, config)

    solution = None
    opt_market = None
    optimized = None
    if not config.skip_optimize:
        with _Stage("build_qcqp"):
            inst = optimizer.build_qcqp(market, loaded.returns, loaded.covariance)
        with _Stage("solve"):
            solution = optimizer.solve(inst, config.optimizer)
        with _Stage("apply_solution"):
            opt_market = optimizer.apply_solution(market, solution.y, tol=config.optimizer.eq_tol)
        with _Stage("analyze_optimized"):
            optimized = _network_report(opt_market, config)

    with _Stage("sweep"):
        sweep = analytics.sweep_depth_scale(market, config.sweep_c, opt_market, config.psi)
    with _Stage("emit_reports"):
        files = emit_reports(config, market, original, optimized, solution, sweep)
    return PipelineResult(EXIT_OK, files, original, optimized, solution)


def run_pipeline(config: RunConfig) -> PipelineResult:
    """Like :func:`execute` but turns a stage failure into an exit code."""
    try:
        return execute(config)
    except StageError as exc:
        log.error("%s", exc)
        return PipelineResult(exc.exit_code, error=str(exc))


def _reduction(a: float, b: float | None):
    if b is None:
        return None
    return a / b if b > 0 else None


def _summary(config, market, original: NetworkReport, optimized: NetworkReport | None, solution, sweep) -> dict:
    def net(rep: NetworkReport):
        return {
            "bipartite": rep.bipartite.as_dict(),
            "projection": None if rep.projection is None else rep.projection.as_dict(),
        }

    out = {
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "n_banks": market.N,
        "n_assets": market.K,
        "depth_scale": config.depth_scale,
        "psi": config.psi,
        "rng_seed": config.rng_seed,
        "optimized": optimized is not None,
        "debtrank_mean_original": original.debtrank.mean,
        "debtrank_max_original": float(original.debtrank.per_bank.max()),
        "debtrank_mean_optimized": None if optimized is None else optimized.debtrank.mean,
        "debtrank_max_optimized": None if optimized is None else float(optimized.debtrank.per_bank.max()),
        "debtrank_reduction_factor": _reduction(original.debtrank.mean, None if optimized is None else optimized.debtrank.mean),
        "contagion_probability": {
            s: {
                "original": original.contagion[s].probability,
                "optimized": None if optimized is None else optimized.contagion[s].probability,
            }
            for s in config.scenarios
        },
        "hhi_mean_original": original.hhi.mean_hhi,
        "hhi_mean_optimized": None if optimized is None else optimized.hhi.mean_hhi,
        "network_stats": {"original": net(original), "optimized": None if optimized is None else net(optimized)},
        "rank_correlation": None,
        "optimizer": None,
        "sweep_c": {
            "c": sweep.c_values.tolist(),
            "original": sweep.original.tolist(),
            "optimized": None if sweep.optimized is None else sweep.optimized.tolist(),
        },
    }
    if optimized is not None:
        rc = analytics.rank_correlation(original.debtrank.per_bank, optimized.debtrank.per_bank)
        out["rank_correlation"] = {"spearman_rho": rc.spearman_rho, "kendall_tau": rc.kendall_tau}
    if solution is not None:
        out["optimizer"] = {
            "status": solution.status,
            "objective_baseline": solution.baseline_objective,
            "objective_optimized": solution.objective_value,
            "starts_used": solution.starts_used,
            "residuals": solution.feasibility.as_dict(),
        }
    return out


def emit_reports(config, market, original, optimized, solution, sweep) -> tuple:
    d = io.ensure_output_dir(config.output_dir)
    files = []
    ids = market.bank_ids
    share = market.bank_totals / market.bank_totals.sum()
    opt_dr = None if optimized is None else optimized.debtrank.per_bank
    files.append(
        io.write_csv(
            d / "debtrank.csv",
            io.DEBTRANK_COLUMNS,
            (
                (ids[i], float(share[i]), float(original.debtrank.per_bank[i]), None if opt_dr is None else float(opt_dr[i]))
                for i in range(market.N)
            ),
        )
    )
    for name, rep in (("original", original), ("optimized", optimized)):
        if rep is None:
            continue
        for s in config.scenarios:
            rows = []
            for r in rep.contagion[s].results:
                lev = float(r.leverage_path[-1]) if len(r.leverage_path) else float("nan")
                rows.append(
                    (
                        ids[r.initial_defaulter],
                        len(r.induced_defaults),
                        ";".join(ids[j] for j in r.induced_defaults),
                        float(r.final_market_fraction),
                        float(r.equity_destroyed),
                        r.steps,
                        lev,
                    )
                )
            files.append(io.write_csv(d / f"firesale_{s}_{name}.csv", io.FIRESALE_COLUMNS, rows))
    files.append(
        io.write_csv(
            d / "sweep_c.csv",
            io.SWEEP_COLUMNS,
            (
                (float(c), float(a), None if sweep.optimized is None else float(sweep.optimized[j]))
                for j, (c, a) in enumerate(zip(sweep.c_values, sweep.original))
            ),
        )
    )
    summary = _summary(config, market, original, optimized, solution, sweep)
    summary["backend"] = _backend.NAME
    files.append(io.write_json(d / "summary.json", summary))
    return tuple(files)


def strip_timestamp(summary: dict) -> dict:
    """Summary without the fields that legitimately differ between identical runs."""
    return {k: v for k, v in summary.items() if k != "generated_at"}


def reports_equal(dir_a, dir_b) -> bool:
    """Compare two output directories, ignoring the summary timestamp."""
    a, b = Path(dir_a), Path(dir_b)
    names = sorted(p.name for p in a.iterdir())
    if names != sorted(p.name for p in b.iterdir()):
        return False
    for n in names:
        if n == "summary.json":
            ja = json.loads((a / n).read_text())
            jb = json.loads((b / n).read_text())
            if strip_timestamp(ja) != strip_timestamp(jb):
                return False
        elif (a / n).read_bytes() != (b / n).read_bytes():
            return False
    return True
