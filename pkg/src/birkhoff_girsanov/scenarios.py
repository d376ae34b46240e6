"""Named experiments: configuration, execution and artifact files."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as rngmod
from .banach import Space
from .conditioning import PreconditionError
from .girsanov import (PipelineReport, Stage, conditional_example, prop41_verify,
                       scalar_girsanov, simulate_bm, simulate_product, uniform_grid)
from .ito import DriftedProcess, StochasticIntegrand, bi1star_convergence, change_drift
from .oracles import (bi_oracle_suite, certificate_suite, conditioning_suite, duality_suite,
                      substitution_suite)

SCENARIOS = ("unit-oracles", "scalar-girsanov", "conditional-measure", "prop41",
             "drift-change", "bi1star-convergence")

DEFAULTS = {
    "unit-oracles": {"paths": 1, "grid": 2},
    "scalar-girsanov": {"paths": 200_000, "grid": 64, "q": 1.0},
    "conditional-measure": {"paths": 50_000, "grid": 64, "q": 1.0},
    "prop41": {"paths": 200_000, "grid": 64},
    "drift-change": {"paths": 100_000, "grid": 64},
    "bi1star-convergence": {"paths": 10_000, "grid": 4096},
}

# r(t) for the drift-change scenario; the diffusion is Phi(t) = (1 + t) x0 in R^2.
R_SPECS = {
    "zero": lambda t: 0.0,
    "one": lambda t: 1.0,
    "linear": lambda t: t,
}
X0 = (1.0, -0.5)


class ConfigError(ValueError):
    """The configuration cannot describe a valid run."""


@dataclass
class ScenarioConfig:
    scenario: str
    paths: int | None = None
    grid: int | None = None
    horizon: float = 1.0
    q: float | None = None
    r_spec: str | None = None
    bins: int = 32
    confidence: float = 0.99
    seed: int = 7
    threads: int | None = None
    out: str = "out"
    slots: int = 64

    @classmethod
    def build(cls, scenario: str, file_values: dict | None = None,
              cli_values: dict | None = None) -> "ScenarioConfig":
        """Merge with precedence command line > file > scenario defaults."""
        if scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
        known = {f.name for f in fields(cls)} - {"scenario"}
        merged: dict = {}
        layers = [DEFAULTS[scenario], _normalize(file_values or {}), cli_values or {}]
        for layer in layers:
            unknown = set(layer) - known
            if unknown:
                raise ConfigError(f"unknown configuration key(s): {', '.join(sorted(unknown))}")
            given = {k: v for k, v in layer.items() if v is not None}
            if "q" in given and "r_spec" in given and layer is not layers[0]:
                raise ConfigError("give either q or r_spec, not both")
            if "q" in given:
                merged.pop("r_spec", None)
            if "r_spec" in given:
                merged.pop("q", None)
            merged.update(given)
        cfg = cls(scenario=scenario, **merged)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.paths is None or self.paths < 1:
            raise ConfigError("paths must be at least 1")
        if self.grid is None or self.grid < 2:
            raise ConfigError("grid must be at least 2")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError("confidence must lie in (0, 1)")
        if self.bins < 2:
            raise ConfigError("bins must be at least 2")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.slots < 1:
            raise ConfigError("slots must be at least 1")
        if self.scenario in ("scalar-girsanov", "prop41") and self.grid % 4:
            raise ConfigError("grid must be a multiple of 4 so that T/4 and T/2 are grid times")
        if self.scenario == "bi1star-convergence" and self.grid % 16:
            raise ConfigError("grid must be a multiple of 16 for the K/16, K/4, K ladder")
        if self.scenario == "drift-change":
            if self.q is None and self.r_spec is None:
                raise ConfigError("drift-change needs a factorization Psi = r Phi: give --q or --r-spec")
            if self.r_spec is not None and self.r_spec not in R_SPECS:
                raise ConfigError(
                    f"unknown r-spec {self.r_spec!r}; choose from {', '.join(R_SPECS)}")
        if self.scenario in ("scalar-girsanov", "conditional-measure") and self.q is None:
            raise ConfigError(f"{self.scenario} needs a drift q")

    def record(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        return d


def _normalize(values: dict) -> dict:
    return {k.replace("-", "_"): v for k, v in values.items()}


def load_config_file(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("configuration file must hold a JSON object")
    return data


@dataclass
class RunResult:
    config: ScenarioConfig
    report: PipelineReport
    tables: dict[str, list] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.report.passed

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


def _threads(cfg: ScenarioConfig) -> int:
    return cfg.threads or os.cpu_count() or 1


def _times(cfg: ScenarioConfig) -> tuple[float, ...]:
    T = cfg.horizon
    return (T / 4, T / 2, T)


def run_unit_oracles(cfg: ScenarioConfig) -> RunResult:
    rng = rngmod.stream(cfg.seed, "oracles")
    rep = PipelineReport("unit-oracles")
    kept = []
    for suite in (bi_oracle_suite, duality_suite, substitution_suite):
        r = suite(rng)
        kept += r.results
        rep.add(Stage(r.name, r.passed(), detail={"worst_gap": r.worst, "tolerance": 1e-12,
                                                  "instances": r.count}))
    for name, gap in conditioning_suite(rng).items():
        rep.add(Stage(name, gap <= 1e-12, detail={"worst_gap": gap, "tolerance": 1e-12}))
    bad_tags, bad_trace = certificate_suite(kept, rngmod.stream(cfg.seed, "tags"))
    rep.add(Stage("certificates", bad_tags == 0 and bad_trace == 0,
                  detail={"results": len(kept), "tag_violations": bad_tags,
                          "nonmonotone_traces": bad_trace}))
    return RunResult(cfg, rep)


def run_scalar_girsanov(cfg: ScenarioConfig) -> RunResult:
    ens = simulate_bm(cfg.paths, uniform_grid(cfg.grid, cfg.horizon), cfg.seed, _threads(cfg))
    rep = scalar_girsanov(ens, cfg.q, cfg.confidence, cfg.bins, _times(cfg))
    return RunResult(cfg, rep)


def run_conditional(cfg: ScenarioConfig) -> RunResult:
    ens = simulate_product(cfg.slots, cfg.paths, uniform_grid(cfg.grid, cfg.horizon), cfg.seed,
                           cfg.horizon, _threads(cfg))
    return RunResult(cfg, conditional_example(ens, cfg.q, cfg.confidence, cfg.bins))


def run_prop41(cfg: ScenarioConfig) -> RunResult:
    ens = simulate_bm(cfg.paths, uniform_grid(cfg.grid, cfg.horizon), cfg.seed, _threads(cfg))
    return RunResult(cfg, prop41_verify(ens, cfg.confidence, cfg.bins, _times(cfg)))


def drift_process(cfg: ScenarioConfig) -> DriftedProcess:
    if cfg.q is not None:
        q = float(cfg.q)
        r = (lambda t: q)
    elif cfg.r_spec is not None:
        r = R_SPECS[cfg.r_spec]
    else:
        raise PreconditionError("drift change needs a factorization Psi = r Phi")
    x0 = Space.finite(2).element(X0)
    Phi = StochasticIntegrand.linear(x0, 1.0, 1.0)
    return DriftedProcess(lambda t: r(t) * (1.0 + t) * x0.coords, Phi, r)


def run_drift_change(cfg: ScenarioConfig) -> RunResult:
    p = drift_process(cfg)
    ens = simulate_bm(cfg.paths, uniform_grid(cfg.grid, cfg.horizon), cfg.seed, _threads(cfg))
    drift_free = cfg.q == 0.0 or cfg.r_spec == "zero"
    rep = change_drift(p, ens, cfg.confidence, bins=cfg.bins, negative_control=not drift_free)
    return RunResult(cfg, rep)


def run_convergence(cfg: ScenarioConfig) -> RunResult:
    K = cfg.grid
    ens = simulate_bm(cfg.paths, uniform_grid(K, cfg.horizon), cfg.seed, _threads(cfg),
                      label="convergence")
    rows = bi1star_convergence(ens, (K // 16, K // 4, K))
    rms = [r.rms for r in rows]
    rep = PipelineReport("bi1star-convergence")
    rep.add(Stage("rms_finite_decreasing",
                  bool(np.all(np.isfinite(rms)) and np.all(np.diff(rms) < 0)),
                  detail={"rms": rms, "K": [r.K for r in rows]}))
    rep.add(Stage("rms_at_finest", rms[-1] <= 1e-2, detail={"rms": rms[-1], "tolerance": 1e-2}))
    weak = max(r.weak_gap for r in rows)
    rep.add(Stage("weak_characterization", weak <= 1e-10,
                  detail={"max_gap": weak, "tolerance": 1e-10}))
    table = [["K", "rms", "max_abs", "weak_gap"]] + [
        [r.K, repr(r.rms), repr(r.max_abs), repr(r.weak_gap)] for r in rows]
    return RunResult(cfg, rep, {"convergence.csv": table})


RUNNERS = {
    "unit-oracles": run_unit_oracles,
    "scalar-girsanov": run_scalar_girsanov,
    "conditional-measure": run_conditional,
    "prop41": run_prop41,
    "drift-change": run_drift_change,
    "bi1star-convergence": run_convergence,
}


def run(cfg: ScenarioConfig) -> RunResult:
    cfg.validate()
    return RUNNERS[cfg.scenario](cfg)


def summary_document(result: RunResult) -> dict:
    cfg = result.config
    return {
        "header": {"timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                   "version": __version__},
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "M": cfg.paths,
        "K": cfg.grid,
        "T": cfg.horizon,
        "config": cfg.record(),
        "pass": result.passed,
        "failed_stages": result.report.failed,
        "stages": result.report.summary(),
    }


def write_artifacts(result: RunResult, out_dir) -> list[Path]:
    """Write ``summary.json`` and the CSV tables; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for stage in result.report.stages:
        if stage.report is not None:
            path = out / f"martingale_{stage.name}.csv"
            stage.report.to_csv(path)
            written.append(path)
    for t, dens in result.report.densities.items():
        path = out / f"density_{t}.csv"
        dens.to_csv(path)
        written.append(path)
    for name, table in result.tables.items():
        path = out / name
        with open(path, "w") as fh:
            for row in table:
                fh.write(",".join(str(x) for x in row) + "\n")
        written.append(path)
    path = out / "summary.json"
    with open(path, "w") as fh:
        json.dump(summary_document(result), fh, indent=2, default=_json_default)
        fh.write("\n")
    written.append(path)
    return written


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
