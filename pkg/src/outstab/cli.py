"""``outstab`` command-line front end.

Every run validates its configuration before touching the output
directory, writes its reports, and finishes with ``manifest.json``.
Exit codes: 0 all verdicts passed, 1 a verdict failed, 2 invalid
configuration, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__, probes, rates
from .certkit import THEOREMS, DomainSample, certify
from .dads import (DISTURBANCE_PRESETS, DadsParams, DadsScenario, dads_property_suite,
                   random_scenarios, scenario_signal, simulate_scenario, theta_threshold_ios,
                   theta_threshold_ugaos)
from .dynsys import make_signal, parallel_map, simulate
from .errors import ConfigInvalid, OutstabError
from .report import dumps_fixed
from .systems import build, list_builtin_systems

log = logging.getLogger("outstab")

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("simulate", "certify", "bound", "probe", "dads")
REQUIRED = {"simulate": ("system", "simulate"), "certify": ("system", "certificate", "sample"),
            "bound": ("system", "bound"), "probe": ("system", "probe"), "dads": ("dads",)}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemCfg(_Strict):
    id: Literal["example1", "dads"]
    params: dict[str, Any] = Field(default_factory=dict)


class SignalCfg(_Strict):
    kind: Literal["zero", "constant", "piecewise-constant", "sinusoid", "decaying",
                  "seeded-random-steps"] = "zero"
    value: Optional[Union[float, list[float]]] = None
    times: Optional[list[float]] = None
    values: Optional[list[Union[float, list[float]]]] = None
    amplitude: Optional[Union[float, list[float]]] = None
    omega: Optional[float] = None
    phase: Optional[float] = None
    rate: Optional[float] = None
    n_steps: Optional[int] = None
    step: Optional[float] = None

    def spec(self):
        return self.model_dump(exclude_none=True)


class CertificateCfg(_Strict):
    theorem: Literal[THEOREMS]
    slack: float = Field(1e-9, ge=0)
    relative: bool = False
    tail: Literal["auto", "liminf", "zeta"] = "auto"


class SampleCfg(_Strict):
    lower: list[float]
    upper: list[float]
    density: Union[int, list[int]] = 21
    disturbances: Optional[list[Union[float, list[float]]]] = None
    d_density: int = Field(21, ge=1)
    refinement: Optional[int] = Field(4, ge=1)


class SimulateCfg(_Strict):
    x0: list[float]
    disturbance: SignalCfg = Field(default_factory=SignalCfg)
    horizon: float = Field(gt=0)
    tol: float = Field(1e-8, ge=1e-12, le=1e-2)
    method: Literal["adaptive", "rk4"] = "adaptive"
    dt: Optional[float] = Field(None, gt=0)
    max_step: Optional[float] = Field(None, gt=0)
    blowup_guard: float = Field(1e9, gt=0)


class BoundCfg(_Strict):
    kind: Literal["case_i", "case_ii", "ios"]
    epsilon: float = Field(gt=0)
    R: float = Field(gt=0)
    density: int = Field(41, ge=2)
    s_max: float = Field(100.0, gt=0)


class ProbeCfg(_Strict):
    kind: Literal["uniformity", "falsify"] = "uniformity"
    notion: Literal[probes.NOTIONS] = "URGOA"
    R: float = Field(ge=0)
    epsilon: float = Field(gt=0)
    horizon: float = Field(gt=0)
    n_init: int = Field(20, ge=1)
    signals: list[SignalCfg] = Field(default_factory=lambda: [SignalCfg()])
    level: Literal["epsilon", "ios"] = "epsilon"
    compare_bound: bool = False
    budget: int = Field(100, ge=10)
    max_switches: int = Field(5, ge=0)
    tol: float = Field(1e-6, ge=1e-12, le=1e-2)
    max_step: Optional[float] = Field(None, gt=0)


class DadsParamsCfg(_Strict):
    Gamma: float = Field(1.0, gt=0)
    eps_dz: float = Field(0.1, gt=0)
    c: float = Field(1.0, gt=0)
    a: float = Field(0.5, gt=0)
    phi: Literal["one", "y", "y^2"] = "one"


class DadsScenarioCfg(_Strict):
    theta: float
    y0: float
    z0: float = 0.0
    disturbance: SignalCfg = Field(default_factory=SignalCfg)
    horizon: float = Field(200.0, gt=0)


class DadsRandomCfg(_Strict):
    n: int = Field(ge=1)
    theta_range: tuple[float, float] = (-2.0, 2.0)
    y0_max: float = Field(5.0, ge=0)
    z0: float = 0.0
    kinds: list[Literal[tuple(DISTURBANCE_PRESETS)]] = ["zero", "constant", "sin", "decaying"]
    amplitude: float = 0.5
    horizon: float = Field(200.0, gt=0)


class DadsCfg(_Strict):
    params: DadsParamsCfg = Field(default_factory=DadsParamsCfg)
    scenarios: list[DadsScenarioCfg] = Field(default_factory=list)
    random: Optional[DadsRandomCfg] = None
    tol: float = Field(1e-6, ge=0)
    z_tol: float = Field(1e-9, ge=0)
    tail_tol: float = Field(1e-3, ge=0)
    sim_tol: float = Field(1e-9, ge=1e-12, le=1e-2)
    tail_fraction: float = Field(0.2, gt=0, lt=1)
    r_probe: float = Field(1.0, gt=0)
    thresholds: bool = True


class OutputCfg(_Strict):
    dir: Optional[str] = None
    format: Literal["csv", "json"] = "csv"


class ScenarioConfig(_Strict):
    system: Optional[SystemCfg] = None
    certificate: Optional[CertificateCfg] = None
    sample: Optional[SampleCfg] = None
    simulate: Optional[SimulateCfg] = None
    bound: Optional[BoundCfg] = None
    probe: Optional[ProbeCfg] = None
    dads: Optional[DadsCfg] = None
    output: OutputCfg = Field(default_factory=OutputCfg)
    seed: int = Field(0, ge=0, lt=2**64)


def load_config(path, command):
    """Parse and validate a JSON or YAML config for ``command``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
        raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (OSError, ValueError, yaml.YAMLError) as exc:
        raise ConfigInvalid(f"cannot read config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a mapping")
    try:
        cfg = ScenarioConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigInvalid(str(exc)) from exc
    missing = [s for s in REQUIRED[command] if getattr(cfg, s) is None]
    if missing:
        raise ConfigInvalid(f"{command} needs section(s): {', '.join(missing)}")
    if cfg.system is not None:
        try:
            build(cfg.system.id, cfg.system.params)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigInvalid(f"system: {exc}") from exc
    return cfg


def config_hash(cfg: ScenarioConfig):
    canon = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class _Writer:
    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.files = []

    def write(self, name, text):
        self.dir.mkdir(parents=True, exist_ok=True)
        with open(self.dir / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.files.append(name)

    def json(self, name, obj):
        self.write(name, dumps_fixed(obj))


# pipelines: each returns True when every verdict passed ---------------------

def _run_simulate(cfg, w, seed, jobs):
    system, _ = build(cfg.system.id, cfg.system.params)
    sc = cfg.simulate
    sig = make_signal(sc.disturbance.spec(), system.disturbance_set, seed)
    traj = simulate(system, sc.x0, sig, sc.horizon, sc.tol, method=sc.method, dt=sc.dt,
                    max_step=sc.max_step, blowup_guard=sc.blowup_guard)
    if cfg.output.format == "csv":
        w.write("trajectory.csv", traj.to_csv())
    else:
        w.json("trajectory.json", traj)
    return True


def _run_certify(cfg, w, seed, jobs):
    system, bundle = build(cfg.system.id, cfg.system.params)
    s = cfg.sample
    sample = DomainSample.box(s.lower, s.upper, s.density, disturbances=s.disturbances,
                              domain=system.disturbance_set, d_density=s.d_density,
                              refinement=s.refinement)
    c = cfg.certificate
    verdict = certify(system, bundle, c.theorem, sample, c.slack, relative=c.relative, tail=c.tail)
    w.json("verdict.json", verdict)
    return verdict.passed


def _bound(cfg, system, bundle):
    b = cfg.bound
    sample = rates.BallSample(system.dim_state, b.density)
    if b.kind == "case_i":
        return rates.convergence_time_case_i(bundle.V, bundle.rho, bundle.a, bundle.r, b.epsilon,
                                             b.R, sample, s_max=b.s_max)
    if b.kind == "case_ii":
        bundle.require("Q", "zeta")
        return rates.convergence_time_case_ii(bundle.V, bundle.Q, bundle.zeta, bundle.rho, bundle.a,
                                              bundle.r, b.epsilon, b.R, sample)
    return rates.ios_time(bundle.V, bundle.W, bundle.rho, b.epsilon, b.R, sample)


def _run_bound(cfg, w, seed, jobs):
    system, bundle = build(cfg.system.id, cfg.system.params)
    w.json("bound.json", _bound(cfg, system, bundle))
    return True


def _run_probe(cfg, w, seed, jobs):
    system, bundle = build(cfg.system.id, cfg.system.params)
    pc = cfg.probe
    output = threshold = None
    if pc.level == "ios":
        bundle.require("W", "chi")
        output = bundle.W
        threshold = lambda dsup: max(pc.epsilon, float(bundle.chi(dsup)))  # noqa: E731
    bound = _bound(cfg, system, bundle) if pc.compare_bound and cfg.bound is not None else None
    if pc.kind == "falsify":
        res = probes.falsify(system, output, "max-attainment-time", pc.budget, seed, R=pc.R,
                             horizon=pc.horizon, epsilon=pc.epsilon, threshold=threshold,
                             max_switches=pc.max_switches, jobs=jobs, tol=pc.tol,
                             max_step=pc.max_step)
        if bound is not None:
            res["bound"] = bound.T
            res["within_bound"] = res["value"] <= bound.T
        w.json("falsify.json", res)
        return res.get("within_bound", True) and np.isfinite(res["value"])
    signals = [make_signal(s.spec(), system.disturbance_set, seed + i)
               for i, s in enumerate(pc.signals)]
    report = probes.uniformity_probe(system, pc.R, pc.epsilon, pc.n_init, signals, pc.horizon,
                                     output=output, threshold=threshold, bound=bound, seed=seed,
                                     tol=pc.tol, max_step=pc.max_step, jobs=jobs, notion=pc.notion)
    w.json("probe.json", report)
    rows = ["member,x0_norm,attainment,max_output,tail_max"]
    rows += [f"{i},{m['x0_norm']:.17g},{m['attainment']:.17g},{m['max_output']:.17g},"
             f"{m['tail_max']:.17g}" for i, m in enumerate(report.members)]
    w.write("attainment.csv", "\n".join(rows) + "\n")
    return all(report.verdict.values()) if report.verdict else True


def _run_dads(cfg, w, seed, jobs):
    dc = cfg.dads
    pp = dc.params
    p = DadsParams(pp.Gamma, pp.eps_dz, pp.c, pp.a, pp.phi)
    scenarios = [DadsScenario(s.theta, s.y0, s.z0, scenario_signal(s.disturbance.spec(), seed),
                              s.horizon) for s in dc.scenarios]
    if dc.random is not None:
        r = dc.random
        scenarios += random_scenarios(r.n, seed, theta_range=r.theta_range, y0_max=r.y0_max,
                                      z0=r.z0, kinds=tuple(r.kinds), amplitude=r.amplitude,
                                      horizon=r.horizon)
    if not scenarios:
        raise ConfigInvalid("dads needs at least one scenario")

    def run(s):
        traj = simulate_scenario(s, p, dc.sim_tol)
        rep = dads_property_suite(s, p, dc.tol, z_tol=dc.z_tol, tail_tol=dc.tail_tol,
                                  tail_fraction=dc.tail_fraction, traj=traj)
        return traj, rep

    results = parallel_map(run, scenarios, jobs)
    entries = []
    for i, (s, (traj, rep)) in enumerate(zip(scenarios, results)):
        if cfg.output.format == "csv":
            w.write(f"dads_{i:03d}.csv", traj.to_csv())
        entries.append({"scenario": s.to_dict(), "report": rep.to_dict(), "all_ok": rep.all_ok})
    doc = {"params": p.to_dict(), "scenarios": entries,
           "passed": sum(e["all_ok"] for e in entries), "total": len(entries)}
    if dc.thresholds:
        doc["thresholds"] = {"ugaos": theta_threshold_ugaos(p, r_probe=dc.r_probe),
                             "ios": theta_threshold_ios(p)}
    w.json("dads_report.json", doc)
    return all(e["all_ok"] for e in entries)


PIPELINES = {"simulate": _run_simulate, "certify": _run_certify, "bound": _run_bound,
             "probe": _run_probe, "dads": _run_dads}


def run(command, cfg: ScenarioConfig, out_dir, seed=None, jobs=1):
    """Execute one pipeline; returns ``(manifest, exit_code)``."""
    seed = cfg.seed if seed is None else seed
    w = _Writer(out_dir)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        ok = PIPELINES[command](cfg, w, seed, jobs)
        code = EXIT_OK if ok else EXIT_VERDICT
        error = None
    except ConfigInvalid as exc:
        code, error = EXIT_CONFIG, str(exc)
    except (OutstabError, ValueError, ArithmeticError) as exc:
        log.error("runtime failure: %s", exc)
        code, error = EXIT_RUNTIME, f"{type(exc).__name__}: {exc}"
    manifest = {
        "tool": "outstab",
        "version": __version__,
        "command": command,
        "config_sha256": config_hash(cfg),
        "seed": seed,
        "started": started.isoformat(),
        "wall_clock_s": round(time.perf_counter() - t0, 6),
        "exit_code": code,
        "error": error,
        "artifacts": list(w.files),
    }
    if code != EXIT_CONFIG:
        w.json("manifest.json", manifest)
    return manifest, code


def _parser():
    ap = argparse.ArgumentParser(prog="outstab", description="Output-stability certification toolkit")
    ap.add_argument("--version", action="version", version=f"outstab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--format", choices=("csv", "json"), default=None)
        sp.add_argument("--jobs", type=int, default=1)
    sp = sub.add_parser("systems", help="list built-in systems")
    sp.add_argument("--format", choices=("text", "json"), default="text")
    return ap


def _setup_logging():
    level = os.environ.get("OUTSTAB_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = _parser().parse_args(argv)
    if args.command == "systems":
        catalog = list_builtin_systems()
        if args.format == "json":
            sys.stdout.write(dumps_fixed(catalog))
        else:
            for entry in catalog:
                n, k = entry["dims"]
                sys.stdout.write(f"{entry['id']:<10} n={n} k={k}  {entry['description']}\n")
        return EXIT_OK
    try:
        cfg = load_config(args.config, args.command)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigInvalid("seed must be an unsigned 64-bit integer")
        if args.format is not None:
            cfg.output.format = args.format
        out = args.out or cfg.output.dir
        if out is None:
            raise ConfigInvalid("no output directory (use --out or output.dir)")
    except ConfigInvalid as exc:
        sys.stderr.write(f"config invalid: {exc}\n")
        return EXIT_CONFIG
    manifest, code = run(args.command, cfg, out, args.seed, max(1, args.jobs))
    if manifest["error"]:
        sys.stderr.write(manifest["error"] + "\n")
    sys.stdout.write(f"{args.command}: exit {code}, {len(manifest['artifacts'])} artifact(s) in {out}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
