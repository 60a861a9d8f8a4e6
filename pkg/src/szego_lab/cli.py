"""Command-line front end: config ingestion, orchestration, persistence.

Configs are plain key=value text (model keys as in model_from_text plus
command parameters).  Results are a JSON envelope plus CSV tables and PNG
figures; payloads are cached on disk keyed by a content hash of the
canonicalized config, so re-plotting an expensive sweep is free.

Exit codes: 0 success, 2 config error, 3 computation error, 4 acceptance
suite failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .cmv import assemble_cmv
from .cocycle import lyapunov_curve, lyapunov_exponent, rotation_curve, spectrum_scan
from .dos import dos_histogram, holder_modulus, thouless_check
from .gordon import (
    arcs_to_json,
    gordon_report,
    gordon_reports_to_csv,
    sc_region,
)
from .kam import KamSchedule, kam_iterate, kam_states_to_json
from .measures import (
    jl_bound_check,
    jl_reports_to_csv,
    measure_window_bound,
    subordinacy_classify,
    window_reports_to_csv,
)
from .model import VerblunskyModel, model_from_text, model_to_text
from . import report as fig

COMMANDS = ("spectrum", "lyapunov", "rotation", "dos", "thouless", "holder",
            "kam", "jl", "gordon", "suite")

MODEL_KEYS = ("lambda", "omega", "radius")


class ConfigError(ValueError):
    """Invalid or unparsable experiment configuration."""


class ComputationError(RuntimeError):
    """A module operation failed while executing a command."""


# key -> (python type, lower bound, upper bound, default); None default = required
_COMMON = {
    "threads": (int, 1, 1024, 0),  # 0 = library-level parallelism only
    "seed": (int, 0, 2 ** 31, 0),
}

PARAM_SCHEMA: Dict[str, Dict[str, tuple]] = {
    "spectrum": {"gridSize": (int, 16, 8192, 512),
                 "horizon": (int, 64, 1 << 16, 4096),
                 "phaseCount": (int, 1, 4096, 16)},
    "lyapunov": {"zetaCount": (int, 2, 8192, 64),
                 "modulus": (float, 1e-6, 1e3, 1.0),
                 "nIter": (int, 10, 10 ** 7, 10_000),
                 "phaseCount": (int, 1, 4096, 32)},
    "rotation": {"zetaCount": (int, 2, 8192, 64),
                 "nIter": (int, 10, 10 ** 7, 20_000)},
    "dos": {"size": (int, 2, 1 << 15, 256),
            "phaseSamples": (int, 1, 4096, 1),
            "estimator": (str, None, None, "truncation")},
    "thouless": {"modulus": (float, 1e-6, 1e3, 1.1),
                 "size": (int, 2, 1 << 15, 2000),
                 "phaseSamples": (int, 1, 4096, 50),
                 "nIter": (int, 10, 10 ** 7, 10_000)},
    "holder": {"size": (int, 2, 1 << 15, 4000),
               "phaseSamples": (int, 1, 4096, 8),
               "zetaCount": (int, 1, 1024, 10),
               "epsMin": (float, 1e-8, 1.0, 1e-2),
               "epsMax": (float, 1e-8, 1.0, 1e-1),
               "epsCount": (int, 2, 256, 6)},
    "kam": {"zeta": (float, 0.0, 2 * math.pi, 2.0),
            "epsilon0": (float, 1e-300, 0.999, 1e-3),
            "r": (float, 1e-6, 10.0, 0.05),
            "maxSteps": (int, 1, 16, 3)},
    "jl": {"zeta": (float, 0.0, 2 * math.pi, 2.0),
           "epsilon": (float, 1e-8, 0.999, 0.05),
           "x": (float, 0.0, 1.0, 0.0),
           "phiCount": (int, 1, 256, 8),
           "horizon": (int, 1000, 10 ** 7, 10_000)},
    "gordon": {"q": (int, 1, 10 ** 6, 8),
               "zetaCount": (int, 1, 1024, 8),
               "cfDepth": (int, 1, 64, 20),
               "x": (float, 0.0, 1.0, 0.0)},
    "suite": {},
}


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    model: VerblunskyModel
    params: Dict[str, object]
    canonicalText: str

    @property
    def configHash(self) -> str:
        return hashlib.sha256(self.canonicalText.encode()).hexdigest()


@dataclass(frozen=True)
class ResultEnvelope:
    configHash: str
    toolVersion: str
    wallTime: float
    payload: Dict[str, object]

    def to_json(self) -> str:
        return json.dumps({"configHash": self.configHash,
                           "toolVersion": self.toolVersion,
                           "wallTime": self.wallTime,
                           "payload": self.payload}, indent=2, sort_keys=True)


def validate(config_text: str, command: Optional[str] = None) -> ExperimentConfig:
    """Parse and canonicalize a key=value config; diagnostics name the key."""
    raw: Dict[str, str] = {}
    model_lines: List[str] = []
    for lineno, line in enumerate(config_text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key in MODEL_KEYS or key.startswith("h."):
            model_lines.append(f"{key}={val}")
        raw[key] = val
    cmd = raw.pop("command", None)
    if command is not None:
        if cmd is not None and cmd != command:
            raise ConfigError(f"config names command {cmd!r} but {command!r} "
                              "was requested")
        cmd = command
    if cmd is None:
        raise ConfigError("no command given (config key 'command' or CLI argument)")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}; expected one of {COMMANDS}")
    try:
        model = model_from_text("\n".join(model_lines) + "\n")
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc
    schema = dict(PARAM_SCHEMA[cmd], **_COMMON)
    params: Dict[str, object] = {}
    for key, val in raw.items():
        if key in MODEL_KEYS or key.startswith("h."):
            continue
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for command {cmd!r}")
        typ, lo, hi, _ = schema[key]
        try:
            parsed = typ(val)
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: cannot parse {val!r} as "
                              f"{typ.__name__}") from exc
        if typ is not str and not (lo <= parsed <= hi):
            raise ConfigError(f"key {key!r}: {parsed} outside [{lo}, {hi}]")
        if key == "estimator" and parsed not in ("truncation", "zeros"):
            raise ConfigError(f"key 'estimator': {parsed!r} is not "
                              "'truncation' or 'zeros'")
        params[key] = parsed
    for key, (typ, _, _, default) in schema.items():
        params.setdefault(key, default)
    canon_lines = [f"command={cmd}"]
    canon_lines += sorted(model_to_text(model).strip().splitlines())
    canon_lines += [f"{k}={params[k]!r}" if isinstance(params[k], float)
                    else f"{k}={params[k]}" for k in sorted(params)]
    return ExperimentConfig(cmd, model, params, "\n".join(canon_lines) + "\n")


# --------------------------------------------------------------------------
# command implementations: each returns a JSON-serializable payload; file
# emission happens in _emit_files so cached replays still write the outputs
# --------------------------------------------------------------------------

def _zeta_grid(count: int) -> np.ndarray:
    return np.linspace(0.0, 2.0 * np.pi, count, endpoint=False) + np.pi / count


def _write(path: str, text: str) -> None:
    with open(path, "w") as f:
        f.write(text)


def _cmd_spectrum(cfg: ExperimentConfig) -> Dict:
    p = cfg.params
    arcs = spectrum_scan(cfg.model, grid_size=p["gridSize"],
                         horizon=p["horizon"], phase_count=p["phaseCount"])
    payload = {"arcs": [[lo, hi] for lo, hi in arcs.arcs],
               "gridResolution": arcs.gridResolution,
               "totalLength": arcs.total_length()}
    return payload


def _cmd_lyapunov(cfg: ExperimentConfig) -> Dict:
    p = cfg.params
    zetas = _zeta_grid(p["zetaCount"])
    gam, err = lyapunov_curve(cfg.model, zetas, modulus=p["modulus"],
                              n_iter=p["nIter"], phase_count=p["phaseCount"])
    payload = {"zetas": zetas.tolist(), "gamma": [float(g) for g in gam],
               "stderr": [float(e) for e in err], "modulus": p["modulus"]}
    return payload


def _cmd_rotation(cfg: ExperimentConfig) -> Dict:
    p = cfg.params
    zetas = _zeta_grid(p["zetaCount"])
    rho = rotation_curve(cfg.model, zetas, n_iter=p["nIter"])
    payload = {"zetas": zetas.tolist(), "rho": [float(r) for r in rho]}
    return payload


def _cmd_dos(cfg: ExperimentConfig) -> Dict:
    p = cfg.params
    dos = dos_histogram(cfg.model, p["size"], p["phaseSamples"], p["estimator"])
    payload = {"dos": json.loads(dos.to_json())}
    return payload


def _cmd_thouless(cfg: ExperimentConfig) -> Dict:
    p = cfg.params
    dos = dos_histogram(cfg.model, p["size"], p["phaseSamples"], "truncation")
    z = p["modulus"]
    lyap = lyapunov_exponent(cfg.model, z, n_iter=p["nIter"])
    rep = thouless_check(cfg.model, z, dos, lyap)
    payload = {"modulus": z, "lhs": rep.lhs, "rhs": rep.rhs, "gap": rep.gap}
    return payload


def _cmd_holder(cfg: ExperimentConfig) -> Dict:
    p = cfg.params
    if p["epsMin"] >= p["epsMax"]:
        raise ConfigError("key 'epsMin': must be < epsMax")
    dos = dos_histogram(cfg.model, p["size"], p["phaseSamples"], "truncation")
    zetas = np.linspace(0.45, 2 * np.pi - 0.45, p["zetaCount"])
    eps = np.geomspace(p["epsMin"], p["epsMax"], p["epsCount"])
    table = holder_modulus(dos, list(zetas), list(eps))
    payload = {"rows": [{"zeta": float(r.zeta), "epsilon": float(r.epsilon),
                         "mass": float(r.mass), "flagged": bool(r.flagged)}
                        for r in table.rows],
               "slopes": {repr(k): (None if v is None else float(v))
                          for k, v in table.slopes.items()},
               "csv": table.to_csv()}
    return payload


def _cmd_kam(cfg: ExperimentConfig) -> Dict:
    p = cfg.params
    schedule = KamSchedule(p["epsilon0"], p["r"])
    states = kam_iterate(cfg.model, p["zeta"], schedule,
                         max_steps=p["maxSteps"])
    payload = {"states": json.loads(kam_states_to_json(states)),
               "epsilon0": p["epsilon0"], "r": p["r"], "zeta": p["zeta"]}
    return payload


def _cmd_jl(cfg: ExperimentConfig) -> Dict:
    p = cfg.params
    phis = np.exp(2j * np.pi * np.arange(p["phiCount"]) / p["phiCount"])
    reports = [jl_bound_check(cfg.model, p["x"], p["zeta"], p["epsilon"], phi)
               for phi in phis]
    window = measure_window_bound(cfg.model, p["x"], p["zeta"], p["epsilon"])
    verdict = subordinacy_classify(cfg.model, p["x"], p["zeta"], p["horizon"])
    payload = {"jlCsv": jl_reports_to_csv(reports),
               "window": window,
               "verdict": {"verdict": verdict.verdict,
                           "supNorm": verdict.supNorm,
                           "tailSlope": verdict.tailSlope},
               "FAbs": [r.FAbs for r in reports],
               "ratio": [r.ratio for r in reports]}
    return payload


def _cmd_gordon(cfg: ExperimentConfig) -> Dict:
    p = cfg.params
    zetas = _zeta_grid(p["zetaCount"])
    reports = [gordon_report(cfg.model, p["x"], float(z), p["q"],
                             cf_depth=p["cfDepth"]) for z in zetas]
    arcs = sc_region(cfg.model, _zeta_grid(max(p["zetaCount"], 32)),
                     p["cfDepth"])
    payload = {"csv": gordon_reports_to_csv(reports),
               "scArcs": json.loads(arcs_to_json(arcs))}
    return payload


def _cmd_suite(cfg: ExperimentConfig) -> Dict:
    """Fast self-check rows on the configured model: each row is one
    module-level identity with a closed-form or cross-checked oracle."""
    model = cfg.model
    rows: List[Tuple[str, bool, str]] = []

    def check(name, ok, detail):
        rows.append((name, bool(ok), detail))

    tr = assemble_cmv(model, 0.0, 64)
    check("truncationUnitary", tr.unitarity_defect() <= 1e-12,
          f"defect={tr.unitarity_defect():.3e}")
    gam = lyapunov_exponent(model, 1.2, n_iter=2000, phase_count=8)
    lower = math.log(1.2) - 1e-3
    check("outerLowerBound", gam.gammaSzego >= lower,
          f"gammaSzego={gam.gammaSzego:.6f} >= {lower:.6f}")
    rho = float(rotation_curve(model, [1.0], n_iter=4000)[0])
    check("rotationInRange", 0.0 <= rho < 1.0, f"rho={rho:.6f}")
    dos = dos_histogram(model, 128, 2, "truncation")
    check("dosMass", abs(float(dos.cdf[-1]) - 1.0) <= 1.0 / 64,
          f"mass={float(dos.cdf[-1]):.6f}")
    if model.lam == 0.0:
        arcs = spectrum_scan(model, grid_size=64, horizon=512, phase_count=4)
        check("freeFullCircle",
              abs(arcs.total_length() - 2 * np.pi) <= 1e-9,
              f"length={arcs.total_length():.6f}")
    payload = {"rows": [{"name": n, "ok": ok, "detail": d}
                        for n, ok, d in rows],
               "allPass": all(ok for _, ok, _ in rows)}
    return payload


_DISPATCH = {"spectrum": _cmd_spectrum, "lyapunov": _cmd_lyapunov,
             "rotation": _cmd_rotation, "dos": _cmd_dos,
             "thouless": _cmd_thouless, "holder": _cmd_holder,
             "kam": _cmd_kam, "jl": _cmd_jl, "gordon": _cmd_gordon,
             "suite": _cmd_suite}


# --------------------------------------------------------------------------
# orchestration: caching + atomic writes
# --------------------------------------------------------------------------

def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(config: ExperimentConfig, out_dir: str = "szego-out",
        use_cache: bool = True) -> ResultEnvelope:
    os.makedirs(out_dir, exist_ok=True)
    cache_dir = os.path.join(out_dir, ".cache")
    os.makedirs(cache_dir, exist_ok=True)
    cache_path = os.path.join(cache_dir, config.configHash + ".json")
    payload = None
    t0 = time.perf_counter()
    if use_cache and os.path.exists(cache_path):
        try:
            with open(cache_path) as f:
                payload = json.load(f)["payload"]
        except (json.JSONDecodeError, KeyError, OSError):
            print("warning: cache entry unreadable, recomputing",
                  file=sys.stderr)
            payload = None
    if payload is None:
        try:
            payload = _DISPATCH[config.command](config)
        except ConfigError:
            raise
        except Exception as exc:
            raise ComputationError(
                f"command {config.command!r} failed: {exc}") from exc
        # canonical JSON round trip so cached and fresh payloads are
        # byte-identical
        payload = json.loads(json.dumps(payload, sort_keys=True))
    envelope = ResultEnvelope(config.configHash, __version__,
                              time.perf_counter() - t0, payload)
    if use_cache:
        _atomic_write(cache_path, json.dumps(
            {"payload": payload, "toolVersion": __version__}, sort_keys=True))
    # regenerate files even on cache hit, deterministically from the payload
    _emit_files(config.command, payload, out_dir)
    _atomic_write(os.path.join(out_dir, f"{config.command}-result.json"),
                  envelope.to_json())
    return envelope


def _emit_files(cmd: str, payload: Dict, out: str) -> None:
    """CSV/PNG emission from a (possibly cached) payload."""
    if cmd == "spectrum":
        lines = ["arcStartRadians,arcEndRadians"]
        lines += [f"{lo:.12g},{hi:.12g}" for lo, hi in payload["arcs"]]
        _write(os.path.join(out, "spectrum.csv"), "\n".join(lines) + "\n")
        fig.spectrum_figure(payload["arcs"],
                            os.path.join(out, "spectrum.png"))
    elif cmd == "lyapunov":
        lines = ["zetaRadians,gamma,stderr"]
        lines += [f"{z:.12g},{g:.12g},{e:.12g}" for z, g, e in
                  zip(payload["zetas"], payload["gamma"],
                      payload["stderr"])]
        _write(os.path.join(out, "lyapunov.csv"), "\n".join(lines) + "\n")
        fig.curve_figure(np.array(payload["zetas"]),
                         np.array(payload["gamma"]), r"$\gamma$",
                         os.path.join(out, "lyapunov.png"),
                         stderr=np.array(payload["stderr"]))
    elif cmd == "rotation":
        lines = ["zetaRadians,rho"]
        lines += [f"{z:.12g},{r:.12g}" for z, r in
                  zip(payload["zetas"], payload["rho"])]
        _write(os.path.join(out, "rotation.csv"), "\n".join(lines) + "\n")
        fig.curve_figure(np.array(payload["zetas"]),
                         np.array(payload["rho"]), r"$\rho$",
                         os.path.join(out, "rotation.png"))
    elif cmd == "dos":
        grid, cdf = payload["dos"]["grid"], payload["dos"]["cdf"]
        lines = ["zetaRadians,cdf"]
        lines += [f"{a:.12g},{c:.12g}" for a, c in zip(grid, cdf)]
        _write(os.path.join(out, "dos.csv"), "\n".join(lines) + "\n")
        fig.dos_figure(np.array(grid), np.array(cdf),
                       os.path.join(out, "dos.png"))
    elif cmd == "thouless":
        _write(os.path.join(out, "thouless.csv"),
               "modulus,gammaSzego,thoulessIntegral,gap\n"
               f"{payload['modulus']:.12g},{payload['lhs']:.12g},"
               f"{payload['rhs']:.12g},{payload['gap']:.12g}\n")
    elif cmd == "holder":
        _write(os.path.join(out, "holder.csv"), payload["csv"])
        fig.holder_figure(payload["rows"],
                          os.path.join(out, "holder.png"))
    elif cmd == "kam":
        _write(os.path.join(out, "kam.json"),
               json.dumps(payload["states"], indent=2))
        steps, norms = [], []
        lines = ["step,epsilonMeasured,degB"]
        for st in payload["states"]:
            eps = st["diagnostics"]["epsilonMeasured"]
            steps.append(st["j"])
            norms.append(eps)
            lines.append(f"{st['j']},{eps:.12g},"
                         f"{' '.join(str(c) for c in st['degB'])}")
        _write(os.path.join(out, "kam.csv"), "\n".join(lines) + "\n")
        if steps:
            fig.decay_figure(steps, norms, r"$\|f_j\|$",
                             os.path.join(out, "kam.png"))
    elif cmd == "jl":
        _write(os.path.join(out, "jl.csv"), payload["jlCsv"])
        _write(os.path.join(out, "window.csv"),
               window_reports_to_csv([payload["window"]]))
        fig.scatter_figure(payload["ratio"], payload["FAbs"],
                           "norm ratio", "|F^phi|",
                           os.path.join(out, "jl.png"))
    elif cmd == "gordon":
        _write(os.path.join(out, "gordon.csv"), payload["csv"])
        _write(os.path.join(out, "sc_region.json"),
               json.dumps(payload["scArcs"], indent=2))
    elif cmd == "suite":
        lines = ["check,pass,detail"]
        lines += [f"{r['name']},{int(r['ok'])},{r['detail']}"
                  for r in payload["rows"]]
        _write(os.path.join(out, "suite.csv"), "\n".join(lines) + "\n")


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="szego-lab",
        description="numerical experiments on quasi-periodic CMV operators")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="key=value config file")
    parser.add_argument("--out", default="szego-out", help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="parallelism degree (results are independent of it)")
    parser.add_argument("--no-cache", action="store_true",
                        help="ignore and do not update the payload cache")
    args = parser.parse_args(argv)
    try:
        with open(args.config) as f:
            text = f.read()
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.threads is not None:
        text += f"\nthreads={args.threads}\n"
    try:
        config = validate(text, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        envelope = run(config, out_dir=args.out, use_cache=not args.no_cache)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ComputationError as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return 3
    print(f"{config.command}: wrote {args.out} "
          f"(config {envelope.configHash[:12]}, {envelope.wallTime:.2f}s)")
    if config.command == "suite" and not envelope.payload["allPass"]:
        failed = [r["name"] for r in envelope.payload["rows"] if not r["ok"]]
        print(f"suite failures: {', '.join(failed)}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
