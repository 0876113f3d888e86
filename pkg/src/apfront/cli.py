"""Command-line experiment runner.

Every command reads parameters from an optional INI-style config file (sections
``[potential]`` and ``[run]``) overridden by command-line flags, writes CSV/JSON
artifacts into ``--out`` and prints a one-line JSON summary. Exit status: 0 on
success, 1 on domain errors, 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ApfrontError, ConfigError
from .potentials import GOLDEN, almost_mathieu, build_potential, parse_potential_flag

SCHEMA = 1

# Physical and numerical defaults in one place.
DEFAULTS = {
    "theta_level": 0.25,  # level defining the front position N(t)
    "edge_margin": 1e-3,  # decaying solutions require E >= lambda1 + margin
    "boundary_margin": 50,  # sites kept between a front and the right edge
    "dt_rule": "0.1/(4+sup c)",  # RK4 step bound
    "edge_tol": 1e-8,
    "edge_N0": 64,
    "edge_N_cap": 1 << 17,
    "n_iters": 100_000,
    "n_phases": 8,
    "ids_N": 2000,
    "speed_n_iters": 20_000,
    "speed_grid": 48,
    "underline_deltas": "0.2,0.05,0.0125",
    "underline_L_floor": 1e-3,
    "underline_ratio_cap": 1e4,
    "sim_T": 200.0,
    "sim_window": 1200,
    "pullback_N_w": 400,
    "pullback_i_max": 10,
    "pullback_T": 30.0,
    "critical_k_max": 20,
    "kam_strip": 0.5,
    "kam_c_small": 1e9,
    "seed": 0,
}

COMMANDS = (
    "spectrum", "lyapunov", "rotation", "ids", "speed", "simulate",
    "pullback-front", "critical-front", "kam-reduce", "amo-verify",
)


# config


def _number(text: str, where: str):
    try:
        v = float(text)
    except ValueError as exc:
        raise ConfigError(f"{where}: expected a number, got {text!r}") from exc
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


def _numbers(text: str, where: str):
    return [_number(x.strip(), where) for x in text.split(",") if x.strip()]


def _line_of(path: Path, section: str, key: str) -> int:
    cur = None
    for i, line in enumerate(path.read_text().splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
        elif cur == section and s.split("=")[0].strip().lower() == key.lower():
            return i
    return 0


def read_config(path: str | Path) -> dict:
    """Parse a config file into {"potential": {...}, "run": {...}}."""
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (E, C)
    try:
        cp.read_string(path.read_text(), source=str(path))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = [s for s in cp.sections() if s not in ("potential", "run")]
    if unknown:
        raise ConfigError(f"{path}: unknown section [{unknown[0]}]")
    out = {"potential": {}, "run": {}}
    for sec in ("potential", "run"):
        if not cp.has_section(sec):
            continue
        for key, raw in cp.items(sec):
            where = f"{path}:{_line_of(path, sec, key)} [{sec}] {key}"
            if key in ("kind", "command", "out"):
                out[sec][key] = raw.strip()
            elif key == "coeffs":
                out[sec][key] = _parse_coeff_text(raw, where)
            elif "," in raw:
                out[sec][key] = _numbers(raw, where)
            else:
                out[sec][key] = _number(raw.strip(), where)
            out[sec].setdefault("_where", {})[key] = where
    return out


def _parse_coeff_text(raw: str, where: str) -> dict:
    """``k:value`` pairs separated by ';', k a comma list, value real or complex."""
    coeffs = {}
    for item in raw.split(";"):
        if not item.strip():
            continue
        k, sep, v = item.partition(":")
        if not sep:
            raise ConfigError(f"{where}: expected k:value, got {item.strip()!r}")
        try:
            coeffs[tuple(int(x) for x in k.split(",") if x.strip())] = complex(v.strip().replace(" ", ""))
        except ValueError as exc:
            raise ConfigError(f"{where}: bad coefficient {item.strip()!r}") from exc
    return coeffs


def potential_from_table(table: dict, strict: bool = True):
    table = {k: v for k, v in table.items() if k != "_where"}
    if table.get("kind") == "amo":
        return almost_mathieu(
            float(table.get("kappa", 0.0)), float(table.get("C", table.get("c", 0.0))),
            float(table.get("alpha", GOLDEN)), float(table.get("phase", 0.0)), strict=strict,
        )
    if "values" in table and not isinstance(table["values"], list):
        table["values"] = [table["values"]]
    return build_potential(table, strict=strict)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# output


class Artifacts:
    def __init__(self, out: str | None, cfg: dict):
        self.dir = Path(out) if out else None
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.written: list[str] = []

    def header(self) -> str:
        return f"# apfront {__version__} config_hash={self.hash} seed={self.cfg['run']['seed']}\n"

    def meta(self) -> dict:
        return {"version": __version__, "config_hash": self.hash, "seed": self.cfg["run"]["seed"],
                "schema": SCHEMA, "command": self.cfg["run"]["command"]}

    def csv(self, name: str, text: str):
        self._write(name, self.header() + text)

    def json(self, name: str, payload: dict) -> dict:
        doc = dict(self.meta(), **payload)
        self._write(name, json.dumps(_clean(doc), sort_keys=True, indent=1) + "\n")
        return doc

    def _write(self, name, text):
        if self.dir is None:
            return
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / name).write_text(text)
        self.written.append(name)


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _energies(run: dict) -> list[float]:
    if "E" in run:
        E = run["E"]
        return [float(e) for e in (E if isinstance(E, list) else [E])]
    if "E_min" in run and "E_max" in run:
        return list(np.linspace(float(run["E_min"]), float(run["E_max"]), int(run.get("E_num", 20))))
    raise ConfigError("energies needed: give E or E_min/E_max/E_num")


def _get(run, key, default=None):
    return run.get(key, DEFAULTS.get(key, default))


# commands


def cmd_spectrum(p, run, art):
    from .spectrum import spectral_edge

    edge = spectral_edge(p, float(_get(run, "tol", DEFAULTS["edge_tol"])), int(_get(run, "N0", DEFAULTS["edge_N0"])),
                         int(_get(run, "N_cap", DEFAULTS["edge_N_cap"])))
    art.csv("spectrum.csv", edge.to_csv())
    return art.json("spectrum.json", {"lambda1": edge.lambda1, "extrapolation_error": edge.extrapolation_error,
                                      "checks": edge.checks})


def cmd_lyapunov(p, run, art):
    from .cocycle import LyapunovCurve, lyapunov

    Es = _energies(run)
    n, ph = int(_get(run, "n_iters")), int(_get(run, "n_phases"))
    ests = [lyapunov(E, p, n, ph) for E in Es]
    curve = LyapunovCurve(np.array(Es), np.array([e.value for e in ests]),
                          np.array([e.std_error for e in ests]), n, ests[0].phases_averaged)
    text = curve.to_csv()
    art.csv("lyapunov.csv", text)
    return art.json("lyapunov.json", {"E": Es, "L": curve.L})


def cmd_rotation(p, run, art):
    from .cocycle import rotation_number

    Es = _energies(run)
    rows = ["E,rho,k"]
    rhos = []
    for E in Es:
        rho = rotation_number(E, p, int(_get(run, "n_iters")), int(run.get("n_phases", 1))).rho
        rhos.append(rho)
        rows.append(f"{E!r},{rho!r},{1.0 - 2.0 * rho!r}")
    art.csv("rotation.csv", "\n".join(rows) + "\n")
    return art.json("rotation.json", {"E": Es, "rho": rhos})


def cmd_ids(p, run, art):
    from .spectrum import ids, ids_curve_csv

    pts = [ids(p, E, int(_get(run, "N", DEFAULTS["ids_N"]))) for E in _energies(run)]
    art.csv("ids.csv", ids_curve_csv(pts))
    return art.json("ids.json", {"E": [q.E for q in pts], "k": [q.k for q in pts]})


def cmd_speed(p, run, art):
    from .frontspeed import minimal_speed

    rep = minimal_speed(p, n_iters=int(run.get("n_iters", DEFAULTS["speed_n_iters"])),
                        n_phases=int(_get(run, "n_phases")), grid_size=int(run.get("grid_size", DEFAULTS["speed_grid"])))
    art.csv("speed_curve.csv", rep.curve_csv())
    return art.json("speed.json", rep.summary())


def cmd_simulate(p, run, art):
    from .kpp_sim import spreading_speed

    d = spreading_speed(p, float(_get(run, "T", DEFAULTS["sim_T"])), int(_get(run, "window", DEFAULTS["sim_window"])),
                        float(_get(run, "theta_level")))
    a, _ = d.extra["window"]
    u = d.extra["final_state"]
    rows = ["t,n,u"] + [f"{float(d.times[-1])!r},{a + i},{float(v)!r}" for i, v in enumerate(u)]
    art.csv("final_state.csv", "\n".join(rows) + "\n")
    return art.json("simulate.json", json.loads(d.to_json()))


def cmd_pullback(p, run, art):
    from .kpp_sim import build_super_sub, pullback_front

    if "E" not in run:
        raise ConfigError("pullback-front needs E")
    pair = build_super_sub(float(run["E"]), p, int(_get(run, "N_w", DEFAULTS["pullback_N_w"])))
    traj, d = pullback_front(pair, p, int(_get(run, "i_max", DEFAULTS["pullback_i_max"])),
                             float(_get(run, "T", DEFAULTS["pullback_T"])), float(_get(run, "theta_level")))
    art.csv("pullback_trajectory.csv", traj.to_csv(int(run.get("save_stride", 10))))
    payload = json.loads(d.to_json())
    payload.update(epsilon=pair.epsilon, kappa=pair.kappa, A=pair.amplitude_A, delta=pair.delta,
                   predicted_speed=d.extra["predicted_speed"], min_time_increment=d.extra["min_time_increment"])
    return art.json("pullback.json", payload)


def cmd_critical(p, run, art):
    from .kpp_sim import critical_front_times

    theta = float(_get(run, "theta_level"))
    extra = {"t_cap": float(run["t_cap"])} if "t_cap" in run else {}
    s = critical_front_times(p, theta, int(_get(run, "k_max", DEFAULTS["critical_k_max"])), **extra)
    art.csv("critical_times.csv", "k,s_k\n" + "".join(f"{k},{float(v)!r}\n" for k, v in enumerate(s, 1)))
    return art.json("critical.json", {"theta_level": theta, "s_k": s})


def cmd_kam(p, run, art):
    from .kam_reduce import KamConfig, positive_solution_from_conjugacy, reduce_at_edge

    cfg = KamConfig(strip=float(_get(run, "strip", DEFAULTS["kam_strip"])),
                    c_small=float(_get(run, "c_small", DEFAULTS["kam_c_small"])))
    cert = reduce_at_edge(p, float(run["E"]) if "E" in run else None, cfg)
    payload = json.loads(cert.to_json())
    if cert.parabolic:
        sol = positive_solution_from_conjugacy(cert, p, n_sites=int(run.get("n_sites", 10_000)))
        art.csv("positive_solution.csv", sol.to_csv())
        payload["positive_solution"] = {"residual_max": sol.residual_max, "inf_u": sol.inf_u, "case": sol.case}
    return art.json("kam.json", payload)


def cmd_amo_verify(p, run, art):
    from .cocycle import lyapunov
    from .frontspeed import edge_of, underline_speed

    kappa = float(run.get("kappa", 2.0))
    lam = edge_of(p)
    n, ph = int(run.get("n_iters", 1_000_000)), int(run.get("n_phases", 16))
    L_edge = lyapunov(lam, p, n, ph).value
    uw, infinite, Ls, L0, _ = underline_speed(p, lam, int(run.get("edge_n_iters", 200_000)), ph)
    log_k = math.log(abs(kappa))
    payload = {"kappa": kappa, "lambda1": lam, "L_at_edge": L_edge, "log_kappa": log_k,
               "abs_L_minus_log_kappa": abs(L_edge - max(0.0, log_k)), "edge_L": Ls,
               "underline_w": None if infinite else uw, "underline_w_infinite": infinite}
    if log_k > 0:
        payload["lambda1_over_log_kappa"] = lam / log_k
        payload["underline_w_relative_error"] = None if infinite else abs(uw - lam / log_k) / (lam / log_k)
    return art.json("amo_verify.json", payload)


HANDLERS = {
    "spectrum": cmd_spectrum, "lyapunov": cmd_lyapunov, "rotation": cmd_rotation, "ids": cmd_ids,
    "speed": cmd_speed, "simulate": cmd_simulate, "pullback-front": cmd_pullback,
    "critical-front": cmd_critical, "kam-reduce": cmd_kam, "amo-verify": cmd_amo_verify,
}

# commands that only need a bounded potential
NON_STRICT = {"spectrum", "lyapunov", "rotation", "ids", "kam-reduce"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="apfront", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"apfront {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI-style config file")
        sp.add_argument("--potential", help="constant:c0 | periodic:v1,v2,... | amo:kappa,C[,alpha]")
        sp.add_argument("--out", help="output directory for artifacts")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any [run] parameter")
        for flag in ("E", "E_min", "E_max", "E_num", "n_iters", "n_phases", "N", "T", "window",
                     "theta_level", "k_max", "i_max", "N_w", "kappa", "C", "alpha", "tol"):
            sp.add_argument(f"--{flag}", dest=f"flag_{flag}", help=argparse.SUPPRESS)
    return ap


def resolve(args) -> tuple[dict, dict]:
    file_cfg = read_config(args.config) if args.config else {"potential": {}, "run": {}}
    run = {k: v for k, v in file_cfg["run"].items() if k != "_where"}
    for item in args.set:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        run[k.strip()] = _numbers(v, f"--set {k}") if "," in v else _number(v.strip(), f"--set {k}")
    for k, v in vars(args).items():
        if k.startswith("flag_") and v is not None:
            key = k[5:]
            run[key] = _numbers(v, f"--{key}") if "," in v else _number(v, f"--{key}")
    pot = dict(file_cfg["potential"])
    pot.pop("_where", None)
    if args.command == "amo-verify":
        pot = {"kind": "amo", "kappa": run.get("kappa", 2.0), "C": run.get("C", 5.0),
               "alpha": run.get("alpha", GOLDEN), "phase": 0.0}
    elif args.potential:
        pot = {"shorthand": args.potential}
    elif not pot:
        raise ConfigError("no potential given: use --potential or a [potential] section")
    run["command"] = args.command
    run["seed"] = args.seed if args.seed is not None else int(run.get("seed", DEFAULTS["seed"]))
    return pot, run


def make_potential(pot: dict, strict: bool):
    if "shorthand" in pot:
        return parse_potential_flag(pot["shorthand"], strict=strict)
    return potential_from_table(pot, strict=strict)


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        pot, params = resolve(args)
        strict = args.command not in NON_STRICT
        p = make_potential(pot, strict)
        out = args.out or params.get("out")
        np.random.seed(params["seed"])
        art = Artifacts(out, {"potential": pot, "run": params})
        doc = HANDLERS[args.command](p, params, art)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ApfrontError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(_clean(doc), sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run())
