"""Command-line front end.

Subcommands: price, converge, fee, controls, mc-validate, kernel-diag.
Every CSV starts with the effective configuration as '#' comment lines.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration
error (including a missing config file), 3 grid condition violated,
4 fee bracket without a sign change, 5 controls not available.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import kernel
from .engine import SolverSettings, control_map, fair_fee, load_solution, solve
from .errors import BracketError, ConfigError, GridConditionError, MissingControlsError
from .grid import GridConfig, build_grid
from .mc_validator import RNG_NAME, McConfig, replay
from .model import Contract, Kou, Merton, ModelParams, comparable_rate

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "model": {
        "sigma_z": 0.3, "jump": "merton", "lam": 0.1,
        "merton": {"nu": -0.9, "varsigma": 0.45},
        "kou": {"p_u": 0.3445, "eta1": 3.0465, "eta2": 3.0775},
        "rho": 0.2, "delta": 0.0349, "theta": 0.05, "sigma_r": 0.02, "beta": 0.02, "r0": 0.05,
        "tag": None,
    },
    "contract": {"T": 5.0, "z0": 100.0, "mu": 0.1, "c": 1e-8, "C_r": None},
    "grid": {"level": 0, "levels": [0, 1, 2], "w_min": None, "w_max": None,
             "r_min": -0.2, "r_max": 0.3, "pad_mult": 2, "a_spacing": "uniform",
             "strict": False},
    "run": {"eps": 1e-6, "eps1": 1e-6, "alpha_cap": 64, "tilt": 0.5,
            "compensator": "fourier", "store_controls": None, "tol": 1e-6,
            "bracket": [0.0, 0.2], "max_iter": 30, "t": 5.0, "r_spot": None,
            "out": None, "save_solution": None, "threads": None},
    "mc": {"n_paths": 20000, "substeps": 20, "seed": 0, "antithetic": True},
}


class UsageError(Exception):
    pass


class ConfigFileMissing(FileNotFoundError):
    pass


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key '{path}{k}'")
        if isinstance(base[k], dict) and k not in ("merton", "kou"):
            if not isinstance(v, dict):
                raise ConfigError(f"config key '{path}{k}' must be a mapping")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        elif isinstance(base[k], dict):
            out[k] = {**base[k], **v}
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    raw: dict

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        data = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigFileMissing(path)
            data = yaml.safe_load(p.read_text()) or {}
            if not isinstance(data, dict):
                raise ConfigError("config must be a mapping")
            ver = data.get("schema_version", SCHEMA_VERSION)
            if ver != SCHEMA_VERSION:
                raise ConfigError(f"unsupported schema_version {ver}")
        cfg = cls(_merge(DEFAULTS, data))
        cfg.validate()
        return cfg

    # views -----------------------------------------------------------------
    def params(self) -> ModelParams:
        m = dict(self.raw["model"])
        kind = m.pop("jump")
        mer, kou = m.pop("merton"), m.pop("kou")
        m.pop("tag")
        if kind in (None, "none"):
            return ModelParams(**{**m, "lam": 0.0}, jump=None)
        spec = {"merton": lambda: Merton(**mer), "kou": lambda: Kou(**kou)}.get(kind)
        if spec is None:
            raise ConfigError(f"unknown jump model '{kind}'")
        return ModelParams(**m, jump=spec())

    def contract(self) -> Contract:
        c = self.raw["contract"]
        return Contract.standard(c["T"], c["z0"], c["mu"], c["c"], withdraw_rate_absolute=c["C_r"])

    def grid(self, level: int | None = None):
        g = self.raw["grid"]
        level = g["level"] if level is None else level
        kw = {k: g[k] for k in ("r_min", "r_max", "pad_mult", "a_spacing", "strict")}
        kw.update({k: g[k] for k in ("w_min", "w_max") if g[k] is not None})
        contract = self.contract()
        return build_grid(GridConfig.for_level(level, contract, **kw), contract)

    def settings(self, store_controls: bool = False) -> SolverSettings:
        r = self.raw["run"]
        return SolverSettings(eps=r["eps"], eps1=r["eps1"], alpha_cap=r["alpha_cap"], tilt=r["tilt"],
                              compensator=r["compensator"], store_controls=store_controls,
                              workers=r["threads"])

    def mc(self) -> McConfig:
        m = self.raw["mc"]
        return McConfig(n_paths=m["n_paths"], substeps=m["substeps"], seed=m["seed"],
                        antithetic=m["antithetic"], workers=self.raw["run"]["threads"] or 1)

    def tag(self) -> str:
        m = self.raw["model"]
        if m["tag"]:
            return m["tag"]
        jump = {"merton": "JD", "kou": "KOU"}.get(m["jump"], "GBM")
        return f"{jump}-{'C' if m['sigma_r'] == 0 else 'V'}"

    def validate(self) -> None:
        """Build every object once so bad values fail before any compute."""
        self.params()
        self.contract()
        r = self.raw["run"]
        if not r["tol"] > 0:
            raise UsageError("tol must be positive")
        if r["compensator"] not in kernel.COMPENSATORS:
            raise ConfigError(f"compensator must be one of {kernel.COMPENSATORS}")
        if not (r["eps"] > 0 and r["eps1"] > 0):
            raise ConfigError("eps and eps1 must be positive")
        lo, hi = r["bracket"]
        if not lo < hi:
            raise ConfigError("fee bracket must be increasing")
        self.mc()
        self.grid()

    def echo(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


# CSV helpers ----------------------------------------------------------------

def write_csv(rows: list[dict], cfg: RunConfig, out: str | None) -> None:
    buf = io.StringIO()
    for line in cfg.echo().splitlines():
        buf.write(f"# {line}\n")
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
    text = buf.getvalue()
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def read_csv(path) -> tuple[dict, list[dict]]:
    """Parse a CSV written by this tool into (config echo, rows)."""
    lines = Path(path).read_text().splitlines()
    echo = [ln[2:] for ln in lines if ln.startswith("# ")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return yaml.safe_load("\n".join(echo)) or {}, list(csv.DictReader(body))


# commands -------------------------------------------------------------------

def _price_row(level, sol, prev):
    ratio = float("nan")
    if len(prev) >= 2 and sol.price != prev[-1]:
        ratio = (prev[-1] - prev[-2]) / (sol.price - prev[-1])
    k = sol.kernel
    return {"level": level, "price": sol.price, "ratio": ratio, "alpha_eps": k.alpha,
            "defect": k.defect, "seconds": round(sol.seconds, 3)}


def cmd_price(cfg: RunConfig, args) -> int:
    level = cfg.raw["grid"]["level"]
    g = cfg.grid(level)
    save = cfg.raw["run"]["save_solution"]
    store = bool(cfg.raw["run"]["store_controls"])
    sol = solve(g, cfg.params(), cfg.contract(), cfg.settings(store))
    if save:
        sol.save(save)
    write_csv([_price_row(level, sol, [])], cfg, cfg.raw["run"]["out"])
    return 0


def cmd_converge(cfg: RunConfig, args) -> int:
    rows, prices = [], []
    for level in cfg.raw["grid"]["levels"]:
        sol = solve(cfg.grid(level), cfg.params(), cfg.contract(), cfg.settings())
        rows.append(_price_row(level, sol, prices))
        prices.append(sol.price)
        logging.getLogger(__name__).info("level %d price %.6f", level, sol.price)
    write_csv(rows, cfg, cfg.raw["run"]["out"])
    return 0


def cmd_fee(cfg: RunConfig, args) -> int:
    r = cfg.raw["run"]
    fee, n = fair_fee(cfg.grid(), cfg.params(), cfg.contract(), tol=r["tol"],
                      settings=cfg.settings(), bracket=tuple(r["bracket"]), max_iter=r["max_iter"])
    write_csv([{"model_tag": cfg.tag(), "T": cfg.raw["contract"]["T"], "beta_f": fee,
                "iterations": n}], cfg, r["out"])
    return 0


def _solution_with_controls(cfg: RunConfig, args):
    p, c, g = cfg.params(), cfg.contract(), cfg.grid()
    if getattr(args, "solution", None):
        s = cfg.settings()
        kw = kernel.select_weights(g, p, g.dtau, s.eps, s.eps1, s.alpha_cap, s.tilt, s.compensator)
        return load_solution(args.solution, g, p, c, kw)
    store = cfg.raw["run"]["store_controls"]
    return solve(g, p, c, cfg.settings(True if store is None else bool(store)))


def cmd_controls(cfg: RunConfig, args) -> int:
    sol = _solution_with_controls(cfg, args)
    r = cfg.raw["run"]
    r_spot = r["r_spot"] if r["r_spot"] is not None else comparable_rate(sol.params, sol.contract.T)
    cm = control_map(sol, r["t"], r_spot)
    rows = [{"z": float(z), "a": float(a), "gamma_star": float(gm), "branch": str(b)}
            for z, a, gm, b in zip(cm["z"], cm["a"], cm["gamma_star"], cm["branch"])]
    write_csv(rows, cfg, r["out"])
    return 0


def cmd_mc_validate(cfg: RunConfig, args) -> int:
    sol = _solution_with_controls(cfg, args)
    mc = cfg.mc()
    t0 = time.perf_counter()
    res = replay(sol, mc)
    print(f"mean {res.mean:.4f}  se {res.std_error:.4f}  95% CI [{res.ci_low:.4f}, {res.ci_high:.4f}]"
          f"  pde {sol.price:.4f}", file=sys.stderr)
    write_csv([{"level": cfg.raw["grid"]["level"], "pde_price": sol.price, "mc_mean": res.mean,
                "std_error": res.std_error, "ci_low": res.ci_low, "ci_high": res.ci_high,
                "n_paths": res.n_paths, "substeps": mc.substeps, "seed": mc.seed, "rng": RNG_NAME,
                "seconds": round(time.perf_counter() - t0, 3)}], cfg, cfg.raw["run"]["out"])
    return 0


def cmd_kernel_diag(cfg: RunConfig, args) -> int:
    g, p, s = cfg.grid(), cfg.params(), cfg.settings()
    t0 = time.perf_counter()
    kw = kernel.select_weights(g, p, g.dtau, s.eps, s.eps1, s.alpha_cap, s.tilt, s.compensator)
    print(f"kernel selected in {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    write_csv([{"level": cfg.raw["grid"]["level"], "jump": cfg.raw["model"]["jump"],
                "Nd": g.Nd, "Kd": g.Kd, "alpha_eps": kw.alpha, "defect": kw.defect,
                "defect_bound": s.eps * g.dtau / g.T, "residual": kw.residual,
                "sum_error": kw.sum_error}], cfg, cfg.raw["run"]["out"])
    return 0


COMMANDS = {"price": cmd_price, "converge": cmd_converge, "fee": cmd_fee,
            "controls": cmd_controls, "mc-validate": cmd_mc_validate,
            "kernel-diag": cmd_kernel_diag}


def _positive(x: str) -> float:
    v = float(x)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gmwb", description="GMWB pricing with an epsilon-monotone "
                                 "Fourier scheme under jumps and a Vasicek rate.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults: validation setup)")
    common.add_argument("--level", type=int, help="refinement level override")
    common.add_argument("--out", help="CSV output path (default stdout)")
    common.add_argument("--seed", type=int, help="Monte Carlo seed override")
    common.add_argument("--threads", type=int, help="FFT / Monte Carlo worker count")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "fee":
            sp.add_argument("--tol", type=_positive, help="relative price tolerance")
        if name == "converge":
            sp.add_argument("--levels", type=int, nargs="+")
        if name in ("controls", "mc-validate"):
            sp.add_argument("--solution", help="saved solution (.npz) instead of solving")
            sp.add_argument("--t", type=float, help="calendar time of the control map")
            sp.add_argument("--r-spot", type=float, help="spot rate of the control map")
        if name == "mc-validate":
            sp.add_argument("--paths", type=int)
    return ap


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    raw = copy.deepcopy(cfg.raw)
    if args.level is not None:
        raw["grid"]["level"] = args.level
    if args.out is not None:
        raw["run"]["out"] = args.out
    if args.seed is not None:
        raw["mc"]["seed"] = args.seed
    if args.threads is not None:
        raw["run"]["threads"] = args.threads
    for key, dest in (("tol", ("run", "tol")), ("levels", ("grid", "levels")),
                      ("t", ("run", "t")), ("r_spot", ("run", "r_spot")),
                      ("paths", ("mc", "n_paths"))):
        v = getattr(args, key, None)
        if v is not None:
            raw[dest[0]][dest[1]] = v
    out = RunConfig(raw)
    out.validate()
    return out


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(RunConfig.load(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except ConfigFileMissing as e:
        print(f"error: config file not found: {e.args[0]}", file=sys.stderr)
        return 2
    except UsageError as e:
        ap.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except GridConditionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except BracketError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except MissingControlsError as e:
        print(f"error: {e}", file=sys.stderr)
        return 5
    except ConfigError as e:
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # numerical failures
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
