"""Command-line driver for the experiment families.

Exit codes: 0 success, 1 identity violation, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from . import __version__

log = logging.getLogger("ncphi4")

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2
OUTPUT_DIR_ENV = "NCPHI4_OUTPUT_DIR"
STOCHASTIC = {"lve"}
MAX_SEED = 2**64


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    options: dict
    seed: int | None = None
    samples: int | None = None
    output: str | None = None
    fmt: str = "csv"
    workers: int = 1
    meta: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        # worker count is deliberately absent: output must not depend on it
        d = {"command": self.command, "version": __version__}
        d.update({k: _jsonable(v) for k, v in sorted(self.options.items())})
        if self.seed is not None:
            d["seed"] = self.seed
        if self.samples is not None:
            d["samples"] = self.samples
        d.update(self.meta)
        return d


def _jsonable(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, complex):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


# --- parsing helpers --------------------------------------------------------------

def _rational(s: str):
    """Exact Fraction for decimal or p/q input."""
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError) as e:
        raise argparse.ArgumentTypeError(f"not a rational number: {s!r}") from e


def _lambda(s: str):
    try:
        z = complex(s.replace(" ", ""))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"not a coupling: {s!r}") from e
    return z.real if z.imag == 0 else z


def _int_list(s: str) -> list[int]:
    """'1-20', '1,2,5' or '3'."""
    out = []
    for part in s.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out += list(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty integer list")
    return out


def _float_list(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _pade(s: str) -> tuple[int, int]:
    try:
        p, q = (int(x) for x in s.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError("pade expects p,q") from e
    return p, q


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def read_config_file(path: str) -> dict[str, str]:
    """Plain key=value lines; '#' starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for i, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


# --- output -------------------------------------------------------------------------

def render(cfg: RunConfig, rows: list[dict], columns: list[str], extra: dict | None = None) -> str:
    if cfg.fmt == "json":
        data = {"rows": rows} if extra is None else dict(extra, rows=rows)
        return json.dumps({"meta": _jsonable_tree(cfg.metadata()), "data": _jsonable_tree(data)}, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", quoting=csv.QUOTE_MINIMAL,
                       extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: _csv_cell(r.get(k, "")) for k in columns})
    return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, Fraction):
        return repr(float(v))
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(_jsonable_tree(v))
    return v


def _jsonable_tree(x):
    if isinstance(x, dict):
        return {str(k): _jsonable_tree(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable_tree(v) for v in x]
    if isinstance(x, Fraction):
        return {"numerator": x.numerator, "denominator": x.denominator, "value": float(x)}
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    if hasattr(x, "item") and not isinstance(x, (str, bytes)):
        return _jsonable_tree(x.item())
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def output_path(cfg: RunConfig) -> Path | None:
    base = os.environ.get(OUTPUT_DIR_ENV)
    if cfg.output == "-":
        return None
    if cfg.output:
        p = Path(cfg.output)
        return Path(base) / p if base and not p.is_absolute() else p
    if base:
        return Path(base) / f"{cfg.command}.{cfg.fmt}"
    return None


def emit(cfg: RunConfig, text: str):
    path = output_path(cfg)
    if path is None:
        sys.stdout.write(text)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


# --- commands ---------------------------------------------------------------------------

def _params(opts: dict, cutoff=None):
    from .params import ModelParams

    return ModelParams(theta=opts["theta"], mu2=opts["mu2"], omega=opts.get("omega", Fraction(1)),
                       cutoff=opts["cutoff"] if cutoff is None else cutoff)


def cmd_counterterms(cfg: RunConfig) -> int:
    from .propagator import asymptotic_constant, counterterm_table

    o = cfg.options
    if o["cutoff"] < 1:
        raise ConfigError("cutoff must be >= 1")
    table = counterterm_table(_params(o))
    rows = [{"m": m, "T_m": float(t)} for m, t in enumerate(table.T)]
    summary = {"T2": table.T2, "T3": table.T3, "exact": table.exact}
    if o.get("report_asymptotic"):
        closed, quad = asymptotic_constant()
        ratio = float(table.T2) / o["cutoff"]
        # the constant refers to theta = 4, mu2 = 0 normalization
        summary.update(T2_over_cutoff=ratio, asymptotic_constant=closed, constant_quadrature=quad,
                       relative_deviation=abs(ratio - closed) / closed)
        log.info("T2/cutoff = %.6f, constant = %.6f", ratio, closed)
    cfg.meta["summary"] = _jsonable_tree({k: v for k, v in summary.items() if k not in ("T2", "T3")})
    emit(cfg, render(cfg, rows, ["m", "T_m"], summary))
    return EXIT_OK


def cmd_cancellation(cfg: RunConfig) -> int:
    from .oracle import BOOKKEEPING_ORDER2_FACTORS, grouped_order1, grouped_order2

    o = cfg.options
    order, conv = o["order"], o["convention"]
    limit = 30 if order == 1 else 10
    if any(L < 1 or L > limit for L in o["cutoffs"]):
        raise ConfigError(f"order {order} cancellation runs for cutoffs 1..{limit}")
    factors = dict(BOOKKEEPING_ORDER2_FACTORS)
    if o.get("perturb_multiplicity"):
        if order != 2 or conv != "bookkeeping":
            raise ConfigError("--perturb-multiplicity applies to order 2 in the bookkeeping convention")
        factors["B"] -= 1
    rows, failed = [], []
    for L in o["cutoffs"]:
        p = _params(o, L)
        g = grouped_order1(p, conv) if order == 1 else grouped_order2(p, conv, factors)
        res = g.total if conv == "bookkeeping" else g.divergent_total
        row = {"cutoff": L, "order": order, "convention": conv, "residual": res, "zero": res == 0}
        for k, v in g.values.items():
            row[f"G_{k}"] = v
        rows.append(row)
        if res != 0:
            failed.append(L)
            print(f"ncphi4: cancellation fails at cutoff {L}: residual {res}", file=sys.stderr)
    cols = ["cutoff", "order", "convention", "G_A", "G_B", "G_C", "residual", "zero"]
    if cfg.fmt == "csv":
        rows = [dict(r, residual=str(r["residual"]), **{c: str(r[c]) for c in cols if c.startswith("G_")})
                for r in rows]
    cfg.meta["factors"] = factors if order == 2 and conv == "bookkeeping" else None
    emit(cfg, render(cfg, rows, cols, {"all_zero": not failed, "failed": failed}))
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_lve(cfg: RunConfig) -> int:
    from .lve import in_borel_domain, logz_lve
    from .oracle import EXACT_LIMIT, logz_series
    from .propagator import covariance

    o = cfg.options
    lam = o["lam"]
    if not 1 <= o["nmax"] <= 3:
        raise ConfigError("nmax must lie in 1..3")
    if cfg.samples < 1000:
        raise ConfigError("samples must be at least 1000")
    domain = in_borel_domain(lam)
    cfg.meta["in_borel_domain"] = domain
    if not domain:
        log.warning("lambda=%s lies outside the Borel domain |Arg sqrt(lambda)| <= pi/4", lam)
    params = _params(o)
    cov = covariance(params)
    res = logz_lve(lam, o["nmax"], cov, cfg.samples, cfg.seed, workers=cfg.workers)
    rows = []
    for rep in res.trees:
        rows.append({"kind": "tree", "n": rep.tree.n, "tree": json.dumps([list(e) for e in rep.tree.edges]),
                     "re": rep.mean.real, "im": rep.mean.imag, "stderr": rep.stderr})
    for n, (s, se) in res.per_order.items():
        rows.append({"kind": "order", "n": n, "tree": "", "re": s.real, "im": s.imag, "stderr": se})
    rows.append({"kind": "total", "n": o["nmax"], "tree": "", "re": res.value.real, "im": res.value.imag,
                 "stderr": res.stderr})
    extra = {"value": res.value, "stderr": res.stderr, "fitted_K": res.fitted_K}
    if params.exact and params.cutoff <= EXACT_LIMIT and isinstance(lam, float):
        s = logz_series(2, params)
        oracle = float(s(Fraction(lam)))
        rows.append({"kind": "oracle", "n": 2, "tree": "", "re": oracle, "im": 0.0, "stderr": 0.0})
        delta = res.value.real - oracle
        extra.update(oracle=oracle, delta=delta, delta_over_stderr=delta / res.stderr if res.stderr else 0.0,
                     allowance=max(3 * res.stderr, 0.2 * abs(float(s.coeffs[2])) * lam * lam))
    emit(cfg, render(cfg, rows, ["kind", "n", "tree", "re", "im", "stderr"], extra))
    return EXIT_OK


def cmd_graphs(cfg: RunConfig) -> int:
    from .ribbon import MAX_ORDER, divergence_degree, enumerate_graphs, pairing_count

    o = cfg.options
    if not 1 <= o["order"] <= MAX_ORDER:
        raise ConfigError(f"order must lie in 1..{MAX_ORDER}")
    rows = []
    for ext in o["externals"]:
        if ext < 0 or (4 * o["order"] - ext) % 2:
            raise ConfigError(f"{ext} external legs leave an odd number of half-edges")
        classes = enumerate_graphs(o["order"], ext, o["connected"])
        total = sum(c.multiplicity for c in classes)
        if not o["connected"] and total != pairing_count(o["order"], ext):
            raise AssertionError("class multiplicities do not add up to the pairing count")
        for c in classes:
            d = c.to_dict()
            deg = divergence_degree(c.representative, c.data)
            rows.append({"order": o["order"], "externals": ext, "multiplicity": c.multiplicity,
                         "faces": d["faces"], "genus": d["genus"], "broken_faces": d["broken_faces"],
                         "connected": d["connected"], "face_weight": c.face_weight,
                         "divergence_degree": deg, "flagged": c.planar and d["connected"] and deg >= 0,
                         "graph": d["graph"]})
    cols = ["order", "externals", "multiplicity", "faces", "genus", "broken_faces", "connected",
            "face_weight", "divergence_degree", "flagged", "graph"]
    emit(cfg, render(cfg, rows, cols))
    return EXIT_OK


def cmd_borel(cfg: RunConfig) -> int:
    from .oracle import EXACT_LIMIT, logz_monte_carlo, logz_series
    from .resummation import (RESUMMATION_COLUMNS, euler_integral, euler_series, remainder_growth,
                              resummation_table)

    o = cfg.options
    lams = o["lambdas"]
    if any(x < 0 for x in lams):
        raise ConfigError("borel sums run along the positive real axis")
    if o["euler"]:
        s, oracle = euler_series(o["series_order"]), euler_integral
    else:
        params = _params(o)
        if not (params.exact and params.cutoff <= EXACT_LIMIT):
            raise ConfigError(f"exact series needs rational theta, mu2 and cutoff <= {EXACT_LIMIT}")
        s = logz_series(2, params)
        oracle = None
        if o.get("mc_samples"):
            if cfg.seed is None:
                raise ConfigError("--mc-samples needs --seed")
            oracle = lambda lam: logz_monte_carlo(params, lam, o["mc_samples"], cfg.seed).value  # noqa: E731
    pade = o["pade"] or ((0, 1) if not o["euler"] else (o["series_order"] // 2, o["series_order"] // 2))
    try:
        rows = resummation_table(s, lams, pade, oracle)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    fit = remainder_growth(s)
    extra = {"pade": list(pade), "growth": asdict(fit), "coefficients": list(s.coeffs)}
    emit(cfg, render(cfg, rows, RESUMMATION_COLUMNS, extra))
    return EXIT_OK


def cmd_nelson(cfg: RunConfig) -> int:
    from .resummation import nelson_report

    o = cfg.options
    if o["cutoff"] < 3:
        raise ConfigError("cutoff must be at least 3")
    if o["M"] <= 1:
        raise ConfigError("M must exceed 1")
    a = None if o["a"] == "auto" else float(o["a"])
    rep = nelson_report(o["cutoff"], float(o["lam"]), a, o["M"], o["theta"], o["mu2"])
    d = rep.to_dict()
    flat = {k: v for k, v in d.items() if k != "budget"}
    flat.update({f"budget_{k}": v for k, v in d["budget"].items()})
    rows = [{"key": k, "value": v} for k, v in flat.items()]
    if cfg.fmt == "json":
        emit(cfg, json.dumps({"meta": _jsonable_tree(cfg.metadata()), "data": _jsonable_tree(d)}, indent=2) + "\n")
    else:
        emit(cfg, render(cfg, rows, ["key", "value"]))
    return EXIT_OK


COMMANDS = {
    "counterterms": cmd_counterterms,
    "cancellation": cmd_cancellation,
    "lve": cmd_lve,
    "graphs": cmd_graphs,
    "borel": cmd_borel,
    "nelson": cmd_nelson,
}


# --- parser ------------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, fmt="csv"):
    p.add_argument("--config", help="key=value file; flags override its entries")
    p.add_argument("--output", "-o", help=f"output file ('-' for stdout); relative to ${OUTPUT_DIR_ENV} if set")
    p.add_argument("--format", dest="fmt", choices=["csv", "json"], default=fmt)
    p.add_argument("--verbose", "-v", action="store_true")


def _add_model(p, cutoff=3):
    p.add_argument("--cutoff", type=int, default=cutoff, help="largest matrix index Lambda")
    p.add_argument("--theta", type=_rational, default=Fraction(4))
    p.add_argument("--mu2", type=_rational, default=Fraction(0))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ncphi4", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("counterterms", help="tadpole table T_m, T2, T3")
    _add_model(p, 100)
    p.add_argument("--report-asymptotic", action="store_true")
    _add_common(p)

    p = sub.add_parser("cancellation", help="exact counterterm cancellation per order")
    _add_model(p)
    p.add_argument("--order", type=int, choices=[1, 2], default=1)
    p.add_argument("--cutoffs", type=_int_list, default=None, help="e.g. 1-20 or 1,3,5")
    p.add_argument("--convention", choices=["bookkeeping", "exact"], default="bookkeeping")
    p.add_argument("--perturb-multiplicity", action="store_true",
                   help="debug: lower the B counting factor by one (mutation check)")
    _add_common(p)

    p = sub.add_parser("lve", help="tree expansion of log Z by Monte Carlo")
    _add_model(p)
    p.add_argument("--lambda", dest="lam", type=_lambda, default=0.01)
    p.add_argument("--nmax", type=int, default=2)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)

    p = sub.add_parser("graphs", help="ribbon graph classes by order")
    p.add_argument("--order", type=int, default=1)
    p.add_argument("--externals", type=_int_list, default=[0, 2])
    p.add_argument("--connected", action="store_true")
    _add_common(p, "json")

    p = sub.add_parser("borel", help="Borel-Pade resummation")
    _add_model(p, 2)
    p.add_argument("--euler", action="store_true", help="use the Euler series a_k = (-1)^k k!")
    p.add_argument("--series-order", type=int, default=10)
    p.add_argument("--lambda", dest="lambdas", type=_float_list, default=[0.01])
    p.add_argument("--pade", type=_pade, default=None)
    p.add_argument("--mc-samples", type=int, default=0)
    p.add_argument("--seed", type=int)
    _add_common(p)

    p = sub.add_parser("nelson", help="Nelson factor and stopping budget")
    _add_model(p, 100)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--a", default="auto", help="'auto' for 1.4 lambda")
    p.add_argument("--M", type=float, default=2.0)
    _add_common(p, "json")
    return ap


def _subparser(ap: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for a in ap._actions:
        if isinstance(a, argparse._SubParsersAction):
            return a.choices[name]
    raise KeyError(name)


def _apply_config(sp: argparse.ArgumentParser, entries: dict[str, str]):
    known = {a.dest: a for a in sp._actions}
    defaults = {}
    for k, v in entries.items():
        if k in ("lambda",):
            k = "lam" if "lam" in known else "lambdas"
        if k == "format":
            k = "fmt"
        if k not in known or k in ("help", "config"):
            raise ConfigError(f"unknown config key {k!r} for {sp.prog}")
        act = known[k]
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[k] = _bool(v)
        else:
            defaults[k] = v  # argparse converts string defaults through the action type
    sp.set_defaults(**defaults)


def parse_config(argv) -> RunConfig:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        sp = _subparser(ap, args.command)
        _apply_config(sp, read_config_file(args.config))
        args = ap.parse_args(argv)
    opts = {k: v for k, v in vars(args).items()
            if k not in ("command", "config", "output", "fmt", "verbose", "seed", "samples", "workers")}
    seed = getattr(args, "seed", None)
    if seed is not None and not 0 <= seed < MAX_SEED:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if args.command in STOCHASTIC and seed is None:
        raise ConfigError(f"{args.command} is stochastic and needs --seed")
    workers = getattr(args, "workers", 1)
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    if args.command == "cancellation" and opts["cutoffs"] is None:
        opts["cutoffs"] = list(range(1, 21 if opts["order"] == 1 else 11))
    return RunConfig(args.command, opts, seed, getattr(args, "samples", None), args.output, args.fmt,
                     workers)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(argv)
        return COMMANDS[cfg.command](cfg)
    except SystemExit as e:  # argparse errors and --help
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG
    except ConfigError as e:
        print(f"ncphi4: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, NotImplementedError) as e:
        print(f"ncphi4: invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
