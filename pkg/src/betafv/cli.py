"""Command-line experiment runner.

``betafv run CONFIG`` reads a flat ``key = value`` file (``#`` starts a
comment), runs one named experiment and writes a CSV table plus a manifest
``<out>.manifest`` with the resolved configuration, one ``key: value`` line
per key in sorted order.  A manifest is itself a valid config, so re-running
from it reproduces the table byte for byte.

Replicate ``r`` always draws from ``RngStream(seed, r)``, so results do not
depend on the number of workers.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__

__all__ = ["SimConfig", "load_config", "EXPERIMENTS", "run_experiment", "write_outputs",
           "main"]

EXIT_OK, EXIT_PARSE, EXIT_DOMAIN, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(Exception):
    """Malformed config file or value."""


@dataclass
class SimConfig:
    experiment: str = "csbp_validate"
    alpha: float = 1.5
    theta: float = 1.0
    epsilon: float = 1.0
    delta_len: float = 0.01
    delta_age: float = 0.05
    delta_x: float = 1e-3
    delta_y: float = 1e-4
    horizon: float = 1.0
    grid_n: int = 10
    t0_fraction: float = 0.05
    seed: int = 0
    replicates: int = 100
    output_path: str = "results.csv"
    workers: int = 1
    v: float = 0.5
    levels: int = 100
    intensity: str = "schmuland"
    immigration: str = "constant"
    deltas: str = "0.1,0.03,0.01"
    thetas: str = ""
    version: str = __version__

    def float_list(self, name: str) -> list[float]:
        raw = getattr(self, name)
        try:
            return [float(x) for x in raw.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"{name}: expected a comma-separated list of numbers") from exc


_TYPES = {f.name: f.type for f in fields(SimConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc
    return raw


def parse_config(text: str) -> SimConfig:
    cfg = SimConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        # both "key = value" and manifest-style "key: value" are accepted
        eq, colon = line.find("="), line.find(":")
        cut = eq if eq >= 0 and (colon < 0 or eq < colon) else colon
        if cut < 0:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = line[:cut].strip(), line[cut + 1:].strip()
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _convert(key, raw))
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    return cfg


def load_config(path) -> SimConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)


def _require(cond, msg):
    if not cond:
        raise ValueError(msg)


def _stream(cfg, r):
    from .rng import RngStream
    return RngStream(cfg.seed, r)


def _grid(cfg, lo=None):
    lo = cfg.horizon / cfg.grid_n if lo is None else lo
    return np.linspace(lo, cfg.horizon, cfg.grid_n)


def _map(fn, cfg, n):
    """``[fn(cfg, r) for r in range(n)]``, possibly on a process pool, in index order."""
    if cfg.workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(fn, [cfg] * n, range(n)))
    return [fn(cfg, r) for r in range(n)]


# --- experiments ------------------------------------------------------------------------

def _csbp_rep(cfg, r):
    from .csbp import csbp_marginals
    vals, _ = csbp_marginals(_stream(cfg, r), 1.0, cfg.alpha, _grid(cfg), 1000, cfg.delta_x)
    return vals


def exp_csbp_validate(cfg):
    from .csbp import cumulant, extinction_prob
    vals = np.concatenate(_map(_csbp_rep, cfg, cfg.replicates))
    n = vals.shape[0]
    rows = []
    for j, t in enumerate(_grid(cfg)):
        x = vals[:, j]
        pz = float(np.mean(x == 0))
        for lam in (0.5, 1.0, 2.0):
            e = np.exp(-lam * x)
            rows.append((t, lam, e.mean(), e.std(ddof=1) / math.sqrt(n),
                         math.exp(-float(cumulant(t, lam, cfg.alpha))), pz,
                         float(extinction_prob(1.0, t, cfg.alpha))))
    return ["t", "lambda", "mc_laplace", "se", "exact_laplace", "mc_extinct",
            "exact_extinct"], rows


def _mbi_rep(cfg, r):
    from .excursion import ExcursionTruncation
    from .mbi import ImmigrationG, count_atoms, simulate_mbi
    g = (ImmigrationG.constant(cfg.theta) if cfg.immigration == "constant"
         else ImmigrationG.power(cfg.theta, cfg.alpha))
    st = simulate_mbi(_stream(cfg, r), g, cfg.alpha, cfg.horizon,
                      ExcursionTruncation("by_age", cfg.delta_age))
    t = min(cfg.horizon, st.t_stop)
    return (r, st.total_mass(t), count_atoms(st, t), st.extinction is not None)


def exp_mbi_sim(cfg):
    _require(cfg.immigration in ("constant", "power"), "immigration is constant or power")
    return ["replicate", "total_mass", "alive_atoms", "extinct"], _map(_mbi_rep, cfg,
                                                                      cfg.replicates)


_V3 = (0.25, 0.5, 0.75, 1.0)


def _fvt_rep(cfg, r):
    from .flemingviot import fv_from_mbi
    res = fv_from_mbi(_stream(cfg, r), cfg.theta, cfg.alpha, [cfg.horizon], v_grid=_V3)
    return (r, cfg.horizon, res.real_times[0], *res.values[0])


def exp_fv_timechange(cfg):
    return (["replicate", "t", "real_time", "y_0.25", "y_0.5", "y_0.75", "y_1"],
            _map(_fvt_rep, cfg, cfg.replicates))


def _fvd_rep(cfg, r):
    from .flemingviot import fv_direct
    res = fv_direct(_stream(cfg, r), cfg.theta, cfg.alpha, [cfg.horizon],
                    delta_y=cfg.delta_y, v_grid=_V3)
    return (r, cfg.horizon, *res.values[0])


def exp_fv_direct(cfg):
    return (["replicate", "t", "y_0.25", "y_0.5", "y_0.75", "y_1"],
            _map(_fvd_rep, cfg, cfg.replicates))


def _fvx_rep(cfg, r):
    from .flemingviot import fv_direct, fv_from_mbi
    grid = (cfg.v, 1.0) if cfg.v < 1 else (1.0,)
    a = fv_from_mbi(_stream(cfg, 2 * r), cfg.theta, cfg.alpha, [cfg.horizon],
                    v_grid=grid).values[0, 0]
    b = fv_direct(_stream(cfg, 2 * r + 1), cfg.theta, cfg.alpha, [cfg.horizon],
                  delta_y=cfg.delta_y, v_grid=grid).values[0, 0]
    return a, b


def exp_fv_crosscheck(cfg):
    from scipy import stats
    _require(0 < cfg.v <= 1, "v must lie in (0, 1]")
    pairs = np.array(_map(_fvx_rep, cfg, cfg.replicates))
    a, b = pairs[:, 0], pairs[:, 1]
    ks = stats.ks_2samp(a, b)
    return (["t", "v", "ks_statistic", "p_value", "mean_mbi", "mean_direct", "var_mbi",
             "var_direct"],
            [(cfg.horizon, cfg.v, ks.statistic, ks.pvalue, a.mean(), b.mean(),
              a.var(ddof=1), b.var(ddof=1))])


def _ld_rep(cfg, r):
    from .lookdown import empirical_measure, simulate_lookdown
    path = simulate_lookdown(_stream(cfg, r), cfg.levels, cfg.alpha, cfg.theta, _grid(cfg))
    rows = []
    for i, t in enumerate(path.grid):
        m = empirical_measure(path.state(i))
        rows.append((r, t, len(m), m.weights.max()))
    return rows


def exp_lookdown_sim(cfg):
    _require(cfg.levels >= 2, "levels must be at least 2")
    rows = [row for rep in _map(_ld_rep, cfg, cfg.replicates) for row in rep]
    return ["replicate", "t", "n_types", "largest_weight"], rows


def _law(cfg):
    from .covering import IntensityLaw
    if cfg.intensity == "schmuland":
        return IntensityLaw.schmuland(cfg.theta)
    if cfg.intensity == "stable_tail":
        return IntensityLaw.stable_tail(cfg.theta, cfg.epsilon, cfg.alpha)
    raise ValueError("intensity is schmuland or stable_tail")


def _cov_rep(cfg, r):
    from .covering import simulate_shadows
    return simulate_shadows(_stream(cfg, r), _law(cfg), cfg.delta_len, cfg.horizon,
                            _grid(cfg)).counts


def exp_covering_sim(cfg):
    from .covering import expected_multiplicity
    counts = np.array(_map(_cov_rep, cfg, cfg.replicates))
    law = _law(cfg)
    rows = []
    for j, t in enumerate(_grid(cfg)):
        c = counts[:, j]
        rows.append((t, c.mean(), c.std(ddof=1) / math.sqrt(c.size),
                     expected_multiplicity(law, cfg.delta_len, t), np.mean(c == 0)))
    return ["t", "mean_count", "se", "expected_count", "uncovered_fraction"], rows


def exp_shepp_check(cfg):
    from .covering import shepp_integral
    _, cls = shepp_integral(_law(cfg))
    if cfg.intensity == "schmuland":
        return ["theta", "classification"], [(cfg.theta, cls)]
    return ["theta", "epsilon", "alpha", "classification"], [(cfg.theta, cfg.epsilon,
                                                              cfg.alpha, cls)]


def exp_schmuland(cfg):
    from .covering import schmuland_experiment
    from .rng import RngStream
    thetas = cfg.float_list("thetas") or [cfg.theta]
    deltas = cfg.float_list("deltas")
    tab = schmuland_experiment(RngStream(cfg.seed, 0), thetas, deltas, cfg.horizon,
                               cfg.replicates, t0_fraction=cfg.t0_fraction)
    rows = [(th, d, tab.frequencies[i, j], tab.classification[i])
            for i, th in enumerate(tab.thetas) for j, d in enumerate(tab.deltas)]
    return ["theta", "delta_len", "gap_frequency", "classification"], rows


def exp_main_theorem_probe(cfg):
    from .covering import main_theorem_probe
    from .rng import RngStream
    deltas = cfg.float_list("deltas")
    mins = main_theorem_probe(RngStream(cfg.seed, 0), cfg.theta, cfg.epsilon, cfg.alpha,
                              deltas, cfg.horizon, cfg.replicates,
                              t0=cfg.t0_fraction * cfg.horizon, n_grid=cfg.grid_n)
    rows = [(d, mins[:, j].min(), np.median(mins[:, j]), mins[:, j].mean(),
             np.mean(mins[:, j] >= 1)) for j, d in enumerate(deltas)]
    return ["delta_len", "min_of_min", "median_min", "mean_min", "fraction_covered"], rows


def _ext_rep(cfg, r):
    from .mbi import simulate_type_bins
    out = []
    for i, th in enumerate(cfg.float_list("thetas") or [cfg.theta]):
        res = simulate_type_bins(_stream(cfg, r).child(i), th, cfg.alpha, cfg.horizon)
        out.append(res.extinction_time is not None)
    return out


def exp_extinction_dichotomy(cfg):
    thetas = cfg.float_list("thetas") or [cfg.theta]
    hits = np.array(_map(_ext_rep, cfg, cfg.replicates))
    return (["theta", "replicates", "extinct_fraction"],
            [(th, cfg.replicates, hits[:, i].mean()) for i, th in enumerate(thetas)])


EXPERIMENTS = {
    "csbp_validate": (exp_csbp_validate, "CSBP Laplace transform and extinction vs closed form"),
    "mbi_sim": (exp_mbi_sim, "excursion-built MBI: total mass and alive atoms at the horizon"),
    "fv_timechange": (exp_fv_timechange, "Fleming-Viot values from the time-changed MBI"),
    "fv_direct": (exp_fv_direct, "Fleming-Viot values from the jump equation"),
    "fv_crosscheck": (exp_fv_crosscheck, "KS and moment comparison of both FV routes"),
    "lookdown_sim": (exp_lookdown_sim, "finite lookdown: type counts and largest weight"),
    "covering_sim": (exp_covering_sim, "shadow multiplicities vs the Poisson mean"),
    "shepp_check": (exp_shepp_check, "Shepp covering criterion classification"),
    "schmuland": (exp_schmuland, "gap frequencies under theta/h^2 across length floors"),
    "main_theorem_probe": (exp_main_theorem_probe, "min alive count over a grid, stable case"),
    "extinction_dichotomy": (exp_extinction_dichotomy, "fraction of MBI runs extinct by the horizon"),
}


def run_experiment(cfg: SimConfig):
    """``(header, rows)`` of the configured experiment."""
    _require(1.0 < cfg.alpha < 2.0, "alpha must lie in (1, 2)")
    _require(cfg.replicates >= 1 and cfg.grid_n >= 1 and cfg.workers >= 1,
             "replicates, grid_n and workers must be positive")
    _require(cfg.horizon > 0, "horizon must be positive")
    _require(cfg.seed >= 0, "seed must be nonnegative")
    return EXPERIMENTS[cfg.experiment][0](cfg)


def render_table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def render_manifest(cfg: SimConfig) -> str:
    d = asdict(cfg)
    d["version"] = __version__
    return "".join(f"{k}: {_fmt(d[k])}\n" for k in sorted(d))


def write_outputs(cfg: SimConfig, header, rows) -> Path:
    out = Path(cfg.output_path)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    out.write_text(render_table(header, rows), encoding="utf-8", newline="")
    Path(str(out) + ".manifest").write_text(render_manifest(cfg), encoding="utf-8",
                                            newline="")
    return out


def _parser():
    p = argparse.ArgumentParser(prog="betafv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--out", default=None, help="override the output path")
    sub.add_parser("list", help="list the available experiments")
    return p


def main(argv=None) -> int:
    from .flemingviot import HorizonExhausted
    args = _parser().parse_args(argv)
    if args.command == "list":
        for name, (_, desc) in EXPERIMENTS.items():
            print(f"{name}: {desc}")
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output_path = args.out
        header, rows = run_experiment(cfg)
        path = write_outputs(cfg, header, rows)
    except ConfigError as exc:
        print(f"betafv: config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ArithmeticError, HorizonExhausted) as exc:
        print(f"betafv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"betafv: domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
