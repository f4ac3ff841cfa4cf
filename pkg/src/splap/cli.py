"""Config parsing, run orchestration and output files.

Config files are flat ``key = value`` lines, optionally grouped under
``[section]`` headers. Keys in ``[noise]`` and ``[init]`` are read as
``noise.<key>`` and ``init.<key>``; the other recognised sections
(``grid``, ``time``, ``solver``, ``run``, ``picard``, ``viscosity``) are
only for grouping. Example::

    dim = 1
    n = 32
    p = 1.5
    T = 1.0
    steps = 50

    [noise]
    kind = additive
    spectrum = power 1.0
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .driver import INIT_KINDS, LEDGER_COLUMNS, NOISE_KINDS, InitSpec, NoiseSpec, SimConfig, check_energy_per_step, solve_additive
from .grid import Grid
from .mc import inequality_report, run_ensemble, run_picard_ensemble, run_sweep_ensemble
from .multiplicative import PicardConfig
from .noise import PROFILES, available_modes

__all__ = [
    "ConfigError",
    "MissingKey",
    "BadValue",
    "ConstraintViolation",
    "parse_config",
    "serialize_config",
    "RunResult",
    "write_outputs",
    "write_snapshot",
    "read_snapshot",
    "execute",
    "main",
]

log = logging.getLogger("splap")

MAGIC = b"SPLAPFLD" + b"\0" * 7 + b"\x01"
MODES = ("run", "ensemble", "picard", "sweep-eps", "check")


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class MissingKey(ConfigError):
    def __init__(self, key):
        super().__init__(key, "required key is missing")


class BadValue(ConfigError):
    pass


class ConstraintViolation(ConfigError):
    pass


PREFIX_SECTIONS = ("noise", "init")
GROUP_SECTIONS = ("grid", "time", "solver", "run", "picard", "viscosity")
REQUIRED = ("dim", "n", "p", "T", "steps")
KNOWN = REQUIRED + (
    "half_width", "delta", "modes", "tol", "max_iter", "seed", "paths", "alpha", "eps",
    "picard_tol", "picard_max_iter",
    "noise.kind", "noise.spectrum", "noise.gamma", "noise.amplitude", "noise.profile", "noise.lip",
    "init.kind", "init.amplitude", "init.width",
)  # fmt: skip


def _flatten(text: str) -> dict:
    cp = configparser.ConfigParser(
        interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"), default_section="\0"
    )
    cp.optionxform = str  # keep case: T is not t
    try:
        cp.read_string("[\0top]\n" + text)
    except configparser.Error as exc:
        raise BadValue("config", f"malformed config: {exc}") from None
    out = {}
    for sec in cp.sections():
        name = sec.strip()
        if name == "\0top":
            prefix = ""
        elif name in PREFIX_SECTIONS:
            prefix = name + "."
        elif name in GROUP_SECTIONS:
            prefix = ""
        else:
            raise BadValue(f"[{name}]", f"unknown section; expected one of {PREFIX_SECTIONS + GROUP_SECTIONS}")
        for k, v in cp.items(sec):
            key = prefix + k.strip()
            if key not in KNOWN:
                raise BadValue(key, "unknown key")
            if key in out:
                raise BadValue(key, "given more than once")
            out[key] = v.strip()
    return out


def _num(raw, key, kind):
    try:
        if kind is int:
            val = int(raw)
        else:
            val = float(raw)
    except ValueError:
        raise BadValue(key, f"expected {'an integer' if kind is int else 'a number'}, got {raw!r}") from None
    if kind is float and not math.isfinite(val):
        raise BadValue(key, f"must be finite, got {raw!r}")
    return val


def _need(cond, key, message):
    if not cond:
        raise ConstraintViolation(key, message)


def parse_config(text: str):
    """Parse config text; returns a :class:`SimConfig`, or a :class:`PicardConfig`
    when ``noise.kind = multiplicative``."""
    kv = _flatten(text)
    for key in REQUIRED:
        if key not in kv:
            raise MissingKey(key)

    def get(key, kind, default):
        return _num(kv[key], key, kind) if key in kv else default

    dim, n = get("dim", int, None), get("n", int, None)
    _need(dim in (1, 2, 3), "dim", f"must be 1, 2 or 3, got {dim}")
    _need(n >= 2, "n", f"must be >= 2, got {n}")
    p = get("p", float, None)
    _need(p > 1, "p", f"must satisfy p > 1, got {p}")
    T, steps = get("T", float, None), get("steps", int, None)
    _need(T > 0, "T", f"must be > 0, got {T}")
    _need(steps >= 1, "steps", f"must be >= 1, got {steps}")
    half_width = get("half_width", float, math.pi)
    _need(half_width > 0, "half_width", f"must be > 0, got {half_width}")
    delta = get("delta", float, 0.0)
    _need(delta >= 0, "delta", f"must be >= 0, got {delta}")
    tol = get("tol", float, 1e-9)
    _need(tol > 0, "tol", f"must be > 0, got {tol}")
    max_iter = get("max_iter", int, 10_000)
    _need(max_iter >= 1, "max_iter", f"must be >= 1, got {max_iter}")
    seed = get("seed", int, 0)
    _need(seed >= 0, "seed", f"must be >= 0, got {seed}")
    paths = get("paths", int, 200)
    _need(paths >= 1, "paths", f"must be >= 1, got {paths}")

    kind = kv.get("noise.kind", "additive")
    if kind not in NOISE_KINDS:
        raise BadValue("noise.kind", f"must be one of {NOISE_KINDS}, got {kind!r}")
    modes = get("modes", int, None)
    if modes is not None:
        avail = available_modes(Grid(dim, n))
        _need(1 <= modes <= avail, "modes", f"must lie in [1, {avail}] for this grid, got {modes}")
    gamma = get("noise.gamma", float, 1.0)
    if "noise.spectrum" in kv:
        parts = kv["noise.spectrum"].replace(",", " ").split()
        if not parts or parts[0] != "power" or len(parts) > 2:
            raise BadValue("noise.spectrum", f"expected 'power' optionally followed by gamma, got {kv['noise.spectrum']!r}")
        if len(parts) == 2:
            if "noise.gamma" in kv:
                raise BadValue("noise.spectrum", "gamma given both here and in noise.gamma")
            gamma = _num(parts[1], "noise.spectrum", float)
    _need(gamma >= 0, "noise.gamma", f"must be >= 0, got {gamma}")
    amplitude = get("noise.amplitude", float, 1.0)
    _need(amplitude >= 0, "noise.amplitude", f"must be >= 0, got {amplitude}")
    profile = kv.get("noise.profile", "identity")
    if profile not in PROFILES:
        raise BadValue("noise.profile", f"must be one of {sorted(PROFILES)}, got {profile!r}")
    lip = get("noise.lip", float, 1.0)
    _need(lip >= 0, "noise.lip", f"must be >= 0, got {lip}")

    init_kind = kv.get("init.kind", "zero")
    if init_kind not in INIT_KINDS:
        raise BadValue("init.kind", f"must be one of {INIT_KINDS}, got {init_kind!r}")
    init_amp = get("init.amplitude", float, 1.0)
    init_width = get("init.width", float, 1.0)
    _need(init_width > 0, "init.width", f"must be > 0, got {init_width}")

    eps_viscosity, eps_sweep = 0.0, ()
    if "eps" in kv:
        raw = [s for s in kv["eps"].replace(",", " ").split() if s]
        if not raw:
            raise BadValue("eps", "empty list")
        eps = [_num(s, "eps", float) for s in raw]
        _need(all(0 < e < 1 for e in eps), "eps", f"values must lie in (0, 1), got {eps}")
        if len(eps) == 1:
            eps_viscosity = eps[0]
        else:
            _need(all(b < a for a, b in zip(eps, eps[1:])), "eps", f"list must be strictly decreasing, got {eps}")
            eps_sweep = tuple(eps)

    base = SimConfig(
        dim=dim, n=n, p=p, T=T, steps=steps, half_width=half_width, delta=delta,
        noise=NoiseSpec(kind, modes, "power", gamma, amplitude, profile, lip),
        init=InitSpec(init_kind, init_amp, init_width),
        tol=tol, max_iter=max_iter, eps_viscosity=eps_viscosity, eps_sweep=eps_sweep,
        seed=seed, paths=paths,
    )  # fmt: skip

    picard_keys = [k for k in ("alpha", "picard_tol", "picard_max_iter") if k in kv]
    if kind != "multiplicative":
        if picard_keys:
            raise ConstraintViolation(picard_keys[0], "only meaningful with noise.kind = multiplicative")
        return base
    _need("eps" not in kv, "eps", "the viscous regularization cannot be combined with multiplicative noise")
    noise = base.multiplicative_noise()
    alpha = get("alpha", float, None)
    if alpha is not None:
        _need(alpha > noise.L, "alpha", f"must exceed L = {noise.L:.6g} for the solution map to contract, got {alpha}")
    picard_tol = get("picard_tol", float, 1e-6)
    _need(picard_tol > 0, "picard_tol", f"must be > 0, got {picard_tol}")
    picard_max_iter = get("picard_max_iter", int, 50)
    _need(picard_max_iter >= 1, "picard_max_iter", f"must be >= 1, got {picard_max_iter}")
    return PicardConfig(base, noise, alpha, picard_tol, picard_max_iter)


def serialize_config(cfg) -> str:
    """Config text that parses back to an equal config."""
    pic = cfg if isinstance(cfg, PicardConfig) else None
    base = pic.base if pic else cfg
    nz, it = base.noise, base.init
    lines = [
        f"dim = {base.dim}",
        f"n = {base.n}",
        f"half_width = {base.half_width!r}",
        f"p = {base.p!r}",
        f"delta = {base.delta!r}",
        f"T = {base.T!r}",
        f"steps = {base.steps}",
        f"tol = {base.tol!r}",
        f"max_iter = {base.max_iter}",
        f"seed = {base.seed}",
        f"paths = {base.paths}",
    ]
    if base.eps_sweep:
        lines.append("eps = " + ", ".join(repr(float(e)) for e in base.eps_sweep))
    elif base.eps_viscosity:
        lines.append(f"eps = {base.eps_viscosity!r}")
    if nz.modes is not None:
        lines.append(f"modes = {nz.modes}")
    if pic:
        if pic.alpha is not None:
            lines.append(f"alpha = {pic.alpha!r}")
        lines.append(f"picard_tol = {pic.picard_tol!r}")
        lines.append(f"picard_max_iter = {pic.picard_max_iter}")
    lines += [
        "",
        "[noise]",
        f"kind = {nz.kind}",
        f"spectrum = {nz.spectrum} {nz.gamma!r}",
        f"amplitude = {nz.amplitude!r}",
        f"profile = {nz.profile}",
        f"lip = {nz.lip!r}",
        "",
        "[init]",
        f"kind = {it.kind}",
        f"amplitude = {it.amplitude!r}",
        f"width = {it.width!r}",
    ]
    return "\n".join(lines) + "\n"


# -- outputs ------------------------------------------------------------------


def write_snapshot(path, u) -> None:
    u = np.asarray(u, dtype="<f8")
    d, n = u.ndim, u.shape[0]
    if d not in (1, 2, 3) or any(s != n for s in u.shape):
        raise ValueError(f"snapshot must be a cubic field, got shape {u.shape}")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<ii", d, n))
            fh.write(np.ascontiguousarray(u).tobytes(order="C"))
    except OSError as exc:
        raise OSError(f"cannot write snapshot {path}: {exc}") from exc


def read_snapshot(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:16] != MAGIC:
        raise ValueError(f"{path}: not a field snapshot (bad magic)")
    d, n = struct.unpack("<ii", data[16:24])
    body = data[24:]
    if len(body) != 8 * n**d:
        raise ValueError(f"{path}: expected {n**d} values for d={d}, n={n}, found {len(body) / 8:g}")
    return np.frombuffer(body, dtype="<f8").reshape((n,) * d).astype(float)


@dataclass
class RunResult:
    """What a mode produced: ledger rows, field snapshots, extra tables and summary lines."""

    mode: str
    config: object
    ledger_rows: list = field(default_factory=list)  # (path, *LEDGER_COLUMNS)
    snapshots: dict = field(default_factory=dict)  # name -> field
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)
    summary: list = field(default_factory=list)
    passed: bool = True


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)  # excel dialect: RFC 4180 quoting and CRLF
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(x) for x in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _cell(x):
    if isinstance(x, (np.integer, int)) and not isinstance(x, bool):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return repr(float(x))
    return x


def write_outputs(results: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if results.ledger_rows:
        _write_csv(out / "ledger.csv", ("path",) + LEDGER_COLUMNS, results.ledger_rows)
    for name, (header, rows) in results.tables.items():
        _write_csv(out / name, header, rows)
    if results.snapshots:
        snap = out / "snapshots"
        snap.mkdir(exist_ok=True)
        for name, u in results.snapshots.items():
            write_snapshot(snap / f"{name}.bin", u)
    (out / "config.txt").write_text(serialize_config(results.config), encoding="utf-8")
    lines = [f"mode: {results.mode}", f"verdict: {'PASS' if results.passed else 'FAIL'}", ""] + results.summary
    try:
        (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {out / 'summary.txt'}: {exc}") from exc
    return out


# -- orchestration --------------------------------------------------------------


def _ledger_rows(path_index, ledger):
    cols = [ledger[c] for c in LEDGER_COLUMNS]
    return [(path_index,) + tuple(r) for r in zip(*cols)]


def _viscous_header(base):
    """Warn when ``W^{1,p}`` does not embed into ``L^2`` in dimension ``d``."""
    d, p = base.dim, base.p
    if p < 2.0 * d / (d + 2.0):
        return [f"note: p = {p:g} < 2d/(d+2) in d = {d}; the viscous regularization is run outside the range where W^(1,p) embeds in L^2", ""]
    return []


def _as_base(cfg, mode):
    if isinstance(cfg, PicardConfig):
        if mode != "picard":
            raise ConstraintViolation("noise.kind", f"multiplicative configs run in mode 'picard', not {mode!r}")
        return cfg.base
    if mode == "picard":
        raise ConstraintViolation("noise.kind", "mode 'picard' needs noise.kind = multiplicative")
    return cfg


def execute(cfg, mode: str, paths: int | None = None, seed: int | None = None, workers: int = 1) -> RunResult:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "check":
        from .selfcheck import run_checks

        res = RunResult(mode, cfg)
        for name, ok, detail in run_checks(0 if seed is None else seed):
            res.summary.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
            res.passed &= ok
        return res

    base = _as_base(cfg, mode)
    if seed is not None:
        base = base.replace(seed=seed)
        if isinstance(cfg, PicardConfig):
            cfg = PicardConfig(base, cfg.noise, cfg.alpha, cfg.picard_tol, cfg.picard_max_iter)
        else:
            cfg = base
    paths = base.paths if paths is None else paths
    res = RunResult(mode, cfg)

    if mode == "run":
        noise = base.additive_noise()
        tr = solve_additive(base, base.sample_path(0), noise=noise, keep_fields=True)
        chk = check_energy_per_step(tr, noise)
        res.ledger_rows = _ledger_rows(0, tr.ledger)
        res.snapshots = {"u_0000": tr.fields[0], f"u_{tr.N:04d}": tr.fields[-1]}
        ratio = np.divide(np.abs(chk.identity_residual), chk.identity_bound, out=np.zeros(tr.N), where=chk.identity_bound > 0)
        worst = float(np.max(ratio))
        energy_ok = bool(np.all(chk.lhs <= chk.rhs + chk.identity_bound))
        res.passed = chk.identity_ok
        if base.eps_viscosity:
            res.summary += _viscous_header(base)
        res.summary += [
            f"{'PASS' if chk.identity_ok else 'FAIL'}  tested identity: worst residual/bound {worst:.3e}",
            f"info  per-step energy balance (single path, not an expectation): {'holds' if energy_ok else 'exceeded on some step'}",
            f"info  final |u|_2^2 = {tr.ledger['l2_sq'][-1]:.10g}",
        ]
    elif mode == "ensemble":
        stats = run_ensemble(base, paths, base.seed, workers=workers)
        rep = inequality_report(stats)
        res.ledger_rows = stats.rows()
        res.passed = rep.passed
        if base.eps_viscosity:
            res.summary += _viscous_header(base)
        m, se = stats.increment_sum_stats()
        res.summary += [f"paths: {stats.path_count}", rep.text(), f"info  increment sum mean {m:.6g} (se {se:.3g})"]
        mean_l2, se_l2 = stats.level_stats("l2_sq")
        mean_gp, se_gp = stats.level_stats("grad_pp")
        res.tables["moments.csv"] = (
            ("step", "t", "mean_l2_sq", "se_l2_sq", "mean_grad_pp", "se_grad_pp"),
            list(zip(range(base.steps + 1), stats.ledgers["t"][0], mean_l2, se_l2, mean_gp, se_gp)),
        )
    elif mode == "picard":
        out = run_picard_ensemble(cfg, paths, base.seed, workers=workers)
        for j, i in enumerate(out["path_indices"]):
            res.ledger_rows += _ledger_rows(i, {c: out["ledgers"][c][j] for c in LEDGER_COLUMNS})
        trace_rows = []
        for i, dist, wall in zip(out["path_indices"], out["traces"], out["wall_times"]):
            trace_rows += [(i, m + 1, d, w) for m, (d, w) in enumerate(zip(dist, wall))]
        res.tables["trace.csv"] = (("path", "iteration", "distance", "wall_time"), trace_rows)
        worst = float(np.max(out["fixed_point_residuals"]))
        ok = worst <= 2 * cfg.picard_tol
        res.passed = ok
        res.summary += [
            f"paths: {len(out['path_indices'])}",
            f"L = {cfg.L:.6g}, alpha = {cfg.weight:.6g}, L/alpha = {out['contraction_bound']:.4g}",
            f"info  median fitted Picard ratio {out['median_ratio']:.4g}",
            f"{'PASS' if ok else 'FAIL'}  fixed-point residual after one extra map: {worst:.3e} (limit {2 * cfg.picard_tol:.3e})",
        ]
    else:  # sweep-eps
        eps = base.eps_sweep or ((base.eps_viscosity,) if base.eps_viscosity else ())
        if not eps:
            raise MissingKey("eps")
        out = run_sweep_ensemble(base.replace(eps_viscosity=0.0), eps, paths, base.seed, workers=workers)
        rows = []
        for i, rep in enumerate(out["reports"]):
            res.ledger_rows += _ledger_rows(i, rep.baseline_ledger)
            rows += [(i,) + r for r in rep.rows()]
        res.tables["sweep.csv"] = (("path", "eps", "distance", "bound_quantity", "energy_residual_max", "l2_time_integral"), rows)
        res.passed = out["checks"].passed
        res.summary += _viscous_header(base)
        res.summary += [
            f"paths: {len(out['reports'])}",
            f"info  D(eps) decreasing on {100 * out['decreasing_fraction']:.1f}% of paths",
            f"bound limit (C1/2)^((p-1)/p) = {out['bound_limit']:.6g}",
            out["checks"].text(),
        ]
    return res


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splap", description="Implicit time stepping for the stochastic p-Laplace equation.")
    ap.add_argument("verb", nargs="?", choices=MODES, help="same as --mode")
    ap.add_argument("--config", type=Path, help="config file (key = value with [section] headers)")
    ap.add_argument("--out", type=Path, default=Path("splap_out"), help="output directory")
    ap.add_argument("--paths", type=int, help="number of noise paths (overrides the config)")
    ap.add_argument("--seed", type=int, help="base seed (overrides the config)")
    ap.add_argument("--mode", choices=MODES, help="what to run")
    ap.add_argument("--workers", type=int, default=1, help="worker processes for ensembles")
    ap.add_argument("--quiet", action="store_true", help="print nothing on success")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    if args.verb and args.mode and args.verb != args.mode:
        print(f"error: verb {args.verb!r} conflicts with --mode {args.mode!r}", file=sys.stderr)
        return 2
    mode = args.mode or args.verb or "run"
    if args.paths is not None and args.paths < 1:
        print("error: --paths must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.config is None:
            if mode != "check":
                print("error: --config is required", file=sys.stderr)
                return 2
            cfg = SimConfig(dim=1, n=16, p=2.0, T=0.5, steps=10)
        else:
            cfg = parse_config(args.config.read_text(encoding="utf-8"))
        res = execute(cfg, mode, paths=args.paths, seed=args.seed, workers=args.workers)
        out = write_outputs(res, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not args.quiet:
        print("\n".join(res.summary))
        print(f"outputs in {out}")
    return 0 if res.passed else 1


if __name__ == "__main__":
    sys.exit(main())
