"""Command-line front end.

Config files are flat ``key = value`` text with ``#`` comments; command
line flags override the file, which overrides the defaults below. Every
command writes ``<command>.csv``, ``<command>.json`` and ``manifest.json``
into the output directory (``--out-dir``, else $BBM_OUT_DIR, else
``./bbm_out``). Exit status: 0 ok, 2 validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bbmlab import __version__
from bbmlab import bbm_engine as eng
from bbmlab import extreme_stats as es
from bbmlab import fkpp_front as pde
from bbmlab import martingale_lab as ml
from bbmlab import oracles as orc
from bbmlab import phase_atlas as pa

COMMANDS = (
    "classify", "constants", "approx", "centering", "simulate", "fit",
    "localize", "decorate", "laplace", "martingale", "fkpp", "oracle",
)
ORACLE_KINDS = ("speed", "bridge", "count", "L", "identity")


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------------


def _float(s: str) -> float:
    s = s.strip().lower()
    if s in ("inf", "+inf", "infinity"):
        return math.inf
    if s == "-inf":
        return -math.inf
    return float(s)


def _opt_float(s: str):
    return None if s.strip().lower() in ("none", "") else _float(s)


def _floats(s: str) -> tuple:
    return tuple(_float(p) for p in s.split(",") if p.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "beta": (_float, 2.0),
    "sigma2": (_float, 0.5),
    "family": (str, "none"),
    "target_beta": (_float, 1.5),
    "target_sigma2": (_float, 0.5),
    "h": (_float, math.inf),
    "t": (_float, 10.0),
    "ts": (_floats, (6.0, 8.0, 10.0, 12.0)),
    "seed": (int, 0),
    "reps": (int, 100),
    "threads": (int, 0),
    "two_type": (_bool, True),
    "prune_depth": (_opt_float, None),
    "check_interval": (_float, 0.1),
    "warm_depth": (_opt_float, None),
    "max_population": (int, eng.DEFAULT_MAX_EVENTS),
    "qs": (_floats, (0.1, 0.5, 0.9)),
    "l_pinned": (_opt_float, None),
    "R": (_floats, (2.0, 4.0, 8.0)),
    "A": (_float, 2.0),
    "a_keep": (_float, es.A_KEEP),
    "rho": (_float, math.sqrt(2.0)),
    "xs": (_floats, (-3.0, -2.0, -1.0, 0.0, 1.0)),
    "lam": (_float, 0.5),
    "dx": (_float, 0.05),
    "record_dt": (_float, 0.1),
    "speed_window": (_floats, (30.0, 60.0)),
    "oracle": (str, "speed"),
    "grid_n": (int, 100),
    "x1": (_float, 1.0),
    "x2": (_float, 1.0),
    "n_bridges": (int, 100_000),
    "n_steps": (int, 512),
    "xi": (_floats, (0.5, 1.0, 2.0)),
}


def defaults() -> dict:
    return {k: v for k, (_, v) in SCHEMA.items()}


def _coerce(key: str, raw: str, where: str):
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        return SCHEMA[key][0](raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def parse_config_text(text: str, name: str = "<config>") -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{name}:{n}: expected 'key = value'")
        k, v = (p.strip() for p in body.split("=", 1))
        out[k] = _coerce(k, v, f"{name}:{n}")
    return out


def load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    cfg = defaults()
    cfg.update(parse_config_text(text, str(p)))
    return cfg


# --- outputs -------------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


_KINDS = {"float": (float, int, np.floating, np.integer), "int": (int, np.integer), "str": (str,)}


@dataclass(frozen=True)
class Column:
    name: str
    unit: str
    kind: str = "float"


def write_outputs(rows, schema, path) -> str:
    """CSV with a ``name [unit]`` header; returns the sha256 of the bytes written."""
    rows = [tuple(r) for r in rows]
    for i, r in enumerate(rows):
        if len(r) != len(schema):
            raise ConfigError(f"row {i} has {len(r)} fields, schema has {len(schema)}")
        for c, v in zip(schema, r):
            if isinstance(v, (bool, np.bool_)) and c.kind != "int":
                raise ConfigError(f"row {i}: {c.name} expects {c.kind}, got bool")
            if not isinstance(v, _KINDS[c.kind]):
                raise ConfigError(f"row {i}: {c.name} expects {c.kind}, got {type(v).__name__}")
    lines = [",".join(f"{c.name} [{c.unit}]" for c in schema)]
    lines += [",".join(fmt(v) for v in r) for r in rows]
    data = ("\n".join(lines) + "\n").encode("utf-8")
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def write_json(obj, path) -> str:
    data = (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode("utf-8")
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str
    started: str
    finished: str = ""
    outputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": _jsonable(self.config),
            "seed": self.seed,
            "version": self.version,
            "started": self.started,
            "finished": self.finished,
            "outputs": self.outputs,
        }


@dataclass
class Result:
    rows: list
    schema: list
    summary: dict
    text: str = ""


# --- commands ----------------------------------------------------------------------------


def _params(c) -> pa.Params:
    return pa.Params(c["beta"], c["sigma2"])


def _family(c) -> pa.ApproxFamily:
    if c["family"] == "none":
        raise ConfigError("this command needs 'family'")
    return pa.ApproxFamily(pa.Params(c["target_beta"], c["target_sigma2"]), c["family"], c["h"])


def _threads(c) -> int:
    return c["threads"] or eng.default_threads()


def _constants_dict(p: pa.Params) -> dict:
    k = pa.derived_constants(p)
    return {"v": k.v, "theta": k.theta, "b_star": k.b_star, "a_star": k.a_star, "p_star": k.p_star,
            "v_star": k.v_star}


_KV = [Column("key", "name", "str"), Column("value", "1")]


def cmd_classify(c) -> Result:
    p = _params(c)
    r = pa.classify(p).value
    k = _constants_dict(p)
    text = r + "\n" + "\n".join(f"{n} = {fmt(v)}" for n, v in k.items())
    return Result([(n, v) for n, v in k.items()], _KV, {"region": r, **k}, text)


def cmd_constants(c) -> Result:
    p = _params(c)
    k = _constants_dict(p)
    summary = {"region": pa.classify(p).value, **k}
    if c["family"] != "none":
        f = _family(c)
        summary["c_constant"] = pa.c_constant(f)
        k = {**k, "c_constant": summary["c_constant"]}
    return Result([(n, v) for n, v in k.items()], _KV, summary)


def cmd_approx(c) -> Result:
    f = _family(c)
    rows = []
    for t in c["ts"]:
        q = pa.make_approximation(f, t)
        res = max(abs(r) for r in pa.defining_residuals(f, q, t))
        rows.append((t, q.beta, q.sigma2, pa.classify(q).value, res))
    schema = [Column("t", "time"), Column("beta_t", "1/time"), Column("sigma2_t", "space^2/time"),
              Column("region", "label", "str"), Column("residual", "1")]
    return Result(rows, schema, {"family": f.family, "h": f.h, "rows": rows})


def cmd_centering(c) -> Result:
    f = _family(c)
    rows = []
    for t in c["ts"]:
        m = pa.centering(f, t)
        rows.append((t, m.leading, m.log_coeff, m.value(t)))
    schema = [Column("t", "time"), Column("leading", "space/time"), Column("log_coeff", "space"),
              Column("m", "space")]
    return Result(rows, schema, {"family": f.family, "h": f.h, "rows": rows})


def _engine_cfg(c, t=None, two_type=None) -> eng.EngineConfig:
    return eng.EngineConfig(
        _params(c), c["t"] if t is None else t, c["seed"],
        two_type=c["two_type"] if two_type is None else two_type,
        prune_depth=c["prune_depth"], check_interval=c["check_interval"],
        max_population=c["max_population"],
    )


def cmd_simulate(c) -> Result:
    cfg = _engine_cfg(c)
    out = eng.run_replications(cfg, c["reps"], eng.snapshot_summary, _threads(c))
    rows = [(i, s["max"], s["population"], s["n_type2"], s["transformed"], s["pruned"], s["events"],
             int(s["valid"])) for i, s in enumerate(out)]
    schema = [Column("replication", "index", "int"), Column("max", "space"),
              Column("population", "count", "int"), Column("n_type2", "count", "int"),
              Column("transformed", "count", "int"), Column("pruned", "count", "int"),
              Column("events", "count", "int"), Column("valid", "flag", "int")]
    maxima = np.array([s["max"] for s in out])
    return Result(rows, schema, {"merged": eng.merge_summaries(out), "median_max": float(np.median(maxima))})


def cmd_fit(c) -> Result:
    ts = sorted(c["ts"])
    cfg = eng.EngineConfig(_params(c), ts[-1], c["seed"], two_type=c["two_type"],
                           prune_depth=c["prune_depth"], check_interval=c["check_interval"],
                           max_population=c["max_population"], record_times=tuple(ts))
    rec = eng.run_replications(cfg, c["reps"], lambda s: s.record_max.copy(), _threads(c))
    med = np.median(np.array(rec), axis=0)
    fit = es.fit_log_correction(list(zip(ts, med)), c["l_pinned"])
    rows = [(t, float(m), c["reps"]) for t, m in zip(ts, med)]
    schema = [Column("t", "time"), Column("median_max", "space"), Column("replications", "count", "int")]
    return Result(rows, schema, {"l": fit.l, "s": fit.s, "c": fit.c, "residual": fit.residual,
                                 "pinned": fit.pinned, "rows": rows})


def cmd_localize(c) -> Result:
    f = _family(c)
    t = c["t"]
    q = pa.make_approximation(f, t)
    cfg = eng.EngineConfig(q, t, c["seed"], two_type=True, prune_depth=c["prune_depth"],
                           check_interval=c["check_interval"], max_population=c["max_population"])
    level = pa.centering(f, t).value(t) - c["A"]
    e = es.build_ensemble(cfg, c["reps"], f, floor=level, threads=_threads(c), depth_first=True,
                          warm_depth=c["warm_depth"])
    rows = [(R, es.localization_fraction(e, es.WindowSpec(f, R), c["A"])) for R in c["R"]]
    schema = [Column("R", "1"), Column("fraction", "1")]
    return Result(rows, schema, {"family": f.family, "h": f.h, "t": t, "A": c["A"], "level": level,
                                 "replications": e.size, "rows": rows})


def cmd_decorate(c) -> Result:
    d = es.decoration_gaps(_params(c), c["t"], c["rho"], c["reps"], c["seed"], c["a_keep"],
                           threads=_threads(c))
    rows = [(float(lo), float(hi), float(v)) for lo, hi, v in zip(d.gap_edges[:-1], d.gap_edges[1:], d.gap_hist)]
    schema = [Column("gap_lo", "space"), Column("gap_hi", "space"), Column("frequency", "1")]
    return Result(rows, schema, {"accepted": d.n_accepted, "acceptance": d.acceptance,
                                 "mean_points": d.mean_points, "low_confidence": d.low_confidence,
                                 "mean_first_gap": float(d.first_gaps.mean()) if len(d.first_gaps) else math.nan})


def cmd_laplace(c) -> Result:
    tb = es.laplace_shape(_params(c), c["t"], c["xs"], c["A"], c["rho"], c["reps"], c["seed"],
                          threads=_threads(c))
    rows = [tuple(float(z) for z in r) for r in zip(tb.x, tb.phi, tb.se, tb.shape, tb.ratio)]
    schema = [Column("x", "space"), Column("phi", "1"), Column("se", "1"), Column("shape", "1"),
              Column("ratio", "1")]
    return Result(rows, schema, {"spread": tb.spread, "rows": rows})


def cmd_martingale(c) -> Result:
    cfg = _engine_cfg(c, two_type=False)
    lam = c["lam"]
    out = eng.run_replications(cfg, c["reps"], lambda s: (ml.additive_W(s, lam), ml.derivative_Z(s)),
                               _threads(c))
    w = np.array([o[0] for o in out])
    z = np.array([o[1] for o in out])
    rows = [(i, a, b) for i, (a, b) in enumerate(out)]
    schema = [Column("replication", "index", "int"), Column("W", "1"), Column("Z", "space")]
    n = len(out)
    se = (lambda a: float(a.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan)
    se_exact = math.sqrt(ml.derivative_Z_second_moment(cfg.params, cfg.horizon) / n)
    return Result(rows, schema, {"mean_W": w.mean(), "se_W": se(w), "mean_Z": z.mean(), "se_Z": se(z),
                                 "se_Z_exact": se_exact, "P_Z_positive": float((z > 0).mean())})


def cmd_fkpp(c) -> Result:
    cfg = pde.PdeConfig.default(_params(c), c["t"], dx=c["dx"])
    s = pde.solve_coupled(cfg, record_dt=c["record_dt"])
    rows = [tuple(float(z) for z in r) for r in s.rows()]
    schema = [Column("s", "time"), Column("front_u", "space"), Column("front_v", "space"),
              Column("mass_u", "space"), Column("mass_v", "space")]
    w = c["speed_window"]
    summary = {"dx": cfg.dx, "dt": cfg.dt, "x_lo": cfg.x_lo, "x_hi": cfg.x_hi}
    if len(w) == 2 and w[1] <= c["t"]:
        summary["speed_u"] = pde.front_speed(s.times, s.front_u, w)
        summary["speed_v"] = pde.front_speed(s.times, s.front_v, w)
    return Result(rows, schema, summary)


def cmd_oracle(c) -> Result:
    kind = c["oracle"]
    if kind == "speed":
        p = _params(c)
        s = orc.solve_speed_optimization(p, c["grid_n"])
        row = (s.p, s.a, s.b, s.value, s.slack_first, s.slack_total)
        schema = [Column("p", "1"), Column("a", "space/time"), Column("b", "space/time"),
                  Column("value", "space/time"), Column("slack_first", "1/time"), Column("slack_total", "1/time")]
        return Result([row], schema, dict(zip(("p", "a", "b", "value", "slack_first", "slack_total"), row)))
    if kind == "bridge":
        exact = orc.bridge_prob(c["x1"], c["x2"], c["t"])
        e = orc.bridge_prob_mc(c["x1"], c["x2"], c["t"], c["n_bridges"], c["n_steps"], c["seed"])
        row = (c["x1"], c["x2"], c["t"], exact, e.raw, e.corrected, e.se)
        schema = [Column("x1", "space"), Column("x2", "space"), Column("t", "time"), Column("exact", "1"),
                  Column("mc_raw", "1"), Column("mc_corrected", "1"), Column("se", "1")]
        return Result([row], schema, dict(zip(("x1", "x2", "t", "exact", "mc_raw", "mc_corrected", "se"), row)))
    if kind == "count":
        b = c["beta"]
        cfg = eng.EngineConfig(_params(c), c["t"], c["seed"], two_type=True,
                               max_population=c["max_population"])
        cnt = np.array(eng.run_replications(cfg, c["reps"], lambda s: s.n_transformed, _threads(c)), dtype=float)
        exact = orc.expected_transform_count(b, c["t"])
        se = float(cnt.std(ddof=1) / math.sqrt(len(cnt))) if len(cnt) > 1 else math.nan
        row = (b, c["t"], exact, float(cnt.mean()), se)
        schema = [Column("beta", "1/time"), Column("T", "time"), Column("exact", "count"),
                  Column("mc_mean", "count"), Column("se", "count")]
        return Result([row], schema, dict(zip(("beta", "T", "exact", "mc_mean", "se"), row)))
    if kind == "L":
        f = _family(c)
        rows = []
        for xi in c["xi"]:
            for r in orc.L_limit_check(xi, c["ts"], f):
                rows.append((r["xi"], r["t"], r["L"], r["limit"], r["residual"]))
        schema = [Column("xi", "1"), Column("t", "time"), Column("L", "1"), Column("limit", "1"),
                  Column("residual", "1")]
        return Result(rows, schema, {"family": f.family, "h": f.h, "rows": rows})
    if kind == "identity":
        r1, r2 = orc.identity_residuals(_params(c))
        return Result([("first", r1), ("second", r2)], _KV, {"first": r1, "second": r2})
    raise ConfigError(f"unknown oracle kind {kind!r}; expected one of {ORACLE_KINDS}")


DISPATCH = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# --- driver ------------------------------------------------------------------------------


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def run_command(name: str, config: dict, out_dir) -> tuple[int, RunManifest | None, str]:
    """Execute one command; returns (exit status, manifest, message)."""
    if name not in DISPATCH:
        return 2, None, f"unknown command {name!r}"
    out = Path(out_dir)
    man = RunManifest(name, dict(config), config["seed"], __version__, _now())
    try:
        res = DISPATCH[name](config)
    except (ConfigError, pa.ParamError, es.EstimatorError, ValueError) as exc:
        return 2, None, f"validation error: {exc}"
    except Exception as exc:  # noqa: BLE001  runtime failures map to status 3
        return 3, None, f"runtime failure: {type(exc).__name__}: {exc}"
    try:
        out.mkdir(parents=True, exist_ok=True)
        man.outputs[f"{name}.csv"] = write_outputs(res.rows, res.schema, out / f"{name}.csv")
        man.outputs[f"{name}.json"] = write_json(res.summary, out / f"{name}.json")
        man.finished = _now()
        write_json(man.to_dict(), out / "manifest.json")
    except ConfigError as exc:
        return 2, None, f"validation error: {exc}"
    except OSError as exc:
        return 3, None, f"I/O failure: {exc}"
    return 0, man, res.text


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bbmlab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("kind", nargs="?", help="oracle kind for the 'oracle' command")
    ap.add_argument("--config", help="key = value config file")
    ap.add_argument("--out-dir", dest="out_dir")
    for key in SCHEMA:
        ap.add_argument(f"--{key.replace('_', '-')}", dest=f"opt_{key}", metavar=key.upper())
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(ns.config) if ns.config else defaults()
        for key in SCHEMA:
            raw = getattr(ns, f"opt_{key}")
            if raw is not None:
                cfg[key] = _coerce(key, raw, f"--{key}")
        if ns.command == "oracle" and ns.kind:
            cfg["oracle"] = ns.kind
        elif ns.kind:
            raise ConfigError(f"unexpected argument {ns.kind!r}")
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    out_dir = ns.out_dir or os.environ.get("BBM_OUT_DIR") or "bbm_out"
    code, man, msg = run_command(ns.command, cfg, out_dir)
    if code:
        print(msg, file=sys.stderr)
    else:
        if msg:
            print(msg)
        print(f"wrote {', '.join(man.outputs)} to {out_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
