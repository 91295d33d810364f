"""Command-line front end.

    tiltcomb count --family multiset --U all --R unbounded --n 100
    tiltcomb verdict --B power:0.4 --n 200,500,1000,2000
    tiltcomb --config run.ini

Results are written as an envelope whose payload is byte-stable for a
fixed config; the timestamp and wall-clock time live in a separate header.
Errors produce a JSON error record on stderr and a nonzero exit code.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction

import numpy as np

from . import __version__
from .approx import (
    ClosedFormKind,
    asymptotic_count,
    closed_form_asym,
    gap_moment_prediction,
    qlclt_delta,
    qlclt_error_budget,
)
from .config import (
    COMMANDS,
    ENSEMBLE_KEYS,
    RUN_KEYS,
    BRule,
    CommandConfig,
    build_config,
    read_config_file,
)
from .ensemble import aggregate_moments, solve_tilt, unrestricted_partitions
from .errors import DegenerateComplement, ParseError, ResourceLimit, TiltCombError
from .oracle import coeff_table, exact_tv
from .sampling import (
    free_smallest_gaps,
    sample_conditional_batch,
    sample_free_batch,
    statistic,
    write_ndjson,
)
from .tv import CONDITIONS, at_term_sheet, principle_verdict

EXIT_OK = 0
EXIT_MODULE_ERROR = 1
EXIT_PARSE_ERROR = 2
# exact counts are attached to approx rows up to this size
APPROX_EXACT_LIMIT = 5000


@dataclass
class ResultEnvelope:
    payload: dict
    header: dict = field(default_factory=dict)

    def payload_json(self) -> str:
        return json.dumps(self.payload, sort_keys=True, separators=(",", ":"), allow_nan=True)

    def to_json(self) -> str:
        head = json.dumps(self.header, sort_keys=True, separators=(",", ":"))
        return '{"header":' + head + ',"payload":' + self.payload_json() + "}\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.header):
            buf.write(f"# {k}: {self.header[k]}\n")
        meta = {k: v for k, v in self.payload.items() if k != "rows"}
        buf.write("# payload: " + json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n")
        rows = self.payload.get("rows", [])
        cols = []
        for r in rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(k)) for k in cols])
        return buf.getvalue()

    def render(self, fmt: str) -> str:
        return self.to_csv() if fmt == "csv" else self.to_json()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    return v


def _count_str(v) -> str:
    return str(v) if not isinstance(v, Fraction) or v.denominator != 1 else str(v.numerator)


def _log_exact(v) -> float:
    v = Fraction(v)
    if v <= 0:
        return -math.inf
    return math.log(v.numerator) - math.log(v.denominator)


# ---------------------------------------------------------------------------
# per-row workers (top level so they can run in worker processes)


def _row_count(cfg: CommandConfig, n: int) -> dict:
    ens = cfg.ensemble_spec()
    c = coeff_table(ens, None, n).count(n)
    return {"n": n, "count": _count_str(c), "log_count": _log_exact(c)}


def _row_tilt(cfg: CommandConfig, n: int) -> dict:
    ens = cfg.ensemble_spec()
    x = solve_tilt(ens, n) if cfg.x is None else cfg.x
    mo = aggregate_moments(ens, x, None, n)
    return {"n": n, "x": x, "log_x": math.log(x), "mu": mo.mu, "sigma": mo.sigma, "span": mo.span_B}


def _row_approx(cfg: CommandConfig, n: int) -> dict:
    ens = cfg.ensemble_spec()
    est = asymptotic_count(ens, n, cfg.x, C2=cfg.C2, C3=cfg.C3)
    budget = qlclt_error_budget(ens, est.x, n, None, C2=cfg.C2, C3=cfg.C3, lam=cfg.lam)
    row = {"n": n, "x": est.x, "log_estimate": est.log_value, "exact": None, "log_exact": None,
           "ratio": None, "sigma_max_over_sigma": budget.term_ratio, "sigma_lambda_M": budget.term_gap,
           "M_size": budget.M_size}
    want = cfg.exact if cfg.exact is not None else n <= APPROX_EXACT_LIMIT
    if want:
        c = coeff_table(ens, None, n).count(n)
        le = _log_exact(c)
        row.update(exact=_count_str(c), log_exact=le, ratio=math.exp(est.log_value - le))
    return row


def _row_budget(cfg: CommandConfig, n: int) -> dict:
    ens = cfg.ensemble_spec()
    x = solve_tilt(ens, n) if cfg.x is None else cfg.x
    b = qlclt_error_budget(ens, x, n, cfg.b_rule().resolve(n), C2=cfg.C2, C3=cfg.C3, lam=cfg.lam)
    return {"n": n, "x": x, **b.to_dict()}


def _row_tv(cfg: CommandConfig, n: int) -> dict:
    ens = cfg.ensemble_spec()
    B = cfg.b_rule().resolve(n)
    x = solve_tilt(ens, n) if cfg.x is None else cfg.x
    row = {"n": n, "B": cfg.B, "x": x}
    try:
        row.update(at_term_sheet(ens, x, n, B, C2=cfg.C2, C3=cfg.C3, lam=cfg.lam).to_json())
    except DegenerateComplement:
        row["note"] = "complement of B is empty or degenerate"
    want = cfg.exact if cfg.exact is not None else True
    row["d_TV_exact"] = exact_tv(ens, B, x, n) if want else None
    return row


def _row_stats(cfg: CommandConfig, n: int) -> dict:
    ens = cfg.ensemble_spec()
    if cfg.mode == "free":
        x = solve_tilt(ens, n) if cfg.x is None else cfg.x
        if cfg.statistic == "smallest_gap":
            vals = free_smallest_gaps(ens, x, cfg.seed, cfg.samples, n)
        else:
            batch = sample_free_batch(ens, x, cfg.seed, cfg.samples, n)
            vals = np.array([statistic(v, cfg.statistic, ens) for v in batch.vectors()])
        rate = None
    else:
        batch = sample_conditional_batch(ens, n, cfg.samples, cfg.seed, x=cfg.x, jobs=1)
        x = batch.x
        vals = np.array([statistic(v, cfg.statistic, ens) for v in batch.vectors()])
        rate = batch.acceptance_rate
    vals = vals.astype(float)
    row = {"n": n, "x": x, "mode": cfg.mode, "statistic": cfg.statistic, "samples": int(vals.size),
           "mean": float(vals.mean()), "second_moment": float((vals ** 2).mean()),
           "std_error": float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else None,
           "acceptance_rate": rate}
    if cfg.statistic == "smallest_gap" and ens.key() == unrestricted_partitions(ens.n_max).key():
        row["predicted_mean"] = gap_moment_prediction(n, 1)
        row["predicted_second_moment"] = gap_moment_prediction(n, 2)
    return row


_ROW = {"count": _row_count, "tilt": _row_tilt, "approx": _row_approx, "budget": _row_budget,
        "tv": _row_tv, "stats": _row_stats}


def _grid_rows(cfg: CommandConfig, worker) -> list:
    if cfg.jobs > 1 and len(cfg.n) > 1:
        with ProcessPoolExecutor(min(cfg.jobs, len(cfg.n))) as pool:
            return list(pool.map(worker, [cfg] * len(cfg.n), cfg.n))
    return [worker(cfg, n) for n in cfg.n]


# ---------------------------------------------------------------------------
# commands without a per-n row


def _rows_verdict(cfg: CommandConfig) -> list:
    ens = cfg.ensemble_spec()
    rule = cfg.b_rule()
    rep = principle_verdict(ens, list(cfg.n), rule.resolve, cfg.thresholds or None, exact=cfg.exact,
                            C2=cfg.C2, C3=cfg.C3, lam=cfg.lam, B_label=cfg.B)
    out = rep.to_json()
    row = {"n": rep.n, "B": cfg.B, "verdict": out["verdict"], "sigma1_sq": rep.sigma1_sq,
           "d_TV_normal": rep.normal_tv, "d_TV_lattice_normal": rep.lattice_tv, "d_TV_exact": rep.exact_tv}
    for k in CONDITIONS:
        row[k] = rep.conditions.get(k)
        row["pass_" + k] = rep.passed.get(k)
    row["grid"] = list(out["grid"])
    row["notes"] = list(rep.notes)
    return [row]


def _rows_sample(cfg: CommandConfig) -> list:
    ens = cfg.ensemble_spec()
    if cfg.n and cfg.mode == "conditional":
        if len(cfg.n) != 1:
            raise ParseError("sample takes a single n", field="n")
        batch = sample_conditional_batch(ens, cfg.n[0], cfg.samples, cfg.seed, x=cfg.x, jobs=cfg.jobs)
    else:
        n = cfg.n[-1] if cfg.n else None
        x = cfg.x if cfg.x is not None else solve_tilt(ens, n)
        batch = sample_free_batch(ens, x, cfg.seed, cfg.samples, n)
    if cfg.samples_out:
        write_ndjson(batch, cfg.samples_out)
    rows = []
    for d, v in zip(batch.draws.tolist(), batch.vectors()):
        rows.append({"draw": d, "total": v.total, "num_parts": v.num_parts, "multiplicities": v.to_json()})
    return rows


def _rows_report(cfg: CommandConfig) -> list:
    """Reproduction bundle: local limit, Hardy-Ramanujan, TV-vs-n and gap tables."""
    ens = unrestricted_partitions(100)
    rows = []
    for n in (100, 400, 1600):
        chk = qlclt_delta(ens, n)
        b = qlclt_error_budget(ens.with_n_max(n), chk.x, n)
        rows.append({"table": "qlclt", "n": n, "x": chk.x, "delta": chk.delta,
                     "log_exact_point_mass": chk.log_exact_point_mass,
                     "sigma_max_over_sigma": b.term_ratio, "sigma_lambda_M": b.term_gap})
    for n in (100, 200, 500, 1000, 2000):
        p = coeff_table(ens, None, n).count(n)
        hr = closed_form_asym(ClosedFormKind.HARDY_RAMANUJAN, n)
        gen = asymptotic_count(ens, n)
        rows.append({"table": "hardy_ramanujan", "n": n, "exact": str(p), "log_exact": _log_exact(p),
                     "ratio_hr": math.exp(hr.log_value - _log_exact(p)),
                     "ratio_generic": math.exp(gen.log_value - _log_exact(p)), "bound": 3 * n ** -0.25})
    for label in ("power:0.4", "odd"):
        rule = BRule(label)
        for n in (200, 500, 1000, 2000):
            B = rule.resolve(n)
            sheet = at_term_sheet(ens, None, n, B)
            rows.append({"table": "tv", "B": label, "n": n, "x": sheet.x, "sigma1_sq": sheet.sigma1_sq,
                         "d_TV_exact": exact_tv(ens, B, sheet.x, n), "d_TV_normal": sheet.normal_tv,
                         "d_TV_lattice_normal": sheet.lattice_tv})
    for n in (1000, 10000):
        big = ens.with_n_max(n)
        x = solve_tilt(big, n)
        g = free_smallest_gaps(big, x, cfg.seed, cfg.samples, n).astype(float)
        rows.append({"table": "smallest_gap", "n": n, "samples": int(g.size), "mean": float(g.mean()),
                     "second_moment": float((g ** 2).mean()), "predicted_mean": gap_moment_prediction(n, 1),
                     "predicted_second_moment": gap_moment_prediction(n, 2)})
    return rows


def execute(cfg: CommandConfig) -> ResultEnvelope:
    """Run one command; module errors propagate to the caller."""
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if cfg.command in _ROW:
            rows = _grid_rows(cfg, _ROW[cfg.command])
        elif cfg.command == "verdict":
            rows = _rows_verdict(cfg)
        elif cfg.command == "sample":
            rows = _rows_sample(cfg)
        else:
            rows = _rows_report(cfg)
    msgs = []
    for w in caught:
        text = f"{w.category.__name__}: {w.message}"
        if text not in msgs:
            msgs.append(text)
    ens_key = cfg.ensemble_spec().key() if cfg.command != "report" else unrestricted_partitions(100).key()
    payload = {"tool_version": __version__, "ensemble": ens_key, "command": cfg.echo(),
               "rows": _jsonable(rows), "warnings": msgs}
    header = {"timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
              "wall_clock_s": round(time.perf_counter() - t0, 6)}
    return ResultEnvelope(payload, header)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and not isinstance(obj, (int, float, str)):
        return obj.value
    return obj


# ---------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tiltcomb", description=__doc__.splitlines()[0])
    p.add_argument("command", nargs="?", choices=COMMANDS)
    p.add_argument("--config", help="INI file; flags override its values")
    for key in ENSEMBLE_KEYS:
        p.add_argument(f"--{key}", dest=f"ens_{key}")
    for key in RUN_KEYS:
        if key == "command":
            continue
        p.add_argument(f"--{key}", dest=f"run_{key}")
    p.add_argument("--threshold", action="append", default=[], metavar="NAME=VALUE",
                   help="verdict cutoff for one condition (repeatable)")
    return p


def parse_config(argv=None) -> CommandConfig:
    """CommandConfig from flags, optionally layered over a config file."""
    ns = _parser().parse_args(argv)
    values = read_config_file(ns.config) if ns.config else {}
    if ns.command:
        values.setdefault("run", {})["command"] = (ns.command, None)
    for key in ENSEMBLE_KEYS:
        v = getattr(ns, f"ens_{key}")
        if v is not None:
            values.setdefault("ensemble", {})[key] = (v, None)
    for key in RUN_KEYS:
        v = getattr(ns, f"run_{key}", None)
        if key != "command" and v is not None:
            values.setdefault("run", {})[key] = (v, None)
    for item in ns.threshold:
        name, sep, val = item.partition("=")
        if not sep or name not in CONDITIONS:
            raise ParseError(f"bad threshold {item!r}; expected one of {CONDITIONS}", field="threshold")
        values.setdefault("thresholds", {})[name] = (val, None)
    return build_config(values)


def _error_record(err: Exception) -> str:
    rec = {"error": type(err).__name__, "message": getattr(err, "message", str(err))}
    for k in ("line", "field"):
        if getattr(err, k, None) is not None:
            rec[k] = getattr(err, k)
    return json.dumps(rec, sort_keys=True)


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except (ParseError, OSError) as err:
        print(_error_record(err), file=sys.stderr)
        return EXIT_PARSE_ERROR
    try:
        env = execute(cfg)
    except (TiltCombError, ResourceLimit, ValueError, ArithmeticError) as err:
        print(_error_record(err), file=sys.stderr)
        return EXIT_MODULE_ERROR
    text = env.render(cfg.format)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
