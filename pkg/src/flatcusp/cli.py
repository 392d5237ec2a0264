"""Command line front-end: ``flatcusp <command> [--config PATH] [options]``.

Commands: table, corner, tail, expansion, transitions, correlations, all.
Every report is JSON with the resolved configuration, its hash and the seed
embedded; rerunning with the same pair reproduces every number (only the
``timestamp`` field changes).
"""
import argparse
import configparser
import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, field, fields
import datetime
import functools
import hashlib
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import corner_series as cs
from . import induced as ind
from . import stats
from .geometry import GeometryError, TableSpec, build_table

log = logging.getLogger("flatcusp")


class ConfigError(ValueError):
    """Invalid configuration file or value."""


# configuration

@dataclass
class InducedSection:
    K0: int = 10
    k0: int = 5
    gamma_bar: float = 0.1
    cap: int = 10_000_000


@dataclass
class RunSection:
    seed: int = 1
    workers: int = 1
    precision: str = "standard"
    output: str = "out"


@dataclass
class CornerSection:
    count: int = 200
    n_lo: float = 1e2
    n_hi: float = 1e4
    dump: int = 3


@dataclass
class ExpansionSection:
    count: int = 400
    n_lo: float = 1e3
    n_hi: float = 1e5
    alt_seed_factor: float = 10.0
    matrix_checks: int = 5
    one_step_n0: str = "50,100,200,400"
    one_step_n_hi: int = 20_000
    one_step_cells: int = 24


@dataclass
class TailSection:
    samples_M: int = 2_100_000
    samples_full: int = 200_000
    full_cap: int = 100_000
    stream_size: int = 100_000
    n_min: int = 20
    sweep_betas: str = "2.5,4"


@dataclass
class TransitionSection:
    returns: int = 20_000_000
    band_lo: int = 100
    band_hi: int = 300


@dataclass
class CorrelationSection:
    orbit_length: int = 10_000_000
    n_max: int = 100
    mode: int = 1
    n_boot: int = 200


SECTIONS = {
    "table": TableSpec,
    "induced": InducedSection,
    "run": RunSection,
    "corner": CornerSection,
    "expansion": ExpansionSection,
    "tail": TailSection,
    "transitions": TransitionSection,
    "correlations": CorrelationSection,
}


@dataclass
class ExperimentConfig:
    table: TableSpec = field(default_factory=TableSpec)
    induced: InducedSection = field(default_factory=InducedSection)
    run: RunSection = field(default_factory=RunSection)
    corner: CornerSection = field(default_factory=CornerSection)
    expansion: ExpansionSection = field(default_factory=ExpansionSection)
    tail: TailSection = field(default_factory=TailSection)
    transitions: TransitionSection = field(default_factory=TransitionSection)
    correlations: CorrelationSection = field(default_factory=CorrelationSection)

    def to_dict(self):
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def hash(self):
        # where and on how many workers a run happens does not change its results
        d = self.to_dict()
        d["run"] = {k: v for k, v in d["run"].items() if k not in ("output", "workers")}
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def induced_config(self):
        return ind.InducedConfig(K0=self.induced.K0, k0=self.induced.k0, cap=self.induced.cap)

    def validate(self):
        """Check every numeric field against the module preconditions."""
        t = self.table
        if not t.beta > 2:
            raise ConfigError(f"table.beta = {t.beta}: beta must exceed 2 "
                              "(beta = 2 is the classical cusp, outside the model)")
        if not 0 < t.eps0 < 1:
            raise ConfigError(f"table.eps0 = {t.eps0}: must lie in (0, 1)")
        for name in ("join_radius", "wall_radius", "tau_min"):
            if not getattr(t, name) > 0:
                raise ConfigError(f"table.{name} must be positive")
        try:
            self.induced_config()
        except ValueError as exc:
            raise ConfigError(f"induced: {exc}") from exc
        if not 0 < self.induced.gamma_bar < math.pi / 2:
            raise ConfigError("induced.gamma_bar must lie in (0, pi/2)")
        if self.run.precision not in ("standard", "extended"):
            raise ConfigError(f"run.precision = {self.run.precision!r}: use standard or extended")
        if self.run.workers < 1:
            raise ConfigError("run.workers must be at least 1")
        if not 0 <= self.run.seed < 2**64:
            raise ConfigError("run.seed must be an unsigned 64-bit integer")
        positive = [("corner", "count"), ("expansion", "count"), ("tail", "samples_M"),
                    ("tail", "samples_full"), ("tail", "stream_size"), ("tail", "full_cap"),
                    ("transitions", "returns"), ("correlations", "orbit_length"),
                    ("correlations", "n_max")]
        for sec, name in positive:
            if not getattr(getattr(self, sec), name) >= 1:
                raise ConfigError(f"{sec}.{name} must be at least 1")
        for sec in ("corner", "expansion"):
            s = getattr(self, sec)
            if not 2 <= s.n_lo < s.n_hi:
                raise ConfigError(f"{sec}: need 2 <= n_lo < n_hi")
        if self.correlations.n_max > 200:
            raise ConfigError("correlations.n_max must not exceed 200")
        if not self.transitions.band_lo < self.transitions.band_hi:
            raise ConfigError("transitions: need band_lo < band_hi")
        self.one_step_n0()
        self.sweep_betas()

    def one_step_n0(self):
        try:
            vals = [int(v) for v in self.expansion.one_step_n0.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"expansion.one_step_n0: {exc}") from exc
        if not vals or min(vals) < 2:
            raise ConfigError("expansion.one_step_n0 needs integers >= 2")
        return sorted(vals)

    def sweep_betas(self):
        try:
            vals = [float(v) for v in self.tail.sweep_betas.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"tail.sweep_betas: {exc}") from exc
        if any(not b > 2 for b in vals):
            raise ConfigError("tail.sweep_betas: every beta must exceed 2")
        return vals


def _convert(value, kind, where):
    try:
        if kind is int:
            f = float(value)
            if f != int(f):
                raise ValueError(f"{value!r} is not an integer")
            return int(f)
        if kind is float:
            return float(value)
        return str(value)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _line_of(text, key):
    for k, line in enumerate(text.splitlines(), 1):
        if line.split("=")[0].split(":")[0].strip() == key:
            return k
    return None


def load_config(path=None, overrides=None):
    """Read a key/value config (INI sections; a bare file means [table])."""
    cfg = ExperimentConfig()
    text = ""
    if path is not None:
        with open(path) as fh:
            text = fh.read()
        body = text if text.lstrip().startswith("[") else "[table]\n" + text
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(body, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for sec in parser.sections():
            if sec not in SECTIONS:
                raise ConfigError(f"{path}: unknown section [{sec}]")
            target = getattr(cfg, sec)
            kinds = {f.name: f.type for f in fields(target)}
            for key, value in parser.items(sec):
                if key not in kinds:
                    line = _line_of(text, key)
                    raise ConfigError(f"{path}:{line}: unknown field {sec}.{key}")
                kind = {"int": int, "float": float, "str": str}.get(kinds[key], kinds[key])
                where = f"{path}:{_line_of(text, key)}: field {sec}.{key}"
                setattr(target, key, _convert(value, kind, where))
    for (sec, key), value in (overrides or {}).items():
        setattr(getattr(cfg, sec), key, value)
    cfg.validate()
    return cfg


# workers: tables are rebuilt once per process from the (hashable) spec

@functools.lru_cache(maxsize=4)
def _table(spec_items):
    return build_table(TableSpec(**dict(spec_items)))


def _spec_key(cfg):
    return tuple(sorted(asdict(cfg.table).items()))


def _tail_stream(spec_items, induced, seed, stream, count, full_cap):
    table = _table(spec_items)
    b = ind.sample_returns(table, count, seed, stream, ind.InducedConfig(**induced), full_cap)
    return {"inM": b.inM, "R": b.R, "cell": b.cell, "flags": b.flags}


def _corner_chunk(spec_items, entries, gamma_bar, mode, B0_factor):
    from .dynamics import PhasePoint
    table = _table(spec_items)
    out = []
    for arc, u, phi in entries:
        e = PhasePoint.from_arc(table, arc, u, phi)
        B0 = None
        if B0_factor != 1.0:
            B0 = B0_factor * (2.0 * e.K / math.cos(e.phi) + 1.0 / table.tau_max)
        if mode == "extended":
            from .precise import precise_corner_series
            out.append(precise_corner_series(table, e, gamma_bar, B0))
        elif mode == "reduced":
            out.append(_reduced_from_entry(table, e, gamma_bar))
        else:
            out.append(cs.run_corner_series(table, e, gamma_bar, B0))
    return out


def _reduced_from_entry(table, entry, gamma_bar):
    """Reduced recursion seeded by the entry flight's landing point."""
    from . import _core
    from .dynamics import PHI_TOL, s_floor
    j, u, phi, _, fl = _core.step(table.packed, entry.arc, entry.u, entry.phi, PHI_TOL,
                                  s_floor(table))
    if fl & _core.FATAL or not table.is_cusp_arc(j):
        return cs.make_record(table.spec.beta, [], [], [], [], [], flags=fl | _core.FLAG_NOHIT)
    b = table.spec.beta
    v1 = 0.5 * math.pi + table.packed[j, 5] * phi + math.atan(u ** (b - 1.0))
    return cs.reduced_series(u, v1, b, table.spec.eps0, gamma_bar)


class Runner:
    """Shared state of one command invocation: config, pool, outputs."""

    def __init__(self, cfg, out_dir, workers=None):
        self.cfg = cfg
        self.out = out_dir
        self.workers = workers or cfg.run.workers
        self.hash = cfg.hash()
        self.artifacts = []
        os.makedirs(out_dir, exist_ok=True)

    def map(self, fn, jobs):
        """Run fn(*job) for every job; results in job order."""
        if self.workers == 1:
            return [fn(*job) for job in jobs]
        with ProcessPoolExecutor(max_workers=self.workers) as pool:
            futs = [pool.submit(fn, *job) for job in jobs]
            return [f.result() for f in futs]

    def path(self, name):
        return os.path.join(self.out, name)

    def write_json(self, name, command, results):
        doc = {
            "command": command,
            "config": self.cfg.to_dict(),
            "config_hash": self.hash,
            "seed": self.cfg.run.seed,
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "results": results,
        }
        with open(self.path(name), "w") as fh:
            json.dump(_plain(doc), fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")
        self.artifacts.append((name, command))

    def write_csv(self, name, command, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["# config_hash=" + self.hash, "seed=" + str(self.cfg.run.seed)])
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        self.artifacts.append((name, command))

    def add_artifact(self, name, command):
        self.artifacts.append((name, command))

    def write_manifest(self):
        path = self.path("MANIFEST.json")
        entries = {}
        if os.path.exists(path):
            with open(path) as fh:
                entries = {e["file"]: e for e in json.load(fh)["artifacts"]}
        for name, command in self.artifacts:
            with open(self.path(name), "rb") as fh:
                digest = hashlib.sha256(fh.read()).hexdigest()
            entries[name] = {"file": name, "command": command, "config_hash": self.hash,
                             "seed": self.cfg.run.seed, "sha256": digest}
        with open(path, "w") as fh:
            json.dump({"artifacts": [entries[k] for k in sorted(entries)]}, fh, indent=2)
            fh.write("\n")

    # checkpoints: one file per completed stream
    def checkpoint_dir(self, command):
        d = self.path(os.path.join("checkpoints", f"{command}-{self.hash}"))
        os.makedirs(d, exist_ok=True)
        return d

    def streamed(self, command, label, fn, jobs):
        """Like map, but each finished job is stored and reused on a rerun."""
        d = self.checkpoint_dir(command)
        results = [None] * len(jobs)
        todo = []
        for k in range(len(jobs)):
            p = os.path.join(d, f"{label}-{k:05d}.npz")
            if os.path.exists(p):
                with np.load(p) as z:
                    results[k] = {key: z[key] for key in z.files}
            else:
                todo.append(k)
        batch = max(self.workers, 1) * 4
        for start in range(0, len(todo), batch):
            ks = todo[start:start + batch]
            for k, res in zip(ks, self.map(fn, [jobs[k] for k in ks])):
                np.savez(os.path.join(d, f"{label}-{k:05d}.npz"), **res)
                results[k] = res
            with open(os.path.join(d, "progress.json"), "w") as fh:
                json.dump({"label": label, "completed": sum(r is not None for r in results),
                           "total": len(jobs)}, fh)
        return results


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _table_from(cfg):
    try:
        return build_table(cfg.table)
    except GeometryError as exc:
        raise ConfigError(f"table: {exc}") from None


# commands

def cmd_table(cfg, runner, args):
    table = _table_from(cfg)
    summary = table.summary()
    rep = table.invariant_report()
    runner.write_json("table.json", "table", {"summary": summary, "invariants": rep})
    _print_rows("table", [("total_length", summary.get("total_length")),
                          ("r_f", table.r_f), ("r_D", table.r_D), ("l_D", table.l_D),
                          ("tau_max", table.tau_max),
                          ("perpendicularity_residual", rep["perpendicularity_residual"]),
                          ("invariants_ok", rep["ok"])])
    return 0 if rep["ok"] else 1


def _entry_jobs(cfg, table, entries, mode, B0_factor=1.0):
    key = _spec_key(cfg)
    packed = [(e.arc, e.u, e.phi) for e in entries]
    size = max(1, math.ceil(len(packed) / (4 * runner_workers(cfg))))
    return [(key, packed[i:i + size], cfg.induced.gamma_bar, mode, B0_factor)
            for i in range(0, len(packed), size)]


def runner_workers(cfg):
    return max(cfg.run.workers, 1)


def _run_entries(runner, cfg, table, entries, mode, B0_factor=1.0):
    chunks = runner.map(_corner_chunk, _entry_jobs(cfg, table, entries, mode, B0_factor))
    return [rec for chunk in chunks for rec in chunk]


def cmd_corner(cfg, runner, args):
    table = _table_from(cfg)
    c = cfg.corner
    entries = cs.entry_ensemble(table, c.count, cfg.run.seed, (c.n_lo, c.n_hi))
    mode = "reduced" if args.reduced else ("extended" if cfg.run.precision == "extended" else "exact")
    t0 = time.time()
    records = _run_entries(runner, cfg, table, entries, mode)
    valid = [r for r in records if r.valid]
    ledger = {"requested": len(records), "valid": len(valid),
              "discarded": len(records) - len(valid),
              "flags": sorted({int(r.flags) for r in records if not r.valid})}
    results = {"mode": mode, "discards": ledger}
    try:
        results["report"] = cs.asymptotics_report(records)
    except stats.FitError as exc:
        results["error"] = str(exc)
        runner.write_json("corner.json", "corner", results)
        log.error("corner: %s", exc)
        return 3
    if args.compare:
        exact = records if mode == "exact" else _run_entries(runner, cfg, table, entries, "exact")
        rows = [cs.compare(r, table.spec.eps0) for r in exact if r.valid]
        results["compare"] = {
            "max_rel_entering": max(r["max_rel_entering"] for r in rows),
            "max_rel_all": max(r["max_rel_all"] for r in rows),
            "length_mismatches": sum(r["N_exact"] != r["N_reduced"] for r in rows),
            "series": rows,
        }
    log.info("corner: %d series in %.1f s", len(records), time.time() - t0)
    rows = []
    for k, r in enumerate(records):
        if r.valid:
            adi = cs.adiabatic_invariant(r)
            rows.append([k, r.N, r.N1, r.Nbar, r.N3, r.alpha[0], r.gamma[0], adi["C_N"],
                         adi["drift"], r.log_Lambda])
    runner.write_csv("corner_series.csv", "corner",
                     ["index", "N", "N1", "Nbar", "N3", "alpha1", "gamma1", "C_N", "drift",
                      "log_Lambda"], rows)
    for k, r in enumerate(valid[: c.dump]):
        name = f"corner_series_{k:03d}.csv"
        r.write_csv(runner.path(name))
        runner.add_artifact(name, "corner")
    runner.write_json("corner.json", "corner", results)
    rep = results["report"]
    _print_rows("corner", [(k, _fmt_fit(v)) for k, v in rep["fits"].items()]
                + [("N1/N variation", rep["N1_over_N"]["variation"])]
                + ([("compare max rel (entering)", results["compare"]["max_rel_entering"]),
                    ("compare max rel (all)", results["compare"]["max_rel_all"])]
                   if args.compare else []))
    return 0


def cmd_expansion(cfg, runner, args):
    table = _table_from(cfg)
    e = cfg.expansion
    entries = cs.entry_ensemble(table, e.count, cfg.run.seed, (e.n_lo, e.n_hi), stream=0xE5)
    mode = "extended" if cfg.run.precision == "extended" else "exact"
    recs = _run_entries(runner, cfg, table, entries, mode)
    rep = cs.expansion_report(recs)
    alt = _run_entries(runner, cfg, table, entries, mode, e.alt_seed_factor)
    rep_alt = cs.expansion_report(alt)
    a, b = rep["Lambda_vs_N"], rep_alt["Lambda_vs_N"]
    seeds = {"B0_factor": e.alt_seed_factor, "exponent_default": a["exponent"],
             "exponent_alt": b["exponent"], "difference": abs(a["exponent"] - b["exponent"]),
             "stderr": a["stderr"], "within_stderr": abs(a["exponent"] - b["exponent"]) < a["stderr"]}
    checks = _matrix_checks(table, entries, recs, e.matrix_checks)
    n0s = cfg.one_step_n0()
    icfg = cfg.induced_config()
    contrib = ind.cell_contributions(table, n0s[0], e.one_step_n_hi, icfg, n_cells=e.one_step_cells)
    sums = [ind.one_step_expansion_sum(table, n0, icfg, contributions=contrib) for n0 in n0s]
    one_step = {
        "k0": icfg.k0,
        "sums": [{k: s[k] for k in ("n0", "sum", "body", "tail_estimate", "tail_exponent",
                                   "tail_stderr")} for s in sums],
        "cells": contrib[0], "per_cell": contrib[1], "pieces": contrib[2],
        "monotone_decreasing": bool(all(x["sum"] > y["sum"] for x, y in zip(sums, sums[1:]))),
    }
    runner.write_json("expansion.json", "expansion",
                      {"mode": mode, "report": rep, "alt_seed": rep_alt, "seed_check": seeds,
                       "matrix_check": checks, "one_step": one_step})
    runner.write_csv("expansion_series.csv", "expansion", ["N", "log_Lambda", "log_Lambda_alt"],
                     [[r.N, r.log_Lambda, q.log_Lambda] for r, q in zip(recs, alt) if r.valid])
    _print_rows("expansion", [("Lambda_vs_N", _fmt_fit(a)), ("alt seed", _fmt_fit(b)),
                              ("n lambda_n", rep["n_lambda"]["median_upper_half"]),
                              ("(N-n+1) lambda_n", rep["exit_lambda"]["median_upper_half"]),
                              ("matrix check max rel", checks["max_rel"])]
                + [(f"one-step sum n0={s['n0']}", s["sum"]) for s in sums])
    return 0


def _matrix_checks(table, entries, recs, count):
    """Front-curvature product against the product of differentials."""
    rows = []
    order = sorted(range(len(recs)), key=lambda k: recs[k].N)
    for k in order[:count]:
        x, r = entries[k], recs[k]
        V0 = r.B_entry * math.cos(x.phi) - x.K
        logs, _ = ind.expansion_by_matrices(table, x, V0, r.N + 1)
        rows.append({"N": r.N, "log_Lambda": r.log_Lambda, "log_matrix": logs,
                     "rel": abs(math.expm1(logs - r.log_Lambda))})
    return {"series": rows, "max_rel": max(x["rel"] for x in rows) if rows else float("nan")}


def tail_samples(runner, cfg, table, beta=None):
    """(R_M, cell_M, R_full, ledger) from the streamed mu samples."""
    t = cfg.tail
    key = _spec_key(cfg) if beta is None else tuple(sorted({**dict(_spec_key(cfg)), "beta": beta}.items()))
    induced = {"K0": cfg.induced.K0, "k0": cfg.induced.k0, "cap": cfg.induced.cap}
    label = f"b{dict(key)['beta']:g}"

    def jobs(total, offset, full_cap):
        n = math.ceil(total / t.stream_size)
        return [(key, induced, cfg.run.seed, offset + k, min(t.stream_size, total - k * t.stream_size),
                 full_cap) for k in range(n)]

    res_M = runner.streamed("tail", label + "-M", _tail_stream,
                            jobs(t.samples_M, 0, cfg.induced.K0 + 1))
    res_F = runner.streamed("tail", label + "-full", _tail_stream,
                            jobs(t.samples_full, 1 << 20, t.full_cap))
    cat = lambda res, k: np.concatenate([r[k] for r in res])
    inM, R, cell, fl = (cat(res_M, k) for k in ("inM", "R", "cell", "flags"))
    bad = (fl & ind._core.FATAL) != 0
    sel = inM & ~bad
    Rf, flf = cat(res_F, "R"), cat(res_F, "flags")
    badf = (flf & ind._core.FATAL) != 0
    ledger = {"samples_M": int(len(R)), "in_M": int(inM.sum()), "discarded_M": int(bad.sum()),
              "samples_full": int(len(Rf)), "discarded_full": int(badf.sum()),
              "censored_full": int(((flf & ind._core.FLAG_CENSORED) != 0).sum()),
              "full_cap": t.full_cap}
    return R[sel], cell[sel], Rf[~badf], ledger


def cmd_tail(cfg, runner, args):
    """Tail fits at table.beta, then at each tail.sweep_betas value."""
    status = tail_for_beta(cfg, runner, None)
    for b in cfg.sweep_betas():
        status = max(status, tail_for_beta(cfg, runner, b))
    return status


def tail_for_beta(cfg, runner, beta):
    table = _table_from(cfg)
    R_M, cell_M, R_full, ledger = tail_samples(runner, cfg, table, beta)
    st, fits = stats.tail_and_cells(R_M, cell_M, R_full, n_min=cfg.tail.n_min)
    b = cfg.table.beta if beta is None else beta
    a = 1.0 / (b - 1.0)
    res = {"beta": b, "ledger": ledger, "statistics": st.to_dict(),
           "fits": {k: (v.to_dict() if v else None) for k, v in fits.items()},
           "targets": {"cells_M": -2 - a, "tail_M": -1 - a, "tail_full": -a},
           "a_fitted": -fits["tail_full"].exponent}
    name = "tail.json" if beta is None else f"tail_beta{b:g}.json"
    runner.write_json(name, "tail", res)
    runner.write_csv(name.replace(".json", "_curves.csv"), "tail",
                     ["N", "mu_M_R_ge_N", "stderr_M", "mu_R_ge_N", "stderr_full"],
                     zip(st.tail_N, st.tail_M, st.tail_M_err, st.tail_full, st.tail_full_err))
    runner.write_csv(name.replace(".json", "_cells.csv"), "tail", ["N_centre", "density", "count"],
                     zip(st.cell_bins, st.cell_density, st.cell_bin_counts))
    _print_rows(f"tail beta={b:g}", [(k, _fmt_fit(v.to_dict()) if v else "-") for k, v in fits.items()])
    return 0


def cmd_transitions(cfg, runner, args):
    table = _table_from(cfg)
    t = cfg.transitions
    R, cell, restarts = ind.induced_orbit(table, t.returns, cfg.run.seed, cfg.induced_config())
    pairs = np.stack([cell[:-1], cell[1:]], 1)
    rep = stats.transition_stats(pairs, cfg.table.beta, (t.band_lo, t.band_hi), cfg.induced.K0)
    long_src = cell[:-1] > cfg.induced.K0
    rep["conditional_return"] = stats.conditional_return_scaling(cell[:-1][long_src], R[1:][long_src])
    rep["restarts"] = restarts
    rep["collisions"] = int(R.sum())
    b = cfg.table.beta
    rep["targets"] = {"support_upper_power": b / (b - 1), "support_lower_power": (b - 1) / b,
                      "m_exponent": -1 - b * b / ((b - 1) * (2 * b - 1))}
    runner.write_json("transitions.json", "transitions", rep)
    _print_rows("transitions", [("c2 (all)", rep["c2_all"]), ("c2 spread", rep["c2_spread"]),
                                ("m exponent", _fmt_fit(rep["m_exponent"]) if rep["m_exponent"] else "-")])
    return 0


def cmd_correlations(cfg, runner, args):
    table = _table_from(cfg)
    c = cfg.correlations
    f = stats.Observable.cos_r(c.mode)
    res = stats.correlation_curve(table, stats.ObservablePair(f, f), c.n_max, c.orbit_length,
                                  cfg.run.seed, n_boot=c.n_boot)
    fit = stats.envelope_fit(res["C"], 10, min(100, c.n_max))
    const = stats.Observable.constant()
    res_c = stats.correlation_curve(table, stats.ObservablePair(const, const), min(c.n_max, 20),
                                    min(c.orbit_length, 1_000_000), cfg.run.seed, n_boot=20)
    out = {"observable": f"cos({2 * c.mode}*pi*r/|dQ|)", "restarts": res["restarts"],
           "envelope_fit": fit.to_dict(), "target_upper_bound_exponent": -1 / (cfg.table.beta - 1),
           "constant_pair_max_abs": float(np.abs(res_c["C"]).max())}
    runner.write_json("correlations.json", "correlations", out)
    runner.write_csv("correlations.csv", "correlations", ["n", "C", "stderr", "envelope"],
                     zip(res["n"], res["C"], res["stderr"], stats.envelope(res["C"])))
    _print_rows("correlations", [("envelope exponent", _fmt_fit(fit.to_dict()))])
    return 0


def cmd_all(cfg, runner, args):
    status = 0
    for fn in (cmd_table, cmd_corner, cmd_expansion, cmd_tail, cmd_transitions, cmd_correlations):
        status = max(status, fn(cfg, runner, args))
    return status


COMMANDS = {
    "table": cmd_table,
    "corner": cmd_corner,
    "tail": cmd_tail,
    "expansion": cmd_expansion,
    "transitions": cmd_transitions,
    "correlations": cmd_correlations,
    "all": cmd_all,
}


def _fmt_fit(d):
    return f"{d['exponent']:+.4f} +- {d['stderr']:.4f}  window [{d['window'][0]:g}, {d['window'][1]:g}]"


def _print_rows(title, rows):
    print(f"== {title}")
    width = max(len(str(k)) for k, _ in rows) if rows else 0
    for k, v in rows:
        if isinstance(v, (float, np.floating)):
            v = f"{float(v):.6g}"
        print(f"  {str(k):<{width}}  {v}")


def build_parser():
    p = argparse.ArgumentParser(prog="flatcusp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key/value config file (INI sections)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--workers", type=int, help="override run.workers")
    p.add_argument("--out", help="output directory (overrides run.output)")
    p.add_argument("--reduced", action="store_true", help="corner: use the reduced recursion only")
    p.add_argument("--compare", action="store_true", help="corner: exact versus reduced deviations")
    p.add_argument("--extended-precision", action="store_true",
                   help="corner/expansion: multiple-precision corner series")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides[("run", "seed")] = args.seed
    if args.workers is not None:
        overrides[("run", "workers")] = args.workers
    if args.out is not None:
        overrides[("run", "output")] = args.out
    if args.extended_precision:
        overrides[("run", "precision")] = "extended"
    try:
        cfg = load_config(args.config, overrides)
        runner = Runner(cfg, cfg.run.output)
        t0 = time.time()
        status = COMMANDS[args.command](cfg, runner, args)
        log.info("%s finished in %.1f s", args.command, time.time() - t0)
        runner.write_manifest()
    except ConfigError as exc:
        print(f"flatcusp: configuration error: {exc}", file=sys.stderr)
        return 2
    except stats.FitError as exc:
        print(f"flatcusp: {args.command}: fit failed ({exc}); increase the sample sizes",
              file=sys.stderr)
        return 3
    return status


if __name__ == "__main__":
    sys.exit(main())
