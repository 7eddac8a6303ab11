"""Command dispatch, CSV artifacts and the run manifest.

Every command produces a set of tables that are serialized to CSV (UTF-8,
LF line endings, one header row, floats as shortest round-trip decimals,
complex values as re/im column pairs).  All files are written by a single
writer after the computation, and ``manifest.json`` is written last.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import RunConfig
from .decay import decay_scan
from .errors import ConfigError, KinetraError, NumericalFailure
from .evolution import dyson_ladder, first_remainder, full_propagator, streaming_propagator
from .functions import Function
from .numerics import PhaseProfile, decay_fit, oscillatory_integral, singular_value_profile
from .resolvent import elementary_operators, oracle_defect, resolve, resolve_oracle, resolvent_norm
from .spectra import asymptotic_expansion, dispersion_scan, spectral_projection, stability_report

__all__ = ["Table", "RunManifest", "Scheduler", "run_command", "execute", "write_artifacts", "format_value"]


# --------------------------------------------------------------------------
# tables


@dataclass
class Table:
    name: str
    header: list
    rows: list = field(default_factory=list)

    def to_bytes(self) -> bytes:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([format_value(v) for v in r])
        return buf.getvalue().encode("utf-8")


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _cx(z):
    z = complex(z)
    return z.real, z.imag


# --------------------------------------------------------------------------
# scheduling


class Scheduler:
    """Map over independent tasks, optionally in a permuted order.

    Results always come back in input order; ``permute`` only changes the
    order in which tasks are started (used by the seed check).
    """

    def __init__(self, threads: int = 1, permute: bool = False, seed: int = 20240611):
        if threads < 1:
            raise ValueError("threads must be at least 1")
        self.threads = int(threads)
        self.permute = bool(permute)
        self.seed = seed

    def order(self, n):
        if not self.permute:
            return list(range(n))
        return [int(i) for i in np.random.default_rng(self.seed).permutation(n)]

    def map(self, fn, items):
        items = list(items)
        out = [None] * len(items)
        idx = self.order(len(items))
        if self.threads == 1:
            for i in idx:
                out[i] = fn(items[i])
            return out
        with ThreadPoolExecutor(max_workers=self.threads) as ex:
            futs = {i: ex.submit(fn, items[i]) for i in idx}
            for i in range(len(items)):
                out[i] = futs[i].result()
        return out


# --------------------------------------------------------------------------
# commands


def _product(model, fx: Function | None, fv: Function | None):
    x, v = model.coordinates
    fx = fx if fx is not None else Function("const", (1.0,))
    fv = fv if fv is not None else Function("const", (1.0,))
    return np.asarray(fx(x), dtype=float) * np.asarray(fv(v), dtype=float)


def _wnorm(model, vec):
    return float(np.sqrt(np.sum(model.weights * np.abs(vec) ** 2)))


def _levels(cfg: RunConfig):
    ref = cfg.command.get("refinements")
    return [None] if ref is None else list(ref)


def _cmd_resolve(cfg: RunConfig, sched: Scheduler):
    c = cfg.command
    lams = c.get("lambdas") or [c.get("lambda", 1.0 + 0j)]
    mode, scheme = c.get("mode", "direct"), c.get("scheme", "product")
    rx, rv = c.get("rhs_x"), c.get("rhs_v")
    constant_rhs = all(f is None or f.family == "const" for f in (rx, rv))
    jobs = [(n, lam) for n in _levels(cfg) for lam in lams]
    models = {n: cfg.build_model(n) for n in _levels(cfg)}

    def job(item):
        n, lam = item
        m = models[n]
        t0 = time.perf_counter()
        ops = elementary_operators(m, lam, scheme)
        f = _product(m, rx, rv)
        phi = resolve(m, lam, f, ops=ops, mode=mode)
        gap = float("nan")
        if c.get("oracle", False):
            rhs = float(f[0]) if constant_rhs else f
            ref = resolve_oracle(m, lam, rhs)
            gap = _wnorm(m, phi - ref) / _wnorm(m, ref)
        nm = float("nan")
        if c.get("norms", False):
            nm = resolvent_norm(m, lam, ops=ops, mode=mode) * (complex(lam).real + m.sigma_lower)
        return phi, gap, nm, time.perf_counter() - t0

    res = sched.map(job, jobs)
    summary = Table("resolve", ["n_s", "n_v", "lambda_re", "lambda_im", "margin", "solution_norm",
                                "oracle_gap", "norm_times_margin"])
    for (n, lam), (phi, gap, nm, _) in zip(jobs, res):
        m = models[n]
        summary.rows.append([m.n_s, m.n_lines, *_cx(lam), complex(lam).real + m.sigma_lower,
                             _wnorm(m, phi), gap, nm])
    m = models[jobs[-1][0]]
    phi = res[len(lams) * (len(models) - 1)][0]
    x, v = m.coordinates
    field_t = Table("field", ["coord_1", "coord_2", "re", "im"],
                    [[a, b, z.real, z.imag] for a, b, z in zip(x, v, phi)])
    return [summary, field_t]


def _cmd_spectrum(cfg: RunConfig, sched: Scheduler):
    c = cfg.command
    scheme = c.get("scheme", "upwind")
    m = cfg.build_model()
    grid = c.get("grid", [40, 40])
    recs = dispersion_scan(m, c["region"], grid)
    if "radius" in c:
        recs = [spectral_projection(m, r.lam, c["radius"], nodes=c.get("nodes", 32), scheme=scheme)
                for r in recs]
    tables = []
    eig = Table("eigenvalues", ["index", "lambda_re", "lambda_im", "boundary_defect", "oracle_defect",
                                "projection_rank", "lambda_h_re", "lambda_h_im", "nilpotent_norm", "idempotency"])
    for i, r in enumerate(recs):
        eig.rows.append([i, *_cx(r.lam), r.boundary_defect, oracle_defect(m, r.lam), r.projection_rank,
                         *_cx(r.lam_h), r.nilpotent_norm, r.idempotency])
    tables.append(eig)
    if "expansion_t" in c:
        nu = c.get("nu", -m.sigma_lower)
        phi0 = _product(m, c.get("phi0_x"), c.get("phi0_v"))
        ex = asymptotic_expansion(m, phi0, recs, c["expansion_t"], nu, scheme=scheme)
        tables.append(Table("expansion", ["t", "residual"], [[t, r] for t, r in zip(ex.t_values, ex.residuals)]))
        tables.append(Table("expansion_summary", ["fitted_rate", "beta", "nu", "passed", "inconclusive"],
                            [[ex.fitted_rate, ex.beta, ex.nu, ex.passed, ex.inconclusive]]))
    if "refinements" in c:
        t = c.get("t", 1.0)
        rep = stability_report(cfg.build_model, t, c["refinements"], delta=c.get("delta", 0.1), scheme=scheme,
                               executor=sched)
        st = Table("stability", ["n", "outliers_U", "outliers_V", "r_ess_U", "r_ess_V", "growth_bound"])
        mods = Table("moduli", ["n", "index", "modulus_U", "modulus_V"])
        for L in rep.levels:
            st.rows.append([L.n, L.outliers_U, L.outliers_V, L.r_ess_U, L.r_ess_V, L.growth_bound])
            mu = np.sort(np.abs(L.eig_U))[::-1][:16]
            mv = np.sort(np.abs(L.eig_V))[::-1][:16]
            for i, (a, b) in enumerate(zip(mu, mv)):
                mods.rows.append([L.n, i, a, b])
        tables += [st, mods, Table("stability_summary", ["t", "threshold", "outlier_count_stable",
                                                          "relative_gap", "inconclusive"],
                                   [[rep.t, rep.threshold, rep.outlier_count_stable, rep.relative_gap,
                                     rep.inconclusive]])]
    return tables


def _cmd_evolve(cfg: RunConfig, sched: Scheduler):
    c = cfg.command
    scheme = c.get("scheme", "upwind")
    m = cfg.build_model()
    phi0 = _product(m, c.get("phi0_x"), c.get("phi0_v"))

    def job(t):
        U = streaming_propagator(m, t, scheme).matrix
        V = full_propagator(m, t, scheme).matrix
        return U.norm(), V.norm(), float(U.entries.min()), float(V.entries.min()), U.entries @ phi0, V.entries @ phi0

    res = sched.map(job, c["t_values"])
    norms = Table("norms", ["t", "norm_U", "norm_V", "min_U", "min_V"])
    snaps = Table("snapshots", ["t", "coord_1", "coord_2", "value_U", "value_V"])
    x, v = m.coordinates
    for t, (nu, nv, mu, mv, pu, pv) in zip(c["t_values"], res):
        norms.rows.append([t, nu, nv, mu, mv])
        for a, b, p, q in zip(x, v, pu, pv):
            snaps.rows.append([t, a, b, p, q])
    return [norms, snaps]


def _cmd_dyson(cfg: RunConfig, sched: Scheduler):
    c = cfg.command
    scheme = c.get("scheme", "upwind")
    m = cfg.build_model()
    t, n = c["t"], c["n"]
    lad = dyson_ladder(m, t, n, scheme)
    nb = m.B.norm()
    tab = Table("dyson", ["k", "term_norm", "remainder", "ratio", "bound"])
    rem = lad.remainders
    for k, T in enumerate(lad.terms):
        ratio = rem[k] / rem[k - 1] if k >= 1 and rem[k - 1] > 0 else float("nan")
        bound = nb * t / k + 0.1 if k >= 1 else float("nan")
        tab.rows.append([k, T.norm(), rem[k], ratio, bound])
    tables = [tab]
    if "t_small" in c:
        ts = c["t_small"]
        r1 = sched.map(lambda s: dyson_ladder(m, s, 1, scheme).remainders[1], ts)
        slope = float(np.polyfit(np.log(ts), np.log(np.maximum(r1, 1e-300)), 1)[0]) if len(ts) >= 2 else float("nan")
        tables.append(Table("first_order", ["t", "remainder_1"], [[a, b] for a, b in zip(ts, r1)]))
        tables.append(Table("dyson_summary", ["norm_B", "first_order_slope"], [[nb, slope]]))
    return tables


def _cmd_remainder(cfg: RunConfig, sched: Scheduler):
    c = cfg.command
    scheme = c.get("scheme", "upwind")
    t, count = c["t"], c.get("count", 64)

    def job(n):
        m = cfg.build_model(n)
        R1 = first_remainder(m, t, scheme).singular_values
        U = singular_value_profile(streaming_propagator(m, t, scheme).matrix)
        return R1[:count], U[:count]

    res = sched.map(job, c["refinements"])
    tab = Table("remainder", ["n", "index", "sv_R1", "sv_U"])
    for n, (r, u) in zip(c["refinements"], res):
        for i, (a, b) in enumerate(zip(r, u)):
            tab.rows.append([n, i + 1, a, b])
    return [tab]


def _cmd_decay(cfg: RunConfig, sched: Scheduler):
    c = cfg.command
    m = cfg.build_model()
    betas = np.geomspace(c.get("beta_min", 1.0), c.get("beta_max", 1e3), c.get("n_beta", 40))
    scan = decay_scan(m, None, c["alpha"], betas, executor=sched)
    tab = Table("decay", ["beta", "norm_star_left", "norm_star_right"], [list(r) for r in scan.rows()])
    summ = Table("decay_summary", ["alpha", "tail_ratio_left", "tail_ratio_right"],
                 [[scan.alpha, scan.tail_ratio_left, scan.tail_ratio_right]])
    return [tab, summ]


def _cmd_oscint(cfg: RunConfig, sched: Scheduler):
    c = cfg.command
    f, phase = c["f"], c["phase"]
    a, b = c["a"], c["b"]
    xis = np.geomspace(c.get("xi_min", 1e2), c.get("xi_max", 1e4), c.get("n_xi", 40))
    eps = c.get("eps", 1e-8)
    vals = sched.map(lambda xi: oscillatory_integral(f, phase, xi, a, b, eps_target=eps), xis)
    mags = np.abs(np.array(vals))
    slope = decay_fit(PhaseProfile(xis, mags))
    tab = Table("oscint", ["xi", "re", "im", "abs"], [[x, z.real, z.imag, abs(z)] for x, z in zip(xis, vals)])
    return [tab, Table("oscint_summary", ["fitted_slope"], [[slope]])]


_COMMANDS = {
    "resolve": _cmd_resolve,
    "spectrum": _cmd_spectrum,
    "evolve": _cmd_evolve,
    "dyson": _cmd_dyson,
    "remainder": _cmd_remainder,
    "decay": _cmd_decay,
    "oscint": _cmd_oscint,
}


def run_command(cfg: RunConfig, sched: Scheduler | None = None) -> dict:
    """Run the configured command; returns ``{file name: CSV bytes}``."""
    sched = sched or Scheduler()
    tables = _COMMANDS[cfg.name](cfg, sched)
    prefix = cfg.output.get("prefix", "")
    return {f"{prefix}{t.name}.csv": t.to_bytes() for t in tables}


# --------------------------------------------------------------------------
# manifest and execution


@dataclass
class RunManifest:
    config: dict
    artifacts: list
    timings: dict
    version: str = __version__
    status: str = "ok"
    error: str = ""
    exit_code: int = 0
    seed_check: bool | None = None
    threads: int = 1

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"


def write_artifacts(out_dir: str, files: dict) -> list:
    os.makedirs(out_dir, exist_ok=True)
    listing = []
    for name in sorted(files):
        data = files[name]
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write(data)
        listing.append({"file": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    return listing


def _write_manifest(out_dir, manifest: RunManifest):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(manifest.to_json())


def execute(cfg: RunConfig, out_dir: str | None = None, threads: int = 1, seed_check: bool = False) -> RunManifest:
    """Run the command, write CSV artifacts and then the manifest.

    With ``seed_check`` the command is run a second time with permuted task
    scheduling and the CSV bytes of both runs must agree; a mismatch is a
    numerical failure.  Errors are recorded in the manifest and re-raised.
    """
    out_dir = out_dir or cfg.output.get("directory", "kinetra-out")
    manifest = RunManifest(cfg.echo(), [], {}, threads=threads)
    t0 = time.perf_counter()
    try:
        try:
            files = run_command(cfg, Scheduler(threads))
        except (ValueError, TypeError) as exc:
            if isinstance(exc, KinetraError):
                raise
            # library argument checks that the config parser cannot anticipate
            raise ConfigError(f"invalid {cfg.name} parameters: {exc}") from exc
        manifest.timings["run_s"] = time.perf_counter() - t0
        if seed_check:
            t1 = time.perf_counter()
            again = run_command(cfg, Scheduler(threads, permute=True))
            manifest.timings["seed_check_s"] = time.perf_counter() - t1
            bad = sorted(k for k in set(files) | set(again) if files.get(k) != again.get(k))
            manifest.seed_check = not bad
            if bad:
                raise NumericalFailure(f"seed check failed: output differs under permuted scheduling ({', '.join(bad)})",
                                       files=bad)
        manifest.artifacts = write_artifacts(out_dir, files)
    except KinetraError as exc:
        manifest.status = "failed"
        manifest.error = str(exc)
        manifest.exit_code = exc.exit_code
        manifest.timings["total_s"] = time.perf_counter() - t0
        try:
            _write_manifest(out_dir, manifest)
        except OSError:
            pass
        raise
    manifest.timings["total_s"] = time.perf_counter() - t0
    _write_manifest(out_dir, manifest)
    return manifest
