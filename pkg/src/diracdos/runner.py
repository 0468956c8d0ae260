"""Experiment execution: scheduling, persistence, and plot-data emission.

The only module that spawns parallel work. Every experiment is split
into pure cells (one disorder draw, one imaginary offset, one random
trial); an order-preserving map gathers cell results into pre-sized
tables, so the emitted bytes cannot depend on the parallelism width or
on completion order. Floats are serialized via repr, never formatted.
"""

import contextlib
import functools
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, dos, estimates, models
from .bumps import make_bump
from .config import ExperimentConfig
from .disorder import build_disordered_operator, sample_realization
from .errors import DiracDosError, PreconditionError
from .hs_calculus import build_extension, hs_apply
from .operators import (
    Grid,
    build_background_operator,
    smooth_box_indicator,
)
from .spectral import apply_function_eigen, eigen_hermitian, schatten_norm

ENV_JOBS = "DIRAC_DOS_JOBS"


def resolve_jobs(configured):
    """Worker count: explicit config/CLI value, else environment, else 1."""
    if configured:
        return max(1, int(configured))
    env = os.environ.get(ENV_JOBS, "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise PreconditionError("%s must be an integer, got %r"
                                    % (ENV_JOBS, env))
    return 1


@contextlib.contextmanager
def _mapper(jobs):
    if jobs <= 1:
        yield map
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            yield pool.map


def _write_text(path, text, digest=None):
    if digest is not None:
        text = "# config=%s\n%s" % (digest, text)
    path.write_text(text)
    return path


def _write_json(path, payload):
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    return path


def _csv(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(int(v)) if isinstance(v, (int, np.integer))
                              else repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def emit_plotdata(report, out_dir, config_digest=None):
    """Long-format CSV emission for the supported report types.

    One file per figure-analogue; returns the written paths. With a
    digest the file starts with a '# config=...' comment line, otherwise
    the header row comes first.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(report, estimates.WegnerReport):
        rows = [(r.box_side, r.lo, r.hi, r.width, r.mean_count, r.ratio,
                 r.stderr) for r in report.rows]
        text = _csv(("L", "a", "b", "width", "mean_count", "ratio", "stderr"),
                    rows)
        return [_write_text(out_dir / "wegner_plot.csv", text, config_digest)]
    if isinstance(report, estimates.DecayFit):
        report = (report,)
    if isinstance(report, (tuple, list)) and report and \
            all(isinstance(f, estimates.DecayFit) for f in report):
        rows = []
        for fit in report:
            for a, op_norm, tr_norm in zip(fit.distances, fit.op_norms,
                                           fit.trace_norms):
                rows.append((fit.imag_part, a, op_norm, tr_norm,
                             np.log(tr_norm)))
        text = _csv(("y", "a", "op_norm", "tr_norm", "log_tr_norm"), rows)
        return [_write_text(out_dir / "ct_decay.csv", text, config_digest)]
    if isinstance(report, dos.DOSEstimate):
        return [_write_text(out_dir / "dos.csv", report.csv_text(),
                            config_digest)]
    raise PreconditionError("no plot-data emitter for %r"
                            % (type(report).__name__,))


# ---------------------------------------------------------------------------
# worker cells that are not already module-level library functions


def _bs_trial(seed, d, box_side, points_per_cell, p):
    """One random multiplication/Fourier-multiplier Schatten comparison."""
    grid = Grid.regular(d, box_side, points_per_cell)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(grid.size) + 1j * rng.standard_normal(grid.size)
    g = rng.standard_normal(grid.size) + 1j * rng.standard_normal(grid.size)
    lhs, rhs = estimates.birman_solomyak_check(f, g, grid, p)
    return lhs, rhs


def _gre_cell(seed, symbol, background, model, box_side, ambient_side,
              cutoff, z, backend):
    realization = sample_realization(model, ambient_side, seed)
    return estimates.gre_residual(symbol, background, model, realization,
                                  box_side, ambient_side, cutoff, z, backend)


# ---------------------------------------------------------------------------
# experiment bodies; each returns the list of files it wrote


def _model_pieces(cfg):
    spec = models.get_model(cfg.model)
    return (spec, spec.symbol(), spec.background(resolution=cfg.points_per_cell),
            spec.disorder(**cfg.disorder))


def _run_spectrum(cfg, out, map_fn, digest):
    spec, symbol, background, disorder = _model_pieces(cfg)
    grid = Grid.regular(symbol.d, cfg.params["box_side"], cfg.points_per_cell)
    if cfg.params["disordered"]:
        realization = sample_realization(disorder, cfg.params["box_side"],
                                         cfg.seed)
        op = build_disordered_operator(symbol, background, disorder,
                                       realization, grid, cfg.backend)
    else:
        op = build_background_operator(symbol, grid, background, cfg.backend)
    evals = np.linalg.eigvalsh(op.matrix)
    text = _csv(("index", "eigenvalue"),
                [(int(i), float(v)) for i, v in enumerate(evals)])
    return [_write_text(out / "spectrum.csv", text, digest)]


def _run_dos(cfg, out, map_fn, digest):
    spec, symbol, background, disorder = _model_pieces(cfg)
    p = cfg.params
    if p["construction"] == "spatial":
        est = dos.dos_spatial(disorder, symbol, background, p["window"],
                              p["box_side"], p["ambient_side"],
                              cfg.n_realizations, cfg.seed, cfg.backend,
                              cfg.points_per_cell, p["bins"], map_fn=map_fn)
    else:
        est = dos.dos_periodic(disorder, symbol, background, p["window"],
                               p["box_side"], cfg.n_realizations, cfg.seed,
                               cfg.backend, cfg.points_per_cell, p["bins"],
                               map_fn=map_fn)
    files = emit_plotdata(est, out, digest)
    meta = est.metadata()
    meta["model"] = cfg.model
    meta["config_digest"] = digest
    files.append(_write_json(out / "dos_meta.json", meta))
    return files


def _run_wegner(cfg, out, map_fn, digest):
    spec, symbol, background, disorder = _model_pieces(cfg)
    p = cfg.params
    report = estimates.wegner_scan(disorder, symbol, background,
                                   p["interval"], p["widths"], p["box_sides"],
                                   cfg.n_realizations, cfg.seed,
                                   backend=cfg.backend,
                                   points_per_cell=cfg.points_per_cell,
                                   center=p["center"], padded=p["padded"],
                                   padding=p["padding"], gap=spec.gap,
                                   map_fn=map_fn)
    files = [_write_text(out / "wegner_cells.csv", report.csv_text(), digest)]
    files += emit_plotdata(report, out, digest)
    files.append(_write_json(out / "wegner_summary.json",
                             {"constant": report.constant,
                              "config_digest": digest}))
    return files


def _run_ct(cfg, out, map_fn, digest):
    spec, symbol, background, disorder = _model_pieces(cfg)
    p = cfg.params
    grid = Grid.regular(symbol.d, p["box_side"], cfg.points_per_cell)
    if p["disordered"]:
        realization = sample_realization(disorder, p["box_side"], cfg.seed)
        op = build_disordered_operator(symbol, background, disorder,
                                       realization, grid, cfg.backend)
    else:
        op = build_background_operator(symbol, grid, background, cfg.backend)
    pairs = [estimates.separated_slab_pair(grid, p["slab_width"], a)
             for a in p["separations"]]
    fits = estimates.combes_thomas_scan(op, p["energy"], p["ys"], pairs,
                                        map_fn=map_fn)
    files = emit_plotdata(fits, out, digest)
    files.append(_write_json(out / "ct_fits.json",
                             {"fits": [f.summary() for f in fits],
                              "config_digest": digest}))
    return files


def _run_bs(cfg, out, map_fn, digest):
    spec, symbol, background, disorder = _model_pieces(cfg)
    p = cfg.params
    worker = functools.partial(_bs_trial, d=symbol.d,
                               box_side=p["box_side"],
                               points_per_cell=cfg.points_per_cell, p=p["p"])
    seeds = [cfg.seed + r for r in range(cfg.n_realizations)]
    rows = [(s, p["p"], lhs, rhs, rhs - lhs)
            for s, (lhs, rhs) in zip(seeds, map_fn(worker, seeds))]
    text = _csv(("seed", "p", "lhs", "rhs", "slack"), rows)
    return [_write_text(out / "bs_trials.csv", text, digest)]


def _run_gre(cfg, out, map_fn, digest):
    spec, symbol, background, disorder = _model_pieces(cfg)
    p = cfg.params
    small = Grid.regular(symbol.d, p["box_side"], cfg.points_per_cell)
    half = p["box_side"] / 2.0
    cutoff = smooth_box_indicator(small, -half + p["margin"],
                                  half - p["margin"], p["ramp"])
    z = complex(p["z"][0], p["z"][1])
    worker = functools.partial(_gre_cell, symbol=symbol,
                               background=background, model=disorder,
                               box_side=p["box_side"],
                               ambient_side=p["ambient_side"], cutoff=cutoff,
                               z=z, backend=cfg.backend)
    seeds = [cfg.seed + r for r in range(cfg.n_realizations)]
    rows = [(s, res) for s, res in zip(seeds, map_fn(worker, seeds))]
    text = _csv(("seed", "residual"), rows)
    return [_write_text(out / "gre_residuals.csv", text, digest)]


def _run_hs_check(cfg, out, map_fn, digest):
    spec, symbol, background, disorder = _model_pieces(cfg)
    p = cfg.params
    grid = Grid.regular(symbol.d, p["box_side"], cfg.points_per_cell)
    realization = sample_realization(disorder, p["box_side"], cfg.seed)
    op = build_disordered_operator(symbol, background, disorder, realization,
                                   grid, cfg.backend)
    bump = make_bump(p["bump"][0], p["bump"][1], p["family"])
    ext = build_extension(bump, p["order"])
    approx = hs_apply(op.matrix, ext)
    # the bump vectorizes its input, the eigen oracle wants a scalar map
    oracle = apply_function_eigen(eigen_hermitian(op.matrix),
                                  lambda v: float(bump(v).item()))
    error = float(schatten_norm(approx - oracle, np.inf))
    text = _csv(("dim", "order", "error"),
                [(op.dim, p["order"], error)])
    return [_write_text(out / "hs_check.csv", text, digest)]


def _run_equivalence(cfg, out, map_fn, digest):
    spec, symbol, background, disorder = _model_pieces(cfg)
    p = cfg.params
    rows = dos.equivalence_study(disorder, symbol, background, p["window"],
                                 p["box_sides"], cfg.n_realizations, cfg.seed,
                                 cfg.backend, cfg.points_per_cell,
                                 map_fn=map_fn)
    text = _csv(("L", "spatial_mean", "periodic_mean", "difference",
                 "relative", "stderr"),
                [(r.box_side, r.spatial_mean, r.periodic_mean, r.difference,
                  r.relative, r.combined_stderr) for r in rows])
    return [_write_text(out / "equivalence.csv", text, digest)]


def _run_self_averaging(cfg, out, map_fn, digest):
    spec, symbol, background, disorder = _model_pieces(cfg)
    p = cfg.params
    phi = make_bump(p["bump"][0], p["bump"][1], p["family"])
    table = dos.self_averaging(disorder, symbol, background, phi,
                               p["box_sides"], cfg.n_realizations, cfg.seed,
                               cfg.backend, cfg.points_per_cell,
                               map_fn=map_fn)
    text = _csv(("L", "mean", "variance"), table)
    return [_write_text(out / "self_averaging.csv", text, digest)]


_EXPERIMENTS = {
    "spectrum": _run_spectrum,
    "dos": _run_dos,
    "wegner": _run_wegner,
    "ct": _run_ct,
    "bs": _run_bs,
    "gre": _run_gre,
    "hs-check": _run_hs_check,
    "equivalence": _run_equivalence,
    "self-averaging": _run_self_averaging,
}


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(cfg):
    """Execute one experiment; returns the process exit code.

    Success writes the experiment files plus manifest.json and returns
    0. A structured failure writes error.json and returns the error's
    own exit code (2 config, 3 compute, 4 geometry/precondition).
    """
    if not isinstance(cfg, ExperimentConfig):
        raise TypeError("run() wants an ExperimentConfig")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    started = time.monotonic()
    try:
        jobs = resolve_jobs(cfg.jobs)
        with _mapper(jobs) as map_fn:
            files = _EXPERIMENTS[cfg.kind](cfg, out, map_fn, digest)
    except DiracDosError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc),
                   "exit_code": exc.exit_code, "config_digest": digest}
        _write_json(out / "error.json", payload)
        return exc.exit_code
    manifest = {
        "config": cfg.to_dict(),
        "config_digest": digest,
        "version": __version__,
        "wall_clock_s": time.monotonic() - started,
        "files": [{"name": f.name, "sha256": _sha256(f)}
                  for f in sorted(files, key=lambda f: f.name)],
    }
    _write_json(out / "manifest.json", manifest)
    return 0
