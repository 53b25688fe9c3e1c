"""
Command-line entry point.

    wigturb kernels   --config run.ini [--out DIR] [--workers N] [--seed S]
    wigturb evolve    ...
    wigturb validate  ...
    wigturb losscheck ...

Exit codes: 0 success, 2 usage or I/O problem, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import IntegrityError, WigturbError
from .evolve import evolve_thermal
from .io import write_csv, write_medium, write_state
from .kernels import (
    CorrelationTable,
    VertexKernel,
    contraction_residual,
    phi0_many,
    phi1_compute,
    phi1_markovian_grid,
)
from .lossmodel import first_moment_equation
from .oracle import compare_mcf_to_moment, run_ensemble, sample_medium
from .states import coherent_second_moment, thermal_from_modes

log = logging.getLogger("wigturb")

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT = 0, 2, 3
TRACE_TOL = 1e-8
HERM_TOL = 1e-8
Z_FAIL_FRACTION = 0.05


class InvariantViolation(Exception):
    pass


class _Run:
    """Output directory plus the header stamped on every file."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.directory)
        self.header = {"wigturb": __version__, "config_sha256": cfg.sha256()}

    def csv(self, name, columns, rows):
        return write_csv(self.out / name, columns, rows, self.header)

    @property
    def binary(self):
        return "binary" in self.cfg.formats


def _initial_state(cfg: RunConfig, grid):
    prof = cfg.initial_profile(grid)
    if cfg.state_kind == "coherent":
        return coherent_second_moment(grid, prof.astype(complex), cfg.z0)
    return thermal_from_modes(grid, prof, cfg.z0)


def cmd_kernels(cfg: RunConfig, workers: int = 1) -> int:
    run = _Run(cfg)
    grid, model = cfg.grid(), cfg.model()
    z0 = cfg.z0
    zs = [float(z) for z in cfg.z_samples if z > z0]
    lengths = [z - z0 for z in zs]
    table = None
    if lengths and model.cn2 != 0 and not cfg.markovian:
        table = CorrelationTable(model, grid, lengths)
    pts = grid.points
    summary = []
    worst = 0.0
    for j, z in enumerate(zs):
        vk = VertexKernel(grid, model, z, z0, markovian=cfg.markovian, table=table)
        if cfg.markovian:
            dk = phi1_markovian_grid(grid, model, z, z0)
        else:
            dk = phi1_compute(grid, model, z, z0, table=table)
        res = contraction_residual(vk, dk)
        worst = max(worst, res)
        summary.append((z, res, float(np.abs(dk.diag).max())))
        run.csv(
            f"phi1_{j:03d}.csv", ["kx", "ky", "re", "im"],
            [(p[0], p[1], v.real, v.imag) for p, v in zip(pts, dk.diag)],
        )
        n = grid.size
        i1, i2 = np.divmod(np.arange(n * n), n)
        vals = phi0_many(vk, i1, i2, np.full(n * n, cfg.slice_k3))
        run.csv(
            f"phi0_slice_{j:03d}.csv", ["k1x", "k1y", "k2x", "k2y", "re", "im"],
            [(pts[a][0], pts[a][1], pts[b][0], pts[b][1], v.real, v.imag) for a, b, v in zip(i1, i2, vals)],
        )
    run.csv("kernels_summary.csv", ["z", "contraction_residual", "max_abs_phi1"], summary)
    if worst >= cfg.residual_tol:
        raise InvariantViolation(f"contraction residual {worst:.3e} above {cfg.residual_tol:g}")
    return EXIT_OK


def _evolution_rows(res):
    rows = []
    for j, z in enumerate(res.z):
        st = res.states[j]
        rows.append((
            float(z), st.trace_w(), float(res.trace_drift[j]), float(res.hermiticity[j]),
            float(res.quartic_norm[j]), float(res.min_eigenvalue[j]), float(res.max_eigenvalue[j]),
            int(any(abs(z - e) == 0 for e in res.validity_exits)),
        ))
    return rows


EVOLVE_COLUMNS = [
    "z", "trace_w", "trace_drift", "hermiticity", "quartic_norm",
    "min_eigenvalue", "max_eigenvalue", "outside_validity",
]


def cmd_evolve(cfg: RunConfig, workers: int = 1) -> int:
    run = _Run(cfg)
    grid, model = cfg.grid(), cfg.model()
    initial = _initial_state(cfg, grid)
    modes = ["literal", "resummed"] if cfg.resummed else ["literal"]
    # a coherent input has a rank-one second moment and no Theta kernel, so
    # the quartic norm is undefined there and is written as nan
    quartic = cfg.quartic and cfg.state_kind == "thermal"
    problems = []
    for mode in modes:
        res = evolve_thermal(
            initial, grid, model, cfg.z_samples, markovian=cfg.markovian,
            resummed=(mode == "resummed"), quartic=quartic,
        )
        run.csv(f"evolve_{mode}.csv", EVOLVE_COLUMNS, _evolution_rows(res))
        if run.binary:
            for j, st in enumerate(res.states):
                write_state(run.out / f"state_{mode}_{j:03d}.bin", st)
        if res.trace_drift.max() > TRACE_TOL:
            problems.append(f"{mode}: trace drift {res.trace_drift.max():.3e}")
        if res.hermiticity.max() > HERM_TOL:
            problems.append(f"{mode}: hermiticity defect {res.hermiticity.max():.3e}")
    if problems:
        raise InvariantViolation("; ".join(problems))
    return EXIT_OK


def cmd_validate(cfg: RunConfig, workers: int = 1) -> int:
    run = _Run(cfg)
    mc = cfg.montecarlo
    if mc is None:
        raise WigturbError("validate needs a [montecarlo] section")
    grid, model = cfg.grid(), cfg.model()
    distance = cfg.mc_distance()
    field0 = cfg.initial_profile(grid).astype(complex)
    initial = coherent_second_moment(grid, field0, cfg.z0)
    z_end = cfg.z0 + distance
    evo = evolve_thermal(initial, grid, model, [cfg.z0, z_end], markovian=cfg.markovian, quartic=False)
    ens = run_ensemble(
        grid, model, field0, cfg.z0, distance, mc.n_realizations, mc.seed,
        nz=mc.dims[2], dz=mc.dz, nx=mc.dims[0], thin_screen=mc.thin_screen, workers=workers,
    )
    est = ens.estimate
    n = grid.size
    a, b = np.divmod(np.arange(n * n), n)
    run.csv(
        "mcf.csv", ["a", "b", "re", "im", "stderr"],
        [(int(i), int(j), est.mcf[i, j].real, est.mcf[i, j].imag, est.stderr[i, j]) for i, j in zip(a, b)],
    )
    rep = compare_mcf_to_moment(est, evo, z_end, allowance=mc.allowance)
    iu = np.triu_indices(n)
    off = iu[0] != iu[1]
    labels = [(int(i), int(j), "re") for i, j in zip(*iu)]
    labels += [(int(i), int(j), "im") for i, j in zip(iu[0][off], iu[1][off])]
    mc_inc = np.concatenate([rep.increment_mc.real[iu], rep.increment_mc.imag[iu][off]])
    th_inc = np.concatenate([rep.increment_moment.real[iu], rep.increment_moment.imag[iu][off]])
    run.csv(
        "zscores.csv", ["a", "b", "part", "increment_mc", "increment_moment", "z_score"],
        [(*lab, x, y, zsc) for lab, x, y, zsc in zip(labels, mc_inc, th_inc, rep.z_scores)],
    )
    run.csv(
        "telemetry.csv", ["realization", "norm_drift", "medium_mean"],
        [(i, d, m) for i, (d, m) in enumerate(zip(ens.norm_drifts, ens.medium_means))],
    )
    run.csv(
        "validate_summary.csv",
        ["z", "n_realizations", "frac_within_2", "frac_beyond_3", "chi2_per_dof",
         "max_norm_drift", "edge_power_fraction", "max_imag_residue"],
        [(z_end, est.n_realizations, rep.frac_within_2, rep.frac_beyond_3, rep.chi2_per_dof,
          ens.max_norm_drift, ens.edge_fraction, ens.max_imag_residue)],
    )
    if run.binary:
        med = sample_medium(
            model, mc.dims, (2 * np.pi / (mc.dims[0] * grid.delta_k),) * 2 + (mc.dz,),
            mc.seed, mc.thin_screen, cfg.z0,
        )
        write_medium(run.out / "medium_sample.bin", med)
    if ens.edge_fraction > 0.01:
        log.warning("power in the outer grid ring reached %.3g of the total", ens.edge_fraction)
    if rep.frac_beyond_3 > Z_FAIL_FRACTION:
        raise InvariantViolation(f"{rep.frac_beyond_3:.1%} of entries beyond |z| = 3")
    return EXIT_OK


def cmd_losscheck(cfg: RunConfig, workers: int = 1) -> int:
    run = _Run(cfg)
    grid, model = cfg.grid(), cfg.model()
    z0, z = cfg.z0, float(cfg.z_samples[-1])
    if not z > z0:
        raise WigturbError("losscheck needs a z sample beyond z0")
    summary = []
    for markovian in (True, False):
        diag = first_moment_equation(grid, model, z, z0, markovian=markovian)
        tag = "markovian" if markovian else "nonmarkovian"
        run.csv(
            f"loss_{tag}.csv", ["kx", "ky", "re", "im", "k_variation"],
            [(p[0], p[1], v.real, v.imag, diag.k_variation) for p, v in zip(grid.points, diag.phi1_diag)],
        )
        summary.append((tag, z, diag.mean_rate.real, diag.mean_rate.imag, diag.k_variation, int(markovian)))
    run.csv("loss_summary.csv", ["mode", "z", "mean_re", "mean_im", "k_variation", "markovian"], summary)
    for row in summary:
        print(f"{row[0]}: k_variation = {row[4]:.6g}")
    return EXIT_OK


COMMANDS = {
    "kernels": cmd_kernels,
    "evolve": cmd_evolve,
    "validate": cmd_validate,
    "losscheck": cmd_losscheck,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wigturb", description=__doc__.split("\n\n")[0].strip() or None)
    p.add_argument("--version", action="version", version=f"wigturb {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="INI run configuration")
        s.add_argument("--out", help="output directory (overrides config and OUTPUT_DIR)")
        s.add_argument("--workers", type=int, default=1, help="parallel realizations")
        s.add_argument("--seed", type=int, help="Monte-Carlo seed (unsigned 64-bit)")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        directory = args.out or os.environ.get("OUTPUT_DIR") or None
        cfg = cfg.with_overrides(seed=args.seed, directory=directory).validate()
        Path(cfg.directory).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, workers=args.workers)
    except (OSError, WigturbError, ValueError) as exc:
        if isinstance(exc, IntegrityError):
            print(f"invariant violation: {exc}", file=sys.stderr)
            return EXIT_INVARIANT
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
