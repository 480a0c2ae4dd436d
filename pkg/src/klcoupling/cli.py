"""Batch front door: config parsing, run orchestration, artifact emission.

Commands: ``mc`` (sampling reference), ``pc`` (chaos iteration), ``pc-kl``
(chaos iteration with temperature reduction), ``compare`` (diagnostics from
two finished runs) and ``study`` (tolerance sweep over both conductivities).
"""

from __future__ import annotations

import argparse
import configparser
import importlib.resources
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, analysis, montecarlo
from .basis import PCVector, enumerate_multi_indices, save_pc_csv
from .errors import KLCouplingError
from .klreduce import save_kl_csv
from .solver import (IterationTrace, ProblemConfig, ReactorSystem,
                     pc_iterate_full, pc_iterate_reduced, sigma_fluctuation)

_SCHEMA = {
    "mesh": {"length": float, "elements": int},
    "physics": {
        "conductivity": float, "diffusion_ref": float, "absorption_ref": float,
        "fission_ref": float, "neutrons_per_fission": float,
        "neutron_source": float, "ambient_temperature": float,
        "fission_energy": float, "reference_temperature": float,
        "min_temperature": float, "max_temperature": float,
    },
    "field": {"mean": float, "variation": float,
              "correlation_length": float, "terms": int},
    "stochastic": {"degree": int, "quadrature_level": int},
    "iteration": {"max_iterations": int, "update_tolerance": float},
    "reduction": {"tolerance": float, "tolerance_fraction": float},
}

_KEYMAP = {
    ("mesh", "length"): "length",
    ("mesh", "elements"): "n_elem",
    ("physics", "conductivity"): "conductivity",
    ("physics", "diffusion_ref"): "diffusion_ref",
    ("physics", "absorption_ref"): "absorption_ref",
    ("physics", "fission_ref"): "fission_ref",
    ("physics", "neutrons_per_fission"): "neutrons_per_fission",
    ("physics", "neutron_source"): "neutron_source",
    ("physics", "ambient_temperature"): "ambient_temperature",
    ("physics", "fission_energy"): "fission_energy",
    ("physics", "reference_temperature"): "reference_temperature",
    ("physics", "min_temperature"): "min_temperature",
    ("physics", "max_temperature"): "max_temperature",
    ("field", "mean"): "field_mean",
    ("field", "variation"): "field_variation",
    ("field", "correlation_length"): "correlation_length",
    ("field", "terms"): "field_terms",
    ("stochastic", "degree"): "degree",
    ("stochastic", "quadrature_level"): "quadrature_level",
    ("iteration", "max_iterations"): "max_iterations",
    ("iteration", "update_tolerance"): "update_tolerance",
    ("reduction", "tolerance"): "kl_tolerance",
    ("reduction", "tolerance_fraction"): "kl_tolerance_fraction",
}


class ConfigError(KLCouplingError):
    """A configuration file violated the schema."""


def load_config(path: str | Path | None) -> ProblemConfig:
    """Parse a `key = value` config file into a :class:`ProblemConfig`.

    Unknown sections or keys, and unparseable values, raise
    :class:`ConfigError` naming the offender.  ``path=None`` loads the
    packaged default (the benchmark parameters).
    """
    parser = configparser.ConfigParser()
    if path is None:
        text = importlib.resources.files("klcoupling").joinpath(
            "configs/reactor.cfg").read_text()
        parser.read_string(text)
    else:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        parser.read(path)

    kwargs = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            if raw.strip() == "":
                continue
            try:
                value = _SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(
                    f"key '{key}' in [{section}]: cannot parse '{raw}'") from exc
            kwargs[_KEYMAP[(section, key)]] = value
    try:
        return ProblemConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class RunManifest:
    command: str
    config_hash: str
    out_dir: str
    files: list[str] = field(default_factory=list)
    versions: dict = field(default_factory=dict)
    seconds: float = 0.0

    def write(self, out: Path) -> None:
        self.versions = {"python": sys.version.split()[0],
                         "numpy": np.__version__, "scipy": scipy.__version__,
                         "klcoupling": __version__}
        with open(out / "manifest.json", "w") as fh:
            json.dump({"command": self.command, "config_hash": self.config_hash,
                       "out_dir": self.out_dir, "files": sorted(self.files),
                       "versions": self.versions, "seconds": self.seconds},
                      fh, indent=2, sort_keys=True)


def _emit(manifest: RunManifest, out: Path, name: str) -> Path:
    manifest.files.append(name)
    return out / name


# ---------------------------------------------------------------------------
# trace persistence
# ---------------------------------------------------------------------------

def save_trace(out: Path, trace: IterationTrace, manifest: RunManifest) -> None:
    n = trace.n_iterations
    with open(_emit(manifest, out, "trace.csv"), "w") as fh:
        head = ["iteration", "update_t", "update_phi", "d"]
        head += [f"lambda_{j + 1}" for j in range(8)]
        fh.write(",".join(head) + "\n")
        for ell in range(n):
            row = [str(ell + 1), f"{trace.update_t[ell]:.17g}",
                   f"{trace.update_phi[ell]:.17g}"]
            row.append(str(trace.dims[ell]) if trace.dims else "")
            lam = (trace.kl_records[ell].eigenvalues[:8]
                   if trace.kl_records else np.zeros(0))
            row += [f"{v:.17g}" for v in lam]
            row += [""] * (8 - lam.size)
            fh.write(",".join(row) + "\n")
    t_hist = np.stack([pc.coeffs for pc in trace.temperature])
    phi_hist = np.stack([pc.coeffs for pc in trace.flux])
    np.save(_emit(manifest, out, "trace_t.npy"), t_hist)
    np.save(_emit(manifest, out, "trace_phi.npy"), phi_hist)
    meta = {"config_hash": trace.config_hash, "dim": trace.basis.dim,
            "degree": trace.basis.degree, "dims": trace.dims,
            "kl_tolerance": trace.kl_tolerance,
            "update_t": list(trace.update_t),
            "update_phi": list(trace.update_phi)}
    with open(_emit(manifest, out, "trace_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_trace(run_dir: Path) -> IterationTrace:
    meta_path = run_dir / "trace_meta.json"
    if not meta_path.exists():
        raise ConfigError(f"missing trace artifacts under {run_dir}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    basis = enumerate_multi_indices(meta["dim"], meta["degree"])
    t_hist = np.load(run_dir / "trace_t.npy")
    phi_hist = np.load(run_dir / "trace_phi.npy")
    trace = IterationTrace(basis=basis, config_hash=meta["config_hash"],
                           dims=list(meta["dims"]),
                           kl_tolerance=meta["kl_tolerance"],
                           update_t=list(meta["update_t"]),
                           update_phi=list(meta["update_phi"]))
    trace.temperature = [PCVector(basis, c) for c in t_hist]
    trace.flux = [PCVector(basis, c) for c in phi_hist]
    return trace


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _apply_overrides(cfg: ProblemConfig, args) -> ProblemConfig:
    changes = {}
    if getattr(args, "k", None) is not None:
        changes["conductivity"] = args.k
    if getattr(args, "p", None) is not None:
        changes["degree"] = args.p
    if getattr(args, "max_iters", None) is not None:
        changes["max_iterations"] = args.max_iters
    if getattr(args, "tol", None) is not None:
        changes["kl_tolerance"] = args.tol
        changes["kl_tolerance_fraction"] = None
    if getattr(args, "tol_fraction", None) is not None:
        changes["kl_tolerance_fraction"] = args.tol_fraction
        changes["kl_tolerance"] = None
    return replace(cfg, **changes) if changes else cfg


def _cmd_mc(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("mc", cfg.config_hash(), str(out))
    tic = time.perf_counter()
    mc = montecarlo.run_monte_carlo(cfg, args.n, args.seed, threads=args.threads)
    with open(_emit(manifest, out, "summary.json"), "w") as fh:
        json.dump(montecarlo.summary_dict(mc), fh, indent=2, sort_keys=True)
    n_paths = min(5, mc.n_stored)
    with open(_emit(manifest, out, "samples.csv"), "w") as fh:
        fh.write("x," + ",".join(
            [f"T_{i + 1}" for i in range(n_paths)]
            + [f"Phi_{i + 1}" for i in range(n_paths)]) + "\n")
        nodes = ReactorSystem(cfg).mesh.nodes
        for j, x in enumerate(nodes):
            cells = [f"{x:.17g}"]
            cells += [f"{mc.temperature_samples[i, j]:.17g}" for i in range(n_paths)]
            cells += [f"{mc.flux_samples[i, j]:.17g}" for i in range(n_paths)]
            fh.write(",".join(cells) + "\n")
    manifest.seconds = time.perf_counter() - tic
    manifest.write(out)
    return 0


def _run_pc(args, reduce: bool) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = "pc-kl" if reduce else "pc"
    manifest = RunManifest(name, cfg.config_hash(), str(out))
    tic = time.perf_counter()
    system = ReactorSystem(cfg)
    if reduce:
        if cfg.kl_tolerance is None and cfg.kl_tolerance_fraction is None:
            raise ConfigError("pc-kl needs --tol or --tol-fraction "
                              "(or a [reduction] entry in the config)")
        t_pc, phi_pc, trace = pc_iterate_reduced(cfg, threads=args.threads,
                                                 system=system)
    else:
        t_pc, phi_pc, trace = pc_iterate_full(cfg, threads=args.threads,
                                              system=system)
    save_trace(out, trace, manifest)
    save_pc_csv(_emit(manifest, out, "temperature_pc.csv"), t_pc)
    save_pc_csv(_emit(manifest, out, "flux_pc.csv"), phi_pc)
    sigma_t = sigma_fluctuation(t_pc, system.gram)
    sigma_phi = sigma_fluctuation(phi_pc, system.gram)
    with open(_emit(manifest, out, "sigma.json"), "w") as fh:
        json.dump({"sigma_t": sigma_t, "sigma_t_sq": sigma_t ** 2,
                   "sigma_phi": sigma_phi, "config_hash": cfg.config_hash()},
                  fh, indent=2, sort_keys=True)
    if reduce:
        with open(_emit(manifest, out, "dims.csv"), "w") as fh:
            fh.write("iteration,d\n")
            for ell, d in enumerate(trace.dims, start=1):
                fh.write(f"{ell},{d}\n")
        if trace.kl_records:
            save_kl_csv(out / "kl_final", trace.kl_records[-1])
            for suffix in ("eigenvalues", "modes", "eta"):
                manifest.files.append(f"kl_final_{suffix}.csv")
    manifest.seconds = time.perf_counter() - tic
    manifest.write(out)
    return 0


def _cmd_compare(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    full = load_trace(Path(args.full_dir))
    reduced = load_trace(Path(args.reduced_dir))
    cfg = _apply_overrides(load_config(args.config), args)
    system = ReactorSystem(cfg)
    if full.config_hash != cfg.config_hash():
        raise ConfigError("stored traces do not match the supplied config")
    manifest = RunManifest("compare", cfg.config_hash(), str(out))
    tic = time.perf_counter()
    report = analysis.diagnostics(full, reduced, system.gram)
    with open(_emit(manifest, out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(_emit(manifest, out, "distances.csv"), "w") as fh:
        fh.write("iteration,distance_t,distance_phi,d\n")
        for ell in range(len(report.distance_t)):
            d = report.dims[ell] if ell < len(report.dims) else ""
            fh.write(f"{ell + 1},{report.distance_t[ell]:.17g},"
                     f"{report.distance_phi[ell]:.17g},{d}\n")
    manifest.seconds = time.perf_counter() - tic
    manifest.write(out)
    return 0


def _cmd_study(args) -> int:
    cfg0 = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("study", cfg0.config_hash(), str(out))
    tic = time.perf_counter()
    fractions = (0.90, 0.95, 0.99)
    summary = {}
    dim_rows = []
    dist_rows = []
    for k in (100.0, 1.0):
        cfg = cfg0.with_conductivity(k)
        system = ReactorSystem(cfg)
        t_pc, _, full_trace = pc_iterate_full(cfg, threads=args.threads,
                                              system=system)
        sigma_sq = sigma_fluctuation(t_pc, system.gram) ** 2
        summary[f"sigma_t_k{k:g}"] = float(np.sqrt(sigma_sq))
        for frac in fractions:
            _, _, red_trace = pc_iterate_reduced(
                cfg, tol_fraction=frac, sigma_sq=sigma_sq,
                threads=args.threads, system=system)
            dist = analysis.iteration_distance(full_trace, red_trace, system.gram)
            for ell, d in enumerate(red_trace.dims, start=1):
                dim_rows.append((k, frac, ell, d))
            for ell in range(dist["temperature"].size):
                dist_rows.append((k, frac, ell + 1,
                                  dist["temperature"][ell], dist["flux"][ell]))
            summary[f"dims_k{k:g}_tol{frac:.2f}"] = red_trace.dims
    with open(_emit(manifest, out, "study_dims.csv"), "w") as fh:
        fh.write("k,tol_fraction,iteration,d\n")
        for k, frac, ell, d in dim_rows:
            fh.write(f"{k:g},{frac:.2f},{ell},{d}\n")
    with open(_emit(manifest, out, "study_distances.csv"), "w") as fh:
        fh.write("k,tol_fraction,iteration,distance_t,distance_phi\n")
        for k, frac, ell, dt, dp in dist_rows:
            fh.write(f"{k:g},{frac:.2f},{ell},{dt:.17g},{dp:.17g}\n")
    with open(_emit(manifest, out, "study_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    manifest.seconds = time.perf_counter() - tic
    manifest.write(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="klcoupling",
        description="Reduced-dimension stochastic coupling experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_tol=False):
        p.add_argument("--config", default=None, help="config file "
                       "(defaults to the packaged benchmark parameters)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads; results are bit-identical "
                            "for any value")
        p.add_argument("--k", type=float, default=None,
                       help="override the heat conductivity")
        p.add_argument("--p", type=int, default=None,
                       help="override the chaos total degree")
        p.add_argument("--max-iters", type=int, default=None)
        if with_tol:
            p.add_argument("--tol", type=float, default=None,
                           help="absolute KL residual-energy tolerance")
            p.add_argument("--tol-fraction", type=float, default=None,
                           help="tolerance as a fraction of the converged "
                                "fluctuation energy")

    p_mc = sub.add_parser("mc", help="Monte Carlo reference run")
    common(p_mc)
    p_mc.add_argument("--n", type=int, default=100_000)
    p_mc.add_argument("--seed", type=int, default=0)
    p_mc.set_defaults(func=_cmd_mc)

    p_pc = sub.add_parser("pc", help="chaos iteration without reduction")
    common(p_pc)
    p_pc.set_defaults(func=lambda a: _run_pc(a, reduce=False))

    p_kl = sub.add_parser("pc-kl", help="chaos iteration with KL reduction")
    common(p_kl, with_tol=True)
    p_kl.set_defaults(func=lambda a: _run_pc(a, reduce=True))

    p_cmp = sub.add_parser("compare", help="diagnostics from two finished runs")
    p_cmp.add_argument("full_dir")
    p_cmp.add_argument("reduced_dir")
    common(p_cmp)
    p_cmp.set_defaults(func=_cmd_compare)

    p_study = sub.add_parser("study", help="tolerance sweep over both "
                                           "conductivities")
    common(p_study)
    p_study.set_defaults(func=_cmd_study)
    return parser


def run_command(command: str, out: str, config: str | None = None,
                **overrides) -> RunManifest:
    """Programmatic front door; returns the written manifest.

    ``overrides`` accepts the CLI flag names (seed, n, p, k, tol,
    tol_fraction, max_iters, threads) plus positional run directories for
    ``compare`` (full_dir, reduced_dir).
    """
    argv = [command]
    for positional in ("full_dir", "reduced_dir"):
        if positional in overrides:
            argv.append(str(overrides.pop(positional)))
    argv += ["--out", str(out)]
    if config is not None:
        argv += ["--config", str(config)]
    for key, value in overrides.items():
        argv += [f"--{key.replace('_', '-')}", str(value)]
    args = build_parser().parse_args(argv)
    code = args.func(args)
    if code != 0:
        raise KLCouplingError(f"command {command} failed with exit code {code}")
    with open(Path(out) / "manifest.json") as fh:
        data = json.load(fh)
    return RunManifest(command=data["command"], config_hash=data["config_hash"],
                       out_dir=data["out_dir"], files=data["files"],
                       versions=data["versions"], seconds=data["seconds"])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except KLCouplingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
