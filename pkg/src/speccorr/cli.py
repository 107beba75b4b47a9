"""Command-line front end.

Subcommands: ``spectrum`` (eigenpair caching), ``correspond`` (pair
correspondence), ``benchmark`` (geodesic-error evaluation over a dataset
directory), ``symmetry`` (intrinsic reflective symmetry), ``transfer``
(attribute transfer through a saved correspondence).

Exit codes: 0 success, 1 algorithmic failure, 2 I/O or usage error.
"""

import argparse
import dataclasses
import json
import logging
import os
import re
import sys
import time

import numpy as np

from . import __version__
from .engine import Correspondence, PipelineConfig, PipelineError, full_pipeline
from .evaluation import (CURVE_THRESHOLDS, SymmetryError, detect_symmetry,
                         distortion_curve, transfer_attribute)
from .mesh import MeshError
from .meshio import load_mesh, save_mesh
from .spectrum import (SpectrumError, compute_spectrum, load_spectrum,
                       save_spectrum)

logger = logging.getLogger(__name__)

SUMMARY_THRESHOLDS = (0.025, 0.050, 0.100, 0.150, 0.200)

_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


class UsageError(Exception):
    pass


def read_config_file(path):
    """Flat key=value config mirroring the PipelineConfig field names."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_FIELDS:
                raise UsageError(f"{path}:{lineno}: unknown option {key!r}")
            values[key] = _parse_value(key, raw)
    return values


def _parse_value(key, raw):
    default = getattr(PipelineConfig(), key)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float) or key in ("kernel_t", "beta"):
        return None if raw.lower() == "none" else float(raw)
    return raw


def build_config(args):
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    if getattr(args, "n_eigs", None) is not None:
        values["n_eigs"] = args.n_eigs
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    return PipelineConfig(**values)


def cache_dir(args):
    path = getattr(args, "cache_dir", None) or os.environ.get("SPECCORR_CACHE")
    if path:
        os.makedirs(path, exist_ok=True)
    return path


def _cached_spectrum(mesh, n_eigs, directory, label=""):
    if not directory:
        return compute_spectrum(mesh, n_eigs), False
    path = os.path.join(directory,
                        f"{mesh.content_hash()[:16]}_{n_eigs}.spec")
    if os.path.exists(path):
        try:
            basis = load_spectrum(path, mesh)
            logger.info("cache hit for %s (%s)", label or "mesh", path)
            print(f"cache hit: {path}")
            return basis, True
        except SpectrumError as exc:
            logger.warning("ignoring bad spectrum cache: %s", exc)
            print(f"warning: corrupted cache {path}; recomputing")
    basis = compute_spectrum(mesh, n_eigs)
    save_spectrum(basis, mesh, path)
    return basis, False


def write_correspondence(path, corr, mesh_x, mesh_y, cfg):
    with open(path, "w") as fh:
        fh.write(f"# speccorr {__version__}\n")
        fh.write(f"# mesh_x {mesh_x.content_hash()}\n")
        fh.write(f"# mesh_y {mesh_y.content_hash()}\n")
        fh.write(f"# seed {cfg.seed}\n")
        for key in sorted(cfg.to_dict()):
            fh.write(f"# cfg.{key} {getattr(cfg, key)}\n")
        for x in corr.domain:
            fh.write(f"{x} {corr.mapping[x]}\n")


def read_correspondence(path):
    indices, targets = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            x, y = line.split()
            indices.append(int(x))
            targets.append(int(y))
    indices = np.asarray(indices, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    n = int(indices.max()) + 1 if len(indices) else 0
    return Correspondence.from_pairs(n, indices, targets, source="file")


def write_manifest(path, cfg, inputs, outputs, timings, extra=None):
    manifest = {
        "version": __version__,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "inputs": inputs,
        "outputs": outputs,
        "timings": timings,
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_spectrum(args):
    mesh = load_mesh(args.mesh)
    n_eigs = args.n_eigs if args.n_eigs is not None else 120
    if args.out:
        if os.path.exists(args.out):
            try:
                load_spectrum(args.out, mesh)
                print(f"cache hit: {args.out}")
                return 0
            except SpectrumError as exc:
                print(f"warning: {exc}; recomputing")
        basis = compute_spectrum(mesh, n_eigs)
        save_spectrum(basis, mesh, args.out)
        print(f"wrote spectrum cache {args.out}")
    else:
        directory = cache_dir(args)
        if not directory:
            raise UsageError("spectrum needs an output path or a cache dir")
        _cached_spectrum(mesh, n_eigs, directory)
    return 0


def cmd_correspond(args):
    mesh_x = load_mesh(args.mesh_x)
    mesh_y = load_mesh(args.mesh_y)
    cfg = build_config(args)
    directory = cache_dir(args)
    t0 = time.perf_counter()
    basis_x = basis_y = None
    if directory:
        basis_x, _ = _cached_spectrum(mesh_x, cfg.n_eigs, directory, "mesh_x")
        basis_y, _ = _cached_spectrum(mesh_y, cfg.n_eigs, directory, "mesh_y")
    corr, diag = full_pipeline(mesh_x, mesh_y, cfg,
                               basis_x=basis_x, basis_y=basis_y)
    write_correspondence(args.out, corr, mesh_x, mesh_y, cfg)
    manifest_path = args.out + ".manifest.json"
    write_manifest(
        manifest_path, cfg,
        inputs={"mesh_x": {"path": args.mesh_x,
                           "hash": mesh_x.content_hash()},
                "mesh_y": {"path": args.mesh_y,
                           "hash": mesh_y.content_hash()}},
        outputs=[args.out],
        timings=diag["timings"],
        extra={"quality": diag["quality"],
               "functionals": diag["functionals"],
               "wall_time": time.perf_counter() - t0})
    print(f"wrote {args.out} (Q={diag['quality']:.4f})")
    return 0


_CLASS_RE = re.compile(r"^([A-Za-z_\-]+?)[_\-]?(\d+)$")


def discover_pairs(dataset, classes=None):
    """Group dataset meshes by class name; pair the lowest index (the
    reference pose) with every other member."""
    groups = {}
    for name in sorted(os.listdir(dataset)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in (".off", ".obj", ".ply"):
            continue
        m = _CLASS_RE.match(stem)
        if not m:
            continue
        cls, idx = m.group(1), int(m.group(2))
        if classes and cls not in classes:
            continue
        groups.setdefault(cls, []).append((idx, os.path.join(dataset, name)))
    pairs = []
    for cls, members in sorted(groups.items()):
        members.sort()
        ref = members[0][1]
        for idx, path in members[1:]:
            pairs.append((f"{cls}{members[0][0]}-{cls}{idx}", ref, path))
    return pairs


def _benchmark_pair(job):
    label, path_x, path_y, cfg_dict, allow_symmetry = job
    cfg = PipelineConfig(**cfg_dict)
    mesh_x = load_mesh(path_x)
    mesh_y = load_mesh(path_y)
    if mesh_x.n_vertices != mesh_y.n_vertices:
        raise UsageError(
            f"{label}: vertex counts differ ({mesh_x.n_vertices} vs "
            f"{mesh_y.n_vertices}); shared-ordering ground truth unavailable")
    truth = np.arange(mesh_x.n_vertices)
    corr, diag = full_pipeline(mesh_x, mesh_y, cfg)
    symmetry_map = None
    if allow_symmetry:
        try:
            sym_corr, _, _ = detect_symmetry(mesh_y, cfg)
            symmetry_map = sym_corr.mapping
        except SymmetryError:
            pass
    curve = distortion_curve(corr, truth, mesh_y,
                             allow_symmetry=symmetry_map is not None,
                             symmetry_map=symmetry_map)
    return label, curve.errors, diag["quality"]


def _write_curve_csv(path, thresholds, fractions):
    with open(path, "w") as fh:
        fh.write("threshold,fraction\n")
        for t, f in zip(thresholds, fractions):
            fh.write(f"{t:.3f},{f:.6f}\n")


def cmd_benchmark(args):
    pairs = discover_pairs(args.dataset, set(args.classes or []))
    if not pairs:
        raise UsageError(f"no benchmark pairs found in {args.dataset}")
    os.makedirs(args.out, exist_ok=True)
    cfg = build_config(args)
    jobs = [(label, px, py, cfg.to_dict(), args.allow_symmetry)
            for label, px, py in pairs]

    results = []
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_benchmark_pair, jobs))
    else:
        for job in jobs:
            results.append(_benchmark_pair(job))

    all_errors = []
    summary_rows = []
    for label, errors, quality in results:
        fractions = [float((errors <= t).mean()) for t in CURVE_THRESHOLDS]
        _write_curve_csv(os.path.join(args.out, f"{label}.csv"),
                         CURVE_THRESHOLDS, fractions)
        all_errors.append(errors)
        summary_rows.append(
            (label, [float((errors <= t).mean()) for t in SUMMARY_THRESHOLDS],
             quality))

    pooled = np.concatenate(all_errors)
    agg = [float((pooled <= t).mean()) for t in CURVE_THRESHOLDS]
    _write_curve_csv(os.path.join(args.out, "aggregate.csv"),
                     CURVE_THRESHOLDS, agg)

    summary_path = os.path.join(args.out, "summary.txt")
    with open(summary_path, "w") as fh:
        header = "pair".ljust(24) + "".join(
            f"{t:>8.3f}" for t in SUMMARY_THRESHOLDS) + "       Q\n"
        fh.write(header)
        for label, fracs, quality in summary_rows:
            fh.write(label.ljust(24) + "".join(
                f"{100 * f:8.1f}" for f in fracs) + f"{quality:8.3f}\n")
        agg_fracs = [float((pooled <= t).mean()) for t in SUMMARY_THRESHOLDS]
        fh.write("aggregate".ljust(24) + "".join(
            f"{100 * f:8.1f}" for f in agg_fracs) + "\n")
    with open(summary_path) as fh:
        sys.stdout.write(fh.read())
    return 0


def cmd_symmetry(args):
    mesh = load_mesh(args.mesh)
    cfg = build_config(args)
    corr, displacement, diag = detect_symmetry(mesh, cfg)
    base, _ = os.path.splitext(args.out)
    corr_path = base + ".corr"
    write_correspondence(corr_path, corr, mesh, mesh, cfg)
    colored = mesh.with_attributes({"displacement": displacement})
    save_mesh(colored, args.out, fmt="ply")
    print(f"wrote {args.out} and {corr_path} (Q={diag['quality']:.4f}, "
          f"median displacement {np.median(displacement):.4f})")
    return 0


def cmd_transfer(args):
    corr = read_correspondence(args.corr)
    mesh_x = load_mesh(args.mesh_x)
    mesh_y = load_mesh(args.mesh_y)
    if not mesh_y.attributes:
        raise UsageError(f"{args.mesh_y} carries no vertex attributes")
    attrs = {name: transfer_attribute(corr, values)
             for name, values in mesh_y.attributes.items()}
    save_mesh(mesh_x.with_attributes(attrs), args.out, fmt="ply")
    print(f"wrote {args.out} ({', '.join(attrs)})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="speccorr",
        description="Spectral correspondence between triangle meshes")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n-eigs", type=int, dest="n_eigs", default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--config", default=None)
    common.add_argument("--allow-symmetry", action="store_true")
    common.add_argument("--cache-dir", default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", parents=[common],
                       help="compute or refresh a spectrum cache")
    p.add_argument("mesh")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("correspond", parents=[common],
                       help="dense correspondence between two meshes")
    p.add_argument("mesh_x")
    p.add_argument("mesh_y")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correspond)

    p = sub.add_parser("benchmark", parents=[common],
                       help="evaluate correspondence over a dataset dir")
    p.add_argument("dataset")
    p.add_argument("--classes", nargs="*", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("symmetry", parents=[common],
                       help="detect intrinsic reflective symmetry")
    p.add_argument("mesh")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_symmetry)

    p = sub.add_parser("transfer", parents=[common],
                       help="transfer vertex attributes through a map")
    p.add_argument("corr")
    p.add_argument("mesh_x")
    p.add_argument("mesh_y")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("SPECCORR_LOGLEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, MeshError, FileNotFoundError, IsADirectoryError,
            PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, SpectrumError, SymmetryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
