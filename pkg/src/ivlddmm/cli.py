"""Command-line front end.

Subcommands: mesh, register, atlas, simulate, test. Exit codes: 0 success,
2 input error, 3 optimizer did not converge (outputs still written),
4 infeasible atlas constraints.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .atlas import AtlasVarifold, alternate_minimize
from .config import RunConfig, load_config
from .errors import Infeasible, MaxIterations, VarifoldError
from .io import (read_json, read_points_csv, realization_points, regular_probes,
                 write_grid_csv, write_json, write_points_csv, write_statistics_csv)
from .lddmm import FlowKernel, flow_map, register, transport_points
from .mesh import SimplicialFamily
from .pointprocess import CppModel, Realization, sample, statistic_field
from .varifold import FeatureSpace, MeshVarifold, build_varifold, select_genes

log = logging.getLogger("ivlddmm")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_INFEASIBLE = 4


def _defaults_help():
    lines = ["config keys (defaults):"]
    for k, v in RunConfig().as_pairs().items():
        note = ""
        if k == "k1.sigma":
            note = "  (none: 2 * lambda)"
        elif k == "lddmm.sigmaV":
            note = "  (none: 5 * lambda)"
        elif k == "lddmm.sigma":
            note = "  (none: 0.1 * sqrt(initial sqdist))"
        lines.append(f"  {k} = {'none' if v is None else v}{note}")
    return "\n".join(lines)


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("-o", "--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ivlddmm", description="Image-varifold registration, "
                                "atlasing and point-process tests.",
                                epilog=_defaults_help(),
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", parents=[common], help="points CSV -> mesh.json + varifold.json")
    m.add_argument("points")
    m.add_argument("--lambda", dest="lam", type=float, help="mesh resolution")
    m.add_argument("--dim", type=int, choices=(2, 3))

    r = sub.add_parser("register", parents=[common], help="register two varifold JSON files")
    r.add_argument("template")
    r.add_argument("target")

    a = sub.add_parser("atlas", parents=[common], help="fit label parameters and deformation")
    a.add_argument("atlas")
    a.add_argument("target")

    s = sub.add_parser("simulate", parents=[common], help="sample a compound Poisson model")
    s.add_argument("model")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-replicates", type=int)

    t = sub.add_parser("test", parents=[common], help="likelihood-ratio statistic field")
    t.add_argument("n1")
    t.add_argument("n2")
    t.add_argument("--phi1", help="registration bundle for the first realization")
    t.add_argument("--phi2", help="registration bundle for the second realization")
    t.add_argument("partition", help="partition mesh JSON")
    t.add_argument("--feature-sets", default="",
                   help="mark groups, e.g. 'a,b;c' (the whole space is always column 0)")
    t.add_argument("--stats", default="statistics.csv", help="output file name")
    return p


def _config(args):
    overrides = list(args.set)
    if getattr(args, "lam", None) is not None:
        overrides.append(f"lambda={args.lam}")
    if getattr(args, "dim", None) is not None:
        overrides.append(f"dim={args.dim}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "n_replicates", None) is not None:
        overrides.append(f"n_replicates={args.n_replicates}")
    return load_config(args.config, overrides)


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_mesh(args, cfg):
    points = read_points_csv(args.points)
    if points.dim != cfg.dim:
        raise ValueError(f"points are {points.dim}D but dim = {cfg.dim}")
    if points.counts is not None and cfg.features in ("genes", "rna"):
        points = select_genes(points, cfg.genes_k, cfg.genes_criterion)
    v = build_varifold(points, cfg.lam, cfg.features, cfg.weight_mode)
    out = _outdir(args)
    h = cfg.hash()
    write_json(out / "mesh.json", v.family.to_dict(), h)
    write_json(out / "varifold.json", v.to_dict(), h)
    print(f"{v.family.n_vertices} vertices, {v.family.n_simplices} simplices")
    return EXIT_OK


def _load_varifold(path):
    return MeshVarifold.from_dict(read_json(path))


def _bundle(result, template, reg_cfg, kv_sigma):
    return {"sigma": result.sigma, "sigmaV": kv_sigma, "nt": reg_cfg.nt,
            "control_points": template.family.vertices, "momenta": result.a,
            "trajectory": result.ztraj, "diagnostics": result.diagnostics()}


def _write_grid(out, result, template, kv, cfg):
    x = template.family.vertices
    pad = 0.1 * (x.max(axis=0) - x.min(axis=0))
    probes = regular_probes(x.min(axis=0) - pad, x.max(axis=0) + pad, cfg.grid_n)
    images = transport_points(result.a, x, kv, probes)
    write_grid_csv(out / "grid.csv", probes, images, cfg.hash())


def cmd_register(args, cfg):
    template, target = _load_varifold(args.template), _load_varifold(args.target)
    reg_cfg = cfg.registration()
    kv = FlowKernel(reg_cfg.sigmaV)
    result = register(template, target, cfg.metric(), reg_cfg, kv=kv)
    out = _outdir(args)
    write_json(out / "registration.json", _bundle(result, template, reg_cfg, kv.sigma)
               | {"config": cfg.as_pairs()}, cfg.hash())
    _write_grid(out, result, template, kv, cfg)
    print(f"status {result.status}, sqdist {result.initial_attachment:.6g} -> "
          f"{result.attachment:.6g} in {result.iterations} iterations")
    return EXIT_NOT_CONVERGED if result.line_search_failed else EXIT_OK


def cmd_atlas(args, cfg):
    data = read_json(args.atlas)
    if cfg.atlas_bounds == "none":
        data = {k: v for k, v in data.items() if k not in ("alpha_min", "alpha_max")}
    atlas = AtlasVarifold.from_dict(data)
    target = _load_varifold(args.target)
    reg_cfg = cfg.registration()
    res = alternate_minimize(atlas, target, cfg.metric(), reg_cfg, cfg.atlas_rounds,
                             cfg.atlas_mode, cfg.atlas_literal_alpha)
    out = _outdir(args)
    h = cfg.hash()
    write_json(out / "theta.json", res.theta.to_dict(), h)
    reg = res.registration
    template = MeshVarifold(atlas.family, np.ones(atlas.family.n_simplices),
                            np.zeros((atlas.family.n_simplices, target.features.size)),
                            target.features)
    write_json(out / "registration.json", _bundle(reg, template, reg_cfg, reg_cfg.sigmaV)
               | {"trace": res.trace, "config": cfg.as_pairs()}, h)
    _write_grid(out, reg, template, FlowKernel(reg_cfg.sigmaV), cfg)
    for row in res.trace:
        print(f"round {row['round']} {row['phase']}: objective {row['objective']:.6g}")
    return EXIT_NOT_CONVERGED if reg.line_search_failed else EXIT_OK


def cmd_simulate(args, cfg):
    model = CppModel.from_dict(read_json(args.model))
    out = _outdir(args)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_replicates)
    for i, ss in enumerate(seeds):
        N = sample(model, ss)
        write_points_csv(out / f"realization_{i:04d}.csv", realization_points(N), cfg.hash())
        print(f"replicate {i}: {len(N)} points")
    return EXIT_OK


def _realization(path, features=None):
    pts = read_points_csv(path)
    if pts.labels is None:
        raise ValueError(f"{path}: realizations need a label column")
    names = features.names if features is not None else pts.names
    index = {n: i for i, n in enumerate(names)}
    missing = set(pts.names) - set(index)
    if missing:
        raise ValueError(f"{path}: unknown marks {sorted(missing)}")
    marks = np.array([index[pts.names[k]] for k in pts.labels], dtype=np.int64)
    return Realization(pts.positions, marks, FeatureSpace.categorical(names))


def _phi(path, partition):
    if not path:
        return None
    b = read_json(path)
    z0 = np.asarray(b["control_points"], dtype=float)
    if z0.shape[1] != partition.dim:
        raise ValueError(f"{path}: deformation is {z0.shape[1]}D, partition {partition.dim}D")
    return flow_map(b["momenta"], z0, FlowKernel(float(b["sigmaV"])))


def cmd_test(args, cfg):
    partition = SimplicialFamily.from_dict(read_json(args.partition))
    first = read_points_csv(args.n1)
    second = read_points_csv(args.n2)
    if first.labels is None or second.labels is None:
        raise ValueError("realizations need a label column")
    names = tuple(dict.fromkeys(first.names + second.names))
    feats = FeatureSpace.categorical(names)
    N1, N2 = _realization(args.n1, feats), _realization(args.n2, feats)
    for N, path in ((N1, args.n1), (N2, args.n2)):
        if N.positions.shape[1] != partition.dim:
            raise ValueError(f"{path} is {N.positions.shape[1]}D, partition is {partition.dim}D")
    sets = []
    for group in filter(None, args.feature_sets.split(";")):
        idx = []
        for name in group.split(","):
            if name.strip() not in names:
                raise ValueError(f"unknown mark {name.strip()!r} in feature sets")
            idx.append(names.index(name.strip()))
        sets.append(idx)
    field = statistic_field(N1, N2, _phi(args.phi1, partition), _phi(args.phi2, partition),
                            partition, sets)
    out = _outdir(args)
    write_statistics_csv(out / args.stats, field, cfg.hash())
    c, j = np.unravel_index(np.argmax(field.T), field.shape)
    print(f"max T = {field.T[c, j]:.6g} at region {c}, feature set {j}")
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "register": cmd_register, "atlas": cmd_atlas,
            "simulate": cmd_simulate, "test": cmd_test}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except Infeasible as exc:
        print(f"error: {exc}; violated constraints at simplices {exc.violated}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except MaxIterations as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (VarifoldError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
