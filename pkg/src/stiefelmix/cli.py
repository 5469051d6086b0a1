"""Command line entry point (``stiefelmix``)."""

import argparse
import csv
import os
import sys

import numpy as np

from . import diagnostics as dg
from .hypergeom import HypergeomConfig, log_0F1, mc_normalizer
from .io import (
    RunConfig,
    build_kappa_prior,
    emit_summaries,
    parse_frames_csv,
    read_orbits_csv,
    synthetic_neo,
    tomllib,
    write_frames_csv,
    write_svg_heatmap,
)
from .langevin import LangevinParams, log_density, sample
from .mixture import ChainOutput, MixtureState, coclustering_matrix, run_chain


def _floats(text):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _grid(text):
    """Concentration vectors: ``"5,5;10,10"`` -> [[5, 5], [10, 10]]."""
    return [_floats(part) for part in text.split(";") if part.strip()]


def _rng(args):
    return np.random.default_rng(args.seed)


def _write_rows(path, header, rows):
    out = open(path, "w", newline="") if path and path != "-" else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()


def _identity_frame(d, p):
    return np.eye(d)[:, :p]


# ---------------------------------------------------------------------------
# fit / summarize


def _load_config(args):
    if args.config:
        cfg = RunConfig.from_toml(args.config)
    else:
        cfg = RunConfig(seed=args.seed)
    overrides = {k: getattr(args, k) for k in ("iters", "burn_in", "thin") if getattr(args, k, None)}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["out"] = args.out
    if overrides:
        cfg = RunConfig.from_dict({**cfg.__dict__, **overrides})
    return cfg


def write_chain(outdir, chain, data):
    d, p = data.d, data.p
    ids = data.ids
    with open(os.path.join(outdir, "chain_states.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "alpha", "log_joint"] + ids)
        for r in range(chain.n_retained):
            w.writerow([r, repr(float(chain.alpha[r])), repr(float(chain.log_joint[r]))]
                       + [int(z) for z in chain.assignments[r]])
    with open(os.path.join(outdir, "params_samples.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "cluster", "size"] + [f"kappa{j + 1}" for j in range(p)]
                   + [f"g{i + 1}_{j + 1}" for i in range(d) for j in range(p)])
        for r in range(chain.n_retained):
            sizes = np.bincount(chain.assignments[r], minlength=len(chain.locations[r]))
            for c, (G, k) in enumerate(zip(chain.locations[r], chain.kappas[r])):
                w.writerow([r, c, int(sizes[c])] + [repr(float(v)) for v in k]
                           + [repr(float(v)) for v in G.ravel()])
    with open(os.path.join(outdir, "acceptance.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["move", "accepted", "proposed", "rate"])
        for move, (a, t) in chain.acceptance.items():
            w.writerow([move, a, t, f"{a / t:.6f}" if t else "nan"])


def read_chain(outdir, d, p, shared_kappa=False):
    """Rebuild a :class:`ChainOutput` from ``fit`` output files."""
    with open(os.path.join(outdir, "chain_states.csv"), newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    params = {}
    with open(os.path.join(outdir, "params_samples.csv"), newline="") as fh:
        for row in list(csv.reader(fh))[1:]:
            r, c = int(row[0]), int(row[1])
            kap = np.array([float(v) for v in row[3:3 + p]])
            G = np.array([float(v) for v in row[3 + p:]]).reshape(d, p)
            params.setdefault(r, []).append((c, G, kap))
    states, lj = [], []
    for row in rows:
        r = int(row[0])
        entries = sorted(params.get(r, []), key=lambda t: t[0])
        locs = np.stack([e[1] for e in entries]) if entries else np.zeros((0, d, p))
        kaps = np.stack([e[2] for e in entries]) if entries else np.zeros((0, p))
        states.append(MixtureState(
            assignments=np.array([int(v) for v in row[3:]], dtype=int),
            locations=locs,
            kappas=None if shared_kappa else kaps,
            shared_kappa=kaps[0].copy() if shared_kappa else None,
            alpha=float(row[1]),
        ))
        lj.append(float(row[2]))
    chain = ChainOutput.from_states(states, log_joints=lj)
    acc_path = os.path.join(outdir, "acceptance.csv")
    if os.path.exists(acc_path):
        with open(acc_path, newline="") as fh:
            for row in list(csv.reader(fh))[1:]:
                chain.acceptance[row[0]] = [int(row[1]), int(row[2])]
    return chain


def cmd_fit(args):
    cfg = _load_config(args)
    if cfg.seed is None:
        raise SystemExit("fit needs a seed (--seed or 'seed' in the config)")
    if args.data:
        data = parse_frames_csv(args.data)
    else:
        data, _ = synthetic_neo(np.random.default_rng(cfg.seed))
        print("no --data given: using the synthetic NEO-shaped stand-in", file=sys.stderr)
    prior = cfg.prior()
    outdir = cfg.out
    os.makedirs(outdir, exist_ok=True)
    chain = run_chain(data.frames, prior, cfg.iters, cfg.burn_in, cfg.thin, cfg.m_aux,
                      (cfg.step_g, cfg.step_kappa), seed=cfg.seed)
    with open(os.path.join(outdir, "config.toml"), "w") as fh:
        fh.write(cfg.to_toml())
    write_frames_csv(os.path.join(outdir, "data.csv"), data.frames, data.ids)
    write_chain(outdir, chain, data)
    emit_summaries(chain, data, outdir, prior, seed=cfg.seed)
    write_svg_heatmap(os.path.join(outdir, "coclustering.svg"), coclustering_matrix(chain),
                      title="co-clustering counts")
    print(open(os.path.join(outdir, "summary.txt")).read(), end="")


def cmd_summarize(args):
    run = args.run or args.out
    if not run:
        raise SystemExit("summarize needs --run DIR")
    cfg = RunConfig.from_toml(os.path.join(run, "config.toml"))
    data = parse_frames_csv(os.path.join(run, "data.csv"))
    prior = cfg.prior()
    chain = read_chain(run, data.d, data.p, prior.shared_kappa)
    outdir = args.out or run
    emit_summaries(chain, data, outdir, prior, seed=cfg.seed if args.seed is None else args.seed)
    print(open(os.path.join(outdir, "summary.txt")).read(), end="")


# ---------------------------------------------------------------------------
# kernel utilities


def _params_from_args(args):
    if getattr(args, "params_file", None):
        with open(args.params_file, "rb") as fh:
            tab = tomllib.load(fh)
        return LangevinParams(np.array(tab["G"], dtype=float), tab["kappa"])
    kappa = np.array(_floats(args.kappa))
    p = args.p or kappa.size
    if kappa.size == 1 and p > 1:
        kappa = np.full(p, kappa[0])
    if args.g_file:
        G = parse_frames_csv(args.g_file).frames[0]
    else:
        G = _identity_frame(args.d, p)
    return LangevinParams(G, kappa)


def cmd_sample(args):
    params = _params_from_args(args)
    X = sample(params, _rng(args), size=args.n, method=args.method)
    write_frames_csv(args.out or "samples.csv", X)


def cmd_density(args):
    params = _params_from_args(args)
    data = parse_frames_csv(args.x_file)
    lp = log_density(data.frames, params)
    _write_rows(args.out, ["id", "log_density"],
                [[i, repr(float(v))] for i, v in zip(data.ids, lp)])


def cmd_hypergeom(args):
    kappa = np.array(_floats(args.kappa))
    cfg = HypergeomConfig(truncation_order=args.order, max_order=max(args.order, args.max_order))
    val = log_0F1(args.d / 2.0, kappa, cfg)
    print(f"log_0F1({args.d}/2; kappa^2/4) = {val:.12g}")
    if args.mc_check:
        G = _identity_frame(args.d, kappa.size)
        est, se = mc_normalizer(args.d, kappa.size, kappa, G, args.mc_check, _rng(args))
        z = (np.exp(val) - est) / se if se > 0 else 0.0
        print(f"Monte Carlo Z = {est:.8g} +/- {se:.3g} (series Z = {np.exp(val):.8g}, z = {z:.2f})")


def cmd_convert(args):
    data = read_orbits_csv(args.orbits, degrees=not args.radians)
    write_frames_csv(args.out or "frames.csv", data.frames, data.ids)


# ---------------------------------------------------------------------------
# diagnostics


def cmd_diagnose(args):
    rng = _rng(args)
    d, which = args.d, args.which
    if which in ("hellinger", "kl"):
        rows = []
        for kap in _grid(args.kappa_grid):
            p = len(kap)
            lang = dg.langevin_handle(_identity_frame(d, p), kap)
            unif = dg.DensityHandle.uniform(d, p)
            if which == "hellinger":
                est, se = dg.hellinger_mc(unif, lang, args.n_samples, rng)
            else:
                est, se = dg.kl_mc(unif, lang, args.n_samples, rng)
            rows.append([" ".join(map(str, kap)), repr(est), repr(se)])
        _write_rows(args.out, ["kappa", "estimate", "std_error"], rows)
    elif which == "approx":
        f_kap = _floats(args.f_kappa)
        f = dg.langevin_handle(_identity_frame(d, len(f_kap)), f_kap)
        rows = []
        for k in _floats(args.kappa_grid):
            err, se = dg.kernel_approx_error(f, [k] * len(f_kap), args.n_outer, args.n_inner,
                                             rng, return_details=True)
            rows.append([k, repr(err), repr(se)])
        _write_rows(args.out, ["kappa", "error", "inner_std_error"], rows)
    elif which == "lipschitz":
        p = args.p
        grid = _floats(args.kappa_grid)
        rows = []
        if args.kind == "location":
            xs = [float(dg.phi([k] * p)) for k in grid]
            ys = [dg.lipschitz_ratio_location([k] * p, args.trials, rng, d) for k in grid]
        else:
            xs = grid
            ys = [dg.lipschitz_ratio_concentration(b, args.trials, rng, d, p) for b in grid]
        rows = [[g, repr(x), repr(y)] for g, x, y in zip(grid, xs, ys)]
        _write_rows(args.out, ["parameter", "phi_bound", "max_ratio"], rows)
        print(f"log-log slope: {dg.fit_loglog_slope(xs, ys):.4f}", file=sys.stderr)
    elif which == "tail":
        spec = {"type": args.prior_type}
        if args.prior_params:
            spec["params"] = _floats(args.prior_params)
        prior = build_kappa_prior(spec)
        n_grid = [int(v) for v in _floats(args.n_grid)]
        masses = dg.tail_mass(prior, args.a, n_grid, args.p, args.n_draws, rng)
        ok = dg.tail_condition_check(prior, args.a, args.beta, n_grid, d, args.p,
                                     args.n_draws, np.random.default_rng(args.seed))
        rows = [[n, repr(masses[n]), repr(float(np.exp(-n * args.beta))), ok[n]] for n in n_grid]
        _write_rows(args.out, ["n", "tail_mass", "bound", "passed"], rows)


# ---------------------------------------------------------------------------
# parser


def _add_kernel_args(sp, with_n=True):
    sp.add_argument("--d", type=int, default=3)
    sp.add_argument("--p", type=int, default=None)
    sp.add_argument("--kappa", default="5")
    sp.add_argument("--g-file", help="frames CSV whose first row is the location G")
    sp.add_argument("--params-file", help="TOML with G (list of rows) and kappa")
    if with_n:
        sp.add_argument("--n", type=int, default=1000)
        sp.add_argument("--method", choices=("haar", "sequential"), default="haar")


def build_parser():
    def globals_(default):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=default)
        g.add_argument("--config", default=default, help="TOML run configuration")
        g.add_argument("--out", default=default, help="output file or directory")
        return g

    # flags may precede or follow the subcommand; the copy on subcommands
    # must not overwrite values parsed at the top level
    common = globals_(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(
        prog="stiefelmix",
        description="Dirichlet-process mixtures of matrix Langevin kernels on Stiefel manifolds.",
        parents=[globals_(None)],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("fit", parents=[common], help="run the Gibbs sampler")
    sp.add_argument("--data", help="frames CSV (default: synthetic NEO-shaped data)")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--burn-in", dest="burn_in", type=int)
    sp.add_argument("--thin", type=int)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("summarize", parents=[common], help="re-emit summaries of a fit")
    sp.add_argument("--run", help="directory written by fit")
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("sample", parents=[common], help="draw Langevin frames")
    _add_kernel_args(sp)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("density", parents=[common], help="evaluate Langevin log density")
    _add_kernel_args(sp, with_n=False)
    sp.add_argument("--x-file", required=True)
    sp.set_defaults(func=cmd_density)

    sp = sub.add_parser("langevin", parents=[common], help="kernel sampling and density")
    lsub = sp.add_subparsers(dest="action", required=True)
    ls = lsub.add_parser("sample", parents=[common])
    _add_kernel_args(ls)
    ls.set_defaults(func=cmd_sample)
    ld = lsub.add_parser("density", parents=[common])
    _add_kernel_args(ld, with_n=False)
    ld.add_argument("--x-file", required=True)
    ld.set_defaults(func=cmd_density)

    sp = sub.add_parser("hypergeom", parents=[common], help="normalizer evaluation")
    hsub = sp.add_subparsers(dest="action", required=True)
    he = hsub.add_parser("eval", parents=[common])
    he.add_argument("--d", type=int, required=True)
    he.add_argument("--kappa", required=True, help="k1,k2,...")
    he.add_argument("--order", type=int, default=60)
    he.add_argument("--max-order", dest="max_order", type=int, default=320)
    he.add_argument("--mc-check", dest="mc_check", type=int, default=0,
                    help="also estimate Z by Monte Carlo with this many draws")
    he.set_defaults(func=cmd_hypergeom)

    sp = sub.add_parser("convert-orbits", parents=[common], help="orbital elements -> frames")
    sp.add_argument("--orbits", required=True,
                    help="CSV with id,inclination,lon_ascending_node,arg_perihelion")
    sp.add_argument("--radians", action="store_true", help="angles are in radians")
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("diagnose", parents=[common], help="numeric checks (CSV output)")
    sp.add_argument("which", choices=("hellinger", "kl", "approx", "lipschitz", "tail"))
    sp.add_argument("--d", type=int, default=3)
    sp.add_argument("--p", type=int, default=2)
    sp.add_argument("--kappa-grid", dest="kappa_grid", default="5,5;10,10")
    sp.add_argument("--n-samples", dest="n_samples", type=int, default=100_000)
    sp.add_argument("--f-kappa", dest="f_kappa", default="5,5")
    sp.add_argument("--n-outer", dest="n_outer", type=int, default=1000)
    sp.add_argument("--n-inner", dest="n_inner", type=int, default=1000)
    sp.add_argument("--kind", choices=("location", "concentration"), default="location")
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--prior-type", dest="prior_type", default="weibull")
    sp.add_argument("--prior-params", dest="prior_params", default="0.03,1.0")
    sp.add_argument("--a", type=float, default=0.03)
    sp.add_argument("--beta", type=float, default=0.01)
    sp.add_argument("--n-grid", dest="n_grid", default="1000,10000")
    sp.add_argument("--n-draws", dest="n_draws", type=int, default=10**6)
    sp.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
