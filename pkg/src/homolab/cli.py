"""Command line entry point.

Every run writes its artifacts plus ``manifest.json`` into the output
directory.  The manifest holds the tool version, the fully resolved
configuration (including any environment descriptor read from disk) and a
sha256 per artifact; it never records thread counts or timestamps, so equal
seeds give byte-identical directories.  ``homolab replay`` re-runs a manifest
and reports which artifacts match.

Exit codes: 0 success, 1 error, 2 acceptance predicate failed, 64 usage, 66 missing input.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys

from . import __version__

EXIT_OK, EXIT_ERROR, EXIT_FAILED, EXIT_USAGE, EXIT_NOINPUT = 0, 1, 2, 64, 66
MANIFEST = "manifest.json"
# options that shape how a run executes but not what it computes
_RUNTIME_KEYS = ("threads", "config", "out", "command")
# error codes that mean the requested configuration is invalid (exit 64 rather than 1)
VALIDATION_CODES = frozenset({
    "bad-params", "bad-mode", "bad-dimension", "bad-eta", "ellipticity-risk", "bad-seed", "bad-config",
    "bad-probe", "bad-times", "bad-n", "bad-level", "too-few-paths", "too-few-times", "too-shallow",
    "level-mismatch", "level-too-small", "constraint-violation", "degenerate-branching", "bad-point",
})


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()] if text else []


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()] if text else []


def _seed_range(text):
    """``"a..b"`` (inclusive) or a comma list."""
    if not text:
        return []
    if ".." in text:
        lo, _, hi = text.partition("..")
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise UsageError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return _ints(text)


def _jsonable(o):
    import numpy as np

    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, (np.ndarray, tuple)):
        return [_jsonable(v) for v in o.tolist()] if isinstance(o, np.ndarray) else [_jsonable(v) for v in o]
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, list):
        return [_jsonable(v) for v in o]
    return o


def dumps(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


class RunContext:
    """Collects artifacts for one run inside ``out``."""

    def __init__(self, out):
        self.out = out
        os.makedirs(out, exist_ok=True)
        self.artifacts = {}

    def path(self, name):
        if os.path.basename(name) != name:
            raise ValueError(f"artifact names must be plain file names: {name!r}")
        return os.path.join(self.out, name)

    def _record(self, name):
        with open(self.path(name), "rb") as fh:
            self.artifacts[name] = hashlib.sha256(fh.read()).hexdigest()

    def write_text(self, name, text):
        with open(self.path(name), "w", newline="") as fh:
            fh.write(text)
        self._record(name)

    def write_json(self, name, obj):
        self.write_text(name, dumps(obj))

    def write_jsonl(self, name, objs):
        self.write_text(name, "".join(json.dumps(_jsonable(o), sort_keys=True) + "\n" for o in objs))

    def write_csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in _jsonable(list(r))])
        self.write_text(name, buf.getvalue())

    def adopt(self, name):
        """Register a file some module wrote directly into the output directory."""
        self._record(name)

    def manifest(self, command, config):
        doc = {"tool": "homolab", "version": __version__, "command": command, "config": config,
               "artifacts": dict(sorted(self.artifacts.items()))}
        with open(self.path(MANIFEST), "w") as fh:
            fh.write(dumps(doc))
        return doc


# ---------------------------------------------------------------- shared option groups


def _common(p):
    p.add_argument("--out", default="homolab_out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="global seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads (0 = auto; HOMOLAB_THREADS fallback)")
    p.add_argument("--config", default=None, help="JSON file of option defaults; flags win")


def _hier_opts(p):
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--l0", type=int, default=25)
    p.add_argument("--a", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--c0", type=float, default=0.5)
    p.add_argument("--nmax", type=int, default=2)
    p.add_argument("--profile", default="desk", choices=["desk", "paper"])


def _env_opts(p):
    p.add_argument("--env", default=None, help="environment JSON written by 'homolab env sample'")
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--mode", default="full", choices=["zero", "scalar-A", "vector-b", "full"])
    p.add_argument("--env-seed", type=int, default=None, help="environment seed (defaults to --seed)")
    p.add_argument("--allow-low-dim", action="store_true")


def _hierarchy(args):
    from .scales import ScaleParams, build_hierarchy

    return build_hierarchy(ScaleParams(d=args.d, beta=args.beta, a=args.a, L0=args.l0, c0=args.c0,
                                       nmax=args.nmax, profile=args.profile))


def _environment(args, seed=None):
    from .environment import EnvParams, Environment, sample_environment

    if getattr(args, "env_descriptor", None):
        return Environment.from_descriptor(args.env_descriptor)
    if seed is None:
        seed = args.seed if args.env_seed is None else args.env_seed
    d = getattr(args, "d", 3)
    return sample_environment(EnvParams(d=d, eta=args.eta, mode=args.mode, seed=seed,
                                        allow_low_dim=args.allow_low_dim))


# ---------------------------------------------------------------- commands


def cmd_hierarchy(args, ctx):
    h = _hierarchy(args)
    ctx.write_json("hierarchy.json", h.to_dict())
    rows = [[lv.n, lv.L, "" if lv.ell is None else lv.ell, lv.kappa, lv.kappa_tilde, lv.D, lv.D_tilde]
            for lv in h.levels]
    ctx.write_csv("hierarchy.csv", ["n", "L", "ell", "kappa", "kappa_tilde", "D", "D_tilde"], rows)
    ctx.write_csv("constraints.csv", ["constraint", "level", "satisfied"],
                  [[r.constraint, r.level, r.satisfied] for r in h.constraint_report])
    print(f"delta={h.delta:g} mbar={h.mbar} m0={h.m0} M0={h.M0:.6g}")
    for r in rows:
        print("  n={} L={} ell={} kappa={:.6g} D={:.6g} D~={:.6g}".format(r[0], r[1], r[2], r[3], r[5], r[6]))
    bad = [f"{r.constraint}@{r.level}" for r in h.constraint_report if not r.satisfied]
    print("constraints: " + ("all satisfied" if not bad else "violated " + ", ".join(bad)))
    return EXIT_OK


def cmd_env(args, ctx):
    env = _environment(args)
    ctx.write_text("env.json", env.to_json() + "\n")
    print(f"environment seed={env.params.seed} eta={env.params.eta} mode={env.params.mode} d={env.d}")
    points = [_floats(p) for p in args.probe.split(";") if p.strip()] if args.probe else []
    if points:
        rows = []
        for x in points:
            if len(x) != env.d:
                raise UsageError(f"probe point {x} needs {env.d} coordinates")
            A, b = env.evaluate(x)
            rows.append({"x": x, "A": A.tolist(), "b": b.tolist()})
            print(f"  x={x}: A={A.tolist()} b={b.tolist()}")
        ctx.write_json("probe.json", rows)
    return EXIT_OK


def cmd_simulate(args, ctx):
    from .sde_mc import SimConfig, default_dt, simulate

    env = _environment(args)
    dt = args.dt or default_dt(args.t)
    path_seed = args.seed if args.path_seed is None else args.path_seed
    cfg = SimConfig(dt, args.t, args.paths, path_seed, tuple(_floats(args.record_times)), args.stop_radius)
    x0 = _floats(args.x0) or [0.0] * env.d
    ens = simulate(env, cfg, x0)
    levels = _floats(args.tail_levels)
    ctx.write_csv("ensemble.csv", ["record_time", "mean_sq", "se"] + [f"tail_{v:g}" for v in levels],
                  ens.summary_rows(levels))
    ens.dump_binary(ctx.path("endpoints.bin"))
    ctx.adopt("endpoints.bin")
    for t, m, se, *_ in ens.summary_rows():
        print(f"t={t:g} mean|X-x0|^2={m:.6g} (se {se:.2g})")
    return EXIT_OK


def cmd_alpha(args, ctx):
    from .estimators import estimate_alpha
    from .rng import seed_sequence
    from .sde_mc import SimConfig, default_dt

    h = _hierarchy(args)
    t = float(h.L(args.n)) ** 2
    dt = args.dt or default_dt(t)
    cfg = SimConfig(dt, t, args.paths, args.seed, (t,), h.levels[args.n].D_tilde)
    if args.env_count > 1:
        envs = [_environment(args, s) for s in seed_sequence(args.seed, args.env_count)]
    else:
        envs = _environment(args)
    e = estimate_alpha(envs, h, args.n, cfg)
    ctx.write_csv("alpha.csv", ["n", "alpha_hat", "se", "mode", "n_paths", "n_envs"],
                  [[e.n, e.alpha_hat, e.std_err, e.mode, e.n_paths, e.n_envs]])
    print(f"alpha_{e.n} = {e.alpha_hat:.6g} +- {e.std_err:.2g} ({e.mode}, {e.n_envs} env)")
    if args.decompose is not None:
        from .estimators import decomposition_check

        levels = _floats(args.alphas) or [1.0] * len(h.levels)
        if len(levels) != len(h.levels):
            raise UsageError(f"--alphas needs one value per level ({len(h.levels)})")
        alphas = dict(enumerate(levels))
        env = envs[0] if isinstance(envs, list) else envs
        T = args.decompose
        rep = decomposition_check(env, h, args.n, T, alphas, SimConfig(args.dt or default_dt(T), T, args.paths,
                                                                       args.seed))
        ctx.write_json("decomposition.json", rep)
        print(f"decomposition at t={T:g}: gap {rep['gap']:.4g} (se {rep['gap_se']:.2g}), shape {rep['shape']:.4g}")
    return EXIT_OK


def cmd_entropy(args, ctx):
    from .estimators import entropy_growth, entropy_increment_probe
    from .rng import seed_sequence
    from .sde_mc import SimConfig

    env = _environment(args)
    times = _floats(args.times)
    cfg = SimConfig(args.dt, max(times), args.paths, args.seed)
    cur = entropy_growth(env, times, cfg)
    ctx.write_csv("entropy.csv", ["t", "H_hat", "H_mm", "N"],
                  [[p["t"], p["H_hat"], p["H_hat_mm"], p["n_samples"]] for p in cur.points])
    ctx.write_json("entropy_fit.json", {"slope": cur.slope, "intercept": cur.intercept, "C_fit": cur.C_fit,
                                        "log_bounded": cur.log_bounded, "corrected": cur.corrected})
    print(f"slope vs ln t = {cur.slope:.4f}; log-bounded: {cur.log_bounded} (C_fit {cur.C_fit:.4g})")
    incs = _ints(args.increments)
    if incs:
        if getattr(args, "env_descriptor", None):
            envs = [env]
        else:
            envs = [_environment(args, s) for s in seed_sequence(args.seed, args.env_count)]
        rows = entropy_increment_probe(envs, incs, SimConfig(args.dt, max(incs), args.paths, args.seed))
        ctx.write_csv("increments.csv", ["n", "value", "se", "n_envs", "label"],
                      [[r["n"], r["value"], r["se"], r["n_envs"], r["label"]] for r in rows])
        for r in rows:
            print(f"n={r['n']}: n(H_n - H_n-1) = {r['value']:.4f} ({r['label']})")
    return EXIT_OK


def cmd_control(args, ctx):
    import numpy as np

    from .holder import standard_bank, verify_control_holder, verify_control_localization, verify_solver_localization
    from .sde_mc import SimConfig
    from .semigroup import Grid, QuenchedSolver

    h = _hierarchy(args)
    seeds = _seed_range(args.seeds) or [None]
    which = {"localization": "loc"}.get(args.which, args.which)
    reports = []
    for seed in seeds:
        env = _environment(args, seed)
        x = tuple(_floats(args.x)) or (0.0,) * env.d
        if which == "holder":
            L = float(h.L(args.n))
            grid = Grid.around(np.asarray(x), args.half_width or 7 * L, args.h or L / 10)
            rep = verify_control_holder(env, h, args.alpha, args.n, x, standard_bank(grid, L, args.seed),
                                        QuenchedSolver(env, grid))
        elif which == "loc":
            t = float(h.L(args.n)) ** 2
            rep = verify_control_localization(env, h, args.n, x, SimConfig(args.dt, t, args.paths, args.seed))
        else:
            rep = verify_solver_localization(env, h, args.n, x, h=args.h)
        reports.append(rep)
        print(f"{rep.control} control seed={rep.seed} n={rep.n}: measured {rep.measured:.4g} vs bound "
              f"{rep.bound:.4g} -> {'satisfied' if rep.satisfied else 'violated'}", flush=True)
    ctx.write_text("control.jsonl", "".join(r.to_json() + "\n" for r in reports))
    freq = sum(r.satisfied for r in reports) / len(reports)
    ctx.write_json("control_summary.json", {"control": reports[0].control, "n": args.n, "seeds": len(reports),
                                            "satisfied_fraction": freq})
    if len(reports) > 1:
        print(f"satisfied for {freq:.1%} of {len(reports)} environment seeds")
    return EXIT_OK


def cmd_liouville(args, ctx):
    import numpy as np

    from .liouville import SublinearProbe, oscillation_decay, product_bound_experiment
    from .sde_mc import SimConfig
    from .semigroup import Grid

    env = _environment(args)
    probe = SublinearProbe.parse(args.probe)
    ngrid = _ints(args.ngrid)
    cfg = SimConfig(args.dt, float(max(ngrid)), args.paths, args.seed)
    rep = product_bound_experiment(env, probe, ngrid, cfg, n_roots=args.roots)
    osc_times = _floats(args.osc_times)
    if osc_times:
        grid = Grid.around(np.zeros(env.d), args.osc_half_width, args.osc_h)
        rep.oscillation = oscillation_decay(env, probe, osc_times, grid)
        ctx.write_csv("oscillation.csv", ["t", "osc", "leakage"],
                      [[r["t"], r["osc"], r["leakage"]] for r in rep.oscillation])
    ctx.write_text("liouville.jsonl", rep.to_json() + "\n")
    keys = ["n", "entropy_term", "entropy_se", "diffusivity_factor", "diffusivity_se", "product", "product_se"]
    ctx.write_csv("product.csv", keys, [[r[k] for k in keys] for r in rep.rows])
    print(f"probe {rep.probe}: lhs {rep.lhs:.4g}, product bound {rep.product_bound:.4g}")
    return EXIT_OK


def _field(kind, grid, L):
    import numpy as np

    from .semigroup import GridField

    r = grid.radius()
    if kind == "bump":
        return GridField(grid, np.maximum(0.0, 1.0 - (r / L) ** 2) ** 3)
    if kind == "tent":
        return GridField(grid, np.maximum(0.0, 1.0 - r / L))
    if kind == "const":
        return GridField.constant(grid, 1.0)
    raise UsageError(f"unknown field {kind!r}")


def cmd_ancient(args, ctx):
    import numpy as np

    from .liouville import ancient_comparison
    from .semigroup import Grid

    h = _hierarchy(args)
    env = _environment(args)
    grid = Grid.around(np.zeros(env.d), args.half_width, args.h)
    f = _field(args.f, grid, float(h.L(args.n)))
    res = ancient_comparison(env, h, args.n, f, args.alpha)
    ctx.write_json("ancient.json", res)
    print(f"sup error {res['sup_error']:.4g}; bound shape {res['paper_bound_shape']:.4g}; "
          f"fitted C {res['fitted_C']:.4g}; leakage {res['leakage']:.2g}")
    return EXIT_OK


def cmd_semigroup(args, ctx):
    import numpy as np

    from .errors import HomolabError
    from .semigroup import Grid, GridField, gaussian_op, solve_quenched

    if args.input:
        if _sha256_file(args.input) != args.input_sha256:
            raise HomolabError("input-changed", f"input field {args.input} changed since the run was configured")
        f = GridField.load(args.input)
    else:
        d = args.d if args.env_descriptor is None else args.env_descriptor["d"]
        grid = Grid.around(np.zeros(d), args.half_width, args.h)
        f = _field(args.f, grid, args.scale)
    if args.op == "gaussian":
        u = gaussian_op(args.alpha, args.t, f)
    else:
        u = solve_quenched(_environment(args), f, args.t)
    u.save(ctx.path("u.gf"))
    ctx.adopt("u.gf")
    ctx.adopt("u.gf.json")
    centre = u.at(np.asarray(u.grid.center))
    res = {"op": args.op, "t": args.t, "sup": u.sup(), "center": centre, "leakage": u.leakage}
    ctx.write_json("semigroup.json", res)
    print(f"{args.op}: value at the centre {centre:.6g}; sup {res['sup']:.6g}; leakage {res['leakage']:.2g}")
    return EXIT_OK


def cmd_suite(args, ctx):
    from .suite import CRITERIA, QUICK, run_criterion

    table = QUICK if args.quick else CRITERIA
    ids = _ints(args.only) or sorted(table)
    rows, failed = [], 0
    for cid in ids:
        res = run_criterion(cid, args.seed, table)
        ctx.write_json(f"criterion_{cid:02d}.json", {"criterion": cid, "name": res.name, "passed": res.passed,
                                                     "record": res.record})
        rows.append([cid, res.name, res.passed])
        failed += not res.passed
        print(res.line(), flush=True)
    ctx.write_csv("suite.csv", ["criterion", "name", "passed"], rows)
    print(f"{len(rows) - failed}/{len(rows)} criteria passed")
    return EXIT_FAILED if failed else EXIT_OK


COMMANDS = {
    "hierarchy": cmd_hierarchy,
    "env": cmd_env,
    "simulate": cmd_simulate,
    "alpha": cmd_alpha,
    "entropy": cmd_entropy,
    "control": cmd_control,
    "liouville": cmd_liouville,
    "ancient": cmd_ancient,
    "semigroup": cmd_semigroup,
    "suite": cmd_suite,
}


def build_parser():
    common = _Parser(add_help=False)
    _common(common)
    parser = _Parser(prog="homolab", description="Numerical laboratory for diffusions in random environments.")
    parser.add_argument("--version", action="version", version=f"homolab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["hierarchy"] = sub.add_parser("hierarchy", parents=[common], help="scale table and constraints")
    _hier_opts(p)

    p = subs["env"] = sub.add_parser("env", parents=[common], help="sample an environment")
    p.add_argument("action", choices=["sample"])
    p.add_argument("--d", type=int, default=3)
    _env_opts(p)
    p.add_argument("--probe", default="", help="points 'x0,x1,...' separated by ';' at which to print A and b")

    p = subs["simulate"] = sub.add_parser("simulate", parents=[common], help="path ensemble")
    p.add_argument("--d", type=int, default=3)
    _env_opts(p)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--record-times", default="")
    p.add_argument("--stop-radius", type=float, default=None)
    p.add_argument("--path-seed", type=int, default=None)
    p.add_argument("--x0", default="")
    p.add_argument("--tail-levels", default="")

    p = subs["alpha"] = sub.add_parser("alpha", parents=[common], help="diffusivity at one level")
    _hier_opts(p)
    _env_opts(p)
    p.add_argument("--n", type=int, default=0)
    p.add_argument("--paths", type=int, default=10000)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--env-count", type=int, default=1, help="annealed mode over this many environment seeds")
    p.add_argument("--decompose", type=int, default=None, help="also run the time-decomposition check at this t")
    p.add_argument("--alphas", default="", help="per-level diffusivities for --decompose (default all 1)")

    p = subs["entropy"] = sub.add_parser("entropy", parents=[common], help="entropy growth and increments")
    p.add_argument("--d", type=int, default=3)
    _env_opts(p)
    p.add_argument("--times", default="1,4,16,64")
    p.add_argument("--paths", type=int, default=100000)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--increments", default="")
    p.add_argument("--env-count", type=int, default=1)

    p = subs["control"] = sub.add_parser("control", parents=[common], help="measure a level control")
    _hier_opts(p)
    _env_opts(p)
    p.add_argument("--which", "--kind", dest="which", choices=["holder", "loc", "localization", "solver-loc"],
                   default="loc")
    p.add_argument("--seeds", default="", help="environment seeds, 'a..b' or a comma list (default: --env-seed)")
    p.add_argument("--n", type=int, default=0)
    p.add_argument("--x", default="")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--half-width", type=float, default=None)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--dt", type=float, default=0.25)

    p = subs["liouville"] = sub.add_parser("liouville", parents=[common], help="entropy-diffusivity product")
    p.add_argument("--d", type=int, default=3)
    _env_opts(p)
    p.add_argument("--probe", default="power:0.5")
    p.add_argument("--ngrid", default="2,4,8,16")
    p.add_argument("--paths", type=int, default=100000)
    p.add_argument("--roots", type=int, default=8)
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--osc-times", default="")
    p.add_argument("--osc-h", type=float, default=0.25)
    p.add_argument("--osc-half-width", type=float, default=8.0)

    p = subs["ancient"] = sub.add_parser("ancient", parents=[common], help="ancient-solution operator comparison")
    _hier_opts(p)
    _env_opts(p)
    p.add_argument("--n", type=int, default=0)
    p.add_argument("--f", default="bump", choices=["bump", "tent", "const"])
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--h", type=float, default=10.0)
    p.add_argument("--half-width", type=float, default=780.0)

    p = subs["semigroup"] = sub.add_parser("semigroup", parents=[common], help="apply the quenched or Gaussian semigroup")
    p.add_argument("--d", type=int, default=3)
    _env_opts(p)
    p.add_argument("--op", choices=["quenched", "gaussian"], default="quenched")
    p.add_argument("--in", dest="input", default=None, help="input field (.gf with its .json sidecar)")
    p.add_argument("--alpha", type=float, default=1.0, help="diffusivity of the Gaussian operator")
    p.add_argument("--f", default="bump", choices=["bump", "tent", "const"])
    p.add_argument("--scale", type=float, default=2.0)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--h", type=float, default=0.25)
    p.add_argument("--half-width", type=float, default=6.0)

    p = subs["suite"] = sub.add_parser("suite", parents=[common], help="acceptance battery")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--quick", action="store_true", help="eta = 0 battery")
    g.add_argument("--full", action="store_true", help="every criterion")
    p.add_argument("--only", default="", help="comma-separated criterion ids")

    p = sub.add_parser("replay", help="re-run a manifest and compare artifacts")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="directory for the re-run (default: <manifest dir>/replay)")
    p.add_argument("--threads", type=int, default=None)
    return parser, subs


def _set_threads(threads):
    if threads is None:
        threads = int(os.environ.get("HOMOLAB_THREADS", "0") or 0)
    if threads < 0:
        raise UsageError("--threads must be >= 0")
    if threads == 0:
        return
    if "numba" in sys.modules:
        import numba

        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    else:
        os.environ["NUMBA_NUM_THREADS"] = str(threads)


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve(args):
    """Configuration recorded in the manifest; an ``--env`` file is inlined as its descriptor
    and an input field is pinned by its sha256."""
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _RUNTIME_KEYS}
    cfg["env_descriptor"] = None
    if cfg.get("env"):
        with open(cfg["env"]) as fh:
            cfg["env_descriptor"] = json.load(fh)
        cfg["env"] = None
    if cfg.get("input"):
        cfg["input"] = os.path.abspath(cfg["input"])
        cfg["input_sha256"] = _sha256_file(cfg["input"])
    return cfg


def execute(command, cfg, out):
    """Run ``command`` with a resolved configuration; returns ``(exit code, manifest)``."""
    from .errors import HomolabError

    ctx = RunContext(out)
    args = argparse.Namespace(**cfg)
    try:
        code = COMMANDS[command](args, ctx)
    except UsageError as exc:
        print(f"homolab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE, None
    except HomolabError as exc:
        if exc.code in VALIDATION_CODES:
            print(f"homolab: invalid configuration [{exc.code}]: {exc}", file=sys.stderr)
            return EXIT_USAGE, None
        print(f"homolab: error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_ERROR, None
    return code, ctx.manifest(command, cfg)


def replay(path, out=None):
    if not os.path.isfile(path):
        print(f"homolab: manifest not found: {path}", file=sys.stderr)
        return EXIT_NOINPUT
    with open(path) as fh:
        doc = json.load(fh)
    problems = []
    if doc.get("tool") != "homolab":
        problems.append(f"tool is {doc.get('tool')!r}, expected 'homolab'")
    if doc.get("version") != __version__:
        problems.append(f"manifest version {doc.get('version')} differs from installed {__version__}")
    if doc.get("command") not in COMMANDS:
        problems.append(f"unknown command {doc.get('command')!r}")
    if problems:
        print("homolab: incompatible manifest: " + "; ".join(problems), file=sys.stderr)
        return EXIT_ERROR
    out = out or os.path.join(os.path.dirname(os.path.abspath(path)), "replay")
    code, new = execute(doc["command"], doc["config"], out)
    if new is None:
        return code
    old = doc.get("artifacts", {})
    differs = sorted(k for k in set(old) | set(new["artifacts"]) if old.get(k) != new["artifacts"].get(k))
    if differs:
        print("replay: artifacts differ: " + ", ".join(differs))
    else:
        print(f"replay: all {len(old)} artifacts identical")
    return EXIT_OK if code in (EXIT_OK, EXIT_FAILED) else code


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, subs = build_parser()
    try:
        args = parser.parse_args(argv)
        _set_threads(args.threads)
        if args.command == "replay":
            return replay(args.manifest, args.out)
        if args.config:
            if not os.path.isfile(args.config):
                print(f"homolab: config not found: {args.config}", file=sys.stderr)
                return EXIT_NOINPUT
            with open(args.config) as fh:
                defaults = json.load(fh)
            known = set(vars(args))
            unknown = sorted(set(defaults) - known)
            if unknown:
                raise UsageError("unknown config keys: " + ", ".join(unknown))
            subs[args.command].set_defaults(**defaults)
            args = parser.parse_args(argv)
        if getattr(args, "env", None) and not os.path.isfile(args.env):
            print(f"homolab: environment file not found: {args.env}", file=sys.stderr)
            return EXIT_NOINPUT
        if getattr(args, "input", None) and not os.path.isfile(args.input):
            print(f"homolab: input field not found: {args.input}", file=sys.stderr)
            return EXIT_NOINPUT
        cfg = _resolve(args)
    except UsageError as exc:
        print(f"homolab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    code, _ = execute(args.command, cfg, args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
