"""Command-line entry point: train, compare, theorem, plot.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from .errors import ConfigError, DimensionError, PoemLabError, RegimeViolation
from .metrics import MetricsReport
from .model import energy, forward, load_checkpoint, save_checkpoint
from .runner import RunConfig, run
from .synthdata import Dataset, TheoryConfig, read_csv, write_csv
from .theory import verify_theorem

log = logging.getLogger("poemlab")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
METRIC_COLUMNS = ("fpr95", "auroc", "aupr", "id_acc")
BOUNDARY_GRID = 240


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"schema_version": SCHEMA_VERSION, **obj}, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        writer.writerow(header)
        writer.writerows(rows)


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return x


# ---------------------------------------------------------------- train

def ratio_note(cfg):
    return (f"mined N={cfg.mined} vs ID train size {cfg.id_train} (ratio {cfg.mined / cfg.id_train:.4g}); "
            "the reference setting mines as many outliers as there are ID training points")


def run_header(cfg):
    return {"command": "train", "version": __version__, "sampler": cfg.sampler, "seed": cfg.seed,
            "config": cfg.to_dict(), "mined_to_id_ratio_note": ratio_note(cfg)}


def train_to_dir(cfg, out):
    """Run one configuration and write its artifacts into `out`. Returns the RunResult."""
    cfg.validate()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "header.json", run_header(cfg))
    t0 = time.perf_counter()
    result = run(cfg, keep_snapshots=True)
    elapsed = time.perf_counter() - t0

    with open(out / "epochs.jsonl", "w", encoding="utf-8") as fh:
        for rec in result.logs:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if result.logs:
        report = MetricsReport(**result.logs[-1]["metrics"])
        _write_json(out / "metrics.json", report.to_dict())
        (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    save_checkpoint(out / "model.ckpt", result.model, extra_arrays=result.queue.to_arrays(),
                    meta={"epochs": cfg.epochs, "seed": cfg.seed, "sampler": cfg.sampler})
    write_csv(out / "data.csv", result.data.train, Dataset(result.data.test_ood))
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for sn in result.snapshots:
        save_checkpoint(snap_dir / f"epoch_{sn.epoch:03d}.ckpt", sn.model,
                        meta={"epoch": sn.epoch, "gamma": sn.gamma})
        write_csv(snap_dir / f"mined_{sn.epoch:03d}.csv", outliers=Dataset(sn.mined_x))
    # wall time lives apart from the logs so that those stay byte-reproducible
    _write_json(out / "timing.json", {"wall_seconds": elapsed})
    return result


def load_run_config(config_path, overrides):
    values = C.load(config_path) if config_path else {}
    return C.build(RunConfig, C.merge(values, overrides)).validate()


def cmd_train(args):
    cfg = load_run_config(args.config, {"seed": args.seed, "sampler": args.sampler, "epochs": args.epochs})
    out = Path(args.out or "runs/train")
    train_to_dir(cfg, out)
    log.info("wrote %s", out)
    return EXIT_OK


# -------------------------------------------------------------- compare

@dataclass
class ExperimentManifest:
    samplers: tuple = ("thompson", "greedy_mean", "random")
    seeds: tuple = (0, 1, 2, 3, 4)
    out: str = "runs/compare"
    plot_curves: bool = True
    base: RunConfig = field(default_factory=RunConfig)

    MANIFEST_KEYS = ("samplers", "seeds", "out", "plot_curves")

    @classmethod
    def from_values(cls, values):
        own = {k: values[k] for k in cls.MANIFEST_KEYS if k in values}
        if "sampler" in values:
            raise ConfigError("sampler: use 'samplers' (a list) in a compare manifest", field="sampler")
        if "seed" in values and "seeds" not in values:
            own["seeds"] = [values["seed"]]
        rest = {k: v for k, v in values.items() if k not in cls.MANIFEST_KEYS and k != "seed"}
        base = C.build(RunConfig, rest)
        m = cls(base=base, **{k: C._coerce(k, v, getattr(cls(), k)) for k, v in own.items()})
        m.validate()
        return m

    def validate(self):
        if not self.samplers:
            raise ConfigError("samplers: need at least one", field="samplers")
        if not self.seeds:
            raise ConfigError("seeds: need at least one", field="seeds")
        if len(set(self.samplers)) != len(self.samplers) or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("samplers/seeds: duplicates are not allowed", field="samplers")
        for s in self.seeds:
            if isinstance(s, bool) or not isinstance(s, int):
                raise ConfigError(f"seeds: {s!r} is not an integer", field="seeds")
        for cfg in self.cells():
            cfg.validate()

    def cells(self):
        return [RunConfig(**{**self.base.to_dict(), "sampler": s, "seed": seed})
                for s in self.samplers for seed in self.seeds]


def _run_cell(cfg, out_dir):
    try:
        result = train_to_dir(cfg, out_dir)
        return {"status": "ok", "metrics": result.logs[-1]["metrics"] if result.logs else None,
                "curve": [rec["metrics"]["fpr95"] for rec in result.logs]}
    except (PoemLabError, FloatingPointError, ValueError) as exc:
        return {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def summary_rows(samplers, seeds, cells):
    """Data rows then one aggregate (mean and sample sd) row per sampler."""
    rows = []
    for s in samplers:
        for seed in seeds:
            c = cells[(s, seed)]
            m = c.get("metrics") or {}
            rows.append({"kind": "run", "sampler": s, "seed": seed, "status": c["status"], "n": int(c["status"] == "ok"),
                         **{k: m.get(k) for k in METRIC_COLUMNS},
                         **{f"{k}_sd": None for k in METRIC_COLUMNS}, "error": c.get("error", "")})
    for s in samplers:
        ok = [cells[(s, seed)]["metrics"] for seed in seeds
              if cells[(s, seed)]["status"] == "ok" and cells[(s, seed)].get("metrics")]
        row = {"kind": "aggregate", "sampler": s, "seed": None, "n": len(ok),
               "status": "ok" if len(ok) == len(seeds) else ("partial" if ok else "failed"), "error": ""}
        for k in METRIC_COLUMNS:
            vals = np.array([m[k] for m in ok], dtype=float)
            row[k] = float(np.mean(vals)) if vals.size else None
            row[f"{k}_sd"] = float(np.std(vals, ddof=1)) if vals.size > 1 else None
        rows.append(row)
    return rows


SUMMARY_COLUMNS = (("kind", "sampler", "seed", "status", "n") + METRIC_COLUMNS
                   + tuple(f"{k}_sd" for k in METRIC_COLUMNS) + ("error",))


def write_curves(out, samplers, seeds, cells):
    paths = []
    for s in samplers:
        curves = {seed: cells[(s, seed)].get("curve") for seed in seeds}
        good = [c for c in curves.values() if c]
        n_epochs = max((len(c) for c in good), default=0)
        rows = []
        for e in range(n_epochs):
            vals = [c[e] for c in good if e < len(c) and c[e] is not None]
            rows.append([e + 1, _cell(float(np.mean(vals))) if vals else ""]
                        + [_cell(curves[seed][e]) if curves[seed] and e < len(curves[seed]) else ""
                           for seed in seeds])
        path = Path(out) / f"curves_{s}.csv"
        _write_rows(path, ["epoch", "fpr95_mean"] + [f"seed_{seed}" for seed in seeds], rows)
        paths.append(path)
    return paths


def run_compare(manifest, jobs=1):
    out = Path(manifest.out)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    cells, todo = {}, []
    for cfg in manifest.cells():
        todo.append(((cfg.sampler, cfg.seed), cfg, out / "runs" / f"{cfg.sampler}_seed{cfg.seed}"))
    if jobs <= 1:
        for key, cfg, d in todo:
            cells[key] = _run_cell(cfg, d)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {key: pool.submit(_run_cell, cfg, d) for key, cfg, d in todo}
            for key, fut in futures.items():
                try:
                    cells[key] = fut.result()
                except Exception as exc:  # worker crash
                    cells[key] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    rows = summary_rows(manifest.samplers, manifest.seeds, cells)
    _write_rows(out / "summary.csv", SUMMARY_COLUMNS, [[_cell(r[c]) for c in SUMMARY_COLUMNS] for r in rows])
    write_curves(out, manifest.samplers, manifest.seeds, cells)
    _write_json(out / "manifest.json", {"samplers": list(manifest.samplers), "seeds": list(manifest.seeds),
                                        "base": manifest.base.to_dict()})
    if manifest.plot_curves:
        plot_curves(out)
    return rows


def read_summary(path):
    """Parse summary.csv back into row dicts with numeric fields restored."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec = dict(row)
            rec["seed"] = int(rec["seed"]) if rec["seed"] else None
            rec["n"] = int(rec["n"])
            for k in METRIC_COLUMNS + tuple(f"{k}_sd" for k in METRIC_COLUMNS):
                rec[k] = float(rec[k]) if rec[k] else None
            out.append(rec)
    return out


def cmd_compare(args):
    values = C.load(args.config) if args.config else {}
    overrides = {"epochs": args.epochs}
    if args.sampler:
        overrides["samplers"] = [args.sampler]
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.out:
        overrides["out"] = args.out
    values = C.merge(values, overrides)
    if "seed" in values and "seeds" in values and args.seed is None:
        values.pop("seed")
    manifest = ExperimentManifest.from_values(values)
    rows = run_compare(manifest, jobs=args.jobs)
    failed = [r for r in rows if r["kind"] == "run" and r["status"] != "ok"]
    for r in failed:
        log.error("%s seed %s failed: %s", r["sampler"], r["seed"], r["error"])
    return EXIT_OK if not failed else EXIT_RUNTIME


# -------------------------------------------------------------- theorem

@dataclass
class TheoremSettings:
    d: int = 20
    r0: float = 10.0
    sigma: float = 1.0
    n: int = 200
    n_prime: int = 200
    epsilon: float = 0.5
    trials: int = 1000
    seed: int = 0
    per_trial: bool = False
    rate_check_trials: int = 3
    test_draws: int = 100_000

    def validate(self):
        for name in ("d", "n", "n_prime"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1", field=name)
        if self.trials < 0:
            raise ConfigError("trials: must be >= 0", field="trials")
        if not self.sigma > 0:
            raise ConfigError("sigma: must be > 0", field="sigma")
        if not self.r0 > 0:
            raise ConfigError("r0: must be > 0", field="r0")
        return self

    def theory_config(self):
        return TheoryConfig.from_snr(self.d, self.r0, sigma=self.sigma, n=self.n, n_prime=self.n_prime,
                                     epsilon=self.epsilon)


def run_theorem(settings, out):
    settings.validate()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(settings.seed)
    report = verify_theorem(settings.theory_config(), settings.trials, rng,
                            rate_check_trials=settings.rate_check_trials, test_draws=settings.test_draws)
    text = json.loads(report.to_json(per_trial=settings.per_trial))
    text["settings"] = asdict(settings)
    _write_json(out / "theorem.json", text)
    _write_rows(out / "theorem_trials.csv", ["trial", "lhs", "bound"],
                [[t + 1, repr(v), repr(report.bound)] for t, v in enumerate(report.lhs_values)])
    return report


def cmd_theorem(args):
    values = C.load(args.config) if args.config else {}
    settings = C.build(TheoremSettings, C.merge(values, {"seed": args.seed}))
    try:
        report = run_theorem(settings, Path(args.out or "runs/theorem"))
    except RegimeViolation as exc:
        raise ConfigError(f"epsilon/r0: {exc}") from exc
    s = report.summary()
    log.info("bound %.4f violation rate %.4f over %d trials", report.bound, s["violation_rate"], s["trials"])
    return EXIT_OK


# ----------------------------------------------------------------- plot

def _matplotlib():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_boundary(run_dir, out=None):
    """One SVG per snapshot: ID points, mined outliers, and the region -E(x) >= gamma."""
    run_dir = Path(run_dir)
    out = Path(out or run_dir / "plots")
    ckpts = sorted((run_dir / "snapshots").glob("epoch_*.ckpt"))
    if not ckpts:
        raise FileNotFoundError(f"no snapshots under {run_dir / 'snapshots'}")
    id_set, ood = read_csv(run_dir / "data.csv")
    if id_set.x.shape[1] != 2:
        raise DimensionError(f"boundary plots need 2-D inputs, run has d={id_set.x.shape[1]}")
    plt = _matplotlib()
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for ck in ckpts:
        model, _, header = load_checkpoint(ck)
        epoch, gamma = header["meta"]["epoch"], header["meta"]["gamma"]
        _, mined = read_csv(run_dir / "snapshots" / f"mined_{epoch:03d}.csv")
        pts = np.concatenate([id_set.x, ood.x, mined.x])
        lo, hi = pts.min(axis=0) - 0.5, pts.max(axis=0) + 0.5
        gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], BOUNDARY_GRID), np.linspace(lo[1], hi[1], BOUNDARY_GRID))
        score = -energy(forward(model, np.column_stack([gx.ravel(), gy.ravel()]))[1]).reshape(gx.shape)
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.imshow((score >= gamma).astype(float), origin="lower", extent=(lo[0], hi[0], lo[1], hi[1]),
                  cmap="Blues", alpha=0.35, vmin=0, vmax=1.5, interpolation="nearest", aspect="auto")
        ax.scatter(id_set.x[:, 0], id_set.x[:, 1], s=3, c="tab:blue", label="ID")
        ax.scatter(mined.x[:, 0], mined.x[:, 1], s=5, c="tab:orange", label="mined outliers")
        ax.set_title(f"epoch {epoch}")
        ax.legend(loc="upper right", fontsize=7)
        path = out / f"boundary_epoch_{epoch:03d}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        paths.append(path)
    return paths


def plot_curves(compare_dir, out=None):
    """FPR95 against epoch, one line per sampler (SVG group id ``curve-<sampler>``)."""
    compare_dir = Path(compare_dir)
    files = sorted(compare_dir.glob("curves_*.csv"))
    if not files:
        raise FileNotFoundError(f"no curves_*.csv under {compare_dir}")
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in files:
        sampler = path.stem[len("curves_"):]
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.DictReader(fh) if r["fpr95_mean"]]
        line, = ax.plot([int(r["epoch"]) for r in rows], [float(r["fpr95_mean"]) for r in rows], label=sampler)
        line.set_gid(f"curve-{sampler}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("FPR95")
    ax.legend()
    target = Path(out or compare_dir) / "curves.svg"
    target.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(target, format="svg")
    plt.close(fig)
    return [target]


def cmd_plot(args):
    if args.kind == "boundary":
        paths = plot_boundary(args.run_dir, args.out)
    else:
        paths = plot_curves(args.run_dir, args.out)
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


# ----------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="poemlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one configuration")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--sampler")
    t.add_argument("--epochs", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="sweep samplers x seeds and tabulate")
    c.add_argument("--config")
    c.add_argument("--seed", type=int)
    c.add_argument("--sampler")
    c.add_argument("--epochs", type=int)
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    th = sub.add_parser("theorem", help="Monte-Carlo check of the margin lower bound")
    th.add_argument("--config")
    th.add_argument("--seed", type=int)
    th.add_argument("--out")
    th.set_defaults(func=cmd_theorem)

    pl = sub.add_parser("plot", help="emit SVG plots from run artifacts")
    pl.add_argument("run_dir")
    pl.add_argument("--kind", choices=("boundary", "curves"), default="boundary")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PoemLabError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
