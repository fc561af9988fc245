"""Command-line entry point: ``leakprop <command> [flags]``.

Every command is deterministic given its flags and seed. Failures exit
nonzero with one line on stderr of the form ``error: <Kind>: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from leakprop import chain, envsim, evaluation
from leakprop import embeddings as emb
from leakprop.experiment import VALUE_SIZES, ExperimentConfig, ValueFunction, dataset_hash, run_experiment
from leakprop.learners import EMBEDDINGS


@dataclass(frozen=True)
class RunConfig:
    """Default experiment settings, matching the reference hyperparameter tables."""
    width: float = envsim.WIDTH
    height: float = envsim.HEIGHT
    gamma: float = envsim.GAMMA
    reward_radius: float = envsim.REWARD_RADIUS
    reward: float = envsim.REWARD
    n_actions: int = envsim.N_ACTIONS
    step_size: float = envsim.STEP_SIZE
    max_len: int = envsim.MAX_LEN
    n_episodes: int = envsim.N_EPISODES
    embed_layers: tuple = emb.EMBED_SIZES[1:]
    value_layers: tuple = VALUE_SIZES[1:]
    activation: str = "tanh"
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    embed_steps: int = 40000
    value_steps: int = 40000
    minibatch_size: int = 32
    timeprox_bins: int = 5
    truth_rollouts: int = 1000
    cell_size: float = evaluation.CELL_SIZE


DEFAULTS = RunConfig()


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {self.prog}: {message}")


def _defaults_epilog() -> str:
    d = DEFAULTS
    return (
        "defaults: environment {w:g}x{h:g}, gamma {g}, reward +{r:g} in radius {rr:g} zones, "
        "{na} actions of step {st:g}, max length {ml}, {ne} trajectories; "
        "embedding layers {el}, value layers {vl}, {act} hidden units; "
        "{opt} lr {lr:g} beta1 {b1} beta2 {b2} eps {eps:g}; "
        "{es}+{vs} embedding+value steps, minibatch {mb}; "
        "{k} time bins; {tr} ground-truth rollouts per {cs:g}-unit cell"
    ).format(w=d.width, h=d.height, g=d.gamma, r=d.reward, rr=d.reward_radius, na=d.n_actions,
             st=d.step_size, ml=d.max_len, ne=d.n_episodes, el=list(d.embed_layers),
             vl=list(d.value_layers), act=d.activation, opt=d.optimizer, lr=d.lr, b1=d.beta1,
             b2=d.beta2, eps=d.eps, es=d.embed_steps, vs=d.value_steps, mb=d.minibatch_size,
             k=d.timeprox_bins, tr=d.truth_rollouts, cs=d.cell_size)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _write_text(path, text):
    _ensure_parent(path)
    with open(path, "w") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _csv_text(header, rows, meta=None):
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _loss_csv(losses, meta):
    return _csv_text(["step", "loss"], ((i, float(v)) for i, v in enumerate(losses)), meta)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    layout = envsim.builtin_map(args.map)
    ds = envsim.generate_dataset(layout, args.episodes, args.max_len, args.seed, args.gamma)
    _ensure_parent(args.out)
    ds.save(args.out)
    print(f"episodes={ds.n_episodes} transitions={ds.n_transitions()} "
          f"terminal_fraction={ds.terminal_fraction():.4f} hash={dataset_hash(ds)}")


def _experiment_config(args, dataset) -> ExperimentConfig:
    return ExperimentConfig(
        map_id=dataset.map_id, method=args.method, embedding=args.embedding, seed=args.seed,
        n_episodes=dataset.n_episodes, max_len=dataset.max_len, gamma=dataset.gamma,
        value_steps=args.steps, embed_steps=args.embed_steps, minibatch_size=args.minibatch,
        lr=args.lr, alpha=args.alpha, timeprox_bins=args.bins)


def cmd_train(args):
    from leakprop.experiment import train_value_function
    ds = envsim.TrajectoryDataset.load(args.data)
    cfg = _experiment_config(args, ds)
    vf, v_losses, e_losses = train_value_function(cfg, ds)
    vf.meta.update({"dataset_hash": dataset_hash(ds), "config": asdict(cfg)})
    os.makedirs(args.out, exist_ok=True)
    meta = {"map_id": cfg.map_id, "method": cfg.method, "embedding": cfg.embedding,
            "seed": cfg.seed, "dataset_hash": dataset_hash(ds)}
    vf.save(os.path.join(args.out, "model.json"))
    _write_json(os.path.join(args.out, "config.json"), {**asdict(cfg), "dataset_hash": dataset_hash(ds)})
    _write_text(os.path.join(args.out, "value_loss.csv"), _loss_csv(v_losses, {**meta, "stage": "value"}))
    if e_losses is not None:
        _write_text(os.path.join(args.out, "embed_loss.csv"), _loss_csv(e_losses, {**meta, "stage": "embedding"}))
    print(f"model={os.path.join(args.out, 'model.json')} final_loss={float(np.mean(v_losses[-100:])) if len(v_losses) else float('nan'):.6g}")


def _report_csv(report: evaluation.EvalReport, meta):
    return _csv_text(["metric", "value"], report.rows(), meta)


def cmd_eval(args):
    vf = ValueFunction.load(args.model)
    truth = evaluation.load_grid(args.truth)
    if vf.map_id != truth.map_id:
        raise CliError(f"map mismatch: model is for {vf.map_id}, truth grid is for {truth.map_id}")
    ds = None
    if args.data:
        ds = envsim.TrajectoryDataset.load(args.data)
        if ds.map_id != truth.map_id:
            raise CliError(f"map mismatch: dataset is for {ds.map_id}, truth grid is for {truth.map_id}")
    layout = envsim.builtin_map(truth.map_id)
    pred = evaluation.predict_grid(vf, layout, truth.cell_size)
    if not pred.aligned(truth):
        raise CliError("truth grid does not match the map's free cells")
    report = evaluation.evaluate(pred, truth, layout, ds)
    _write_text(args.out, _report_csv(report, {"map_id": truth.map_id, "model": os.path.basename(args.model)}))
    stem = os.path.splitext(args.out)[0]
    evaluation.save_grid(pred, stem + ".pred.csv")
    evaluation.save_grid(report.errors, stem + ".error.csv")
    print(f"msve_uniform={report.msve_uniform:.6g} msve_mu={report.msve_mu:.6g} "
          f"leakage_{report.leakage_region or 'none'}={report.leakage_score:.6g}")


def cmd_ground_truth(args):
    layout = envsim.builtin_map(args.map)
    grid = evaluation.ground_truth(layout, args.gamma, args.cell_size, args.rollouts, args.seed, args.max_len)
    _ensure_parent(args.out)
    evaluation.save_grid(grid, args.out)
    print(f"cells={int(grid.free.sum())} mean_value={float(np.nanmean(grid.values)):.6g} "
          f"max_stderr={float(np.nanmax(grid.stderr)):.6g}")


def cmd_render(args):
    grid = evaluation.load_grid(args.grid)
    prefix = args.out[:-4] if args.out.endswith(".pgm") else args.out
    _ensure_parent(prefix)
    paths = evaluation.render_grid(grid, prefix)
    print(" ".join(paths))


def cmd_chain_analyze(args):
    if not 0.0 < args.p < 0.5:
        raise CliError(f"p={args.p} must lie in (0, 0.5): for p >= 0.5 the walk wanders off to "
                       "infinity and has no stationary distribution")
    model = chain.ChainModel(args.p, args.gamma, args.alpha, args.n)
    rows = chain.analysis_table(model, tol=args.tol)
    prefix = args.out[:-4] if args.out.endswith(".csv") else args.out
    meta = {"p": args.p, "gamma": args.gamma, "alpha": args.alpha, "n": args.n}
    _write_text(prefix + ".csv", _csv_text(["state", "mu", "v_analytic", "v_numeric"], rows, meta))
    report = chain.analysis_report(model, tol=args.tol)
    _write_text(prefix + ".txt", report)
    sys.stdout.write(report)


def _sweep_job(job):
    map_id, method, embedding, max_len, seed, o = job
    layout = envsim.builtin_map(map_id)
    ds = envsim.generate_dataset(layout, o["episodes"], max_len, seed, o["gamma"])
    truth = evaluation.load_grid(o["truth"][map_id])
    cfg = ExperimentConfig(map_id=map_id, method=method, embedding=embedding, seed=seed,
                           n_episodes=o["episodes"], max_len=max_len, gamma=o["gamma"],
                           value_steps=o["steps"], embed_steps=o["embed_steps"], alpha=o["alpha"],
                           truth_rollouts=o["rollouts"], cell_size=truth.cell_size)
    r = run_experiment(cfg, ds, truth)
    return r.report.msve_uniform, r.report.msve_mu, r.report.leakage_score


def cmd_sweep(args):
    os.makedirs(args.out_dir, exist_ok=True)
    truth_paths = {}
    for m in args.maps:
        path = os.path.join(args.out_dir, f"truth_{m}.csv")
        if not os.path.exists(path):
            g = evaluation.ground_truth(envsim.builtin_map(m), args.gamma, args.cell_size,
                                        args.rollouts, args.truth_seed, envsim.MAX_LEN)
            evaluation.save_grid(g, path)
        truth_paths[m] = path
    opts = {"episodes": args.episodes, "gamma": args.gamma, "steps": args.steps,
            "embed_steps": args.embed_steps, "alpha": args.alpha, "rollouts": args.rollouts,
            "truth": truth_paths}
    combos = [(m, me.upper(), e, ml) for m in args.maps for me in args.methods
              for e in args.embeddings for ml in args.max_lens
              if not (e == "oracle" and m != "map1")]
    jobs = [(*c, s, opts) for c in combos for s in args.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    by_combo = {}
    for job, res in zip(jobs, results):
        by_combo.setdefault(job[:4], []).append(res)
    rows = []
    for c in combos:
        a = np.array(by_combo[c])
        q1, med, q3 = np.percentile(a[:, 0], [25, 50, 75])
        rows.append((*c, len(a), float(med), float(q1), float(q3), float(np.median(a[:, 1])),
                     float(np.median(a[:, 2]))))
    header = ["map_id", "method", "embedding", "max_len", "n_seeds", "msve_median", "msve_q1",
              "msve_q3", "msve_mu_median", "leakage_median"]
    per_seed = [(*j[:5], *r) for j, r in zip(jobs, results)]
    _write_text(os.path.join(args.out_dir, "runs.csv"),
                _csv_text(["map_id", "method", "embedding", "max_len", "seed", "msve", "msve_mu", "leakage"], per_seed))
    _write_text(args.out, _csv_text(header, rows, {"steps": args.steps, "embed_steps": args.embed_steps,
                                                   "rollouts": args.rollouts}))
    print(f"runs={len(jobs)} summary={args.out}")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    d = DEFAULTS
    p = _Parser(prog="leakprop", description="Leakage propagation in TD vs Monte-Carlo value estimation.",
                epilog=_defaults_epilog())
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    g = sub.add_parser("gen-data", help="generate a random-policy trajectory dataset", formatter_class=fmt)
    g.add_argument("--map", default="map1", choices=envsim.MAP_IDS)
    g.add_argument("--episodes", type=_positive_int, default=d.n_episodes, help="number of trajectories")
    g.add_argument("--max-len", type=_positive_int, default=d.max_len, help="trajectory max length")
    g.add_argument("--seed", type=_nonneg_int, default=0)
    g.add_argument("--gamma", type=float, default=d.gamma, help="discount factor")
    g.add_argument("--out", required=True, help="dataset JSON path")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a value function (optionally on a learned embedding)",
                       formatter_class=fmt)
    t.add_argument("--method", required=True, choices=("mc", "td"), type=str.lower)
    t.add_argument("--embedding", default="none", choices=EMBEDDINGS)
    t.add_argument("--data", required=True, help="dataset JSON from gen-data")
    t.add_argument("--seed", type=_nonneg_int, default=0)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--alpha", type=float, default=1.0, help="oracle separation in [0, 1]")
    t.add_argument("--steps", type=_nonneg_int, default=d.value_steps, help="value training steps")
    t.add_argument("--embed-steps", type=_nonneg_int, default=d.embed_steps, help="embedding training steps")
    t.add_argument("--minibatch", type=_positive_int, default=d.minibatch_size, help="mini-batch size")
    t.add_argument("--lr", type=float, default=d.lr, help="Adam learning rate")
    t.add_argument("--bins", type=_positive_int, default=d.timeprox_bins, help="time-proximity bins K")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained model against a ground-truth grid", formatter_class=fmt)
    e.add_argument("--model", required=True)
    e.add_argument("--truth", required=True, help="ground-truth grid CSV")
    e.add_argument("--data", default=None, help="dataset for visitation-weighted MSVE")
    e.add_argument("--out", required=True, help="report CSV path")
    e.set_defaults(func=cmd_eval)

    gt = sub.add_parser("ground-truth", help="Monte-Carlo ground-truth values on a grid", formatter_class=fmt)
    gt.add_argument("--map", default="map1", choices=envsim.MAP_IDS)
    gt.add_argument("--rollouts", type=_positive_int, default=d.truth_rollouts, help="rollouts per cell")
    gt.add_argument("--seed", type=_nonneg_int, default=0)
    gt.add_argument("--cell-size", type=float, default=d.cell_size)
    gt.add_argument("--gamma", type=float, default=d.gamma)
    gt.add_argument("--max-len", type=_positive_int, default=d.max_len)
    gt.add_argument("--out", required=True, help="grid CSV path")
    gt.set_defaults(func=cmd_ground_truth)

    r = sub.add_parser("render", help="render a grid CSV as a PGM heatmap", formatter_class=fmt)
    r.add_argument("--grid", required=True)
    r.add_argument("--out", required=True, help="output prefix (.pgm, .range.txt, .csv)")
    r.set_defaults(func=cmd_render)

    c = sub.add_parser("chain-analyze", help="random-walk chain analysis", formatter_class=fmt)
    c.add_argument("--p", type=float, default=0.25, help="up-probability, must lie in (0, 0.5)")
    c.add_argument("--gamma", type=float, default=d.gamma)
    c.add_argument("--alpha", type=float, default=1.0, help="error injected at state 0")
    c.add_argument("--n", type=_positive_int, default=200, help="truncation size")
    c.add_argument("--tol", type=float, default=1e-10)
    c.add_argument("--out", required=True, help="output prefix (.csv and .txt)")
    c.set_defaults(func=cmd_chain_analyze)

    s = sub.add_parser("sweep", help="method x embedding x max-len x seed grid, median/IQR MSVE",
                       formatter_class=fmt)
    s.add_argument("--maps", nargs="+", default=["map1"], choices=envsim.MAP_IDS)
    s.add_argument("--methods", nargs="+", default=["mc", "td"], choices=("mc", "td"), type=str.lower)
    s.add_argument("--embeddings", nargs="+", default=["none"], choices=EMBEDDINGS)
    s.add_argument("--max-lens", nargs="+", type=_positive_int, default=[d.max_len])
    s.add_argument("--seeds", nargs="+", type=_nonneg_int, default=[0, 1, 2, 3, 4])
    s.add_argument("--episodes", type=_positive_int, default=d.n_episodes)
    s.add_argument("--gamma", type=float, default=d.gamma)
    s.add_argument("--steps", type=_nonneg_int, default=d.value_steps)
    s.add_argument("--embed-steps", type=_nonneg_int, default=d.embed_steps)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--rollouts", type=_positive_int, default=d.truth_rollouts)
    s.add_argument("--truth-seed", type=_nonneg_int, default=12345)
    s.add_argument("--cell-size", type=float, default=d.cell_size)
    s.add_argument("--jobs", type=_positive_int, default=1, help="parallel worker processes")
    s.add_argument("--out-dir", default="sweep_out")
    s.add_argument("--out", required=True, help="summary CSV path")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except SystemExit as exc:          # --help
        return int(exc.code or 0)
    except CliError as exc:
        print(f"error: CliError: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, RuntimeError, FloatingPointError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
