"""Command-line entry point.

Exit codes: 0 ok, 2 configuration error, 3 bad input data, 4 training
divergence, 5 evaluation failure (unreadable checkpoint or broken episode).
"""
import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from mgplan.config import RunConfig, dump_config, load_config
from mgplan.errors import ConfigError, DataError, LoadError, MgplanError
from mgplan.scene.families import FAMILIES, generate_scenarios
from mgplan.scene.world import Scenario

log = logging.getLogger("mgplan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING, EXIT_EVAL = 0, 2, 3, 4, 5
MANIFEST = "manifest.json"


# --- helpers ----------------------------------------------------------------------

def run_config(args, **fixed):
    overrides = list(getattr(args, "set", None) or [])
    overrides += [f"{k}={json.dumps(v)}" for k, v in fixed.items() if v is not None]
    return load_config(getattr(args, "config", None), overrides)


def write_manifest(out_dir, scenarios, cfg_hash, seed):
    entries = [{"name": s.name, "family": s.family, "seed": s.seed, "file": f"{s.name}.json"} for s in scenarios]
    manifest = {"config_hash": cfg_hash, "seed": seed, "count": len(scenarios), "scenarios": entries}
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_scenarios(path):
    """Scenarios listed in a directory's manifest (else every ``*.json`` in name order), or one file."""
    path = Path(path)
    if path.is_file():
        return [Scenario.load(path)]
    if not path.is_dir():
        raise DataError(f"no scenarios at {path}")
    manifest = path / MANIFEST
    if manifest.exists():
        try:
            files = [path / e["file"] for e in json.loads(manifest.read_text())["scenarios"]]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise DataError(f"{manifest}: malformed manifest ({e})") from None
    else:
        files = sorted(p for p in path.glob("*.json") if p.name != MANIFEST)
    if not files:
        raise DataError(f"{path} holds no scenario files")
    return [Scenario.load(f) for f in files]


def checkpoint_model(path):
    from mgplan.training.loop import load_model

    if not Path(path).exists():
        raise LoadError(f"checkpoint {path} does not exist")
    return load_model(path)


def write_rows(path, rows, fields):
    with open(path, "w", newline="") as fp:
        w = csv.DictWriter(fp, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


# --- commands ---------------------------------------------------------------------

def cmd_gen_scenarios(args):
    cfg = run_config(args, seed=args.seed, n_scenarios=args.count)
    out = Path(args.out or cfg.paths.scenarios)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = generate_scenarios(cfg.n_scenarios, cfg.seed)
    for s in scenarios:
        s.save(out / f"{s.name}.json")
    write_manifest(out, scenarios, cfg.hash(), cfg.seed)
    families = sorted({s.family for s in scenarios}, key=FAMILIES.index)
    print(f"wrote {len(scenarios)} scenarios to {out} ({', '.join(families)}) config {cfg.hash()}")
    return EXIT_OK


def cmd_train(args):
    from mgplan.training.loop import Trainer

    cfg = run_config(args, seed=args.seed)
    scenarios = load_scenarios(args.scenarios or cfg.paths.scenarios)
    out = Path(args.out or cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    metrics = out / "metrics.csv"
    if metrics.exists():
        metrics.unlink()
    dump_config(cfg, out / "config.yaml")
    trainer = Trainer(cfg.model, cfg.train, scenarios, cfg.seed, metrics, log_extra={"config_hash": h})
    trainer.fit()
    extra = {"run": cfg.to_dict(), "config_hash": h, "scenarios": [s.name for s in scenarios]}
    trainer.save(out / "model.npz", extra)
    final = trainer.history[-1]["open_loop_l2"]
    print(f"final open-loop L2 {final!r} m; checkpoint {out / 'model.npz'} config {h}")
    return EXIT_OK


def cmd_eval_open(args):
    from mgplan.metrics import open_loop_l2, temporal_2hz
    from mgplan.training.data import build_samples
    from mgplan.training.loop import evaluate_open_loop, memory_for, store, temporal_2hz_gt

    model, config, _ = checkpoint_model(args.checkpoint)
    h = config.get("config_hash", "")
    max_frames = args.max_frames if args.max_frames is not None else config.get("train", {}).get("max_frames")
    scenarios = load_scenarios(args.scenarios)
    groups = build_samples(scenarios, model.cfg.layout, max_frames)
    avg = evaluate_open_loop(model, groups)
    rows = []
    for group in groups:
        memory = memory_for(model.cfg)
        for s in group:
            f = s.frame
            res = model(s.grid, f.target_point, f.command, f.ego_status[0], memory.read(f.pose, model.cfg.dim))
            store(memory, res, f.pose)
            i = int(np.argmax(res.plan.modality_scores.data))
            gt = temporal_2hz_gt(f)
            e = open_loop_l2(temporal_2hz(res.plan, i), gt.waypoints, gt.padded)
            rows.append({"scenario": s.scenario, "t": s.t, "modality": i, "l2": "" if e is None else repr(e),
                         "config_hash": h})
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_rows(out / "open_loop.csv", rows, ["scenario", "t", "modality", "l2", "config_hash"])
        (out / "open_loop.json").write_text(json.dumps(
            {"avg_l2": avg, "samples": len(rows), "config_hash": h}, indent=2) + "\n")
    print(f"avg open-loop L2 {avg!r} m over {len(rows)} frames config {h}")
    return EXIT_OK


def _policy(name, model, cfg):
    from mgplan.simulator import ModelPolicy, OraclePolicy, ZeroPolicy

    if name == "model":
        return ModelPolicy(model, cfg.control, cfg.sim.n_slots)
    return {"oracle": OraclePolicy, "zero": ZeroPolicy}[name]()


EPISODE_FIELDS = ("scenario", "family", "status", "completion", "collisions", "steps", "time", "config_hash")


def cmd_eval_closed(args):
    from mgplan.simulator import run_episode, write_summary, write_trace

    if args.policy == "model":
        if not args.checkpoint:
            raise ConfigError("eval-closed with the model policy needs --checkpoint")
        model, config, _ = checkpoint_model(args.checkpoint)
        run = config.get("run")
        cfg = RunConfig.from_dict(run) if run else RunConfig()
        h = config.get("config_hash", cfg.hash())
    else:
        model, cfg = None, run_config(args)
        h = cfg.hash()
    if args.duration is not None:
        cfg.sim.duration = args.duration
    scenarios = load_scenarios(args.scenarios)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for scn in scenarios:
        try:
            r = run_episode(scn, _policy(args.policy, model, cfg), cfg.sim)
        except MgplanError as e:
            raise LoadError(f"episode {scn.name} failed: {e}") from e
        results.append(r)
        if args.traces:
            write_trace(out / f"trace_{scn.name}.csv", r)
        log.info("%s: %s (completion %.2f)", scn.name, r.status, r.completion)
    write_rows(out / "episodes.csv", [{**r.summary(), "config_hash": h} for r in results], EPISODE_FIELDS)
    report = write_summary(out / "summary.json", results, {"config_hash": h, "policy": args.policy})
    s = report["summary"]
    print(f"{len(results)} episodes: success {s['success_rate']:.1f}% timeout {s['timeout_rate']:.1f}% "
          f"driving score {s['driving_score']:.1f} config {h}")
    return EXIT_OK


WAYPOINT_FIELDS = ("granularity_id", "index", "x", "y", "padded")


def _default_horizon(spec_id, traj):
    from mgplan.trajectory import GranularitySpec, fit_path

    probe = GranularitySpec.from_id(spec_id, 1)
    if probe.kind == "spatial":
        return max(1, int(np.floor(fit_path(traj).length / probe.interval_m + 1e-9)))
    duration = traj.timestamps[-1] - traj.timestamps[0]
    return max(1, int(np.floor(duration * probe.frequency_hz + 1e-9)))


def resample_text(text, spec_ids, horizon=None):
    """Waypoint CSV for each spec, from a ``t,x,y`` trajectory or an earlier waypoint CSV."""
    from mgplan.trajectory import (GranularitySpec, Trajectory, fit_path, read_trajectory_csv,
                                   read_waypoint_csv, resample_spatial, resample_temporal)

    first = text.split("\n", 1)[0]
    sets = []
    if first.startswith("granularity_id"):
        parsed = read_waypoint_csv(text)
        for gid in spec_ids:
            if gid not in parsed:
                raise DataError(f"granularity {gid} not present in waypoint file")
            sets.append(parsed[gid])
    else:
        traj = read_trajectory_csv(text)
        # waypoints are measured from the start of the trajectory, so time starts at 0
        traj = Trajectory(traj.points, traj.timestamps - traj.timestamps[0])
        for gid in spec_ids:
            n = horizon or _default_horizon(gid, traj)
            spec = GranularitySpec.from_id(gid, n)
            if spec.kind == "spatial":
                sets.append(resample_spatial(fit_path(traj), spec.interval_m, n, spec))
            else:
                sets.append(resample_temporal(traj, spec.frequency_hz, n, spec))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(WAYPOINT_FIELDS)
    for ws in sets:
        for i, (p, pad) in enumerate(zip(ws.waypoints, ws.padded)):
            w.writerow([ws.spec.id, i, repr(float(p[0])), repr(float(p[1])), int(pad)])
    return buf.getvalue()


def cmd_resample(args):
    try:
        text = Path(args.input).read_text() if args.input != "-" else sys.stdin.read()
    except OSError as e:
        raise DataError(f"cannot read {args.input}: {e}") from None
    out = resample_text(text, args.spec, args.horizon)
    if args.out:
        Path(args.out).write_text(out)
    else:
        sys.stdout.write(out)
    return EXIT_OK


def cmd_plot(args):
    from mgplan.plotting import plot_frame
    from mgplan.scene.render import render_frame
    from mgplan.scene.world import make_frame

    model, config, _ = checkpoint_model(args.checkpoint)
    scn = load_scenarios(args.scenario)[0]
    frame = make_frame(scn, args.t)
    res = model(render_frame(frame, scn.cameras), frame.target_point, frame.command, frame.ego_status[0])
    plot_frame(frame, res.plan, args.out, title=f"{scn.name} t={args.t:.1f}s config {config.get('config_hash', '')}")
    print(f"wrote {args.out}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="mgplan", description="Multi-granularity planner: data, training, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")

    g = sub.add_parser("gen-scenarios", help="generate synthetic scenarios and a manifest")
    with_config(g)
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(fn=cmd_gen_scenarios)

    t = sub.add_parser("train", help="train a planner and write a checkpoint and metrics log")
    with_config(t)
    t.add_argument("--scenarios")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval-open", help="open-loop L2 of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenarios", required=True)
    e.add_argument("--max-frames", type=int)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval_open)

    c = sub.add_parser("eval-closed", help="closed-loop episodes in the simulator")
    with_config(c)
    c.add_argument("--checkpoint")
    c.add_argument("--scenarios", required=True)
    c.add_argument("--policy", choices=("model", "oracle", "zero"), default="model")
    c.add_argument("--duration", type=float)
    c.add_argument("--traces", action="store_true", help="also write one trace CSV per episode")
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_eval_closed)

    r = sub.add_parser("resample", help="resample a trajectory into waypoint sets")
    r.add_argument("input", help="t,x,y trajectory CSV, waypoint CSV, or - for stdin")
    r.add_argument("--spec", action="append", required=True, help="granularity id, e.g. spatial@2m or temporal@5Hz")
    r.add_argument("--horizon", type=int)
    r.add_argument("--out")
    r.set_defaults(fn=cmd_resample)

    pl = sub.add_parser("plot", help="SVG bird's-eye view of one planned frame")
    pl.add_argument("--checkpoint", required=True)
    pl.add_argument("--scenario", required=True)
    pl.add_argument("--t", type=float, default=0.0)
    pl.add_argument("--out", required=True)
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except MgplanError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
