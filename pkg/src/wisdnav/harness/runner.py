"""Subcommand implementations shared by the CLI and the tests.

Every function takes a :class:`RunConfig`, writes its artifacts under
``cfg.out`` and returns an in-memory summary.  Nothing here reads the clock
except ``bench``, so train and eval outputs are reproducible byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from pathlib import Path

import numpy as np

from ..exceptions import MalformedLog, NoPath
from ..kinematics import BodyTwist, slip_residual
from ..neural import init_mlp, mlp_forward
from ..sac import TRAINING_LOG_HEADER, SACAgent
from ..sim import NavigationEnv, footprint_radius, resolve_scenario, write_trajectory
from .config import RunConfig
from .metrics import aggregate_report, compute_metrics, read_trajectory
from .planning import densify, plan_route, polyline_length, select_waypoint

log = logging.getLogger(__name__)

WHEELS = ("fl", "fr", "rl", "rr")
CONTROLLER_HEADER = (("t", "vx", "vy", "wz", "mode")
                     + tuple(f"delta_{w}" for w in WHEELS) + tuple(f"v_{w}" for w in WHEELS)
                     + ("slip", "slew_limited"))
METRICS_HEADER = ("episode", "seed", "scenario", "outcome", "pp", "as", "pe", "length",
                  "duration", "planned_length")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[k]) if isinstance(row, dict) else _fmt(row[i])
                        for i, k in enumerate(header)])
    return path


def scenario_label(cfg: RunConfig) -> str:
    return Path(cfg.scenario).stem


def make_env(cfg: RunConfig, max_steps: int | None = None) -> NavigationEnv:
    env_cfg = cfg.env if max_steps is None else dataclasses.replace(cfg.env, max_steps=max_steps)
    return NavigationEnv(resolve_scenario(cfg.scenario), geometry=cfg.geometry,
                         reward_params=cfg.reward, action_mode=cfg.action_mode,
                         controller=cfg.controller(), config=env_cfg, seed=cfg.seed)


def make_agent(cfg: RunConfig, checkpoint_dir=None) -> SACAgent:
    params = dataclasses.asdict(cfg.sac)
    return SACAgent(**params, checkpoint_dir=checkpoint_dir, random_state=cfg.seed)


def load_agent(cfg: RunConfig, env: NavigationEnv) -> SACAgent:
    cfg.check_files(need_checkpoint=True)
    return SACAgent.load(cfg.checkpoint, expect_act_dim=env.action_dim)


def planned_length(cfg: RunConfig, env: NavigationEnv) -> float:
    """A* length from the episode start to the goal; straight line if unplannable."""
    start, goal = env.start_pose, env.goal
    inflation = cfg.planner["inflation"]
    if inflation is None:
        inflation = env.footprint
    try:
        route = plan_route(env.scenario.world, start[:2], goal, cfg.planner["resolution"], inflation)
        return polyline_length(route)
    except NoPath:
        return math.hypot(goal[0] - start[0], goal[1] - start[1])


# -- train ------------------------------------------------------------------------


def run_train(cfg: RunConfig) -> SACAgent:
    cfg.check_files()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    env = make_env(cfg)
    agent = make_agent(cfg, checkpoint_dir=out / "checkpoints")
    agent.fit(env)
    write_csv(out / "training_log.csv", TRAINING_LOG_HEADER, agent.training_log_)
    agent.save(out / "checkpoint_final.wisd")
    return agent


# -- eval -------------------------------------------------------------------------


def rollout(env: NavigationEnv, agent: SACAgent, seed: int) -> list[dict]:
    obs = env.reset(seed=seed)
    while True:
        res = env.step(agent.predict(env.encode(obs)))
        obs = res.observation
        if res.terminal:
            return list(env.log)


def run_eval(cfg: RunConfig):
    """Deterministic evaluation; episodes are indexed ``seed + k`` and merged in order."""
    env = make_env(cfg)
    agent = load_agent(cfg, env)
    out = Path(cfg.out)
    label = scenario_label(cfg)
    metrics, rows = [], []
    base = int(cfg.eval["seed"])
    for k in range(int(cfg.eval["episodes"])):
        episode_log = rollout(env, agent, base + k)
        write_trajectory(episode_log, _ensure(out / "trajectories") / f"episode_{k:03d}.csv")
        plan = planned_length(cfg, env)
        m = compute_metrics(episode_log, plan, env.goal, scenario=label)
        metrics.append(m)
        rows.append({"episode": k, "seed": base + k, "scenario": label, "outcome": m.outcome,
                     "pp": m.pp, "as": m.as_, "pe": m.pe, "length": m.length,
                     "duration": m.duration, "planned_length": plan})
    write_csv(out / "episodes.csv", METRICS_HEADER, rows)
    report = aggregate_report(metrics)
    report.write(out / "report")
    return report, metrics


def _ensure(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- navigate ---------------------------------------------------------------------


def run_navigate(cfg: RunConfig):
    """Long route: A* over the scenario, lookahead waypoints fed to the policy."""
    env = make_env(cfg, max_steps=int(cfg.planner["max_steps"]))
    agent = load_agent(cfg, env)
    env.reset(seed=cfg.seed)
    inflation = cfg.planner["inflation"]
    if inflation is None:
        inflation = footprint_radius(cfg.geometry, cfg.env.footprint_margin)
    route = plan_route(env.scenario.world, env.pose[:2], env.goal,
                       cfg.planner["resolution"], inflation)
    path = densify(route, cfg.planner["resolution"])
    lookahead = float(cfg.planner["lookahead"])
    index, wp_rows = 0, []
    while True:
        wp, index = select_waypoint(path, env.pose, lookahead, index)
        env.set_target(wp)
        wp_rows.append({"step": env.steps, "index": index, "x": wp[0], "y": wp[1]})
        res = env.step(agent.predict(env.encode(env.obs)))
        if res.terminal:
            break
    out = Path(cfg.out)
    write_trajectory(env.log, _ensure(out) / "trajectory.csv")
    write_csv(out / "route.csv", ("x", "y"), [{"x": p[0], "y": p[1]} for p in route])
    write_csv(out / "waypoints.csv", ("step", "index", "x", "y"), wp_rows)
    m = compute_metrics(env.log, polyline_length(route), env.goal, scenario=scenario_label(cfg))
    report = aggregate_report([m])
    report.write(out / "report")
    return report, m, wp_rows


# -- run-controller ---------------------------------------------------------------


def read_twists(path) -> tuple[list[float | None], np.ndarray]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            missing = [c for c in ("vx", "vy", "wz") if c not in fields]
            if missing:
                raise MalformedLog(f"twist CSV lacks columns {missing}")
            ts, twists = [], []
            for lineno, row in enumerate(reader, start=2):
                try:
                    twists.append([float(row["vx"]), float(row["vy"]), float(row["wz"])])
                    ts.append(float(row["t"]) if row.get("t") not in (None, "") else None)
                except (TypeError, ValueError) as exc:
                    raise MalformedLog(f"line {lineno}: {exc}") from exc
    except OSError as exc:
        raise MalformedLog(f"cannot read {path}: {exc}") from exc
    return ts, np.asarray(twists, dtype=float).reshape(-1, 3)


def run_controller(cfg: RunConfig, twist_csv, out_csv=None) -> list[dict]:
    """Twist stream through the fuzzy controller only, one wheel command per row."""
    ts, twists = read_twists(twist_csv)
    ctrl = cfg.controller()
    rows = []
    for k, tw in enumerate(twists):
        o = ctrl.step(BodyTwist(*tw))
        row = {"t": ts[k] if ts[k] is not None else round(k * cfg.env.dt, 10),
               "vx": tw[0], "vy": tw[1], "wz": tw[2], "mode": o.mode.value,
               "slip": slip_residual(o.command, ctrl.geometry_),
               "slew_limited": int(o.slew_limited)}
        for i, w in enumerate(WHEELS):
            row[f"delta_{w}"] = float(o.command.delta[i])
            row[f"v_{w}"] = float(o.command.v[i])
        rows.append(row)
    out_csv = Path(out_csv) if out_csv else Path(cfg.out) / "wheel_commands.csv"
    write_csv(out_csv, CONTROLLER_HEADER, rows)
    return rows


# -- replay -----------------------------------------------------------------------


def run_replay(cfg: RunConfig, log_path, goal=None) -> dict:
    """Summary statistics and plot-ready series for a trajectory log."""
    rows = read_trajectory(log_path)
    if len(rows) < 2:
        raise MalformedLog("trajectory log needs at least two rows")
    xs = np.array([r["x"] for r in rows], dtype=float)
    ys = np.array([r["y"] for r in rows], dtype=float)
    length = float(np.hypot(np.diff(xs), np.diff(ys)).sum())
    duration = float(rows[-1]["t"]) - float(rows[0]["t"])
    modes: dict[str, int] = {}
    for r in rows[1:]:
        modes[r.get("mode") or "-"] = modes.get(r.get("mode") or "-", 0) + 1
    slips = [float(r["slip"]) for r in rows[1:] if isinstance(r.get("slip"), float)]
    rewards = [float(r["reward"]) for r in rows[1:] if isinstance(r.get("reward"), float)]
    summary = {
        "steps": len(rows) - 1, "duration": duration, "length": length,
        "average_speed": length / duration if duration > 0 else 0.0,
        "outcome": rows[-1].get("done", ""),
        "return": math.fsum(rewards), "mean_slip": float(np.mean(slips)) if slips else 0.0,
        "max_slip": max(slips) if slips else 0.0, "mode_counts": dict(sorted(modes.items())),
        "final_pose": [float(xs[-1]), float(ys[-1]), float(rows[-1].get("theta", 0.0) or 0.0)],
    }
    if goal is not None:
        summary["pp"] = math.hypot(xs[-1] - goal[0], ys[-1] - goal[1])
    out = _ensure(Path(cfg.out))
    (out / "replay_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_csv(out / "replay_path.csv", ("t", "x", "y", "theta", "mode"),
              [{k: r.get(k, "") for k in ("t", "x", "y", "theta", "mode")} for r in rows])
    return summary


# -- bench ------------------------------------------------------------------------

CONTROL_BUDGET_MS = 5.0
POLICY_BUDGET_MS = 15.0


def run_bench(cfg: RunConfig) -> dict:
    """Wall-clock latency of one controller step and one policy forward pass."""
    n = int(cfg.bench["iterations"])
    rng = np.random.default_rng(cfg.seed)
    geo = cfg.geometry
    lim = np.array([geo.vx_max, geo.vy_max, geo.wz_max])
    twists = rng.uniform(-1.0, 1.0, size=(n, 3)) * lim
    ctrl = cfg.controller()
    ctrl_ms = []
    for tw in twists:
        t0 = time.perf_counter()
        ctrl.step(BodyTwist(*tw))
        ctrl_ms.append(1e3 * (time.perf_counter() - t0))

    obs_dim = cfg.env.n_rays + 5
    if cfg.checkpoint:
        env = make_env(cfg)
        actor = load_agent(cfg, env).networks_.actor
    else:
        act_dim = 3 if cfg.action_mode == "twist" else 8
        actor = init_mlp((obs_dim, *cfg.sac.hidden_sizes, 2 * act_dim),
                         np.random.default_rng(cfg.seed))
    states = rng.uniform(0.0, 1.0, size=(n, obs_dim))
    pol_ms = []
    for s in states:
        t0 = time.perf_counter()
        mlp_forward(actor, s[None, :])
        pol_ms.append(1e3 * (time.perf_counter() - t0))

    result = {
        "iterations": n,
        "hidden_sizes": list(actor.sizes[1:-1]),
        "control_step_ms_mean": float(np.mean(ctrl_ms)),
        "control_step_ms_std": float(np.std(ctrl_ms)),
        "policy_ms_mean": float(np.mean(pol_ms)),
        "policy_ms_std": float(np.std(pol_ms)),
    }
    result["control_within_budget"] = result["control_step_ms_mean"] <= CONTROL_BUDGET_MS
    result["policy_within_budget"] = result["policy_ms_mean"] <= POLICY_BUDGET_MS
    out = _ensure(Path(cfg.out))
    rows = [("control_step", result["control_step_ms_mean"], result["control_step_ms_std"],
             CONTROL_BUDGET_MS, result["control_within_budget"]),
            ("policy_inference", result["policy_ms_mean"], result["policy_ms_std"],
             POLICY_BUDGET_MS, result["policy_within_budget"])]
    header = ("stage", "mean_ms", "std_ms", "budget_ms", "within_budget")
    write_csv(out / "bench.csv", header, rows)
    text = [f"{'stage':<18}{'mean_ms':>10}{'std_ms':>10}{'budget_ms':>11}  within_budget"]
    for name, mean, std, budget, ok in rows:
        text.append(f"{name:<18}{mean:>10.4f}{std:>10.4f}{budget:>11.1f}  {ok}")
    (out / "bench.txt").write_text("\n".join(text) + "\n")
    return result


__all__ = ["make_agent", "make_env", "run_bench", "run_controller", "run_eval", "run_navigate",
           "run_replay", "run_train"]
