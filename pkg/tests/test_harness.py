import csv
import itertools
import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wisdnav.exceptions import (
    ArchitectureMismatch,
    CorruptCheckpoint,
    InvalidConfig,
    MalformedLog,
    NoPath,
)
from wisdnav.harness.checkpoint import load_checkpoint, save_checkpoint
from wisdnav.harness.cli import main
from wisdnav.harness.config import RunConfig
from wisdnav.harness.metrics import (
    EpisodeMetrics,
    aggregate_report,
    compute_metrics,
    format_sr,
    read_trajectory,
)
from wisdnav.harness.planning import (
    OccupancyGrid,
    astar_plan,
    densify,
    path_cost,
    plan_route,
    polyline_length,
    select_waypoint,
)
from wisdnav.sim import Circle, Rect, World

TINY_CONFIG = {
    "sac": {"hidden_sizes": [8], "episodes": 2, "warmup": 50, "batch_size": 16,
            "eval_every": 0},
    "eval": {"episodes": 2},
    "bench": {"iterations": 20},
}


def exhaustive_cost(occ, start, goal):
    """Oracle: Bellman-Ford relaxation over every cell with the same move rules."""
    nx, ny = occ.shape
    free = lambda c: 0 <= c[0] < nx and 0 <= c[1] < ny and not occ[c]
    dist = {c: math.inf for c in itertools.product(range(nx), range(ny)) if free(c)}
    dist[start] = 0.0
    for _ in range(len(dist)):
        changed = False
        for (i, j), d in list(dist.items()):
            if d == math.inf:
                continue
            for di, dj in itertools.product((-1, 0, 1), repeat=2):
                nb = (i + di, j + dj)
                if (di, dj) == (0, 0) or not free(nb):
                    continue
                if di and dj and not (free((i + di, j)) and free((i, j + dj))):
                    continue
                cand = d + (math.sqrt(2) if di and dj else 1.0)
                if cand < dist[nb] - 1e-12:
                    dist[nb] = cand
                    changed = True
        if not changed:
            break
    return dist[goal]


class TestAstar:
    def test_empty_5x5(self):
        grid = OccupancyGrid(np.zeros((5, 5), dtype=bool))
        path = astar_plan(grid, (0, 0), (4, 4))
        assert path_cost(path) == pytest.approx(4 * math.sqrt(2))
        assert path_cost(path) == pytest.approx(5.657, abs=1e-3)
        assert exhaustive_cost(grid.occupied, (0, 0), (4, 4)) == pytest.approx(path_cost(path))

    def test_start_is_goal(self):
        grid = OccupancyGrid(np.zeros((3, 3), dtype=bool))
        path = astar_plan(grid, (1, 1), (1, 1))
        assert path == [(1, 1)] and path_cost(path) == 0

    def test_walled_off(self):
        occ = np.zeros((5, 5), dtype=bool)
        occ[2, :] = True
        with pytest.raises(NoPath):
            astar_plan(OccupancyGrid(occ), (0, 0), (4, 4))

    def test_occupied_endpoint(self):
        occ = np.zeros((3, 3), dtype=bool)
        occ[2, 2] = True
        with pytest.raises(NoPath):
            astar_plan(OccupancyGrid(occ), (0, 0), (2, 2))

    def test_no_corner_cutting(self):
        occ = np.zeros((2, 2), dtype=bool)
        occ[1, 0] = True
        path = astar_plan(OccupancyGrid(occ), (0, 0), (1, 1))
        assert path == [(0, 0), (0, 1), (1, 1)]

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1), st.floats(0, 0.4))
    def test_optimal_against_exhaustive(self, nx, ny, seed, density):
        rng = np.random.default_rng(seed)
        occ = rng.random((nx, ny)) < density
        free = [tuple(c) for c in np.argwhere(~occ)]
        if not free:
            return
        start = free[rng.integers(len(free))]
        goal = free[rng.integers(len(free))]
        oracle = exhaustive_cost(occ, start, goal)
        grid = OccupancyGrid(occ)
        if oracle == math.inf:
            with pytest.raises(NoPath):
                astar_plan(grid, start, goal)
            return
        path = astar_plan(grid, start, goal)
        assert path[0] == start and path[-1] == goal
        assert all(not occ[c] for c in path)
        assert abs(path_cost(path) - oracle) <= 1e-9

    def test_grid_inflation(self):
        world = World((0, 0, 4, 4), (Circle(2, 2, 0.5),))
        grid = OccupancyGrid.from_world(world, resolution=0.1, inflation=0.3)
        assert not grid.free(grid.cell_of(2.0, 2.0))
        assert not grid.free(grid.cell_of(2.75, 2.0))
        assert grid.free(grid.cell_of(2.85, 2.0))
        assert not grid.free(grid.cell_of(0.05, 2.0))

    def test_route_avoids_obstacle(self):
        world = World((0, 0, 10, 6), (Rect(4, 0, 5, 4),))
        route = plan_route(world, (1, 1), (9, 1), resolution=0.1, inflation=0.5)
        assert tuple(route[0]) == (1, 1) and tuple(route[-1]) == (9, 1)
        assert max(route[:, 1]) > 4.4
        dense = densify(route, 0.05)
        assert all(world.clearance(x, y) > 0.4 for x, y in dense[5:-5])


class TestWaypoint:
    path = densify([(0, 0), (10, 0)], 0.1)

    def test_straight(self):
        wp, idx = select_waypoint(self.path, (0, 0, 0), 2.0)
        assert wp == pytest.approx((2.0, 0.0))
        assert idx == 20

    def test_near_goal(self):
        wp, idx = select_waypoint(self.path, (8.5, 0.3, 0), 2.0)
        assert wp == (10.0, 0.0) and idx == len(self.path) - 1

    def test_lookahead_exceeds_path(self):
        assert select_waypoint(self.path, (0, 0, 0), 50.0)[0] == (10.0, 0.0)

    def test_off_path_robot(self):
        wp, _ = select_waypoint(self.path, (3.0, 5.0, 0), 2.0)
        assert wp == pytest.approx((3.0, 0.0))

    def test_empty(self):
        with pytest.raises(ValueError):
            select_waypoint([], (0, 0, 0), 1.0)

    @given(st.lists(st.tuples(st.floats(-1, 11), st.floats(-2, 2)), min_size=1, max_size=40))
    def test_monotone_index(self, poses):
        loop = densify([(0, 0), (5, 0), (5, 5), (0, 5), (0, 0.5)], 0.1)
        idx = 0
        for x, y in poses:
            _, new = select_waypoint(loop, (x, y, 0), 2.0, idx)
            assert new >= idx
            idx = new


def log_rows(points, dt=0.1, done="goal_reached"):
    rows = [{"t": round(k * dt, 10), "x": x, "y": y, "done": "running"}
            for k, (x, y) in enumerate(points)]
    rows[-1]["done"] = done
    return rows


class TestMetrics:
    def test_pp(self):
        m = compute_metrics(log_rows([(0.5, 0), (0.1, 0)]), 0.4, (0, 0))
        assert m.pp == pytest.approx(0.1)

    def test_as(self):
        pts = [(0.05 * k, 0) for k in range(11)]
        m = compute_metrics(log_rows(pts), 0.5, (0.5, 0))
        assert m.as_ == pytest.approx(0.5) and m.duration == pytest.approx(1.0)

    def test_pe(self):
        m = compute_metrics(log_rows([(0, 0), (11.6, 0)]), 10.0, (11.6, 0))
        assert m.pe == pytest.approx(86.2, abs=0.05)

    def test_pe_unclamped(self):
        assert compute_metrics(log_rows([(0, 0), (9, 0)]), 10.0, (9, 0)).pe > 100

    def test_outcomes(self):
        assert compute_metrics(log_rows([(0, 0), (1, 0)]), 1, (1, 0)).outcome == "success"
        assert compute_metrics(log_rows([(0, 0), (1, 0)], done="collision"), 1,
                               (1, 0)).outcome == "collision"
        with pytest.raises(MalformedLog):
            compute_metrics(log_rows([(0, 0), (1, 0)], done="running"), 1, (1, 0))

    def test_malformed(self, tmp_path):
        with pytest.raises(MalformedLog):
            compute_metrics(log_rows([(0, 0)]), 1, (0, 0))
        rows = log_rows([(0, 0), (1, 0), (2, 0)])
        rows[2]["t"] = 0.05
        with pytest.raises(MalformedLog):
            compute_metrics(rows, 1, (0, 0))
        (tmp_path / "a.csv").write_text("t,x\n0,1\n")
        with pytest.raises(MalformedLog):
            read_trajectory(tmp_path / "a.csv")
        (tmp_path / "b.csv").write_text("t,x,y,done\n0,a,0,running\n")
        with pytest.raises(MalformedLog):
            read_trajectory(tmp_path / "b.csv")

    def test_tracked_plan_efficiency(self):
        world = World((0, 0, 10, 10), (Circle(5, 5, 1.5), Rect(1, 6, 3, 8)))
        route = plan_route(world, (1, 1), (8, 9), resolution=0.1, inflation=0.8)
        rng = np.random.default_rng(0)
        track = densify(route, 0.05)
        track[1:-1] += rng.normal(0, 0.002, size=track[1:-1].shape)
        m = compute_metrics(log_rows(track), polyline_length(route), (8, 9))
        assert m.pe == pytest.approx(100.0, abs=0.5)

    @pytest.mark.parametrize("s,n,text", [(29, 30, "96.7 (29/30)"), (0, 7, "0.0 (0/7)"),
                                          (30, 30, "100.0 (30/30)")])
    def test_sr_format(self, s, n, text):
        assert format_sr(s, n) == text

    def test_report_single_episode(self):
        m = EpisodeMetrics(0.123, 0.456, 78.9, "success", "S1")
        rep = aggregate_report([m])
        assert rep.rows == [("S1", "proposed", "0.123", "0.456", "78.9", "100.0 (1/1)")]
        lines = rep.to_text().splitlines()
        assert lines[0].startswith("scenario") and set(lines[1]) <= {"-", " "}
        assert len({len(line) for line in lines}) == 1
        assert rep.to_csv().splitlines()[0] == "scenario,method,PP (m),AS (m/s),PE (%),SR (%)"

    def test_report_groups(self):
        ms = [EpisodeMetrics(0.1, 0.5, 90, "success", "a"),
              EpisodeMetrics(0.3, 0.3, 80, "timeout", "a"),
              EpisodeMetrics(1.0, 0.2, 50, "collision", "b")]
        rows = aggregate_report(ms).rows
        assert rows[0] == ("a", "proposed", "0.200", "0.400", "85.0", "50.0 (1/2)")
        assert rows[1][-1] == "0.0 (0/1)"
        with pytest.raises(ValueError):
            aggregate_report([])


class TestCheckpoint:
    def tensors(self):
        rng = np.random.default_rng(0)
        return {"actor.W0": rng.normal(size=(41, 8)).astype(np.float32),
                "actor.b0": rng.normal(size=8).astype(np.float32),
                "scalar": np.array(1.5, dtype=np.float32)}

    def test_roundtrip_bitwise(self, tmp_path):
        t = self.tensors()
        save_checkpoint(t, tmp_path / "c.wisd", {"act_dim": 3})
        back, meta = load_checkpoint(tmp_path / "c.wisd")
        assert meta == {"act_dim": 3} and list(back) == list(t)
        for k in t:
            assert back[k].tobytes() == t[k].tobytes() and back[k].shape == t[k].shape

    def test_deterministic_bytes(self, tmp_path):
        save_checkpoint(self.tensors(), tmp_path / "a.wisd")
        save_checkpoint(self.tensors(), tmp_path / "b.wisd")
        assert (tmp_path / "a.wisd").read_bytes() == (tmp_path / "b.wisd").read_bytes()

    @pytest.mark.parametrize("cut", [1, 4, 100])
    def test_truncated(self, tmp_path, cut):
        save_checkpoint(self.tensors(), tmp_path / "c.wisd")
        data = (tmp_path / "c.wisd").read_bytes()
        (tmp_path / "c.wisd").write_bytes(data[:-cut])
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(tmp_path / "c.wisd")

    def test_bitflip_and_garbage(self, tmp_path):
        save_checkpoint(self.tensors(), tmp_path / "c.wisd")
        data = bytearray((tmp_path / "c.wisd").read_bytes())
        data[40] ^= 0x01
        (tmp_path / "c.wisd").write_bytes(bytes(data))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(tmp_path / "c.wisd")
        (tmp_path / "g.wisd").write_bytes(b"not a checkpoint")
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(tmp_path / "g.wisd")

    def test_arch_mismatch(self, tmp_path):
        save_checkpoint(self.tensors(), tmp_path / "c.wisd", {"act_dim": 8, "obs_dim": 41})
        with pytest.raises(ArchitectureMismatch):
            load_checkpoint(tmp_path / "c.wisd", expect_act_dim=3)
        with pytest.raises(ArchitectureMismatch):
            load_checkpoint(tmp_path / "c.wisd", expect_obs_dim=40)
        load_checkpoint(tmp_path / "c.wisd", expect_act_dim=8)


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.seed == 0 and cfg.scenario == "desk" and cfg.action_mode == "twist"
        assert cfg.reward.lambda_progress == 0.5 and cfg.sac.gamma == 0.99
        assert cfg.planner["resolution"] == 0.1 and cfg.planner["lookahead"] == 2.0

    def test_roundtrip(self, tmp_path):
        cfg = RunConfig.from_dict({"seed": 4, "sac": {"hidden_sizes": [16, 16]},
                                   "fuzzy": {"hold_steps": 5}})
        (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
        back = RunConfig.load(tmp_path / "c.json")
        assert back.to_dict() == cfg.to_dict() and back.sac.hidden_sizes == (16, 16)

    @pytest.mark.parametrize("doc", [{"bogus": 1}, {"sac": {"gamma": 2}}, {"seed": -1},
                                     {"action_mode": "legs"}, {"reward": {"nope": 1}},
                                     {"fuzzy": {"hold_steps": 0}}, {"eval": {"episodes": 0}},
                                     {"geometry": {"L": -1}}, []])
    def test_invalid(self, doc):
        with pytest.raises(InvalidConfig):
            RunConfig.from_dict(doc)

    def test_bad_files(self, tmp_path):
        (tmp_path / "x.json").write_text("{")
        with pytest.raises(InvalidConfig):
            RunConfig.load(tmp_path / "x.json")
        with pytest.raises(InvalidConfig):
            RunConfig(scenario=str(tmp_path / "missing.json")).check_files()
        with pytest.raises(InvalidConfig):
            RunConfig(checkpoint=None).check_files(need_checkpoint=True)


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestCli:
    def test_usage_errors_exit_2(self, capsys):
        for argv in (["train", "--bogus"], [], ["frobnicate"], ["eval", "--seed", "x"]):
            with pytest.raises(SystemExit) as exc:
                main(argv)
            assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_runtime_errors_exit_1(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        assert main(["eval", "--out", out, "--checkpoint", str(tmp_path / "nope.wisd")]) == 1
        assert main(["train", "--out", out, "--scenario", str(tmp_path / "no.json")]) == 1
        (tmp_path / "bad.json").write_text('{"sac": {"tau": 0}}')
        assert main(["train", "--out", out, "--config", str(tmp_path / "bad.json")]) == 1
        assert "error" in capsys.readouterr().err

    def test_run_controller_three_rows(self, tmp_path):
        twists = tmp_path / "tw.csv"
        twists.write_text("vx,vy,wz\n0.5,0,0\n0,0.3,0\n0,0,0.3\n")
        assert main(["run-controller", str(twists), "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "wheel_commands.csv")
        assert len(rows) == 3
        assert all(r["mode"] in ("SM", "OM", "LM", "RM") for r in rows)
        assert all(float(r["slip"]) <= 1e-9 for r in rows)
        assert [r["t"] for r in rows] == ["0.0", "0.1", "0.2"]

    def test_run_controller_bad_csv(self, tmp_path):
        (tmp_path / "tw.csv").write_text("a,b\n1,2\n")
        assert main(["run-controller", str(tmp_path / "tw.csv"), "--out", str(tmp_path)]) == 1

    def test_pipeline(self, tmp_path, tiny_config, capsys):
        run = tmp_path / "run"
        common = ["--config", str(tiny_config), "--seed", "3"]
        assert main(["train", *common, "--out", str(run)]) == 0
        log = read_csv(run / "training_log.csv")
        assert len(log) == 2 and list(log[0])[:2] == ["episode", "return"]
        ckpt = str(run / "checkpoint_final.wisd")

        ev = tmp_path / "eval"
        assert main(["eval", *common, "--checkpoint", ckpt, "--out", str(ev)]) == 0
        text = (ev / "report.txt").read_text()
        assert "SR (%)" in text and "(" in text.splitlines()[-1]
        assert len(read_csv(ev / "episodes.csv")) == 2
        assert (ev / "trajectories" / "episode_001.csv").is_file()

        assert main(["eval", *common, "--checkpoint", ckpt, "--out", str(ev),
                     "--action-mode", "wheel"]) == 1

        nav = tmp_path / "nav"
        assert main(["navigate", "--config", str(tiny_config), "--checkpoint", ckpt,
                     "--scenario", "corridor", "--out", str(nav)]) == 0
        idx = [int(r["index"]) for r in read_csv(nav / "waypoints.csv")]
        assert idx == sorted(idx)

        rep = tmp_path / "rep"
        assert main(["replay", str(ev / "trajectories" / "episode_000.csv"), "--out", str(rep),
                     "--goal", "0", "0"]) == 0
        summary = json.loads((rep / "replay_summary.json").read_text())
        assert summary["steps"] >= 1 and "pp" in summary

        b = tmp_path / "bench"
        assert main(["bench", *common, "--out", str(b), "--checkpoint", ckpt]) == 0
        bench = read_csv(b / "bench.csv")
        assert [r["stage"] for r in bench] == ["control_step", "policy_inference"]
        capsys.readouterr()

    def test_console_entry_point(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "wisdnav.harness.cli", "bench", "--bogus"],
                             capture_output=True, text=True)
        assert res.returncode == 2 and "usage" in res.stderr
        res = subprocess.run([sys.executable, "-m", "wisdnav.harness.cli", "bench",
                              "--iterations", "5", "--out", str(tmp_path)],
                             capture_output=True, text=True)
        assert res.returncode == 0 and "control_step" in res.stdout
