"""Run orchestration behind the command line: training runs, evaluation
sweeps, method comparisons and trajectory rendering."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from dacoop import nn
from dacoop.apf import ApfParams
from dacoop.baselines import ApfPolicy, ApfSchedule, adapter_for, grid_search_best_init
from dacoop.config import RunConfig, resolve_arena
from dacoop.env import TRAJECTORY_COLUMNS, PursuitEnv, TrajectoryRecorder
from dacoop.geometry import Arena
from dacoop.trainer import (EVAL_TAG, ActionGrid, QPolicy, Trainer, episode_seed, evaluate_policy, metrics_line,
                            run_episode)

log = logging.getLogger(__name__)

# Grid search tunes on its own episode range so the final evaluation is not
# scored on the episodes used for selection.
GRID_SEED_OFFSET = 1_000_003


class IncompatibleArtifact(ValueError):
    pass


class TrajectoryFormatError(ValueError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


def make_env(cfg: RunConfig, arena: Arena | None = None, n_pursuers: int | None = None) -> PursuitEnv:
    scenario = cfg.scenario
    if n_pursuers is not None and n_pursuers != scenario.n_pursuers:
        from dataclasses import replace
        scenario = replace(scenario, n_pursuers=n_pursuers)
    return PursuitEnv(arena or cfg.load_arena(), scenario)


def apf_base(cfg: RunConfig) -> ApfParams:
    return cfg.apf.params()


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- training ------------------------------------------------------------------------

def _best(evals: Sequence[tuple[int, float]], metrics: Sequence[dict], window: int = 100):
    if evals:
        best_episode, best_rate = max(evals, key=lambda e: (e[1], -e[0]))
        return best_rate, best_episode
    if not metrics:
        return None, None
    flags = [m["success"] for m in metrics]
    best_rate, best_episode = -1.0, None
    for end in range(1, len(flags) + 1):
        chunk = flags[max(0, end - window):end]
        rate = sum(chunk) / len(chunk)
        if rate > best_rate:
            best_rate, best_episode = rate, end
    return best_rate, best_episode


def run_apf_search(cfg: RunConfig, env: PursuitEnv, seed: int, scheduled: bool | None = None):
    scheduled = cfg.baseline.scheduled if scheduled is None else scheduled
    return grid_search_best_init(env, ActionGrid.product(), cfg.baseline.grid_episodes, seed + GRID_SEED_OFFSET,
                                 scheduled=scheduled, base=apf_base(cfg), d_ref=cfg.baseline.d_ref)


def apf_policy(cfg: RunConfig, eta0: float, lambda0: float, scheduled: bool | None = None) -> ApfPolicy:
    scheduled = cfg.baseline.scheduled if scheduled is None else scheduled
    schedule = ApfSchedule(eta0, lambda0, cfg.baseline.d_ref, cfg.baseline.lambda_min)
    return ApfPolicy(schedule, apf_base(cfg), scheduled)


def train_run(cfg: RunConfig, out_dir: Path, seed: int | None = None, method: str | None = None) -> dict:
    """Train (or grid-search, for the APF baseline) and write all run artifacts into ``out_dir``."""
    seed = cfg.seed if seed is None else seed
    method = method or cfg.method
    cfg = cfg.replace(seed=seed, method=method, output_dir=str(out_dir))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved").write_text(cfg.to_text())
    env = make_env(cfg)

    if method == "modified_apf":
        search = run_apf_search(cfg, env, seed)
        summary = {
            "method": method, "seed": seed, "episodes": 0,
            "best_pair": [search.schedule.eta0, search.schedule.lambda0],
            "best_success_rate": search.rates[search.index], "best_episode": 0,
            "grid_success_rates": search.rates, "scheduled": cfg.baseline.scheduled,
        }
        (out_dir / "metrics.jsonl").write_text("")
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        return summary

    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    trainer = Trainer(env, cfg.train, seed, adapter_for(method, apf_base(cfg)))
    evals_path = out_dir / "evals.jsonl"
    with open(out_dir / "metrics.jsonl", "w") as metrics_fh, open(evals_path, "w") as evals_fh:
        def on_metrics(m):
            metrics_fh.write(metrics_line(m) + "\n")
            metrics_fh.flush()

        def on_checkpoint(episode, blob):
            (ckpt_dir / f"ckpt_{episode:06d}.bin").write_bytes(blob)

        def on_eval(episode, rate):
            evals_fh.write(json.dumps({"episode": episode, "success_rate": rate}) + "\n")
            evals_fh.flush()

        result = trainer.run(on_metrics=on_metrics, on_checkpoint=on_checkpoint, on_eval=on_eval)
    final = nn.dumps_checkpoint(result.params, trainer.meta(cfg.train.episodes))
    (out_dir / "final.ckpt").write_bytes(final)
    best_rate, best_episode = _best(result.evals, result.metrics)
    summary = {
        "method": method, "seed": seed, "episodes": cfg.train.episodes,
        "best_success_rate": best_rate, "best_episode": best_episode,
        "evals": [{"episode": e, "success_rate": r} for e, r in result.evals],
        "final_checkpoint_sha256": hashlib.sha256(final).hexdigest(),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


# -- evaluation -----------------------------------------------------------------------

@dataclass
class PolicySpec:
    """Either a Q-network checkpoint or an APF rule ``apf:ETA,LAMBDA[,fixed|scheduled]``."""

    label: str
    params: nn.Params | None = None
    meta: dict | None = None
    apf: tuple[float, float, bool] | None = None

    @classmethod
    def parse(cls, text: str, method: str | None = None) -> "PolicySpec":
        if text.startswith("apf:"):
            parts = text[4:].split(",")
            if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2] not in ("fixed", "scheduled")):
                raise ValueError(f"bad APF policy spec {text!r}; expected apf:ETA,LAMBDA[,fixed|scheduled]")
            scheduled = len(parts) == 2 or parts[2] == "scheduled"
            return cls(text, apf=(float(parts[0]), float(parts[1]), scheduled))
        params, meta = nn.load_checkpoint(text)
        meta = dict(meta)
        if method:
            meta["method"] = method
        return cls(text, params=params, meta=meta)

    def build(self, cfg: RunConfig, env: PursuitEnv):
        if self.apf is not None:
            eta0, lambda0, scheduled = self.apf
            return apf_policy(cfg, eta0, lambda0, scheduled)
        method = self.meta.get("method", "dacoop")
        try:
            adapter = adapter_for(method, apf_base(cfg))
        except ValueError as exc:
            raise IncompatibleArtifact(str(exc)) from exc
        n_out = self.params["adv2.W"].shape[1]
        if n_out != adapter.n_actions:
            raise IncompatibleArtifact(
                f"checkpoint has {n_out} actions but method {method!r} uses {adapter.n_actions}")
        return QPolicy(self.params, adapter, env)


def eval_sweep(cfg: RunConfig, spec: PolicySpec, arenas: Sequence[str], pursuer_counts: Sequence[int],
               episodes: int, seed: int) -> list[dict]:
    rows = []
    base_dir = Path(cfg.source).parent if cfg.source else None
    for arena_name in arenas:
        arena = resolve_arena(arena_name, base_dir)
        for n in pursuer_counts:
            env = make_env(cfg, arena, n)
            result = evaluate_policy(env, spec.build(cfg, env), episodes, seed)
            rows.append({"policy": spec.label, "arena": arena.name or arena_name, "n_pursuers": n,
                         **result.summary()})
    return rows


def record_trajectory(cfg: RunConfig, spec: PolicySpec, arena: Arena, n_pursuers: int, seed: int,
                      path: Path) -> None:
    env = make_env(cfg, arena, n_pursuers)
    recorder = TrajectoryRecorder()
    run_episode(env, spec.build(cfg, env), episode_seed(seed, EVAL_TAG, 0), recorder)
    recorder.write(path)


# -- comparison -----------------------------------------------------------------------

def _cell(args) -> dict:
    cfg, method, seed, cell_dir = args
    cell_dir = Path(cell_dir)
    try:
        summary = train_run(cfg, cell_dir, seed=seed, method=method)
        env = make_env(cfg)
        if method == "modified_apf":
            eta0, lambda0 = summary["best_pair"]
            final = evaluate_policy(env, apf_policy(cfg, eta0, lambda0), cfg.eval.final_episodes, seed)
            every = cfg.train.eval_every or max(1, cfg.train.episodes)
            points = list(range(every, cfg.train.episodes + 1, every)) or [0]
            if cfg.train.episodes and points[-1] != cfg.train.episodes:
                points.append(cfg.train.episodes)
            curve = [(e, final.success_rate) for e in points]
        else:
            params, meta = nn.load_checkpoint(cell_dir / "final.ckpt")
            policy = PolicySpec("final", params, meta).build(cfg, env)
            final = evaluate_policy(env, policy, cfg.eval.final_episodes, seed)
            curve = [(e["episode"], e["success_rate"]) for e in summary["evals"]]
            if not curve or curve[-1][0] != cfg.train.episodes:
                curve.append((cfg.train.episodes, final.success_rate))
            else:
                curve[-1] = (curve[-1][0], final.success_rate)
        auc = sum(r for _, r in curve) / len(curve)
        return {"method": method, "seed": seed, "status": "ok", "final_success_rate": final.success_rate,
                "auc": auc, "curve": curve}
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the others
        log.exception("cell %s/%s failed", method, seed)
        return {"method": method, "seed": seed, "status": f"failed: {type(exc).__name__}: {exc}",
                "final_success_rate": None, "auc": None, "curve": []}


def compare(cfg: RunConfig, methods: Sequence[str], seeds: Sequence[int], out_dir: Path,
            workers: int = 1) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved").write_text(cfg.to_text())
    jobs = [(cfg, m, s, str(out_dir / "cells" / f"{m}_seed{s}")) for m in methods for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            cells = list(pool.map(_cell, jobs))
    else:
        cells = [_cell(j) for j in jobs]

    with open(out_dir / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "seed", "episode", "success_rate"])
        for c in cells:
            for episode, rate in c["curve"]:
                w.writerow([c["method"], c["seed"], episode, repr(float(rate))])
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "seed", "final_success_rate", "auc", "status"])
        for c in cells:
            w.writerow([c["method"], c["seed"], c["final_success_rate"], c["auc"], c["status"]])
    return cells


# -- trajectories and SVG ---------------------------------------------------------------

def read_trajectory(path: Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRAJECTORY_COLUMNS:
            raise TrajectoryFormatError(1, f"expected header {','.join(TRAJECTORY_COLUMNS)}")
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(TRAJECTORY_COLUMNS):
                raise TrajectoryFormatError(lineno, f"expected {len(TRAJECTORY_COLUMNS)} fields, got {len(raw)}")
            rec = dict(zip(TRAJECTORY_COLUMNS, raw))
            try:
                row = {
                    "step": int(rec["step"]), "agent_id": int(rec["agent_id"]), "role": rec["role"],
                    "x_mm": float(rec["x_mm"]), "y_mm": float(rec["y_mm"]),
                    "heading_rad": float(rec["heading_rad"]), "captured": int(rec["captured"]),
                }
            except ValueError as exc:
                raise TrajectoryFormatError(lineno, str(exc)) from exc
            if row["role"] not in ("pursuer", "evader") or row["captured"] not in (0, 1):
                raise TrajectoryFormatError(lineno, "role must be pursuer|evader and captured 0|1")
            if not (math.isfinite(row["x_mm"]) and math.isfinite(row["y_mm"])):
                raise TrajectoryFormatError(lineno, "non-finite coordinate")
            rows.append(row)
    return rows


PURSUER_COLORS = ("#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
EVADER_COLOR = "#d62728"


def render_svg(rows: Iterable[dict], arena: Arena, scale: float = 0.1) -> str:
    """Static SVG: arena outline, obstacles, one polyline per agent, capture markers."""
    w, h = arena.width * scale, arena.height * scale

    def xy(x, y):
        return f"{x * scale:.1f},{(arena.height - y) * scale:.1f}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1f}" height="{h:.1f}" '
           f'viewBox="0 0 {w:.1f} {h:.1f}">',
           f'<rect x="0" y="0" width="{w:.1f}" height="{h:.1f}" fill="white" stroke="black" stroke-width="2"/>']
    for region, color in ((arena.pursuer_spawn, "#cfe2ff"), (arena.evader_spawn, "#fff3b0")):
        (x0, y0), (x1, y1) = region.min_corner, region.max_corner
        out.append(f'<rect x="{x0 * scale:.1f}" y="{(arena.height - y1) * scale:.1f}" '
                   f'width="{(x1 - x0) * scale:.1f}" height="{(y1 - y0) * scale:.1f}" fill="{color}"/>')
    for o in arena.obstacles:
        (x0, y0), (x1, y1) = o.min_corner, o.max_corner
        out.append(f'<rect x="{x0 * scale:.1f}" y="{(arena.height - y1) * scale:.1f}" '
                   f'width="{(x1 - x0) * scale:.1f}" height="{(y1 - y0) * scale:.1f}" fill="#555555"/>')

    tracks: dict[int, list[dict]] = {}
    for row in rows:
        tracks.setdefault(row["agent_id"], []).append(row)
    for agent_id in sorted(tracks):
        track = sorted(tracks[agent_id], key=lambda r: r["step"])
        evader = track[0]["role"] == "evader"
        color = EVADER_COLOR if evader else PURSUER_COLORS[agent_id % len(PURSUER_COLORS)]
        points = " ".join(xy(r["x_mm"], r["y_mm"]) for r in track)
        dash = ' stroke-dasharray="4,2"' if evader else ""
        out.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        start = track[0]
        out.append(f'<circle cx="{start["x_mm"] * scale:.1f}" cy="{(arena.height - start["y_mm"]) * scale:.1f}" '
                   f'r="3" fill="{color}"/>')
        cap = next((r for r in track if r["captured"]), None)
        if cap is not None:
            cx, cy = cap["x_mm"] * scale, (arena.height - cap["y_mm"]) * scale
            out.append(f'<path d="M{cx - 5:.1f},{cy - 5:.1f} L{cx + 5:.1f},{cy + 5:.1f} '
                       f'M{cx - 5:.1f},{cy + 5:.1f} L{cx + 5:.1f},{cy - 5:.1f}" stroke="{color}" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
