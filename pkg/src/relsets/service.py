"""Ranking-round service for the companion UI.

Serves reference/query rounds per session, interleaves vigilance rounds,
and persists submitted rankings to an append-only newline-delimited JSON
log. Ground-truth order never leaves the server.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .evalsuite import EvalReport, spearman_rho
from .sampler import RankingTask

CLIENT_FORBIDDEN_FIELDS = (
    "ground_truth_order",
    "query_distances",
    "reference_vector",
    "is_vigilance",
    "planted_similar_id",
    "planted_dissimilar_id",
)


@dataclass
class ServedRound:
    round_id: str
    task: RankingTask
    served_query_ids: list[str]
    submitted: bool = False


@dataclass
class SessionState:
    rng: np.random.Generator
    normal_queue: list[RankingTask]
    vigilance_queue: list[RankingTask]
    served_count: int = 0
    rounds: dict[str, ServedRound] = field(default_factory=dict)


class SubmitBody(BaseModel):
    session: str
    round_id: str
    order: list[int]


class ResponseLog:
    """Append-only ndjson record log with a single-writer lock."""

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        self._seen: set[tuple[str, str]] = set()
        try:
            for rec in self.records():
                self._seen.add((rec["session"], rec["round_id"]))
        except FileNotFoundError:
            pass

    def append(self, record: dict) -> bool:
        key = (record["session"], record["round_id"])
        with self._lock:
            if key in self._seen:
                return False
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
            self._seen.add(key)
            return True

    def records(self) -> list[dict]:
        out = []
        with open(self.path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    out.append(json.loads(line))
        return out


def _session_seed(base_seed: int, session: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{session}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def human_rho(task: RankingTask, served_query_ids: list[str], order: list[int]) -> float:
    """Correlation between a submitted ranking and the ground truth.

    order[slot] is the index into the served queries placed at that slot,
    slot 0 = "Least Similar" through slot 4 = "Most Similar".
    """
    storage_index = {q: i for i, q in enumerate(task.query_ids)}
    asc_position = {idx: pos for pos, idx in enumerate(task.ground_truth_order)}
    gt_sim_ranks = []
    human_sim_ranks = []
    for slot, served_idx in enumerate(order):
        q = served_query_ids[served_idx]
        gt_sim_ranks.append(len(order) - 1 - asc_position[storage_index[q]])
        human_sim_ranks.append(slot)
    return spearman_rho(human_sim_ranks, gt_sim_ranks)


def human_report(
    records: list[dict],
    tasks: list[RankingTask],
    vigilance_fail_threshold: int = 0,
) -> EvalReport:
    """Mean Spearman correlation of human rankings, excluding vigilance
    rounds and every session with more vigilance failures than allowed."""
    by_id = {t.task_id: t for t in tasks}
    fails: dict[str, int] = {}
    for rec in records:
        if rec.get("is_vigilance") and rec.get("vigilance_pass") is False:
            fails[rec["session"]] = fails.get(rec["session"], 0) + 1
    flagged = {s for s, c in fails.items() if c > vigilance_fail_threshold}

    rhos = []
    items = []
    for rec in records:
        if rec.get("is_vigilance") or rec["session"] in flagged:
            continue
        task = by_id.get(rec["task_id"])
        if task is None:
            continue
        rho = human_rho(task, rec["served_query_ids"], rec["order"])
        rhos.append(rho)
        items.append(
            {"session": rec["session"], "round_id": rec["round_id"], "rho": rho}
        )
    if not rhos:
        raise ValueError("no valid responses after vigilance filtering")
    return EvalReport(
        "completion/human",
        0,
        {"rank_correlation": float(np.mean(rhos))},
        items + [{"flagged_sessions": sorted(flagged)}],
    )


def create_app(
    tasks: list[RankingTask],
    log_path,
    labels: dict[str, str] | None = None,
    seed: int = 0,
    vigilance_rate: int = 5,
    vigilance_fail_threshold: int = 0,
) -> FastAPI:
    app = FastAPI(title="relsets ranking service")
    normal = [t for t in tasks if not t.is_vigilance]
    vigilance = [t for t in tasks if t.is_vigilance]
    log = ResponseLog(log_path)
    sessions: dict[str, SessionState] = {}
    sessions_lock = threading.Lock()
    labels = labels or {}

    def display(video_id: str) -> dict:
        item = {"id": video_id, "label": labels.get(video_id, video_id)}
        thumb = labels.get(f"{video_id}:thumbnail")
        if thumb:
            item["thumbnail"] = thumb
        return item

    def get_session(session: str) -> SessionState:
        with sessions_lock:
            state = sessions.get(session)
            if state is None:
                rng = np.random.default_rng(_session_seed(seed, session))
                nq = [normal[i] for i in rng.permutation(len(normal))]
                vq = [vigilance[i] for i in rng.permutation(len(vigilance))] if vigilance else []
                state = SessionState(rng=rng, normal_queue=nq, vigilance_queue=vq)
                sessions[session] = state
        return state

    @app.get("/api/round")
    def serve_round(session: str, n: int | None = None):
        if not session:
            raise HTTPException(status_code=400, detail="session token required")
        state = get_session(session)
        want_vigilance = (
            vigilance_rate > 0
            and state.vigilance_queue
            and state.served_count % vigilance_rate == vigilance_rate - 1
        )
        queue = state.vigilance_queue if want_vigilance else state.normal_queue

        def matches(t: RankingTask) -> bool:
            return n is None or len(t.reference_ids) == n

        idx = next((i for i, t in enumerate(queue) if matches(t)), None)
        if idx is None and want_vigilance:
            queue = state.normal_queue
            idx = next((i for i, t in enumerate(queue) if matches(t)), None)
        if idx is None:
            return {"status": "complete"}
        task = queue.pop(idx)
        perm = [int(i) for i in state.rng.permutation(5)]
        served_query_ids = [task.query_ids[i] for i in perm]
        round_id = f"{session}-{state.served_count:04d}"
        state.rounds[round_id] = ServedRound(round_id, task, served_query_ids)
        state.served_count += 1
        return {
            "status": "ok",
            "round_id": round_id,
            "n": len(task.reference_ids),
            "reference": [display(v) for v in task.reference_ids],
            "queries": [display(q) for q in served_query_ids],
        }

    @app.post("/api/response")
    def submit_response(body: SubmitBody):
        state = sessions.get(body.session)
        if state is None:
            raise HTTPException(status_code=404, detail="unknown session")
        served = state.rounds.get(body.round_id)
        if served is None:
            raise HTTPException(status_code=404, detail="unknown round")
        if sorted(body.order) != [0, 1, 2, 3, 4]:
            raise HTTPException(
                status_code=400, detail="order must be a permutation of 0..4"
            )
        if served.submitted:
            raise HTTPException(status_code=409, detail="duplicate submission")

        task = served.task
        verdict = None
        if task.is_vigilance:
            placed = [served.served_query_ids[i] for i in body.order]
            verdict = (
                placed[-1] == task.planted_similar_id
                and placed[0] == task.planted_dissimilar_id
            )
        record = {
            "session": body.session,
            "round_id": body.round_id,
            "task_id": task.task_id,
            "served_query_ids": served.served_query_ids,
            "order": body.order,
            "timestamp": time.time(),
            "is_vigilance": task.is_vigilance,
            "vigilance_pass": verdict,
        }
        if not log.append(record):
            raise HTTPException(status_code=409, detail="duplicate submission")
        served.submitted = True
        return {"accepted": True, "vigilance": verdict}

    @app.get("/api/report")
    def report():
        try:
            rep = human_report(log.records(), tasks, vigilance_fail_threshold)
        except (FileNotFoundError, ValueError) as e:
            raise HTTPException(status_code=404, detail=str(e))
        return {"task": rep.task, "metrics": rep.metrics, "items": rep.items}

    return app
