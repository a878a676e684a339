"""Scenario JSON (versioned schema) and highD-style CSV ingestion."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .geometry import AgentState, Box2, EgoLimits, EgoState, MotionBounds, Road, Scenario

SCHEMA_VERSION = 1

CSV_COLUMNS = ("frame", "id", "x", "y", "width", "height", "xVelocity", "yVelocity")

DEFAULT_BOUNDS = {"aMaxLong": 6.0, "aMaxLat": 0.5, "vMaxLong": 45.0, "vMinLong": 0.0, "vMaxLat": 0.5}


class ScenarioParseError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def _num(v):
    """JSON has no infinities; unbounded road edges are stored as null."""
    return None if v is None or math.isinf(v) else float(v)


def _inf(v, sign):
    return sign * math.inf if v is None else float(v)


def bounds_to_dict(b: MotionBounds) -> dict:
    return {"aMaxLong": b.a_max_long, "aMaxLat": b.a_max_lat, "vMaxLong": b.v_max_long,
            "vMinLong": b.v_min_long, "vMaxLat": b.v_max_lat}


def bounds_from_dict(d: dict) -> MotionBounds:
    d = {**DEFAULT_BOUNDS, **d}
    return MotionBounds(float(d["aMaxLong"]), float(d["aMaxLat"]), float(d["vMaxLong"]),
                        float(d["vMinLong"]), float(d["vMaxLat"]))


def scenario_to_dict(sc: Scenario) -> dict:
    out = {
        "schemaVersion": SCHEMA_VERSION,
        "name": sc.name,
        "dt": sc.dt,
        "horizon": sc.horizon,
        "direction": sc.direction,
        "road": {"yMin": _num(sc.road.y_min), "yMax": _num(sc.road.y_max), "laneWidth": sc.road.lane_width},
        "actionBox": {"x": [sc.action_box.x.lo, sc.action_box.x.hi], "y": [sc.action_box.y.lo, sc.action_box.y.hi]},
        "egoLimits": {"aMaxLong": sc.ego_limits.a_max_long, "aMaxLat": sc.ego_limits.a_max_lat},
        "ego": {"px": sc.ego.px, "py": sc.ego.py, "vx": sc.ego.vx, "vy": sc.ego.vy,
                "halfLen": sc.ego.half_len, "halfWid": sc.ego.half_wid},
        "others": [
            {"id": o.id, "px": o.px, "py": o.py, "vx": o.vx, "vy": o.vy, "halfLen": o.half_len,
             "halfWid": o.half_wid, "bounds": bounds_to_dict(o.bounds)}
            for o in sc.others
        ],
    }
    if sc.ego_track is not None:
        out["egoTrack"] = np.asarray(sc.ego_track).tolist()
    if sc.other_tracks is not None:
        out["otherTracks"] = {
            str(k): [[None if math.isnan(v) else v for v in row] for row in np.asarray(tr).tolist()]
            for k, tr in sorted(sc.other_tracks.items())
        }
    return out


def scenario_from_dict(d: dict) -> Scenario:
    try:
        version = d.get("schemaVersion")
        if version != SCHEMA_VERSION:
            raise ScenarioParseError(f"unsupported schemaVersion {version!r}")
        road = Road(_inf(d["road"].get("yMin"), -1), _inf(d["road"].get("yMax"), 1),
                    float(d["road"].get("laneWidth", 3.75)))
        e = d["ego"]
        ego = EgoState(float(e["px"]), float(e["py"]), float(e["vx"]), float(e["vy"]),
                       float(e.get("halfLen", 2.5)), float(e.get("halfWid", 1.0)))
        others = tuple(
            AgentState(float(o["px"]), float(o["py"]), float(o["vx"]), float(o["vy"]),
                       bounds_from_dict(o.get("bounds", {})), float(o.get("halfLen", 2.5)),
                       float(o.get("halfWid", 1.0)), int(o.get("id", i)))
            for i, o in enumerate(d.get("others", []))
        )
        kw = {}
        if "actionBox" in d:
            kw["action_box"] = Box2.from_bounds(*d["actionBox"]["x"], *d["actionBox"]["y"])
        if "egoLimits" in d:
            kw["ego_limits"] = EgoLimits(float(d["egoLimits"]["aMaxLong"]), float(d["egoLimits"]["aMaxLat"]))
        ego_track = np.array(d["egoTrack"], dtype=float) if "egoTrack" in d else None
        other_tracks = None
        if "otherTracks" in d:
            other_tracks = {
                int(k): np.array([[np.nan if v is None else v for v in row] for row in tr], dtype=float)
                for k, tr in d["otherTracks"].items()
            }
        return Scenario(road, ego, others, float(d.get("dt", 0.2)), int(d.get("horizon", 20)),
                        direction=int(d.get("direction", 1)), ego_track=ego_track,
                        other_tracks=other_tracks, name=str(d.get("name", "")), **kw)
    except ScenarioParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(f"malformed scenario: {exc!r}") from exc


def dump_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=1, sort_keys=True))


def load_scenario(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return scenario_from_dict(data)


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ScenarioParseError(f"{path}: line 1: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise ScenarioParseError(f"{path}: line 1: missing column(s) {', '.join(missing)}")
        idx = {c: header.index(c) for c in CSV_COLUMNS}
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            try:
                rows.append((lineno, {c: float(rec[i]) for c, i in idx.items()}))
            except (ValueError, IndexError) as exc:
                raise ScenarioParseError(f"{path}: line {lineno}: {exc}") from exc
    if not rows:
        raise ScenarioParseError(f"{path}: line 2: no data rows")
    return rows


def ingest_csv(path, config: dict) -> list:
    """Cut a highD-style track file into scenarios around the configured ego track.

    ``x, y`` are the upper-left corner of the bounding box (highD convention),
    ``width`` its longitudinal and ``height`` its lateral size. ``config`` is
    the sidecar: ``frameRate``, ``egoId``, optional ``frameStep`` (frames per
    stage), ``horizon``, ``road``, ``direction``, ``motionBounds``,
    ``egoLimits``, ``actionBox``.
    """
    rows = _read_rows(path)
    if "egoId" not in config or "frameRate" not in config:
        raise ConfigError("sidecar config needs egoId and frameRate")
    ego_id = int(config["egoId"])
    step = int(config.get("frameStep", 1))
    T = int(config.get("horizon", 20))
    dt = step / float(config["frameRate"])

    tracks: dict = {}
    last_frame: dict = {}
    for lineno, r in rows:
        vid, frame = int(r["id"]), int(r["frame"])
        if vid in last_frame and frame <= last_frame[vid]:
            raise ScenarioParseError(f"{path}: line {lineno}: non-monotone frame {frame} for id {vid}")
        last_frame[vid] = frame
        cx = r["x"] + 0.5 * r["width"]
        cy = r["y"] + 0.5 * r["height"]
        tracks.setdefault(vid, {})[frame] = (cx, cy, r["xVelocity"], r["yVelocity"],
                                            0.5 * r["width"], 0.5 * r["height"])
    if ego_id not in tracks:
        raise ConfigError(f"ego id {ego_id} not present in {path}")

    road_cfg = config.get("road", {})
    road = Road(_inf(road_cfg.get("yMin"), -1), _inf(road_cfg.get("yMax"), 1),
                float(road_cfg.get("laneWidth", 3.75)))
    bounds = bounds_from_dict(config.get("motionBounds", {}))
    kw = {}
    if "actionBox" in config:
        kw["action_box"] = Box2.from_bounds(*config["actionBox"]["x"], *config["actionBox"]["y"])
    if "egoLimits" in config:
        kw["ego_limits"] = EgoLimits(float(config["egoLimits"]["aMaxLong"]), float(config["egoLimits"]["aMaxLat"]))

    ego_frames = sorted(tracks[ego_id])
    direction = int(config.get("direction", 1 if tracks[ego_id][ego_frames[0]][2] >= 0 else -1))
    scenarios = []
    start = ego_frames[0]
    while True:
        frames = [start + k * step for k in range(T)]
        if not all(f in tracks[ego_id] for f in frames):
            break
        e0 = tracks[ego_id][start]
        ego = EgoState(e0[0], e0[1], e0[2], e0[3], e0[4], e0[5])
        ego_track = np.array([tracks[ego_id][f][:4] for f in frames])
        others, other_tracks = [], {}
        for vid in sorted(tracks):
            if vid == ego_id or start not in tracks[vid]:
                continue
            o = tracks[vid][start]
            others.append(AgentState(o[0], o[1], o[2], o[3], bounds, o[4], o[5], vid))
            other_tracks[vid] = np.array(
                [tracks[vid][f][:4] if f in tracks[vid] else (np.nan,) * 4 for f in frames]
            )
        scenarios.append(Scenario(road, ego, tuple(others), dt, T, direction=direction,
                                  ego_track=ego_track, other_tracks=other_tracks,
                                  name=f"{Path(path).stem}:ego{ego_id}@{start}", **kw))
        start += T * step
    if not scenarios:
        raise ScenarioParseError(f"{path}: ego track {ego_id} shorter than {T} stages")
    return scenarios
