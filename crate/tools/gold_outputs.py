"""Fill in expected_output for benchmark tasks by running their gold code.

Usage: python3 tools/gold_outputs.py FEED_DIR TASKS_JSON [--gazetteer PATH] [--check]

The feed directory is loaded the way the sandbox worker presents a prepared
feed: one pandas DataFrame per file, times as seconds since midnight,
all-empty columns dropped, unreferenced rows pruned and shape distances
filled in kilometers. Each task's gold_code runs with `feed` and the custom
helper functions in scope; its `result` becomes the task's expected_output.
With --check the file is left alone and the exit status reports whether the
stored outputs are current.
"""

import argparse
import difflib
import json
import math
import re
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pandas as pd

EARTH_RADIUS_KM = 6371.0088

TIME_FIELDS = {"arrival_time", "departure_time", "start_time", "end_time"}
FLOAT_FIELDS = {"stop_lat", "stop_lon", "shape_pt_lat", "shape_pt_lon", "shape_dist_traveled", "price"}
INT_FIELDS = {
    "route_type", "direction_id", "stop_sequence", "shape_pt_sequence", "pickup_type", "drop_off_type",
    "location_type", "wheelchair_boarding", "wheelchair_accessible", "bikes_allowed", "monday", "tuesday",
    "wednesday", "thursday", "friday", "saturday", "sunday", "exception_type", "payment_method", "transfers",
}
DATE_FIELDS = {"start_date", "end_date", "date"}


def parse_time(s):
    h, m, sec = s.split(":")
    return int(h) * 3600 + int(m) * 60 + int(sec)


def haversine_km(lat1, lon1, lat2, lon2):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp, dl = p2 - p1, np.radians(lon2) - np.radians(lon1)
    a = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(a))


def load_feed(feed_dir):
    tables = {}
    for path in sorted(Path(feed_dir).glob("*.txt")):
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8-sig")
        df.columns = [c.strip() for c in df.columns]
        df = df.apply(lambda col: col.str.strip().mask(col.str.strip() == ""))
        for col in df.columns:
            if col in TIME_FIELDS:
                df[col] = df[col].map(lambda s: parse_time(s) if isinstance(s, str) else pd.NA).astype("Int64")
            elif col in FLOAT_FIELDS:
                df[col] = df[col].astype(float)
            elif col in INT_FIELDS:
                df[col] = df[col].astype(float).astype("Int64")
            elif col in DATE_FIELDS:
                df[col] = pd.to_datetime(df[col], format="%Y%m%d").dt.date
        tables[path.stem] = df

    while True:
        before = {k: len(v) for k, v in tables.items()}
        if "shapes" in tables:
            tables["shapes"] = tables["shapes"][tables["shapes"].shape_id.isin(tables["trips"].shape_id)]
        tables["stops"] = tables["stops"][tables["stops"].stop_id.isin(tables["stop_times"].stop_id)]
        tables["trips"] = tables["trips"][tables["trips"].trip_id.isin(tables["stop_times"].trip_id)]
        tables["routes"] = tables["routes"][tables["routes"].route_id.isin(tables["trips"].route_id)]
        if before == {k: len(v) for k, v in tables.items()}:
            break

    if "shapes" in tables and "shape_dist_traveled" not in tables["shapes"].columns:
        shapes = tables["shapes"].sort_values(["shape_id", "shape_pt_sequence"], kind="stable")
        prev_lat = shapes.groupby("shape_id").shape_pt_lat.shift()
        prev_lon = shapes.groupby("shape_id").shape_pt_lon.shift()
        step = haversine_km(prev_lat, prev_lon, shapes.shape_pt_lat, shapes.shape_pt_lon).fillna(0.0)
        shapes["shape_dist_traveled"] = step.groupby(shapes.shape_id).cumsum()
        tables["shapes"] = shapes

    for name, df in list(tables.items()):
        df = df.dropna(axis=1, how="all").reset_index(drop=True)
        if df.empty:
            del tables[name]
        else:
            tables[name] = df
    return SimpleNamespace(**tables)


def partial_ratio(a, b):
    a, b = a.lower(), b.lower()
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if not short:
        return 0
    best = 0.0
    for i in range(len(long_) - len(short) + 1):
        best = max(best, difflib.SequenceMatcher(None, short, long_[i:i + len(short)]).ratio())
    return round(100 * best)


def words(text):
    return set(re.sub(r"[^\w\s]", " ", text.lower()).split())


def make_helpers(gazetteer):
    def find_route(feed, text, threshold=80):
        routes = feed.routes.copy()
        fields = [c for c in ("route_id", "route_short_name", "route_long_name") if c in routes.columns]

        def score(row):
            if row.route_id == text:
                return 100
            return max(partial_ratio(text, str(row[c])) for c in fields if isinstance(row[c], str))

        routes["match_score"] = routes.apply(score, axis=1)
        hits = routes[routes.match_score >= threshold].sort_values("match_score", ascending=False, kind="stable")
        return hits[fields + ["match_score"]].reset_index(drop=True)

    def find_stops_by_full_name(feed, name, threshold=80):
        stops = feed.stops.copy()
        stops["match_score"] = stops.stop_name.map(lambda s: partial_ratio(name, s))
        hits = stops[stops.match_score >= threshold].sort_values("match_score", ascending=False, kind="stable")
        return hits[["stop_id", "stop_name", "stop_lat", "stop_lon", "match_score"]].reset_index(drop=True)

    def find_stops_by_street(feed, street_root):
        root = street_root.lower()
        mask = feed.stops.stop_name.map(lambda s: root in words(s))
        hits = feed.stops[mask].copy()
        hits["match_score"] = 100
        return hits[["stop_id", "stop_name", "stop_lat", "stop_lon", "match_score"]].reset_index(drop=True)

    def find_stops_by_intersection(feed, street_root_a, street_root_b):
        a, b = street_root_a.lower(), street_root_b.lower()
        mask = feed.stops.stop_name.map(lambda s: a in words(s) and b in words(s))
        hits = feed.stops[mask].copy()
        hits["match_score"] = 100
        return hits[["stop_id", "stop_name", "stop_lat", "stop_lon", "match_score"]].reset_index(drop=True)

    def find_stops_by_address(feed, address, radius_meters=200, num_stops=5):
        columns = ["stop_id", "stop_name", "stop_lat", "stop_lon", "distance_meters"]
        if address not in gazetteer:
            return pd.DataFrame(columns=columns)
        lat, lon = gazetteer[address]
        stops = feed.stops.copy()
        stops["distance_meters"] = 1000 * haversine_km(lat, lon, stops.stop_lat, stops.stop_lon)
        hits = stops[stops.distance_meters <= radius_meters].sort_values("distance_meters", kind="stable")
        return hits[columns].head(num_stops).reset_index(drop=True)

    return {
        "find_route": find_route,
        "find_stops_by_full_name": find_stops_by_full_name,
        "find_stops_by_street": find_stops_by_street,
        "find_stops_by_intersection": find_stops_by_intersection,
        "find_stops_by_address": find_stops_by_address,
    }


def to_json(value):
    if isinstance(value, dict):
        return {str(k): to_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_json(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return None if math.isnan(value) else float(value)
    if value is pd.NA:
        return None
    if isinstance(value, (str, int, bool)) or value is None:
        return value
    raise TypeError(f"result holds a non-JSON value of type {type(value).__name__}")


def run_gold(task, feed, helpers):
    scope = {"feed": feed, "pd": pd, "np": np, **helpers}
    exec(compile(task["gold_code"], task["task_id"], "exec"), scope)
    result = scope["result"]
    out = {"answer": to_json(result["answer"]), "additional_info": to_json(result.get("additional_info"))}
    if task.get("requires_visualization") and "visualization" not in result:
        raise ValueError(f"{task['task_id']}: visualization task produced no figure")
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("feed_dir")
    ap.add_argument("tasks")
    ap.add_argument("--gazetteer", default=None)
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()

    gaz_path = Path(args.gazetteer) if args.gazetteer else Path(args.feed_dir).parent / "gazetteer.json"
    gazetteer = json.loads(gaz_path.read_text()) if gaz_path.exists() else {}
    feed = load_feed(args.feed_dir)
    helpers = make_helpers(gazetteer)

    tasks = json.loads(Path(args.tasks).read_text())
    stale = []
    for task in tasks:
        out = run_gold(task, feed, helpers)
        if task.get("expected_output") != out:
            stale.append(task["task_id"])
        task["expected_output"] = out
    if args.check:
        for t in stale:
            print(f"stale: {t}")
        return 1 if stale else 0
    Path(args.tasks).write_text(json.dumps(tasks, indent=2, ensure_ascii=False) + "\n")
    print(f"wrote {len(tasks)} tasks ({len(stale)} changed)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
