#!/usr/bin/env python3
"""Brute-force reference for the batch event log.

Straight-line, one pass per tick, no shared code with the engine. Reads a
fixture directory and prints the expected log to stdout.

    python3 oracle.py concert60 > concert60/golden.log
"""

import csv
import hashlib
import json
import math
import re
import string
import sys
from pathlib import Path

TICK_MS = 1000
Z_WINDOW = 5
Z_THRESHOLD = 1.0
INFLUENCE = 0.0
SIGMA_FLOOR = 1.0
SINGALONG_THRESHOLD = 0.3
CHEER_REFRACTORY = 5
HOLD_TICKS = 5
TEMPO_THRESHOLD = 100.0
NOMINAL_BPM = 120.0

RANK = {"low": 0, "neutral": 1, "high": 2}


def dumps(obj):
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def ordered_pairs(text):
    return json.loads(text, object_pairs_hook=list)


def tokens(text):
    text = text.lower()
    text = "".join(" " if c in string.punctuation else c for c in text)
    return text.split()


def main(fixture):
    d = Path(fixture)
    timeline_text = (d / "timeline.json").read_text(encoding="utf-8")
    lexicon_text = (d / "lexicon.json").read_text(encoding="utf-8")
    bins_text = (d / "label_bins.json").read_text(encoding="utf-8")
    mapping_text = (d / "mapping.json").read_text(encoding="utf-8")

    h = hashlib.sha256()
    for part in (timeline_text, lexicon_text, bins_text, mapping_text):
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    params = {
        "tick_ms": TICK_MS,
        "z_window": Z_WINDOW,
        "z_threshold": Z_THRESHOLD,
        "influence": INFLUENCE,
        "sigma_floor": SIGMA_FLOOR,
        "singalong_threshold": SINGALONG_THRESHOLD,
        "cheer_refractory_ticks": CHEER_REFRACTORY,
        "emotion_hold_ticks": HOLD_TICKS,
        "tempo_threshold_bpm": TEMPO_THRESHOLD,
        "nominal_bpm": NOMINAL_BPM,
    }
    h.update(dumps(params).encode("utf-8"))
    out = [dumps({"seed": 42, "config_hash": h.hexdigest()})]

    timeline = json.loads(timeline_text)
    segments = timeline["segments"]
    windows = timeline.get("singalong_windows", [])

    # lexicon: term -> label; label precedence = first appearance
    term_label = {}
    label_order = []
    for term, label in ordered_pairs(lexicon_text):
        term_label[term.lower()] = label
        if label not in label_order:
            label_order.append(label)
    label_bin = {k: (v["arousal"], v["valence"]) for k, v in json.loads(bins_text).items()}

    mapping = json.loads(mapping_text)
    move_rule = {}
    for r in mapping["movement_rules"]:
        move_rule[(r["phase"], r.get("tempo"), r["arousal"], r["valence"])] = r["movement"]
    cheer_rule = {(r["arousal"], r["valence"]): r["cheer"] for r in mapping["cheer_rules"]}

    messages = []
    with open(d / "chat.csv", newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            raw = row.get("time_ms")
            if raw is None or not raw.isdigit() or row.get("author") is None or row.get("message") is None:
                continue
            messages.append((int(raw), row["message"]))
    messages.sort(key=lambda m: m[0])

    end_ms = segments[-1]["end_ms"]
    n_ticks = math.ceil(end_ms / TICK_MS)

    current_bin = ("neutral", "neutral")
    silent = 0
    seen = False
    buffer = []
    in_surge = False
    triggered = set()
    last_move = None
    last_cheer = None

    for k in range(n_ticks):
        start = k * TICK_MS
        end = start + TICK_MS
        batch = [text for t, text in messages if start <= t < end]

        seg = next(s for s in segments if s["start_ms"] <= start < s["end_ms"])
        win = next((w for w in windows if w["start_ms"] <= start < w["end_ms"]), None)

        # dominant bin
        counts = {}
        for text in batch:
            hits = {}
            for tok in tokens(text):
                if tok in term_label:
                    lab = term_label[tok]
                    hits[lab] = hits.get(lab, 0) + 1
            if not hits:
                continue
            top = max(hits.values())
            label = next(l for l in label_order if hits.get(l, 0) == top)
            b = label_bin[label]
            counts[b] = counts.get(b, 0) + 1
        if counts:
            current_bin = max(counts, key=lambda b: (counts[b], RANK[b[1]], RANK[b[0]]))
            silent = 0
            seen = True
        else:
            silent += 1
            if silent > HOLD_TICKS:
                current_bin = ("neutral", "neutral")
        evidence = seen and silent <= HOLD_TICKS

        # surge
        rate = len(batch) * 1000 / (end - start)
        surge = False
        if len(buffer) < Z_WINDOW:
            buffer.append(rate)
        else:
            mu = sum(buffer) / len(buffer)
            sd = math.sqrt(sum((x - mu) ** 2 for x in buffer) / len(buffer))
            z = (rate - mu) / max(sd, SIGMA_FLOOR)
            above = z > Z_THRESHOLD
            surge = above and not in_surge
            in_surge = above
            buffer.pop(0)
            buffer.append(INFLUENCE * rate + (1 - INFLUENCE) * mu if above else rate)

        # singalong
        sing = None
        if win is not None and win["id"] not in triggered and batch:
            hits = sum(1 for text in batch if any(re.search(p, text.lower(), re.I) for p in win["patterns"]))
            if hits / len(batch) > SINGALONG_THRESHOLD:
                triggered.add(win["id"])
                sing = win["id"]

        a, v = current_bin
        out.append(dumps({"t_ms": start, "kind": "tick", "arousal": a, "valence": v, "rate": rate}))

        if evidence:
            if seg["kind"] == "performance":
                tempo = "fast" if seg["bpm"] > TEMPO_THRESHOLD else "slow"
            else:
                tempo = None
            movement = move_rule[(seg["kind"], tempo, a, v)]
            if movement == "idle" or seg["kind"] != "performance":
                pr = 1.0
            else:
                pr = min(max(seg["bpm"] / NOMINAL_BPM, 0.5), 2.0)
        else:
            movement, pr = "idle", 1.0
        if last_move != (movement, pr):
            last_move = (movement, pr)
            out.append(dumps({"t_ms": start, "kind": "movement", "movement": movement, "playback_rate": pr}))

        if surge:
            cheer = cheer_rule[(a, v)]
            if cheer != "none" and (last_cheer is None or k - last_cheer >= CHEER_REFRACTORY):
                last_cheer = k
                out.append(dumps({"t_ms": start, "kind": "cheer", "cheer": cheer}))

        if sing is not None:
            out.append(dumps({"t_ms": start, "kind": "singalong", "window_id": sing}))

    sys.stdout.write("\n".join(out) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else str(Path(__file__).resolve().parent / "concert60"))
