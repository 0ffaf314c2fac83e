"""Recompute an advantage file from a trajectory dump without the engine.

Only the raw roll-out text, the task and the token log-probabilities are read
from the dump. Parsing, box overlap, support checks, stub grades, discounting,
masking, normalization and the clipped surrogate are all recomputed here and
compared against the engine's advantage file.

usage: python verify_advantage.py DUMP ADVANTAGE [--w-phys 0.2] [--epsilon 0.2] [--kl-beta 0.01]
"""

import argparse
import json
import math
import re
import sys

TOL = 1e-12
BOUND_TOL = 0.001
SUPPORT_TOL = 0.05

ANSWER = re.compile(r"<think>.*?</think>.*?<answer>(.*?)</answer>", re.S)
RECORD = re.compile(r'"new_object_id"\s*:\s*"([^"]+)"((?:\s*,\s*"[xyz]"\s*:\s*-?[0-9][0-9.eE+-]*)+)')
COORD = re.compile(r'"([xyz])"\s*:\s*(-?[0-9][0-9.eE+-]*)')


def round_half_away(x):
    return math.floor(x + 0.5) if x >= 0 else -math.floor(-x + 0.5)


def parse_turn(text):
    """Returns {object_id: {axis: (value, (start, end))}} with spans in `text`."""
    m = ANSWER.search(text)
    if m is None:
        raise ValueError("roll-out without think/answer tags")
    base = m.start(1)
    out = {}
    for rec in RECORD.finditer(m.group(1)):
        coords = {}
        for c in COORD.finditer(rec.group(2)):
            start = base + rec.start(2) + c.start(2)
            coords[c.group(1)] = (float(c.group(2)), (start, start + len(c.group(2))))
        out[rec.group(1)] = coords
    return out


def physics(task, parsed):
    room = task["room"]
    extent = [room["x"], room["y"], room["z"]]
    boxes = {}
    for obj in task["objects"]:
        c = [parsed[obj["id"]][a][0] for a in "xyz"]
        s = obj["size_m"]
        boxes[obj["id"]] = ([c[d] - s[d] / 2 for d in range(3)], [c[d] + s[d] / 2 for d in range(3)])
    ids = sorted(boxes)
    colliding = set()
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            (alo, ahi), (blo, bhi) = boxes[a], boxes[b]
            if all(min(ahi[d], bhi[d]) - max(alo[d], blo[d]) > 0 for d in range(3)):
                colliding.update((a, b))
    violating = set()
    for obj in task["objects"]:
        lo, hi = boxes[obj["id"]]
        if any(lo[d] < -BOUND_TOL or hi[d] > extent[d] + BOUND_TOL for d in range(3)):
            violating.add(obj["id"])
        if obj.get("placement_class", "floor") != "floor":
            raise ValueError("this checker only handles floor-class objects")
        if lo[2] > SUPPORT_TOL:
            violating.add(obj["id"])
    n = len(ids)
    penalty = {o: 0.5 * (o in colliding) + 0.5 * (o in violating) for o in ids}
    return len(colliding) / n, len(violating) / n, penalty


def stub_render(c, k, color_scheme=8):
    clamp = lambda v: min(10, max(1, int(v)))
    realism = clamp(round_half_away(10 * (1 - c)))
    functionality = clamp(round_half_away(10 * (1 - k)))
    layout = clamp(round_half_away(10 * (1 - 0.5 * c - 0.5 * k)))
    aesthetic = clamp(round_half_away((realism + functionality + layout) / 3))
    return (realism + functionality + layout + color_scheme + aesthetic) / 50


def check(name, got, want):
    if abs(got - want) > TOL * max(1.0, abs(want)):
        raise AssertionError(f"{name}: engine {got!r} vs recomputed {want!r}")


def verify_group(group, report, w_phys, eps, beta):
    task = group["task"]
    weights = group["weights"]
    gamma = group["gamma"]
    rows = []
    for traj in group["trajectories"]:
        discounted = 0.0
        labels = []
        penalty = None
        for t, turn in enumerate(traj["turns"], start=1):
            text = turn["rollout"]["raw_text"]
            parsed = parse_turn(text)
            c, k, penalty = physics(task, parsed)
            total = weights["format"] * 1.0 + weights["physics"] * (-0.2 * c - 0.2 * k) + weights["render"] * stub_render(c, k)
            check(f"trajectory {traj['index']} turn {t} total", turn["reward"]["total"], total)
            discounted += gamma ** t * total
            spans = [(oid, span) for oid, coords in parsed.items() for _, span in coords.values()]
            off = turn["text_offset"]
            for tok in turn["tokens"]:
                a, b = tok["char_span"][0] - off, tok["char_span"][1] - off
                hit = [oid for oid, (s, e) in spans if a < e and s < b]
                labels.append(hit[0] if hit else None)
        rows.append((traj, discounted, labels, penalty))

    rewards = [r[1] for r in rows]
    mu = sum(rewards) / len(rewards)
    sigma = math.sqrt(sum((r - mu) ** 2 for r in rewards) / len(rewards))
    check("mu", report["mu"], mu)
    check("sigma", report["sigma"], sigma)

    objective = 0.0
    for (traj, discounted, labels, penalty), out in zip(rows, report["trajectories"]):
        check(f"trajectory {traj['index']} discounted reward", out["discounted_reward"], discounted)
        tokens = [tok for turn in traj["turns"] for tok in turn["tokens"]]
        if len(tokens) != len(out["tokens"]):
            raise AssertionError("token count differs")
        terms = 0.0
        for k, (tok, label, got) in enumerate(zip(tokens, labels, out["tokens"])):
            want_label = {"kind": "not_coord"} if label is None else {"kind": "coord", "object_id": label}
            if {key: got["label"].get(key) for key in want_label} != want_label:
                raise AssertionError(f"token {k}: label {got['label']} vs {want_label}")
            adjusted = discounted - (w_phys * penalty[label] if label is not None else 0.0)
            adv = 0.0 if sigma < 1e-8 else (adjusted - mu) / sigma
            ratio = math.exp(tok["logprob_new"] - tok["logprob_old"])
            policy = min(ratio * adv, min(max(ratio, 1 - eps), 1 + eps) * adv)
            d = tok["logprob_ref"] - tok["logprob_new"]
            kl = math.exp(d) - d - 1
            check(f"token {k} advantage", got["advantage"], adv)
            check(f"token {k} policy term", got["policy_term"], policy)
            check(f"token {k} kl", got["kl_term"], kl)
            terms += policy - beta * kl
        objective += terms / len(tokens)
    objective /= len(rows)
    check("objective", report["objective"], objective)
    return sum(len(t["tokens"]) for t in report["trajectories"])


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("dump")
    ap.add_argument("advantage")
    ap.add_argument("--w-phys", type=float, default=0.2)
    ap.add_argument("--epsilon", type=float, default=0.2)
    ap.add_argument("--kl-beta", type=float, default=0.01)
    args = ap.parse_args(argv)
    groups = [json.loads(line) for line in open(args.dump) if line.strip()]
    reports = [json.loads(line) for line in open(args.advantage) if line.strip()]
    if len(groups) != len(reports):
        raise AssertionError("group count differs")
    tokens = sum(verify_group(g, r, args.w_phys, args.epsilon, args.kl_beta) for g, r in zip(groups, reports))
    print(f"ok: {len(groups)} group(s), {tokens} tokens agree within {TOL}")


if __name__ == "__main__":
    sys.exit(main())
