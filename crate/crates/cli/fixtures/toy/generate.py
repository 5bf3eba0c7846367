"""Writes the toy fixture: scene graphs, annotations, detections, and a
self-consistent eval pair. Deterministic; rerun after editing."""

import json
import random
from collections import Counter
from pathlib import Path

HERE = Path(__file__).resolve().parent
W = H = 32
CW = CH = 16

# (name, attributes, box) per image; boxes are disjoint and on even coordinates
IMAGES = {
    1: [("cup", ["red"], (2, 2, 8, 8)), ("cup", ["blue"], (14, 2, 8, 8)), ("table", ["wooden"], (2, 14, 20, 8)),
        ("grass", ["green"], (0, 24, 32, 8)), ("lamp", [], (24, 2, 6, 10))],
    2: [("dog", ["brown"], (2, 2, 10, 8)), ("dog", ["brown"], (18, 2, 10, 8)), ("mat", ["blue"], (2, 12, 10, 6)),
        ("tree", ["green"], (18, 12, 10, 12)), ("sky", ["blue"], (0, 26, 16, 6))],
    3: [("man", ["tall"], (2, 2, 8, 16)), ("hat", ["red"], (12, 2, 6, 4)), ("bench", ["wooden"], (12, 10, 16, 6)),
        ("grass", ["green"], (0, 22, 32, 10)), ("cat", ["black"], (20, 2, 8, 6))],
}
RELATIONS = {
    # (image, subject index, predicate, object index)
    1: [(0, "on", 2), (1, "on", 2), (4, "near", 2)],
    2: [(0, "on", 2), (1, "near", 3), (3, "above", 4)],
    3: [(0, "wearing", 1), (4, "near", 2), (2, "on", 3)],
}


def more_images(rng):
    """Images 4..12: five distinct categories each, random disjoint boxes."""
    names = ["cup", "table", "lamp", "dog", "mat", "tree", "man", "hat", "bench", "cat", "car", "bike", "grass", "sky"]
    colors = ["red", "blue", "green", "black", "white"]
    for image_id in range(4, 13):
        picked = rng.sample(names, 5)
        cells = rng.sample([(cx, cy) for cx in range(3) for cy in range(3)], 5)
        objs = []
        for name, (cx, cy) in zip(picked, cells):
            w = rng.choice([6, 8])
            h = rng.choice([6, 8])
            x = cx * 10 + rng.choice([0, 2])
            y = cy * 10 + rng.choice([0, 2])
            objs.append((name, [rng.choice(colors)], (x, y, w, h)))
        IMAGES[image_id] = objs
        RELATIONS[image_id] = [(0, rng.choice(["on", "near"]), 1), (2, "near", 3)]


def rle(size_w, size_h, box):
    x0, y0, w, h = box
    counts, cur, run = [], False, 0
    for x in range(size_w):
        for y in range(size_h):
            v = x0 <= x < x0 + w and y0 <= y < y0 + h
            if v != cur:
                counts.append(run)
                cur, run = v, 0
            run += 1
    counts.append(run)
    return {"size": [size_h, size_w], "counts": counts}


def rect(box):
    x, y, w, h = box
    return [x, y, x + w, y, x + w, y + h, x, y + h]


def main():
    rng = random.Random(7)
    more_images(rng)

    graphs = []
    for image_id, objs in sorted(IMAGES.items()):
        rels = {i: [] for i in range(len(objs))}
        for s, p, o in RELATIONS[image_id]:
            rels[s].append({"predicate": p, "object_id": image_id * 100 + o})
        graphs.append({
            "image_id": image_id, "width": W, "height": H,
            "objects": [{"id": image_id * 100 + i, "box": list(b), "names": [n], "attributes": a,
                         "relationships": rels[i]} for i, (n, a, b) in enumerate(objs)],
        })
    with open(HERE / "graphs.jsonl", "w") as f:
        for g in graphs:
            f.write(json.dumps(g, separators=(",", ":")) + "\n")

    # vocabulary order: frequency descending, ties alphabetical
    freq = Counter(n for objs in IMAGES.values() for n, _, _ in objs)
    vocab = sorted(freq, key=lambda n: (-freq[n], n))
    attrs = sorted({a for objs in IMAGES.values() for _, al, _ in objs for a in al})

    with open(HERE / "detections.jsonl", "w") as f:
        for image_id, objs in sorted(IMAGES.items()):
            dets = []
            for n, al, (x, y, w, h) in objs:
                dets.append({
                    "category_index": vocab.index(n), "score": 0.9,
                    "rle": rle(CW, CH, (x // 2, y // 2, w // 2, h // 2)),
                    "attributes": [[attrs.index(a), 0.8] for a in al],
                })
            f.write(json.dumps({"image_id": image_id, "detections": dets}, separators=(",", ":")) + "\n")

    ann = []
    for image_id, objs in sorted(IMAGES.items()):
        for i, (_, _, b) in enumerate(objs):
            task_id = f"{image_id}_{image_id * 100 + i}"
            x, y, w, h = b
            ann.append({"task_id": task_id, "worker_id": "alice", "polygons": [rect(b)]})
            # two overlapping halves; refinement merges them back
            half = w // 2
            ann.append({"task_id": task_id, "worker_id": "bob",
                        "polygons": [rect((x, y, half + 1, h)), rect((x + half, y, w - half, h))]})
            ann.append({"task_id": task_id, "worker_id": "carol", "polygons": [rect(b)]})
            if image_id <= 4:
                ann.append({"task_id": task_id, "worker_id": "mallory",
                            "polygons": [rect((rng.randrange(0, 28), rng.randrange(0, 28), 3, 3))]})
            if image_id == 1:
                ann.append({"task_id": task_id, "worker_id": "dave", "polygons": [rect(b)]})
    ann.append({"task_id": "99_9900", "worker_id": "alice", "polygons": [rect((0, 0, 4, 4))]})
    with open(HERE / "annotations.jsonl", "w") as f:
        for a in ann:
            f.write(json.dumps(a, separators=(",", ":")) + "\n")

    # eval fixture: predictions identical to the ground truth
    eval_tasks = [
        ("1_100", "red cup", {"category": "cup", "attributes": ["red"]}, [(2, 2, 8, 8)], ["att", "att+", "single", "mid", "obj"]),
        ("2_203", "green tree", {"category": "tree", "attributes": ["green"]}, [(18, 12, 10, 12)], ["cat+", "att", "single", "mid", "obj"]),
        ("3_303", "grass", {"category": "grass", "attributes": []}, [(0, 22, 32, 10)], ["cat+", "single", "large", "stuff"]),
        ("1_999", "two cups", {"category": "cups", "attributes": []}, [(2, 2, 8, 8), (14, 2, 8, 8)], ["multi", "mid", "obj"]),
    ]
    with open(HERE / "eval_tasks.jsonl", "w") as tf, open(HERE / "eval_preds.jsonl", "w") as pf:
        for task_id, phrase, structure, boxes, tags in eval_tasks:
            image_id, box_id = task_id.split("_")
            inst = [{"rle": rle(W, H, b), "box": list(b)} for b in boxes]
            tf.write(json.dumps({
                "task_id": task_id, "image_id": int(image_id), "width": W, "height": H, "phrase": phrase,
                "structure": structure, "subset_tags": tags, "source_box_id": int(box_id),
                "vg_boxes": [list(b) for b in boxes], "instances": inst,
            }, separators=(",", ":")) + "\n")
            union = [[0] * H for _ in range(W)]
            for bx, by, bw, bh in boxes:
                for x in range(bx, bx + bw):
                    for y in range(by, by + bh):
                        union[x][y] = 1
            counts, cur, run = [], 0, 0
            for x in range(W):
                for y in range(H):
                    if union[x][y] != cur:
                        counts.append(run)
                        cur, run = union[x][y], 0
                    run += 1
            counts.append(run)
            pf.write(json.dumps({"task_id": task_id, "rle": {"size": [H, W], "counts": counts}},
                                separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main()
