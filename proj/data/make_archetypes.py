"""Regenerates archetypes.json from the shape definitions below.

Profiles are 168 hourly multipliers starting Monday 00:00 local time,
normalized to mean 1. Run from this directory: python3 make_archetypes.py
"""
import json
import math


def bump(h, center, width):
    d = min(abs(h - center), 24 - abs(h - center))
    return math.exp(-0.5 * (d / width) ** 2)


def daytime(h, start, end, edge=1.0):
    rise = 1.0 / (1.0 + math.exp(-(h - start) / edge))
    fall = 1.0 / (1.0 + math.exp((h - end) / edge))
    return rise * fall


def commercial(d, h):
    v = 0.15 + 3.0 * bump(h, 12, 1.5) + 3.0 * bump(h, 18, 1.5) + 0.6 * daytime(h, 9, 20)
    return v * (0.5 if d >= 5 else 1.0)


def residential(d, h):
    return 1.0 + 1.0 * bump(h, 20, 2.0)


def golf(d, h):
    level = 3.0 if d >= 5 else 1.0
    return 0.05 + level * daytime(h, 7, 19)


def grocery(d, h):
    if d >= 5:
        return 0.3 + 2.0 * bump(h, 11, 2.0) + 2.0 * bump(h, 16, 2.0) + 0.8 * daytime(h, 9, 21)
    return 0.3 + 2.5 * bump(h, 18, 1.5) + 0.8 * daytime(h, 9, 21)


def intersection(d, h):
    if d >= 5:
        return 0.5 + 0.8 * bump(h, 13, 3.0)
    return 0.5 + 3.0 * bump(h, 8, 1.2) + 3.0 * bump(h, 17, 1.2)


def rural(d, h):
    return 1.0


ARCHETYPES = [
    ("commercial", 3.0, 0.2, commercial),
    ("residential", 1.5, 0.8, residential),
    ("golf", 1.0, 0.3, golf),
    ("grocery", 2.5, 0.25, grocery),
    ("intersection", 4.0, 0.2, intersection),
    ("rural", 0.15, 0.3, rural),
]


def main():
    out = []
    for name, rate, sigma, fn in ARCHETYPES:
        raw = [fn(k // 24, k % 24) for k in range(168)]
        mean = sum(raw) / len(raw)
        out.append({
            "name": name,
            "base_rate": rate,
            "noise_sigma": sigma,
            "profile": [round(v / mean, 12) for v in raw],
        })
    with open("archetypes.json", "w") as f:
        json.dump({"version": 1, "archetypes": out}, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
