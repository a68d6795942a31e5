"""Per-criterion bookkeeping for the acceptance suite."""

from collections import defaultdict

RESULTS: dict[int, list[tuple[str, bool]]] = defaultdict(list)

TITLES = {
    1: "basis invariants",
    2: "smoothness",
    3: "regular-region oracle",
    4: "extraordinary-vertex templates",
    5: "refinement properties",
    6: "dof counts",
    7: "convergence rates",
    8: "condition-number growth",
    9: "limit surface",
    10: "end-to-end reconstruction",
}


def record(criterion: int, label: str, ok: bool) -> bool:
    RESULTS[criterion].append((label, bool(ok)))
    return bool(ok)


def lines() -> list[str]:
    out = []
    for k, title in TITLES.items():
        checks = RESULTS.get(k)
        if not checks:
            out.append(f"criterion {k:2d} ({title}): NOT RUN")
            continue
        bad = [label for label, ok in checks if not ok]
        if bad:
            out.append(f"criterion {k:2d} ({title}): FAIL, {len(bad)}/{len(checks)} checks failed: " + "; ".join(bad))
        else:
            out.append(f"criterion {k:2d} ({title}): PASS ({len(checks)} checks)")
    return out
