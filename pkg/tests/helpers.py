"""Shared test plumbing: acceptance result registry and prediction fingerprints."""
from greenhop import encoder as enc_mod
from greenhop import pipeline

CRITERIA = {
    1: "Saab correctness suite",
    2: "energy guarantee per hop",
    3: "select_k oracle and per-hop K table",
    4: "resolution chain and level-4 patch averaging",
    5: "GBT monotonicity, micro-cases, exhaustive split oracle",
    6: "end-to-end phantom segmentation",
    7: "end-to-end phantom classification",
    8: "metrics identities",
    9: "determinism and persistence",
    10: "parameter census",
}

RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


def check(criterion: int, name: str, ok: bool, detail: str = "") -> None:
    """Record one acceptance sub-check, then assert it."""
    RESULTS.setdefault(criterion, []).append((name, bool(ok), detail))
    assert ok, f"criterion {criterion} ({name}) failed: {detail}"


def summary_lines() -> list[str]:
    lines = []
    for n, title in CRITERIA.items():
        checks = RESULTS.get(n)
        if not checks:
            lines.append(f"[NOT RUN] criterion {n:2d}: {title}")
            continue
        status = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        lines.append(f"[{status}] criterion {n:2d}: {title}")
        for name, ok, detail in checks:
            lines.append(f"      {'ok ' if ok else 'BAD'} {name}" + (f"  ({detail})" if detail else ""))
    return lines


def prediction_bytes(container, vols):
    out = []
    for v in vols:
        f = enc_mod.encode(container.encoder, v)
        p = pipeline._predict_one(container, "x", f, True, True)
        out.append((p.probs.tobytes(), p.masks.tobytes(), p.label, p.proba.tobytes()))
    return out
