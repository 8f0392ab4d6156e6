"""Independent reference implementations used only by tests.

Deliberately written without importing the package under test, and with a
different algorithmic shape (explicit one-by-one matching instead of
Counter arithmetic), so agreement between the two is meaningful.
"""

import random
import string


def oracle_cell_counts(gold: list[str], pred: list[str]) -> tuple[int, int, int]:
    """(tp, fp, fn) for one cell by greedy one-to-one matching.

    Each predicted surface consumes at most one identical gold surface.
    Order cannot matter: matches are on exact string equality, so greedy
    matching is maximal for this bipartite structure.
    """
    remaining = list(gold)
    tp = 0
    fp = 0
    for p in pred:
        matched = False
        for i, g in enumerate(remaining):
            if g == p:
                del remaining[i]
                matched = True
                break
        if matched:
            tp += 1
        else:
            fp += 1
    fn = len(remaining)
    return tp, fp, fn


def oracle_set_cell_counts(gold: list[str], pred: list[str]) -> tuple[int, int, int]:
    gold_u = []
    for g in gold:
        if g not in gold_u:
            gold_u.append(g)
    pred_u = []
    for p in pred:
        if p not in pred_u:
            pred_u.append(p)
    return oracle_cell_counts(gold_u, pred_u)


def oracle_prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    if tp + fp == 0:
        p = 0.0
    else:
        p = tp / (tp + fp)
    if tp + fn == 0:
        r = 0.0
    else:
        r = tp / (tp + fn)
    if p + r == 0:
        f1 = 0.0
    else:
        f1 = 2 * p * r / (p + r)
    return p, r, f1


def oracle_pooled(cells: list[tuple[list[str], list[str]]]) -> tuple[int, int, int]:
    """Summed counts over many (gold, pred) cells."""
    tp = fp = fn = 0
    for gold, pred in cells:
        a, b, c = oracle_cell_counts(gold, pred)
        tp += a
        fp += b
        fn += c
    return tp, fp, fn


_SURFACE_POOL = None


def random_cell(rng: random.Random, max_len: int = 8) -> tuple[list[str], list[str]]:
    """A random (gold, pred) surface pair with overlap and duplicates.

    Surfaces are drawn from a small pool so collisions (true positives and
    duplicate mentions) are common rather than vanishingly rare.
    """
    global _SURFACE_POOL
    if _SURFACE_POOL is None:
        _SURFACE_POOL = [
            "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(1, 6)))
            for _ in range(40)
        ]
    pool = _SURFACE_POOL

    def draw():
        k = rng.randint(0, max_len)
        return [rng.choice(pool) for _ in range(k)]

    return draw(), draw()
