"""Entity-level micro-F1 scoring over the benchmark's (document, tag) grid.

Matching is exact string equality on normalized surfaces, multiset
semantics by default (a duplicated prediction can only match a duplicated
gold mention; extras count as false positives). Tier headline numbers pool
counts across documents and tags; macro-F1 is reported alongside.
"""

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from zsner.corpus import Benchmark, Document
from zsner.errors import ComparisonError, ConfigError, CoverageError, PairingError
from zsner.parsing import Extraction, normalize_surface

MULTISET = "multiset"
SET = "set"


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if self.tp < 0 or self.fp < 0 or self.fn < 0:
            raise ValueError(f"negative counts: {self}")

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def micro_f1(counts: Counts) -> tuple[float, float, float]:
    """(precision, recall, f1) from pooled counts, 0/0 -> 0."""
    p = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    r = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def gold_extraction(doc: Document, tag_id: str) -> Extraction:
    """Gold-side mirror of the reply parser: normalized mention surfaces."""
    surfaces = [
        normalize_surface(m.surface) for m in doc.mentions if m.tag_id == tag_id
    ]
    return Extraction(doc.doc_id, tag_id, [s for s in surfaces if s])


def build_gold(
    benchmark: Benchmark, datasets: dict[str, list[Document]]
) -> list[Extraction]:
    """Gold extractions for every (document, tag) cell of every tier."""
    gold: dict[tuple[str, str], Extraction] = {}
    for tier in benchmark.tiers:
        for ds in tier.dataset_ids:
            if ds not in datasets:
                raise ConfigError(f"tier {tier.name!r}: dataset {ds!r} not loaded")
            for doc in datasets[ds]:
                for tag in tier.tag_ids:
                    gold.setdefault((doc.doc_id, tag), gold_extraction(doc, tag))
    return list(gold.values())


def score_pair(gold: Extraction, pred: Extraction, semantics: str = MULTISET) -> Counts:
    """TP/FP/FN for one (document, tag) cell."""
    if (gold.doc_id, gold.tag_id) != (pred.doc_id, pred.tag_id):
        raise PairingError(
            f"gold cell ({gold.doc_id},{gold.tag_id}) vs "
            f"pred cell ({pred.doc_id},{pred.tag_id})"
        )
    if semantics == MULTISET:
        g = Counter(gold.surfaces)
        p = Counter(pred.surfaces)
        tp = sum((g & p).values())
        return Counts(tp, sum(p.values()) - tp, sum(g.values()) - tp)
    if semantics == SET:
        g = set(gold.surfaces)
        p = set(pred.surfaces)
        tp = len(g & p)
        return Counts(tp, len(p) - tp, len(g) - tp)
    raise ConfigError(f"unknown matching semantics {semantics!r}")


@dataclass
class TagScore:
    counts: Counts
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, counts: Counts) -> "TagScore":
        p, r, f1 = micro_f1(counts)
        return cls(counts, p, r, f1)


@dataclass
class TierScore:
    name: str
    kind: str
    per_tag: dict[str, TagScore]
    micro: TagScore
    macro_f1: float


@dataclass
class ScoreReport:
    benchmark_id: str
    variant: str
    tiers: dict[str, TierScore]
    semantics: str = MULTISET
    run_manifest: str = ""

    def to_json(self) -> dict:
        def tag_dict(s: TagScore) -> dict:
            return {
                "tp": s.counts.tp,
                "fp": s.counts.fp,
                "fn": s.counts.fn,
                "precision": s.precision,
                "recall": s.recall,
                "f1": s.f1,
            }

        return {
            "benchmark_id": self.benchmark_id,
            "variant": self.variant,
            "semantics": self.semantics,
            "run_manifest": self.run_manifest,
            "tiers": {
                name: {
                    "kind": t.kind,
                    "micro": tag_dict(t.micro),
                    "macro_f1": t.macro_f1,
                    "per_tag": {tag: tag_dict(s) for tag, s in t.per_tag.items()},
                }
                for name, t in self.tiers.items()
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "ScoreReport":
        def tag_score(d: dict) -> TagScore:
            return TagScore(
                Counts(d["tp"], d["fp"], d["fn"]), d["precision"], d["recall"], d["f1"]
            )

        tiers = {
            name: TierScore(
                name,
                t["kind"],
                {tag: tag_score(s) for tag, s in t["per_tag"].items()},
                tag_score(t["micro"]),
                t["macro_f1"],
            )
            for name, t in data["tiers"].items()
        }
        return cls(
            benchmark_id=data["benchmark_id"],
            variant=data.get("variant", ""),
            tiers=tiers,
            semantics=data.get("semantics", MULTISET),
            run_manifest=data.get("run_manifest", ""),
        )


def _index_extractions(
    extractions: Iterable[Extraction], side: str
) -> dict[tuple[str, str], Extraction]:
    index: dict[tuple[str, str], Extraction] = {}
    for e in extractions:
        cell = (e.doc_id, e.tag_id)
        if cell in index:
            raise PairingError(f"duplicate {side} extraction for cell {cell}")
        index[cell] = e
    return index


def tier_report(
    benchmark: Benchmark,
    gold: Iterable[Extraction],
    predictions: Iterable[Extraction],
    variant: str,
    *,
    semantics: str = MULTISET,
    run_manifest: str = "",
) -> ScoreReport:
    """Score predictions against gold over every tier of the benchmark.

    Predictions must cover the benchmark's (document, tag) grid exactly;
    missing or extra cells raise CoverageError rather than scoring as zeros.
    """
    gold_index = _index_extractions(gold, "gold")
    pred_index = _index_extractions(predictions, "predicted")

    grids: dict[str, set[tuple[str, str]]] = {}
    union_grid: set[tuple[str, str]] = set()
    for tier in benchmark.tiers:
        cells = {
            (doc_id, tag)
            for ds in tier.dataset_ids
            for doc_id in benchmark.doc_ids.get(ds, ())
            for tag in tier.tag_ids
        }
        grids[tier.name] = cells
        union_grid |= cells

    missing = sorted(union_grid - set(pred_index))
    extra = sorted(set(pred_index) - union_grid)
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"{len(missing)} missing cells, e.g. {missing[:5]}")
        if extra:
            parts.append(f"{len(extra)} extra cells, e.g. {extra[:5]}")
        raise CoverageError("prediction grid mismatch: " + "; ".join(parts))
    missing_gold = sorted(union_grid - set(gold_index))
    if missing_gold:
        raise CoverageError(
            f"gold grid mismatch: {len(missing_gold)} missing cells, "
            f"e.g. {missing_gold[:5]}"
        )

    tiers: dict[str, TierScore] = {}
    for tier in benchmark.tiers:
        per_tag_counts: dict[str, Counts] = {tag: Counts() for tag in tier.tag_ids}
        for doc_id, tag in grids[tier.name]:
            cell = (doc_id, tag)
            per_tag_counts[tag] = per_tag_counts[tag] + score_pair(
                gold_index[cell], pred_index[cell], semantics
            )
        per_tag = {tag: TagScore.from_counts(c) for tag, c in per_tag_counts.items()}
        pooled = Counts()
        for c in per_tag_counts.values():
            pooled = pooled + c
        macro = (
            sum(s.f1 for s in per_tag.values()) / len(per_tag) if per_tag else 0.0
        )
        tiers[tier.name] = TierScore(
            tier.name, tier.kind, per_tag, TagScore.from_counts(pooled), macro
        )

    return ScoreReport(
        benchmark_id=benchmark.benchmark_id,
        variant=variant,
        tiers=tiers,
        semantics=semantics,
        run_manifest=run_manifest,
    )


# --------------------------------------------------------------------------
# delta reports (with-D&G vs without-D&G ablation)


@dataclass
class DeltaCell:
    f1_with: float
    f1_without: float

    @property
    def delta(self) -> float:
        return self.f1_with - self.f1_without


@dataclass
class DeltaReport:
    benchmark_id: str
    tiers: dict[str, dict[str, DeltaCell]]  # tier -> tag -> cell
    micro: dict[str, DeltaCell] = field(default_factory=dict)  # tier -> cell

    def to_json(self) -> dict:
        def cell(c: DeltaCell) -> dict:
            return {"f1_with": c.f1_with, "f1_without": c.f1_without, "delta": c.delta}

        return {
            "benchmark_id": self.benchmark_id,
            "tiers": {
                name: {tag: cell(c) for tag, c in tags.items()}
                for name, tags in self.tiers.items()
            },
            "micro": {name: cell(c) for name, c in self.micro.items()},
        }


def delta_report(with_report: ScoreReport, without_report: ScoreReport) -> DeltaReport:
    """Per-(tier, tag) and per-tier F1 differences between the two variants."""
    if with_report.benchmark_id != without_report.benchmark_id:
        raise ComparisonError(
            f"reports compare different benchmarks: "
            f"{with_report.benchmark_id!r} vs {without_report.benchmark_id!r}"
        )
    if set(with_report.tiers) != set(without_report.tiers):
        raise ComparisonError(
            f"tier mismatch: {sorted(with_report.tiers)} vs "
            f"{sorted(without_report.tiers)}"
        )
    tiers: dict[str, dict[str, DeltaCell]] = {}
    micro: dict[str, DeltaCell] = {}
    for name, tw in with_report.tiers.items():
        to = without_report.tiers[name]
        if set(tw.per_tag) != set(to.per_tag):
            raise ComparisonError(
                f"tier {name!r}: tag grid mismatch: "
                f"{sorted(tw.per_tag)} vs {sorted(to.per_tag)}"
            )
        tiers[name] = {
            tag: DeltaCell(tw.per_tag[tag].f1, to.per_tag[tag].f1)
            for tag in tw.per_tag
        }
        micro[name] = DeltaCell(tw.micro.f1, to.micro.f1)
    return DeltaReport(with_report.benchmark_id, tiers, micro)


# --------------------------------------------------------------------------
# rendering


def format_pct(x: float) -> str:
    """F1 on the conventional 0-100 reporting scale, two decimals."""
    return f"{100 * x:.2f}"


def format_delta(delta: float) -> str:
    """Signed-in-parentheses convention, e.g. (+36.13)."""
    return f"({100 * delta:+.2f})"


def render_report(report: ScoreReport) -> str:
    lines = [
        f"benchmark: {report.benchmark_id}   variant: {report.variant}   "
        f"matching: {report.semantics}"
    ]
    for tier in report.tiers.values():
        lines.append("")
        lines.append(f"tier: {tier.name} ({tier.kind})")
        width = max([len("tag")] + [len(t) for t in tier.per_tag])
        header = f"{'tag':<{width}} {'tp':>6} {'fp':>6} {'fn':>6} {'P':>7} {'R':>7} {'F1':>7}"
        lines.append(header)
        lines.append("-" * len(header))
        for tag in sorted(tier.per_tag):
            s = tier.per_tag[tag]
            lines.append(
                f"{tag:<{width}} {s.counts.tp:>6} {s.counts.fp:>6} {s.counts.fn:>6} "
                f"{format_pct(s.precision):>7} {format_pct(s.recall):>7} "
                f"{format_pct(s.f1):>7}"
            )
        m = tier.micro
        lines.append(
            f"{'micro':<{width}} {m.counts.tp:>6} {m.counts.fp:>6} {m.counts.fn:>6} "
            f"{format_pct(m.precision):>7} {format_pct(m.recall):>7} "
            f"{format_pct(m.f1):>7}"
        )
        lines.append(f"{'macro F1':<{width}} {format_pct(tier.macro_f1):>{len(header) - width - 1}}")
    return "\n".join(lines) + "\n"


def render_delta(report: DeltaReport) -> str:
    lines = [f"benchmark: {report.benchmark_id}   ablation: with vs without D&G"]
    for name, tags in report.tiers.items():
        lines.append("")
        lines.append(f"tier: {name}")
        width = max([len("tag"), len("micro")] + [len(t) for t in tags])
        header = f"{'tag':<{width}} {'w/o D&G':>9} {'w/ D&G':>9} {'ΔF1':>10}"
        lines.append(header)
        lines.append("-" * len(header))
        for tag in sorted(tags):
            c = tags[tag]
            lines.append(
                f"{tag:<{width}} {format_pct(c.f1_without):>9} "
                f"{format_pct(c.f1_with):>9} {format_delta(c.delta):>10}"
            )
        m = report.micro.get(name)
        if m is not None:
            lines.append(
                f"{'micro':<{width}} {format_pct(m.f1_without):>9} "
                f"{format_pct(m.f1_with):>9} {format_delta(m.delta):>10}"
            )
    return "\n".join(lines) + "\n"


def save_report_json(data: dict, path) -> None:
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
