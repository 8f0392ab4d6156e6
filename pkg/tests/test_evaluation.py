import random

import pytest

from conftest import build_benchmark_tree
from oracles import oracle_cell_counts, oracle_prf, oracle_set_cell_counts, random_cell
from zsner import evaluation as ev
from zsner.errors import ComparisonError, ConfigError, CoverageError, PairingError
from zsner.parsing import Extraction


def counts(tp, fp, fn):
    return ev.Counts(tp, fp, fn)


def test_counts_add_and_nonnegative():
    assert counts(1, 2, 3) + counts(4, 5, 6) == counts(5, 7, 9)
    with pytest.raises(ValueError):
        counts(-1, 0, 0)


def test_micro_f1_zero_conventions():
    assert ev.micro_f1(counts(0, 0, 0)) == (0.0, 0.0, 0.0)
    assert ev.micro_f1(counts(0, 3, 0)) == (0.0, 0.0, 0.0)
    assert ev.micro_f1(counts(0, 0, 5)) == (0.0, 0.0, 0.0)
    p, r, f1 = ev.micro_f1(counts(2, 1, 3))
    assert (p, r) == (2 / 3, 2 / 5)
    assert f1 == 2 * p * r / (p + r)


def _pair(gold, pred):
    return (
        Extraction("d", "t", gold),
        Extraction("d", "t", pred),
    )


def test_score_pair_multiset_duplicates():
    g, p = _pair(["roma", "roma", "po"], ["roma", "po", "po"])
    c = ev.score_pair(g, p)
    assert (c.tp, c.fp, c.fn) == (2, 1, 1)


def test_score_pair_set_semantics():
    g, p = _pair(["roma", "roma", "po"], ["roma", "po", "po"])
    c = ev.score_pair(g, p, semantics=ev.SET)
    assert (c.tp, c.fp, c.fn) == (2, 0, 0)


def test_score_pair_rejects_mismatched_cells():
    g = Extraction("d1", "t", [])
    p = Extraction("d2", "t", [])
    with pytest.raises(PairingError):
        ev.score_pair(g, p)
    with pytest.raises(ConfigError):
        ev.score_pair(Extraction("d", "t", []), Extraction("d", "t", []), "jaccard")


def test_score_pair_matches_oracle_randomized():
    rng = random.Random(99)
    for _ in range(500):
        gold, pred = random_cell(rng)
        c = ev.score_pair(*_pair(gold, pred))
        assert (c.tp, c.fp, c.fn) == oracle_cell_counts(gold, pred)
        cs = ev.score_pair(*_pair(gold, pred), semantics=ev.SET)
        assert (cs.tp, cs.fp, cs.fn) == oracle_set_cell_counts(gold, pred)


def test_micro_f1_matches_oracle_formula():
    rng = random.Random(5)
    for _ in range(200):
        tp, fp, fn = rng.randint(0, 20), rng.randint(0, 20), rng.randint(0, 20)
        assert ev.micro_f1(counts(tp, fp, fn)) == oracle_prf(tp, fp, fn)


# --------------------------------------------------------------------------
# tier reports


def _report_inputs(tmp_path, rng):
    bench, datasets, _ = build_benchmark_tree(tmp_path, rng)
    gold = ev.build_gold(bench, datasets)
    return bench, datasets, gold


def test_tier_report_gold_vs_itself_is_perfect(tmp_path, rng):
    bench, _, gold = _report_inputs(tmp_path, rng)
    preds = [Extraction(g.doc_id, g.tag_id, list(g.surfaces)) for g in gold]
    report = ev.tier_report(bench, gold, preds, "with_dg")
    for tier in report.tiers.values():
        assert tier.micro.f1 == 1.0
        assert tier.macro_f1 == 1.0
        assert tier.micro.counts.fp == 0 and tier.micro.counts.fn == 0


def test_tier_report_empty_predictions_zero(tmp_path, rng):
    bench, _, gold = _report_inputs(tmp_path, rng)
    preds = [Extraction(g.doc_id, g.tag_id, []) for g in gold]
    report = ev.tier_report(bench, gold, preds, "without_dg")
    for tier in report.tiers.values():
        assert tier.micro.f1 == 0.0
        assert tier.micro.counts.tp == 0
        assert tier.micro.counts.fn > 0


def test_tier_report_micro_pools_counts_not_averages(tmp_path, rng):
    """Micro-F1 must come from pooled counts; uneven per-tag sizes make the
    pooled value differ from the mean of per-tag F1 (that's the macro)."""
    bench, _, gold = _report_inputs(tmp_path, rng)
    by_cell = {(g.doc_id, g.tag_id): g for g in gold}
    preds = []
    flip = True
    for g in gold:
        if g.surfaces and flip:
            preds.append(Extraction(g.doc_id, g.tag_id, []))
        else:
            preds.append(Extraction(g.doc_id, g.tag_id, list(g.surfaces)))
        if g.surfaces:
            flip = not flip
    report = ev.tier_report(bench, by_cell.values(), preds, "with_dg")
    for tier in report.tiers.values():
        pooled = ev.Counts()
        for s in tier.per_tag.values():
            pooled = pooled + s.counts
        assert tier.micro.counts == pooled
        assert tier.micro.f1 == ev.micro_f1(pooled)[2]
        mean_f1 = sum(s.f1 for s in tier.per_tag.values()) / len(tier.per_tag)
        assert tier.macro_f1 == pytest.approx(mean_f1)


def test_tier_report_coverage_missing_and_extra(tmp_path, rng):
    bench, _, gold = _report_inputs(tmp_path, rng)
    preds = [Extraction(g.doc_id, g.tag_id, []) for g in gold]
    with pytest.raises(CoverageError) as exc:
        ev.tier_report(bench, gold, preds[:-3], "with_dg")
    assert "missing" in str(exc.value)
    extra = preds + [Extraction("ghost-doc", preds[0].tag_id, [])]
    with pytest.raises(CoverageError) as exc:
        ev.tier_report(bench, gold, extra, "with_dg")
    assert "extra" in str(exc.value)


def test_tier_report_rejects_duplicate_cells(tmp_path, rng):
    bench, _, gold = _report_inputs(tmp_path, rng)
    preds = [Extraction(g.doc_id, g.tag_id, []) for g in gold]
    with pytest.raises(PairingError):
        ev.tier_report(bench, gold, preds + [preds[0]], "with_dg")


def test_score_report_json_round_trip(tmp_path, rng):
    bench, _, gold = _report_inputs(tmp_path, rng)
    preds = [Extraction(g.doc_id, g.tag_id, list(g.surfaces)) for g in gold]
    report = ev.tier_report(bench, gold, preds, "with_dg", run_manifest="m.json")
    back = ev.ScoreReport.from_json(report.to_json())
    assert back.benchmark_id == report.benchmark_id
    assert back.variant == "with_dg"
    assert back.run_manifest == "m.json"
    for name, tier in report.tiers.items():
        bt = back.tiers[name]
        assert bt.micro == tier.micro
        assert bt.per_tag == tier.per_tag
        assert bt.macro_f1 == tier.macro_f1


# --------------------------------------------------------------------------
# deltas and formatting


def _mini_report(benchmark_id, f1_by_tag, variant):
    tiers = {
        "t": ev.TierScore(
            "t",
            "in_domain",
            {
                tag: ev.TagScore(ev.Counts(1, 0, 0), f1, f1, f1)
                for tag, f1 in f1_by_tag.items()
            },
            ev.TagScore(ev.Counts(1, 0, 0), 0.5, 0.5, 0.5),
            sum(f1_by_tag.values()) / len(f1_by_tag),
        )
    }
    return ev.ScoreReport(benchmark_id, variant, tiers)


def test_delta_report_values_and_render():
    w = _mini_report("b1", {"plant": 0.4989}, "with_dg")
    wo = _mini_report("b1", {"plant": 0.1376}, "without_dg")
    delta = ev.delta_report(w, wo)
    cell = delta.tiers["t"]["plant"]
    assert cell.delta == pytest.approx(0.3613)
    text = ev.render_delta(delta)
    assert "(+36.13)" in text


def test_delta_report_mismatches():
    w = _mini_report("b1", {"plant": 0.5}, "with_dg")
    with pytest.raises(ComparisonError):
        ev.delta_report(w, _mini_report("b2", {"plant": 0.5}, "without_dg"))
    with pytest.raises(ComparisonError):
        ev.delta_report(w, _mini_report("b1", {"animal": 0.5}, "without_dg"))


def test_format_conventions():
    assert ev.format_pct(0.5465) == "54.65"
    assert ev.format_pct(0.0) == "0.00"
    assert ev.format_pct(1.0) == "100.00"
    assert ev.format_delta(0.2375) == "(+23.75)"
    assert ev.format_delta(-0.0301) == "(-3.01)"
    assert ev.format_delta(0.0) == "(+0.00)"


def test_render_report_mentions_all_tags(tmp_path, rng):
    bench, _, gold = _report_inputs(tmp_path, rng)
    preds = [Extraction(g.doc_id, g.tag_id, list(g.surfaces)) for g in gold]
    report = ev.tier_report(bench, gold, preds, "with_dg")
    text = ev.render_report(report)
    for tier in bench.tiers:
        assert tier.name in text
        for tag in tier.tag_ids:
            assert tag in text
    assert "micro" in text and "macro" in text
