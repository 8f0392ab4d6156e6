"""Shared synthetic-corpus builders.

Documents are built token-first with single-space joins so they round-trip
through the BIO encoder/decoder exactly; mention support per tag is exact,
which the tier-assembly tests rely on.
"""

import random

import pytest

from zsner import corpus

FILLER = (
    "il la un una di da in con su per tra fra e ma se poi qui era sono "
    "molto sempre dopo prima sopra sotto verso presso ogni tanto ancora"
).split()

ENTITY = (
    "Roma Milano Torino Garibaldi Verdi Rossi Bianchi Ferrari Olivetti "
    "Etna Vesuvio Po Arno Dante Petrarca Boccaccio Leopardi Manzoni "
    "Palermo Napoli Genova Cavour Mazzini Colombo Marconi Volta Fermi"
).split()


def make_document(rng: random.Random, doc_id: str, mention_tags, domain=""):
    """One document containing exactly one mention per entry of mention_tags."""
    tokens: list[str] = []
    spans: list[tuple[int, int, str]] = []
    for _ in range(rng.randint(1, 3)):
        tokens.append(rng.choice(FILLER))
    for tag in mention_tags:
        start = len(tokens)
        length = rng.randint(1, 3)
        for _ in range(length):
            tokens.append(rng.choice(ENTITY))
        spans.append((start, length, tag))
        for _ in range(rng.randint(1, 3)):
            tokens.append(rng.choice(FILLER))
    text, offsets = corpus.default_detok(tokens)
    mentions = [
        corpus.Mention(
            tag,
            text[offsets[s].start : offsets[s + n - 1].end],
            offsets[s].start,
            offsets[s + n - 1].end,
        )
        for s, n, tag in spans
    ]
    return corpus.Document(doc_id, text, domain, mentions)


def make_dataset(rng: random.Random, tag_counts: dict, prefix: str, domain="",
                 empty_docs: int = 0):
    """Documents whose pooled mention support per tag is exactly tag_counts."""
    slots = [tag for tag, n in tag_counts.items() for _ in range(n)]
    rng.shuffle(slots)
    docs = []
    i = 0
    while slots:
        take = min(rng.randint(1, 3), len(slots))
        docs.append(
            make_document(rng, f"{prefix}-{i:05d}", slots[:take], domain)
        )
        slots = slots[take:]
        i += 1
    for _ in range(empty_docs):
        docs.append(make_document(rng, f"{prefix}-{i:05d}", [], domain))
        i += 1
    return docs


TRAINING_TAGS = ("person", "organization", "location")

# the full unseen-candidate inventory: 15 tags, 3 of them in training
EXTRA_TAGS = (
    "animal", "biological_entity", "celestial_body", "disease", "event",
    "food", "instrument", "media", "mythological_entity", "plant", "time",
    "vehicle",
)


def build_benchmark_tree(tmp_path, rng: random.Random, *, min_support: int = 5):
    """Dataset files plus an assembled benchmark manifest under tmp_path.

    The unseen-tier dataset carries all 15 tags; biological_entity sits at
    support 4, just under the default threshold, so the resolved unseen
    tier has 11 tags.
    """
    train_docs = make_dataset(
        rng, {"person": 6, "organization": 6, "location": 6}, "train", "wikinews"
    )
    wn_docs = make_dataset(
        rng, {"person": 8, "organization": 7, "location": 9}, "wn", "wikinews",
        empty_docs=2,
    )
    fic_docs = make_dataset(
        rng, {"person": 7, "organization": 5, "location": 6}, "fic", "fiction",
        empty_docs=1,
    )
    mn_counts = {tag: rng.randint(5, 9) for tag in TRAINING_TAGS + EXTRA_TAGS}
    mn_counts["biological_entity"] = 4
    mn_docs = make_dataset(rng, mn_counts, "mn", "wikipedia", empty_docs=2)

    datasets = {
        "train": train_docs,
        "wn_test": wn_docs,
        "fic_test": fic_docs,
        "mn_test": mn_docs,
    }
    for key, docs in datasets.items():
        corpus.save_dataset(docs, tmp_path / f"{key}.jsonl")

    config = {
        "training": {"dataset": "train", "tags": list(TRAINING_TAGS)},
        "datasets": {key: f"{key}.jsonl" for key in datasets},
        "tiers": [
            {"name": "in_domain", "kind": "in_domain", "datasets": ["wn_test"]},
            {"name": "out_of_domain", "kind": "out_of_domain",
             "datasets": ["fic_test"]},
            {"name": "unseen_ne", "kind": "unseen_ne", "datasets": ["mn_test"]},
        ],
        "min_support": min_support,
    }
    bench = corpus.assemble_benchmark(datasets, config)
    corpus.save_benchmark(bench, tmp_path / "manifest.json")
    return bench, datasets, config


@pytest.fixture
def rng():
    return random.Random(20240811)
