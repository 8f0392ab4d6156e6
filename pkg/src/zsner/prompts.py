"""Prompt construction: one entity type per request.

A template asks about a single tag in a single document and requests a
JSON list of surface forms. The definition-and-guideline block sits
between {dg:begin}/{dg:end} marker lines so the ablated variant can drop
it wholesale. Placeholders are substituted in one pass; brace sequences
inside document text or guideline text are never re-expanded.
"""

import hashlib
import re
from dataclasses import dataclass, field

from zsner.corpus import Benchmark, Document
from zsner.errors import ExpansionError, RenderError
from zsner.guidelines import TagSpec

WITH_DG = "with_dg"
WITHOUT_DG = "without_dg"
VARIANTS = (WITH_DG, WITHOUT_DG)

DG_BEGIN = "{dg:begin}"
DG_END = "{dg:end}"

_PLACEHOLDER_RE = re.compile(r"\{(text|display_name|definition|guidelines)\}")
_SLOT_RE = re.compile(r"\{(system|user)\}")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    language: str = "it"

    def __post_init__(self):
        self.validate()

    def _split(self) -> tuple[list[str], list[str]]:
        """(kept-either-way lines, block-content lines); validates markers."""
        outside: list[str] = []
        inside: list[str] = []
        in_block = False
        seen_block = False
        for line in self.body.split("\n"):
            stripped = line.strip()
            if stripped == DG_BEGIN:
                if in_block or seen_block:
                    raise RenderError(
                        f"template {self.template_id!r}: more than one "
                        f"{DG_BEGIN} block"
                    )
                in_block = True
                seen_block = True
            elif stripped == DG_END:
                if not in_block:
                    raise RenderError(
                        f"template {self.template_id!r}: {DG_END} without "
                        f"{DG_BEGIN}"
                    )
                in_block = False
            elif in_block:
                inside.append(line)
            else:
                outside.append(line)
        if in_block:
            raise RenderError(f"template {self.template_id!r}: unclosed {DG_BEGIN}")
        return outside, inside

    def validate(self) -> None:
        outside, inside = self._split()
        kept = "\n".join(outside)
        block = "\n".join(inside)
        for name in ("text", "display_name"):
            if "{%s}" % name not in kept:
                raise RenderError(
                    f"template {self.template_id!r}: missing {{{name}}} outside "
                    f"the D&G block"
                )
        for name in ("definition", "guidelines"):
            ph = "{%s}" % name
            if ph in kept:
                raise RenderError(
                    f"template {self.template_id!r}: {ph} outside the D&G block"
                )
            if inside or block:
                if ph not in block:
                    raise RenderError(
                        f"template {self.template_id!r}: D&G block lacks {ph}"
                    )


def render(
    doc: Document, spec: TagSpec, variant: str, template: PromptTemplate
) -> str:
    """The user-turn prompt text for one (document, tag) cell."""
    if variant not in VARIANTS:
        raise RenderError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    outside, inside = template._split()
    if variant == WITH_DG:
        if not spec.definition.strip() or not spec.guidelines.strip():
            raise RenderError(
                f"tag {spec.tag_id!r}: with_dg rendering needs a non-empty "
                f"definition and guidelines"
            )
        lines: list[str] = []
        in_block = False
        for line in template.body.split("\n"):
            stripped = line.strip()
            if stripped == DG_BEGIN:
                in_block = True
                continue
            if stripped == DG_END:
                in_block = False
                continue
            lines.append(line)
        body = "\n".join(lines)
    else:
        body = "\n".join(outside)

    values = {
        "text": doc.text,
        "display_name": spec.display_name,
        "definition": spec.definition,
        "guidelines": spec.guidelines,
    }
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], body)


# --------------------------------------------------------------------------
# chat adapters

MESSAGES = "messages"
SINGLE_STRING = "single_string"


@dataclass(frozen=True)
class ChatAdapter:
    adapter_id: str
    kind: str
    with_system: str = ""
    without_system: str = ""

    def __post_init__(self):
        if self.kind not in (MESSAGES, SINGLE_STRING):
            raise RenderError(
                f"adapter {self.adapter_id!r}: unknown kind {self.kind!r}"
            )
        if self.kind == SINGLE_STRING:
            if "{user}" not in self.without_system:
                raise RenderError(
                    f"adapter {self.adapter_id!r}: without_system lacks {{user}}"
                )
            if "{user}" not in self.with_system or "{system}" not in self.with_system:
                raise RenderError(
                    f"adapter {self.adapter_id!r}: with_system needs {{system}} "
                    f"and {{user}}"
                )


def wrap(user_text: str, adapter: ChatAdapter, system_text: str = "") -> dict:
    """Chat-completions message payload for one prompt."""
    if adapter.kind == MESSAGES:
        messages = []
        if system_text:
            messages.append({"role": "system", "content": system_text})
        messages.append({"role": "user", "content": user_text})
        return {"messages": messages}
    fmt = adapter.with_system if system_text else adapter.without_system
    slots = {"system": system_text, "user": user_text}
    flat = _SLOT_RE.sub(lambda m: slots[m.group(1)], fmt)
    return {"messages": [{"role": "user", "content": flat}]}


# --------------------------------------------------------------------------
# job expansion


@dataclass(frozen=True)
class PromptJob:
    job_id: str
    doc_id: str
    tag_id: str
    variant: str
    template_id: str
    adapter_id: str
    payload: dict = field(hash=False, compare=False, default_factory=dict)


def job_id_for(
    doc_id: str, tag_id: str, variant: str, template_id: str, adapter_id: str
) -> str:
    key = "\x1e".join([doc_id, tag_id, variant, template_id, adapter_id])
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]


def expand_jobs(
    docs,
    specs,
    variant: str,
    template: PromptTemplate,
    adapter: ChatAdapter,
    system_text: str = "",
) -> list[PromptJob]:
    """One job per (document, tag), document-major, tag order as given.

    specs is a list of TagSpec (or a tag_id -> TagSpec mapping, iterated in
    insertion order).
    """
    if isinstance(specs, dict):
        specs = list(specs.values())
    seen: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen:
            raise ExpansionError(f"duplicate document id {doc.doc_id!r}")
        seen.add(doc.doc_id)
    jobs: list[PromptJob] = []
    for doc in docs:
        for spec in specs:
            jobs.append(
                _build_job(doc, spec, variant, template, adapter, system_text)
            )
    return jobs


def _build_job(doc, spec, variant, template, adapter, system_text) -> PromptJob:
    user_text = render(doc, spec, variant, template)
    return PromptJob(
        job_id=job_id_for(
            doc.doc_id, spec.tag_id, variant, template.template_id, adapter.adapter_id
        ),
        doc_id=doc.doc_id,
        tag_id=spec.tag_id,
        variant=variant,
        template_id=template.template_id,
        adapter_id=adapter.adapter_id,
        payload=wrap(user_text, adapter, system_text),
    )


def expand_benchmark_jobs(
    benchmark: Benchmark,
    datasets: dict[str, list[Document]],
    specs: dict[str, TagSpec],
    variant: str,
    template: PromptTemplate,
    adapter: ChatAdapter,
    system_text: str = "",
) -> list[PromptJob]:
    """Jobs covering every tier's (document, tag) grid, deduplicated.

    A document that sits in two tiers gets one job per distinct tag; tier
    order then dataset order then tag order fixes the sequence.
    """
    jobs: list[PromptJob] = []
    seen: set[tuple[str, str]] = set()
    docs_by_id: dict[str, Document] = {}
    for tier in benchmark.tiers:
        for ds in tier.dataset_ids:
            if ds not in datasets:
                raise ExpansionError(
                    f"tier {tier.name!r}: dataset {ds!r} not loaded"
                )
            for doc in datasets[ds]:
                prev = docs_by_id.setdefault(doc.doc_id, doc)
                if prev is not doc and prev.text != doc.text:
                    raise ExpansionError(
                        f"duplicate document id {doc.doc_id!r} with differing text"
                    )
                for tag in tier.tag_ids:
                    if (doc.doc_id, tag) in seen:
                        continue
                    seen.add((doc.doc_id, tag))
                    spec = specs.get(tag)
                    if spec is None:
                        raise ExpansionError(f"no tag spec for {tag!r}")
                    jobs.append(
                        _build_job(doc, spec, variant, template, adapter, system_text)
                    )
    return jobs


def benchmark_grid_jobs(
    benchmark: Benchmark, variant: str, template_id: str, adapter_id: str
) -> list[PromptJob]:
    """The same job grid as expand_benchmark_jobs, without rendered payloads.

    Job ids depend only on (doc, tag, variant, template, adapter), so this
    is enough to pair archived completion records back to their cells.
    """
    jobs: list[PromptJob] = []
    seen: set[tuple[str, str]] = set()
    for tier in benchmark.tiers:
        for ds in tier.dataset_ids:
            for doc_id in benchmark.doc_ids.get(ds, ()):
                for tag in tier.tag_ids:
                    if (doc_id, tag) in seen:
                        continue
                    seen.add((doc_id, tag))
                    jobs.append(
                        PromptJob(
                            job_id=job_id_for(
                                doc_id, tag, variant, template_id, adapter_id
                            ),
                            doc_id=doc_id,
                            tag_id=tag,
                            variant=variant,
                            template_id=template_id,
                            adapter_id=adapter_id,
                        )
                    )
    return jobs
