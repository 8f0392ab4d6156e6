"""Command line front end.

Pipeline order: ingest BIO corpora into dataset files, assemble a tiered
benchmark, generate the definition-and-guideline store, run inference
(real backend or mock), score a run, and diff the two prompt variants.

Exit codes: 1 unexpected, 2 configuration, 3 input format, 4 coverage or
comparison mismatch, 5 authentication.
"""

import json
import os
import re
import sys
import time
from collections import Counter
from pathlib import Path
from types import SimpleNamespace

import click

from zsner import corpus, evaluation, inference, parsing, prompts, resources
from zsner import guidelines as dg
from zsner.errors import (
    ConfigError,
    CoverageError,
    GenerationError,
    RunDirectoryError,
    ZsnerError,
)

MOCK_SYNTAX = "gold_oracle | empty | malformed | drop_k:N"


def _resolve(path_str: str, base: Path) -> Path:
    p = Path(path_str)
    return p if p.is_absolute() else base / p


def _load_json(path: Path, what: str) -> dict:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{what} not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{what} {path} must be a JSON object")
    return data


def _tag_specs(
    tags, store: dg.GuidelineStore | None, display_names: dict[str, str]
) -> dict[str, dg.TagSpec]:
    specs = {}
    for tag in tags:
        spec = store.get(tag) if store else None
        if spec is None:
            spec = dg.TagSpec(
                tag_id=tag,
                display_name=display_names.get(tag, tag.replace("_", " ")),
            )
        specs[tag] = spec
    return specs


def _parse_mock(mock: str) -> tuple[str, int]:
    kind, _, param = mock.partition(":")
    if kind not in inference.MOCK_KINDS:
        raise ConfigError(f"unknown mock {mock!r}; syntax: {MOCK_SYNTAX}")
    k = 1
    if param:
        if kind != "drop_k":
            raise ConfigError(f"mock {kind!r} takes no parameter")
        try:
            k = int(param)
        except ValueError:
            raise ConfigError(f"mock drop_k parameter must be an integer, got {param!r}")
        if k < 0:
            raise ConfigError("mock drop_k parameter must be >= 0")
    return kind, k


@click.group()
@click.version_option(package_name="zsner")
def cli():
    """Zero-shot named-entity evaluation over instruction-tuned chat models."""


# --------------------------------------------------------------------------
# corpus commands


@cli.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--aliases", default=None, help="Alias table (built-in name or path).")
@click.option("--domain", default="", help="Domain label stamped on every document.")
@click.option("--doc-id-prefix", default=None, help="Defaults to each file's stem.")
@click.option("--strict", is_flag=True, help="Reject orphan I- labels.")
def ingest(inputs, output, aliases, domain, doc_id_prefix, strict):
    """Convert BIO-tagged token files (token<TAB>label) into a dataset file."""
    alias_map = resources.load_alias_table(aliases) if aliases else None
    docs: list[corpus.Document] = []
    seen: set[str] = set()
    for name in inputs:
        path = Path(name)
        if not path.is_file():
            raise ConfigError(f"input file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            parsed = corpus.parse_bio(
                fh,
                aliases=alias_map,
                domain=domain,
                doc_id_prefix=doc_id_prefix or path.stem,
                strict=strict,
            )
        for d in parsed:
            if d.doc_id in seen:
                raise ConfigError(
                    f"duplicate doc_id {d.doc_id!r}; give distinct --doc-id-prefix "
                    f"values for inputs that share a file stem"
                )
            seen.add(d.doc_id)
        docs.extend(parsed)
    corpus.save_dataset(docs, output)
    mention_total = sum(len(d.mentions) for d in docs)
    click.echo(f"wrote {len(docs)} documents ({mention_total} mentions) to {output}")


@cli.command()
@click.argument("dataset", type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def inventory(dataset, as_json):
    """Tag support counts for a dataset file."""
    path = Path(dataset)
    if not path.is_file():
        raise ConfigError(f"dataset not found: {path}")
    docs = corpus.load_dataset(path)
    support = corpus.tag_inventory(docs)
    if as_json:
        click.echo(
            json.dumps(
                {"documents": len(docs), "tags": dict(sorted(support.items()))},
                ensure_ascii=False,
                indent=2,
            )
        )
        return
    click.echo(f"{len(docs)} documents, {len(support)} tags")
    width = max([len("tag")] + [len(t) for t in support])
    click.echo(f"{'tag':<{width}} {'support':>8}")
    for tag, count in sorted(support.items(), key=lambda kv: (-kv[1], kv[0])):
        click.echo(f"{tag:<{width}} {count:>8}")


@cli.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def benchmark(config, output):
    """Assemble a tiered benchmark manifest from a config file.

    The config names the training dataset and tags, the tier datasets, and
    optional min_support / excluded_tags; tier tag sets are resolved from
    the data and written into the manifest.
    """
    config_path = Path(config)
    cfg = _load_json(config_path, "benchmark config")
    dataset_paths = cfg.get("datasets")
    if not isinstance(dataset_paths, dict) or not dataset_paths:
        raise ConfigError("benchmark config needs a non-empty 'datasets' object")
    datasets = {}
    resolved: dict[str, Path] = {}
    for key, rel in dataset_paths.items():
        ds_path = _resolve(str(rel), config_path.parent)
        if not ds_path.is_file():
            raise ConfigError(f"dataset {key!r}: file not found: {ds_path}")
        datasets[key] = corpus.load_dataset(ds_path)
        resolved[key] = ds_path
    bench = corpus.assemble_benchmark(datasets, cfg)

    out_path = Path(output)
    out_dir = out_path.parent.resolve()
    bench.dataset_paths = {
        key: str(Path(os.path.relpath(p.resolve(), out_dir)))
        for key, p in resolved.items()
    }
    corpus.save_benchmark(bench, out_path)
    click.echo(f"benchmark {bench.benchmark_id} -> {out_path}")
    for tier in bench.tiers:
        click.echo(
            f"  tier {tier.name} ({tier.kind}): {len(tier.tag_ids)} tags "
            f"over {sum(len(bench.doc_ids[d]) for d in tier.dataset_ids)} documents"
        )


# --------------------------------------------------------------------------
# guideline commands


def _required_tags(benchmark_path, tags, base: Path) -> list[str]:
    if benchmark_path and tags:
        raise ConfigError("give either --benchmark or --tags, not both")
    if benchmark_path:
        bench, _ = corpus.load_benchmark(_resolve(benchmark_path, base))
        return bench.all_tags()
    if tags:
        parsed = [t.strip() for t in tags.split(",") if t.strip()]
        if not parsed:
            raise ConfigError("--tags is empty")
        return parsed
    raise ConfigError("one of --benchmark or --tags is required")


def _canned_client(table: dict[str, dict]):
    def client(payload: dict) -> str:
        content = payload["messages"][-1]["content"]
        for name, entry in table.items():
            if f'"{name}"' in content:
                return json.dumps(
                    {
                        "definizione": entry["definizione"],
                        "linee guida": entry["linee guida"],
                    },
                    ensure_ascii=False,
                )
        m = re.search(r'"([^"]+)"', content)
        name = m.group(1) if m else "entità"
        return json.dumps(
            {
                "definizione": (
                    f"'{name.upper()}' si riferisce a entità del tipo \"{name}\"."
                ),
                "linee guida": (
                    f"Etichetta ogni menzione esplicita di tipo \"{name}\" così "
                    f"come compare nel testo. NON etichettare menzioni generiche "
                    f"o pronominali."
                ),
            },
            ensure_ascii=False,
        )

    return client


def _backend_client(backend_cfg: inference.BackendConfig):
    backend = inference.HttpBackend(backend_cfg)

    def client(payload: dict) -> str:
        attempts = 0
        while True:
            attempts += 1
            try:
                return backend.complete(SimpleNamespace(payload=payload))
            except inference.BackendError as exc:
                if exc.transient and attempts <= backend_cfg.max_retries:
                    time.sleep(backend_cfg.retry_base_delay * 2 ** (attempts - 1))
                    continue
                raise GenerationError(f"generator backend failure: {exc}") from exc

    return client


@cli.group("guidelines")
def guidelines_group():
    """Generate and validate the per-tag definition and guideline store."""


@guidelines_group.command("gen")
@click.option("--store", "store_path", required=True, type=click.Path(dir_okay=False))
@click.option("--benchmark", "benchmark_path", default=None, type=click.Path(dir_okay=False))
@click.option("--tags", default=None, help="Comma-separated tag ids.")
@click.option("--display-names", default="it", show_default=True)
@click.option("--meta-prompt", default="dg_it_v1", show_default=True)
@click.option("--language", default="it", show_default=True)
@click.option("--mock", default=None, help="Offline generator: 'canned'.")
@click.option("--backend", "backend_path", default=None, type=click.Path(dir_okay=False),
              help="Backend config JSON (endpoint_url, model_name, auth_env, ...).")
@click.option("--max-attempts", default=3, show_default=True)
def guidelines_gen(store_path, benchmark_path, tags, display_names, meta_prompt,
                   language, mock, backend_path, max_attempts):
    """Fill in definition/guideline records for tags missing from the store."""
    required = _required_tags(benchmark_path, tags, Path.cwd())
    names = resources.load_display_names(display_names)
    meta_id, meta_text = resources.load_meta_prompt(meta_prompt)

    if (mock is None) == (backend_path is None):
        raise ConfigError("give exactly one of --mock or --backend")
    generator_model = ""
    if mock is not None:
        if mock != "canned":
            raise ConfigError(f"unknown guideline mock {mock!r}; only 'canned'")
        client = _canned_client(resources.load_canned_dg())
        generator_model = "canned"
    else:
        backend_cfg = _backend_config(_load_json(Path(backend_path), "backend config"))
        client = _backend_client(backend_cfg)
        generator_model = backend_cfg.model_name

    store_file = Path(store_path)
    if store_file.is_file():
        store = dg.load_store(store_file)
    else:
        store = dg.GuidelineStore(language=language, meta_prompt_id=meta_id)
    if not store.meta_prompt_id:
        store.meta_prompt_id = meta_id

    name_map = {t: names.get(t, t.replace("_", " ")) for t in required}
    generated = dg.generate_missing(
        store,
        name_map,
        client,
        meta_text,
        generator_model=generator_model,
        max_attempts=max_attempts,
        reply_archive=Path(str(store_file) + ".replies.jsonl"),
    )
    dg.save_store(store, store_file)
    skipped = len(required) - len(generated)
    click.echo(
        f"store {store_file}: {len(generated)} generated, {skipped} already present"
    )


@guidelines_group.command("validate")
@click.option("--store", "store_path", required=True, type=click.Path(dir_okay=False))
@click.option("--benchmark", "benchmark_path", default=None, type=click.Path(dir_okay=False))
@click.option("--tags", default=None, help="Comma-separated tag ids.")
def guidelines_validate(store_path, benchmark_path, tags):
    """Check the store covers the required tags with non-empty fields."""
    required = _required_tags(benchmark_path, tags, Path.cwd())
    store = dg.load_store(store_path)
    report = dg.validate_store(store, required)
    if report["missing"]:
        click.echo(f"missing tags: {', '.join(report['missing'])}")
    for tag, fields in sorted(report["empty_fields"].items()):
        click.echo(f"empty fields for {tag}: {', '.join(fields)}")
    for name, dupes in sorted(report["duplicate_display_names"].items()):
        click.echo(f"display name {name!r} shared by: {', '.join(dupes)}")
    if not report["ok"]:
        raise CoverageError(
            f"store {store_path} fails validation for {len(required)} required tags"
        )
    click.echo(f"store {store_path}: ok ({len(required)} tags covered)")


# --------------------------------------------------------------------------
# inference commands


def _backend_config(raw: dict) -> inference.BackendConfig:
    try:
        return inference.BackendConfig(**raw)
    except TypeError as e:
        raise ConfigError(f"bad backend config: {e}")
    except ValueError as e:
        raise ConfigError(str(e))


def _load_run_inputs(cfg: dict, base: Path):
    """(benchmark, datasets, store, specs, template, adapter, variant, system)."""
    if "benchmark" not in cfg:
        raise ConfigError("run config needs a 'benchmark' manifest path")
    bench, datasets = corpus.load_benchmark(_resolve(cfg["benchmark"], base))

    variant = cfg.get("variant", prompts.WITH_DG)
    if variant not in prompts.VARIANTS:
        raise ConfigError(
            f"variant must be one of {prompts.VARIANTS}, got {variant!r}"
        )

    store = None
    if cfg.get("store"):
        store = dg.load_store(_resolve(cfg["store"], base))
    elif variant == prompts.WITH_DG:
        raise ConfigError("with_dg runs need a 'store' path in the run config")
    if variant == prompts.WITH_DG:
        report = dg.validate_store(store, bench.all_tags())
        problems = sorted(
            set(report["missing"]) | set(report["empty_fields"])
        )
        relevant = [t for t in problems if t in set(bench.all_tags())]
        if relevant:
            raise CoverageError(
                f"store lacks usable definitions/guidelines for benchmark tags: "
                f"{', '.join(relevant)}"
            )

    names = resources.load_display_names(cfg.get("display_names", "it"))
    specs = _tag_specs(bench.all_tags(), store, names)
    template = resources.load_template(cfg.get("template", "default_it"))
    adapter = resources.load_adapter(cfg.get("adapter", "openai_chat"))
    system_text = cfg.get("system_text", "")
    return bench, datasets, store, specs, template, adapter, variant, system_text


@cli.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--run-dir", required=True, type=click.Path(file_okay=False))
@click.option("--mock", default=None, help=f"Offline backend: {MOCK_SYNTAX}.")
@click.option("--overwrite", is_flag=True, help="Replace an existing run directory.")
@click.option("--max-parallel", default=None, type=int, help="Override concurrency.")
@click.option("--quiet", is_flag=True)
def run(config, run_dir, mock, overwrite, max_parallel, quiet):
    """Execute one prompt variant over the benchmark grid into a run directory."""
    config_path = Path(config)
    cfg = _load_json(config_path, "run config")
    base = config_path.parent
    bench, datasets, store, specs, template, adapter, variant, system_text = (
        _load_run_inputs(cfg, base)
    )

    jobs = prompts.expand_benchmark_jobs(
        bench, datasets, specs, variant, template, adapter, system_text
    )

    backend_raw = cfg.get("backend") or {}
    if mock is not None:
        kind, k = _parse_mock(mock)
        all_docs = [d for docs in datasets.values() for d in docs]
        backend = inference.MockBackend(
            kind, inference.gold_surface_index(all_docs), k=k
        )
        model_name = f"mock:{mock}"
        knobs = inference.BackendConfig(
            endpoint_url="mock://", model_name=model_name,
            **{k_: v for k_, v in backend_raw.items()
               if k_ in ("max_parallel", "max_retries", "retry_base_delay",
                         "requests_per_minute")},
        )
    else:
        if not backend_raw:
            raise ConfigError("run config needs a 'backend' object (or pass --mock)")
        knobs = _backend_config(backend_raw)
        backend = inference.HttpBackend(knobs)
        model_name = knobs.model_name

    parallel = max_parallel if max_parallel is not None else knobs.max_parallel
    if parallel < 1:
        raise ConfigError("--max-parallel must be >= 1")

    run_path = inference.prepare_run_dir(run_dir, overwrite=overwrite)
    cache = inference.ResponseCache(run_path / "cache")
    limiter = (
        inference.RateLimiter(knobs.requests_per_minute)
        if knobs.requests_per_minute
        else None
    )
    stats = inference.RunStats()
    records = inference.run(
        jobs,
        backend,
        cache,
        max_parallel=parallel,
        max_retries=knobs.max_retries,
        retry_base_delay=knobs.retry_base_delay,
        limiter=limiter,
        stats=stats,
    )

    manifest = {
        "benchmark_id": bench.benchmark_id,
        "benchmark_path": str(_resolve(cfg["benchmark"], base).resolve()),
        "store_path": str(_resolve(cfg["store"], base).resolve()) if cfg.get("store") else "",
        "display_names": cfg.get("display_names", "it"),
        "variant": variant,
        "template_id": template.template_id,
        "adapter_id": adapter.adapter_id,
        "system_text": system_text,
        "model_name": model_name,
        "fingerprint": getattr(backend, "fingerprint", ""),
        "mock": mock or "",
        "counts": {
            "jobs": len(jobs),
            "cached": stats.cached,
            "fetched": stats.fetched,
            "failed": stats.failed,
        },
    }
    inference.persist_run(records, manifest, run_path, overwrite=True)
    if not quiet:
        failed = f", {stats.failed} failed" if stats.failed else ""
        click.echo(
            f"{len(jobs)} jobs: {stats.cached} cached, {stats.fetched} fetched{failed}"
        )
        click.echo(f"run written to {run_path}")


@cli.command()
@click.option("--benchmark", "benchmark_path", required=True, type=click.Path(dir_okay=False))
@click.option("--store", "store_path", default=None, type=click.Path(dir_okay=False))
@click.option("--variant", type=click.Choice(prompts.VARIANTS), default=prompts.WITH_DG,
              show_default=True)
@click.option("--template", default="default_it", show_default=True)
@click.option("--adapter", default="openai_chat", show_default=True)
@click.option("--display-names", default="it", show_default=True)
@click.option("--system", "system_text", default="")
@click.option("--doc", "doc_id", default=None, help="Print one document's prompt.")
@click.option("--tag", "tag_id", default=None, help="Tag for --doc.")
@click.option("-o", "--output", default=None, type=click.Path(dir_okay=False),
              help="Write the full job grid as JSONL.")
def render(benchmark_path, store_path, variant, template, adapter, display_names,
           system_text, doc_id, tag_id, output):
    """Inspect rendered prompts, or export the full payload grid."""
    bench, datasets = corpus.load_benchmark(benchmark_path)
    store = dg.load_store(store_path) if store_path else None
    if variant == prompts.WITH_DG and store is None:
        raise ConfigError("with_dg rendering needs --store")
    names = resources.load_display_names(display_names)
    specs = _tag_specs(bench.all_tags(), store, names)
    template_obj = resources.load_template(template)
    adapter_obj = resources.load_adapter(adapter)

    if (doc_id is None) != (tag_id is None):
        raise ConfigError("--doc and --tag go together")
    if doc_id is not None:
        match = next(
            (d for docs in datasets.values() for d in docs if d.doc_id == doc_id),
            None,
        )
        if match is None:
            raise ConfigError(f"no document {doc_id!r} in the benchmark datasets")
        if tag_id not in specs:
            raise ConfigError(f"tag {tag_id!r} is not part of the benchmark")
        click.echo(prompts.render(match, specs[tag_id], variant, template_obj))
        return

    jobs = prompts.expand_benchmark_jobs(
        bench, datasets, specs, variant, template_obj, adapter_obj, system_text
    )
    if output is None:
        raise ConfigError("give -o to export jobs, or --doc/--tag to preview one")
    out = Path(output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for job in jobs:
            fh.write(
                json.dumps(
                    {
                        "job_id": job.job_id,
                        "doc_id": job.doc_id,
                        "tag_id": job.tag_id,
                        "variant": job.variant,
                        "template_id": job.template_id,
                        "adapter_id": job.adapter_id,
                        "payload": job.payload,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    click.echo(f"wrote {len(jobs)} jobs to {out}")


# --------------------------------------------------------------------------
# scoring commands


@cli.command()
@click.argument("run_dir", type=click.Path(file_okay=False))
@click.option("-o", "--output", default=None, type=click.Path(dir_okay=False),
              help="Report JSON path (default: <run_dir>/score.json).")
@click.option("--semantics", type=click.Choice([evaluation.MULTISET, evaluation.SET]),
              default=evaluation.MULTISET, show_default=True)
@click.option("--quiet", is_flag=True)
def score(run_dir, output, semantics, quiet):
    """Score an archived run against gold annotations, per tier and tag."""
    run_path = Path(run_dir)
    records, manifest = inference.load_run(run_path)
    for key in ("benchmark_path", "variant", "template_id", "adapter_id"):
        if key not in manifest:
            raise RunDirectoryError(f"run manifest lacks {key!r}")
    bench, datasets = corpus.load_benchmark(manifest["benchmark_path"])
    if manifest.get("benchmark_id") and manifest["benchmark_id"] != bench.benchmark_id:
        raise CoverageError(
            f"benchmark changed since the run: manifest has "
            f"{manifest['benchmark_id']}, file has {bench.benchmark_id}"
        )

    jobs = prompts.benchmark_grid_jobs(
        bench, manifest["variant"], manifest["template_id"], manifest["adapter_id"]
    )
    by_id: dict[str, inference.CompletionRecord] = {}
    for rec in records:
        if rec.job_id in by_id:
            raise RunDirectoryError(f"duplicate record for job {rec.job_id}")
        by_id[rec.job_id] = rec
    missing = [j.job_id for j in jobs if j.job_id not in by_id]
    if missing:
        raise CoverageError(
            f"run lacks records for {len(missing)} jobs, e.g. {missing[:5]}"
        )

    preds = []
    statuses: Counter[str] = Counter()
    for job in jobs:
        ext = parsing.to_extraction(by_id[job.job_id], job)
        statuses[ext.parse_status] += 1
        preds.append(ext)

    gold = evaluation.build_gold(bench, datasets)
    report = evaluation.tier_report(
        bench,
        gold,
        preds,
        manifest["variant"],
        semantics=semantics,
        run_manifest=str(run_path / "manifest.json"),
    )
    out = Path(output) if output else run_path / "score.json"
    evaluation.save_report_json(report.to_json(), out)
    if not quiet:
        click.echo(
            f"replies: {statuses.get(parsing.PARSE_OK, 0)} ok, "
            f"{statuses.get(parsing.PARSE_RECOVERED, 0)} recovered, "
            f"{statuses.get(parsing.PARSE_FAILED, 0)} failed"
        )
        click.echo(evaluation.render_report(report), nl=False)
        click.echo(f"report written to {out}")


@cli.command()
@click.option("--with-report", "with_path", required=True, type=click.Path(dir_okay=False))
@click.option("--without-report", "without_path", required=True, type=click.Path(dir_okay=False))
@click.option("-o", "--output", default=None, type=click.Path(dir_okay=False))
@click.option("--quiet", is_flag=True)
def report(with_path, without_path, output, quiet):
    """Per-tag and per-tier F1 deltas between the two prompt variants."""
    with_report = evaluation.ScoreReport.from_json(
        _load_json(Path(with_path), "score report")
    )
    without_report = evaluation.ScoreReport.from_json(
        _load_json(Path(without_path), "score report")
    )
    delta = evaluation.delta_report(with_report, without_report)
    if output:
        evaluation.save_report_json(delta.to_json(), output)
    if not quiet:
        click.echo(evaluation.render_delta(delta), nl=False)
    if output and not quiet:
        click.echo(f"delta report written to {output}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except ZsnerError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(130)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)


if __name__ == "__main__":
    main()
