"""Built-in asset loading: templates, adapters, alias tables, meta prompts.

Every loader takes either a filesystem path or the name of a packaged
asset; a path that exists on disk wins.
"""

import json
from importlib import resources
from pathlib import Path

from zsner.errors import ConfigError
from zsner.prompts import ChatAdapter, PromptTemplate


def _asset_root():
    return resources.files("zsner") / "assets"


def _read_asset(kind: str, name_or_path: str, suffix: str) -> str:
    path = Path(name_or_path)
    if path.is_file():
        return path.read_text(encoding="utf-8")
    candidate = _asset_root() / kind / f"{name_or_path}{suffix}"
    try:
        return candidate.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError):
        builtin = sorted(
            p.name.removesuffix(suffix)
            for p in (_asset_root() / kind).iterdir()
            if p.name.endswith(suffix)
        )
        raise ConfigError(
            f"no such {kind.rstrip('s')} {name_or_path!r}: not a file, and not a "
            f"built-in (available: {', '.join(builtin)})"
        )


def _body_text(value) -> str:
    # JSON assets may store multi-line text as a list of lines
    if isinstance(value, list):
        return "\n".join(value)
    return value


def load_template(name_or_path: str) -> PromptTemplate:
    data = json.loads(_read_asset("templates", name_or_path, ".json"))
    return PromptTemplate(
        template_id=data["template_id"],
        body=_body_text(data["body"]),
        language=data.get("language", "it"),
    )


def load_adapter(name_or_path: str) -> ChatAdapter:
    data = json.loads(_read_asset("adapters", name_or_path, ".json"))
    return ChatAdapter(
        adapter_id=data["adapter_id"],
        kind=data["kind"],
        with_system=_body_text(data.get("with_system", "")),
        without_system=_body_text(data.get("without_system", "")),
    )


def _load_string_map(kind: str, name_or_path: str) -> dict[str, str]:
    data = json.loads(_read_asset(kind, name_or_path, ".json"))
    if not isinstance(data, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in data.items()
    ):
        raise ConfigError(f"{kind} asset {name_or_path!r} must map strings to strings")
    return data


def load_alias_table(name_or_path: str) -> dict[str, str]:
    """Raw corpus label -> canonical tag id."""
    return _load_string_map("aliases", name_or_path)


def load_display_names(name_or_path: str) -> dict[str, str]:
    """Canonical tag id -> natural-language name used in prompts."""
    return _load_string_map("display_names", name_or_path)


def load_meta_prompt(name_or_path: str) -> tuple[str, str]:
    """(meta_prompt_id, text) for guideline generation."""
    text = _read_asset("meta_prompts", name_or_path, ".txt")
    path = Path(name_or_path)
    meta_id = path.stem if path.is_file() else name_or_path
    return meta_id, text


def load_canned_dg(name_or_path: str = "canned_dg_it") -> dict[str, dict]:
    """Display name -> canned definition/guidelines, for the mock generator."""
    data = json.loads(_read_asset("canned", name_or_path, ".json"))
    if not isinstance(data, dict):
        raise ConfigError(f"canned D&G asset {name_or_path!r} must be an object")
    return data
