"""Single-file plugin documents: parse, validate, serialize, tag-resolve.

A plugin is one UTF-8 text file containing top-level sections delimited by
``<config>``/``</config>``, ``<script>``, ``<window>`` and ``<style>`` tags.
Open and close tags must sit at line start; anything after the tag name in
an open tag is free-form attribute text carried through verbatim. Inside a
section only the matching close tag terminates it, so section bodies may
contain tag-looking lines of other kinds. Text outside sections is ignored.

The config body is a single JSON object. Exactly one config section is
required. The conventional file extension is ``.imjoy.html``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import (
    DuplicateSection,
    InvariantViolation,
    MalformedConfig,
    MalformedDocument,
    MissingConfig,
    MissingRequiredField,
    UnknownTag,
)
from .naming import check_name, is_semver, is_valid_name

PLUGIN_FILE_EXT = ".imjoy.html"

RUNTIME_KINDS = ("window", "worker", "native")

# tag name in the document -> section kind stored on the spec
_TAG_TO_KIND = {
    "config": "config",
    "script": "script",
    "window": "window_template",
    "style": "style",
}
_KIND_TO_TAG = {v: k for k, v in _TAG_TO_KIND.items()}

# canonical serialization order
_SECTION_ORDER = ("config", "script", "window_template", "style")

_OPEN_RE = re.compile(r"^<(config|script|window|style)(\s[^>]*)?>\s*$")

_SCALAR_TYPES = (str, int, float, bool, type(None))

_KNOWN_CONFIG_KEYS = (
    "name",
    "type",
    "version",
    "api_version",
    "tags",
    "description",
    "ui",
    "requirements",
    "dependencies",
    "defaults",
)


@dataclass
class Violation:
    """One invariant violation found by validate_spec."""

    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


@dataclass
class PluginSpec:
    """Parsed single-file plugin document."""

    name: str
    runtime_kind: str
    version: str
    api_version: str
    tags: list[str] = field(default_factory=list)
    description: str | None = None
    ui: str | None = None
    # flat list of requirement strings, or map tag -> list
    requirements: list[str] | dict[str, list[str]] = field(default_factory=list)
    dependencies: list[str] = field(default_factory=list)
    defaults: dict[str, object] = field(default_factory=dict)
    code_sections: dict[str, str] = field(default_factory=dict)
    # attribute text after the tag name of each section, kept verbatim
    section_attrs: dict[str, str] = field(default_factory=dict)
    # unknown config keys, preserved across parse/serialize but never interpreted
    extra_config: dict[str, object] = field(default_factory=dict)
    raw_source: str = field(default="", compare=False, repr=False)


@dataclass
class ResolvedPlugin:
    """Outcome of selecting one tag variant of a spec."""

    spec: PluginSpec
    chosen_tag: str | None
    effective_requirements: list[str]
    effective_code: dict[str, str]


def _split_sections(source: str) -> tuple[dict[str, str], dict[str, str]]:
    """Return (kind -> body, kind -> attrs) for the document's sections."""
    sections: dict[str, str] = {}
    attrs: dict[str, str] = {}
    lines = source.split("\n")
    i = 0
    while i < len(lines):
        m = _OPEN_RE.match(lines[i])
        if m is None:
            i += 1
            continue
        tag = m.group(1)
        kind = _TAG_TO_KIND[tag]
        if kind in sections:
            raise DuplicateSection(kind)
        close_re = re.compile(rf"^</{tag}>\s*$")
        body_lines: list[str] = []
        j = i + 1
        while j < len(lines):
            if close_re.match(lines[j]):
                break
            body_lines.append(lines[j])
            j += 1
        else:
            raise MalformedDocument(f"<{tag}> section opened on line {i + 1} is never closed")
        sections[kind] = "\n".join(body_lines)
        attr_text = (m.group(2) or "").strip()
        if attr_text:
            attrs[kind] = attr_text
        i = j + 1
    return sections, attrs


def _require_str(config: dict, key: str) -> str:
    if key not in config:
        raise MissingRequiredField(key)
    value = config[key]
    if not isinstance(value, str) or not value:
        raise MalformedConfig(f"config field {key!r} must be a non-empty string")
    return value


def _parse_requirements(value: object) -> list[str] | dict[str, list[str]]:
    if isinstance(value, list):
        if not all(isinstance(r, str) for r in value):
            raise MalformedConfig("requirements list entries must be strings")
        return list(value)
    if isinstance(value, dict):
        out: dict[str, list[str]] = {}
        for key, reqs in value.items():
            if not isinstance(key, str):
                raise MalformedConfig("requirements keys must be strings")
            if not isinstance(reqs, list) or not all(isinstance(r, str) for r in reqs):
                raise MalformedConfig(f"requirements for tag {key!r} must be a list of strings")
            out[key] = list(reqs)
        return out
    raise MalformedConfig("requirements must be a list or a tag-keyed map")


def parse_plugin_file(source: str) -> PluginSpec:
    """Parse a plugin document into a PluginSpec.

    Structural section errors, a missing/duplicated/malformed config and an
    illegal name are hard errors; softer invariants (semver, tag/section
    consistency) are left to validate_spec so that a spec under repair can
    still be loaded and inspected.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    sections, attrs = _split_sections(source)
    if "config" not in sections:
        raise MissingConfig("document has no <config> section")
    try:
        config = json.loads(sections["config"])
    except json.JSONDecodeError as e:
        raise MalformedConfig(f"config body is not valid JSON: {e}") from e
    if not isinstance(config, dict):
        raise MalformedConfig("config body must be a JSON object")

    name = check_name(_require_str(config, "name"), "plugin name")
    kind = _require_str(config, "type")
    if kind not in RUNTIME_KINDS:
        raise MalformedConfig(f"unknown runtime type {kind!r}; expected one of {RUNTIME_KINDS}")
    version = _require_str(config, "version")
    api_version = _require_str(config, "api_version")

    tags = config.get("tags", [])
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise MalformedConfig("tags must be a list of strings")

    description = config.get("description")
    if description is not None and not isinstance(description, str):
        raise MalformedConfig("description must be a string")
    ui = config.get("ui")
    if ui is not None and not isinstance(ui, str):
        raise MalformedConfig("ui must be a string")

    requirements = _parse_requirements(config.get("requirements", []))

    dependencies = config.get("dependencies", [])
    if not isinstance(dependencies, list) or not all(isinstance(d, str) for d in dependencies):
        raise MalformedConfig("dependencies must be a list of reference strings")

    defaults = config.get("defaults", {})
    if not isinstance(defaults, dict) or not all(
        isinstance(k, str) and isinstance(v, _SCALAR_TYPES) for k, v in defaults.items()
    ):
        raise MalformedConfig("defaults must map string keys to scalar values")

    extra = {k: v for k, v in config.items() if k not in _KNOWN_CONFIG_KEYS}
    code_sections = {k: v for k, v in sections.items() if k != "config"}

    return PluginSpec(
        name=name,
        runtime_kind=kind,
        version=version,
        api_version=api_version,
        tags=list(tags),
        description=description,
        ui=ui,
        requirements=requirements,
        dependencies=list(dependencies),
        defaults=dict(defaults),
        code_sections=code_sections,
        section_attrs=attrs,
        extra_config=extra,
        raw_source=source,
    )


def validate_spec(spec: PluginSpec) -> list[Violation]:
    """Check every invariant; an empty list means the spec is sound."""
    out: list[Violation] = []
    if not is_valid_name(spec.name):
        out.append(Violation("IllegalName", f"plugin name {spec.name!r} is not a legal name"))
    if spec.runtime_kind not in RUNTIME_KINDS:
        out.append(Violation("BadRuntimeKind", f"unknown runtime kind {spec.runtime_kind!r}"))
    if not is_semver(spec.version):
        out.append(Violation("BadVersion", f"version {spec.version!r} is not a semver string"))
    if not spec.api_version:
        out.append(Violation("BadApiVersion", "api_version must be non-empty"))
    seen: set[str] = set()
    for t in spec.tags:
        if t in seen:
            out.append(Violation("DuplicateTag", f"tag {t!r} listed twice"))
        seen.add(t)
    if isinstance(spec.requirements, dict):
        if not spec.tags:
            for key in spec.requirements:
                out.append(
                    Violation("OrphanTagKey", f"requirements keyed by {key!r} but spec has no tags")
                )
        else:
            for key in spec.requirements:
                if key not in spec.tags:
                    out.append(
                        Violation("OrphanTagKey", f"requirements key {key!r} is not a declared tag")
                    )
    if spec.runtime_kind in ("worker", "native") and "script" not in spec.code_sections:
        out.append(Violation("MissingScript", f"{spec.runtime_kind} plugin has no <script> section"))
    if spec.runtime_kind != "window":
        for kind in ("window_template", "style"):
            if kind in spec.code_sections:
                out.append(
                    Violation(
                        "UnexpectedSection",
                        f"<{_KIND_TO_TAG[kind]}> section requires runtime kind 'window', "
                        f"not {spec.runtime_kind!r}",
                    )
                )
    return out


def _config_dict(spec: PluginSpec) -> dict:
    config: dict[str, object] = {
        "name": spec.name,
        "type": spec.runtime_kind,
        "version": spec.version,
        "api_version": spec.api_version,
    }
    if spec.tags:
        config["tags"] = spec.tags
    if spec.description is not None:
        config["description"] = spec.description
    if spec.ui is not None:
        config["ui"] = spec.ui
    if spec.requirements or isinstance(spec.requirements, dict):
        config["requirements"] = spec.requirements
    if spec.dependencies:
        config["dependencies"] = spec.dependencies
    if spec.defaults:
        config["defaults"] = spec.defaults
    config.update(spec.extra_config)
    return config


def serialize_plugin_file(spec: PluginSpec) -> str:
    """Render a spec back to document text in canonical section order.

    The output reparses to an equal spec (raw_source aside). Specs that
    violate their invariants are refused.
    """
    violations = validate_spec(spec)
    if violations:
        raise InvariantViolation("; ".join(str(v) for v in violations))

    body = json.dumps(_config_dict(spec), indent=2, ensure_ascii=False)
    parts: list[str] = []
    for kind in _SECTION_ORDER:
        if kind == "config":
            text = body
        elif kind in spec.code_sections:
            text = spec.code_sections[kind]
        else:
            continue
        tag = _KIND_TO_TAG[kind]
        attrs = spec.section_attrs.get(kind, "")
        open_tag = f"<{tag} {attrs}>" if attrs else f"<{tag}>"
        parts.append(f"{open_tag}\n{text}\n</{tag}>")
    return "\n\n".join(parts) + "\n"


def resolve_tag(spec: PluginSpec, tag: str | None = None) -> ResolvedPlugin:
    """Select one tag variant, fixing the effective requirement set.

    Untagged specs admit no tag argument. Tagged specs default to their
    first listed tag, which keeps link installs that omit a tag
    deterministic. A tag missing from a tag-keyed requirements map selects
    the empty requirement set.
    """
    if not spec.tags:
        if tag is not None:
            raise UnknownTag(tag, [])
        chosen = None
    elif tag is None:
        chosen = spec.tags[0]
    elif tag in spec.tags:
        chosen = tag
    else:
        raise UnknownTag(tag, list(spec.tags))

    if isinstance(spec.requirements, dict):
        effective = list(spec.requirements.get(chosen, [])) if chosen is not None else []
    else:
        effective = list(spec.requirements)

    return ResolvedPlugin(
        spec=spec,
        chosen_tag=chosen,
        effective_requirements=effective,
        effective_code=dict(spec.code_sections),
    )
