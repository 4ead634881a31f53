"""Brief templates: section order, static prose and slider conditionals.

Template files are plain text::

    %base default                      # optional: start from another template
    %variant default
    %order SystemRules OperatingRules ...
    %disable UpcomingLaunch            # optional
    %settings comparative              # or: floors
    %observe-floors 97.2 94 89.3 87.1 91.7

    @section OperatingRules
    ...prose...

    @when ActiveSettings TA >= 4 and HS >= 4
    ...inserted text...

Predicates compare slider abbreviations (TA, ARP, TS, HS, DIV) against
integers with ``>=``/``<=`` (or ``≥``/``≤``) joined by ``and``/``∧``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from importlib import resources
from pathlib import Path

from ..mandate import SLIDER_ABBREV, SliderConfig


class TemplateError(ValueError):
    code = "TemplateError"


class InvalidPermutation(TemplateError):
    code = "InvalidPermutation"


class SectionId(str, Enum):
    SYSTEM_RULES = "SystemRules"
    OPERATING_RULES = "OperatingRules"
    DIRECTIVE_ROUTER = "DirectiveRouter"
    MARKET_SNAPSHOT = "MarketSnapshot"
    ACTIVE_STRATEGIES = "ActiveStrategies"
    ACTIVE_SETTINGS = "ActiveSettings"
    PORTFOLIO_CONTEXT = "PortfolioContext"
    EXECUTION_CONSTRAINTS = "ExecutionConstraints"
    REAP_CONTEXT = "ReapContext"
    UPCOMING_LAUNCH = "UpcomingLaunch"
    PREVIOUS_DECISIONS = "PreviousDecisions"
    CURRENT_STATE = "CurrentState"


DEFAULT_ORDER = tuple(SectionId)

_CLAUSE = re.compile(r"^\s*(TA|ARP|TS|HS|DIV)\s*(>=|<=|≥|≤)\s*([1-5])\s*$")


@dataclass(frozen=True)
class Predicate:
    clauses: tuple[tuple[str, str, int], ...]

    @classmethod
    def parse(cls, text: str) -> "Predicate":
        parts = re.split(r"\s+(?:and|AND|∧|&&)\s+|\s*∧\s*", text.strip())
        clauses = []
        for p in parts:
            m = _CLAUSE.match(p)
            if not m:
                raise TemplateError(f"bad predicate clause {p!r}")
            op = {"≥": ">=", "≤": "<="}.get(m.group(2), m.group(2))
            clauses.append((m.group(1), op, int(m.group(3))))
        return cls(tuple(clauses))

    def holds(self, sliders: SliderConfig) -> bool:
        for name, op, bound in self.clauses:
            v = getattr(sliders, SLIDER_ABBREV[name])
            if (op == ">=" and v < bound) or (op == "<=" and v > bound):
                return False
        return True

    def __str__(self) -> str:
        return " and ".join(f"{n} {op} {b}" for n, op, b in self.clauses)


@dataclass(frozen=True)
class ConditionalRule:
    section: SectionId
    predicate: Predicate
    text: str


@dataclass(frozen=True)
class BriefTemplate:
    variant_id: str
    section_order: tuple[SectionId, ...]
    static_texts: tuple[tuple[SectionId, str], ...]
    conditional_rules: tuple[ConditionalRule, ...] = ()
    disabled: frozenset[SectionId] = frozenset()
    settings_style: str = "comparative"
    observe_floors: tuple[Fraction, ...] | None = None
    _static: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self) -> None:
        check_order(self.section_order, self.disabled)
        if self.settings_style not in ("comparative", "floors"):
            raise TemplateError(f"unknown settings style {self.settings_style!r}")
        if self.settings_style == "floors" and (not self.observe_floors or len(self.observe_floors) != 5):
            raise TemplateError("floors style needs five observe floors")
        self._static.update(dict(self.static_texts))

    def static(self, section: SectionId) -> str:
        return self._static.get(section, "")

    def rules_for(self, section: SectionId) -> list[ConditionalRule]:
        return [r for r in self.conditional_rules if r.section is section]

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(dump_template(self).encode()).hexdigest()


def check_order(order, disabled=frozenset()) -> None:
    seen = set()
    for s in order:
        if not isinstance(s, SectionId):
            raise InvalidPermutation(f"unknown section {s!r}")
        if s in seen:
            raise InvalidPermutation(f"section {s.value} listed twice")
        seen.add(s)
    missing = set(SectionId) - seen - set(disabled)
    if missing:
        raise InvalidPermutation(f"sections missing from order: {sorted(m.value for m in missing)}")
    if seen & set(disabled):
        raise InvalidPermutation("disabled section listed in order")


def _section(name: str) -> SectionId:
    try:
        return SectionId(name)
    except ValueError:
        raise TemplateError(f"unknown section {name!r}") from None


def parse_template(text: str, *, loader=None) -> BriefTemplate:
    header: dict[str, str] = {}
    static: dict[SectionId, str] = {}
    rules: list[ConditionalRule] = []
    base: BriefTemplate | None = None

    block_kind = None
    block_arg = None
    block_lines: list[str] = []

    def flush():
        if block_kind is None:
            return
        body = "\n".join(block_lines).strip("\n")
        if block_kind == "section":
            static[block_arg] = body
        else:
            rules.append(ConditionalRule(block_arg[0], block_arg[1], body))

    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("@"):
            flush()
            block_lines = []
            parts = line[1:].split(None, 2)
            if parts[0] == "section" and len(parts) == 2:
                block_kind, block_arg = "section", _section(parts[1])
            elif parts[0] == "when" and len(parts) == 3:
                block_kind, block_arg = "when", (_section(parts[1]), Predicate.parse(parts[2]))
            else:
                raise TemplateError(f"line {lineno}: bad block header {line!r}")
        elif block_kind is None:
            if line.startswith("%"):
                key, _, value = line[1:].partition(" ")
                header[key.strip()] = value.strip()
            elif line.strip() and not line.startswith("#"):
                raise TemplateError(f"line {lineno}: text outside a block")
        else:
            block_lines.append(line)
    flush()

    if "base" in header:
        if loader is None:
            loader = load_template
        base = loader(header["base"])

    variant = header.get("variant") or (base.variant_id if base else None)
    if not variant:
        raise TemplateError("template needs a %variant")
    if "order" in header:
        order = tuple(_section(s) for s in header["order"].split())
    elif base:
        order = base.section_order
    else:
        order = DEFAULT_ORDER
    disabled = frozenset(_section(s) for s in header["disable"].split()) if "disable" in header \
        else (base.disabled if base else frozenset())
    style = header.get("settings") or (base.settings_style if base else "comparative")
    floors = None
    if "observe-floors" in header:
        floors = tuple(Fraction(x) for x in header["observe-floors"].split())
    elif base:
        floors = base.observe_floors

    merged = dict(base.static_texts) if base else {}
    merged.update(static)
    all_rules = tuple(base.conditional_rules if base else ()) + tuple(rules)
    return BriefTemplate(variant, order, tuple((s, merged.get(s, "")) for s in SectionId),
                         all_rules, disabled, style, floors)


def dump_template(t: BriefTemplate) -> str:
    """Serialize to the file format (flattened, no %base)."""
    out = [f"%variant {t.variant_id}", "%order " + " ".join(s.value for s in t.section_order)]
    if t.disabled:
        out.append("%disable " + " ".join(s.value for s in SectionId if s in t.disabled))
    out.append(f"%settings {t.settings_style}")
    if t.observe_floors:
        out.append("%observe-floors " + " ".join(str(float(f)) for f in t.observe_floors))
    for sid, body in t.static_texts:
        out += ["", f"@section {sid.value}", body]
    for r in t.conditional_rules:
        out += [f"@when {r.section.value} {r.predicate}", r.text]
    return "\n".join(out) + "\n"


_BUILTIN = {"default": "default.tmpl", "fee-late": "fee_late.tmpl",
            "number-hardened": "number_hardened.tmpl"}
_cache: dict[str, BriefTemplate] = {}


def builtin_variants() -> list[str]:
    return sorted(_BUILTIN)


def load_template(name_or_path: str | Path) -> BriefTemplate:
    """Load a shipped variant by name, or a template file by path."""
    key = str(name_or_path)
    if key in _cache:
        return _cache[key]
    if key in _BUILTIN:
        text = resources.files("vaultsim.templates").joinpath(_BUILTIN[key]).read_text("utf-8")
    else:
        path = Path(key)
        if not path.exists():
            raise TemplateError(f"unknown template {key!r}; builtin: {builtin_variants()}")
        text = path.read_text("utf-8")
    t = parse_template(text)
    _cache[key] = t
    return t


def permute_sections(template: BriefTemplate, new_order, variant_id: str | None = None) -> BriefTemplate:
    order = tuple(s if isinstance(s, SectionId) else _section(s) for s in new_order)
    check_order(order, template.disabled)
    if variant_id is None:
        if order == template.section_order:
            variant_id = template.variant_id
        else:
            tag = hashlib.sha256(" ".join(s.value for s in order).encode()).hexdigest()[:8]
            variant_id = f"{template.variant_id}~{tag}"
    return replace(template, variant_id=variant_id, section_order=order, _static={})


def move_section(template: BriefTemplate, section: SectionId, position: int,
                 variant_id: str | None = None) -> BriefTemplate:
    """Move one section to a 0-based position, keeping the others in order."""
    order = [s for s in template.section_order if s is not section]
    order.insert(position, section)
    return permute_sections(template, order, variant_id)
