"""Span-exact annotation model for drug-label sentences.

Character offsets count Unicode code points of the owning sentence's text,
are zero-based, end-exclusive, and always sentence-relative.  Every type
here is an immutable value object: instances can be shared freely across
threads or processes, and functions in this module never mutate their
arguments.

A sentence carries entity mentions (triggers, precipitants, and specific
interactions, the latter serving as effect mentions) plus interaction
records that reference mentions by id.  The three interaction kinds carry
mutually exclusive outcome payloads:

* ``PD``  - pharmacodynamic: links the precipitant to one effect mention.
* ``PK``  - pharmacokinetic: carries one outcome code from a fixed
  vocabulary (or a provisional coarse-direction marker in mapped corpora).
* ``UN``  - unspecified: no payload.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable


class MentionKind(str, Enum):
    TRIGGER = "Trigger"
    PRECIPITANT = "Precipitant"
    SPECIFIC_INTERACTION = "SpecificInteraction"


class InteractionKind(str, Enum):
    PD = "PD"
    PK = "PK"
    UN = "UN"


class Direction(str, Enum):
    """Coarse direction of a pharmacokinetic outcome."""

    INCREASE = "Increase"
    DECREASE = "Decrease"


#: Provisional outcome markers used by mapped coarse corpora.  They stand in
#: for a real code until bootstrapping resolves them and are rejected by
#: validation everywhere else.
COARSE_INCREASE = "COARSE_INCREASE"
COARSE_DECREASE = "COARSE_DECREASE"
COARSE_MARKERS = {
    COARSE_INCREASE: Direction.INCREASE,
    COARSE_DECREASE: Direction.DECREASE,
}


class OffsetError(ValueError):
    """A span does not fit the text it is resolved against."""


class AnnotationError(ValueError):
    """An annotation structure violates a model invariant."""


@dataclass(frozen=True, order=True)
class Span:
    """Half-open character interval ``[start, end)``."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end <= self.start:
            raise AnnotationError(f"degenerate span [{self.start}, {self.end})")

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class Mention:
    """One annotated entity.  ``spans`` is sorted and non-overlapping;
    more than one span denotes a discontiguous mention (a coordinated
    conjunct sharing its head with a sibling, for example)."""

    id: str
    kind: MentionKind
    spans: tuple[Span, ...]
    text: str


@dataclass(frozen=True)
class Interaction:
    """One interaction statement anchored at a precipitant mention."""

    id: str
    kind: InteractionKind
    precipitant: str
    effect: str | None = None
    code: str | None = None


@dataclass(frozen=True)
class NciCode:
    """Outcome code paired with its coarse direction."""

    code: str
    direction: Direction


class NciVocabulary:
    """Ordered outcome-code vocabulary with a code -> direction map.

    The vocabulary is configuration, not code: the packaged default is a
    placeholder list (see ``data/nci_codes.json``) that fixes only size and
    direction balance, and deployments substitute the real list via
    :meth:`from_json_file`.
    """

    def __init__(self, entries: Iterable[NciCode]):
        self._entries = tuple(entries)
        self._directions = {e.code: e.direction for e in self._entries}
        if len(self._directions) != len(self._entries):
            raise AnnotationError("duplicate code in outcome vocabulary")

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(e.code for e in self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, code: str) -> bool:
        return code in self._directions

    def direction(self, code: str) -> Direction:
        try:
            return self._directions[code]
        except KeyError:
            raise AnnotationError(f"unknown outcome code {code!r}") from None

    def index(self, code: str) -> int:
        try:
            return self.codes.index(code)
        except ValueError:
            raise AnnotationError(f"unknown outcome code {code!r}") from None

    def to_json(self) -> str:
        doc = {
            "format": "nci-vocab/1",
            "codes": [
                {"code": e.code, "direction": e.direction.value}
                for e in self._entries
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "NciVocabulary":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"outcome vocabulary is not valid JSON: {exc}")
        if not isinstance(doc, dict) or doc.get("format") != "nci-vocab/1":
            raise AnnotationError("outcome vocabulary must declare format nci-vocab/1")
        entries = []
        for row in doc.get("codes", []):
            entries.append(NciCode(str(row["code"]), Direction(row["direction"])))
        if not entries:
            raise AnnotationError("outcome vocabulary is empty")
        return cls(entries)

    @classmethod
    def from_json_file(cls, path) -> "NciVocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def default_nci_vocabulary() -> NciVocabulary:
    """Load the packaged placeholder vocabulary (20 codes, 10 per direction)."""
    text = resources.files("ddiex").joinpath("data/nci_codes.json").read_text("utf-8")
    return NciVocabulary.from_json(text)


@dataclass(frozen=True, eq=True)
class Sentence:
    """One sentence of a label.  ``meta`` holds free-form bookkeeping (the
    synthetic generator records injected drop cases there) and round-trips
    through serialization.  The dict field makes Sentence unhashable; hash
    annotation keys, not sentences."""

    id: str
    section: str
    text: str
    mentions: tuple[Mention, ...] = ()
    interactions: tuple[Interaction, ...] = ()
    meta: dict = field(default_factory=dict)

    def mention_by_id(self, mid: str) -> Mention:
        for m in self.mentions:
            if m.id == mid:
                return m
        raise AnnotationError(f"sentence {self.id}: no mention {mid!r}")


@dataclass(frozen=True)
class DrugLabel:
    """All sentences of one structured product label, section labels kept
    per sentence."""

    id: str
    drug_name: str
    aliases: tuple[str, ...] = ()
    sentences: tuple[Sentence, ...] = ()


def covered_text(sentence: Sentence, mention: Mention) -> str:
    """Join the text slices under the mention's spans with single spaces.

    Raises :class:`OffsetError` when any span exceeds the sentence text.
    """
    pieces = []
    for span in mention.spans:
        if span.end > len(sentence.text):
            raise OffsetError(
                f"sentence {sentence.id}: mention {mention.id} span "
                f"[{span.start}, {span.end}) exceeds text length {len(sentence.text)}"
            )
        pieces.append(sentence.text[span.start: span.end])
    return " ".join(pieces)


def _validate_mention(sentence: Sentence, mention: Mention, out: list[str]) -> None:
    where = f"sentence {sentence.id}, mention {mention.id}"
    if not mention.spans:
        out.append(f"{where}: no spans")
        return
    for span in mention.spans:
        if span.end > len(sentence.text):
            out.append(f"{where}: span [{span.start}, {span.end}) exceeds text")
            return
    for a, b in zip(mention.spans, mention.spans[1:]):
        if b.start < a.end:
            out.append(f"{where}: spans out of order or overlapping")
            return
    joined = covered_text(sentence, mention)
    if mention.text != joined:
        out.append(f"{where}: text {mention.text!r} != covered text {joined!r}")


def _validate_interaction(
    sentence: Sentence,
    inter: Interaction,
    kinds: dict[str, MentionKind],
    vocab: NciVocabulary,
    allow_provisional: bool,
    out: list[str],
) -> None:
    where = f"sentence {sentence.id}, interaction {inter.id}"
    pk = kinds.get(inter.precipitant)
    if pk is None:
        out.append(f"{where}: precipitant {inter.precipitant!r} not found")
    elif pk is not MentionKind.PRECIPITANT:
        out.append(f"{where}: precipitant reference has kind {pk.value}")
    if inter.kind is InteractionKind.PD:
        if inter.code is not None:
            out.append(f"{where}: PD interaction carries a code")
        if inter.effect is None:
            out.append(f"{where}: PD interaction lacks an effect")
        else:
            ek = kinds.get(inter.effect)
            if ek is None:
                out.append(f"{where}: effect {inter.effect!r} not found")
            elif ek is not MentionKind.SPECIFIC_INTERACTION:
                out.append(f"{where}: effect reference has kind {ek.value}")
    elif inter.kind is InteractionKind.PK:
        if inter.effect is not None:
            out.append(f"{where}: PK interaction carries an effect")
        if inter.code is None:
            out.append(f"{where}: PK interaction lacks a code")
        elif inter.code in COARSE_MARKERS:
            if not allow_provisional:
                out.append(f"{where}: provisional marker {inter.code} not allowed here")
        elif inter.code not in vocab:
            out.append(f"{where}: code {inter.code!r} not in outcome vocabulary")
    else:
        if inter.effect is not None or inter.code is not None:
            out.append(f"{where}: UN interaction carries an outcome payload")


def validate_sentence(
    sentence: Sentence,
    vocab: NciVocabulary | None = None,
    allow_provisional: bool = False,
) -> list[str]:
    """Return all invariant violations in one sentence, empty when clean."""
    vocab = vocab if vocab is not None else default_nci_vocabulary()
    out: list[str] = []
    seen: set[str] = set()
    for m in sentence.mentions:
        if m.id in seen:
            out.append(f"sentence {sentence.id}: duplicate mention id {m.id!r}")
        seen.add(m.id)
        _validate_mention(sentence, m, out)
    kinds = {m.id: m.kind for m in sentence.mentions}
    seen_i: set[str] = set()
    for inter in sentence.interactions:
        if inter.id in seen_i:
            out.append(f"sentence {sentence.id}: duplicate interaction id {inter.id!r}")
        seen_i.add(inter.id)
        _validate_interaction(sentence, inter, kinds, vocab, allow_provisional, out)
    return out


def validate(
    label: DrugLabel,
    vocab: NciVocabulary | None = None,
    allow_provisional: bool = False,
) -> list[str]:
    """Validate one drug label; returns a list of violations, empty if valid."""
    vocab = vocab if vocab is not None else default_nci_vocabulary()
    out: list[str] = []
    if not label.drug_name.strip():
        out.append(f"label {label.id}: empty drug name")
    if label.drug_name in label.aliases:
        out.append(f"label {label.id}: alias duplicates the drug name")
    seen: set[str] = set()
    for sent in label.sentences:
        if sent.id in seen:
            out.append(f"label {label.id}: duplicate sentence id {sent.id!r}")
        seen.add(sent.id)
        out.extend(validate_sentence(sent, vocab, allow_provisional))
    return out
