"""Interaction-type-aware IOB tagging of drug-label sentences.

Eleven tags: ``O`` plus B/I pairs for five entity letters.  ``T`` marks
triggers, ``E`` effects (specific interactions), and precipitants carry
their interaction type in the letter itself: ``D`` pharmacodynamic,
``K`` pharmacokinetic, ``U`` unspecified.  A single tag sequence thereby
answers both "which tokens name an entity" and "what kind of interaction
does this precipitant participate in".

Encoding is lossy by design: one tag per token cannot express
discontiguous mentions, overlapping mentions, or a precipitant engaged in
interactions of two kinds.  Every drop is itemized in an
:class:`EncodeReport` with a stable reason string, which makes the
ceiling measurable: :func:`roundtrip_upperbound` encodes, decodes,
re-links against gold outcomes, and scores the reconstruction.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field, replace

from .annot import (
    DrugLabel,
    Interaction,
    InteractionKind,
    Mention,
    MentionKind,
    Sentence,
    Span,
)
from .corpus import LABEL_DRUG_TOKEN, CorpusFile
from . import score as score_mod

TAGS = ("O", "B-T", "I-T", "B-E", "I-E", "B-D", "I-D", "B-K", "I-K", "B-U", "I-U")
TAG_INDEX = {t: i for i, t in enumerate(TAGS)}
N_TAGS = len(TAGS)
OUTSIDE = "O"

_LETTER_OF_PRECIPITANT = {
    InteractionKind.PD: "D",
    InteractionKind.PK: "K",
    InteractionKind.UN: "U",
}
_KIND_OF_LETTER = {
    "T": (MentionKind.TRIGGER, None),
    "E": (MentionKind.SPECIFIC_INTERACTION, None),
    "D": (MentionKind.PRECIPITANT, InteractionKind.PD),
    "K": (MentionKind.PRECIPITANT, InteractionKind.PK),
    "U": (MentionKind.PRECIPITANT, InteractionKind.UN),
}

_PUNCT = set(string.punctuation)


class TaggingError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    """One token with its span in the original sentence text.  Bound tokens
    keep the span of the surface they replace."""

    text: str
    span: Span
    is_label_drug: bool = False


@dataclass(frozen=True)
class BindingContext:
    """Subject-drug surface forms for LABELDRUG binding."""

    drug_name: str
    aliases: tuple[str, ...] = ()
    proxy_terms: tuple[str, ...] = ()

    @classmethod
    def for_label(cls, label: DrugLabel, proxy_terms: tuple[str, ...] = ()):
        return cls(label.drug_name, label.aliases, proxy_terms)


@dataclass(frozen=True)
class TagSequence:
    sentence_id: str
    sentence_text: str
    tokens: tuple[Token, ...]
    tags: tuple[str, ...]
    weight_class: str = "primary"

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.tags):
            raise TaggingError(
                f"sentence {self.sentence_id}: {len(self.tokens)} tokens "
                f"but {len(self.tags)} tags"
            )
        for t in self.tags:
            if t not in TAG_INDEX:
                raise TaggingError(f"unknown tag {t!r}")
        if self.weight_class not in ("primary", "auxiliary"):
            raise TaggingError(f"unknown weight class {self.weight_class!r}")


@dataclass(frozen=True)
class DropEntry:
    item: str     # "mention" or "interaction"
    id: str
    reason: str


@dataclass(frozen=True)
class EncodeReport:
    """Per-sentence account of what encoding kept and what it dropped.

    ``kept_mentions`` lists gold mention ids recoverable from the tag
    sequence (coordination-absorbed members count as kept when the
    coordination mode is on).  Every gold mention appears exactly once,
    either there or in ``dropped``; interactions lost through a dropped
    constituent or a mixed-kind precipitant get their own entries.
    """

    sentence_id: str
    kept_mentions: tuple[str, ...] = ()
    dropped: tuple[DropEntry, ...] = ()

    def dropped_ids(self, item: str) -> set[str]:
        return {e.id for e in self.dropped if e.item == item}


def tokenize(text: str) -> list[Token]:
    """Whitespace split, then strip leading and trailing punctuation into
    single-character tokens.  Hyphens inside a word stay put."""
    tokens: list[Token] = []
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        a, z = i, j
        while a < z and text[a] in _PUNCT:
            tokens.append(Token(text[a], Span(a, a + 1)))
            a += 1
        trailing: list[Token] = []
        while z > a and text[z - 1] in _PUNCT:
            trailing.append(Token(text[z - 1], Span(z - 1, z)))
            z -= 1
        if a < z:
            tokens.append(Token(text[a:z], Span(a, z)))
        tokens.extend(reversed(trailing))
        i = j
    return tokens


def _pattern_words(surface: str) -> tuple[str, ...]:
    return tuple(t.text.lower() for t in tokenize(surface))


def _bind_patterns(tokens: list[Token], patterns: list[tuple[str, ...]]) -> tuple[list[Token], int]:
    out: list[Token] = []
    hits = 0
    i = 0
    lowered = [t.text.lower() for t in tokens]
    while i < len(tokens):
        matched = False
        for pat in patterns:
            k = len(pat)
            if k and tuple(lowered[i: i + k]) == pat:
                out.append(
                    Token(
                        LABEL_DRUG_TOKEN,
                        Span(tokens[i].span.start, tokens[i + k - 1].span.end),
                        is_label_drug=True,
                    )
                )
                i += k
                hits += 1
                matched = True
                break
        if not matched:
            out.append(tokens[i])
            i += 1
    return out, hits


def bind_label_drug(tokens: list[Token], context: BindingContext) -> list[Token]:
    """Replace each longest case-insensitive occurrence of the subject
    drug's name or aliases with one LABELDRUG token.

    When nothing matches and proxy terms are configured, those class
    proxies (for example "drugs" in "other antiarrhythmic drugs") are
    bound instead.
    """
    surfaces = [context.drug_name] + list(context.aliases)
    patterns = sorted({_pattern_words(s) for s in surfaces if s.strip()},
                      key=len, reverse=True)
    bound, hits = _bind_patterns(tokens, patterns)
    if hits == 0 and context.proxy_terms:
        proxies = sorted({_pattern_words(s) for s in context.proxy_terms if s.strip()},
                         key=len, reverse=True)
        bound, _ = _bind_patterns(tokens, proxies)
    return bound


@dataclass
class _Candidate:
    mention: Mention
    letter: str
    tok_range: tuple[int, int]          # inclusive token indices
    merged: bool                        # covering run for a discontiguous mention
    order: int
    absorbed: list[str] = field(default_factory=list)


def _char_len(c: _Candidate) -> int:
    if c.merged:
        return c.mention.spans[-1].end - c.mention.spans[0].start
    return sum(s.end - s.start for s in c.mention.spans)


def _token_range(spans, starts: dict, ends: dict) -> tuple[int, int] | None:
    first = starts.get(spans[0].start)
    last = ends.get(spans[-1].end)
    if first is None or last is None or last < first:
        return None
    return first, last


def _ranges_overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def encode(
    sentence: Sentence,
    binding: BindingContext | None = None,
    weight_class: str = "primary",
    coordination_mode: bool = False,
) -> tuple[TagSequence, EncodeReport]:
    """Project gold annotations onto one tag per token.

    Drop rules, applied in this order with stable reason strings:

    * ``discontiguous``: multi-span mention with the coordination mode
      off (on, it is encoded as one covering run and same-letter mentions
      inside that run are absorbed as recoverable).
    * ``tokenization-mismatch``: mention boundaries do not align with
      token boundaries.
    * ``unlinked-precipitant``: precipitant referenced by no interaction.
    * ``mixed-kind``: interactions beyond the precipitant's first kind
      (sentence order) are dropped; the mention keeps the first kind.
    * ``overlap``: the longer mention wins; ties prefer the earlier one.

    Interactions lost through their mentions are reported with
    ``precipitant-dropped`` or ``effect-dropped``.
    """
    tokens = tokenize(sentence.text)
    if binding is not None:
        tokens = bind_label_drug(tokens, binding)
    starts = {t.span.start: i for i, t in enumerate(tokens)}
    ends = {t.span.end: i for i, t in enumerate(tokens)}

    dropped: list[DropEntry] = []
    kept: list[str] = []
    candidates: list[_Candidate] = []

    precip_kind: dict[str, InteractionKind] = {}
    for m in sentence.mentions:
        if m.kind is not MentionKind.PRECIPITANT:
            continue
        kinds_seen: list[InteractionKind] = []
        for inter in sentence.interactions:
            if inter.precipitant == m.id and inter.kind not in kinds_seen:
                kinds_seen.append(inter.kind)
        if not kinds_seen:
            dropped.append(DropEntry("mention", m.id, "unlinked-precipitant"))
            continue
        precip_kind[m.id] = kinds_seen[0]
        for inter in sentence.interactions:
            if inter.precipitant == m.id and inter.kind is not kinds_seen[0]:
                dropped.append(DropEntry("interaction", inter.id, "mixed-kind"))

    already = {e.id for e in dropped if e.item == "mention"}
    for order, m in enumerate(sentence.mentions):
        if m.id in already:
            continue
        if m.kind is MentionKind.TRIGGER:
            letter = "T"
        elif m.kind is MentionKind.SPECIFIC_INTERACTION:
            letter = "E"
        else:
            letter = _LETTER_OF_PRECIPITANT[precip_kind[m.id]]
        merged = False
        if len(m.spans) > 1:
            if not coordination_mode:
                dropped.append(DropEntry("mention", m.id, "discontiguous"))
                continue
            merged = True
        rng = _token_range(m.spans, starts, ends)
        if rng is None:
            dropped.append(DropEntry("mention", m.id, "tokenization-mismatch"))
            continue
        candidates.append(_Candidate(m, letter, rng, merged, order))

    candidates.sort(key=lambda c: (-_char_len(c), c.tok_range[0], c.order))
    accepted: list[_Candidate] = []
    for cand in candidates:
        clash = None
        for acc in accepted:
            if _ranges_overlap(cand.tok_range, acc.tok_range):
                clash = acc
                break
        if clash is None:
            accepted.append(cand)
            continue
        if (
            coordination_mode
            and clash.merged
            and clash.letter == cand.letter
            and clash.tok_range[0] <= cand.tok_range[0]
            and cand.tok_range[1] <= clash.tok_range[1]
        ):
            clash.absorbed.append(cand.mention.id)
        else:
            dropped.append(DropEntry("mention", cand.mention.id, "overlap"))

    tags = [OUTSIDE] * len(tokens)
    for cand in accepted:
        first, last = cand.tok_range
        tags[first] = f"B-{cand.letter}"
        for i in range(first + 1, last + 1):
            tags[i] = f"I-{cand.letter}"
        kept.append(cand.mention.id)
        kept.extend(cand.absorbed)

    kept_set = set(kept)
    interaction_dropped = {e.id for e in dropped if e.item == "interaction"}
    for inter in sentence.interactions:
        if inter.id in interaction_dropped:
            continue
        if inter.precipitant not in kept_set:
            dropped.append(DropEntry("interaction", inter.id, "precipitant-dropped"))
        elif inter.kind is InteractionKind.PD and inter.effect not in kept_set:
            dropped.append(DropEntry("interaction", inter.id, "effect-dropped"))

    seq = TagSequence(
        sentence_id=sentence.id,
        sentence_text=sentence.text,
        tokens=tuple(tokens),
        tags=tuple(tags),
        weight_class=weight_class,
    )
    report = EncodeReport(
        sentence_id=sentence.id,
        kept_mentions=tuple(kept),
        dropped=tuple(dropped),
    )
    return seq, report


def decode(seq: TagSequence) -> tuple[tuple[Mention, ...], dict[str, InteractionKind]]:
    """Recover mentions from a tag sequence, repairing malformed IOB runs.

    An ``I-X`` without a preceding ``B-X`` (orphan, or following a run of
    a different letter) opens a new run, as if it were ``B-X``.  Returns
    the mentions plus each precipitant mention id's interaction kind.
    """
    mentions: list[Mention] = []
    precip_kinds: dict[str, InteractionKind] = {}

    def close(letter: str, first: int, last: int) -> None:
        span = Span(seq.tokens[first].span.start, seq.tokens[last].span.end)
        kind, ikind = _KIND_OF_LETTER[letter]
        mid = f"m{len(mentions)}"
        mentions.append(
            Mention(
                id=mid,
                kind=kind,
                spans=(span,),
                text=seq.sentence_text[span.start: span.end],
            )
        )
        if ikind is not None:
            precip_kinds[mid] = ikind

    cur: str | None = None
    first = 0
    for i, tag in enumerate(seq.tags):
        if tag == OUTSIDE:
            if cur is not None:
                close(cur, first, i - 1)
                cur = None
            continue
        mode, letter = tag.split("-", 1)
        if mode == "B" or cur != letter:
            if cur is not None:
                close(cur, first, i - 1)
            cur = letter
            first = i
    if cur is not None:
        close(cur, first, len(seq.tags) - 1)
    return tuple(mentions), precip_kinds


PRECIPITANT_TOKEN = "PRECIPITANT"
EFFECT_TOKEN = "EFFECT"


def entity_bind(
    tokens: list[Token],
    precipitant: Mention,
    effect: Mention | None = None,
) -> list[Token]:
    """Replace the target precipitant's tokens with the generic
    PRECIPITANT token and, when given, the candidate effect's tokens with
    EFFECT.

    Replacement is per token position, so the sequence keeps its length
    and stays row-aligned with any encoding of the same sentence.
    Mention boundaries must coincide with token boundaries.  Binding is
    idempotent: spans are preserved, so re-binding the same mentions is a
    no-op.
    """

    def covered(span: Span) -> list[int]:
        idx = [
            i for i, t in enumerate(tokens)
            if span.start <= t.span.start and t.span.end <= span.end
        ]
        if not idx or tokens[idx[0]].span.start != span.start \
                or tokens[idx[-1]].span.end != span.end:
            raise TaggingError(
                f"mention span [{span.start}, {span.end}) does not align "
                "with token boundaries"
            )
        return idx

    out = list(tokens)
    for span in precipitant.spans:
        for i in covered(span):
            out[i] = Token(PRECIPITANT_TOKEN, tokens[i].span)
    if effect is not None:
        for span in effect.spans:
            for i in covered(span):
                out[i] = Token(EFFECT_TOKEN, tokens[i].span)
    return out


# ---------------------------------------------------------------------------
# round-trip ceiling


@dataclass(frozen=True)
class RoundtripReport:
    scores: "score_mod.ScoreReport"
    drop_counts: dict
    predicted_entity_recall: float
    predicted_relation_recall: float
    predicted: CorpusFile
    reports: tuple[EncodeReport, ...]


def reconstruct_sentence(
    sentence: Sentence,
    mentions: tuple[Mention, ...],
    precip_kinds: dict[str, InteractionKind],
) -> Sentence:
    """Rebuild a fully linked sentence from decoded mentions by borrowing
    outcome payloads from gold annotations with identical spans."""
    gold_at: dict[tuple, Mention] = {
        (m.kind, tuple(m.spans)): m for m in sentence.mentions
    }
    decoded_at: dict[tuple, Mention] = {
        (m.kind, tuple(m.spans)): m for m in mentions
    }
    interactions: list[Interaction] = []
    for m in mentions:
        kind = precip_kinds.get(m.id)
        if kind is None:
            continue
        gold = gold_at.get((MentionKind.PRECIPITANT, tuple(m.spans)))
        linked = False
        if gold is not None:
            for inter in sentence.interactions:
                if inter.precipitant != gold.id or inter.kind is not kind:
                    continue
                if kind is InteractionKind.PD:
                    eff_gold = sentence.mention_by_id(inter.effect)
                    eff = decoded_at.get(
                        (MentionKind.SPECIFIC_INTERACTION, tuple(eff_gold.spans))
                    )
                    if eff is None:
                        continue
                    interactions.append(
                        Interaction(
                            id=f"i{len(interactions)}", kind=kind,
                            precipitant=m.id, effect=eff.id,
                        )
                    )
                elif kind is InteractionKind.PK:
                    interactions.append(
                        Interaction(
                            id=f"i{len(interactions)}", kind=kind,
                            precipitant=m.id, code=inter.code,
                        )
                    )
                else:
                    interactions.append(
                        Interaction(
                            id=f"i{len(interactions)}", kind=kind, precipitant=m.id,
                        )
                    )
                linked = True
        if not linked and kind is InteractionKind.UN:
            interactions.append(
                Interaction(id=f"i{len(interactions)}", kind=kind, precipitant=m.id)
            )
    return Sentence(
        id=sentence.id,
        section=sentence.section,
        text=sentence.text,
        mentions=tuple(mentions),
        interactions=tuple(interactions),
    )


def roundtrip_upperbound(
    corpus: CorpusFile, coordination_mode: bool = False
) -> RoundtripReport:
    """Encode every sentence, decode it back, restore gold outcome links,
    and score the reconstruction against the original corpus.

    With unique annotation keys per sentence (the synthetic generator
    guarantees this) precision is exact and the scored recalls equal the
    report-predicted ones: kept mentions over gold mentions for entities,
    undropped interactions over gold interactions for relations.
    """
    labels = []
    reports: list[EncodeReport] = []
    drop_counts: dict[str, int] = {}
    kept_m = total_m = kept_i = total_i = 0
    for label in corpus.labels:
        context = BindingContext.for_label(label)
        sentences = []
        for sent in label.sentences:
            seq, report = encode(
                sent, context, coordination_mode=coordination_mode
            )
            reports.append(report)
            mentions, precip_kinds = decode(seq)
            if coordination_mode:
                from .infer import split_coordination

                split_out: list[Mention] = []
                split_kinds: dict[str, InteractionKind] = {}
                for m in mentions:
                    parts = split_coordination(m, seq.sentence_text)
                    for part in parts:
                        new_id = f"m{len(split_out)}"
                        split_out.append(replace(part, id=new_id))
                        if m.id in precip_kinds:
                            split_kinds[new_id] = precip_kinds[m.id]
                mentions = tuple(split_out)
                precip_kinds = split_kinds
            sentences.append(reconstruct_sentence(sent, mentions, precip_kinds))

            total_m += len(sent.mentions)
            kept_m += len(report.kept_mentions)
            gone = report.dropped_ids("interaction")
            total_i += len(sent.interactions)
            kept_i += sum(1 for i in sent.interactions if i.id not in gone)
            for e in report.dropped:
                key = f"{e.item}:{e.reason}"
                drop_counts[key] = drop_counts.get(key, 0) + 1
        labels.append(replace(label, sentences=tuple(sentences)))

    predicted = CorpusFile(provenance="predicted", labels=tuple(labels))
    scores = score_mod.score(corpus, predicted)
    return RoundtripReport(
        scores=scores,
        drop_counts=drop_counts,
        predicted_entity_recall=kept_m / total_m if total_m else 0.0,
        predicted_relation_recall=kept_i / total_i if total_i else 0.0,
        predicted=predicted,
        reports=tuple(reports),
    )
