"""Span-set evaluation of predicted label annotations against gold.

Annotations are reduced to hashable keys and compared as sets, so exact
duplicates collapse before counting.  Four micro-averaged criteria:

* entity relaxed   - (sentence, span list)
* entity primary   - (sentence, mention kind, span list)
* relation relaxed - (sentence, precipitant span list)
* relation primary - relaxed plus interaction kind and the outcome
  signature: the effect span list for PD, the outcome code for PK,
  nothing for UN.

Triggers participate in entity criteria only; relation keys are built
from precipitant and effect mentions alone.
"""

from __future__ import annotations

from dataclasses import dataclass

from .annot import InteractionKind, MentionKind, Sentence
from .corpus import CorpusFile


class ScoreError(ValueError):
    """Gold and predicted corpora do not describe the same sentences."""


@dataclass(frozen=True)
class Counts:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass(frozen=True)
class ScoreReport:
    entity_relaxed: Counts
    entity_primary: Counts
    relation_relaxed: Counts
    relation_primary: Counts

    def as_dict(self) -> dict:
        out = {}
        for name in ("entity_relaxed", "entity_primary",
                     "relation_relaxed", "relation_primary"):
            c: Counts = getattr(self, name)
            out[name] = {
                "tp": c.tp, "fp": c.fp, "fn": c.fn,
                "precision": round(c.precision * 100, 2),
                "recall": round(c.recall * 100, 2),
                "f1": round(c.f1 * 100, 2),
            }
        return out


def _spans_key(mention) -> tuple:
    return tuple((s.start, s.end) for s in mention.spans)


def entity_keys(sentence: Sentence, primary: bool) -> set:
    keys = set()
    for m in sentence.mentions:
        if primary:
            keys.add((sentence.id, m.kind.value, _spans_key(m)))
        else:
            keys.add((sentence.id, _spans_key(m)))
    return keys


def relation_keys(sentence: Sentence, primary: bool) -> set:
    keys = set()
    mentions = {m.id: m for m in sentence.mentions}
    for i in sentence.interactions:
        prec = mentions.get(i.precipitant)
        if prec is None:
            raise ScoreError(
                f"sentence {sentence.id}: interaction {i.id} references "
                f"missing mention {i.precipitant!r}"
            )
        pspans = _spans_key(prec)
        if not primary:
            keys.add((sentence.id, pspans))
            continue
        if i.kind is InteractionKind.PD:
            eff = mentions.get(i.effect)
            if eff is None:
                raise ScoreError(
                    f"sentence {sentence.id}: interaction {i.id} references "
                    f"missing effect {i.effect!r}"
                )
            sig: tuple = ("effect", _spans_key(eff))
        elif i.kind is InteractionKind.PK:
            sig = ("code", i.code)
        else:
            sig = ("none",)
        keys.add((sentence.id, i.kind.value, pspans, sig))
    return keys


def _skeleton(corpus: CorpusFile) -> list[tuple[str, str, str]]:
    return [(label.id, s.id, s.text) for label, s in corpus.sentences()]


def check_skeleton(gold: CorpusFile, pred: CorpusFile) -> None:
    """Raise :class:`ScoreError` naming divergent sentences when the two
    corpora do not cover the same labels, sentence ids, and texts."""
    g, p = _skeleton(gold), _skeleton(pred)
    if g == p:
        return
    gset, pset = set(g), set(p)
    diffs = []
    for row in g:
        if row not in pset:
            diffs.append(f"missing from predictions: {row[0]}/{row[1]}")
    for row in p:
        if row not in gset:
            diffs.append(f"unexpected in predictions: {row[0]}/{row[1]}")
    if not diffs:
        diffs = ["same sentences in a different order"]
    raise ScoreError("corpora disagree on sentences: " + "; ".join(diffs[:5]))


def _count(gold_keys: set, pred_keys: set) -> Counts:
    tp = len(gold_keys & pred_keys)
    return Counts(tp=tp, fp=len(pred_keys) - tp, fn=len(gold_keys) - tp)


def _collect(corpus: CorpusFile, sections: dict | None = None):
    er, ep, rr, rp = set(), set(), set(), set()
    for _, sent in corpus.sentences():
        if sections is not None:
            sections.setdefault(sent.id, sent.section)
        er |= entity_keys(sent, primary=False)
        ep |= entity_keys(sent, primary=True)
        rr |= relation_keys(sent, primary=False)
        rp |= relation_keys(sent, primary=True)
    return er, ep, rr, rp


def score(gold: CorpusFile, pred: CorpusFile) -> ScoreReport:
    """Micro-averaged counts for all four criteria.

    The corpora must describe the same sentences; annotations are the
    only allowed difference.
    """
    check_skeleton(gold, pred)
    ge, gep, gr, grp = _collect(gold)
    pe, pep, pr, prp = _collect(pred)
    return ScoreReport(
        entity_relaxed=_count(ge, pe),
        entity_primary=_count(gep, pep),
        relation_relaxed=_count(gr, pr),
        relation_primary=_count(grp, prp),
    )


@dataclass(frozen=True)
class ScoreBreakdown:
    overall: ScoreReport
    by_mention_kind: dict
    by_interaction_kind: dict
    by_section: dict


def score_breakdown(gold: CorpusFile, pred: CorpusFile) -> ScoreBreakdown:
    """Overall report plus primary-criterion splits.

    Mention-kind and interaction-kind splits partition the primary
    entity and relation counts respectively (kind is part of those
    keys); the per-section split partitions every criterion by the
    gold sentence's section.
    """
    check_skeleton(gold, pred)
    overall = score(gold, pred)

    _, gep, _, grp = _collect(gold)
    _, pep, _, prp = _collect(pred)
    by_mkind = {}
    for kind in MentionKind:
        gk = {k for k in gep if k[1] == kind.value}
        pk = {k for k in pep if k[1] == kind.value}
        by_mkind[kind.value] = _count(gk, pk)
    by_ikind = {}
    for kind in InteractionKind:
        gk = {k for k in grp if k[1] == kind.value}
        pk = {k for k in prp if k[1] == kind.value}
        by_ikind[kind.value] = _count(gk, pk)

    sections: dict[str, str] = {}
    for _, sent in gold.sentences():
        sections[sent.id] = sent.section
    ge, gep2, gr, grp2 = _collect(gold)
    pe, pep2, pr, prp2 = _collect(pred)
    by_section = {}
    for section in sorted(set(sections.values())):
        keep = {sid for sid, sec in sections.items() if sec == section}

        def restrict(keys):
            return {k for k in keys if k[0] in keep}

        by_section[section] = ScoreReport(
            entity_relaxed=_count(restrict(ge), restrict(pe)),
            entity_primary=_count(restrict(gep2), restrict(pep2)),
            relation_relaxed=_count(restrict(gr), restrict(pr)),
            relation_primary=_count(restrict(grp2), restrict(prp2)),
        )
    return ScoreBreakdown(
        overall=overall,
        by_mention_kind=by_mkind,
        by_interaction_kind=by_ikind,
        by_section=by_section,
    )


def format_report(report: ScoreReport) -> str:
    """Fixed-width text table, percentages to two decimals."""
    rows = [("criterion", "P", "R", "F1", "tp", "fp", "fn")]
    for name in ("entity_relaxed", "entity_primary",
                 "relation_relaxed", "relation_primary"):
        c: Counts = getattr(report, name)
        rows.append(
            (
                name.replace("_", " "),
                f"{c.precision * 100:.2f}", f"{c.recall * 100:.2f}",
                f"{c.f1 * 100:.2f}", str(c.tp), str(c.fp), str(c.fn),
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for r in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(lines)
