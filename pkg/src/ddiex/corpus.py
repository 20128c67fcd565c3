"""Corpus files, embedding tables, coarse-corpus mapping, and synthesis.

The canonical corpus container is JSON with a ``ddi-corpus/1`` format tag
and a provenance marker (``gold``, ``predicted``, ``synthetic``, or
``mapped``).  Serialization is deterministic: identical corpora produce
byte-identical files.  Provisional coarse outcome markers are legal only
under ``mapped`` provenance.

The synthetic generator builds template English drug-label sentences with
token-aligned annotations whose realized statistics converge on the
requested mixtures.  Injected overlap and coordination cases are recorded
per sentence under ``meta['injected']`` so downstream round-trip tests can
predict exactly which annotations survive encoding.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .annot import (
    COARSE_DECREASE,
    COARSE_INCREASE,
    Direction,
    DrugLabel,
    Interaction,
    InteractionKind,
    Mention,
    MentionKind,
    NciVocabulary,
    Sentence,
    Span,
    default_nci_vocabulary,
    validate,
)

log = logging.getLogger(__name__)

CORPUS_FORMAT = "ddi-corpus/1"
NLM_FORMAT = "nlm180-coarse/1"
PROVENANCES = ("gold", "predicted", "synthetic", "mapped")


class CorpusFormatError(ValueError):
    """Raised when a corpus, embedding, or coarse file cannot be parsed."""


class GeneratorError(ValueError):
    """Raised for infeasible or malformed generator specifications."""


@dataclass(frozen=True)
class CorpusFile:
    provenance: str
    labels: tuple[DrugLabel, ...]

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise CorpusFormatError(f"unknown provenance {self.provenance!r}")

    def sentences(self):
        for label in self.labels:
            for sent in label.sentences:
                yield label, sent


def validate_corpus(corpus: CorpusFile, vocab: NciVocabulary | None = None) -> list[str]:
    """All annotation-model violations in the corpus; coarse markers pass
    only under mapped provenance."""
    vocab = vocab if vocab is not None else default_nci_vocabulary()
    allow = corpus.provenance == "mapped"
    out: list[str] = []
    seen: set[str] = set()
    for label in corpus.labels:
        if label.id in seen:
            out.append(f"duplicate label id {label.id!r}")
        seen.add(label.id)
        out.extend(validate(label, vocab, allow_provisional=allow))
    return out


# ---------------------------------------------------------------------------
# serialization


def _mention_doc(m: Mention) -> dict:
    return {
        "id": m.id,
        "kind": m.kind.value,
        "spans": [[s.start, s.end] for s in m.spans],
        "text": m.text,
    }


def _interaction_doc(i: Interaction) -> dict:
    doc: dict = {"id": i.id, "kind": i.kind.value, "precipitant": i.precipitant}
    if i.effect is not None:
        doc["effect"] = i.effect
    if i.code is not None:
        doc["code"] = i.code
    return doc


def serialize_corpus(corpus: CorpusFile) -> str:
    labels = []
    for label in corpus.labels:
        sentences = []
        for s in label.sentences:
            doc: dict = {
                "id": s.id,
                "section": s.section,
                "text": s.text,
                "mentions": [_mention_doc(m) for m in s.mentions],
                "interactions": [_interaction_doc(i) for i in s.interactions],
            }
            if s.meta:
                doc["meta"] = s.meta
            sentences.append(doc)
        labels.append(
            {
                "id": label.id,
                "drug_name": label.drug_name,
                "aliases": list(label.aliases),
                "sentences": sentences,
            }
        )
    doc = {"format": CORPUS_FORMAT, "provenance": corpus.provenance, "labels": labels}
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise CorpusFormatError(f"{where}: missing key {key!r}")
    return doc[key]


def _parse_spans(raw, where: str) -> tuple[Span, ...]:
    spans = []
    for pair in raw:
        if not isinstance(pair, list) or len(pair) != 2:
            raise CorpusFormatError(f"{where}: span must be a [start, end] pair")
        try:
            spans.append(Span(int(pair[0]), int(pair[1])))
        except ValueError as exc:
            raise CorpusFormatError(f"{where}: {exc}")
    return tuple(spans)


def _parse_sentence(doc: dict, where: str) -> Sentence:
    mentions = []
    for k, mdoc in enumerate(_require(doc, "mentions", where)):
        mw = f"{where}, mention {k}"
        try:
            kind = MentionKind(_require(mdoc, "kind", mw))
        except ValueError:
            raise CorpusFormatError(f"{mw}: unknown mention kind {mdoc.get('kind')!r}")
        mentions.append(
            Mention(
                id=str(_require(mdoc, "id", mw)),
                kind=kind,
                spans=_parse_spans(_require(mdoc, "spans", mw), mw),
                text=str(_require(mdoc, "text", mw)),
            )
        )
    interactions = []
    for k, idoc in enumerate(_require(doc, "interactions", where)):
        iw = f"{where}, interaction {k}"
        try:
            kind = InteractionKind(_require(idoc, "kind", iw))
        except ValueError:
            raise CorpusFormatError(f"{iw}: unknown interaction kind {idoc.get('kind')!r}")
        interactions.append(
            Interaction(
                id=str(_require(idoc, "id", iw)),
                kind=kind,
                precipitant=str(_require(idoc, "precipitant", iw)),
                effect=idoc.get("effect"),
                code=idoc.get("code"),
            )
        )
    meta = doc.get("meta", {})
    if not isinstance(meta, dict):
        raise CorpusFormatError(f"{where}: meta must be an object")
    return Sentence(
        id=str(_require(doc, "id", where)),
        section=str(_require(doc, "section", where)),
        text=str(_require(doc, "text", where)),
        mentions=tuple(mentions),
        interactions=tuple(interactions),
        meta=meta,
    )


def parse_corpus(text: str, vocab: NciVocabulary | None = None) -> CorpusFile:
    """Parse and fully validate a corpus file.

    Raises :class:`CorpusFormatError` with positional context on any
    structural or annotation-model violation.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise CorpusFormatError("top level must be an object")
    if doc.get("format") != CORPUS_FORMAT:
        raise CorpusFormatError(
            f"format must be {CORPUS_FORMAT!r}, got {doc.get('format')!r}"
        )
    provenance = doc.get("provenance")
    if provenance not in PROVENANCES:
        raise CorpusFormatError(f"unknown provenance {provenance!r}")
    labels = []
    for i, ldoc in enumerate(_require(doc, "labels", "corpus")):
        lw = f"label {i}"
        sentences = tuple(
            _parse_sentence(sdoc, f"{lw}, sentence {j}")
            for j, sdoc in enumerate(_require(ldoc, "sentences", lw))
        )
        labels.append(
            DrugLabel(
                id=str(_require(ldoc, "id", lw)),
                drug_name=str(_require(ldoc, "drug_name", lw)),
                aliases=tuple(str(a) for a in ldoc.get("aliases", [])),
                sentences=sentences,
            )
        )
    corpus = CorpusFile(provenance=provenance, labels=tuple(labels))
    problems = validate_corpus(corpus, vocab)
    if problems:
        raise CorpusFormatError("; ".join(problems[:5]))
    return corpus


# ---------------------------------------------------------------------------
# embeddings

PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"
LABEL_DRUG_TOKEN = "LABELDRUG"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, LABEL_DRUG_TOKEN)


class EmbeddingTable:
    """Word-vector table with reserved rows first.

    ``<PAD>`` is always the zero vector, ``<UNK>`` the out-of-vocabulary
    fallback, and ``LABELDRUG`` the subject-drug token.  Vectors are
    float64 and owned by the table; model construction copies them into
    trainable parameters.
    """

    def __init__(self, tokens: list[str], vectors: np.ndarray):
        if len(tokens) != vectors.shape[0]:
            raise CorpusFormatError("token list and vector count differ")
        self.tokens = tuple(tokens)
        self.vectors = np.asarray(vectors, dtype=np.float64)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise CorpusFormatError("duplicate token in embedding table")
        for t in RESERVED_TOKENS:
            if t not in self.index:
                raise CorpusFormatError(f"reserved token {t!r} missing")
        self.vectors[self.index[PAD_TOKEN]] = 0.0

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, self.index[UNK_TOKEN])


def load_embeddings(
    text: str, expected_dim: int | None = None, seed: int = 0
) -> EmbeddingTable:
    """Parse a ``V d`` header embedding file.

    Reserved tokens absent from the file are appended at the front;
    their vectors are drawn uniform(-0.05, 0.05) from ``seed`` except
    ``<PAD>``, which is zero.  Malformed headers, row-width mismatches,
    duplicates, and row-count mismatches raise with a line number.
    """
    lines = text.splitlines()
    if not lines:
        raise CorpusFormatError("line 1: empty embedding file")
    head = lines[0].split()
    if len(head) != 2:
        raise CorpusFormatError("line 1: header must be 'V d'")
    try:
        count, dim = int(head[0]), int(head[1])
    except ValueError:
        raise CorpusFormatError("line 1: header must be two integers")
    if count < 0 or dim <= 0:
        raise CorpusFormatError("line 1: header values out of range")
    if expected_dim is not None and dim != expected_dim:
        raise CorpusFormatError(f"line 1: dimension {dim} != expected {expected_dim}")

    tokens: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    body = [ln for ln in lines[1:] if ln.strip()]
    for off, line in enumerate(body, start=2):
        parts = line.split()
        if len(parts) != dim + 1:
            raise CorpusFormatError(
                f"line {off}: expected {dim + 1} fields, got {len(parts)}"
            )
        token = parts[0]
        if token in seen:
            raise CorpusFormatError(f"line {off}: duplicate token {token!r}")
        seen.add(token)
        try:
            vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
        except ValueError:
            raise CorpusFormatError(f"line {off}: non-numeric vector component")
        tokens.append(token)
        rows.append(vec)
    if len(tokens) != count:
        raise CorpusFormatError(
            f"header declares {count} rows but file has {len(tokens)}"
        )

    rng = np.random.default_rng(seed)
    out_tokens: list[str] = []
    out_rows: list[np.ndarray] = []
    file_index = {t: i for i, t in enumerate(tokens)}
    for t in RESERVED_TOKENS:
        out_tokens.append(t)
        if t in file_index:
            out_rows.append(rows[file_index[t]])
        elif t == PAD_TOKEN:
            out_rows.append(np.zeros(dim))
        else:
            out_rows.append(rng.uniform(-0.05, 0.05, size=dim))
    for t, v in zip(tokens, rows):
        if t not in RESERVED_TOKENS:
            out_tokens.append(t)
            out_rows.append(v)
    return EmbeddingTable(out_tokens, np.stack(out_rows))


def random_embedding_table(tokens, dim: int, seed: int = 0) -> EmbeddingTable:
    """Uniform(-0.05, 0.05) table over ``tokens`` plus the reserved rows;
    the fallback when no pretrained file is supplied at train time."""
    rng = np.random.default_rng(seed)
    ordered = list(RESERVED_TOKENS) + [t for t in tokens if t not in RESERVED_TOKENS]
    vectors = rng.uniform(-0.05, 0.05, size=(len(ordered), dim))
    return EmbeddingTable(ordered, vectors)


# ---------------------------------------------------------------------------
# coarse-corpus mapping


@dataclass(frozen=True)
class Nlm180Record:
    """One interaction statement from the coarse auxiliary corpus."""

    label_id: str
    drug_name: str
    sentence_id: str
    text: str
    precipitant_spans: tuple[Span, ...]
    trigger_spans: tuple[Span, ...]
    kind: InteractionKind
    direction: Direction | None = None

    def __post_init__(self) -> None:
        if self.kind is InteractionKind.PK and self.direction is None:
            raise CorpusFormatError(
                f"record {self.sentence_id}: PK record needs a direction"
            )
        if self.kind is not InteractionKind.PK and self.direction is not None:
            raise CorpusFormatError(
                f"record {self.sentence_id}: only PK records carry a direction"
            )
        if not self.precipitant_spans:
            raise CorpusFormatError(
                f"record {self.sentence_id}: precipitant spans required"
            )


def parse_nlm180(text: str) -> tuple[Nlm180Record, ...]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"not valid JSON: {exc}")
    if not isinstance(doc, dict) or doc.get("format") != NLM_FORMAT:
        raise CorpusFormatError(f"format must be {NLM_FORMAT!r}")
    records = []
    for k, rdoc in enumerate(_require(doc, "records", "coarse file")):
        where = f"record {k}"
        try:
            kind = InteractionKind(_require(rdoc, "kind", where))
        except ValueError:
            raise CorpusFormatError(f"{where}: unknown kind {rdoc.get('kind')!r}")
        direction = rdoc.get("direction")
        records.append(
            Nlm180Record(
                label_id=str(_require(rdoc, "label_id", where)),
                drug_name=str(_require(rdoc, "drug_name", where)),
                sentence_id=str(_require(rdoc, "sentence_id", where)),
                text=str(_require(rdoc, "text", where)),
                precipitant_spans=_parse_spans(
                    _require(rdoc, "precipitant_spans", where), where
                ),
                trigger_spans=_parse_spans(rdoc.get("trigger_spans", []), where),
                kind=kind,
                direction=Direction(direction) if direction is not None else None,
            )
        )
    return tuple(records)


def _mention_from_spans(sid_text: str, mid: str, kind: MentionKind, spans) -> Mention:
    text = " ".join(sid_text[s.start: s.end] for s in spans)
    return Mention(id=mid, kind=kind, spans=tuple(spans), text=text)


def map_nlm180(records) -> CorpusFile:
    """Map coarse records onto the fine annotation scheme.

    Unspecified and pharmacokinetic triggers become Trigger mentions;
    pharmacodynamic triggers become SpecificInteraction mentions linked as
    the interaction's effect, and no Trigger is emitted for those.  PK
    directions become provisional COARSE_* markers, valid only under the
    resulting ``mapped`` provenance.  PD records without a trigger span are
    skipped with a warning.
    """
    by_label: dict[str, dict] = {}
    for rec in records:
        entry = by_label.setdefault(
            rec.label_id, {"drug_name": rec.drug_name, "sentences": {}}
        )
        if entry["drug_name"] != rec.drug_name:
            raise CorpusFormatError(
                f"label {rec.label_id}: conflicting drug names "
                f"{entry['drug_name']!r} and {rec.drug_name!r}"
            )
        sent = entry["sentences"].setdefault(
            rec.sentence_id, {"text": rec.text, "records": []}
        )
        if sent["text"] != rec.text:
            raise CorpusFormatError(
                f"label {rec.label_id}, sentence {rec.sentence_id}: "
                "records disagree on sentence text"
            )
        sent["records"].append(rec)

    labels = []
    for label_id, entry in by_label.items():
        sentences = []
        for sentence_id, sdoc in entry["sentences"].items():
            mentions: list[Mention] = []
            interactions: list[Interaction] = []
            n = 0
            for rec in sdoc["records"]:
                if rec.kind is InteractionKind.PD and not rec.trigger_spans:
                    log.warning(
                        "label %s sentence %s: PD record without trigger spans skipped",
                        label_id,
                        sentence_id,
                    )
                    continue
                prec = _mention_from_spans(
                    sdoc["text"], f"m{n}", MentionKind.PRECIPITANT, rec.precipitant_spans
                )
                mentions.append(prec)
                n += 1
                if rec.kind is InteractionKind.PD:
                    eff = _mention_from_spans(
                        sdoc["text"],
                        f"m{n}",
                        MentionKind.SPECIFIC_INTERACTION,
                        rec.trigger_spans,
                    )
                    mentions.append(eff)
                    n += 1
                    interactions.append(
                        Interaction(
                            id=f"i{len(interactions)}",
                            kind=InteractionKind.PD,
                            precipitant=prec.id,
                            effect=eff.id,
                        )
                    )
                    continue
                if rec.trigger_spans:
                    trig = _mention_from_spans(
                        sdoc["text"], f"m{n}", MentionKind.TRIGGER, rec.trigger_spans
                    )
                    mentions.append(trig)
                    n += 1
                if rec.kind is InteractionKind.PK:
                    marker = (
                        COARSE_INCREASE
                        if rec.direction is Direction.INCREASE
                        else COARSE_DECREASE
                    )
                    interactions.append(
                        Interaction(
                            id=f"i{len(interactions)}",
                            kind=InteractionKind.PK,
                            precipitant=prec.id,
                            code=marker,
                        )
                    )
                else:
                    interactions.append(
                        Interaction(
                            id=f"i{len(interactions)}",
                            kind=InteractionKind.UN,
                            precipitant=prec.id,
                        )
                    )
            sentences.append(
                Sentence(
                    id=sentence_id,
                    section="DRUG INTERACTIONS",
                    text=sdoc["text"],
                    mentions=tuple(mentions),
                    interactions=tuple(interactions),
                )
            )
        labels.append(
            DrugLabel(
                id=label_id,
                drug_name=entry["drug_name"],
                sentences=tuple(sentences),
            )
        )
    return CorpusFile(provenance="mapped", labels=tuple(labels))


# ---------------------------------------------------------------------------
# synthetic corpus generation

#: Distribution of interaction statements per annotated sentence.  Weighted
#: toward multi-statement sentences so effect sharing can push the effect
#: share of the mention mixture low enough to match real labels.
_I_DIST = ((1, 0.20), (2, 0.55), (3, 0.25))

_LABEL_NAMES = [
    "Veltrazine", "Ocrivast", "Daxolin", "Mirvotan", "Quellande", "Tebrafen",
    "Zolpharda", "Ariventa", "Cormyxin", "Peltrazol", "Novendra", "Halcyvar",
    "Bretozide", "Fanlodex", "Gravitan", "Ixomerel", "Jantovec", "Kelvoryn",
    "Lumertin", "Morvalex", "Nextravin", "Opaltrex", "Pravionel", "Quintovar",
    "Rubexolin", "Selvatran", "Tovanquel", "Ulverazin", "Vextramil", "Welbozan",
    "Xanverol", "Yelvotran", "Zupreldin", "Ambrovex", "Beltrazan",
    "Cidrovan", "Delphorin", "Ebrantag", "Fulvestra", "Gomtarel",
]

_ONE_WORD_PRECIPS = [
    "rifampin", "ketoconazole", "warfarin", "digoxin", "cimetidine",
    "phenytoin", "erythromycin", "quinidine", "theophylline", "cyclosporine",
    "amiodarone", "verapamil", "fluconazole", "ritonavir", "carbamazepine",
    "fluoxetine", "lithium", "metformin", "propranolol", "aspirin",
]
_TWO_WORD_PRECIPS = [
    "oral contraceptives", "thiazide diuretics", "loop diuretics",
    "azole antifungals", "protease inhibitors", "macrolide antibiotics",
    "grapefruit juice", "potassium supplements",
]
_COORD_STEMS = [
    "azole", "macrolide", "quinolone", "imidazole",
    "triazole", "barbiturate", "xanthine", "salicylate",
]
_COORD_HEADS = ["inhibitors", "inducers", "antibiotics", "derivatives"]

_PD_TRIGGERS = [
    "may potentiate", "may produce", "can cause",
    "has been associated with", "may increase the risk of",
]
_PK_TRIGGERS = ["may cause", "can produce", "has been shown to cause", "may result in"]
_UN_TRIGGERS = [
    "should not be coadministered with", "must be used cautiously with",
    "may interact with", "requires careful monitoring when combined with",
]
_EFFECT_PHRASES = [
    "severe hypotension", "ventricular arrhythmias", "excessive sedation",
    "acute renal failure", "serotonin syndrome", "marked bradycardia",
    "respiratory depression", "prolonged neuromuscular blockade",
    "severe hyperkalemia", "rhabdomyolysis", "torsades de pointes",
    "profound hypoglycemia",
]
_SHARED_EFFECT_REFS = ["the same reaction", "a similar reaction", "comparable effects"]
_EXTRA_TRIGGERS = [
    "close monitoring is recommended", "caution is advised",
    "careful observation is warranted",
]
_PK_NOUNS = [
    "plasma concentrations", "systemic exposure", "serum levels",
    "peak concentration", "absorption", "trough levels", "half life",
    "bioavailability", "clearance", "steady state levels",
]
_OPENERS = [
    "Coadministration of", "Concomitant use of", "Concurrent administration of",
]
_FILLERS = [
    "in patients with renal impairment", "during long term therapy",
    "particularly at higher doses", "according to clinical reports",
    "in elderly patients", "under steady state conditions",
    "in postmarketing surveillance", "regardless of the route of administration",
    "especially during the titration period", "as described in the literature",
    "in controlled clinical studies", "at clinically relevant exposures",
]
_PLAIN_TEMPLATES = [
    "Patients should be monitored for signs of toxicity during the initial weeks of therapy",
    "No dosage adjustment is required in patients with mild hepatic impairment",
    "The pharmacokinetics of {drug} were evaluated in healthy adult volunteers",
    "Steady state is reached after approximately five days of repeated dosing",
    "Food does not alter the extent of absorption to a clinically meaningful degree",
    "The most common adverse reactions were headache and transient dizziness",
    "{drug} is extensively metabolized by hepatic oxidative pathways",
    "Renal excretion of unchanged drug accounts for a minor fraction of elimination",
]
_SECTIONS = (
    ("DRUG INTERACTIONS", 0.50), ("CLINICAL PHARMACOLOGY", 0.15),
    ("WARNINGS", 0.12), ("PRECAUTIONS", 0.12),
    ("CONTRAINDICATIONS", 0.06), ("DOSAGE AND ADMINISTRATION", 0.05),
)


@dataclass(frozen=True)
class GeneratorSpec:
    """Target statistics and knobs for synthetic corpus generation.

    Mixtures are (precipitant, trigger, effect) for mentions and
    (PD, PK, UN) for interactions; both must sum to one.  ``overlap_rate``
    and ``coordination_rate`` inject, per annotated sentence, an extra
    mention overlapping a precipitant and a discontiguous coordination
    pair respectively; both are recoverable drop cases recorded in
    sentence metadata.
    """

    seed: int = 0
    labels: int = 10
    sentences_per_label: int = 30
    annotated_fraction: float = 0.51
    mention_mixture: tuple[float, float, float] = (0.53, 0.28, 0.19)
    interaction_mixture: tuple[float, float, float] = (0.49, 0.21, 0.30)
    mean_words: float = 23.0
    overlap_rate: float = 0.0
    coordination_rate: float = 0.0
    drug_name_rate: float = 0.7
    codes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.labels <= 0 or self.sentences_per_label <= 0:
            raise GeneratorError("labels and sentences_per_label must be positive")
        for name, mix in (
            ("mention_mixture", self.mention_mixture),
            ("interaction_mixture", self.interaction_mixture),
        ):
            if len(mix) != 3 or any(x < 0 for x in mix):
                raise GeneratorError(f"{name} must be three non-negative shares")
            if abs(sum(mix) - 1.0) > 1e-9:
                raise GeneratorError(f"{name} must sum to 1")
        for name, rate in (
            ("annotated_fraction", self.annotated_fraction),
            ("overlap_rate", self.overlap_rate),
            ("coordination_rate", self.coordination_rate),
            ("drug_name_rate", self.drug_name_rate),
        ):
            if not 0.0 <= rate <= 1.0:
                raise GeneratorError(f"{name} must lie in [0, 1]")
        if self.mean_words < 8:
            raise GeneratorError("mean_words must be at least 8")
        p_p, p_t, p_e = self.mention_mixture
        pd_share = self.interaction_mixture[0]
        if self.annotated_fraction > 0:
            if p_p <= 0:
                raise GeneratorError("precipitant share must be positive")
            if p_e > 0 and pd_share == 0:
                raise GeneratorError("effect mentions requested but PD share is 0")
            if pd_share > 0 and p_e == 0:
                raise GeneratorError("PD interactions requested but effect share is 0")


def _calibrate(spec: GeneratorSpec) -> tuple[float, float, float]:
    """Solve the sharing knobs so expected counts hit the mixtures.

    Returns (expected annotated triggers per sentence, probability that a
    subsequent PD statement reuses the sentence's first effect, expected
    standalone extra effects per sentence).
    """
    p_p, p_t, p_e = spec.mention_mixture
    pd_share = spec.interaction_mixture[0]
    mu_i = sum(k * w for k, w in _I_DIST)
    lam_p = mu_i + spec.overlap_rate + spec.coordination_rate
    trig_rate = (p_t / p_p) * lam_p
    target_e = (p_e / p_p) * lam_p
    lam_pd = mu_i * pd_share
    # E[(pd_count - 1)+] with pd_count ~ Binomial(I, pd_share)
    shareable = sum(
        w * (k * pd_share - 1 + (1 - pd_share) ** k) for k, w in _I_DIST
    )
    if pd_share == 0 or target_e >= lam_pd:
        return trig_rate, 0.0, target_e - lam_pd
    if shareable <= 1e-12:
        raise GeneratorError("effect share unreachable: no sharing capacity")
    q_share = (lam_pd - target_e) / shareable
    if q_share > 1.0 + 1e-9:
        raise GeneratorError(
            "effect share unreachably low for the requested PD share"
        )
    return trig_rate, min(q_share, 1.0), 0.0


class _Sampler:
    """Cycling without-replacement sampler over a fixed pool."""

    def __init__(self, pool, rng):
        self.pool = list(pool)
        self.rng = rng
        self.queue: list[int] = []

    def take(self) -> str:
        if not self.queue:
            self.queue = [int(i) for i in self.rng.permutation(len(self.pool))]
        return self.pool[self.queue.pop()]


class _Builder:
    """Accumulates word and punctuation pieces and lays out exact offsets."""

    def __init__(self):
        self.pieces: list[tuple[str, bool]] = []

    def words(self, phrase: str) -> tuple[int, int]:
        first = len(self.pieces)
        for w in phrase.split():
            self.pieces.append((w, False))
        return first, len(self.pieces) - 1

    def punct(self, ch: str) -> None:
        self.pieces.append((ch, True))

    def word_count(self) -> int:
        return sum(1 for _, p in self.pieces if not p)

    def layout(self) -> tuple[str, list[tuple[int, int]]]:
        parts: list[str] = []
        offsets: list[tuple[int, int]] = []
        cursor = 0
        for i, (w, punct) in enumerate(self.pieces):
            if i > 0 and not punct:
                parts.append(" ")
                cursor += 1
            offsets.append((cursor, cursor + len(w)))
            parts.append(w)
            cursor += len(w)
        return "".join(parts), offsets


def _weighted_pick(rng, table):
    r = float(rng.random())
    acc = 0.0
    for value, w in table:
        acc += w
        if r < acc:
            return value
    return table[-1][0]


def _code_phrase(code: str, vocab: NciVocabulary) -> str:
    word = "increased" if vocab.direction(code) is Direction.INCREASE else "decreased"
    return f"{word} {_PK_NOUNS[vocab.index(code) % len(_PK_NOUNS)]}"


def generate_corpus(spec: GeneratorSpec, vocab: NciVocabulary | None = None) -> CorpusFile:
    """Generate a deterministic synthetic corpus matching ``spec``.

    Every mention is token-aligned with the whitespace-plus-edge-punctuation
    tokenizer, annotation keys are unique per sentence, and injected drop
    cases are listed under ``meta['injected']``.
    """
    vocab = vocab if vocab is not None else default_nci_vocabulary()
    codes = spec.codes or vocab.codes
    for code in codes:
        if code not in vocab:
            raise GeneratorError(f"generator code {code!r} not in outcome vocabulary")
    trig_rate, q_share, extra_rate = _calibrate(spec)
    rng = np.random.default_rng(spec.seed)

    labels = []
    for li in range(spec.labels):
        base = _LABEL_NAMES[li % len(_LABEL_NAMES)]
        name = base if li < len(_LABEL_NAMES) else f"{base}{li // len(_LABEL_NAMES) + 1}"
        label_id = f"L{li:03d}"
        aliases = (name.lower(),)
        sentences = []
        for si in range(spec.sentences_per_label):
            sid = f"{label_id}.s{si}"
            section = _weighted_pick(rng, _SECTIONS)
            if rng.random() < spec.annotated_fraction:
                sent = _annotated_sentence(
                    rng, spec, sid, section, name, aliases,
                    trig_rate, q_share, extra_rate, codes, vocab,
                )
            else:
                sent = _plain_sentence(rng, spec, sid, section, name)
            sentences.append(sent)
        labels.append(
            DrugLabel(id=label_id, drug_name=name, aliases=aliases,
                      sentences=tuple(sentences))
        )
    return CorpusFile(provenance="synthetic", labels=tuple(labels))


def _pad_to_length(b: _Builder, rng, spec: GeneratorSpec, fillers: _Sampler) -> None:
    target = int(round(rng.normal(spec.mean_words - 2.0, 3.0)))
    while b.word_count() < target:
        b.words(fillers.take())


def _plain_sentence(rng, spec, sid, section, name) -> Sentence:
    b = _Builder()
    template = _PLAIN_TEMPLATES[int(rng.integers(len(_PLAIN_TEMPLATES)))]
    b.words(template.format(drug=name))
    _pad_to_length(b, rng, spec, _Sampler(_FILLERS, rng))
    b.punct(".")
    text, _ = b.layout()
    return Sentence(id=sid, section=section, text=text)


def _annotated_sentence(
    rng, spec, sid, section, name, aliases,
    trig_rate, q_share, extra_rate, codes, vocab,
) -> Sentence:
    one_word = _Sampler(_ONE_WORD_PRECIPS, rng)
    two_word = _Sampler(_TWO_WORD_PRECIPS, rng)
    stems = _Sampler(_COORD_STEMS, rng)
    effects = _Sampler(_EFFECT_PHRASES, rng)
    fillers = _Sampler(_FILLERS, rng)

    n_slots = _weighted_pick(rng, [(k, w) for k, w in _I_DIST])
    coordinated = rng.random() < spec.coordination_rate
    inject_overlap = rng.random() < spec.overlap_rate
    overlap_slot = n_slots - 1
    if coordinated and overlap_slot == 0:
        inject_overlap = False

    kinds = []
    for _ in range(n_slots):
        r = float(rng.random())
        pd_s, pk_s, _un = spec.interaction_mixture
        kinds.append(
            InteractionKind.PD if r < pd_s
            else InteractionKind.PK if r < pd_s + pk_s
            else InteractionKind.UN
        )

    n_trig = int(math.floor(trig_rate))
    if rng.random() < trig_rate - math.floor(trig_rate):
        n_trig += 1
    n_extra_eff = int(math.floor(extra_rate))
    if rng.random() < extra_rate - math.floor(extra_rate):
        n_extra_eff += 1

    use_name = rng.random() < spec.drug_name_rate
    surface_pool = [name] + [a for a in aliases]
    drug_surface = surface_pool[int(rng.integers(len(surface_pool)))] if use_name else None
    surface_left = [drug_surface] if drug_surface else []

    b = _Builder()
    word_mentions: list[dict] = []   # kind, ranges (word-index pairs), tag info
    interactions: list[dict] = []    # kind, precipitant index, effect index, code
    meta_overlap: list[int] = []
    meta_coord: list[int] = []
    first_effect: int | None = None
    triggers_used = 0

    def drug_object() -> None:
        nonlocal surface_left
        if surface_left:
            b.words(surface_left.pop())
        else:
            b.words("this product" if rng.random() < 0.5 else "this medication")

    def add_mention(kind: MentionKind, ranges: list[tuple[int, int]]) -> int:
        word_mentions.append({"kind": kind, "ranges": ranges})
        return len(word_mentions) - 1

    def render_predicate(slot_kind: InteractionKind, precip_idx: int,
                         allow_trigger: bool) -> None:
        nonlocal triggers_used, first_effect
        if slot_kind is InteractionKind.PD:
            trig = _PD_TRIGGERS[int(rng.integers(len(_PD_TRIGGERS)))]
        elif slot_kind is InteractionKind.PK:
            trig = _PK_TRIGGERS[int(rng.integers(len(_PK_TRIGGERS)))]
        else:
            trig = _UN_TRIGGERS[int(rng.integers(len(_UN_TRIGGERS)))]
        trange = b.words(trig)
        if allow_trigger and triggers_used < n_trig:
            add_mention(MentionKind.TRIGGER, [trange])
            triggers_used += 1

        if slot_kind is InteractionKind.PD:
            if first_effect is None:
                erange = b.words(effects.take())
                eidx = add_mention(MentionKind.SPECIFIC_INTERACTION, [erange])
                first_effect = eidx
            elif rng.random() < q_share:
                b.words(_SHARED_EFFECT_REFS[int(rng.integers(len(_SHARED_EFFECT_REFS)))])
                eidx = first_effect
            else:
                erange = b.words(effects.take())
                eidx = add_mention(MentionKind.SPECIFIC_INTERACTION, [erange])
            interactions.append(
                {"kind": slot_kind, "precipitant": precip_idx, "effect": eidx}
            )
        elif slot_kind is InteractionKind.PK:
            code = codes[int(rng.integers(len(codes)))]
            b.words(_code_phrase(code, vocab))
            b.words("of")
            drug_object()
            interactions.append(
                {"kind": slot_kind, "precipitant": precip_idx, "code": code}
            )
        else:
            drug_object()
            interactions.append({"kind": slot_kind, "precipitant": precip_idx})

    for slot in range(n_slots):
        if slot == 0:
            opener = rng.random() < 0.5
            if opener:
                b.words(_OPENERS[int(rng.integers(len(_OPENERS)))])
        else:
            if rng.random() < 0.5:
                b.punct(";")
                b.words("in addition")
                b.punct(",")
            else:
                b.punct(",")
                b.words("and")
            opener = False

        if slot == 0 and coordinated:
            c1 = b.words(stems.take())
            b.words("and")
            c2_first, _ = b.words(stems.take())
            head = b.words(_COORD_HEADS[int(rng.integers(len(_COORD_HEADS)))])
            m_a = add_mention(MentionKind.PRECIPITANT, [c1, head])
            m_b = add_mention(MentionKind.PRECIPITANT, [(c2_first, head[1])])
            meta_coord.append(m_a)
            if opener and surface_left:
                b.words("with")
                b.words(surface_left.pop())
            slot_kind = kinds[slot]
            render_predicate(slot_kind, m_a, allow_trigger=True)
            if slot_kind is InteractionKind.PD:
                interactions.append(
                    {"kind": slot_kind, "precipitant": m_b,
                     "effect": interactions[-1]["effect"]}
                )
            elif slot_kind is InteractionKind.PK:
                interactions.append(
                    {"kind": slot_kind, "precipitant": m_b,
                     "code": interactions[-1]["code"]}
                )
            else:
                interactions.append({"kind": slot_kind, "precipitant": m_b})
            continue

        wants_two = inject_overlap and slot == overlap_slot
        phrase = two_word.take() if (wants_two or rng.random() < 0.25) else one_word.take()
        prange = b.words(phrase)
        p_idx = add_mention(MentionKind.PRECIPITANT, [prange])
        if wants_two:
            inj = add_mention(MentionKind.PRECIPITANT, [(prange[0], prange[0])])
            meta_overlap.append(inj)
            r = float(rng.random())
            pd_s, pk_s, _un = spec.interaction_mixture
            inj_kind = (
                InteractionKind.PD if r < pd_s
                else InteractionKind.PK if r < pd_s + pk_s
                else InteractionKind.UN
            )
            if inj_kind is InteractionKind.PD and first_effect is None:
                inj_kind = InteractionKind.UN
            if inj_kind is InteractionKind.PD:
                interactions.append(
                    {"kind": inj_kind, "precipitant": inj, "effect": first_effect}
                )
            elif inj_kind is InteractionKind.PK:
                interactions.append(
                    {"kind": inj_kind, "precipitant": inj,
                     "code": codes[int(rng.integers(len(codes)))]}
                )
            else:
                interactions.append({"kind": inj_kind, "precipitant": inj})
        if opener and surface_left:
            b.words("with")
            b.words(surface_left.pop())
        render_predicate(kinds[slot], p_idx, allow_trigger=True)

    while triggers_used < n_trig:
        b.punct(";")
        trange = b.words(_EXTRA_TRIGGERS[int(rng.integers(len(_EXTRA_TRIGGERS)))])
        add_mention(MentionKind.TRIGGER, [trange])
        triggers_used += 1
    for _ in range(n_extra_eff):
        b.punct(";")
        b.words("reported events include")
        erange = b.words(effects.take())
        add_mention(MentionKind.SPECIFIC_INTERACTION, [erange])

    if surface_left:
        b.words("in patients receiving")
        b.words(surface_left.pop())
    _pad_to_length(b, rng, spec, fillers)
    b.punct(".")

    text, offsets = b.layout()
    mentions = []
    for mi, m in enumerate(word_mentions):
        spans = tuple(
            Span(offsets[a][0], offsets[z][1]) for a, z in m["ranges"]
        )
        mentions.append(
            Mention(
                id=f"m{mi}",
                kind=m["kind"],
                spans=spans,
                text=" ".join(text[s.start: s.end] for s in spans),
            )
        )
    inters = []
    for ii, i in enumerate(interactions):
        eff = i.get("effect")
        inters.append(
            Interaction(
                id=f"i{ii}",
                kind=i["kind"],
                precipitant=f"m{i['precipitant']}",
                effect=None if eff is None else f"m{eff}",
                code=i.get("code"),
            )
        )
    meta: dict = {}
    if meta_overlap or meta_coord:
        meta["injected"] = {}
        if meta_overlap:
            meta["injected"]["overlap"] = [f"m{k}" for k in meta_overlap]
        if meta_coord:
            meta["injected"]["coordination"] = [f"m{k}" for k in meta_coord]
    return Sentence(
        id=sid, section=section, text=text,
        mentions=tuple(mentions), interactions=tuple(inters), meta=meta,
    )


def realized_statistics(corpus: CorpusFile) -> dict:
    """Aggregate corpus statistics in the same shape the generator targets."""
    n_sent = 0
    n_annot = 0
    n_words = 0
    mention_counts = {k: 0 for k in MentionKind}
    inter_counts = {k: 0 for k in InteractionKind}
    for _, sent in corpus.sentences():
        n_sent += 1
        n_words += len(sent.text.split())
        if sent.mentions or sent.interactions:
            n_annot += 1
        for m in sent.mentions:
            mention_counts[m.kind] += 1
        for i in sent.interactions:
            inter_counts[i.kind] += 1
    total_m = sum(mention_counts.values()) or 1
    total_i = sum(inter_counts.values()) or 1
    return {
        "sentences": n_sent,
        "annotated_fraction": n_annot / n_sent if n_sent else 0.0,
        "mean_words": n_words / n_sent if n_sent else 0.0,
        "mention_mixture": (
            mention_counts[MentionKind.PRECIPITANT] / total_m,
            mention_counts[MentionKind.TRIGGER] / total_m,
            mention_counts[MentionKind.SPECIFIC_INTERACTION] / total_m,
        ),
        "interaction_mixture": (
            inter_counts[InteractionKind.PD] / total_i,
            inter_counts[InteractionKind.PK] / total_i,
            inter_counts[InteractionKind.UN] / total_i,
        ),
        "mentions_per_annotated": sum(mention_counts.values()) / n_annot if n_annot else 0.0,
    }
