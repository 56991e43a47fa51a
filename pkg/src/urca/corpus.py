"""Dataset records, JSONL loading, and character-window chunking."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

from urca.labels import ConclusionLabel, label_from_str, label_to_str

logger = logging.getLogger(__name__)

# Studies pooled in one forest plot rarely draw on more than a handful of
# reports; more than this many papers usually means a data-preparation slip.
PAPERS_WARN_THRESHOLD = 5


class DatasetError(ValueError):
    """A dataset file could not be loaded; the message names the offending line."""


class RecordInvariantError(ValueError):
    """One or more record invariants are violated; each violation names its field path."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


@dataclass(frozen=True)
class ResearchQuestion:
    id: str
    text: str
    left_intervention: str
    right_intervention: str
    outcome: str | None = None


@dataclass(frozen=True)
class Paper:
    id: str
    title: str
    body: str
    is_abstract_only: bool = False


@dataclass(frozen=True)
class Study:
    id: str
    papers: tuple[Paper, ...]
    gold_conclusion: ConclusionLabel | None = None


@dataclass(frozen=True)
class EvidenceRecord:
    review_id: str
    forest_plot_id: str
    question: ResearchQuestion
    study: Study
    direction_flipped: bool = False


@dataclass(frozen=True)
class Chunk:
    """A contiguous character window of one paper's body."""

    id: str
    paper_id: str
    study_id: str
    text: str
    char_span: tuple[int, int]


def validate_record(record: EvidenceRecord) -> None:
    """Check every record invariant, raising RecordInvariantError listing all violations."""
    violations: list[str] = []
    if not record.review_id:
        violations.append("review_id: must be non-empty")
    if not record.forest_plot_id:
        violations.append("forest_plot_id: must be non-empty")

    q = record.question
    if not q.id:
        violations.append("question.id: must be non-empty")
    if not q.text:
        violations.append("question.text: must be non-empty")
    if not q.left_intervention:
        violations.append("question.left_intervention: must be non-empty")
    if not q.right_intervention:
        violations.append("question.right_intervention: must be non-empty")
    if (
        q.left_intervention
        and q.right_intervention
        and q.left_intervention.casefold() == q.right_intervention.casefold()
    ):
        violations.append(
            "question.left_intervention: must differ from right_intervention (case-insensitive)"
        )

    study = record.study
    if not study.id:
        violations.append("study.id: must be non-empty")
    if len(study.papers) < 1:
        violations.append("study.papers: at least one paper is required")
    elif len(study.papers) > PAPERS_WARN_THRESHOLD:
        logger.warning(
            "study %s has %d papers (more than %d is unusual)",
            study.id,
            len(study.papers),
            PAPERS_WARN_THRESHOLD,
        )
    seen_paper_ids: set[str] = set()
    for i, paper in enumerate(study.papers):
        prefix = f"study.papers[{i}]"
        if not paper.id:
            violations.append(f"{prefix}.id: must be non-empty")
        elif paper.id in seen_paper_ids:
            violations.append(f"{prefix}.id: duplicate paper id {paper.id!r} within study")
        else:
            seen_paper_ids.add(paper.id)
        if not paper.body:
            violations.append(f"{prefix}.body: must be non-empty")

    if violations:
        raise RecordInvariantError(violations)


def validate_chunk(chunk: Chunk, body: str) -> None:
    """Check a chunk against the body it claims to window."""
    start, end = chunk.char_span
    violations = []
    if not (0 <= start < end <= len(body)):
        violations.append(
            f"chunk.char_span: [{start}, {end}) must satisfy 0 <= start < end <= len(body)={len(body)}"
        )
    elif chunk.text != body[start:end]:
        violations.append("chunk.text: does not equal body[start:end]")
    if violations:
        raise RecordInvariantError(violations)


def chunk_paper(paper: Paper, chunk_size: int = 1600, overlap: int = 200, study_id: str = "") -> list[Chunk]:
    """Slide a character window over the paper body.

    Windows start every (chunk_size - overlap) characters; the final window is
    clipped to the body end, and generation stops with the first window that
    reaches it, so every character lands in at least one chunk.
    """
    if chunk_size <= 0:
        raise ValueError(f"chunk_size must be positive, got {chunk_size}")
    if overlap < 0 or overlap >= chunk_size:
        raise ValueError(f"overlap must satisfy 0 <= overlap < chunk_size, got {overlap}")
    body = paper.body
    if not body:
        raise ValueError(f"paper {paper.id!r} has an empty body")

    stride = chunk_size - overlap
    chunks: list[Chunk] = []
    start = 0
    index = 0
    while True:
        end = min(start + chunk_size, len(body))
        chunks.append(
            Chunk(
                id=f"{paper.id}#c{index:04d}",
                paper_id=paper.id,
                study_id=study_id,
                text=body[start:end],
                char_span=(start, end),
            )
        )
        if end >= len(body):
            break
        start += stride
        index += 1
    return chunks


# ---------------------------------------------------------------------------
# JSONL serialization
# ---------------------------------------------------------------------------

_RECORD_KEYS = {"review_id", "forest_plot_id", "question", "study", "direction_flipped"}
_QUESTION_KEYS = {"id", "text", "left_intervention", "right_intervention", "outcome"}
_STUDY_KEYS = {"id", "gold_conclusion", "papers"}
_PAPER_KEYS = {"id", "title", "body", "is_abstract_only"}


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ValueError(f"{where}: missing required field {key!r}")
    return obj[key]


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ValueError(f"{where}: unexpected field(s) {', '.join(map(repr, unknown))}")


def record_from_dict(obj: dict) -> EvidenceRecord:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    _reject_unknown(obj, _RECORD_KEYS, "record")

    qobj = _require(obj, "question", "record")
    _reject_unknown(qobj, _QUESTION_KEYS, "question")
    question = ResearchQuestion(
        id=_require(qobj, "id", "question"),
        text=_require(qobj, "text", "question"),
        left_intervention=_require(qobj, "left_intervention", "question"),
        right_intervention=_require(qobj, "right_intervention", "question"),
        outcome=qobj.get("outcome"),
    )

    sobj = _require(obj, "study", "record")
    _reject_unknown(sobj, _STUDY_KEYS, "study")
    papers = []
    for i, pobj in enumerate(_require(sobj, "papers", "study")):
        _reject_unknown(pobj, _PAPER_KEYS, f"study.papers[{i}]")
        papers.append(
            Paper(
                id=_require(pobj, "id", f"study.papers[{i}]"),
                title=_require(pobj, "title", f"study.papers[{i}]"),
                body=_require(pobj, "body", f"study.papers[{i}]"),
                is_abstract_only=bool(_require(pobj, "is_abstract_only", f"study.papers[{i}]")),
            )
        )
    gold_raw = _require(sobj, "gold_conclusion", "study")
    gold = label_from_str(gold_raw) if gold_raw is not None else None
    study = Study(id=_require(sobj, "id", "study"), papers=tuple(papers), gold_conclusion=gold)

    return EvidenceRecord(
        review_id=_require(obj, "review_id", "record"),
        forest_plot_id=_require(obj, "forest_plot_id", "record"),
        question=question,
        study=study,
        direction_flipped=bool(obj.get("direction_flipped", False)),
    )


def record_to_dict(record: EvidenceRecord) -> dict:
    q = record.question
    study = record.study
    out = {
        "review_id": record.review_id,
        "forest_plot_id": record.forest_plot_id,
        "question": {
            "id": q.id,
            "text": q.text,
            "left_intervention": q.left_intervention,
            "right_intervention": q.right_intervention,
            "outcome": q.outcome,
        },
        "study": {
            "id": study.id,
            "gold_conclusion": label_to_str(study.gold_conclusion) if study.gold_conclusion else None,
            "papers": [
                {
                    "id": p.id,
                    "title": p.title,
                    "body": p.body,
                    "is_abstract_only": p.is_abstract_only,
                }
                for p in study.papers
            ],
        },
    }
    # Emitted only when set so files written from the documented schema
    # round-trip byte-stable.
    if record.direction_flipped:
        out["direction_flipped"] = True
    return out


def load_dataset(path: str) -> list[EvidenceRecord]:
    """Load a JSONL dataset; every error names the line it came from."""
    records: list[EvidenceRecord] = []
    seen: dict[tuple[str, str], int] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            try:
                record = record_from_dict(obj)
                validate_record(record)
            except (ValueError, TypeError, AttributeError) as exc:
                raise DatasetError(f"line {lineno}: {exc}") from exc
            key = (record.question.id, record.study.id)
            if key in seen:
                raise DatasetError(
                    f"line {lineno}: duplicate (question.id, study.id)={key!r}, "
                    f"first seen on line {seen[key]}"
                )
            seen[key] = lineno
            records.append(record)
    return records
