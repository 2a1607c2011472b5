"""Corpus handling: JSON ingestion, filtering, splits, task samples, and a
synthetic desk-scale generator with a planted title-keyword -> block-type rule.

External formats:
  * one JSON object per form with keys ``title``, ``description``, ``body``;
    newline-delimited collection files carry one such object per line;
  * split manifests are newline-delimited form-id lists;
  * task sample files are JSON lines {task, form_id, block_index, target}.

Form ids are assigned by position in the collection ("f000000", ...).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import EmptyCorpus, InvalidForm, MalformedDocument, UnknownBlockType
from .forms import BLOCK_TYPE_NAMES, Block, BlockType, Form, normalize_text, validate_form

OPTIONS_JOINER = " | "


class Task(Enum):
    QUESTION_REC = "question"
    TYPE_SUGGEST = "type"
    OPTIONS_REC = "options"


@dataclass(frozen=True)
class TaskSample:
    """One (context, target) instance for a creation-idea task.

    The context is the prefix of the source form: its title, description,
    and blocks 1..block_index-1. ``extra_type`` carries the chosen type for
    question recommendation; ``extra_title`` carries the typed title for type
    suggestion and options recommendation.
    """

    task: Task
    form_id: str
    block_index: int
    context_title: str
    context_description: str | None
    context_blocks: tuple[Block, ...]
    extra_type: BlockType | None = None
    extra_title: str | None = None
    target_text: str | None = None
    target_type: BlockType | None = None


@dataclass(frozen=True)
class FormRecord:
    form_id: str
    form: Form


@dataclass(frozen=True)
class CorpusSplit:
    train: tuple[FormRecord, ...]
    validation: tuple[FormRecord, ...]
    test: tuple[FormRecord, ...]
    seed: int

    def part(self, name: str) -> tuple[FormRecord, ...]:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]


_TYPE_ALIASES = {}
for _bt, _name in BLOCK_TYPE_NAMES.items():
    _TYPE_ALIASES["".join(ch for ch in _name.lower() if ch.isalnum())] = _bt


def _parse_block_type(raw: str) -> BlockType:
    key = "".join(ch for ch in str(raw).lower() if ch.isalnum())
    if key not in _TYPE_ALIASES:
        raise UnknownBlockType(f"unknown block type: {raw!r}")
    return _TYPE_ALIASES[key]


def _clean(raw: object, *, ascii_only: bool = True) -> str:
    text = str(raw)
    if ascii_only:
        text = text.encode("ascii", errors="ignore").decode("ascii")
    return normalize_text(text)


def _clean_optional(raw: object | None) -> str | None:
    if raw is None:
        return None
    cleaned = _clean(raw)
    return cleaned or None


def _clean_list(raw: object, path: str) -> tuple[str, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise MalformedDocument(f"{path}: expected a list")
    return tuple(_clean(item) for item in raw)


def ingest_json(document: str) -> Form:
    """Parse one Appendix-style JSON document into a validated Form.

    Every text field is ASCII-filtered and normalized. Raises
    MalformedDocument, UnknownBlockType, or InvalidForm.
    """
    try:
        data = json.loads(document)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedDocument(f"unparseable JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedDocument("top-level value must be an object")
    if "title" not in data:
        raise MalformedDocument("missing required key: title")
    if "body" not in data:
        raise MalformedDocument("missing required key: body")
    if not isinstance(data["body"], list):
        raise MalformedDocument("body must be a list of blocks")

    blocks = []
    for k, raw in enumerate(data["body"]):
        if not isinstance(raw, dict):
            raise MalformedDocument(f"body[{k}]: expected an object")
        if "type" not in raw:
            raise MalformedDocument(f"body[{k}]: missing required key: type")
        if "title" not in raw:
            raise MalformedDocument(f"body[{k}]: missing required key: title")
        blocks.append(
            Block(
                block_type=_parse_block_type(raw["type"]),
                title=_clean(raw["title"]),
                description=_clean_optional(raw.get("description")),
                options=_clean_list(raw.get("options"), f"body[{k}].options"),
                rows=_clean_list(raw.get("rows"), f"body[{k}].rows"),
                columns=_clean_list(raw.get("columns"), f"body[{k}].columns"),
            )
        )
    form = Form(
        title=_clean(data["title"]),
        description=_clean_optional(data.get("description")),
        blocks=tuple(blocks),
    )
    violations = validate_form(form)
    if violations:
        raise InvalidForm(violations)
    return form


def emit_json(form: Form) -> str:
    """Inverse writer for :func:`ingest_json` (identity on valid forms)."""
    body = []
    for block in form.blocks:
        entry: dict = {
            "type": BLOCK_TYPE_NAMES[block.block_type].lower(),
            "title": block.title,
        }
        if block.description is not None:
            entry["description"] = block.description
        if block.block_type in (BlockType.CHOICE, BlockType.RATING):
            entry["options"] = list(block.options)
        if block.block_type is BlockType.LIKERT:
            entry["rows"] = list(block.rows)
            entry["columns"] = list(block.columns)
        body.append(entry)
    doc: dict = {"title": form.title}
    if form.description is not None:
        doc["description"] = form.description
    doc["body"] = body
    return json.dumps(doc, separators=(", ", ": "), sort_keys=False)


def load_collection(path) -> list[FormRecord]:
    """Read a newline-delimited collection file; ids follow line order."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for k, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            records.append(FormRecord(f"f{k:06d}", ingest_json(line)))
    return records


def save_collection(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(emit_json(record.form) + "\n")


def filter_corpus(records: list[FormRecord]) -> list[FormRecord]:
    """Keep forms with at least one question block and no duplicate blocks.

    A question block is any non-Description block; duplicates are blocks
    sharing an identical (type, normalized title) pair. Language filtering
    is a pass-through hook (synthetic corpora are English by construction).
    """
    kept = []
    for record in records:
        blocks = record.form.blocks
        if not any(b.block_type is not BlockType.DESCRIPTION for b in blocks):
            continue
        keys = [(b.block_type, normalize_text(b.title)) for b in blocks]
        if len(set(keys)) != len(keys):
            continue
        if not _language_hook(record.form):
            continue
        kept.append(record)
    return kept


def _language_hook(form: Form) -> bool:
    """Placeholder for language detection; always keeps the form."""
    return True


def split_corpus(
    records: list[FormRecord],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> CorpusSplit:
    """Shuffle deterministically and partition into train/validation/test."""
    if not records:
        raise EmptyCorpus("no forms to split")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    shuffled = [records[i] for i in order]
    n = len(records)
    cut1 = int(n * ratios[0])
    cut2 = int(n * (ratios[0] + ratios[1]))
    return CorpusSplit(
        train=tuple(shuffled[:cut1]),
        validation=tuple(shuffled[cut1:cut2]),
        test=tuple(shuffled[cut2:]),
        seed=seed,
    )


def _per_form_rng(seed: int, form_id: str) -> np.random.Generator:
    # Stable per-form stream so parallel sampling stays reproducible.
    digest = [ord(c) for c in form_id]
    return np.random.default_rng([seed] + digest)


def _eligible_indices(form: Form, task: Task, include_description: bool) -> list[int]:
    eligible = []
    for i, block in enumerate(form.blocks, start=1):
        if task is Task.OPTIONS_REC:
            if block.block_type is BlockType.CHOICE and block.options:
                eligible.append(i)
        else:
            if not include_description and block.block_type is BlockType.DESCRIPTION:
                continue
            eligible.append(i)
    return eligible


def _make_sample(record: FormRecord, task: Task, i: int) -> TaskSample:
    form = record.form
    block = form.blocks[i - 1]
    common = dict(
        task=task,
        form_id=record.form_id,
        block_index=i,
        context_title=form.title,
        context_description=form.description,
        context_blocks=form.blocks[: i - 1],
    )
    if task is Task.QUESTION_REC:
        return TaskSample(**common, extra_type=block.block_type, target_text=block.title)
    if task is Task.TYPE_SUGGEST:
        return TaskSample(**common, extra_title=block.title, target_type=block.block_type)
    return TaskSample(**common, extra_title=block.title, target_text=OPTIONS_JOINER.join(block.options))


def sample_task_instances(
    records,
    task: Task,
    cap_per_form: int = 5,
    seed: int = 0,
    include_description: bool = True,
) -> list[TaskSample]:
    """Build task samples, drawing at most cap_per_form blocks per form.

    Eligible blocks: every index for question recommendation and type
    suggestion (Description blocks excludable via flag), Choice blocks with
    at least one option for options recommendation. When a form has more
    eligible blocks than the cap, indices are chosen uniformly without
    replacement from a per-form stream, so results do not depend on
    iteration order across forms.
    """
    if cap_per_form < 1:
        raise ValueError("cap_per_form must be >= 1")
    samples = []
    for record in records:
        eligible = _eligible_indices(record.form, task, include_description)
        if len(eligible) > cap_per_form:
            rng = _per_form_rng(seed, record.form_id)
            chosen = rng.choice(len(eligible), size=cap_per_form, replace=False)
            eligible = sorted(eligible[j] for j in chosen)
        samples.extend(_make_sample(record, task, i) for i in eligible)
    return samples


def write_manifest(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.form_id + "\n")


def write_task_samples(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            target = s.target_text if s.target_text is not None else BLOCK_TYPE_NAMES[s.target_type]
            fh.write(
                json.dumps(
                    {
                        "task": s.task.value,
                        "form_id": s.form_id,
                        "block_index": s.block_index,
                        "target": target,
                    }
                )
                + "\n"
            )


# --------------------------------------------------------------------------
# Synthetic corpus with a planted structural signal.
# --------------------------------------------------------------------------

DEFAULT_TOPICS = (
    "course feedback",
    "event registration",
    "job application",
    "travel booking",
    "health survey",
    "product review",
    "volunteer signup",
    "workshop enrollment",
    "customer support",
    "membership renewal",
)

# Planted rule: a block's type is determined by the single keyword word that
# appears in its title. Tests re-apply this table as an oracle.
DEFAULT_TYPE_RULES: tuple[tuple[str, BlockType], ...] = (
    ("name", BlockType.TEXT_FIELD),
    ("address", BlockType.TEXT_FIELD),
    ("comments", BlockType.TEXT_FIELD),
    ("choose", BlockType.CHOICE),
    ("preferred", BlockType.CHOICE),
    ("pick", BlockType.CHOICE),
    ("time", BlockType.TIME),
    ("hour", BlockType.TIME),
    ("date", BlockType.DATE),
    ("day", BlockType.DATE),
    ("agree", BlockType.LIKERT),
    ("opinion", BlockType.LIKERT),
    ("rate", BlockType.RATING),
    ("score", BlockType.RATING),
    ("upload", BlockType.UPLOAD),
    ("attach", BlockType.UPLOAD),
    ("notice", BlockType.DESCRIPTION),
    ("about", BlockType.DESCRIPTION),
)

# Filler words, disjoint from every rule keyword.
_FILLERS = (
    "departure",
    "arrival",
    "billing",
    "shipping",
    "primary",
    "backup",
    "emergency",
    "contact",
    "session",
    "meeting",
    "delivery",
    "start",
    "end",
    "birth",
    "visit",
    "payment",
    "office",
    "home",
    "work",
    "team",
    "project",
    "event",
    "travel",
    "second",
    "final",
)

_OPTION_POOLS = (
    ("yes", "no"),
    ("male", "female", "other"),
    ("monday", "tuesday", "wednesday", "thursday", "friday"),
    ("small", "medium", "large"),
    ("red", "green", "blue"),
    ("morning", "afternoon", "evening"),
    ("email", "phone", "mail"),
    ("beginner", "intermediate", "advanced"),
)

_RATING_SCALES = (("1", "2", "3", "4", "5"), ("1", "2", "3"))

_LIKERT_ROWS = (
    "the sessions were useful",
    "the staff was helpful",
    "the venue was clean",
    "the schedule was clear",
    "the materials were complete",
    "the price was fair",
)

_LIKERT_COLUMNS = ("never", "rarely", "sometimes", "often", "always")

_DESC_TEMPLATES = (
    "please answer carefully",
    "this field is required",
    "your response stays private",
)

# Preposition pool for two-part titles, keyword always included once.
_TITLE_PATTERNS = ("{filler} {kw}", "{kw} of {filler}", "{filler} {filler2} {kw}")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a deterministic synthetic corpus."""

    n_forms: int
    seed: int = 0
    topics: tuple[str, ...] = DEFAULT_TOPICS
    min_blocks: int = 3
    max_blocks: int = 8
    type_rules: tuple[tuple[str, BlockType], ...] = DEFAULT_TYPE_RULES
    description_rate: float = 0.4
    distractor_rate: float = 0.5


def apply_type_rules(title: str, rules=DEFAULT_TYPE_RULES) -> BlockType | None:
    """Oracle for the planted rule: type implied by the title's keyword word."""
    words = set(title.split())
    for keyword, block_type in rules:
        if keyword in words:
            return block_type
    return None


def _keywords_for(rules, block_type: BlockType) -> list[str]:
    return [kw for kw, bt in rules if bt == block_type]


def _make_title(rng: np.random.Generator, rules, block_type: BlockType) -> str:
    keyword = _pick(rng, _keywords_for(rules, block_type))
    pattern = _pick(rng, _TITLE_PATTERNS)
    filler = _pick(rng, _FILLERS)
    filler2 = _pick(rng, [f for f in _FILLERS if f != filler])
    return pattern.format(kw=keyword, filler=filler, filler2=filler2)


def _pick(rng: np.random.Generator, items):
    return items[int(rng.integers(len(items)))]


def _make_description(rng: np.random.Generator, spec: SyntheticSpec, own_type: BlockType) -> str:
    base = _pick(rng, _DESC_TEMPLATES)
    if rng.random() < spec.distractor_rate:
        # Sprinkle another type's keyword into the description so naive text
        # concatenation sees conflicting signals.
        other = [kw for kw, bt in spec.type_rules if bt != own_type]
        base = f"{base} regarding the {_pick(rng, other)}"
    return base


def _make_block(rng: np.random.Generator, spec: SyntheticSpec, block_type: BlockType) -> Block:
    title = _make_title(rng, spec.type_rules, block_type)
    description = None
    if block_type is not BlockType.DESCRIPTION and rng.random() < spec.description_rate:
        description = _make_description(rng, spec, block_type)
    options: tuple[str, ...] = ()
    rows: tuple[str, ...] = ()
    columns: tuple[str, ...] = ()
    if block_type is BlockType.CHOICE:
        options = _pick(rng, _OPTION_POOLS)
    elif block_type is BlockType.RATING:
        options = _pick(rng, _RATING_SCALES)
    elif block_type is BlockType.LIKERT:
        k = int(rng.integers(2, 4))
        row_ids = rng.choice(len(_LIKERT_ROWS), size=k, replace=False)
        rows = tuple(_LIKERT_ROWS[j] for j in sorted(row_ids))
        columns = _LIKERT_COLUMNS
    return Block(block_type, title, description=description, options=options, rows=rows, columns=columns)


_TYPE_WEIGHTS = {
    BlockType.TEXT_FIELD: 0.22,
    BlockType.CHOICE: 0.26,
    BlockType.TIME: 0.08,
    BlockType.DATE: 0.10,
    BlockType.LIKERT: 0.08,
    BlockType.RATING: 0.10,
    BlockType.UPLOAD: 0.06,
    BlockType.DESCRIPTION: 0.10,
}


def _make_form(rng: np.random.Generator, spec: SyntheticSpec) -> Form:
    topic = _pick(rng, spec.topics)
    title = f"{topic} form"
    description = f"please fill in this {topic} form" if rng.random() < 0.5 else None
    n_blocks = int(rng.integers(spec.min_blocks, spec.max_blocks + 1))
    types = list(_TYPE_WEIGHTS)
    probs = np.array([_TYPE_WEIGHTS[t] for t in types])
    probs /= probs.sum()
    blocks: list[Block] = []
    seen: set[tuple[BlockType, str]] = set()
    while len(blocks) < n_blocks:
        block_type = types[int(rng.choice(len(types), p=probs))]
        if len(blocks) == n_blocks - 1 and all(
            b.block_type is BlockType.DESCRIPTION for b in blocks
        ):
            block_type = BlockType.CHOICE  # guarantee a question block
        block = _make_block(rng, spec, block_type)
        key = (block.block_type, block.title)
        if key in seen:
            continue
        seen.add(key)
        blocks.append(block)
    return Form(title, description=description, blocks=tuple(blocks))


def generate_synthetic_corpus(spec: SyntheticSpec) -> list[FormRecord]:
    """Deterministically generate valid forms embedding the planted rule."""
    if spec.n_forms < 1:
        raise ValueError("n_forms must be >= 1")
    records = []
    for k in range(spec.n_forms):
        rng = np.random.default_rng([spec.seed, k])
        form = _make_form(rng, spec)
        violations = validate_form(form)
        if violations:  # pragma: no cover - generator invariant
            raise InvalidForm(violations)
        records.append(FormRecord(f"f{k:06d}", form))
    return records
