"""Lossless flattening of a form tree into an annotated token sequence.

Grammar (positional, so the plain token-id string is invertible):

    form  := title-tokens SEP desc-tokens block+
    block := TYPE title-tokens SEP desc-tokens tail
    tail  := ""                                  (plain block types)
           | SEP options                         (Choice, Rating)
           | SEP rows SEP columns                (Likert)

where description slots are always present and may hold zero tokens, and
options/rows/columns are items joined by the vertical-bar token. Every token
carries a role and a block index (-1 form title, 0 form description, i >= 1
block i); separators inherit the enclosing block's index.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from .corpus import Task, TaskSample
from .errors import AnnotationMismatch, ContextOverflow, MalformedSequence
from .forms import BLOCK_TYPE_NAMES, Block, BlockType, Form, OPTION_TYPES, validate_form
from .tokenizer import (
    BAR_ID,
    SEP_ID,
    TYPE_ID_BASE,
    TYPE_PLACEHOLDER_ID,
    UNK_ID,
    FIRST_CORPUS_ID,
    Vocab,
    type_token_id,
)


class TokenRole(IntEnum):
    """Structural role a token plays in the flattened form (9 values)."""

    FORM_TITLE = 0
    FORM_DESC = 1
    BLOCK_TITLE = 2
    BLOCK_DESC = 3
    OPTION = 4
    LIKERT_ROW = 5
    LIKERT_COLUMN = 6
    BLOCK_TYPE = 7
    SEP = 8


NUM_ROLES = 9

FORM_TITLE_BLOCK = -1
FORM_DESC_BLOCK = 0


@dataclass(frozen=True)
class AnnotatedToken:
    token_id: int
    role: TokenRole
    block_index: int


@dataclass(frozen=True)
class AnnotatedSequence:
    """Ordered annotated tokens; the serializer's lossless output."""

    tokens: tuple[AnnotatedToken, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def ids(self) -> list[int]:
        return [t.token_id for t in self.tokens]

    def roles(self) -> list[int]:
        return [int(t.role) for t in self.tokens]

    def block_indices(self) -> list[int]:
        return [t.block_index for t in self.tokens]


def block_distance(a: AnnotatedToken, b: AnnotatedToken) -> int:
    """Block-level distance: 0 if either token is form-title, else |i - j|."""
    if a.role is TokenRole.FORM_TITLE or b.role is TokenRole.FORM_TITLE:
        return 0
    return abs(a.block_index - b.block_index)


class _Builder:
    def __init__(self, vocab: Vocab, type_tokens: bool = True):
        self.vocab = vocab
        self.type_tokens = type_tokens
        self.out: list[AnnotatedToken] = []

    def text(self, value: str | None, role: TokenRole, block: int) -> None:
        if value is None:
            return
        for tid in self.vocab.encode(value):
            self.out.append(AnnotatedToken(tid, role, block))

    def sep(self, block: int) -> None:
        self.out.append(AnnotatedToken(SEP_ID, TokenRole.SEP, block))

    def bar(self, block: int) -> None:
        self.out.append(AnnotatedToken(BAR_ID, TokenRole.SEP, block))

    def type_tok(self, block_type: BlockType, block: int) -> None:
        tid = type_token_id(block_type) if self.type_tokens else TYPE_PLACEHOLDER_ID
        self.out.append(AnnotatedToken(tid, TokenRole.BLOCK_TYPE, block))

    def items(self, values, role: TokenRole, block: int) -> None:
        for k, value in enumerate(values):
            if k:
                self.bar(block)
            self.text(value, role, block)

    def block(self, block: Block, index: int) -> None:
        self.type_tok(block.block_type, index)
        self.text(block.title, TokenRole.BLOCK_TITLE, index)
        self.sep(index)
        self.text(block.description, TokenRole.BLOCK_DESC, index)
        if block.block_type in OPTION_TYPES:
            self.sep(index)
            self.items(block.options, TokenRole.OPTION, index)
        elif block.block_type is BlockType.LIKERT:
            self.sep(index)
            self.items(block.rows, TokenRole.LIKERT_ROW, index)
            self.sep(index)
            self.items(block.columns, TokenRole.LIKERT_COLUMN, index)

    def header(self, title: str, description: str | None) -> None:
        self.text(title, TokenRole.FORM_TITLE, FORM_TITLE_BLOCK)
        self.sep(FORM_TITLE_BLOCK)
        self.text(description, TokenRole.FORM_DESC, FORM_DESC_BLOCK)


def serialize_form(form: Form, vocab: Vocab, *, type_tokens: bool = True) -> AnnotatedSequence:
    """Flatten a valid form; inverse of :func:`parse_sequence`."""
    builder = _Builder(vocab, type_tokens=type_tokens)
    builder.header(form.title, form.description)
    for i, block in enumerate(form.blocks, start=1):
        builder.block(block, i)
    return AnnotatedSequence(tuple(builder.out))


_CONTENT_OK = frozenset({UNK_ID})


def _require_content(ids: list[int], what: str) -> None:
    for tid in ids:
        if tid < FIRST_CORPUS_ID and tid not in _CONTENT_OK:
            raise MalformedSequence(f"special token id {tid} inside {what}")


def _split(ids: list[int], sep_id: int) -> list[list[int]]:
    parts: list[list[int]] = [[]]
    for tid in ids:
        if tid == sep_id:
            parts.append([])
        else:
            parts[-1].append(tid)
    return parts


def _decode_field(ids: list[int], vocab: Vocab, what: str) -> str:
    _require_content(ids, what)
    if not ids:
        raise MalformedSequence(f"{what}: empty")
    return vocab.decode(ids)


def _decode_items(ids: list[int], vocab: Vocab, what: str) -> tuple[str, ...]:
    if not ids:
        return ()
    return tuple(
        _decode_field(item, vocab, f"{what}[{k}]") for k, item in enumerate(_split(ids, BAR_ID))
    )


def _is_type_id(tid: int) -> bool:
    return TYPE_ID_BASE <= tid < TYPE_ID_BASE + len(BLOCK_TYPE_NAMES)


def parse_sequence(seq: AnnotatedSequence, vocab: Vocab) -> Form:
    """Reconstruct the form from an untruncated serialization.

    Parsing uses the token-id string only; roles and block indices are then
    re-derived by re-serializing and checked against the annotation track.
    Sequences produced with a type placeholder are not parseable.
    """
    ids = seq.ids()
    if SEP_ID not in ids:
        raise MalformedSequence("missing form-title separator")
    first_sep = ids.index(SEP_ID)
    title = _decode_field(ids[:first_sep], vocab, "form title")

    type_positions = [k for k, tid in enumerate(ids) if _is_type_id(tid)]
    if not type_positions:
        raise MalformedSequence("no block type token")
    if type_positions[0] <= first_sep:
        raise MalformedSequence("block type token before form header")

    desc_ids = ids[first_sep + 1 : type_positions[0]]
    _require_content(desc_ids, "form description")
    description = vocab.decode(desc_ids) if desc_ids else None

    blocks: list[Block] = []
    bounds = type_positions + [len(ids)]
    for b in range(len(type_positions)):
        start, end = bounds[b], bounds[b + 1]
        block_type = BlockType(ids[start] - TYPE_ID_BASE)
        segments = _split(ids[start + 1 : end], SEP_ID)
        if block_type in OPTION_TYPES:
            expected = 3
        elif block_type is BlockType.LIKERT:
            expected = 4
        else:
            expected = 2
        if len(segments) != expected:
            raise MalformedSequence(
                f"block {b + 1} ({BLOCK_TYPE_NAMES[block_type]}): "
                f"expected {expected} fields, found {len(segments)}"
            )
        where = f"block {b + 1}"
        btitle = _decode_field(segments[0], vocab, f"{where} title")
        _require_content(segments[1], f"{where} description")
        bdesc = vocab.decode(segments[1]) if segments[1] else None
        options: tuple[str, ...] = ()
        rows: tuple[str, ...] = ()
        columns: tuple[str, ...] = ()
        if block_type in OPTION_TYPES:
            options = _decode_items(segments[2], vocab, f"{where} options")
        elif block_type is BlockType.LIKERT:
            rows = _decode_items(segments[2], vocab, f"{where} rows")
            columns = _decode_items(segments[3], vocab, f"{where} columns")
        blocks.append(
            Block(block_type, btitle, description=bdesc, options=options, rows=rows, columns=columns)
        )

    form = Form(title, description=description, blocks=tuple(blocks))
    violations = validate_form(form)
    if violations:
        raise MalformedSequence("parsed form invalid: " + "; ".join(violations))

    rebuilt = serialize_form(form, vocab)
    if rebuilt.ids() != ids:
        raise MalformedSequence("sequence is not a canonical serialization")
    if rebuilt.tokens != seq.tokens:
        raise AnnotationMismatch("re-derived roles or block indices disagree with the carried annotations")
    return form


def _context_pieces(
    sample: TaskSample,
    vocab: Vocab,
    type_tokens: bool,
) -> tuple[list[AnnotatedToken], list[AnnotatedToken], list[list[AnnotatedToken]], list[AnnotatedToken]]:
    """(header, form-desc, per-block pieces, extra) for the full context layout."""
    b = _Builder(vocab, type_tokens=type_tokens)
    b.text(sample.context_title, TokenRole.FORM_TITLE, FORM_TITLE_BLOCK)
    b.sep(FORM_TITLE_BLOCK)
    header = b.out

    b = _Builder(vocab, type_tokens=type_tokens)
    b.text(sample.context_description, TokenRole.FORM_DESC, FORM_DESC_BLOCK)
    desc = b.out

    block_pieces = []
    for j, block in enumerate(sample.context_blocks, start=1):
        b = _Builder(vocab, type_tokens=type_tokens)
        b.block(block, j)
        block_pieces.append(b.out)

    extra = _extra_piece(sample, vocab, type_tokens)
    return header, desc, block_pieces, extra


def _extra_piece(sample: TaskSample, vocab: Vocab, type_tokens: bool) -> list[AnnotatedToken]:
    b = _Builder(vocab, type_tokens=type_tokens)
    i = sample.block_index
    if sample.task is Task.QUESTION_REC:
        b.type_tok(sample.extra_type, i)
    elif sample.task is Task.TYPE_SUGGEST:
        b.text(sample.extra_title, TokenRole.BLOCK_TITLE, i)
    else:  # OPTIONS_REC: the block is known to be Choice
        b.type_tok(BlockType.CHOICE, i)
        b.text(sample.extra_title, TokenRole.BLOCK_TITLE, i)
    return b.out


def _plain_pieces(
    sample: TaskSample, vocab: Vocab
) -> tuple[list[AnnotatedToken], list[AnnotatedToken], list[list[AnnotatedToken]], list[AnnotatedToken]]:
    """Naive serialization: all text concatenated, no type/separator tokens."""
    b = _Builder(vocab)
    b.text(sample.context_title, TokenRole.FORM_TITLE, FORM_TITLE_BLOCK)
    header = b.out

    b = _Builder(vocab)
    b.text(sample.context_description, TokenRole.FORM_DESC, FORM_DESC_BLOCK)
    desc = b.out

    block_pieces = []
    for j, block in enumerate(sample.context_blocks, start=1):
        b = _Builder(vocab)
        b.text(block.title, TokenRole.BLOCK_TITLE, j)
        b.text(block.description, TokenRole.BLOCK_DESC, j)
        for opt in block.options:
            b.text(opt, TokenRole.OPTION, j)
        for row in block.rows:
            b.text(row, TokenRole.LIKERT_ROW, j)
        for col in block.columns:
            b.text(col, TokenRole.LIKERT_COLUMN, j)
        block_pieces.append(b.out)

    b = _Builder(vocab)
    i = sample.block_index
    if sample.task is Task.QUESTION_REC:
        b.text(BLOCK_TYPE_NAMES[sample.extra_type].lower(), TokenRole.BLOCK_TYPE, i)
    else:
        b.text(sample.extra_title, TokenRole.BLOCK_TITLE, i)
    return header, desc, block_pieces, b.out


def serialize_context(
    sample: TaskSample,
    vocab: Vocab,
    *,
    max_source: int = 512,
    plain: bool = False,
    type_tokens: bool = True,
    context_mode: str = "full",
) -> AnnotatedSequence:
    """Serialize a task sample's context plus its task-specific extra.

    Truncation drops whole oldest blocks first, then the form description;
    the form title is always kept. ``context_mode="last-title"`` keeps only
    the closest preceding block title (the reduced-context ablation), and
    ``plain=True`` uses naive text concatenation instead of the grammar.
    """
    if context_mode not in ("full", "last-title"):
        raise ValueError(f"unknown context mode: {context_mode}")

    if context_mode == "last-title":
        b = _Builder(vocab, type_tokens=type_tokens)
        if sample.context_blocks:
            j = len(sample.context_blocks)
            b.text(sample.context_blocks[-1].title, TokenRole.BLOCK_TITLE, j)
        tokens = b.out + _extra_piece(sample, vocab, type_tokens)
        if len(tokens) > max_source:
            raise ContextOverflow(f"{len(tokens)} tokens exceed max source length {max_source}")
        return AnnotatedSequence(tuple(tokens))

    if plain:
        header, desc, block_pieces, extra = _plain_pieces(sample, vocab)
    else:
        header, desc, block_pieces, extra = _context_pieces(sample, vocab, type_tokens)

    total = len(header) + len(desc) + sum(len(p) for p in block_pieces) + len(extra)
    start = 0
    while total > max_source and start < len(block_pieces):
        total -= len(block_pieces[start])
        start += 1
    if total > max_source and desc:
        total -= len(desc)
        desc = []
    if total > max_source:
        raise ContextOverflow(f"{total} tokens exceed max source length {max_source}")

    tokens = list(header) + list(desc)
    for piece in block_pieces[start:]:
        tokens.extend(piece)
    tokens.extend(extra)
    return AnnotatedSequence(tuple(tokens))


def format_sequence(seq: AnnotatedSequence, vocab: Vocab) -> str:
    """Debug rendering: one token per line, `id surface role block_index`."""
    lines = []
    for tok in seq.tokens:
        surface = vocab.token_of(tok.token_id)
        lines.append(f"{tok.token_id}\t{surface}\t{tok.role.name}\t{tok.block_index}")
    return "\n".join(lines)
