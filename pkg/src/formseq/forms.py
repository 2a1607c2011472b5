"""In-memory representation of an online form as an ordered tree.

A form is a title, an optional description, and an ordered list of typed
blocks. Block subtrees depend on the block type: Choice and Rating blocks
carry options (rating scores are stored as text options), Likert blocks
carry rows and columns, and every block has a title plus an optional
description. Description blocks hold their visible text in the title field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum


class BlockType(IntEnum):
    """The eight block types; integer codes double as classification labels."""

    TEXT_FIELD = 0
    CHOICE = 1
    TIME = 2
    DATE = 3
    LIKERT = 4
    RATING = 5
    UPLOAD = 6
    DESCRIPTION = 7


BLOCK_TYPE_NAMES = {
    BlockType.TEXT_FIELD: "TextField",
    BlockType.CHOICE: "Choice",
    BlockType.TIME: "Time",
    BlockType.DATE: "Date",
    BlockType.LIKERT: "Likert",
    BlockType.RATING: "Rating",
    BlockType.UPLOAD: "Upload",
    BlockType.DESCRIPTION: "Description",
}

# Types whose subtree carries an option/score list.
OPTION_TYPES = frozenset({BlockType.CHOICE, BlockType.RATING})


class NodeKind(Enum):
    """Kind of a child node in a block subtree."""

    TYPE = "type"
    TITLE = "title"
    DESC = "desc"
    OPTION = "option"
    ROW = "row"
    COLUMN = "column"


@dataclass(frozen=True)
class Block:
    """One form block. Immutable; text fields are expected to be normalized."""

    block_type: BlockType
    title: str
    description: str | None = None
    options: tuple[str, ...] = ()
    rows: tuple[str, ...] = ()
    columns: tuple[str, ...] = ()


@dataclass(frozen=True)
class Form:
    """An ordered form tree: title, optional description, blocks."""

    title: str
    description: str | None = None
    blocks: tuple[Block, ...] = field(default_factory=tuple)


RESERVED_SEPARATOR = "|"

# Whitespace characters are turned into plain spaces before the collapse so
# that e.g. tab runs become single spaces instead of vanishing.
_WHITESPACE = "\t\n\r\v\f"


def normalize_text(raw: str) -> str:
    """Canonicalize a text field.

    Strips non-printable characters, collapses whitespace runs to single
    spaces, trims, and replaces the reserved vertical bar with "/" so the
    flattened serialization stays unambiguous. Idempotent.
    """
    out = []
    for ch in raw:
        if ch == RESERVED_SEPARATOR:
            out.append("/")
        elif ch in _WHITESPACE or ch == " ":
            out.append(" ")
        elif ch.isprintable():
            out.append(ch)
        # non-printable, non-whitespace characters are dropped
    return " ".join("".join(out).split())


def _check_text(value: str, path: str, violations: list[str]) -> None:
    if not value.strip():
        violations.append(f"{path}: empty")
    if RESERVED_SEPARATOR in value:
        violations.append(f"{path}: contains reserved separator")


def _check_optional_text(value: str | None, path: str, violations: list[str]) -> None:
    if value is None:
        return
    _check_text(value, path, violations)


def validate_form(form: Form) -> list[str]:
    """Return every invariant violation with a path; empty list means valid."""
    violations: list[str] = []
    _check_text(form.title, "title", violations)
    _check_optional_text(form.description, "description", violations)
    if not form.blocks:
        violations.append("blocks: empty")
    for i, block in enumerate(form.blocks):
        prefix = f"blocks[{i}]"
        _check_text(block.title, f"{prefix}.title", violations)
        _check_optional_text(block.description, f"{prefix}.description", violations)
        if block.options and block.block_type not in OPTION_TYPES:
            violations.append(f"{prefix}.options: not allowed for {BLOCK_TYPE_NAMES[block.block_type]}")
        for j, option in enumerate(block.options):
            _check_text(option, f"{prefix}.options[{j}]", violations)
        if block.block_type is BlockType.LIKERT:
            if not block.rows:
                violations.append(f"{prefix}.rows: empty")
            if not block.columns:
                violations.append(f"{prefix}.columns: empty")
        else:
            if block.rows:
                violations.append(f"{prefix}.rows: not allowed for {BLOCK_TYPE_NAMES[block.block_type]}")
            if block.columns:
                violations.append(f"{prefix}.columns: not allowed for {BLOCK_TYPE_NAMES[block.block_type]}")
        for j, row in enumerate(block.rows):
            _check_text(row, f"{prefix}.rows[{j}]", violations)
        for j, col in enumerate(block.columns):
            _check_text(col, f"{prefix}.columns[{j}]", violations)
    return violations


def children_of_block(block: Block) -> list[tuple[NodeKind, str]]:
    """Children of a block subtree in canonical order.

    Order: type, title, description (when present), then rows (Likert only),
    then options (Choice/Rating) or columns (Likert).
    """
    children = [
        (NodeKind.TYPE, BLOCK_TYPE_NAMES[block.block_type]),
        (NodeKind.TITLE, block.title),
    ]
    if block.description is not None:
        children.append((NodeKind.DESC, block.description))
    if block.block_type is BlockType.LIKERT:
        children.extend((NodeKind.ROW, row) for row in block.rows)
        children.extend((NodeKind.COLUMN, col) for col in block.columns)
    else:
        children.extend((NodeKind.OPTION, opt) for opt in block.options)
    return children
